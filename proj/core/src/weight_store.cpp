#include "morphscope/weight_store.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "binary_io.hpp"
#include "json.hpp"
#include "morphscope/error.hpp"
#include "morphscope/hash.hpp"

namespace morphscope {

namespace {

using nlohmann::json;

constexpr char kMagic[5] = "MSW1";
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::size_t kAlign = 64;

std::size_t align_up(std::size_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

std::size_t element_count_of(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

json config_to_json(const ViTConfig& c) {
  return json{{"image_side", c.image_side},
              {"patch_side", c.patch_side},
              {"channels", c.channels},
              {"hidden_dim", c.hidden_dim},
              {"depth", c.depth},
              {"heads", c.heads},
              {"mlp_dim", c.mlp_dim},
              {"positional_mode", std::string(to_string(c.positional_mode))},
              {"final_layer_norm", c.final_layer_norm},
              {"layer_norm_eps", static_cast<double>(c.layer_norm_eps)}};
}

ViTConfig config_from_json(const json& j) {
  ViTConfig c;
  c.image_side = j.at("image_side").get<std::size_t>();
  c.patch_side = j.at("patch_side").get<std::size_t>();
  c.channels = j.value("channels", std::size_t{3});
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.depth = j.at("depth").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.mlp_dim = j.at("mlp_dim").get<std::size_t>();
  c.positional_mode = parse_positional_mode(j.at("positional_mode").get<std::string>());
  c.final_layer_norm = j.at("final_layer_norm").get<bool>();
  c.layer_norm_eps = static_cast<float>(j.value("layer_norm_eps", 1e-6));
  return c;
}

struct HeaderEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t byte_offset;
};

std::string header_text(const WeightBundle& bundle, std::vector<HeaderEntry>& layout) {
  layout.clear();
  std::size_t offset = 0;
  json tensors = json::array();
  for (const auto& spec : tensor_schema(bundle.config())) {
    const Tensor& t = bundle.at(spec.name);
    layout.push_back({spec.name, t.shape, offset});
    tensors.push_back(json{{"name", spec.name}, {"shape", t.shape}, {"byte_offset", offset}});
    offset = align_up(offset + t.element_count() * sizeof(float));
  }
  json header{{"version", kFormatVersion},
              {"config", config_to_json(bundle.config())},
              {"tensors", std::move(tensors)}};
  return header.dump();
}

// Small, seedable generator so synthetic bundles are identical on every
// standard library.
struct SplitMix64 {
  std::uint64_t state;
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  // Uniform in [-1, 1).
  float symmetric() { return static_cast<float>(static_cast<double>(next() >> 40) / 8388608.0 - 1.0); }
};

}  // namespace

std::string_view to_string(PositionalMode mode) {
  return mode == PositionalMode::learned ? "learned" : "sinusoidal";
}

PositionalMode parse_positional_mode(std::string_view text) {
  if (text == "learned") return PositionalMode::learned;
  if (text == "sinusoidal") return PositionalMode::sinusoidal;
  raise(ErrorKind::argument, "unknown positional mode '" + std::string(text) + "'");
}

void ViTConfig::validate() const {
  auto fail = [](const std::string& why) { raise(ErrorKind::argument, "ViT config: " + why); };
  if (image_side == 0 || patch_side == 0) fail("image and patch side must be positive");
  if (image_side % patch_side != 0) fail("image side not divisible by patch side");
  if (channels != 3) fail("exactly 3 channels supported");
  if (hidden_dim == 0 || depth == 0 || heads == 0 || mlp_dim == 0) fail("empty geometry");
  if (hidden_dim % heads != 0) fail("hidden dim not divisible by head count");
  if (!(layer_norm_eps >= 0.0f) || !std::isfinite(layer_norm_eps)) fail("bad layer norm eps");
}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<float> v)
    : shape(std::move(s)), values(std::move(v)) {
  if (shape.empty() || shape.size() > 2) raise(ErrorKind::shape, "tensor rank must be 1 or 2");
  if (element_count_of(shape) != values.size()) {
    raise(ErrorKind::shape, "tensor " + shape_string(shape) + " given " +
                                std::to_string(values.size()) + " values");
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> s) {
  const std::size_t n = element_count_of(s);
  return Tensor(std::move(s), std::vector<float>(n, 0.0f));
}

std::size_t Tensor::element_count() const { return element_count_of(shape); }

ConstMatrixView Tensor::matrix() const {
  if (shape.size() != 2) raise(ErrorKind::shape, "expected a matrix, got " + shape_string(shape));
  return {values.data(), shape[0], shape[1]};
}

std::string shape_string(std::span<const std::size_t> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::vector<TensorSpec> tensor_schema(const ViTConfig& c) {
  const std::size_t d = c.hidden_dim;
  std::vector<TensorSpec> out{
      {"embed.patch.weight", {c.patch_dim(), d}},
      {"embed.patch.bias", {d}},
      {"cls_token", {d}},
  };
  if (c.positional_mode == PositionalMode::learned) {
    out.push_back({"pos_embed", {c.sequence_length(), d}});
  }
  for (std::size_t l = 0; l < c.depth; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    out.push_back({p + "ln1.gamma", {d}});
    out.push_back({p + "ln1.beta", {d}});
    for (const char* proj : {"q", "k", "v", "out"}) {
      out.push_back({p + "attn." + proj + ".weight", {d, d}});
      out.push_back({p + "attn." + proj + ".bias", {d}});
    }
    out.push_back({p + "ln2.gamma", {d}});
    out.push_back({p + "ln2.beta", {d}});
    out.push_back({p + "mlp.fc1.weight", {d, c.mlp_dim}});
    out.push_back({p + "mlp.fc1.bias", {c.mlp_dim}});
    out.push_back({p + "mlp.fc2.weight", {c.mlp_dim, d}});
    out.push_back({p + "mlp.fc2.bias", {d}});
  }
  if (c.final_layer_norm) {
    out.push_back({"final_ln.gamma", {d}});
    out.push_back({"final_ln.beta", {d}});
  }
  return out;
}

std::size_t parameter_count(const ViTConfig& config) {
  std::size_t total = 0;
  for (const auto& spec : tensor_schema(config)) total += element_count_of(spec.shape);
  return total;
}

void WeightBundle::set(const std::string& name, Tensor tensor) {
  entries_.insert_or_assign(name, std::move(tensor));
}

const Tensor& WeightBundle::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) raise(ErrorKind::schema, "missing tensor '" + name + "'");
  return it->second;
}

Tensor& WeightBundle::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) raise(ErrorKind::schema, "missing tensor '" + name + "'");
  return it->second;
}

std::size_t WeightBundle::total_parameters() const {
  std::size_t total = 0;
  for (const auto& [name, t] : entries_) total += t.element_count();
  return total;
}

std::string SchemaViolation::describe() const {
  switch (kind) {
    case Kind::missing: return "missing tensor '" + name + "' " + shape_string(expected);
    case Kind::extra: return "unexpected tensor '" + name + "'";
    case Kind::shape:
      return "tensor '" + name + "' has shape " + shape_string(actual) + ", expected " +
             shape_string(expected);
    case Kind::non_finite: return "tensor '" + name + "' contains non-finite values";
  }
  return name;
}

std::string ValidationReport::summary() const {
  if (ok()) return "ok";
  std::string s;
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i) s += "; ";
    s += violations[i].describe();
  }
  return s;
}

ValidationReport validate_schema(const WeightBundle& bundle, const ViTConfig& config,
                                 bool check_values) {
  ValidationReport report;
  using Kind = SchemaViolation::Kind;
  const auto schema = tensor_schema(config);
  for (const auto& spec : schema) {
    auto it = bundle.entries().find(spec.name);
    if (it == bundle.entries().end()) {
      report.violations.push_back({Kind::missing, spec.name, spec.shape, {}});
      continue;
    }
    if (it->second.shape != spec.shape) {
      report.violations.push_back({Kind::shape, spec.name, spec.shape, it->second.shape});
      continue;
    }
    if (check_values) {
      const auto& v = it->second.values;
      if (!std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); })) {
        report.violations.push_back({Kind::non_finite, spec.name, spec.shape, spec.shape});
      }
    }
  }
  for (const auto& [name, tensor] : bundle.entries()) {
    const bool known = std::any_of(schema.begin(), schema.end(),
                                   [&](const TensorSpec& s) { return s.name == name; });
    // Tensors a geometry flag merely switches off are tolerated.
    const bool optional = name == "pos_embed" || name.rfind("final_ln.", 0) == 0;
    if (!known && !optional) report.violations.push_back({Kind::extra, name, {}, tensor.shape});
  }
  return report;
}

WeightBundle random_bundle(const ViTConfig& config, std::uint64_t seed, float stddev) {
  config.validate();
  WeightBundle bundle(config);
  // Uniform on [-a, a] has standard deviation a / sqrt(3).
  const float amplitude = stddev * std::sqrt(3.0f);
  for (const auto& spec : tensor_schema(config)) {
    Tensor t = Tensor::zeros(spec.shape);
    const bool is_gamma = spec.name.ends_with(".gamma");
    const bool is_beta = spec.name.ends_with(".beta");
    if (is_gamma) {
      std::fill(t.values.begin(), t.values.end(), 1.0f);
    } else if (!is_beta) {
      SplitMix64 rng{seed ^ fnv1a(spec.name)};
      for (float& v : t.values) v = amplitude * rng.symmetric();
    }
    bundle.set(spec.name, std::move(t));
  }
  return bundle;
}

PositionalMode default_positional_mode(const WeightBundle& bundle) {
  return bundle.contains("pos_embed") ? PositionalMode::learned : PositionalMode::sinusoidal;
}

std::size_t weight_file_header_size(const WeightBundle& bundle) {
  std::vector<HeaderEntry> layout;
  return align_up(8 + header_text(bundle, layout).size());
}

void save_weights(const WeightBundle& bundle, const std::filesystem::path& path) {
  bundle.config().validate();
  const auto report = validate_schema(bundle, bundle.config());
  if (!report.ok()) raise(ErrorKind::schema, "refusing to save invalid bundle: " + report.summary());

  std::vector<HeaderEntry> layout;
  const std::string header = header_text(bundle, layout);
  auto out = detail::open_output(path);
  out.write(kMagic, 4);
  detail::write_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  const std::size_t data_start = align_up(8 + header.size());
  const std::string zeros(kAlign, '\0');
  out.write(zeros.data(), static_cast<std::streamsize>(data_start - 8 - header.size()));

  std::size_t cursor = 0;
  for (const auto& entry : layout) {
    out.write(zeros.data(), static_cast<std::streamsize>(entry.byte_offset - cursor));
    const Tensor& t = bundle.at(entry.name);
    detail::write_floats(out, t.values);
    cursor = entry.byte_offset + t.values.size() * sizeof(float);
  }
  if (!out) raise(ErrorKind::io, "write failed for " + path.string());
}

WeightBundle load_weights(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  detail::check_magic(in, kMagic, path.string());
  std::uint32_t header_len = 0;
  if (!detail::read_u32(in, header_len)) raise(ErrorKind::corruption, "truncated MSW1 header");

  std::error_code ec;
  const auto file_size = static_cast<std::size_t>(std::filesystem::file_size(path, ec));
  if (ec) raise(ErrorKind::io, "cannot stat " + path.string());
  if (8 + static_cast<std::size_t>(header_len) > file_size) {
    raise(ErrorKind::corruption, "MSW1 header length exceeds file size");
  }
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);

  json j;
  try {
    j = json::parse(header);
  } catch (const json::exception& e) {
    raise(ErrorKind::format, std::string("MSW1 header is not valid JSON: ") + e.what());
  }

  WeightBundle bundle;
  std::vector<HeaderEntry> entries;
  try {
    if (j.at("version").get<std::uint32_t>() != kFormatVersion) {
      raise(ErrorKind::format, "unsupported MSW1 version " + j.at("version").dump());
    }
    bundle.set_config(config_from_json(j.at("config")));
    for (const auto& t : j.at("tensors")) {
      entries.push_back({t.at("name").get<std::string>(),
                         t.at("shape").get<std::vector<std::size_t>>(),
                         t.at("byte_offset").get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    raise(ErrorKind::format, std::string("malformed MSW1 header: ") + e.what());
  }
  bundle.config().validate();

  const std::size_t data_start = align_up(8 + header_len);
  for (const auto& entry : entries) {
    if (entry.shape.empty() || entry.shape.size() > 2) {
      raise(ErrorKind::format, "tensor '" + entry.name + "' has unsupported rank");
    }
    if (entry.byte_offset % kAlign != 0) {
      raise(ErrorKind::format, "tensor '" + entry.name + "' is not 64-byte aligned");
    }
    const std::size_t bytes = element_count_of(entry.shape) * sizeof(float);
    if (data_start + entry.byte_offset + bytes > file_size) {
      raise(ErrorKind::corruption, "payload truncated inside tensor '" + entry.name + "'");
    }
    Tensor t = Tensor::zeros(entry.shape);
    in.seekg(static_cast<std::streamoff>(data_start + entry.byte_offset));
    if (!detail::read_floats(in, t.values)) {
      raise(ErrorKind::corruption, "short read in tensor '" + entry.name + "'");
    }
    if (bundle.contains(entry.name)) raise(ErrorKind::schema, "duplicate tensor '" + entry.name + "'");
    bundle.set(entry.name, std::move(t));
  }

  const auto report = validate_schema(bundle, bundle.config());
  if (!report.ok()) raise(ErrorKind::schema, report.summary());
  return bundle;
}

std::uint64_t bundle_fingerprint(const WeightBundle& bundle) {
  std::uint64_t h = fnv1a(config_to_json(bundle.config()).dump());
  for (const auto& [name, t] : bundle.entries()) {
    h = fnv1a(name, h);
    h = fnv1a(shape_string(t.shape), h);
    h = fnv1a_words(t.values, h);
  }
  return h;
}

}  // namespace morphscope
