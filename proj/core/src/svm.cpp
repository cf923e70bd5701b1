#include "morphscope/svm.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "binary_io.hpp"
#include "json.hpp"
#include "morphscope/error.hpp"

namespace morphscope {

namespace {

using nlohmann::json;
constexpr char kMagic[5] = "MSM1";
constexpr std::uint32_t kFormatVersion = 1;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_training_set(const TrainingSet& data, const SvmConfig& config) {
  const std::size_t n = data.features.rows();
  if (data.labels.size() != n) {
    raise(ErrorKind::shape, std::to_string(n) + " feature rows but " +
                                std::to_string(data.labels.size()) + " labels");
  }
  if (!(config.C > 0.0) || !(config.tol > 0.0)) raise(ErrorKind::argument, "C and tol must be positive");
  std::size_t pos = 0, neg = 0;
  for (int y : data.labels) {
    if (y == 1) ++pos;
    else if (y == -1) ++neg;
    else raise(ErrorKind::data, "label " + std::to_string(y) + " is not -1 or +1");
  }
  if (pos == 0 || neg == 0) raise(ErrorKind::training, "training data must contain both classes");
  if (!data.features.all_finite()) raise(ErrorKind::data, "training features contain NaN or infinity");
}

ScalingRecord fit_scaling(const Matrix& x, FeatureScaling mode) {
  ScalingRecord rec;
  rec.mode = mode;
  if (mode == FeatureScaling::none) return rec;
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x(i, j);
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) var[j] += (x(i, j) - mean[j]) * (x(i, j) - mean[j]);
  rec.mean.resize(d);
  rec.scale.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(var[j] / static_cast<double>(n));
    rec.mean[j] = static_cast<float>(mean[j]);
    rec.scale[j] = sd > 0.0 ? static_cast<float>(sd) : 1.0f;
  }
  return rec;
}

double scaled(const ScalingRecord& s, std::size_t j, float v) {
  if (s.mode == FeatureScaling::none) return v;
  return (static_cast<double>(v) - s.mean[j]) / s.scale[j];
}

std::pair<double, double> class_penalties(const SvmConfig& config, const std::vector<int>& labels) {
  if (!config.class_weighting) return {config.C, config.C};
  const double n = static_cast<double>(labels.size());
  const double pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double neg = n - pos;
  return {config.C * n / (2.0 * pos), config.C * n / (2.0 * neg)};
}

json config_json(const SvmConfig& c) {
  return json{{"C", c.C},
              {"tol", c.tol},
              {"max_iter", c.max_iter},
              {"seed", c.seed},
              {"scaling", std::string(to_string(c.scaling))},
              {"class_weighting", c.class_weighting}};
}

}  // namespace

std::string_view to_string(FeatureScaling scaling) {
  return scaling == FeatureScaling::none ? "none" : "standardize";
}

FeatureScaling parse_feature_scaling(std::string_view text) {
  if (text == "none") return FeatureScaling::none;
  if (text == "standardize") return FeatureScaling::standardize;
  raise(ErrorKind::argument, "unknown feature scaling '" + std::string(text) + "'");
}

LinearModel train(const TrainingSet& data, const SvmConfig& config, TrainingTrace* trace) {
  check_training_set(data, config);
  const std::size_t n = data.features.rows();
  const std::size_t d = data.features.cols();
  const std::size_t da = d + 1;  // augmented with the constant bias feature

  LinearModel model;
  model.config = config;
  model.scaling = fit_scaling(data.features, config.scaling);

  std::vector<double> x(n * da);
  std::vector<double> qdiag(n);
  std::vector<double> upper(n);
  const auto [c_pos, c_neg] = class_penalties(config, data.labels);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = &x[i * da];
    for (std::size_t j = 0; j < d; ++j) row[j] = scaled(model.scaling, j, data.features(i, j));
    row[d] = 1.0;
    qdiag[i] = dot({row, da}, {row, da});
    upper[i] = data.labels[i] > 0 ? c_pos : c_neg;
  }

  std::vector<double> alpha(n, 0.0);
  std::vector<double> w(da, 0.0);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(config.seed);

  auto projected_gradient = [&](std::size_t i) {
    const double y = data.labels[i];
    const double g = y * dot(w, {&x[i * da], da}) - 1.0;
    if (alpha[i] <= 0.0) return std::min(g, 0.0);
    if (alpha[i] >= upper[i]) return std::max(g, 0.0);
    return g;
  };
  auto dual_objective = [&] {
    double s = 0.0;
    for (double a : alpha) s += a;
    return s - 0.5 * dot(w, w);
  };

  std::size_t sweep = 0;
  for (; sweep < config.max_iter; ++sweep) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (std::size_t i : order) {
      const double y = data.labels[i];
      const double* xi = &x[i * da];
      const double g = y * dot(w, {xi, da}) - 1.0;
      double pg = g;
      if (alpha[i] <= 0.0) pg = std::min(g, 0.0);
      else if (alpha[i] >= upper[i]) pg = std::max(g, 0.0);
      if (std::fabs(pg) <= 1e-12) continue;
      const double previous = alpha[i];
      alpha[i] = std::clamp(previous - g / qdiag[i], 0.0, upper[i]);
      const double step = (alpha[i] - previous) * y;
      for (std::size_t j = 0; j < da; ++j) w[j] += step * xi[j];
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::fabs(projected_gradient(i)));
    if (trace) {
      trace->dual_objective.push_back(dual_objective());
      trace->max_violation.push_back(worst);
    }
    if (!std::isfinite(worst)) raise(ErrorKind::numeric, "SVM training diverged");
    if (worst <= config.tol) {
      model.converged = true;
      ++sweep;
      break;
    }
  }
  model.iterations = sweep;
  model.weights.resize(d);
  for (std::size_t j = 0; j < d; ++j) model.weights[j] = static_cast<float>(w[j]);
  model.bias = static_cast<float>(w[d]);
  if (trace) {
    trace->alpha = alpha;
    trace->upper_bound = upper;
  }
  return model;
}

double score(const LinearModel& model, std::span<const float> x) {
  if (x.size() != model.dim()) {
    raise(ErrorKind::shape, "feature has " + std::to_string(x.size()) + " values, model expects " +
                                std::to_string(model.dim()));
  }
  double s = model.bias;
  for (std::size_t j = 0; j < x.size(); ++j) s += model.weights[j] * scaled(model.scaling, j, x[j]);
  return s;
}

double primal_objective(const LinearModel& model, const TrainingSet& data) {
  double reg = static_cast<double>(model.bias) * model.bias;
  for (float v : model.weights) reg += static_cast<double>(v) * v;
  const auto [c_pos, c_neg] = class_penalties(model.config, data.labels);
  double loss = 0.0;
  for (std::size_t i = 0; i < data.features.rows(); ++i) {
    const double margin = data.labels[i] * score(model, data.features.row(i));
    loss += (data.labels[i] > 0 ? c_pos : c_neg) * std::max(0.0, 1.0 - margin);
  }
  return 0.5 * reg + loss;
}

void save_model(const LinearModel& model, const std::filesystem::path& path) {
  json header{{"version", kFormatVersion},
              {"dim", model.dim()},
              {"hyperparameters", config_json(model.config)},
              {"iterations", model.iterations},
              {"converged", model.converged},
              {"label_convention", "+1 morph, -1 bona fide; higher score = more morph-like"},
              {"bias_mode", "augmented constant feature (regularized)"},
              {"scaling", {{"mode", std::string(to_string(model.scaling.mode))},
                           {"mean", model.scaling.mean},
                           {"scale", model.scaling.scale}}}};
  const std::string text = header.dump();
  auto out = detail::open_output(path);
  out.write(kMagic, 4);
  detail::write_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::write_floats(out, model.weights);
  detail::write_floats(out, std::span(&model.bias, 1));
  if (!out) raise(ErrorKind::io, "write failed for " + path.string());
}

LinearModel load_model(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  detail::check_magic(in, kMagic, path.string());
  std::uint32_t len = 0;
  if (!detail::read_u32(in, len)) raise(ErrorKind::corruption, "truncated MSM1 header");
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) raise(ErrorKind::corruption, "truncated MSM1 header");

  LinearModel model;
  try {
    const json h = json::parse(text);
    const auto& hp = h.at("hyperparameters");
    model.config.C = hp.at("C").get<double>();
    model.config.tol = hp.at("tol").get<double>();
    model.config.max_iter = hp.at("max_iter").get<std::size_t>();
    model.config.seed = hp.at("seed").get<std::uint64_t>();
    model.config.scaling = parse_feature_scaling(hp.at("scaling").get<std::string>());
    model.config.class_weighting = hp.at("class_weighting").get<bool>();
    model.iterations = h.at("iterations").get<std::size_t>();
    model.converged = h.at("converged").get<bool>();
    const auto& s = h.at("scaling");
    model.scaling.mode = parse_feature_scaling(s.at("mode").get<std::string>());
    model.scaling.mean = s.at("mean").get<std::vector<float>>();
    model.scaling.scale = s.at("scale").get<std::vector<float>>();
    model.weights.resize(h.at("dim").get<std::size_t>());
  } catch (const json::exception& e) {
    raise(ErrorKind::format, std::string("malformed MSM1 header: ") + e.what());
  }
  if (model.scaling.mode == FeatureScaling::standardize &&
      (model.scaling.mean.size() != model.dim() || model.scaling.scale.size() != model.dim())) {
    raise(ErrorKind::format, "MSM1 scaling record does not match model dimension");
  }
  if (!detail::read_floats(in, model.weights) || !detail::read_floats(in, std::span(&model.bias, 1))) {
    raise(ErrorKind::corruption, "truncated MSM1 payload");
  }
  return model;
}

}  // namespace morphscope
