#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "morphscope/error.hpp"
#include "morphscope/vit.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace morphscope;

namespace {

mstest::Dense to_dense(const Matrix& m) {
  mstest::Dense d(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) d[r][c] = m(r, c);
  return d;
}

double max_abs_diff(const Matrix& m, const mstest::Dense& ref) {
  double worst = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) worst = std::max(worst, std::fabs(m(r, c) - ref[r][c]));
  return worst;
}

void zero_tensor(WeightBundle& b, const std::string& name) {
  auto& v = b.at(name).values;
  std::fill(v.begin(), v.end(), 0.0f);
}

void zero_residual_branches(WeightBundle& b) {
  for (std::size_t l = 0; l < b.config().depth; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    for (const char* t : {"attn.out.weight", "attn.out.bias", "mlp.fc2.weight", "mlp.fc2.bias"}) zero_tensor(b, p + t);
  }
}

// Moves whole patches: destination grid cell k receives source cell perm[k].
ImageTensor permute_patches(const ImageTensor& img, const ViTConfig& c, const std::vector<std::size_t>& perm) {
  ImageTensor out(img.height, img.width);
  const std::size_t g = c.grid_side(), ps = c.patch_side;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    const std::size_t dy = (k / g) * ps, dx = (k % g) * ps;
    const std::size_t sy = (perm[k] / g) * ps, sx = (perm[k] % g) * ps;
    for (std::size_t y = 0; y < ps; ++y)
      for (std::size_t x = 0; x < ps; ++x)
        for (std::size_t ch = 0; ch < 3; ++ch) out.at(dy + y, dx + x, ch) = img.at(sy + y, sx + x, ch);
  }
  return out;
}

}  // namespace

TEST_CASE("patchify geometry at full size") {
  const ViTConfig c;
  const Matrix p = patchify(ImageTensor(384, 384, 0.25f), c);
  CHECK(p.rows() == 144);
  CHECK(p.cols() == 3072);
  for (float v : p.values()) CHECK(v == 0.25f);
}

TEST_CASE("patchify raster order") {
  const ViTConfig c = mstest::tiny_config();
  ImageTensor img(32, 32);
  img.at(0, 0, 0) = 1.0f;
  Matrix p = patchify(img, c);
  CHECK(p(0, 0) == 1.0f);
  CHECK(std::accumulate(p.values().begin(), p.values().end(), 0.0f) == 1.0f);

  // Pixel (y=9, x=18, channel 2) lies in grid cell (1, 2) at patch offset
  // (1, 2): row 1·4+2, column (1·8+2)·3+2.
  img = ImageTensor(32, 32);
  img.at(9, 18, 2) = 1.0f;
  p = patchify(img, c);
  CHECK(p(6, 32) == 1.0f);

  CHECK_THROWS_AS(patchify(ImageTensor(31, 32), c), Error);
}

TEST_CASE("sinusoidal positions") {
  const Matrix pe = sinusoidal_positions(145, 1024);
  for (std::size_t i = 0; i < 1024; ++i) CHECK(pe(0, i) == (i % 2 ? 1.0f : 0.0f));
  for (float v : pe.values()) CHECK(std::fabs(v) <= 1.0f);
  CHECK(pe(1, 0) == doctest::Approx(0.84147).epsilon(1e-5));
  CHECK(pe(3, 5) == doctest::Approx(std::cos(3.0 / std::pow(10000.0, 4.0 / 1024))).epsilon(1e-6));
  try {
    sinusoidal_positions(4, 7);
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::shape);
  }
}

TEST_CASE("embed") {
  ViTConfig c = mstest::tiny_config();
  auto b = random_bundle(c, 3, 0.2f);

  SUBCASE("shape") {
    const auto z = embed(Matrix(c.patch_count(), c.patch_dim()), b, c);
    CHECK(z.tokens.rows() == c.sequence_length());
    CHECK(z.tokens.cols() == c.hidden_dim);
    CHECK(z.layer_index == 0);
  }
  SUBCASE("zero patches, bias and positions") {
    zero_tensor(b, "embed.patch.bias");
    zero_tensor(b, "pos_embed");
    const auto z = embed(Matrix(c.patch_count(), c.patch_dim()), b, c);
    for (std::size_t r = 1; r < z.tokens.rows(); ++r)
      for (float v : z.tokens.row(r)) CHECK(v == 0.0f);
    const auto& cls = b.at("cls_token").values;
    CHECK(std::vector<float>(z.tokens.row(0).begin(), z.tokens.row(0).end()) == cls);
  }
  SUBCASE("permuting patches permutes tokens without positions") {
    zero_tensor(b, "pos_embed");
    const Matrix patches = mstest::random_matrix(c.patch_count(), c.patch_dim(), 4);
    std::vector<std::size_t> perm(c.patch_count());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(1);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix shuffled(patches.rows(), patches.cols());
    for (std::size_t k = 0; k < perm.size(); ++k)
      std::copy(patches.row(perm[k]).begin(), patches.row(perm[k]).end(), shuffled.row(k).begin());
    const auto a = embed(patches, b, c), s = embed(shuffled, b, c);
    for (std::size_t k = 0; k < perm.size(); ++k)
      for (std::size_t j = 0; j < c.hidden_dim; ++j) CHECK(s.tokens(k + 1, j) == a.tokens(perm[k] + 1, j));
  }
  SUBCASE("sinusoidal mode adds the table") {
    c.positional_mode = PositionalMode::sinusoidal;
    auto bs = random_bundle(c, 3, 0.2f);
    zero_tensor(bs, "embed.patch.bias");
    zero_tensor(bs, "cls_token");
    const auto z = embed(Matrix(c.patch_count(), c.patch_dim()), bs, c);
    CHECK(z.tokens == sinusoidal_positions(c.sequence_length(), c.hidden_dim));
  }
  SUBCASE("schema errors propagate") {
    b.erase("cls_token");
    CHECK_THROWS_AS(embed(Matrix(c.patch_count(), c.patch_dim()), b, c), Error);
  }
}

TEST_CASE("attention with zero queries and keys is uniform") {
  ViTConfig c = mstest::tiny_config();
  auto b = random_bundle(c, 5, 0.3f);
  for (const char* t : {"q.weight", "q.bias", "k.weight", "k.bias"}) zero_tensor(b, std::string("blocks.0.attn.") + t);
  const auto lp = layer_params(b, 0);
  const Matrix x = mstest::random_matrix(5, c.hidden_dim, 6);
  const Matrix out = multi_head_attention(x, lp, c.heads);

  const Matrix v = linear(x, lp.v_weight, lp.v_bias);
  Matrix mean(1, c.hidden_dim);
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t j = 0; j < c.hidden_dim; ++j) mean(0, j) += v(r, j) / v.rows();
  const Matrix expect = linear(mean, lp.out_weight, lp.out_bias);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t j = 0; j < c.hidden_dim; ++j) CHECK(std::fabs(out(r, j) - expect(0, j)) <= 1e-6);
}

TEST_CASE("attention rows sum to one") {
  const ViTConfig c = mstest::tiny_config();
  const auto b = random_bundle(c, 8, 0.5f);
  std::size_t calls = 0;
  double worst = 0.0;
  multi_head_attention(mstest::random_matrix(9, c.hidden_dim, 2, -3, 3), layer_params(b, 1), c.heads,
                       [&](std::size_t, std::size_t, const Matrix& p) {
                         ++calls;
                         for (std::size_t r = 0; r < p.rows(); ++r) {
                           double s = 0.0;
                           for (float v : p.row(r)) s += v;
                           worst = std::max(worst, std::fabs(s - 1.0));
                         }
                       });
  CHECK(calls == c.heads);
  CHECK(worst <= 1e-6);
}

TEST_CASE("single-head attention matches the dense oracle") {
  ViTConfig c = mstest::tiny_config();
  c.heads = 1;
  const auto b = random_bundle(c, 11, 0.4f);
  const Matrix x = mstest::random_matrix(3, c.hidden_dim, 12);
  const Matrix out = multi_head_attention(x, layer_params(b, 0), 1);
  CHECK(max_abs_diff(out, mstest::attention_oracle(to_dense(x), b, "blocks.0.attn.", 1)) <= 1e-5);
}

TEST_CASE("multi-head attention matches the dense oracle") {
  ViTConfig c = mstest::tiny_config();
  c.heads = 4;
  const auto b = random_bundle(c, 13, 0.4f);
  const Matrix x = mstest::random_matrix(7, c.hidden_dim, 14);
  const Matrix out = multi_head_attention(x, layer_params(b, 1), 4);
  CHECK(max_abs_diff(out, mstest::attention_oracle(to_dense(x), b, "blocks.1.attn.", 4)) <= 1e-5);
}

TEST_CASE("encoder block matches a straight-line implementation") {
  const ViTConfig c = mstest::tiny_config();
  auto b = random_bundle(c, 17, 0.3f);
  // Non-trivial LayerNorm parameters.
  std::mt19937_64 rng(3);
  for (const char* t : {"ln1.gamma", "ln1.beta", "ln2.gamma", "ln2.beta"}) {
    for (float& v : b.at(std::string("blocks.0.") + t).values) v += static_cast<float>(std::normal_distribution<>(0, 0.3)(rng));
  }
  const TokenSequence z{mstest::random_matrix(4, c.hidden_dim, 18, -2, 2), 0};
  const TokenSequence out = encoder_block(z, layer_params(b, 0), c);
  CHECK(out.layer_index == 1);
  CHECK(out.tokens.rows() == 4);
  CHECK(max_abs_diff(out.tokens, mstest::block_oracle(to_dense(z.tokens), b, 0)) <= 1e-5);
}

TEST_CASE("zeroed residual branches make a block the identity") {
  const ViTConfig c = mstest::tiny_config();
  auto b = random_bundle(c, 19, 0.5f);
  zero_residual_branches(b);
  const TokenSequence z{mstest::random_matrix(c.sequence_length(), c.hidden_dim, 20), 0};
  CHECK(encoder_block(z, layer_params(b, 0), c).tokens == z.tokens);

  const Encoder enc(b, c);
  const ImageTensor img = mstest::noise_image(32, 32, 1);
  CHECK(enc.forward(img).tokens == embed(patchify(img, c), b, c).tokens);
}

TEST_CASE("forced CLS algebra") {
  ViTConfig c = mstest::tiny_config();
  auto b = random_bundle(c, 23, 0.5f);
  zero_residual_branches(b);
  zero_tensor(b, "pos_embed");
  zero_tensor(b, "cls_token");
  zero_tensor(b, "final_ln.gamma");
  std::vector<float> beta(c.hidden_dim);
  std::iota(beta.begin(), beta.end(), -3.0f);
  b.at("final_ln.beta").values = beta;
  const FeatureVector f = extract_cls(ImageTensor(32, 32, 0.0f), b, c);
  CHECK(f.values == beta);
}

TEST_CASE("CLS is invariant to patch order without positions") {
  ViTConfig c = mstest::tiny_config(3);
  auto b = random_bundle(c, 29, 0.2f);
  zero_tensor(b, "pos_embed");
  const ImageTensor img = mstest::noise_image(32, 32, 30, 2);
  std::vector<std::size_t> perm(c.patch_count());
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[0], perm[5]);
  const Encoder enc(b, c);
  const auto a = enc.extract(img), s = enc.extract(permute_patches(img, c, perm));
  for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(std::fabs(a.values[i] - s.values[i]) <= 1e-5);
}

TEST_CASE("positional encodings break permutation invariance") {
  const ViTConfig c = mstest::tiny_config(2);
  const auto b = random_bundle(c, 31, 0.5f);
  const ImageTensor img = mstest::noise_image(32, 32, 32, 2);
  std::vector<std::size_t> perm(c.patch_count());
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  const Encoder enc(b, c);
  CHECK(enc.extract(img).values != enc.extract(permute_patches(img, c, perm)).values);
}

TEST_CASE("encoder output shapes and determinism") {
  ViTConfig c = mstest::tiny_config(2);
  const auto b = random_bundle(c, 37);
  const Encoder enc(b, c);
  std::vector<ImageTensor> images;
  std::vector<std::string> ids;
  for (int i = 0; i < 7; ++i) {
    images.push_back(mstest::noise_image(32, 32, 100 + i));
    ids.push_back("img" + std::to_string(i));
  }
  const TokenSequence z = enc.forward(images[0]);
  CHECK(z.tokens.rows() == c.sequence_length());
  CHECK(z.tokens.cols() == c.hidden_dim);
  CHECK(z.layer_index == c.depth);

  const auto serial = enc.extract_batch(images, ids, 1);
  const auto parallel = enc.extract_batch(images, ids, 3);
  CHECK(serial == parallel);
  for (std::size_t i = 0; i < images.size(); ++i) {
    CHECK(serial[i].image_id == ids[i]);
    CHECK(serial[i].values.size() == c.hidden_dim);
    CHECK(serial[i] == enc.extract(images[i], ids[i]));
  }
}

TEST_CASE("final layer norm flag") {
  ViTConfig c = mstest::tiny_config(1);
  const auto b = random_bundle(c, 41, 0.3f);
  const ImageTensor img = mstest::noise_image(32, 32, 42);
  const Encoder with(b, c);
  c.final_layer_norm = false;
  const Encoder without(b, c);
  const auto raw = without.extract(img).values;
  const auto z = without.forward(img);
  CHECK(raw == std::vector<float>(z.tokens.row(0).begin(), z.tokens.row(0).end()));
  CHECK(with.extract(img).values ==
        layer_norm(z.tokens.row(0), b.at("final_ln.gamma").values, b.at("final_ln.beta").values));
}

TEST_CASE("encoder rejects mismatched bundles") {
  const auto b = random_bundle(mstest::tiny_config(2), 1);
  CHECK_THROWS_AS(Encoder(b, mstest::tiny_config(3)), Error);
  const Encoder enc(b, mstest::tiny_config(2));
  CHECK_THROWS_AS(enc.extract(ImageTensor(16, 16)), Error);
}
