#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <map>

#include "doctest.h"
#include "gradcheck.hpp"
#include "lvp/dynamics.hpp"
#include "lvp/ops.hpp"
#include "lvp/sprites.hpp"

using namespace lvp;
using namespace lvp::testing;

namespace {

DynamicsConfig tiny_config(std::size_t layers = 2, std::size_t actions = 0) {
  DynamicsConfig c;
  c.layers = layers;
  c.heads = 2;
  c.width = 16;
  c.vocab = 12;
  c.grid_h = c.grid_w = 2;
  c.frames = 4;
  c.cond_frames = 1;
  c.context = 40;
  c.action_width = actions;
  return c;
}

std::vector<CodeGrid> random_grids(std::size_t t, std::size_t h, std::size_t w, std::size_t k, Rng& rng) {
  std::vector<CodeGrid> grids(t);
  for (auto& g : grids) {
    g.height = h;
    g.width = w;
    g.codes.resize(h * w);
    for (auto& c : g.codes) c = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(k) - 1));
  }
  return grids;
}

}  // namespace

TEST_CASE("token accounting") {
  Rng rng(1);
  auto s1 = flatten_codes(random_grids(12, 16, 16, 4, rng), 2);
  CHECK(s1.length() == 3072);
  CHECK(s1.target_count() == 2560);
  auto s2 = flatten_codes(random_grids(30, 16, 16, 4, rng), 5);
  CHECK(s2.target_count() == 6400);
  auto g = random_grids(3, 1, 1, 5, rng);
  auto s3 = flatten_codes(g, 1);
  CHECK(s3.codes == std::vector<int>{g[0].codes[0], g[1].codes[0], g[2].codes[0]});
  CHECK(s3.target_count() == 2);
  CHECK(target_rows(s3) == std::vector<int>{0, 1});
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = static_cast<std::size_t>(rng.uniform_int(2, 9));
    const auto c = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(t)));
    const auto h = static_cast<std::size_t>(rng.uniform_int(1, 5)), w = static_cast<std::size_t>(rng.uniform_int(1, 5));
    auto s = flatten_codes(random_grids(t, h, w, 3, rng), c);
    CHECK(s.target_count() == (t - c) * h * w);
    CHECK(target_rows(s).size() == (t - c) * h * w);
  }
  auto bad = random_grids(3, 2, 2, 3, rng);
  bad[1].width = 3;
  bad[1].codes.resize(6);
  CHECK_THROWS_AS(flatten_codes(bad, 1), DimensionError);
  CHECK_THROWS_AS(flatten_codes(random_grids(3, 2, 2, 3, rng), 0), ConfigError);
}

TEST_CASE("causality is exact") {
  LatentTransformer model(tiny_config(), 3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto seq = flatten_codes(random_grids(4, 2, 2, 12, rng), 1);
    auto base = model.forward_logits(seq);
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, 15));
    auto mod = seq;
    for (std::size_t p = j; p < mod.length(); ++p) mod.codes[p] = static_cast<int>(rng.uniform_int(0, 11));
    auto other = model.forward_logits(mod);
    CHECK(std::equal(base.values().begin(), base.values().begin() + static_cast<std::ptrdiff_t>(j * 12),
                     other.values().begin()));
  }
}

TEST_CASE("zero-layer model is position-local") {
  LatentTransformer model(tiny_config(0), 4);
  Rng rng(5);
  auto seq = flatten_codes(random_grids(4, 2, 2, 12, rng), 1);
  auto a = model.forward_logits(seq);
  auto mod = seq;
  mod.codes[7] = (mod.codes[7] + 1) % 12;
  auto b = model.forward_logits(mod);
  for (std::size_t p = 0; p < seq.length(); ++p) {
    const bool same = std::equal(a.values().begin() + p * 12, a.values().begin() + (p + 1) * 12, b.values().begin() + p * 12);
    CHECK(same == (p != 7));
  }
}

TEST_CASE("errors") {
  LatentTransformer model(tiny_config(), 6);
  Rng rng(7);
  auto seq = flatten_codes(random_grids(4, 2, 2, 12, rng), 1);
  seq.codes[3] = 12;
  CHECK_THROWS_AS(model.forward_logits(seq), VocabularyError);
  auto longseq = flatten_codes(random_grids(11, 2, 2, 12, rng), 1);
  CHECK_THROWS_AS(model.forward_logits(longseq), CapacityError);
  try {
    check_rollout_budget(model.config(), 2, 9);
    FAIL("expected capacity error");
  } catch (const CapacityError& e) {
    CHECK(std::string(e.what()).find("44 tokens") != std::string::npos);
  }
}

TEST_CASE("nll loss") {
  DynamicsConfig c = tiny_config();
  c.vocab = 256;
  Rng rng(8);
  auto seq = flatten_codes(random_grids(4, 2, 2, 256, rng), 1);
  CHECK(nll_loss(Tensor({16, 256}), seq).item() == doctest::Approx(std::log(256.0)));
  auto logits = random_tensor<float>({16, 256}, rng, 1.0, false);
  const float before = nll_loss(logits, seq).item();
  // Rows 0..2 predict conditioning codes 1..3 and never enter the loss.
  for (std::size_t i = 0; i < 3 * 256; ++i) logits.values_mut()[i] += 5.0f * float(rng.normal());
  CHECK(nll_loss(logits, seq).item() == before);

  LatentTransformer model(c, 9);
  auto full = nll_loss(model.forward_logits(seq), seq).item();
  CHECK(model.loss(std::span<const TokenSequence>(&seq, 1)).item() == doctest::Approx(full).epsilon(1e-6));
}

TEST_CASE("attention block gradient check") {
  using T = double;
  Rng rng(10);
  const std::size_t len = 5, d = 8;
  auto x = random_tensor<T>({len, d}, rng);
  auto g = random_tensor<T>({d}, rng), b = random_tensor<T>({d}, rng);
  auto wqkv = random_tensor<T>({d, 3 * d}, rng, 0.4), bqkv = random_tensor<T>({3 * d}, rng, 0.1);
  auto wo = random_tensor<T>({d, d}, rng, 0.4);
  auto w1 = random_tensor<T>({d, 4 * d}, rng, 0.4), w2 = random_tensor<T>({4 * d, d}, rng, 0.4);
  auto probe_w = random_tensor<T>({len, d}, rng, 1.0, false);
  auto r = gradcheck<T>({x, g, b, wqkv, bqkv, wo, w1, w2}, [&] {
    auto h = ops::layer_norm(x, g, b);
    auto a = ops::causal_attention(ops::add_bias(ops::matmul(h, wqkv), bqkv), 1, len, 2);
    auto y = ops::add(x, ops::matmul(a, wo));
    auto m = ops::matmul(ops::gelu(ops::matmul(ops::layer_norm(y, g, b), w1)), w2);
    return probe(ops::add(y, m), probe_w);
  });
  CHECK(r.relative_error < 1e-3);
}

TEST_CASE("action conditioning") {
  Rng rng(11);
  auto grids = random_grids(4, 2, 2, 12, rng);
  std::vector<float> actions(8);
  for (auto& a : actions) a = float(rng.uniform_int(-1, 1));
  LatentTransformer plain(tiny_config(), 12);
  auto with = plain.forward_logits(flatten_codes(grids, 1, actions, 2));
  auto without = plain.forward_logits(flatten_codes(grids, 1));
  CHECK(std::equal(with.values().begin(), with.values().end(), without.values().begin()));

  LatentTransformer conditioned(tiny_config(2, 2), 12);
  auto a1 = conditioned.forward_logits(flatten_codes(grids, 1, actions, 2));
  actions[5] += 1.0f;  // frame 2's action
  auto a2 = conditioned.forward_logits(flatten_codes(grids, 1, actions, 2));
  CHECK(std::equal(a1.values().begin(), a1.values().begin() + 8 * 12, a2.values().begin()));
  CHECK(!std::equal(a1.values().begin(), a1.values().end(), a2.values().begin()));
  CHECK_THROWS_AS(conditioned.forward_logits(flatten_codes(grids, 1)), DimensionError);
}

TEST_CASE("rollout cache matches the full forward pass") {
  LatentTransformer model(tiny_config(2, 2), 13);
  Rng rng(14);
  std::vector<float> actions{1, 0, -1, 1, 0, 0, 1, 1};
  auto seq = flatten_codes(random_grids(4, 2, 2, 12, rng), 1, actions, 2);
  auto full = model.forward_logits(seq);
  Rollout r(model, 16);
  for (std::size_t p = 0; p < seq.length(); ++p) {
    auto row = r.push(seq.codes[p], seq.frame_index[p], seq.spatial_index[p],
                      std::span<const float>(actions).subspan(seq.frame_index[p] * 2, 2));
    CHECK(std::equal(row.begin(), row.end(), full.values().begin() + p * 12));
  }
}

TEST_CASE("sample_topk") {
  Rng rng(15);
  std::vector<float> logits{0.1f, 2.0f, -1.0f, 2.0f, 0.5f};
  for (int i = 0; i < 100; ++i) CHECK(sample_topk(logits, 1, 1.0, rng) == 1);
  for (std::size_t k = 1; k <= 5; ++k) CHECK(sample_topk(std::vector<float>{0.3f, 4.0f, 1.0f, 0.0f, -2.0f}, k, 1e-9, rng) == 1);
  CHECK_THROWS_AS(sample_topk(logits, 0, 1.0, rng), UsageError);
  CHECK_THROWS_AS(sample_topk(logits, 6, 1.0, rng), UsageError);
  CHECK_THROWS_AS(sample_topk(logits, 2, 0.0, rng), UsageError);

  std::vector<float> l2{float(std::log(4.0)), float(std::log(2.0)), 0.0f, -0.5f, -1.0f};
  std::map<int, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sample_topk(l2, 2, 1.0, rng)];
  CHECK(counts.size() == 2);
  CHECK(double(counts[0]) / n == doctest::Approx(2.0 / 3.0).epsilon(0.015));
  CHECK(double(counts[1]) / n == doctest::Approx(1.0 / 3.0).epsilon(0.03));
}

TEST_CASE("k = K matches the unrestricted categorical") {
  Rng rng(16);
  std::vector<float> logits{0.2f, -0.4f, 1.1f, 0.0f, 0.7f, -1.3f};
  std::vector<double> p(6);
  double z = 0;
  for (std::size_t i = 0; i < 6; ++i) z += p[i] = std::exp(double(logits[i]));
  std::vector<int> counts(6, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_topk(logits, 6, 1.0, rng))];
  double chi2 = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    const double e = n * p[i] / z;
    chi2 += (counts[i] - e) * (counts[i] - e) / e;
  }
  boost::math::chi_squared dist(5);
  CHECK(boost::math::cdf(boost::math::complement(dist, chi2)) > 0.01);
}

TEST_CASE("prediction sessions") {
  CodecConfig cc;
  cc.height = cc.width = 16;
  cc.codes = 12;
  cc.code_dim = 4;
  cc.base_width = 4;
  cc.max_width = 8;
  cc.downsample = 8;
  VqCodec codec(cc, 1);
  auto dc = tiny_config(2, 2);
  dc.context = 60;
  LatentTransformer model(dc, 2);
  SpriteWorldConfig sc;
  sc.height = sc.width = 16;
  sc.size_min = 2;
  sc.size_max = 3;
  sc.mode = PhysicsMode::kAction;
  sc.frames = 15;
  auto clip = generate_clip(sc, 5);
  auto cond = clip.slice(0, 1);
  SamplerSettings greedy{1, 1.0};
  auto a = predict_video(cond, clip.actions, 5, codec, model, greedy, 9);
  auto b = predict_video(cond, clip.actions, 5, codec, model, greedy, 9);
  CHECK(a.length() == 5);
  CHECK(std::equal(a.frames.values().begin(), a.frames.values().end(), b.frames.values().begin()));

  SamplerSettings sampled{12, 1.0};
  auto full = predict_video(cond, clip.actions, 12, codec, model, sampled, 21);
  PredictionSession session(model, codec, cond, clip.actions, sampled, 21);
  auto first = session.extend(5);
  auto rest = session.extend(7);
  const std::size_t fs = full.frame_size();
  CHECK(std::equal(first.frames.values().begin(), first.frames.values().end(), full.frames.values().begin()));
  CHECK(std::equal(rest.frames.values().begin(), rest.frames.values().end(), full.frames.values().begin() + 5 * fs));

  // Frames past the training horizon (4) reuse the last frame embedding.
  CHECK_NOTHROW(predict_video(cond, clip.actions, 14, codec, model, greedy, 3));
  CHECK_THROWS_AS(predict_video(cond, clip.actions, 15, codec, model, greedy, 3), CapacityError);
}

TEST_CASE("pixel factorization oracle") {
  TinyClip clip{2, 2, 2, 1, 4, {0, 1, 2, 3, 1, 1, 0, 3}};
  auto acc = pixel_accounting(clip, 1);
  CHECK(acc.pixels == 8);
  CHECK(acc.cond_pixels == 4);
  CHECK(acc.predicted == 4);
  CHECK(pixel_factorization_oracle(clip, 1, PixelModel::kUniform) == doctest::Approx(-4 * std::log(4.0)));
  CHECK(pixel_joint_by_enumeration(clip, 1, PixelModel::kUniform) == doctest::Approx(-4 * std::log(4.0)));
  CHECK(pixel_factorization_oracle(clip, 1, PixelModel::kLaplaceCount) ==
        doctest::Approx(pixel_joint_by_enumeration(clip, 1, PixelModel::kLaplaceCount)).epsilon(1e-12));
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    TinyClip c{3, 2, 2, 1, 3, std::vector<int>(12)};
    for (auto& v : c.values) v = static_cast<int>(rng.uniform_int(0, 2));
    CHECK(pixel_factorization_oracle(c, 2, PixelModel::kLaplaceCount) ==
          doctest::Approx(pixel_joint_by_enumeration(c, 2, PixelModel::kLaplaceCount)).epsilon(1e-12));
  }
  TinyClip big{4, 4, 4, 1, 4, std::vector<int>(64)};
  CHECK_THROWS_AS(pixel_factorization_oracle(big, 1, PixelModel::kUniform), CapacityError);
}

TEST_CASE("dynamics checkpoint round trip") {
  LatentTransformer model(tiny_config(1, 2), 31);
  auto bytes = encode_checkpoint(model.to_checkpoint("abc"));
  auto ckpt = decode_checkpoint(bytes, kDynamicsMagic, "mem");
  CHECK(ckpt.value("codec_hash") == "abc");
  auto restored = LatentTransformer::from_checkpoint(ckpt);
  CHECK(encode_checkpoint(restored.to_checkpoint("abc")) == bytes);
}
