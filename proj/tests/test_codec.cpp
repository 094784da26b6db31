#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gradcheck.hpp"
#include "lvp/codec.hpp"
#include "lvp/kernels.hpp"
#include "lvp/ops.hpp"
#include "lvp/sprites.hpp"

using namespace lvp;
using namespace lvp::testing;

namespace {

CodecConfig small_config() {
  CodecConfig c;
  c.height = c.width = 16;
  c.codes = 32;
  c.code_dim = 8;
  c.base_width = 8;
  c.max_width = 16;
  return c;
}

// Exhaustive scan with explicit lowest-index tie-break, in double.
int brute_nearest(const std::vector<float>& v, const Tensor& cb) {
  const std::size_t k = cb.dim(0), d = cb.dim(1);
  int best = 0;
  double best_d = INFINITY;
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = double(v[j]) - double(cb.values()[i * d + j]);
      s += diff * diff;
    }
    if (s < best_d) {
      best_d = s;
      best = static_cast<int>(i);
    }
  }
  return best;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto i, auto j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = double(i);
    return r;
  };
  auto ra = ranks(a), rb = ranks(b);
  double d2 = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  const double n = double(ra.size());
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

}  // namespace

TEST_CASE("quantize examples") {
  Tensor z({1, 2, 1, 1}, {0.9f, 0.8f});
  Tensor cb({2, 2}, {0, 0, 1, 1});
  auto q = quantize(z, cb);
  CHECK(q.codes == std::vector<int>{1});
  CHECK(q.z_q.values()[0] == 1.0f);

  Rng rng(3);
  auto ze = random_tensor<float>({2, 3, 2, 2}, rng, 1.0, false);
  Tensor single({1, 3}, {0.1f, 0.2f, 0.3f});
  auto q1 = quantize(ze, single);
  for (int c : q1.codes) CHECK(c == 0);
  for (std::size_t i = 0; i < q1.z_q.numel(); ++i) CHECK(q1.z_q.values()[i] == single.values()[(i / 4) % 3]);
  CHECK_THROWS_AS(quantize(ze, Tensor({0, 3})), ConfigError);
}

TEST_CASE("quantize matches an exhaustive scan") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const std::size_t k = static_cast<std::size_t>(rng.uniform_int(1, 256));
    const std::size_t d = static_cast<std::size_t>(rng.uniform_int(1, 8));
    auto cb = random_tensor<float>({k, d}, rng, 1.0, false);
    // Duplicate rows force ties.
    for (std::size_t i = 1; i < k; i += 3) std::copy_n(cb.values().begin(), d, cb.values_mut().begin() + i * d);
    auto ze = random_tensor<float>({1, d, 3, 3}, rng, 1.0, false);
    for (std::size_t j = 0; j < d; ++j) ze.values_mut()[j * 9] = cb.values()[j];  // exact hit on a tied row
    auto q = quantize(ze, cb);
    for (std::size_t p = 0; p < 9; ++p) {
      std::vector<float> v(d);
      for (std::size_t j = 0; j < d; ++j) v[j] = ze.values()[j * 9 + p];
      CHECK(q.codes[p] == brute_nearest(v, cb));
    }
    CHECK(q.codes[0] == 0);
  }
}

TEST_CASE("codec shapes and range") {
  auto cfg = small_config();
  VqCodec codec(cfg, 1);
  Rng rng(4);
  auto x = random_tensor<float>({2, 3, 16, 16}, rng, 0.5, false);
  auto f = codec.forward(x);
  CHECK(f.z_e.shape() == Shape{2, 8, 4, 4});
  CHECK(f.reconstruction.shape() == x.shape());
  for (float v : f.reconstruction.values()) CHECK(std::abs(v) <= 1.0f);
  CHECK_THROWS_AS(codec.encode(Tensor({1, 3, 12, 16})), ConfigError);
  CHECK_THROWS_AS(codec.decode(Tensor({1, 8, 3, 4})), ConfigError);

  for (std::size_t factor : {2u, 4u, 8u, 16u}) {
    CodecConfig c = small_config();
    c.height = c.width = 32;
    c.downsample = factor;
    VqCodec cd(c, 2);
    auto z = cd.encode(Tensor({1, 3, 32, 32}));
    CHECK(z.dim(2) == 32 / factor);
    CHECK(cd.decode(z).shape() == Shape{1, 3, 32, 32});
  }
  CodecConfig bad = small_config();
  bad.height = 18;
  CHECK_THROWS_AS(VqCodec(bad, 0), ConfigError);
}

TEST_CASE("256x256 at f=16 gives 16x16 codes") {
  CodecConfig c;
  c.height = c.width = 256;
  c.downsample = 16;
  c.base_width = 4;
  c.max_width = 8;
  c.code_dim = 4;
  c.codes = 8;
  VqCodec codec(c, 0);
  NoGradScope no_grad;
  auto z = codec.encode(Tensor({1, 3, 256, 256}));
  CHECK(z.shape() == Shape{1, 4, 16, 16});
}

TEST_CASE("vq loss terms and gradient routing") {
  auto cfg = small_config();
  VqCodec codec(cfg, 5);
  Rng rng(6);
  auto x = random_tensor<float>({2, 3, 16, 16}, rng, 0.5, false);

  Tape tape;
  TapeScope scope(tape);
  auto f = codec.forward(x);
  auto loss = vqvae_loss(x, f.reconstruction, f.z_e, f.q.z_q_codebook, cfg.beta);
  auto& params = codec.params();

  auto cb_total = gradient_of(tape, loss.total, codec.codebook(), params);
  auto cb_isolated = gradient_of(tape, loss.codebook_term, codec.codebook(), params);
  CHECK(cb_total == cb_isolated);
  for (float g : gradient_of(tape, loss.recon, codec.codebook(), params)) CHECK(g == 0.0f);
  for (float g : gradient_of(tape, loss.commit, codec.codebook(), params)) CHECK(g == 0.0f);
  for (float g : gradient_of(tape, loss.codebook_term, params.at("encoder.out.weight"), params)) CHECK(g == 0.0f);
  bool any = false;
  for (float g : gradient_of(tape, loss.commit, params.at("encoder.out.weight"), params)) any |= g != 0.0f;
  CHECK(any);

  // Straight-through: dL/dz_e equals dL/dz_q.
  params.zero_grad();
  tape.backward(loss.recon);
  REQUIRE(f.z_e.has_grad());
  REQUIRE(f.q.z_q.has_grad());
  CHECK(std::equal(f.z_e.grad().begin(), f.z_e.grad().end(), f.q.z_q.grad().begin()));
  CHECK(std::equal(f.q.z_q.values().begin(), f.q.z_q.values().end(), f.q.z_q_codebook.values().begin()));
}

TEST_CASE("vq loss special cases") {
  Rng rng(7);
  auto x = random_tensor<float>({1, 3, 4, 4}, rng, 0.5, false);
  auto z = random_tensor<float>({1, 2, 2, 2}, rng);
  auto l = vqvae_loss(x, x, z, z.detach(), 0.25);
  CHECK(l.recon.item() == 0.0f);
  CHECK(l.codebook_term.item() == 0.0f);
  CHECK(l.commit.item() == 0.0f);

  Tape tape;
  TapeScope scope(tape);
  auto zq = random_tensor<float>({1, 2, 2, 2}, rng);
  auto l0 = vqvae_loss(x, x, z, zq, 0.0);
  tape.backward(l0.commit);
  for (float g : z.grad()) CHECK(g == 0.0f);
}

TEST_CASE("encoder gradient finite-difference spot check") {
  auto cfg = small_config();
  VqCodec codec(cfg, 8);
  Rng rng(9);
  auto x = random_tensor<float>({1, 3, 16, 16}, rng, 0.5, false);
  auto w = random_tensor<float>({1, 8, 4, 4}, rng, 1.0, false);
  auto& k = codec.params().at("encoder.out.weight");
  Tape tape;
  double analytic = 0;
  {
    TapeScope scope(tape);
    auto loss = probe(codec.encode(x), w);
    tape.backward(loss);
  }
  const std::size_t idx = 5;
  analytic = k.grad()[idx];
  NoGradScope ng;
  const float saved = k.values()[idx], h = 1e-2f;
  k.values_mut()[idx] = saved + h;
  const double up = probe(codec.encode(x), w).item();
  k.values_mut()[idx] = saved - h;
  const double down = probe(codec.encode(x), w).item();
  k.values_mut()[idx] = saved;
  CHECK(analytic == doctest::Approx((up - down) / (2 * h)).epsilon(1e-2));
}

TEST_CASE("perceptual loss") {
  PerceptualBank bank(3, 11);
  Rng rng(12);
  auto x = random_tensor<float>({1, 3, 16, 16}, rng, 0.5, false);
  auto y = random_tensor<float>({1, 3, 16, 16}, rng, 0.5, false);
  CHECK(perceptual_loss(x, x, bank).item() == 0.0f);
  CHECK(perceptual_loss(x, y, bank).item() == doctest::Approx(perceptual_loss(y, x, bank).item()));

  SpriteWorldConfig sc;
  auto img = generate_clip(sc, 3).frame_batch(0, 1);
  std::vector<double> levels, dist;
  Rng noise_rng(13);
  auto noise = random_tensor<float>(img.shape(), noise_rng, 1.0, false);
  for (int i = 1; i <= 10; ++i) {
    const float a = 0.05f * i;
    Tensor noisy(img.shape());
    for (std::size_t j = 0; j < img.numel(); ++j) noisy.values_mut()[j] = img.values()[j] + a * noise.values()[j];
    levels.push_back(a);
    dist.push_back(perceptual_loss(img, noisy, bank).item());
  }
  CHECK(spearman(levels, dist) > 0.9);
}

TEST_CASE("discriminator") {
  Discriminator d(3, 8, 1);
  Rng rng(14);
  auto x = random_tensor<float>({3, 3, 32, 32}, rng, 0.5, false);
  auto out = d.forward(x);
  CHECK(out.shape() == Shape{3, 1, 4, 4});
  Tensor swapped(x.shape());
  const std::size_t fs = 3 * 32 * 32;
  const std::size_t order[] = {2, 0, 1};
  for (std::size_t b = 0; b < 3; ++b) std::copy_n(x.values().begin() + order[b] * fs, fs, swapped.values_mut().begin() + b * fs);
  auto out2 = d.forward(swapped);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < 16; ++i) CHECK(out2.values()[b * 16 + i] == out.values()[order[b] * 16 + i]);
  }
}

TEST_CASE("discriminator gradient check") {
  // The same layer stack in double through the generic kernels.
  Rng rng(15);
  using T = double;
  auto x = random_tensor<T>({1, 2, 16, 16}, rng, 0.5);
  auto k1 = random_tensor<T>({3, 2, 4, 4}, rng, 0.3), k2 = random_tensor<T>({3, 3, 4, 4}, rng, 0.3);
  auto k3 = random_tensor<T>({4, 3, 4, 4}, rng, 0.3), head = random_tensor<T>({1, 4, 1, 1}, rng, 0.5);
  auto r = gradcheck<T>({x, k1, k2, k3, head}, [&] {
    auto h = ops::leaky_relu(ops::conv2d(x, k1, Tensor64(), 2, 1), T(0.2));
    h = ops::leaky_relu(ops::conv2d(h, k2, Tensor64(), 2, 1), T(0.2));
    h = ops::leaky_relu(ops::conv2d(h, k3, Tensor64(), 2, 1), T(0.2));
    return ops::mean(ops::log_sigmoid(ops::conv2d(h, head, Tensor64(), 1, 0)));
  }, 1e-6);  // small step keeps leaky-ReLU kinks out of the stencil
  CHECK(r.relative_error < 1e-3);
}

TEST_CASE("gan losses") {
  auto zero = Tensor({2, 1, 4, 4});
  auto l = gan_losses_from_logits(zero, zero);
  CHECK(l.d_loss.item() == doctest::Approx(2 * std::log(2.0)));
  CHECK(l.g_loss.item() == doctest::Approx(std::log(2.0)));
  auto l2 = gan_losses_from_logits(Tensor::full({4}, 40.0f), Tensor::full({4}, -40.0f));
  CHECK(l2.d_loss.item() < 1e-12);

  Rng rng(16);
  auto real = random_tensor<double>({6}, rng, 2.0), fake = random_tensor<double>({6}, rng, 2.0);
  auto r = gradcheck<double>({real, fake}, [&] {
    auto a = ops::mean(ops::log_sigmoid(real));
    auto b = ops::mean(ops::log_sigmoid(ops::scale(fake, -1.0)));
    return ops::scale(ops::add(a, b), -1.0);
  });
  CHECK(r.relative_error < 1e-3);
  auto fl = gan_losses_from_logits(tensor_cast<float>(real), tensor_cast<float>(fake));
  const auto ref = gan_losses_from_logits(tensor_cast<float>(real), tensor_cast<float>(fake));
  CHECK(fl.d_loss.item() == ref.d_loss.item());
}

TEST_CASE("adaptive weight") {
  std::vector<float> g{0.3f, -0.4f, 1.2f};
  CHECK(adaptive_weight(g, g, 1e-6) == doctest::Approx(1.0).epsilon(1e-5));
  std::vector<float> unit{1.0f, 0.0f, 0.0f}, zero(3, 0.0f);
  CHECK(adaptive_weight(unit, zero, 1e-6) == 1e4);
  std::vector<float> g2{0.1f, 0.7f, -0.2f};
  std::vector<float> gs(3), g2s(3);
  for (int i = 0; i < 3; ++i) {
    gs[i] = 7.5f * g[i];
    g2s[i] = 7.5f * g2[i];
  }
  CHECK(adaptive_weight(gs, g2s, 0.0) == doctest::Approx(adaptive_weight(g, g2, 0.0)).epsilon(1e-6));
  std::vector<float> bad{NAN, 0, 0};
  CHECK_THROWS_AS(adaptive_weight(bad, g, 1e-6), NumericError);
}

TEST_CASE("adaptive weight norms agree with finite differences") {
  auto cfg = small_config();
  VqCodec codec(cfg, 17);
  PerceptualBank bank(3, 18);
  Discriminator disc(3, 4, 19);
  Rng rng(20);
  auto x = random_tensor<float>({1, 3, 16, 16}, rng, 0.5, false);
  auto& gl = codec.params().at("decoder.out.weight");

  Tape tape;
  Tensor perc, gan;
  {
    TapeScope scope(tape);
    auto f = codec.forward(x);
    perc = perceptual_loss(x, f.reconstruction, bank);
    gan = gan_losses(x, f.reconstruction, disc).g_loss;
  }
  auto gp = gradient_of(tape, perc, gl, codec.params());
  auto gg = gradient_of(tape, gan, gl, codec.params());
  auto gp2 = gradient_of(tape, perc, gl, codec.params());
  CHECK(gp == gp2);

  // Finite-difference norm estimate in the direction of the analytic gradient.
  auto directional = [&](const std::vector<float>& g, bool use_perc) {
    double n = 0;
    for (float v : g) n += double(v) * v;
    n = std::sqrt(n);
    NoGradScope ng;
    std::vector<float> saved(gl.values().begin(), gl.values().end());
    auto eval = [&](double step) {
      for (std::size_t i = 0; i < saved.size(); ++i) gl.values_mut()[i] = saved[i] + float(step * g[i] / n);
      auto f = codec.forward(x);
      return double(use_perc ? perceptual_loss(x, f.reconstruction, bank).item()
                             : gan_losses(x, f.reconstruction, disc).g_loss.item());
    };
    const double h = 1e-3;
    const double d = (eval(h) - eval(-h)) / (2 * h);
    std::copy(saved.begin(), saved.end(), gl.values_mut().begin());
    return std::make_pair(n, d);
  };
  auto [np, dp] = directional(gp, true);
  auto [ng, dg] = directional(gg, false);
  CHECK(std::abs(np - dp) / np < 1e-2);
  CHECK(std::abs(ng - dg) / ng < 1e-2);
  const double lambda = adaptive_weight(gp, gg, cfg.delta);
  CHECK(lambda == doctest::Approx(dp / (dg + cfg.delta)).epsilon(2e-2));
}

TEST_CASE("encode_video") {
  auto cfg = small_config();
  VqCodec codec(cfg, 21);
  SpriteWorldConfig sc;
  sc.height = sc.width = 16;
  sc.size_min = 3;
  sc.size_max = 4;
  auto clip = generate_clip(sc, 4);
  const auto before = codec.content_hash();
  auto grids = encode_video(clip, codec);
  CHECK(codec.content_hash() == before);
  REQUIRE(grids.size() == 12);
  std::size_t total = 0;
  for (std::size_t t = 0; t < grids.size(); ++t) {
    total += grids[t].codes.size();
    NoGradScope ng;
    auto q = quantize(codec.encode(clip.frame_batch(t, 1)), codec.codebook());
    CHECK(q.codes == grids[t].codes);
  }
  CHECK(total == 12 * 16);
  sc.height = sc.width = 32;
  CHECK_THROWS_AS(encode_video(generate_clip(sc, 1), codec), ConfigError);

  // 16x16 grids: 12 frames, 3072 codes.
  CodecConfig big = small_config();
  big.height = big.width = 64;
  VqCodec codec64(big, 0);
  sc.height = sc.width = 64;
  auto g64 = encode_video(generate_clip(sc, 2), codec64);
  std::size_t n64 = 0;
  for (const auto& g : g64) n64 += g.codes.size();
  CHECK(n64 == 3072);
}

TEST_CASE("dead codes are reseeded from encoder rows") {
  Tensor cb({3, 2}, {0, 0, 1, 1, 2, 2});
  std::vector<std::uint64_t> usage{4, 0, 1};
  std::vector<float> rows{9, 8, 7, 6};
  Rng rng(1);
  CHECK(reseed_dead_codes(cb, usage, rows, 2, rng) == 1);
  CHECK(cb.values()[0] == 0.0f);
  CHECK((cb.values()[2] == 9.0f || cb.values()[2] == 7.0f));
  CHECK(cb.values()[4] == 2.0f);
}

TEST_CASE("codec checkpoint round trip") {
  auto cfg = small_config();
  VqCodec codec(cfg, 22);
  auto bytes = encode_checkpoint(codec.to_checkpoint());
  auto restored = VqCodec::from_checkpoint(decode_checkpoint(bytes, kCodecMagic, "mem"));
  CHECK(encode_checkpoint(restored.to_checkpoint()) == bytes);
  CHECK(restored.content_hash() == codec.content_hash());
  CHECK_THROWS_AS(decode_checkpoint(bytes, kDynamicsMagic, "mem"), CheckpointMismatch);
}
