#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "lvp/kernels.hpp"
#include "lvp/rng.hpp"

using namespace lvp;
using namespace lvp::kernels;

namespace {

double seconds(const std::function<void()>& fn, int reps) {
  fn();
  const auto start = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn();
  const std::chrono::duration<double> d = std::chrono::steady_clock::now() - start;
  return d.count() / reps;
}

std::vector<float> random_vector(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

void report(const char* name, double serial, double parallel, double flops, bool same) {
  std::printf("%-34s serial %9.3f ms  parallel %9.3f ms  %7.2f GFLOP/s  speedup %5.2fx  %s\n", name, serial * 1e3,
              parallel * 1e3, flops / parallel * 1e-9, serial / parallel, same ? "bit-equal" : "MISMATCH");
}

void bench_gemm(std::size_t m, std::size_t n, std::size_t k, Rng& rng) {
  const auto a = random_vector(m * k, rng), b = random_vector(k * n, rng);
  std::vector<float> c1(m * n), c2(m * n);
  const int reps = std::max<int>(1, static_cast<int>(2e8 / double(m * n * k)));
  const double ts = seconds([&] { gemm_reference(Trans::kNo, Trans::kNo, m, n, k, a.data(), b.data(), c1.data(), false); }, reps);
  const double tp = seconds([&] { gemm(Trans::kNo, Trans::kNo, m, n, k, a.data(), b.data(), c2.data(), false); }, reps);
  char name[64];
  std::snprintf(name, sizeof name, "gemm %zux%zux%zu", m, n, k);
  report(name, ts, tp, 2.0 * double(m * n * k), std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(float)) == 0);
}

void bench_conv(std::size_t channels, std::size_t size, std::size_t out_channels, Rng& rng) {
  ConvGeometry g{channels, size, size, 3, 3, 1, 1, size, size};
  const auto image = random_vector(channels * size * size, rng);
  const auto weight = random_vector(out_channels * g.patch_size(), rng);
  std::vector<float> cols(g.patch_size() * g.out_pixels()), o1(out_channels * g.out_pixels()), o2(o1.size());
  auto run = [&](bool reference, std::vector<float>& out) {
    im2col(g, image.data(), cols.data());
    if (reference) {
      gemm_reference(Trans::kNo, Trans::kNo, out_channels, g.out_pixels(), g.patch_size(), weight.data(), cols.data(),
                     out.data(), false);
    } else {
      gemm(Trans::kNo, Trans::kNo, out_channels, g.out_pixels(), g.patch_size(), weight.data(), cols.data(), out.data(),
           false);
    }
  };
  const double ts = seconds([&] { run(true, o1); }, 20);
  const double tp = seconds([&] { run(false, o2); }, 20);
  char name[64];
  std::snprintf(name, sizeof name, "conv3x3 %zu->%zu @%zu", channels, out_channels, size);
  report(name, ts, tp, 2.0 * double(out_channels * g.out_pixels() * g.patch_size()),
         std::memcmp(o1.data(), o2.data(), o1.size() * sizeof(float)) == 0);
}

void bench_attention(std::size_t batch, std::size_t len, std::size_t width, std::size_t heads, Rng& rng) {
  const auto qkv = random_vector(batch * len * 3 * width, rng);
  std::vector<float> o1(batch * len * width), o2(o1.size()), p1(batch * heads * triangle_size(len)), p2(p1.size());
  const double ts = seconds([&] { causal_attention_forward_reference(qkv.data(), batch, len, width, heads, o1.data(), p1.data()); }, 20);
  const double tp = seconds([&] { causal_attention_forward(qkv.data(), batch, len, width, heads, o2.data(), p2.data()); }, 20);
  char name[64];
  std::snprintf(name, sizeof name, "attention b%zu len%zu d%zu h%zu", batch, len, width, heads);
  report(name, ts, tp, 4.0 * double(batch * triangle_size(len) * width),
         std::memcmp(o1.data(), o2.data(), o1.size() * sizeof(float)) == 0);
}

void bench_nearest(std::size_t n, std::size_t count, std::size_t dim, Rng& rng) {
  const auto rows = random_vector(n * dim, rng), codebook = random_vector(count * dim, rng);
  std::vector<int> c1(n), c2(n);
  const double ts = seconds([&] {
    for (std::size_t i = 0; i < n; ++i) c1[i] = static_cast<int>(nearest_code(rows.data() + i * dim, codebook.data(), count, dim));
  }, 10);
  const double tp = seconds([&] { nearest_codes(rows.data(), n, codebook.data(), count, dim, c2.data()); }, 10);
  char name[64];
  std::snprintf(name, sizeof name, "nearest_codes n%zu K%zu dim%zu", n, count, dim);
  report(name, ts, tp, 3.0 * double(n * count * dim), c1 == c2);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", max_threads());
  Rng rng(1);
  bench_gemm(1536, 192, 64, rng);
  bench_gemm(1536, 64, 64, rng);
  bench_gemm(1536, 256, 64, rng);
  bench_gemm(256, 256, 256, rng);
  bench_conv(16, 32, 32, rng);
  bench_conv(64, 8, 64, rng);
  bench_attention(8, 192, 64, 4, rng);
  bench_attention(1, 768, 64, 4, rng);
  bench_nearest(4096, 256, 16, rng);
  return 0;
}
