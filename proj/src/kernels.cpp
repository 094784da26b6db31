#include "lvp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lvp::kernels {

namespace {

constexpr std::size_t kColumnBlock = 256;
// Below this many multiply-adds the thread fork costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 16;

template <typename T>
void transpose_into(const T* src, std::size_t rows, std::size_t cols, std::vector<T>& dst) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// C[rows ib..ib+4) += A·B for one 4-row block, columns [jb, jb+nb).
template <typename T>
inline void block4(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t n,
                   std::size_t k, std::size_t jb, std::size_t nb) {
  T* c0 = c + jb;
  T* c1 = c0 + n;
  T* c2 = c1 + n;
  T* c3 = c2 + n;
  for (std::size_t p = 0; p < k; ++p) {
    const T a0 = a[p], a1 = a[k + p], a2 = a[2 * k + p], a3 = a[3 * k + p];
    const T* __restrict bp = b + p * n + jb;
    for (std::size_t j = 0; j < nb; ++j) {
      const T bv = bp[j];
      c0[j] += a0 * bv;
      c1[j] += a1 * bv;
      c2[j] += a2 * bv;
      c3[j] += a3 * bv;
    }
  }
}

template <typename T>
inline void block1(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t n,
                   std::size_t k, std::size_t jb, std::size_t nb) {
  T* c0 = c + jb;
  for (std::size_t p = 0; p < k; ++p) {
    const T a0 = a[p];
    const T* __restrict bp = b + p * n + jb;
    for (std::size_t j = 0; j < nb; ++j) c0[j] += a0 * bp[j];
  }
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  const std::int64_t row_blocks = static_cast<std::int64_t>((m + 3) / 4);
  const bool parallel = m * n * k >= kParallelWork && row_blocks > 1;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::int64_t rb = 0; rb < row_blocks; ++rb) {
    const std::size_t ib = static_cast<std::size_t>(rb) * 4;
    const std::size_t rows = std::min<std::size_t>(4, m - ib);
    for (std::size_t jb = 0; jb < n; jb += kColumnBlock) {
      const std::size_t nb = std::min(kColumnBlock, n - jb);
      if (rows == 4) {
        block4(a + ib * k, b, c + ib * n, n, k, jb, nb);
      } else {
        for (std::size_t r = 0; r < rows; ++r) block1(a + (ib + r) * k, b, c + (ib + r) * n, n, k, jb, nb);
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    return;
  }
  std::vector<T> a_packed, b_packed;
  if (trans_a == Trans::kYes) {
    transpose_into(a, k, m, a_packed);
    a = a_packed.data();
  }
  if (trans_b == Trans::kYes) {
    transpose_into(b, n, k, b_packed);
    b = b_packed.data();
  }
  gemm_nn(m, n, k, a, b, c, accumulate);
}

template <typename T>
void gemm_reference(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
                    const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a == Trans::kYes ? a[p * m + i] : a[i * k + p];
        const T bv = trans_b == Trans::kYes ? b[j * k + p] : b[p * n + j];
        sum += av * bv;
      }
      c[i * n + j] = sum;
    }
  }
}

template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* cols) {
  const std::size_t hw = g.out_pixels();
  const auto channels = static_cast<std::int64_t>(g.channels);
#pragma omp parallel for schedule(static) if (g.patch_size() * hw >= kParallelWork)
  for (std::int64_t ci = 0; ci < channels; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    const T* plane = image + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        T* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * hw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = static_cast<std::int64_t>(oy * g.stride + i) - static_cast<std::int64_t>(g.padding);
          T* out = row + oy * g.out_w;
          if (y < 0 || y >= static_cast<std::int64_t>(g.height)) {
            std::fill(out, out + g.out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(y) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto x = static_cast<std::int64_t>(ox * g.stride + j) - static_cast<std::int64_t>(g.padding);
            out[ox] = (x < 0 || x >= static_cast<std::int64_t>(g.width)) ? T(0) : src[x];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* image) {
  const std::size_t hw = g.out_pixels();
  const auto channels = static_cast<std::int64_t>(g.channels);
#pragma omp parallel for schedule(static) if (g.patch_size() * hw >= kParallelWork)
  for (std::int64_t ci = 0; ci < channels; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    T* plane = image + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        const T* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * hw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = static_cast<std::int64_t>(oy * g.stride + i) - static_cast<std::int64_t>(g.padding);
          if (y < 0 || y >= static_cast<std::int64_t>(g.height)) continue;
          T* dst = plane + static_cast<std::size_t>(y) * g.width;
          const T* in = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto x = static_cast<std::int64_t>(ox * g.stride + j) - static_cast<std::int64_t>(g.padding);
            if (x >= 0 && x < static_cast<std::int64_t>(g.width)) dst[x] += in[ox];
          }
        }
      }
    }
  }
}

namespace {

// Output row i of head h; base holds rows 0..i of [len × 3·width] qkv.
template <typename T>
void attention_head_row(const T* base, std::size_t i, std::size_t h, std::size_t width,
                        std::size_t head_dim, T* o, T* p) {
  const std::size_t stride = 3 * width;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  const T* q = base + i * stride + h * head_dim;
  T max_score = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j <= i; ++j) {
    const T* kj = base + j * stride + width + h * head_dim;
    T s = 0;
    for (std::size_t d = 0; d < head_dim; ++d) s += q[d] * kj[d];
    s *= scale;
    p[j] = s;
    max_score = std::max(max_score, s);
  }
  T total = 0;
  for (std::size_t j = 0; j <= i; ++j) {
    p[j] = std::exp(p[j] - max_score);
    total += p[j];
  }
  const T inv = T(1) / total;
  for (std::size_t j = 0; j <= i; ++j) p[j] *= inv;
  std::fill(o, o + head_dim, T(0));
  for (std::size_t j = 0; j <= i; ++j) {
    const T* vj = base + j * stride + 2 * width + h * head_dim;
    const T pj = p[j];
    for (std::size_t d = 0; d < head_dim; ++d) o[d] += pj * vj[d];
  }
}

// Whole-head forward with keys transposed so the score loop runs across
// positions; every score accumulates over d in the same order as
// attention_head_row, so rows match it bit for bit.
template <typename T>
void attention_head_forward(const T* qkv, std::size_t b, std::size_t h, std::size_t len,
                            std::size_t width, std::size_t head_dim, T* out, T* probs) {
  const std::size_t stride = 3 * width;
  const T* base = qkv + b * len * stride;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  std::vector<T> kt(head_dim * len);
  for (std::size_t j = 0; j < len; ++j) {
    const T* kj = base + j * stride + width + h * head_dim;
    for (std::size_t d = 0; d < head_dim; ++d) kt[d * len + j] = kj[d];
  }
  for (std::size_t i = 0; i < len; ++i) {
    const T* q = base + i * stride + h * head_dim;
    T* p = probs + triangle_size(i);
    std::fill(p, p + i + 1, T(0));
    for (std::size_t d = 0; d < head_dim; ++d) {
      const T qd = q[d];
      const T* __restrict kd = kt.data() + d * len;
      for (std::size_t j = 0; j <= i; ++j) p[j] += qd * kd[j];
    }
    T max_score = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j <= i; ++j) {
      p[j] *= scale;
      max_score = std::max(max_score, p[j]);
    }
    T total = 0;
    for (std::size_t j = 0; j <= i; ++j) {
      p[j] = std::exp(p[j] - max_score);
      total += p[j];
    }
    const T inv = T(1) / total;
    for (std::size_t j = 0; j <= i; ++j) p[j] *= inv;
    T* o = out + (b * len + i) * width + h * head_dim;
    std::fill(o, o + head_dim, T(0));
    for (std::size_t j = 0; j <= i; ++j) {
      const T* vj = base + j * stride + 2 * width + h * head_dim;
      const T pj = p[j];
      for (std::size_t d = 0; d < head_dim; ++d) o[d] += pj * vj[d];
    }
  }
}

}  // namespace

template <typename T>
void causal_attention_forward(const T* qkv, std::size_t batch, std::size_t len, std::size_t width,
                              std::size_t heads, T* out, T* probs) {
  const std::size_t head_dim = width / heads;
  const std::size_t tri = triangle_size(len);
  const auto pairs = static_cast<std::int64_t>(batch * heads);
#pragma omp parallel for schedule(static) if (pairs > 1 && tri * head_dim >= kParallelWork / 4)
  for (std::int64_t bh = 0; bh < pairs; ++bh) {
    const auto b = static_cast<std::size_t>(bh) / heads;
    const auto h = static_cast<std::size_t>(bh) % heads;
    attention_head_forward(qkv, b, h, len, width, head_dim, out,
                           probs + static_cast<std::size_t>(bh) * tri);
  }
}

template <typename T>
void causal_attention_row(const T* qkv, std::size_t i, std::size_t width, std::size_t heads, T* out) {
  const std::size_t head_dim = width / heads;
  std::vector<T> p(i + 1);
  for (std::size_t h = 0; h < heads; ++h) attention_head_row(qkv, i, h, width, head_dim, out + h * head_dim, p.data());
}

template <typename T>
void causal_attention_forward_reference(const T* qkv, std::size_t batch, std::size_t len,
                                        std::size_t width, std::size_t heads, T* out, T* probs) {
  const std::size_t head_dim = width / heads;
  const std::size_t tri = triangle_size(len);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      attention_head_forward(qkv, b, h, len, width, head_dim, out, probs + (b * heads + h) * tri);
}

template <typename T>
void causal_attention_backward(const T* qkv, const T* probs, const T* dout, std::size_t batch,
                               std::size_t len, std::size_t width, std::size_t heads, T* dqkv) {
  const std::size_t head_dim = width / heads;
  const std::size_t stride = 3 * width;
  const std::size_t tri = triangle_size(len);
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  const auto pairs = static_cast<std::int64_t>(batch * heads);
#pragma omp parallel for schedule(static) if (pairs > 1 && tri * head_dim >= kParallelWork / 4)
  for (std::int64_t bh = 0; bh < pairs; ++bh) {
    const auto b = static_cast<std::size_t>(bh) / heads;
    const auto h = static_cast<std::size_t>(bh) % heads;
    const T* base = qkv + b * len * stride;
    T* dbase = dqkv + b * len * stride;
    const T* pb = probs + static_cast<std::size_t>(bh) * tri;
    std::vector<T> dp(len);
    for (std::size_t i = 0; i < len; ++i) {
      const T* p = pb + triangle_size(i);
      const T* g = dout + (b * len + i) * width + h * head_dim;
      T weighted = 0;
      for (std::size_t j = 0; j <= i; ++j) {
        const T* vj = base + j * stride + 2 * width + h * head_dim;
        T* dvj = dbase + j * stride + 2 * width + h * head_dim;
        T s = 0;
        for (std::size_t d = 0; d < head_dim; ++d) {
          s += g[d] * vj[d];
          dvj[d] += p[j] * g[d];
        }
        dp[j] = s;
        weighted += p[j] * s;
      }
      const T* q = base + i * stride + h * head_dim;
      T* dq = dbase + i * stride + h * head_dim;
      for (std::size_t j = 0; j <= i; ++j) {
        const T ds = p[j] * (dp[j] - weighted) * scale;
        const T* kj = base + j * stride + width + h * head_dim;
        T* dkj = dbase + j * stride + width + h * head_dim;
        for (std::size_t d = 0; d < head_dim; ++d) {
          dq[d] += ds * kj[d];
          dkj[d] += ds * q[d];
        }
      }
    }
  }
}

std::size_t nearest_code(const float* vec, const float* codebook, std::size_t count,
                         std::size_t dim) {
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < count; ++c) {
    const float* e = codebook + c * dim;
    double dist = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = static_cast<double>(vec[d]) - static_cast<double>(e[d]);
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = c;
    }
  }
  return best;
}

void nearest_codes(const float* rows, std::size_t n, const float* codebook, std::size_t count,
                   std::size_t dim, int* out) {
  const auto total = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static) if (n * count * dim >= kParallelWork)
  for (std::int64_t i = 0; i < total; ++i) {
    out[i] = static_cast<int>(nearest_code(rows + static_cast<std::size_t>(i) * dim, codebook, count, dim));
  }
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

#define LVP_INSTANTIATE_KERNELS(T)                                                               \
  template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, const T*, const T*, \
                        T*, bool);                                                               \
  template void gemm_reference<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, const T*, \
                                  const T*, T*, bool);                                           \
  template void im2col<T>(const ConvGeometry&, const T*, T*);                                   \
  template void col2im<T>(const ConvGeometry&, const T*, T*);                                   \
  template void causal_attention_forward<T>(const T*, std::size_t, std::size_t, std::size_t,    \
                                            std::size_t, T*, T*);                               \
  template void causal_attention_row<T>(const T*, std::size_t, std::size_t, std::size_t, T*);    \
  template void causal_attention_forward_reference<T>(const T*, std::size_t, std::size_t,       \
                                                      std::size_t, std::size_t, T*, T*);        \
  template void causal_attention_backward<T>(const T*, const T*, const T*, std::size_t,         \
                                             std::size_t, std::size_t, std::size_t, T*);

LVP_INSTANTIATE_KERNELS(float)
LVP_INSTANTIATE_KERNELS(double)

}  // namespace lvp::kernels
