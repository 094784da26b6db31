#pragma once

#include <cstddef>

// Dense numeric kernels. Each parallel kernel has a serial reference kept for
// tests and benchmarks; both accumulate every output element in the same
// order, so results agree bit for bit at any thread count.
namespace lvp::kernels {

enum class Trans { kNo, kYes };

// C[M×N] (+)= op(A) · op(B), all matrices dense row-major.
// op(A) is M×K: A is stored M×K, or K×M when transposed. Likewise op(B) is K×N.
template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

template <typename T>
void gemm_reference(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
                    const T* a, const T* b, T* c, bool accumulate);

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel_h, kernel_w;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch_size() const { return channels * kernel_h * kernel_w; }
  std::size_t out_pixels() const { return out_h * out_w; }
};

// cols[(c·kh + i)·kw + j][oy·out_w + ox] = image[c][oy·s − p + i][ox·s − p + j] (zero outside).
template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* cols);

// Adjoint of im2col: image += scatter(cols).
template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* image);

// Causal multi-head attention over qkv rows laid out [batch·len × 3·width]
// (queries, keys, values side by side; heads split each block evenly).
// probs receives the lower-triangular attention rows per (batch, head):
// batch·heads blocks of len·(len+1)/2 entries.
template <typename T>
void causal_attention_forward(const T* qkv, std::size_t batch, std::size_t len, std::size_t width,
                              std::size_t heads, T* out, T* probs);

template <typename T>
void causal_attention_forward_reference(const T* qkv, std::size_t batch, std::size_t len,
                                        std::size_t width, std::size_t heads, T* out, T* probs);

// Accumulates into dqkv given the upstream gradient of out and the saved probs.
template <typename T>
void causal_attention_backward(const T* qkv, const T* probs, const T* dout, std::size_t batch,
                               std::size_t len, std::size_t width, std::size_t heads, T* dqkv);

// Attention output row i alone, from qkv rows 0..i ([(i+1) × 3·width]).
// Same arithmetic as row i of causal_attention_forward.
template <typename T>
void causal_attention_row(const T* qkv, std::size_t i, std::size_t width, std::size_t heads, T* out);

inline std::size_t triangle_size(std::size_t len) { return len * (len + 1) / 2; }

// Index of the nearest row of codebook[count×dim] to vec by squared Euclidean
// distance accumulated in double; ties resolve to the lowest index.
std::size_t nearest_code(const float* vec, const float* codebook, std::size_t count,
                         std::size_t dim);

// nearest_code for each of n rows; parallel over rows.
void nearest_codes(const float* rows, std::size_t n, const float* codebook, std::size_t count,
                   std::size_t dim, int* out);

int max_threads();

}  // namespace lvp::kernels
