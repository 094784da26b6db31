#include "lvp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <memory>
#include <numbers>
#include <string>

#include "lvp/kernels.hpp"

namespace lvp::ops {

namespace {

using kernels::Trans;

template <typename T, typename F>
void record(TensorT<T>& out, std::initializer_list<const TensorT<T>*> inputs, F&& fn) {
  auto* tape = BasicTape<T>::active();
  if (tape == nullptr) return;
  bool needed = false;
  for (const auto* in : inputs) needed = needed || (in->defined() && in->requires_grad());
  if (!needed) return;
  out.mark_interior();
  tape->record(out, std::forward<F>(fn));
}

// Gradient buffer of an input, or empty when it does not require one.
template <typename T>
std::span<T> input_grad(const TensorT<T>& t) {
  if (!t.defined() || !t.requires_grad()) return {};
  TensorT<T> handle = t;  // shares storage
  handle.set_touched(true);
  return handle.grad_mut();
}

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename T>
void require_finite(std::span<const T> v, const char* op) {
  for (T x : v) {
    if (std::isnan(x)) throw NumericError(std::string(op) + ": NaN input");
  }
}

// Unary elementwise op with derivative computed from (input, output).
template <typename T, typename Fwd, typename Deriv>
TensorT<T> unary(const TensorT<T>& x, Fwd fwd, Deriv deriv) {
  TensorT<T> out(x.shape());
  auto xv = x.values();
  auto ov = out.values_mut();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
  record(out, {&x}, [x, out, deriv]() mutable {
    auto gx = input_grad(x);
    if (gx.empty()) return;
    auto g = out.grad();
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], ov[i]);
  });
  return out;
}

}  // namespace

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  require_same_shape(a, b, "add");
  TensorT<T> out(a.shape());
  auto o = out.values_mut();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  record(out, {&a, &b}, [a, b, out]() mutable {
    auto g = out.grad();
    if (auto ga = input_grad(a); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (auto gb = input_grad(b); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
  return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  require_same_shape(a, b, "sub");
  TensorT<T> out(a.shape());
  auto o = out.values_mut();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
  record(out, {&a, &b}, [a, b, out]() mutable {
    auto g = out.grad();
    if (auto ga = input_grad(a); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (auto gb = input_grad(b); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
  return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  require_same_shape(a, b, "mul");
  TensorT<T> out(a.shape());
  auto o = out.values_mut();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
  record(out, {&a, &b}, [a, b, out]() mutable {
    auto g = out.grad();
    auto av = a.values();
    auto bv = b.values();
    if (auto ga = input_grad(a); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    if (auto gb = input_grad(b); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
  return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T factor) {
  return unary(a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
TensorT<T> add_bias(const TensorT<T>& x, const TensorT<T>& bias) {
  const std::size_t n = bias.numel();
  if (x.rank() == 0 || bias.rank() != 1 || x.shape().back() != n) {
    throw DimensionError("add_bias: trailing axis of " + shape_string(x.shape()) +
                         " does not match bias " + shape_string(bias.shape()));
  }
  TensorT<T> out(x.shape());
  auto o = out.values_mut();
  auto xv = x.values();
  auto bv = bias.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] + bv[i % n];
  record(out, {&x, &bias}, [x, bias, out, n]() mutable {
    auto g = out.grad();
    if (auto gx = input_grad(x); !gx.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    if (auto gb = input_grad(bias); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
  });
  return out;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); },
               [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T slope) {
  return unary(x, [slope](T v) { return v > T(0) ? v : slope * v; },
               [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = static_cast<T>(0.044715);
  return unary(
      x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v))); },
      [](T v, T) {
        const T t = std::tanh(c * (v + a * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
      });
}

template <typename T>
TensorT<T> tanh(const TensorT<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
TensorT<T> log_sigmoid(const TensorT<T>& x) {
  return unary(
      x, [](T v) { return std::min(v, T(0)) - std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) {
        // σ(−v)
        return v >= T(0) ? std::exp(-v) / (T(1) + std::exp(-v)) : T(1) / (T(1) + std::exp(v));
      });
}

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta, T eps) {
  const std::size_t n = gamma.numel();
  if (x.rank() == 0 || x.shape().back() != n || beta.numel() != n) {
    throw DimensionError("layer_norm: " + shape_string(x.shape()) + " with gain " +
                         shape_string(gamma.shape()) + " and shift " + shape_string(beta.shape()));
  }
  const std::size_t rows = x.numel() / n;
  TensorT<T> out(x.shape());
  auto stats = std::make_shared<std::vector<T>>(2 * rows);  // mean, 1/std per row
  auto xv = x.values();
  auto o = out.values_mut();
  auto gv = gamma.values();
  auto bv = beta.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * n;
    T mu = 0;
    for (std::size_t i = 0; i < n; ++i) mu += row[i];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(n);
    const T rstd = T(1) / std::sqrt(var + eps);
    (*stats)[2 * r] = mu;
    (*stats)[2 * r + 1] = rstd;
    for (std::size_t i = 0; i < n; ++i) o[r * n + i] = (row[i] - mu) * rstd * gv[i] + bv[i];
  }
  record(out, {&x, &gamma, &beta}, [x, gamma, beta, out, stats, n, rows]() mutable {
    auto g = out.grad();
    auto xv = x.values();
    auto gv = gamma.values();
    auto gx = input_grad(x);
    auto gg = input_grad(gamma);
    auto gb = input_grad(beta);
    std::vector<T> xhat(n), dxhat(n);
    for (std::size_t r = 0; r < rows; ++r) {
      const T mu = (*stats)[2 * r];
      const T rstd = (*stats)[2 * r + 1];
      const T* gr = g.data() + r * n;
      T mean_d = 0, mean_dx = 0;
      for (std::size_t i = 0; i < n; ++i) {
        xhat[i] = (xv[r * n + i] - mu) * rstd;
        dxhat[i] = gr[i] * gv[i];
        mean_d += dxhat[i];
        mean_dx += dxhat[i] * xhat[i];
        if (!gg.empty()) gg[i] += gr[i] * xhat[i];
        if (!gb.empty()) gb[i] += gr[i];
      }
      if (gx.empty()) continue;
      mean_d /= static_cast<T>(n);
      mean_dx /= static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += rstd * (dxhat[i] - mean_d - xhat[i] * mean_dx);
    }
  });
  return out;
}

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  TensorT<T> out(Shape{m, n});
  kernels::gemm(Trans::kNo, Trans::kNo, m, n, k, a.data(), b.data(), out.data_mut(), false);
  record(out, {&a, &b}, [a, b, out, m, n, k]() mutable {
    const T* g = out.grad().data();
    if (auto ga = input_grad(a); !ga.empty())
      kernels::gemm(Trans::kNo, Trans::kYes, m, k, n, g, b.data(), ga.data(), true);
    if (auto gb = input_grad(b); !gb.empty())
      kernels::gemm(Trans::kYes, Trans::kNo, k, n, m, a.data(), g, gb.data(), true);
  });
  return out;
}

template <typename T>
TensorT<T> embedding(const TensorT<T>& table, std::span<const int> indices) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be 2-D, got " + shape_string(table.shape()));
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  for (int idx : indices) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= vocab) {
      throw IndexError("embedding: index " + std::to_string(idx) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
  }
  TensorT<T> out(Shape{indices.size(), width});
  auto tv = table.values();
  auto o = out.values_mut();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(tv.data() + static_cast<std::size_t>(indices[r]) * width, width, o.data() + r * width);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  record(out, {&table}, [table, out, idx = std::move(idx), width]() mutable {
    auto gt = input_grad(table);
    auto g = out.grad();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      T* dst = gt.data() + static_cast<std::size_t>(idx[r]) * width;
      const T* src = g.data() + r * width;
      for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
    }
  });
  return out;
}

template <typename T>
TensorT<T> gather_rows(const TensorT<T>& x, std::span<const int> rows) {
  if (x.rank() != 2) throw DimensionError("gather_rows: expected 2-D input, got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0), width = x.dim(1);
  for (int r : rows) {
    if (r < 0 || static_cast<std::size_t>(r) >= n) {
      throw IndexError("gather_rows: row " + std::to_string(r) + " outside [0, " + std::to_string(n) + ")");
    }
  }
  TensorT<T> out(Shape{rows.size(), width});
  auto xv = x.values();
  auto o = out.values_mut();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(xv.data() + static_cast<std::size_t>(rows[i]) * width, width, o.data() + i * width);
  std::vector<int> idx(rows.begin(), rows.end());
  record(out, {&x}, [x, out, idx = std::move(idx), width]() mutable {
    auto gx = input_grad(x);
    auto g = out.grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      T* dst = gx.data() + static_cast<std::size_t>(idx[i]) * width;
      const T* src = g.data() + i * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
    }
  });
  return out;
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  TensorT<T> out(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
  record(out, {&x}, [x, out]() mutable {
    auto gx = input_grad(x);
    auto g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

namespace {

// Source offset in `in` for every element of the permuted output, in order.
std::vector<std::size_t> permutation_offsets(const Shape& in_shape, std::span<const std::size_t> axes) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[axes[i]];
    strides[i] = in_strides[axes[i]];
  }
  const std::size_t total = shape_numel(in_shape);
  std::vector<std::size_t> offsets(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t lin = 0; lin < total; ++lin) {
    offsets[lin] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < out_shape[d]) {
        offset += strides[d];
        break;
      }
      offset -= strides[d] * (out_shape[d] - 1);
      counter[d] = 0;
    }
  }
  return offsets;
}

}  // namespace

template <typename T>
TensorT<T> permute(const TensorT<T>& x, std::span<const std::size_t> axes) {
  const std::size_t rank = x.rank();
  std::vector<bool> seen(rank, false);
  bool valid = axes.size() == rank;
  for (std::size_t a : axes) {
    if (!valid || a >= rank || seen[a]) {
      valid = false;
      break;
    }
    seen[a] = true;
  }
  if (!valid) throw DimensionError("permute: invalid axis order for " + shape_string(x.shape()));
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.dim(axes[i]);
  auto offsets = std::make_shared<std::vector<std::size_t>>(permutation_offsets(x.shape(), axes));
  TensorT<T> out(out_shape);
  auto xv = x.values();
  auto o = out.values_mut();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[(*offsets)[i]];
  record(out, {&x}, [x, out, offsets]() mutable {
    auto gx = input_grad(x);
    auto g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*offsets)[i]] += g[i];
  });
  return out;
}

template <typename T>
TensorT<T> transpose(const TensorT<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose: expected 2-D input, got " + shape_string(x.shape()));
  const std::size_t axes[2] = {1, 0};
  return permute(x, std::span<const std::size_t>(axes));
}

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
  T total = 0;
  for (T v : x.values()) total += v;
  auto out = TensorT<T>::scalar(total);
  record(out, {&x}, [x, out]() mutable {
    auto gx = input_grad(x);
    const T g = out.grad()[0];
    for (auto& v : gx) v += g;
  });
  return out;
}

template <typename T>
TensorT<T> mean(const TensorT<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  T total = 0;
  for (T v : x.values()) total += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  auto out = TensorT<T>::scalar(total * inv);
  record(out, {&x}, [x, out, inv]() mutable {
    auto gx = input_grad(x);
    const T g = out.grad()[0] * inv;
    for (auto& v : gx) v += g;
  });
  return out;
}

template <typename T>
TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b) {
  auto diff = sub(a, b);
  return mean(mul(diff, diff));
}

template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis) {
  const int rank = static_cast<int>(x.rank());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw DimensionError("softmax: axis out of range for " + shape_string(x.shape()));
  require_finite(x.values(), "softmax");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(static_cast<std::size_t>(i));
  for (int i = axis + 1; i < rank; ++i) inner *= x.dim(static_cast<std::size_t>(i));
  const std::size_t n = x.dim(static_cast<std::size_t>(axis));
  TensorT<T> out(x.shape());
  auto xv = x.values();
  auto o = out.values_mut();
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t c = 0; c < inner; ++c) {
      const std::size_t base = a * n * inner + c;
      T mx = xv[base];
      for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, xv[base + i * inner]);
      T total = 0;
      for (std::size_t i = 0; i < n; ++i) {
        o[base + i * inner] = std::exp(xv[base + i * inner] - mx);
        total += o[base + i * inner];
      }
      for (std::size_t i = 0; i < n; ++i) o[base + i * inner] /= total;
    }
  }
  record(out, {&x}, [x, out, outer, inner, n]() mutable {
    auto gx = input_grad(x);
    auto g = out.grad();
    auto y = out.values();
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t c = 0; c < inner; ++c) {
        const std::size_t base = a * n * inner + c;
        T dot = 0;
        for (std::size_t i = 0; i < n; ++i) dot += y[base + i * inner] * g[base + i * inner];
        for (std::size_t i = 0; i < n; ++i)
          gx[base + i * inner] += y[base + i * inner] * (g[base + i * inner] - dot);
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, std::span<const int> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size() || targets.empty()) {
    throw DimensionError("cross_entropy: logits " + shape_string(logits.shape()) + " with " +
                         std::to_string(targets.size()) + " targets");
  }
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
  }
  require_finite(logits.values(), "cross_entropy");
  auto probs = std::make_shared<std::vector<T>>(rows * vocab);
  auto lv = logits.values();
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = lv.data() + r * vocab;
    T* p = probs->data() + r * vocab;
    const T mx = *std::max_element(row, row + vocab);
    T z = 0;
    for (std::size_t i = 0; i < vocab; ++i) {
      p[i] = std::exp(row[i] - mx);
      z += p[i];
    }
    for (std::size_t i = 0; i < vocab; ++i) p[i] /= z;
    total += std::log(z) + mx - row[targets[r]];
  }
  auto out = TensorT<T>::scalar(total / static_cast<T>(rows));
  std::vector<int> tgt(targets.begin(), targets.end());
  record(out, {&logits}, [logits, out, probs, tgt = std::move(tgt), rows, vocab]() mutable {
    auto gl = input_grad(logits);
    const T g = out.grad()[0] / static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < vocab; ++i) gl[r * vocab + i] += g * (*probs)[r * vocab + i];
      gl[r * vocab + static_cast<std::size_t>(tgt[r])] -= g;
    }
  });
  return out;
}

template <typename T>
TensorT<T> stop_gradient(const TensorT<T>& x) {
  return x.detach();
}

template <typename T>
TensorT<T> straight_through(const TensorT<T>& encoded, const TensorT<T>& quantized) {
  require_same_shape(encoded, quantized, "straight_through");
  TensorT<T> out(quantized.shape(), std::vector<T>(quantized.values().begin(), quantized.values().end()));
  record(out, {&encoded}, [encoded, out]() mutable {
    auto ge = input_grad(encoded);
    auto g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ge[i] += g[i];
  });
  return out;
}

namespace {

std::size_t conv_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding,
                        const char* axis) {
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (in + 2 * padding < kernel || (in + 2 * padding - kernel) % stride != 0) {
    throw ConfigError(std::string("conv2d: non-integral output ") + axis + " for input " +
                      std::to_string(in) + ", kernel " + std::to_string(kernel) + ", stride " +
                      std::to_string(stride) + ", padding " + std::to_string(padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

template <typename T>
void check_conv_operands(const TensorT<T>& input, const TensorT<T>& kernel, const TensorT<T>& bias,
                         std::size_t in_channels, std::size_t bias_len, const char* op) {
  if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != in_channels) {
    throw DimensionError(std::string(op) + ": input " + shape_string(input.shape()) +
                         " incompatible with kernel " + shape_string(kernel.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.numel() != bias_len)) {
    throw DimensionError(std::string(op) + ": bias " + shape_string(bias.shape()) + " expected [" +
                         std::to_string(bias_len) + "]");
  }
}

}  // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, const TensorT<T>& bias,
                  std::size_t stride, std::size_t padding) {
  check_conv_operands(input, kernel, bias, kernel.rank() == 4 ? kernel.dim(1) : 0,
                      kernel.rank() == 4 ? kernel.dim(0) : 0, "conv2d");
  const std::size_t batch = input.dim(0), out_ch = kernel.dim(0);
  kernels::ConvGeometry geo{input.dim(1), input.dim(2), input.dim(3), kernel.dim(2), kernel.dim(3),
                            stride, padding, 0, 0};
  geo.out_h = conv_extent(geo.height, geo.kernel_h, stride, padding, "height");
  geo.out_w = conv_extent(geo.width, geo.kernel_w, stride, padding, "width");
  const std::size_t in_size = geo.channels * geo.height * geo.width;
  const std::size_t hw = geo.out_pixels();
  const std::size_t patch = geo.patch_size();

  TensorT<T> out(Shape{batch, out_ch, geo.out_h, geo.out_w});
  std::vector<T> cols(patch * hw);
  for (std::size_t b = 0; b < batch; ++b) {
    kernels::im2col(geo, input.data() + b * in_size, cols.data());
    T* ob = out.data_mut() + b * out_ch * hw;
    kernels::gemm(Trans::kNo, Trans::kNo, out_ch, hw, patch, kernel.data(), cols.data(), ob, false);
    if (bias.defined()) {
      for (std::size_t o = 0; o < out_ch; ++o)
        for (std::size_t i = 0; i < hw; ++i) ob[o * hw + i] += bias.data()[o];
    }
  }
  record(out, {&input, &kernel, &bias}, [input, kernel, bias, out, geo, batch, out_ch]() mutable {
    const std::size_t in_size = geo.channels * geo.height * geo.width;
    const std::size_t hw = geo.out_pixels();
    const std::size_t patch = geo.patch_size();
    auto gi = input_grad(input);
    auto gk = input_grad(kernel);
    auto gb = input_grad(bias);
    const T* g = out.grad().data();
    std::vector<T> cols(patch * hw);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* gout = g + b * out_ch * hw;
      if (!gk.empty()) {
        kernels::im2col(geo, input.data() + b * in_size, cols.data());
        kernels::gemm(Trans::kNo, Trans::kYes, out_ch, patch, hw, gout, cols.data(), gk.data(), true);
      }
      if (!gi.empty()) {
        kernels::gemm(Trans::kYes, Trans::kNo, patch, hw, out_ch, kernel.data(), gout, cols.data(), false);
        kernels::col2im(geo, cols.data(), gi.data() + b * in_size);
      }
      if (!gb.empty()) {
        for (std::size_t o = 0; o < out_ch; ++o)
          for (std::size_t i = 0; i < hw; ++i) gb[o] += gout[o * hw + i];
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> conv_transpose2d(const TensorT<T>& input, const TensorT<T>& kernel, const TensorT<T>& bias,
                            std::size_t stride, std::size_t padding) {
  check_conv_operands(input, kernel, bias, kernel.rank() == 4 ? kernel.dim(0) : 0,
                      kernel.rank() == 4 ? kernel.dim(1) : 0, "conv_transpose2d");
  if (stride == 0) throw ConfigError("conv_transpose2d: stride must be positive");
  const std::size_t batch = input.dim(0), in_ch = kernel.dim(0), out_ch = kernel.dim(1);
  const std::size_t in_h = input.dim(2), in_w = input.dim(3);
  const std::size_t kh = kernel.dim(2), kw = kernel.dim(3);
  const auto extent = [&](std::size_t n, std::size_t k, const char* axis) {
    const std::size_t span = (n - 1) * stride + k;
    if (n == 0 || span <= 2 * padding) {
      throw ConfigError(std::string("conv_transpose2d: non-positive output ") + axis);
    }
    return span - 2 * padding;
  };
  kernels::ConvGeometry geo{out_ch, extent(in_h, kh, "height"), extent(in_w, kw, "width"), kh, kw,
                            stride, padding, in_h, in_w};
  const std::size_t out_size = out_ch * geo.height * geo.width;
  const std::size_t hw = geo.out_pixels();
  const std::size_t patch = geo.patch_size();

  TensorT<T> out(Shape{batch, out_ch, geo.height, geo.width});
  std::vector<T> cols(patch * hw);
  for (std::size_t b = 0; b < batch; ++b) {
    kernels::gemm(Trans::kYes, Trans::kNo, patch, hw, in_ch, kernel.data(),
                  input.data() + b * in_ch * hw, cols.data(), false);
    T* ob = out.data_mut() + b * out_size;
    kernels::col2im(geo, cols.data(), ob);
    if (bias.defined()) {
      const std::size_t plane = geo.height * geo.width;
      for (std::size_t c = 0; c < out_ch; ++c)
        for (std::size_t i = 0; i < plane; ++i) ob[c * plane + i] += bias.data()[c];
    }
  }
  record(out, {&input, &kernel, &bias}, [input, kernel, bias, out, geo, batch, in_ch]() mutable {
    const std::size_t out_ch = geo.channels;
    const std::size_t plane = geo.height * geo.width;
    const std::size_t hw = geo.out_pixels();
    const std::size_t patch = geo.patch_size();
    auto gi = input_grad(input);
    auto gk = input_grad(kernel);
    auto gb = input_grad(bias);
    const T* g = out.grad().data();
    std::vector<T> cols(patch * hw);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* gout = g + b * out_ch * plane;
      if (!gi.empty() || !gk.empty()) kernels::im2col(geo, gout, cols.data());
      if (!gi.empty())
        kernels::gemm(Trans::kNo, Trans::kNo, in_ch, hw, patch, kernel.data(), cols.data(),
                      gi.data() + b * in_ch * hw, true);
      if (!gk.empty())
        kernels::gemm(Trans::kNo, Trans::kYes, in_ch, patch, hw, input.data() + b * in_ch * hw,
                      cols.data(), gk.data(), true);
      if (!gb.empty()) {
        for (std::size_t c = 0; c < out_ch; ++c)
          for (std::size_t i = 0; i < plane; ++i) gb[c] += gout[c * plane + i];
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> channel_normalize(const TensorT<T>& x, T eps) {
  if (x.rank() < 2) throw DimensionError("channel_normalize: expected rank >= 2, got " + shape_string(x.shape()));
  const std::size_t outer = x.dim(0), channels = x.dim(1);
  const std::size_t inner = x.numel() / (outer * channels);
  auto norms = std::make_shared<std::vector<T>>(outer * inner);
  TensorT<T> out(x.shape());
  auto xv = x.values();
  auto o = out.values_mut();
  for (std::size_t b = 0; b < outer; ++b) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = b * channels * inner + i;
      T ss = 0;
      for (std::size_t c = 0; c < channels; ++c) ss += xv[base + c * inner] * xv[base + c * inner];
      const T nrm = std::sqrt(ss + eps);
      (*norms)[b * inner + i] = nrm;
      for (std::size_t c = 0; c < channels; ++c) o[base + c * inner] = xv[base + c * inner] / nrm;
    }
  }
  record(out, {&x}, [x, out, norms, outer, channels, inner]() mutable {
    auto gx = input_grad(x);
    auto g = out.grad();
    auto y = out.values();
    for (std::size_t b = 0; b < outer; ++b) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = b * channels * inner + i;
        const T nrm = (*norms)[b * inner + i];
        T dot = 0;
        for (std::size_t c = 0; c < channels; ++c) dot += y[base + c * inner] * g[base + c * inner];
        for (std::size_t c = 0; c < channels; ++c)
          gx[base + c * inner] += (g[base + c * inner] - y[base + c * inner] * dot) / nrm;
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> causal_attention(const TensorT<T>& qkv, std::size_t batch, std::size_t len, std::size_t heads) {
  if (qkv.rank() != 2 || qkv.dim(0) != batch * len || qkv.dim(1) % 3 != 0 || heads == 0 ||
      (qkv.dim(1) / 3) % heads != 0) {
    throw DimensionError("causal_attention: qkv " + shape_string(qkv.shape()) + " incompatible with batch " +
                         std::to_string(batch) + ", length " + std::to_string(len) + ", heads " +
                         std::to_string(heads));
  }
  const std::size_t width = qkv.dim(1) / 3;
  auto probs = std::make_shared<std::vector<T>>(batch * heads * kernels::triangle_size(len));
  TensorT<T> out(Shape{batch * len, width});
  kernels::causal_attention_forward(qkv.data(), batch, len, width, heads, out.data_mut(), probs->data());
  record(out, {&qkv}, [qkv, out, probs, batch, len, width, heads]() mutable {
    auto gq = input_grad(qkv);
    kernels::causal_attention_backward(qkv.data(), probs->data(), out.grad().data(), batch, len, width,
                                       heads, gq.data());
  });
  return out;
}

#define LVP_INSTANTIATE_OPS(T)                                                                      \
  template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);                                    \
  template TensorT<T> sub(const TensorT<T>&, const TensorT<T>&);                                    \
  template TensorT<T> mul(const TensorT<T>&, const TensorT<T>&);                                    \
  template TensorT<T> scale(const TensorT<T>&, T);                                                  \
  template TensorT<T> add_bias(const TensorT<T>&, const TensorT<T>&);                               \
  template TensorT<T> relu(const TensorT<T>&);                                                      \
  template TensorT<T> leaky_relu(const TensorT<T>&, T);                                             \
  template TensorT<T> gelu(const TensorT<T>&);                                                      \
  template TensorT<T> tanh(const TensorT<T>&);                                                      \
  template TensorT<T> log_sigmoid(const TensorT<T>&);                                               \
  template TensorT<T> layer_norm(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, T);       \
  template TensorT<T> matmul(const TensorT<T>&, const TensorT<T>&);                                 \
  template TensorT<T> embedding(const TensorT<T>&, std::span<const int>);                           \
  template TensorT<T> gather_rows(const TensorT<T>&, std::span<const int>);                         \
  template TensorT<T> reshape(const TensorT<T>&, Shape);                                            \
  template TensorT<T> permute(const TensorT<T>&, std::span<const std::size_t>);                     \
  template TensorT<T> transpose(const TensorT<T>&);                                                 \
  template TensorT<T> sum(const TensorT<T>&);                                                       \
  template TensorT<T> mean(const TensorT<T>&);                                                      \
  template TensorT<T> mse(const TensorT<T>&, const TensorT<T>&);                                    \
  template TensorT<T> softmax(const TensorT<T>&, int);                                              \
  template TensorT<T> cross_entropy(const TensorT<T>&, std::span<const int>);                       \
  template TensorT<T> stop_gradient(const TensorT<T>&);                                             \
  template TensorT<T> straight_through(const TensorT<T>&, const TensorT<T>&);                       \
  template TensorT<T> conv2d(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, std::size_t,  \
                             std::size_t);                                                          \
  template TensorT<T> conv_transpose2d(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,     \
                                       std::size_t, std::size_t);                                   \
  template TensorT<T> channel_normalize(const TensorT<T>&, T);                                      \
  template TensorT<T> causal_attention(const TensorT<T>&, std::size_t, std::size_t, std::size_t);

LVP_INSTANTIATE_OPS(float)
LVP_INSTANTIATE_OPS(double)

}  // namespace lvp::ops
