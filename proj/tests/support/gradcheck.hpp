#pragma once

// Finite-difference gradient oracle. Independent of the backward rules it
// checks: only forward evaluations are used.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "lvp/ops.hpp"
#include "lvp/rng.hpp"
#include "lvp/tape.hpp"

namespace lvp::testing {

template <typename T>
BasicTensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  BasicTensor<T> t(std::move(shape), requires_grad);
  for (auto& v : t.values_mut()) v = static_cast<T>(rng.normal() * scale);
  return t;
}

// Moves values at least `margin` away from zero (keeps kinks out of the
// finite-difference stencil).
template <typename T>
void push_from_zero(BasicTensor<T>& t, double margin) {
  for (auto& v : t.values_mut()) v = v >= T(0) ? v + static_cast<T>(margin) : v - static_cast<T>(margin);
}

struct GradCheckResult {
  double relative_error = 0.0;  // ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

// `loss` must rebuild the scalar from `inputs` every call.
template <typename T>
GradCheckResult gradcheck(std::vector<BasicTensor<T>> inputs,
                          const std::function<BasicTensor<T>()>& loss, double h = 1e-3) {
  std::vector<T> analytic;
  {
    BasicTape<T> tape;
    BasicTapeScope<T> scope(tape);
    for (auto& in : inputs) in.zero_grad();
    auto root = loss();
    tape.backward(root);
    for (auto& in : inputs) {
      if (in.has_grad()) {
        analytic.insert(analytic.end(), in.grad().begin(), in.grad().end());
      } else {
        analytic.insert(analytic.end(), in.numel(), T(0));
      }
    }
  }
  std::vector<double> numeric;
  {
    BasicNoGradScope<T> no_grad;
    for (auto& in : inputs) {
      auto values = in.values_mut();
      for (std::size_t i = 0; i < values.size(); ++i) {
        const T saved = values[i];
        values[i] = saved + static_cast<T>(h);
        const double up = static_cast<double>(loss().item());
        values[i] = saved - static_cast<T>(h);
        const double down = static_cast<double>(loss().item());
        values[i] = saved;
        numeric.push_back((up - down) / (2.0 * h));
      }
    }
  }
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double a = static_cast<double>(analytic[i]);
    diff += (a - numeric[i]) * (a - numeric[i]);
    na += a * a;
    nn += numeric[i] * numeric[i];
  }
  GradCheckResult r;
  r.analytic_norm = std::sqrt(na);
  r.numeric_norm = std::sqrt(nn);
  const double denom = std::max({r.analytic_norm, r.numeric_norm, 1e-12});
  r.relative_error = std::sqrt(diff) / denom;
  return r;
}

// Scalar probe ⟨out, weights⟩ so that every output element contributes.
template <typename T>
BasicTensor<T> probe(const BasicTensor<T>& out, const BasicTensor<T>& weights) {
  return ops::sum(ops::mul(out, weights));
}

}  // namespace lvp::testing
