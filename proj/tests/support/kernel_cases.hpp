#pragma once

// One finite-difference case per differentiable kernel, parameterized by seed.
// Shared by the unit tests and the acceptance suite.

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace lvp::testing {

struct KernelCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

inline std::vector<KernelCase> kernel_cases() {
  using T = double;
  using Tn = BasicTensor<T>;
  std::vector<KernelCase> cases;
  auto add_case = [&](std::string name, std::function<GradCheckResult(Rng&)> fn) {
    cases.push_back({std::move(name), [fn](std::uint64_t seed) {
                       Rng rng(seed);
                       return fn(rng);
                     }});
  };

  add_case("matmul", [](Rng& rng) {
    auto a = random_tensor<T>({5, 4}, rng), b = random_tensor<T>({4, 3}, rng);
    auto w = random_tensor<T>({5, 3}, rng, 1.0, false);
    return gradcheck<T>({a, b}, [&] { return probe(ops::matmul(a, b), w); });
  });
  add_case("conv2d", [](Rng& rng) {
    auto x = random_tensor<T>({2, 3, 8, 8}, rng), k = random_tensor<T>({4, 3, 3, 3}, rng, 0.5);
    auto bias = random_tensor<T>({4}, rng);
    auto w = random_tensor<T>({2, 4, 8, 8}, rng, 1.0, false);
    return gradcheck<T>({x, k, bias}, [&] { return probe(ops::conv2d(x, k, bias, 1, 1), w); });
  });
  add_case("conv2d_strided", [](Rng& rng) {
    auto x = random_tensor<T>({2, 3, 8, 8}, rng), k = random_tensor<T>({2, 3, 4, 4}, rng, 0.5);
    auto w = random_tensor<T>({2, 2, 4, 4}, rng, 1.0, false);
    return gradcheck<T>({x, k}, [&] { return probe(ops::conv2d(x, k, Tn(), 2, 1), w); });
  });
  add_case("conv_transpose2d", [](Rng& rng) {
    auto y = random_tensor<T>({2, 4, 4, 4}, rng), k = random_tensor<T>({4, 3, 4, 4}, rng, 0.5);
    auto bias = random_tensor<T>({3}, rng);
    auto w = random_tensor<T>({2, 3, 8, 8}, rng, 1.0, false);
    return gradcheck<T>({y, k, bias}, [&] { return probe(ops::conv_transpose2d(y, k, bias, 2, 1), w); });
  });
  add_case("softmax", [](Rng& rng) {
    auto x = random_tensor<T>({3, 5}, rng, 2.0);
    auto w = random_tensor<T>({3, 5}, rng, 1.0, false);
    return gradcheck<T>({x}, [&] { return probe(ops::softmax(x, -1), w); });
  });
  add_case("softmax_axis0", [](Rng& rng) {
    auto x = random_tensor<T>({4, 3, 2}, rng, 2.0);
    auto w = random_tensor<T>({4, 3, 2}, rng, 1.0, false);
    return gradcheck<T>({x}, [&] { return probe(ops::softmax(x, 0), w); });
  });
  add_case("cross_entropy", [](Rng& rng) {
    auto x = random_tensor<T>({6, 8}, rng, 2.0);
    std::vector<int> targets(6);
    for (auto& t : targets) t = static_cast<int>(rng.uniform_int(0, 7));
    return gradcheck<T>({x}, [&] { return ops::cross_entropy(x, targets); });
  });
  add_case("add_sub_mul", [](Rng& rng) {
    auto a = random_tensor<T>({3, 4}, rng), b = random_tensor<T>({3, 4}, rng), c = random_tensor<T>({3, 4}, rng);
    auto w = random_tensor<T>({3, 4}, rng, 1.0, false);
    return gradcheck<T>({a, b, c}, [&] { return probe(ops::mul(ops::sub(ops::add(a, b), c), a), w); });
  });
  add_case("scale", [](Rng& rng) {
    auto a = random_tensor<T>({7}, rng);
    auto w = random_tensor<T>({7}, rng, 1.0, false);
    return gradcheck<T>({a}, [&] { return probe(ops::scale(a, T(-2.5)), w); });
  });
  add_case("add_bias", [](Rng& rng) {
    auto x = random_tensor<T>({2, 3, 4}, rng), b = random_tensor<T>({4}, rng);
    auto w = random_tensor<T>({2, 3, 4}, rng, 1.0, false);
    return gradcheck<T>({x, b}, [&] { return probe(ops::add_bias(x, b), w); });
  });
  add_case("relu", [](Rng& rng) {
    auto x = random_tensor<T>({4, 5}, rng);
    push_from_zero(x, 0.01);
    auto w = random_tensor<T>({4, 5}, rng, 1.0, false);
    return gradcheck<T>({x}, [&] { return probe(ops::relu(x), w); });
  });
  add_case("leaky_relu", [](Rng& rng) {
    auto x = random_tensor<T>({4, 5}, rng);
    push_from_zero(x, 0.01);
    auto w = random_tensor<T>({4, 5}, rng, 1.0, false);
    return gradcheck<T>({x}, [&] { return probe(ops::leaky_relu(x, T(0.2)), w); });
  });
  add_case("gelu", [](Rng& rng) {
    auto x = random_tensor<T>({4, 5}, rng, 2.0);
    auto w = random_tensor<T>({4, 5}, rng, 1.0, false);
    return gradcheck<T>({x}, [&] { return probe(ops::gelu(x), w); });
  });
  add_case("tanh", [](Rng& rng) {
    auto x = random_tensor<T>({4, 5}, rng);
    auto w = random_tensor<T>({4, 5}, rng, 1.0, false);
    return gradcheck<T>({x}, [&] { return probe(ops::tanh(x), w); });
  });
  add_case("log_sigmoid", [](Rng& rng) {
    auto x = random_tensor<T>({4, 5}, rng, 4.0);
    auto w = random_tensor<T>({4, 5}, rng, 1.0, false);
    return gradcheck<T>({x}, [&] { return probe(ops::log_sigmoid(x), w); });
  });
  add_case("layer_norm", [](Rng& rng) {
    auto x = random_tensor<T>({4, 6}, rng, 2.0), g = random_tensor<T>({6}, rng), b = random_tensor<T>({6}, rng);
    auto w = random_tensor<T>({4, 6}, rng, 1.0, false);
    return gradcheck<T>({x, g, b}, [&] { return probe(ops::layer_norm(x, g, b), w); });
  });
  add_case("embedding", [](Rng& rng) {
    auto table = random_tensor<T>({6, 3}, rng);
    std::vector<int> idx{0, 5, 2, 2, 1};
    auto w = random_tensor<T>({5, 3}, rng, 1.0, false);
    return gradcheck<T>({table}, [&] { return probe(ops::embedding(table, idx), w); });
  });
  add_case("gather_rows", [](Rng& rng) {
    auto x = random_tensor<T>({5, 3}, rng);
    std::vector<int> rows{4, 0, 4};
    auto w = random_tensor<T>({3, 3}, rng, 1.0, false);
    return gradcheck<T>({x}, [&] { return probe(ops::gather_rows(x, rows), w); });
  });
  add_case("reshape", [](Rng& rng) {
    auto x = random_tensor<T>({2, 6}, rng);
    auto w = random_tensor<T>({3, 4}, rng, 1.0, false);
    return gradcheck<T>({x}, [&] { return probe(ops::reshape(x, {3, 4}), w); });
  });
  add_case("permute", [](Rng& rng) {
    auto x = random_tensor<T>({2, 3, 4}, rng);
    const std::array<std::size_t, 3> axes{2, 0, 1};
    auto w = random_tensor<T>({4, 2, 3}, rng, 1.0, false);
    return gradcheck<T>({x}, [&] { return probe(ops::permute(x, std::span<const std::size_t>(axes)), w); });
  });
  add_case("transpose", [](Rng& rng) {
    auto x = random_tensor<T>({3, 5}, rng);
    auto w = random_tensor<T>({5, 3}, rng, 1.0, false);
    return gradcheck<T>({x}, [&] { return probe(ops::transpose(x), w); });
  });
  add_case("sum_mean", [](Rng& rng) {
    auto x = random_tensor<T>({3, 4}, rng);
    auto y = random_tensor<T>({5}, rng);
    return gradcheck<T>({x, y}, [&] { return ops::add(ops::sum(x), ops::scale(ops::mean(y), T(3))); });
  });
  add_case("mse", [](Rng& rng) {
    auto a = random_tensor<T>({2, 3, 4}, rng), b = random_tensor<T>({2, 3, 4}, rng);
    return gradcheck<T>({a, b}, [&] { return ops::mse(a, b); });
  });
  add_case("channel_normalize", [](Rng& rng) {
    auto x = random_tensor<T>({2, 4, 3, 3}, rng);
    auto w = random_tensor<T>({2, 4, 3, 3}, rng, 1.0, false);
    return gradcheck<T>({x}, [&] { return probe(ops::channel_normalize(x), w); });
  });
  add_case("causal_attention", [](Rng& rng) {
    auto qkv = random_tensor<T>({2 * 5, 3 * 8}, rng);
    auto w = random_tensor<T>({2 * 5, 8}, rng, 1.0, false);
    return gradcheck<T>({qkv}, [&] { return probe(ops::causal_attention(qkv, 2, 5, 2), w); });
  });
  add_case("composite_conv_relu_matmul_ce", [](Rng& rng) {
    Tn x, k;
    // Redraw until no pre-activation sits within the stencil's reach of the kink.
    for (;;) {
      x = random_tensor<T>({2, 2, 6, 6}, rng);
      k = random_tensor<T>({3, 2, 3, 3}, rng, 0.5);
      BasicNoGradScope<T> no_grad;
      auto pre = ops::conv2d(x, k, Tn(), 1, 1);
      if (std::all_of(pre.values().begin(), pre.values().end(), [](T v) { return std::abs(v) > 0.02; })) break;
    }
    auto proj = random_tensor<T>({3 * 6 * 6, 5}, rng, 0.2);
    std::vector<int> targets{1, 4};
    return gradcheck<T>({x, k, proj}, [&] {
      auto h = ops::relu(ops::conv2d(x, k, Tn(), 1, 1));
      auto flat = ops::reshape(h, {2, 3 * 6 * 6});
      return ops::cross_entropy(ops::matmul(flat, proj), targets);
    });
  });
  return cases;
}

}  // namespace lvp::testing
