#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lvp/rng.hpp"
#include "lvp/tensor.hpp"

namespace lvp {

struct NamedParameter {
  std::string name;
  Tensor value;
};

// Ordered, named collection of trainable leaf tensors.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor value);
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<NamedParameter>& entries() { return entries_; }
  const std::vector<NamedParameter>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  double grad_norm() const;
  // Rescales gradients so their global norm is at most max_norm; returns the
  // norm before clipping.
  double clip_grad_norm(double max_norm);

  // Overwrites values of identically named and shaped parameters.
  void copy_values_from(const ParameterSet& other);
  // SHA-256 over names, shapes and values.
  std::string content_hash() const;

 private:
  std::vector<NamedParameter> entries_;
};

Tensor normal_tensor(Shape shape, double stddev, Rng& rng);
Tensor uniform_tensor(Shape shape, double bound, Rng& rng);

// Adaptive moment estimation.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.99, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterSet& params);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  std::int64_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace lvp
