#include "lvp/nn.hpp"

#include <cmath>
#include <cstring>

#include "lvp/io.hpp"

namespace lvp {

Tensor& ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter name " + name);
  value.set_requires_grad(true);
  entries_.push_back({std::move(name), std::move(value)});
  return entries_.back().value;
}

Tensor& ParameterSet::at(std::string_view name) {
  for (auto& e : entries_)
    if (e.name == name) return e.value;
  throw ConfigError("unknown parameter " + std::string(name));
}

const Tensor& ParameterSet::at(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.value;
  throw ConfigError("unknown parameter " + std::string(name));
}

bool ParameterSet::contains(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

double ParameterSet::grad_norm() const {
  double ss = 0.0;
  for (const auto& e : entries_)
    for (float g : e.value.grad()) ss += static_cast<double>(g) * g;
  return std::sqrt(ss);
}

double ParameterSet::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (norm > max_norm && norm > 0.0) {
    const auto factor = static_cast<float>(max_norm / norm);
    for (auto& e : entries_)
      if (e.value.has_grad())
        for (float& g : e.value.grad_mut()) g *= factor;
  }
  return norm;
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  for (auto& e : entries_) {
    const Tensor& src = other.at(e.name);
    if (src.shape() != e.value.shape()) {
      throw DimensionError("parameter " + e.name + ": shape " + shape_string(src.shape()) +
                           " does not match " + shape_string(e.value.shape()));
    }
    std::copy(src.values().begin(), src.values().end(), e.value.values_mut().begin());
  }
}

std::string ParameterSet::content_hash() const {
  Sha256 hasher;
  for (const auto& e : entries_) {
    hasher.update(e.name);
    for (auto d : e.value.shape()) hasher.update_u64(d);
    hasher.update(std::as_bytes(e.value.values()));
  }
  return hasher.hex_digest();
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.values_mut()) v = static_cast<float>(rng.normal() * stddev);
  return t;
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.values_mut()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

void Adam::step(ParameterSet& params) {
  auto& entries = params.entries();
  if (m_.size() != entries.size()) {
    m_.assign(entries.size(), {});
    v_.assign(entries.size(), {});
    for (std::size_t i = 0; i < entries.size(); ++i) {
      m_[i].assign(entries[i].value.numel(), 0.0f);
      v_[i].assign(entries[i].value.numel(), 0.0f);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto step_size = static_cast<float>(lr_ / bc1);
  const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& p = entries[i].value;
    if (!p.has_grad()) continue;
    auto w = p.values_mut();
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      w[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
    }
  }
}

}  // namespace lvp
