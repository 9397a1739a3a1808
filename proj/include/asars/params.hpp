#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "asars/tensor.hpp"

namespace asars {

// All learnable (and a few derived constant) arrays, addressed by stable
// names in registration order. Registration order defines optimizer state
// layout and checkpoint layout, so it must be deterministic.
template <typename S>
class ParamStore {
 public:
  Tensor<S>& add(const std::string& name, Mat<S> value, bool trainable = true) {
    if (index_.count(name))
      throw ConfigError("ParamStore: duplicate parameter name '" + name + "'");
    auto t = std::make_unique<Tensor<S>>(std::move(value), trainable, name);
    index_[name] = tensors_.size();
    tensors_.push_back(std::move(t));
    return *tensors_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor<S>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw ConfigError("ParamStore: unknown parameter '" + name + "'");
    return *tensors_[it->second];
  }
  const Tensor<S>& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }

  size_t count() const { return tensors_.size(); }
  Tensor<S>& at(size_t i) { return *tensors_[i]; }
  const Tensor<S>& at(size_t i) const { return *tensors_[i]; }

  void zero_grad() {
    for (auto& t : tensors_)
      if (t->requires_grad) t->zero_grad();
  }

  size_t trainable_scalar_count() const {
    size_t n = 0;
    for (const auto& t : tensors_)
      if (t->requires_grad) n += static_cast<size_t>(t->size());
    return n;
  }

  bool all_finite() const {
    for (const auto& t : tensors_)
      if (!t->all_finite()) return false;
    return true;
  }

  template <typename T>
  ParamStore<T> cast() const {
    ParamStore<T> out;
    for (const auto& t : tensors_)
      out.add(t->name, t->value.template cast<T>(), t->requires_grad);
    return out;
  }

  uint64_t value_checksum() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& t : tensors_) {
      h = fnv1a64(t->name.data(), t->name.size(), h);
      for (Eigen::Index i = 0; i < t->value.rows(); ++i)
        for (Eigen::Index j = 0; j < t->value.cols(); ++j) {
          S v = t->value(i, j);
          h = fnv1a64(&v, sizeof(S), h);
        }
    }
    return h;
  }

 private:
  std::vector<std::unique_ptr<Tensor<S>>> tensors_;
  std::map<std::string, size_t> index_;
};

template <typename S>
void init_uniform(Tensor<S>& t, Rng& rng, double lo, double hi) {
  for (Eigen::Index i = 0; i < t.value.rows(); ++i)
    for (Eigen::Index j = 0; j < t.value.cols(); ++j)
      t.value(i, j) = static_cast<S>(rng.uniform(lo, hi));
}

// Glorot range for affine maps.
template <typename S>
void init_glorot(Tensor<S>& t, Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
  init_uniform(t, rng, -bound, bound);
}

}  // namespace asars
