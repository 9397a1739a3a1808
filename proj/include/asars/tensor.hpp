#pragma once

#include <Eigen/Dense>
#include <string>

#include "asars/common.hpp"

namespace asars {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// A named dense array with optional gradient storage. Parameters live in
// Tensors outside any graph; graphs reference them through leaf nodes and
// accumulate into `grad` during backward.
template <typename S>
struct Tensor {
  Mat<S> value;
  Mat<S> grad;  // same shape as value once touched by backward
  bool requires_grad = true;
  std::string name;

  Tensor() = default;
  Tensor(Mat<S> v, bool rg = true, std::string n = {})
      : value(std::move(v)), requires_grad(rg), name(std::move(n)) {
    if (requires_grad) zero_grad();
  }

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  Eigen::Index size() const { return value.size(); }

  void zero_grad() { grad = Mat<S>::Zero(value.rows(), value.cols()); }

  bool all_finite() const {
    return value.allFinite() && (grad.size() == 0 || grad.allFinite());
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.value = value.template cast<T>();
    out.requires_grad = requires_grad;
    out.name = name;
    if (requires_grad) out.zero_grad();
    return out;
  }
};

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

}  // namespace asars
