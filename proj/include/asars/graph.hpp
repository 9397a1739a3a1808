#pragma once

#include <cmath>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "asars/tensor.hpp"

namespace asars {

// Reverse-mode graph over dense matrices. Nodes are appended in forward
// order; backward walks them in exact reverse insertion order. One graph is
// single-threaded; independent graphs may run on independent threads.
template <typename S>
class Graph;

template <typename S>
struct Var {
  Graph<S>* g = nullptr;
  int id = -1;

  const Mat<S>& value() const { return g->node(id).value; }
  const Mat<S>& grad() const { return g->node(id).grad; }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

template <typename S>
class Graph {
 public:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    bool requires_grad = false;
    Tensor<S>* param = nullptr;  // set on parameter leaves
    std::function<void(Graph&, Node&)> backward;
  };

  // Counts forward multiply-accumulate work; tests use deltas around a block.
  uint64_t mac_count = 0;

  Var<S> constant(Mat<S> m) {
    return push(std::move(m), false, nullptr, {});
  }

  Var<S> leaf(Tensor<S>& t) {
    auto it = param_cache_.find(&t);
    if (it != param_cache_.end()) return Var<S>{this, it->second};
    Var<S> v = push(t.value, t.requires_grad, &t, {});
    param_cache_[&t] = v.id;
    return v;
  }

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  size_t size() const { return nodes_.size(); }

  // Populates grads of every requires_grad tensor reachable from `loss`.
  // Gradients from multiple uses accumulate by sum. The graph must be
  // reset() before being reused for another forward pass.
  void backward(Var<S> loss) {
    check_dims(loss.g == this, "backward: loss from a different graph");
    Node& ln = node(loss.id);
    if (ln.value.rows() != 1 || ln.value.cols() != 1)
      throw DimensionError("backward: loss must be scalar, got " +
                           shape_str(ln.value.rows(), ln.value.cols()));
    if (ran_backward_)
      throw std::runtime_error("backward: graph already consumed; reset() first");
    ran_backward_ = true;
    if (!ln.requires_grad) return;  // constant loss: nothing depends on parameters
    for (auto& n : nodes_)
      if (n.requires_grad) n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    ln.grad(0, 0) = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->requires_grad && it->backward) it->backward(*this, *it);
    }
    for (auto& n : nodes_) {
      if (n.param && n.requires_grad) {
        if (n.param->grad.size() == 0) n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }

  void reset() {
    nodes_.clear();
    param_cache_.clear();
    ran_backward_ = false;
  }

  Var<S> push(Mat<S> value, bool requires_grad, Tensor<S>* param,
              std::function<void(Graph&, Node&)> bw) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.param = param;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<Tensor<S>*, int> param_cache_;
  bool ran_backward_ = false;
};

namespace detail {

template <typename S>
void accum(Graph<S>& g, int id, const Mat<S>& d) {
  auto& n = g.node(id);
  if (n.requires_grad) n.grad += d;
}

template <typename S>
bool needs_grad(const Graph<S>& g, int a) {
  return g.node(a).requires_grad;
}

template <typename S>
bool needs_grad(const Graph<S>& g, int a, int b) {
  return g.node(a).requires_grad || g.node(b).requires_grad;
}

}  // namespace detail

// ---- matrix products ----

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.g;
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.rows())
    throw DimensionError("matmul: inner dimensions disagree, " +
                         shape_str(A.rows(), A.cols()) + " x " +
                         shape_str(B.rows(), B.cols()));
  g.mac_count += static_cast<uint64_t>(A.rows()) * A.cols() * B.cols();
  int ia = a.id, ib = b.id;
  return g.push(A * B, detail::needs_grad(g, ia, ib), nullptr,
                [ia, ib](Graph<S>& gr, typename Graph<S>::Node& n) {
                  detail::accum(gr, ia, Mat<S>(n.grad * gr.node(ib).value.transpose()));
                  detail::accum(gr, ib, Mat<S>(gr.node(ia).value.transpose() * n.grad));
                });
}

// a * b^T without materializing the transpose.
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.g;
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.cols())
    throw DimensionError("matmul_nt: inner dimensions disagree, " +
                         shape_str(A.rows(), A.cols()) + " x " +
                         shape_str(B.rows(), B.cols()) + "^T");
  g.mac_count += static_cast<uint64_t>(A.rows()) * A.cols() * B.rows();
  int ia = a.id, ib = b.id;
  return g.push(A * B.transpose(), detail::needs_grad(g, ia, ib), nullptr,
                [ia, ib](Graph<S>& gr, typename Graph<S>::Node& n) {
                  detail::accum(gr, ia, Mat<S>(n.grad * gr.node(ib).value));
                  detail::accum(gr, ib, Mat<S>(n.grad.transpose() * gr.node(ia).value));
                });
}

template <typename S>
Var<S> transpose(Var<S> a) {
  Graph<S>& g = *a.g;
  int ia = a.id;
  return g.push(a.value().transpose(), detail::needs_grad(g, ia), nullptr,
                [ia](Graph<S>& gr, typename Graph<S>::Node& n) {
                  detail::accum(gr, ia, Mat<S>(n.grad.transpose()));
                });
}

// ---- elementwise ----

namespace detail {
template <typename S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.rows(), a.cols()) + " vs " +
                         shape_str(b.rows(), b.cols()));
}
}  // namespace detail

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::require_same_shape(a, b, "add");
  Graph<S>& g = *a.g;
  int ia = a.id, ib = b.id;
  return g.push(a.value() + b.value(), detail::needs_grad(g, ia, ib), nullptr,
                [ia, ib](Graph<S>& gr, typename Graph<S>::Node& n) {
                  detail::accum(gr, ia, n.grad);
                  detail::accum(gr, ib, n.grad);
                });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::require_same_shape(a, b, "sub");
  Graph<S>& g = *a.g;
  int ia = a.id, ib = b.id;
  return g.push(a.value() - b.value(), detail::needs_grad(g, ia, ib), nullptr,
                [ia, ib](Graph<S>& gr, typename Graph<S>::Node& n) {
                  detail::accum(gr, ia, n.grad);
                  detail::accum(gr, ib, Mat<S>(-n.grad));
                });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  detail::require_same_shape(a, b, "mul");
  Graph<S>& g = *a.g;
  g.mac_count += static_cast<uint64_t>(a.rows()) * a.cols();
  int ia = a.id, ib = b.id;
  return g.push(Mat<S>(a.value().cwiseProduct(b.value())),
                detail::needs_grad(g, ia, ib), nullptr,
                [ia, ib](Graph<S>& gr, typename Graph<S>::Node& n) {
                  detail::accum(gr, ia, Mat<S>(n.grad.cwiseProduct(gr.node(ib).value)));
                  detail::accum(gr, ib, Mat<S>(n.grad.cwiseProduct(gr.node(ia).value)));
                });
}

template <typename S>
Var<S> scale(Var<S> a, S c) {
  Graph<S>& g = *a.g;
  int ia = a.id;
  return g.push(Mat<S>(a.value() * c), detail::needs_grad(g, ia), nullptr,
                [ia, c](Graph<S>& gr, typename Graph<S>::Node& n) {
                  detail::accum(gr, ia, Mat<S>(n.grad * c));
                });
}

// Broadcast a 1 x n row over every row of m.
template <typename S>
Var<S> add_rowvec(Var<S> m, Var<S> v) {
  if (v.rows() != 1 || v.cols() != m.cols())
    throw DimensionError("add_rowvec: want 1x" + std::to_string(m.cols()) +
                         ", got " + shape_str(v.rows(), v.cols()));
  Graph<S>& g = *m.g;
  int im = m.id, iv = v.id;
  Mat<S> out = m.value();
  out.rowwise() += v.value().row(0);
  return g.push(std::move(out), detail::needs_grad(g, im, iv), nullptr,
                [im, iv](Graph<S>& gr, typename Graph<S>::Node& n) {
                  detail::accum(gr, im, n.grad);
                  detail::accum(gr, iv, Mat<S>(n.grad.colwise().sum()));
                });
}

// Broadcast an m x 1 column over every column of m.
template <typename S>
Var<S> add_colvec(Var<S> m, Var<S> v) {
  if (v.cols() != 1 || v.rows() != m.rows())
    throw DimensionError("add_colvec: want " + std::to_string(m.rows()) +
                         "x1, got " + shape_str(v.rows(), v.cols()));
  Graph<S>& g = *m.g;
  int im = m.id, iv = v.id;
  Mat<S> out = m.value();
  out.colwise() += v.value().col(0);
  return g.push(std::move(out), detail::needs_grad(g, im, iv), nullptr,
                [im, iv](Graph<S>& gr, typename Graph<S>::Node& n) {
                  detail::accum(gr, im, n.grad);
                  detail::accum(gr, iv, Mat<S>(n.grad.rowwise().sum()));
                });
}

template <typename S>
Var<S> tanh(Var<S> a) {
  Graph<S>& g = *a.g;
  g.mac_count += static_cast<uint64_t>(a.rows()) * a.cols();
  int ia = a.id;
  Mat<S> y = a.value().array().tanh().matrix();
  return g.push(std::move(y), detail::needs_grad(g, ia), nullptr,
                [ia](Graph<S>& gr, typename Graph<S>::Node& n) {
                  Mat<S> d = n.grad.cwiseProduct(
                      (Mat<S>::Ones(n.value.rows(), n.value.cols()) -
                       n.value.cwiseProduct(n.value)));
                  detail::accum(gr, ia, d);
                });
}

namespace detail {
template <typename S>
S stable_sigmoid(S x) {
  if (x >= S(0)) {
    return S(1) / (S(1) + std::exp(-x));
  }
  S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
S stable_softplus(S x) {
  if (x > S(30)) return x;
  if (x < S(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}
}  // namespace detail

template <typename S>
Var<S> sigmoid(Var<S> a) {
  Graph<S>& g = *a.g;
  g.mac_count += static_cast<uint64_t>(a.rows()) * a.cols();
  int ia = a.id;
  Mat<S> y = a.value().unaryExpr([](S x) { return detail::stable_sigmoid(x); });
  return g.push(std::move(y), detail::needs_grad(g, ia), nullptr,
                [ia](Graph<S>& gr, typename Graph<S>::Node& n) {
                  Mat<S> d = n.grad.cwiseProduct(n.value.cwiseProduct(
                      (Mat<S>::Ones(n.value.rows(), n.value.cols()) - n.value)));
                  detail::accum(gr, ia, d);
                });
}

template <typename S>
Var<S> relu(Var<S> a) {
  Graph<S>& g = *a.g;
  int ia = a.id;
  Mat<S> y = a.value().cwiseMax(S(0));
  return g.push(std::move(y), detail::needs_grad(g, ia), nullptr,
                [ia](Graph<S>& gr, typename Graph<S>::Node& n) {
                  // subgradient 0 at the kink
                  Mat<S> mask =
                      (gr.node(ia).value.array() > S(0)).template cast<S>().matrix();
                  detail::accum(gr, ia, Mat<S>(n.grad.cwiseProduct(mask)));
                });
}

template <typename S>
Var<S> softplus(Var<S> a) {
  Graph<S>& g = *a.g;
  g.mac_count += static_cast<uint64_t>(a.rows()) * a.cols();
  int ia = a.id;
  Mat<S> y = a.value().unaryExpr([](S x) { return detail::stable_softplus(x); });
  return g.push(std::move(y), detail::needs_grad(g, ia), nullptr,
                [ia](Graph<S>& gr, typename Graph<S>::Node& n) {
                  Mat<S> s = gr.node(ia).value.unaryExpr(
                      [](S x) { return detail::stable_sigmoid(x); });
                  detail::accum(gr, ia, Mat<S>(n.grad.cwiseProduct(s)));
                });
}

// ---- reductions ----

template <typename S>
Var<S> sum(Var<S> a) {
  Graph<S>& g = *a.g;
  int ia = a.id;
  Mat<S> out(1, 1);
  out(0, 0) = a.value().sum();
  return g.push(std::move(out), detail::needs_grad(g, ia), nullptr,
                [ia](Graph<S>& gr, typename Graph<S>::Node& n) {
                  auto& src = gr.node(ia);
                  detail::accum(gr, ia, Mat<S>(Mat<S>::Constant(
                                            src.value.rows(), src.value.cols(),
                                            n.grad(0, 0))));
                });
}

template <typename S>
Var<S> sum_cols(Var<S> a) {
  Graph<S>& g = *a.g;
  int ia = a.id;
  Mat<S> out = a.value().rowwise().sum();
  return g.push(std::move(out), detail::needs_grad(g, ia), nullptr,
                [ia](Graph<S>& gr, typename Graph<S>::Node& n) {
                  auto& src = gr.node(ia);
                  detail::accum(gr, ia, Mat<S>(n.grad.col(0).replicate(1, src.value.cols())));
                });
}

template <typename S>
Var<S> mean(Var<S> a) {
  return scale(sum(a), S(1) / static_cast<S>(a.rows() * a.cols()));
}

// ---- structured ops ----

enum class MaskMode {
  prefix_softmax,  // softmax over the first valid_len entries, rest exactly 0
  zero_fill,       // ablation: masked entries enter the softmax as literal zeros
};

// Row i is a softmax over its first valid_len[i] entries (per-row max
// subtraction for stability); entries past the prefix are exactly zero.
// zero_fill keeps masked inputs as literal 0 inside a full-row softmax.
template <typename S>
Var<S> masked_softmax_rows(Var<S> scores, const std::vector<int>& valid_len,
                           MaskMode mode = MaskMode::prefix_softmax) {
  Graph<S>& g = *scores.g;
  const auto& X = scores.value();
  const int n = static_cast<int>(X.rows());
  const int m = static_cast<int>(X.cols());
  if (static_cast<int>(valid_len.size()) != n)
    throw DimensionError("masked_softmax_rows: valid_len size " +
                         std::to_string(valid_len.size()) + " for " +
                         std::to_string(n) + " rows");
  for (int i = 0; i < n; ++i)
    if (valid_len[i] < 1 || valid_len[i] > m)
      throw IndexError("masked_softmax_rows: valid_len[" + std::to_string(i) +
                       "]=" + std::to_string(valid_len[i]) + " out of [1," +
                       std::to_string(m) + "]");
  Mat<S> Y = Mat<S>::Zero(n, m);
  for (int i = 0; i < n; ++i) {
    const int L = (mode == MaskMode::prefix_softmax) ? valid_len[i] : m;
    Eigen::Array<S, 1, Eigen::Dynamic> row(1, L);
    for (int j = 0; j < L; ++j)
      row(j) = (mode == MaskMode::zero_fill && j >= valid_len[i]) ? S(0) : X(i, j);
    S mx = row.maxCoeff();
    row = (row - mx).exp();
    S z = row.sum();
    for (int j = 0; j < L; ++j) Y(i, j) = row(j) / z;
    g.mac_count += static_cast<uint64_t>(2 * L);
  }
  int is = scores.id;
  std::vector<int> vl = valid_len;
  return g.push(std::move(Y), detail::needs_grad(g, is), nullptr,
                [is, vl, mode, m](Graph<S>& gr, typename Graph<S>::Node& n) {
                  Mat<S> d = Mat<S>::Zero(n.value.rows(), n.value.cols());
                  for (int i = 0; i < n.value.rows(); ++i) {
                    const int L = (mode == MaskMode::prefix_softmax) ? vl[static_cast<size_t>(i)] : m;
                    S dot = S(0);
                    for (int j = 0; j < L; ++j) dot += n.value(i, j) * n.grad(i, j);
                    for (int j = 0; j < L; ++j)
                      d(i, j) = n.value(i, j) * (n.grad(i, j) - dot);
                    if (mode == MaskMode::zero_fill) {
                      // filled positions were constants, no gradient flows out
                      for (int j = vl[static_cast<size_t>(i)]; j < m; ++j) d(i, j) = S(0);
                    }
                  }
                  detail::accum(gr, is, d);
                });
}

// Gathers rows of `table` (typically a parameter leaf); backward
// scatter-adds, so duplicate ids accumulate.
template <typename S>
Var<S> embedding_lookup(Var<S> table, const std::vector<int>& ids) {
  Graph<S>& g = *table.g;
  const auto& T = table.value();
  const std::string tname =
      g.node(table.id).param ? g.node(table.id).param->name : "<anonymous>";
  Mat<S> out(static_cast<Eigen::Index>(ids.size()), T.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= T.rows())
      throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) +
                       " out of range for table '" + tname + "' with " +
                       std::to_string(T.rows()) + " rows");
    out.row(static_cast<Eigen::Index>(i)) = T.row(ids[i]);
  }
  int it = table.id;
  std::vector<int> ids_copy = ids;
  return g.push(std::move(out), detail::needs_grad(g, it), nullptr,
                [it, ids_copy](Graph<S>& gr, typename Graph<S>::Node& n) {
                  auto& tn = gr.node(it);
                  if (!tn.requires_grad) return;
                  for (size_t i = 0; i < ids_copy.size(); ++i)
                    tn.grad.row(ids_copy[i]) += n.grad.row(static_cast<Eigen::Index>(i));
                });
}

template <typename S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
  if (a.rows() != b.rows())
    throw DimensionError("concat_cols: row mismatch " +
                         shape_str(a.rows(), a.cols()) + " vs " +
                         shape_str(b.rows(), b.cols()));
  Graph<S>& g = *a.g;
  Mat<S> out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  int ia = a.id, ib = b.id;
  Eigen::Index ca = a.cols(), cb = b.cols();
  return g.push(std::move(out), detail::needs_grad(g, ia, ib), nullptr,
                [ia, ib, ca, cb](Graph<S>& gr, typename Graph<S>::Node& n) {
                  detail::accum(gr, ia, Mat<S>(n.grad.leftCols(ca)));
                  detail::accum(gr, ib, Mat<S>(n.grad.rightCols(cb)));
                });
}

// Vertically stacks k row vectors (all 1 x d) into a k x d matrix.
template <typename S>
Var<S> stack_rows(Graph<S>& g, const std::vector<Var<S>>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows: empty input");
  const Eigen::Index d = rows[0].cols();
  Mat<S> out(static_cast<Eigen::Index>(rows.size()), d);
  bool rg = false;
  std::vector<int> ids;
  ids.reserve(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].rows() != 1 || rows[i].cols() != d)
      throw DimensionError("stack_rows: row " + std::to_string(i) + " is " +
                           shape_str(rows[i].rows(), rows[i].cols()));
    out.row(static_cast<Eigen::Index>(i)) = rows[i].value().row(0);
    rg = rg || g.node(rows[i].id).requires_grad;
    ids.push_back(rows[i].id);
  }
  return g.push(std::move(out), rg, nullptr,
                [ids](Graph<S>& gr, typename Graph<S>::Node& n) {
                  for (size_t i = 0; i < ids.size(); ++i)
                    detail::accum(gr, ids[i],
                                  Mat<S>(n.grad.row(static_cast<Eigen::Index>(i))));
                });
}

// Inverted-scaling dropout: kept units are scaled by 1/(1-p) during
// training so evaluation needs no rescaling.
template <typename S>
Var<S> dropout(Var<S> a, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("dropout: p must be in [0,1), got " + std::to_string(p));
  if (p == 0.0) return a;
  Graph<S>& g = *a.g;
  Mat<S> mask(a.rows(), a.cols());
  const S keep_scale = S(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
      mask(i, j) = rng.uniform() < p ? S(0) : keep_scale;
  int ia = a.id;
  auto masked = Mat<S>(a.value().cwiseProduct(mask));
  return g.push(std::move(masked), detail::needs_grad(g, ia), nullptr,
                [ia, mask](Graph<S>& gr, typename Graph<S>::Node& n) {
                  detail::accum(gr, ia, Mat<S>(n.grad.cwiseProduct(mask)));
                });
}

}  // namespace asars
