#pragma once

#include <optional>
#include <string>
#include <vector>

#include "asars/batching.hpp"
#include "asars/graph.hpp"
#include "asars/params.hpp"

namespace asars {

enum class Variant { baseline, user_att, user_cat, time_att, time_cat, time_user };
enum class RnnCell { gru, lstm };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
std::string to_string(RnnCell c);
RnnCell cell_from_string(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::baseline;
  int num_items = 0;
  int num_users = 0;
  int num_time_bins = 1;
  int item_dim = 64;
  int time_dim = 16;
  int user_dim = 32;
  int hidden_dim = 100;
  double dropout = 0.5;
  RnnCell cell = RnnCell::gru;
  int max_session_len = 200;

  // Bias terms of the temporal-dynamics predictor. Unset flags resolve to
  // per-variant defaults in resolve_biases().
  std::optional<bool> bias_mu, bias_user, bias_item, bias_item_time, bias_dev;
  bool bit_full_table = false;  // full T x V table instead of the factored form
  double dev_beta = 0.4;

  // Ablations
  bool attention_bypass = false;        // q_i = h_i, attention skipped
  bool attention_zero_fill = false;     // literal masked-zero softmax

  bool uses_time_branch() const {
    return variant == Variant::time_att || variant == Variant::time_user;
  }
  bool uses_time_embed() const {
    return uses_time_branch() || variant == Variant::time_cat;
  }
  bool uses_user_embed() const {
    return variant == Variant::user_att || variant == Variant::user_cat ||
           variant == Variant::time_user;
  }
  bool uses_user_cat() const {
    return variant == Variant::user_cat || variant == Variant::time_user;
  }
  bool uses_attention() const {
    return uses_time_branch() || variant == Variant::user_att;
  }

  bool mu_on() const { return bias_mu.value_or(false); }
  bool user_bias_on() const { return bias_user.value_or(false); }
  bool item_bias_on() const { return bias_item.value_or(false); }
  bool item_time_bias_on() const { return bias_item_time.value_or(false); }
  bool dev_on() const { return bias_dev.value_or(false); }

  void resolve_biases();
  void validate() const;
};

template <typename S>
struct Model {
  ModelConfig cfg;
  ParamStore<S> params;
};

namespace names {
inline constexpr const char* item_embed = "item_embed";
inline constexpr const char* time_embed = "time_embed";
inline constexpr const char* user_embed = "user_embed";
inline constexpr const char* att_w_s = "att.w_s";
inline constexpr const char* att_b_s = "att.b_s";
inline constexpr const char* att_user_proj = "att.user_proj";
inline constexpr const char* fuse_w = "fuse.w";
inline constexpr const char* fuse_b = "fuse.b";
inline constexpr const char* score_proj = "score.proj";
inline constexpr const char* bias_mu = "bias.mu";
inline constexpr const char* bias_user = "bias.user";
inline constexpr const char* bias_item = "bias.item";
inline constexpr const char* bias_alpha_u = "bias.alpha_u";
inline constexpr const char* bias_it_ci = "bias.item_time.c_item";
inline constexpr const char* bias_it_ct = "bias.item_time.c_bin";
inline constexpr const char* bias_it_ct0 = "bias.item_time.b_bin";
inline constexpr const char* bias_it_full = "bias.item_time.full";
inline constexpr const char* user_mean_ts = "user_mean_ts";
}  // namespace names

namespace detail {

inline std::vector<std::string> rnn_gate_names(RnnCell cell) {
  if (cell == RnnCell::gru) return {"z", "r", "h"};
  return {"i", "f", "o", "g"};
}

}  // namespace detail

// Creates all tables and weights the variant needs. Embeddings start
// uniform in +-0.05, affine maps Glorot-uniform, bias tables zero (except
// the factored time-bias factors, whose product would otherwise sit on a
// zero-gradient saddle).
template <typename S>
Model<S> make_model(const ModelConfig& cfg_in, uint64_t seed) {
  ModelConfig cfg = cfg_in;
  cfg.resolve_biases();
  cfg.validate();
  Model<S> m;
  m.cfg = cfg;
  Rng rng(seed);
  auto& p = m.params;

  auto add_embed = [&](const char* name, int rows, int cols) {
    init_uniform(p.add(name, Mat<S>::Zero(rows, cols)), rng, -0.05, 0.05);
  };
  auto add_affine = [&](const std::string& name, int rows, int cols) {
    init_glorot(p.add(name, Mat<S>::Zero(rows, cols)), rng);
  };
  auto add_zero = [&](const std::string& name, int rows, int cols, bool trainable = true) {
    p.add(name, Mat<S>::Zero(rows, cols), trainable);
  };

  add_embed(names::item_embed, cfg.num_items, cfg.item_dim);
  if (cfg.uses_time_embed()) add_embed(names::time_embed, cfg.num_time_bins, cfg.time_dim);
  if (cfg.uses_user_embed()) add_embed(names::user_embed, cfg.num_users, cfg.user_dim);

  const int item_in = cfg.variant == Variant::time_cat ? cfg.item_dim + cfg.time_dim
                                                       : cfg.item_dim;
  for (const auto& gate : detail::rnn_gate_names(cfg.cell)) {
    add_affine("rnn_item.w_" + gate, cfg.hidden_dim, item_in);
    add_affine("rnn_item.u_" + gate, cfg.hidden_dim, cfg.hidden_dim);
    add_zero("rnn_item.b_" + gate, 1, cfg.hidden_dim);
  }
  if (cfg.uses_time_branch()) {
    for (const auto& gate : detail::rnn_gate_names(cfg.cell)) {
      add_affine("rnn_time.w_" + gate, cfg.hidden_dim, cfg.time_dim);
      add_affine("rnn_time.u_" + gate, cfg.hidden_dim, cfg.hidden_dim);
      add_zero("rnn_time.b_" + gate, 1, cfg.hidden_dim);
    }
  }
  if (cfg.uses_attention()) {
    add_affine(names::att_w_s, cfg.hidden_dim, cfg.hidden_dim);
    add_zero(names::att_b_s, 1, cfg.hidden_dim);
    if (cfg.variant == Variant::user_att && cfg.user_dim != cfg.hidden_dim)
      add_affine(names::att_user_proj, cfg.hidden_dim, cfg.user_dim);
  }
  if (cfg.uses_user_cat()) {
    add_affine(names::fuse_w, cfg.hidden_dim, cfg.hidden_dim + cfg.user_dim);
    add_zero(names::fuse_b, 1, cfg.hidden_dim);
  }
  if (cfg.hidden_dim != cfg.item_dim)
    add_affine(names::score_proj, cfg.item_dim, cfg.hidden_dim);

  if (cfg.mu_on()) add_zero(names::bias_mu, 1, 1);
  if (cfg.user_bias_on()) add_zero(names::bias_user, cfg.num_users, 1);
  if (cfg.item_bias_on()) add_zero(names::bias_item, cfg.num_items, 1);
  if (cfg.item_time_bias_on()) {
    if (cfg.bit_full_table) {
      add_zero(names::bias_it_full, cfg.num_time_bins, cfg.num_items);
    } else {
      add_embed(names::bias_it_ci, cfg.num_items, 1);
      add_embed(names::bias_it_ct, cfg.num_time_bins, 1);
      add_zero(names::bias_it_ct0, cfg.num_time_bins, 1);
    }
  }
  if (cfg.dev_on()) {
    add_zero(names::bias_alpha_u, cfg.num_users, 1);
    add_zero(names::user_mean_ts, cfg.num_users, 1, /*trainable=*/false);
  }
  return m;
}

// Per-user mean training timestamp (in days) for the dev() deviation term.
template <typename S>
void attach_user_stats(Model<S>& m, const Corpus& corpus) {
  if (!m.cfg.dev_on()) return;
  Tensor<S>& mean_ts = m.params.get(names::user_mean_ts);
  std::vector<double> sum(static_cast<size_t>(m.cfg.num_users), 0.0);
  std::vector<int64_t> cnt(static_cast<size_t>(m.cfg.num_users), 0);
  for (const auto& s : corpus.sessions) {
    if (s.is_test) continue;
    for (int64_t t : s.ts) {
      sum[static_cast<size_t>(s.user)] += static_cast<double>(t) / 86400.0;
      ++cnt[static_cast<size_t>(s.user)];
    }
  }
  for (int u = 0; u < m.cfg.num_users; ++u)
    mean_ts.value(u, 0) = cnt[static_cast<size_t>(u)] > 0
                              ? static_cast<S>(sum[static_cast<size_t>(u)] /
                                               static_cast<double>(cnt[static_cast<size_t>(u)]))
                              : S(0);
}

// sign(t - t_mean) * |t - t_mean|^beta, timestamps in days.
template <typename S>
S dev_value(S ts_days, S mean_days, double beta) {
  const double d = static_cast<double>(ts_days) - static_cast<double>(mean_days);
  const double mag = std::pow(std::abs(d), beta);
  return static_cast<S>(d < 0 ? -mag : mag);
}

// ---- recurrent cells ----

template <typename S>
struct RnnWeights {
  // gru: z, r, h gates; lstm: i, f, o, g in that order
  std::vector<Tensor<S>*> w, u, b;
};

template <typename S>
RnnWeights<S> rnn_weights(Model<S>& m, const std::string& prefix) {
  RnnWeights<S> out;
  for (const auto& gate : detail::rnn_gate_names(m.cfg.cell)) {
    out.w.push_back(&m.params.get(prefix + ".w_" + gate));
    out.u.push_back(&m.params.get(prefix + ".u_" + gate));
    out.b.push_back(&m.params.get(prefix + ".b_" + gate));
  }
  return out;
}

namespace detail {
template <typename S>
Var<S> gate_preact(Graph<S>& g, Var<S> x, Var<S> h, Tensor<S>& w, Tensor<S>& u,
                   Tensor<S>& b) {
  return add_rowvec(add(matmul_nt(x, g.leaf(w)), matmul_nt(h, g.leaf(u))), g.leaf(b));
}
}  // namespace detail

// z = sig(Wz x + Uz h + bz); r = sig(Wr x + Ur h + br);
// hcand = tanh(Wh x + Uh (r . h) + bh); h' = (1-z) . h + z . hcand
template <typename S>
Var<S> gru_step(Graph<S>& g, Var<S> x, Var<S> h_prev, const RnnWeights<S>& w) {
  auto z = sigmoid(detail::gate_preact(g, x, h_prev, *w.w[0], *w.u[0], *w.b[0]));
  auto r = sigmoid(detail::gate_preact(g, x, h_prev, *w.w[1], *w.u[1], *w.b[1]));
  auto cand = tanh(add_rowvec(
      add(matmul_nt(x, g.leaf(*w.w[2])), matmul_nt(mul(r, h_prev), g.leaf(*w.u[2]))),
      g.leaf(*w.b[2])));
  return add(sub(h_prev, mul(z, h_prev)), mul(z, cand));
}

template <typename S>
struct LstmOut {
  Var<S> h, c;
};

template <typename S>
LstmOut<S> lstm_step(Graph<S>& g, Var<S> x, Var<S> h_prev, Var<S> c_prev,
                     const RnnWeights<S>& w) {
  auto i = sigmoid(detail::gate_preact(g, x, h_prev, *w.w[0], *w.u[0], *w.b[0]));
  auto f = sigmoid(detail::gate_preact(g, x, h_prev, *w.w[1], *w.u[1], *w.b[1]));
  auto o = sigmoid(detail::gate_preact(g, x, h_prev, *w.w[2], *w.u[2], *w.b[2]));
  auto cand = tanh(detail::gate_preact(g, x, h_prev, *w.w[3], *w.u[3], *w.b[3]));
  auto c = add(mul(f, c_prev), mul(i, cand));
  auto h = mul(o, tanh(c));
  return {h, c};
}

// ---- triangle attention (sequence form) ----

// Lower-triangular softmax mix: row i of the result attends over steps
// 0..i of `values` with per-step scores `s` (n x 1). One masked pass
// produces every prefix output, which is what makes all-step training
// affordable.
template <typename S>
Var<S> triangle_mix(Graph<S>& g, Var<S> s, Var<S> values,
                    MaskMode mode = MaskMode::prefix_softmax) {
  const int n = static_cast<int>(s.rows());
  if (n == 0 || s.cols() != 1)
    throw DimensionError("triangle_mix: scores must be n x 1, got " +
                         shape_str(s.rows(), s.cols()));
  if (values.rows() != n)
    throw DimensionError("triangle_mix: values rows " +
                         std::to_string(values.rows()) + " != scores " +
                         std::to_string(n));
  auto ones = g.constant(Mat<S>::Ones(n, 1));
  auto score_rows = matmul(ones, transpose(s));  // row i = s^T
  std::vector<int> valid(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) valid[static_cast<size_t>(i)] = i + 1;
  auto alpha = masked_softmax_rows(score_rows, valid, mode);
  return matmul(alpha, values);
}

// p_i = tanh(W_s h_time_i + b_s); score_j = p_j . h_session_j; row i of the
// output is the softmax-weighted sum of h_session_0..i.
template <typename S>
Var<S> triangle_attention(Graph<S>& g, Var<S> h_session_seq, Var<S> h_time_seq,
                          Tensor<S>& w_s, Tensor<S>& b_s,
                          MaskMode mode = MaskMode::prefix_softmax) {
  if (h_session_seq.rows() == 0)
    return g.constant(Mat<S>(0, h_session_seq.cols()));
  auto p = tanh(add_rowvec(matmul_nt(h_time_seq, g.leaf(w_s)), g.leaf(b_s)));
  auto s = sum_cols(mul(p, h_session_seq));
  return triangle_mix(g, s, h_session_seq, mode);
}

// Per-prefix attention rows over user-affinity scores p_i . e_u; row i holds
// the i+1 weights of prefix i.
template <typename S>
Var<S> user_attention(Graph<S>& g, Var<S> p_seq, Var<S> e_u,
                      MaskMode mode = MaskMode::prefix_softmax) {
  if (e_u.rows() != 1 || e_u.cols() != p_seq.cols())
    throw DimensionError("user_attention: e_u must be 1 x " +
                         std::to_string(p_seq.cols()) + ", got " +
                         shape_str(e_u.rows(), e_u.cols()));
  auto s = matmul_nt(p_seq, e_u);  // n x 1
  const int n = static_cast<int>(p_seq.rows());
  auto ones = g.constant(Mat<S>::Ones(n, 1));
  std::vector<int> valid(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) valid[static_cast<size_t>(i)] = i + 1;
  return masked_softmax_rows(matmul(ones, transpose(s)), valid, mode);
}

// concat(h, e_u) -> affine -> tanh, back to hidden_dim.
template <typename S>
Var<S> fuse_user_cat(Graph<S>& g, Var<S> h, Var<S> e_u, Tensor<S>& w, Tensor<S>& b) {
  return tanh(add_rowvec(matmul_nt(concat_cols(h, e_u), g.leaf(w)), g.leaf(b)));
}

// ---- streaming attention (per-slice form) ----

// One new step per lane against a detached per-lane history. Forward equals
// the matching row of triangle_mix; backward flows into the new step only,
// which is exactly the one-step-per-optimizer-update training scheme.
template <typename S>
Var<S> streaming_attention(Graph<S>& g, Var<S> h_new, Var<S> s_new,
                           const std::vector<std::vector<Mat<S>>>& hist_h,
                           const std::vector<std::vector<S>>& hist_s) {
  const int B = static_cast<int>(h_new.rows());
  const Eigen::Index d = h_new.cols();
  if (s_new.rows() != B || s_new.cols() != 1)
    throw DimensionError("streaming_attention: scores must be B x 1");
  if (static_cast<int>(hist_h.size()) != B || static_cast<int>(hist_s.size()) != B)
    throw DimensionError("streaming_attention: history size != batch");

  // Snapshot history: the caller's carry may mutate before backward runs.
  auto hh = std::make_shared<std::vector<Mat<S>>>();
  auto hs = std::make_shared<std::vector<std::vector<S>>>(hist_s);
  hh->reserve(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b) {
    const auto& rows = hist_h[static_cast<size_t>(b)];
    Mat<S> m(static_cast<Eigen::Index>(rows.size()), d);
    for (size_t j = 0; j < rows.size(); ++j) m.row(static_cast<Eigen::Index>(j)) = rows[j];
    hh->push_back(std::move(m));
  }

  Mat<S> q = Mat<S>::Zero(B, d);
  auto weights = std::make_shared<std::vector<Eigen::Array<S, Eigen::Dynamic, 1>>>();
  weights->reserve(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b) {
    const auto& m = (*hh)[static_cast<size_t>(b)];
    const auto& past = (*hs)[static_cast<size_t>(b)];
    const Eigen::Index L = m.rows() + 1;
    Eigen::Array<S, Eigen::Dynamic, 1> sc(L);
    for (Eigen::Index j = 0; j + 1 < L; ++j) sc(j) = past[static_cast<size_t>(j)];
    sc(L - 1) = s_new.value()(b, 0);
    sc -= sc.maxCoeff();
    sc = sc.exp();
    sc /= sc.sum();
    for (Eigen::Index j = 0; j + 1 < L; ++j) q.row(b) += sc(j) * m.row(j);
    q.row(b) += sc(L - 1) * h_new.value().row(b);
    weights->push_back(sc);
    g.mac_count += static_cast<uint64_t>(L) * (2 + static_cast<uint64_t>(d));
  }

  int ih = h_new.id, is = s_new.id;
  bool rg = detail::needs_grad(g, ih, is);
  return g.push(std::move(q), rg, nullptr,
                [ih, is, hh, weights](Graph<S>& gr, typename Graph<S>::Node& n) {
                  auto& hn = gr.node(ih);
                  auto& sn = gr.node(is);
                  const int B = static_cast<int>(n.value.rows());
                  Mat<S> dh = Mat<S>::Zero(hn.value.rows(), hn.value.cols());
                  Mat<S> ds = Mat<S>::Zero(B, 1);
                  for (int b = 0; b < B; ++b) {
                    const auto& w = (*weights)[static_cast<size_t>(b)];
                    const auto& m = (*hh)[static_cast<size_t>(b)];
                    const Eigen::Index L = w.size();
                    dh.row(b) = w(L - 1) * n.grad.row(b);
                    // d alpha_j = dq . value_j; softmax backward, but only the
                    // final (in-graph) score receives gradient
                    Eigen::Array<S, Eigen::Dynamic, 1> da(L);
                    for (Eigen::Index j = 0; j + 1 < L; ++j)
                      da(j) = n.grad.row(b).dot(m.row(j));
                    da(L - 1) = n.grad.row(b).dot(hn.value.row(b));
                    const S dot = (w * da).sum();
                    ds(b, 0) = w(L - 1) * (da(L - 1) - dot);
                  }
                  detail::accum(gr, ih, dh);
                  detail::accum(gr, is, ds);
                });
}

// ---- scoring ----

template <typename S>
struct ScoreContext {
  std::vector<int> user_ids;
  std::vector<int> time_bin_ids;
  std::vector<S> dev;  // precomputed dev_u(t) per lane; empty when disabled
};

template <typename S>
ScoreContext<S> make_context(const Model<S>& m, const std::vector<int>& users,
                             const std::vector<int>& bins,
                             const std::vector<int64_t>& ts) {
  ScoreContext<S> ctx;
  ctx.user_ids = users;
  ctx.time_bin_ids = bins;
  if (m.cfg.dev_on()) {
    const Tensor<S>& mean_ts = m.params.get(names::user_mean_ts);
    ctx.dev.reserve(ts.size());
    for (size_t i = 0; i < ts.size(); ++i) {
      S days = static_cast<S>(static_cast<double>(ts[i]) / 86400.0);
      ctx.dev.push_back(dev_value<S>(days, mean_ts.value(users[i], 0), m.cfg.dev_beta));
    }
  }
  return ctx;
}

template <typename S>
ScoreContext<S> make_context(const Model<S>& m, const BatchSlice& slice) {
  return make_context(m, slice.user_ids, slice.time_bin_ids, slice.step_ts);
}

// q projected into item-embedding space when dims differ.
template <typename S>
Var<S> project_to_item_space(Graph<S>& g, Model<S>& m, Var<S> q) {
  if (m.cfg.hidden_dim == m.cfg.item_dim) return q;
  return matmul_nt(q, g.leaf(m.params.get(names::score_proj)));
}

namespace detail {

// Per-lane bias column: mu + b_u + alpha_u * dev(t); item-independent.
template <typename S>
std::optional<Var<S>> lane_bias(Graph<S>& g, Model<S>& m, const ScoreContext<S>& ctx,
                                int B) {
  std::optional<Var<S>> out;
  auto acc = [&](Var<S> v) { out = out ? add(*out, v) : v; };
  if (m.cfg.mu_on())
    acc(matmul(g.constant(Mat<S>::Ones(B, 1)), g.leaf(m.params.get(names::bias_mu))));
  if (m.cfg.user_bias_on())
    acc(embedding_lookup(g.leaf(m.params.get(names::bias_user)), ctx.user_ids));
  if (m.cfg.dev_on()) {
    Mat<S> devs(B, 1);
    for (int b = 0; b < B; ++b) devs(b, 0) = ctx.dev[static_cast<size_t>(b)];
    acc(mul(embedding_lookup(g.leaf(m.params.get(names::bias_alpha_u)), ctx.user_ids),
            g.constant(std::move(devs))));
  }
  return out;
}

}  // namespace detail

// Raw scores q . e_k + mu + b_u + alpha_u*dev + b_i + b_it over a shared
// candidate list (empty = full vocabulary). Any activation g() belongs to
// the loss layer, not here.
template <typename S>
Var<S> score_items(Graph<S>& g, Model<S>& m, Var<S> q,
                   const std::vector<int>& candidate_ids, const ScoreContext<S>& ctx) {
  const int B = static_cast<int>(q.rows());
  const bool full = candidate_ids.empty();
  const int C = full ? m.cfg.num_items : static_cast<int>(candidate_ids.size());

  auto qp = project_to_item_space(g, m, q);
  auto table = g.leaf(m.params.get(names::item_embed));
  auto cand = full ? table : embedding_lookup(table, candidate_ids);
  auto scores = matmul_nt(qp, cand);

  if (auto lane = detail::lane_bias(g, m, ctx, B)) scores = add_colvec(scores, *lane);

  if (m.cfg.item_bias_on()) {
    auto bi = g.leaf(m.params.get(names::bias_item));
    auto row = transpose(full ? bi : embedding_lookup(bi, candidate_ids));
    scores = add_rowvec(scores, row);
  }
  if (m.cfg.item_time_bias_on()) {
    if (m.cfg.bit_full_table) {
      auto rows = embedding_lookup(g.leaf(m.params.get(names::bias_it_full)),
                                   ctx.time_bin_ids);  // B x V
      if (!full) {
        Mat<S> sel = Mat<S>::Zero(m.cfg.num_items, C);
        for (int c = 0; c < C; ++c) sel(candidate_ids[static_cast<size_t>(c)], c) = S(1);
        rows = matmul(rows, g.constant(std::move(sel)));
      }
      scores = add(scores, rows);
    } else {
      auto ci = g.leaf(m.params.get(names::bias_it_ci));
      auto ci_col = full ? ci : embedding_lookup(ci, candidate_ids);
      auto ct = embedding_lookup(g.leaf(m.params.get(names::bias_it_ct)), ctx.time_bin_ids);
      auto ct0 = embedding_lookup(g.leaf(m.params.get(names::bias_it_ct0)), ctx.time_bin_ids);
      scores = add(scores, matmul(ct, transpose(ci_col)));
      scores = add_colvec(scores, ct0);
    }
  }
  return scores;
}

// Per-lane scores for lane-specific ids (targets or sampled negatives),
// sharing the bias structure of score_items.
template <typename S>
Var<S> score_ids_per_lane(Graph<S>& g, Model<S>& m, Var<S> q_projected,
                          const std::vector<int>& ids, const ScoreContext<S>& ctx) {
  const int B = static_cast<int>(q_projected.rows());
  auto table = g.leaf(m.params.get(names::item_embed));
  auto e = embedding_lookup(table, ids);            // B x d_i
  auto scores = sum_cols(mul(q_projected, e));      // B x 1

  if (auto lane = detail::lane_bias(g, m, ctx, B)) scores = add(scores, *lane);
  if (m.cfg.item_bias_on())
    scores = add(scores, embedding_lookup(g.leaf(m.params.get(names::bias_item)), ids));
  if (m.cfg.item_time_bias_on()) {
    if (m.cfg.bit_full_table) {
      auto rows = embedding_lookup(g.leaf(m.params.get(names::bias_it_full)),
                                   ctx.time_bin_ids);  // B x V
      Mat<S> sel = Mat<S>::Zero(m.cfg.num_items, B);
      for (int b = 0; b < B; ++b) sel(ids[static_cast<size_t>(b)], b) = S(1);
      scores = add(scores, sum_cols(mul(rows, transpose(g.constant(std::move(sel))))));
    } else {
      auto ci = embedding_lookup(g.leaf(m.params.get(names::bias_it_ci)), ids);
      auto ct = embedding_lookup(g.leaf(m.params.get(names::bias_it_ct)), ctx.time_bin_ids);
      auto ct0 = embedding_lookup(g.leaf(m.params.get(names::bias_it_ct0)), ctx.time_bin_ids);
      scores = add(scores, add(mul(ci, ct), ct0));
    }
  }
  return scores;
}

// ---- streaming forward (one slice, B lanes) ----

// Detached per-lane state carried across optimizer steps. Attention history
// holds the current session's hidden rows and scores since the last reset.
template <typename S>
struct LaneCarry {
  Mat<S> h_item, c_item;
  Mat<S> h_time, c_time;
  std::vector<std::vector<Mat<S>>> att_h;
  std::vector<std::vector<S>> att_s;

  void ensure(int B, int d_h, bool time_branch, bool lstm) {
    if (h_item.rows() == B) return;
    h_item = Mat<S>::Zero(B, d_h);
    if (lstm) c_item = Mat<S>::Zero(B, d_h);
    if (time_branch) {
      h_time = Mat<S>::Zero(B, d_h);
      if (lstm) c_time = Mat<S>::Zero(B, d_h);
    }
    att_h.assign(static_cast<size_t>(B), {});
    att_s.assign(static_cast<size_t>(B), {});
  }

  void reset_lane(int b) {
    h_item.row(b).setZero();
    if (c_item.size()) c_item.row(b).setZero();
    if (h_time.size()) h_time.row(b).setZero();
    if (c_time.size()) c_time.row(b).setZero();
    att_h[static_cast<size_t>(b)].clear();
    att_s[static_cast<size_t>(b)].clear();
  }
};

struct StepOptions {
  bool train = false;   // enables dropout
  Rng* rng = nullptr;   // required when train && dropout > 0
};

namespace detail {

template <typename S>
Var<S> rnn_apply(Graph<S>& g, Model<S>& m, const std::string& prefix, Var<S> x,
                 LaneCarry<S>& carry, bool time_branch) {
  auto w = rnn_weights(m, prefix);
  Mat<S>& h_store = time_branch ? carry.h_time : carry.h_item;
  auto h_prev = g.constant(h_store);
  Var<S> h;
  if (m.cfg.cell == RnnCell::gru) {
    h = gru_step(g, x, h_prev, w);
  } else {
    Mat<S>& c_store = time_branch ? carry.c_time : carry.c_item;
    auto out = lstm_step(g, x, h_prev, g.constant(c_store), w);
    h = out.h;
    c_store = out.c.value();
  }
  h_store = h.value();
  return h;
}

template <typename S>
Var<S> maybe_dropout(Graph<S>& g, Var<S> x, const ModelConfig& cfg,
                     const StepOptions& opt) {
  if (!opt.train || cfg.dropout <= 0) return x;
  if (!opt.rng) throw ConfigError("model step: training dropout needs an rng");
  return dropout(x, cfg.dropout, *opt.rng);
}

}  // namespace detail

// Advances every lane by one step and returns the session representation q
// (B x hidden_dim). Hidden state and attention history are reset where
// reset_mask is set, then updated with this step's values; gradients flow
// through the current step only.
template <typename S>
Var<S> model_step(Graph<S>& g, Model<S>& m, const BatchSlice& slice,
                  LaneCarry<S>& carry, const StepOptions& opt = {}) {
  const int B = slice.batch_size();
  const ModelConfig& cfg = m.cfg;
  carry.ensure(B, cfg.hidden_dim, cfg.uses_time_branch(), cfg.cell == RnnCell::lstm);
  for (int b = 0; b < B; ++b)
    if (slice.reset_mask[static_cast<size_t>(b)]) carry.reset_lane(b);

  auto x_item = embedding_lookup(g.leaf(m.params.get(names::item_embed)), slice.input_ids);
  Var<S> x;
  if (cfg.variant == Variant::time_cat) {
    auto x_time = embedding_lookup(g.leaf(m.params.get(names::time_embed)),
                                   slice.time_bin_ids);
    x = detail::maybe_dropout(g, concat_cols(x_item, x_time), cfg, opt);
  } else {
    x = detail::maybe_dropout(g, x_item, cfg, opt);
  }
  auto h = detail::rnn_apply(g, m, "rnn_item", x, carry, false);

  Var<S> q = h;
  Var<S> s_new;  // attention score of the current step, when applicable
  bool has_attention = false;

  if (cfg.uses_time_branch()) {
    auto x_time = detail::maybe_dropout(
        g, embedding_lookup(g.leaf(m.params.get(names::time_embed)), slice.time_bin_ids),
        cfg, opt);
    auto h_time = detail::rnn_apply(g, m, "rnn_time", x_time, carry, true);
    if (!cfg.attention_bypass) {
      auto p = tanh(add_rowvec(matmul_nt(h_time, g.leaf(m.params.get(names::att_w_s))),
                               g.leaf(m.params.get(names::att_b_s))));
      s_new = sum_cols(mul(p, h));
      q = streaming_attention(g, h, s_new, carry.att_h, carry.att_s);
      has_attention = true;
    }
  } else if (cfg.variant == Variant::user_att && !cfg.attention_bypass) {
    auto p = tanh(add_rowvec(matmul_nt(h, g.leaf(m.params.get(names::att_w_s))),
                             g.leaf(m.params.get(names::att_b_s))));
    auto e_u = embedding_lookup(g.leaf(m.params.get(names::user_embed)), slice.user_ids);
    auto e_u_h = m.params.has(names::att_user_proj)
                     ? matmul_nt(e_u, g.leaf(m.params.get(names::att_user_proj)))
                     : e_u;
    s_new = sum_cols(mul(p, e_u_h));
    q = streaming_attention(g, h, s_new, carry.att_h, carry.att_s);
    has_attention = true;
  }

  if (cfg.uses_user_cat()) {
    auto e_u = embedding_lookup(g.leaf(m.params.get(names::user_embed)), slice.user_ids);
    q = fuse_user_cat(g, q, e_u, m.params.get(names::fuse_w), m.params.get(names::fuse_b));
  }

  if (has_attention) {
    for (int b = 0; b < B; ++b) {
      if (!slice.active_mask[static_cast<size_t>(b)]) continue;
      auto& hist = carry.att_h[static_cast<size_t>(b)];
      hist.push_back(h.value().row(b));
      carry.att_s[static_cast<size_t>(b)].push_back(s_new.value()(b, 0));
      if (static_cast<int>(hist.size()) > cfg.max_session_len) {
        hist.erase(hist.begin());
        auto& sc = carry.att_s[static_cast<size_t>(b)];
        sc.erase(sc.begin());
      }
    }
  }
  return q;
}

// ---- whole-session forward (exact gradients through every step) ----

// Unrolls one session in a single graph: full backpropagation through time
// and the one-pass triangle attention. Returns per-step q (n-1 x hidden).
template <typename S>
Var<S> session_representation(Graph<S>& g, Model<S>& m, const Session& sess,
                              const StepOptions& opt = {}) {
  const ModelConfig& cfg = m.cfg;
  const int steps = static_cast<int>(sess.num_pairs());
  if (steps == 0) throw DataError("session_representation: session has no pairs");

  auto unroll = [&](const std::string& prefix, const std::vector<Var<S>>& xs) {
    auto w = rnn_weights(m, prefix);
    Var<S> h = g.constant(Mat<S>::Zero(1, cfg.hidden_dim));
    Var<S> c = g.constant(Mat<S>::Zero(1, cfg.hidden_dim));
    std::vector<Var<S>> hs;
    for (const auto& x : xs) {
      if (cfg.cell == RnnCell::gru) {
        h = gru_step(g, x, h, w);
      } else {
        auto out = lstm_step(g, x, h, c, w);
        h = out.h;
        c = out.c;
      }
      hs.push_back(h);
    }
    return stack_rows(g, hs);
  };

  auto bin_at = [&](int t) {
    return sess.time_bins.empty() ? 0 : sess.time_bins[static_cast<size_t>(t)];
  };

  std::vector<Var<S>> x_items;
  for (int t = 0; t < steps; ++t) {
    auto x = embedding_lookup(g.leaf(m.params.get(names::item_embed)), {sess.items[static_cast<size_t>(t)]});
    if (cfg.variant == Variant::time_cat) {
      auto xt = embedding_lookup(g.leaf(m.params.get(names::time_embed)), {bin_at(t)});
      x = concat_cols(x, xt);
    }
    x_items.push_back(detail::maybe_dropout(g, x, cfg, opt));
  }
  auto H = unroll("rnn_item", x_items);

  const MaskMode mode =
      cfg.attention_zero_fill ? MaskMode::zero_fill : MaskMode::prefix_softmax;
  Var<S> Q = H;
  if (cfg.uses_time_branch() && !cfg.attention_bypass) {
    std::vector<Var<S>> x_times;
    for (int t = 0; t < steps; ++t)
      x_times.push_back(detail::maybe_dropout(
          g, embedding_lookup(g.leaf(m.params.get(names::time_embed)), {bin_at(t)}),
          cfg, opt));
    auto Ht = unroll("rnn_time", x_times);
    Q = triangle_attention(g, H, Ht, m.params.get(names::att_w_s),
                           m.params.get(names::att_b_s), mode);
  } else if (cfg.variant == Variant::user_att && !cfg.attention_bypass) {
    auto p = tanh(add_rowvec(matmul_nt(H, g.leaf(m.params.get(names::att_w_s))),
                             g.leaf(m.params.get(names::att_b_s))));
    auto e_u = embedding_lookup(g.leaf(m.params.get(names::user_embed)), {sess.user});
    auto e_u_h = m.params.has(names::att_user_proj)
                     ? matmul_nt(e_u, g.leaf(m.params.get(names::att_user_proj)))
                     : e_u;
    auto s = matmul_nt(p, e_u_h);
    Q = triangle_mix(g, s, H, mode);
  }

  if (cfg.uses_user_cat()) {
    auto e_u = embedding_lookup(g.leaf(m.params.get(names::user_embed)), {sess.user});
    auto e_rep = matmul(g.constant(Mat<S>::Ones(steps, 1)), e_u);
    Q = fuse_user_cat(g, Q, e_rep, m.params.get(names::fuse_w), m.params.get(names::fuse_b));
  }
  return Q;
}

// Full-vocabulary scores for every step of one session.
template <typename S>
Var<S> session_scores(Graph<S>& g, Model<S>& m, const Session& sess,
                      const StepOptions& opt = {}) {
  auto Q = session_representation(g, m, sess, opt);
  const int steps = static_cast<int>(sess.num_pairs());
  std::vector<int> users(static_cast<size_t>(steps), sess.user);
  std::vector<int> bins(static_cast<size_t>(steps), 0);
  if (!sess.time_bins.empty())
    bins.assign(sess.time_bins.begin(), sess.time_bins.begin() + steps);
  std::vector<int64_t> ts(static_cast<size_t>(steps), sess.start_ts);
  if (!sess.ts.empty()) ts.assign(sess.ts.begin(), sess.ts.begin() + steps);
  auto ctx = make_context(m, users, bins, ts);
  return score_items(g, m, Q, {}, ctx);
}

}  // namespace asars
