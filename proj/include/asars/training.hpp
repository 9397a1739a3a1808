#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <limits>
#include <optional>

#include "asars/eval.hpp"
#include "asars/model.hpp"

namespace asars {

enum class LossKind { bpr, top1, hinge };
enum class OptKind { adagrad, adam };

std::string to_string(LossKind k);
LossKind loss_from_string(const std::string& s);
std::string to_string(OptKind k);
OptKind opt_from_string(const std::string& s);

struct TrainConfig {
  LossKind loss = LossKind::hinge;
  OptKind optimizer = OptKind::adagrad;
  double learning_rate = 0.2;
  int batch_size = 64;
  int epochs_max = 20;
  int early_stop_patience = 10;
  int k_neg = 50;
  uint64_t seed = 1;
  BatchMode batch_mode = BatchMode::session_parallel;
  double val_fraction = 0.1;
  bool exclude_user_history = true;
  bool global_fallback = true;
  bool literal_loss_forms = false;  // flipped TOP1/hinge orientation, ablation only
  bool shuffle_sessions = false;
  int eval_batch_size = 64;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
    if (k_neg < 1) throw ConfigError("k_neg must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs_max < 1) throw ConfigError("epochs_max must be >= 1");
    if (!(val_fraction > 0 && val_fraction < 1))
      throw ConfigError("val_fraction must be in (0,1)");
  }
};

// ---- pairwise ranking losses ----

// pos: B x 1 target scores, neg: B x k sampled-negative scores; the mean runs
// over all active (lane, negative) pairs. Scores enter raw; the sigmoid lives
// inside the loss itself.
template <typename S>
Var<S> pairwise_loss(Graph<S>& g, LossKind kind, Var<S> pos, Var<S> neg,
                     const std::vector<uint8_t>& active, bool literal_form = false) {
  const int B = static_cast<int>(pos.rows());
  const int k = static_cast<int>(neg.cols());
  if (pos.cols() != 1 || neg.rows() != B)
    throw DimensionError("pairwise_loss: pos must be Bx1 and neg BxK");
  for (int b = 0; b < B; ++b) {
    if (!active[static_cast<size_t>(b)]) continue;
    if (!std::isfinite(static_cast<double>(pos.value()(b, 0))))
      throw DataError("pairwise_loss: non-finite positive score in lane " +
                      std::to_string(b));
    for (int j = 0; j < k; ++j)
      if (!std::isfinite(static_cast<double>(neg.value()(b, j))))
        throw DataError("pairwise_loss: non-finite negative score in lane " +
                        std::to_string(b));
  }
  int n_active = 0;
  for (uint8_t a : active) n_active += a ? 1 : 0;
  if (n_active == 0) throw DataError("pairwise_loss: no active lanes");

  auto pos_b = matmul(pos, g.constant(Mat<S>::Ones(1, k)));  // broadcast B x k
  auto diff = sub(neg, pos_b);                               // r_neg - r_pos

  Var<S> terms;
  switch (kind) {
    case LossKind::bpr:
      // -log sigmoid(pos - neg) == softplus(neg - pos)
      terms = softplus(diff);
      break;
    case LossKind::top1:
      terms = literal_form
                  ? add(sigmoid(scale(diff, S(-1))), sigmoid(mul(pos_b, pos_b)))
                  : add(sigmoid(diff), sigmoid(mul(neg, neg)));
      break;
    case LossKind::hinge: {
      auto one = g.constant(Mat<S>::Ones(B, k));
      terms = literal_form ? relu(add(scale(diff, S(-1)), one))
                           : relu(add(diff, one));
      break;
    }
  }
  Mat<S> mask = Mat<S>::Zero(B, k);
  for (int b = 0; b < B; ++b)
    if (active[static_cast<size_t>(b)]) mask.row(b).setOnes();
  auto masked = mul(terms, g.constant(std::move(mask)));
  return scale(sum(masked), S(1) / static_cast<S>(n_active * k));
}

// ---- local negative sampling ----

struct NegativeSet {
  std::vector<std::vector<int>> ids;  // per lane, k_neg entries (empty if inactive)
};

// Draws negatives proportional to item popularity within the current
// mini-batch, excluding the lane's target and the user's train history;
// exhausted pools fall back to global popularity with the same exclusions.
class NegativeSampler {
 public:
  NegativeSampler(const Corpus& corpus, bool exclude_history, bool global_fallback)
      : exclude_history_(exclude_history),
        global_fallback_(global_fallback),
        histories_(&corpus.user_history) {
    global_items_.reserve(corpus.popularity.size());
    global_cum_.reserve(corpus.popularity.size());
    double run = 0;
    for (size_t i = 0; i < corpus.popularity.size(); ++i) {
      if (corpus.popularity[i] <= 0) continue;
      run += static_cast<double>(corpus.popularity[i]);
      global_items_.push_back(static_cast<int>(i));
      global_cum_.push_back(run);
    }
  }

  NegativeSet sample(const BatchSlice& slice, int k_neg, Rng& rng) const {
    // in-batch pool over inputs and targets of active lanes
    std::map<int, int> counts;
    for (int b = 0; b < slice.batch_size(); ++b) {
      if (!slice.active_mask[static_cast<size_t>(b)]) continue;
      ++counts[slice.input_ids[static_cast<size_t>(b)]];
      ++counts[slice.target_ids[static_cast<size_t>(b)]];
    }
    if (counts.size() < 2 && !global_fallback_)
      throw DataError("negative sampling: mini-batch pool has fewer than 2 distinct items "
                      "and global fallback is disabled");
    std::vector<int> pool_items;
    std::vector<double> pool_cum;
    double run = 0;
    for (const auto& [item, cnt] : counts) {
      run += cnt;
      pool_items.push_back(item);
      pool_cum.push_back(run);
    }

    NegativeSet out;
    out.ids.resize(static_cast<size_t>(slice.batch_size()));
    for (int b = 0; b < slice.batch_size(); ++b) {
      if (!slice.active_mask[static_cast<size_t>(b)]) continue;
      const int target = slice.target_ids[static_cast<size_t>(b)];
      const std::set<int>* hist = nullptr;
      if (exclude_history_ && histories_ && !histories_->empty())
        hist = &(*histories_)[static_cast<size_t>(slice.user_ids[static_cast<size_t>(b)])];
      auto rejected = [&](int item) {
        return item == target || (hist && hist->count(item));
      };
      auto& lane = out.ids[static_cast<size_t>(b)];
      lane.reserve(static_cast<size_t>(k_neg));
      for (int j = 0; j < k_neg; ++j) {
        int item = -1;
        for (int attempt = 0; attempt < kPoolAttempts; ++attempt) {
          int cand = draw(pool_items, pool_cum, rng);
          if (!rejected(cand)) {
            item = cand;
            break;
          }
        }
        if (item < 0 && global_fallback_) {
          for (int attempt = 0; attempt < kGlobalAttempts; ++attempt) {
            int cand = draw(global_items_, global_cum_, rng);
            if (!rejected(cand)) {
              item = cand;
              break;
            }
          }
        }
        if (item < 0)
          throw DataError("negative sampling: cannot draw a valid negative for lane " +
                          std::to_string(b) + " (exclusions too strict)");
        lane.push_back(item);
      }
    }
    return out;
  }

 private:
  static constexpr int kPoolAttempts = 64;
  static constexpr int kGlobalAttempts = 4096;

  static int draw(const std::vector<int>& items, const std::vector<double>& cum, Rng& rng) {
    if (items.empty()) return -1;
    double u = rng.uniform() * cum.back();
    auto it = std::upper_bound(cum.begin(), cum.end(), u);
    size_t idx = static_cast<size_t>(it - cum.begin());
    if (idx >= items.size()) idx = items.size() - 1;
    return items[idx];
  }

  bool exclude_history_;
  bool global_fallback_;
  const std::vector<std::set<int>>* histories_;
  std::vector<int> global_items_;
  std::vector<double> global_cum_;
};

// ---- optimizers ----

template <typename S>
class Optimizer {
 public:
  Optimizer(OptKind kind, double lr) : kind_(kind), lr_(lr) {}

  // Adagrad: acc += g^2; theta -= lr * g / sqrt(acc + 1e-10)
  // Adam: beta1=0.9, beta2=0.999, eps=1e-8, bias-corrected moments
  void step(ParamStore<S>& params) {
    ensure_state(params);
    ++t_;
    for (size_t i = 0; i < params.count(); ++i) {
      Tensor<S>& p = params.at(i);
      if (!p.requires_grad) continue;
      const Mat<S>& grad = p.grad;
      if (kind_ == OptKind::adagrad) {
        acc_[i].array() += grad.array().square();
        p.value.array() -=
            S(lr_) * grad.array() / (acc_[i].array() + S(1e-10)).sqrt();
      } else {
        m_[i] = S(0.9) * m_[i] + S(0.1) * grad;
        v_[i].array() = S(0.999) * v_[i].array() + S(0.001) * grad.array().square();
        const double bc1 = 1.0 - std::pow(0.9, t_);
        const double bc2 = 1.0 - std::pow(0.999, t_);
        p.value.array() -= S(lr_) * (m_[i].array() / S(bc1)) /
                           ((v_[i].array() / S(bc2)).sqrt() + S(1e-8));
      }
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  void ensure_state(ParamStore<S>& params) {
    if (!acc_.empty() || !m_.empty()) return;
    for (size_t i = 0; i < params.count(); ++i) {
      const auto& v = params.at(i).value;
      if (kind_ == OptKind::adagrad) {
        acc_.push_back(Mat<S>::Zero(v.rows(), v.cols()));
      } else {
        m_.push_back(Mat<S>::Zero(v.rows(), v.cols()));
        v_.push_back(Mat<S>::Zero(v.rows(), v.cols()));
      }
    }
  }

  OptKind kind_;
  double lr_;
  int64_t t_ = 0;
  std::vector<Mat<S>> acc_;
  std::vector<Mat<S>> m_, v_;
};

// ---- training loop ----

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_mrr20 = 0;
  double seconds = 0;
  size_t steps = 0;
  size_t examples = 0;
};

namespace detail {

// Scores one slice's targets and sampled negatives off a shared q.
template <typename S>
struct SliceScores {
  Var<S> pos;
  Var<S> neg;
};

template <typename S>
SliceScores<S> slice_scores(Graph<S>& g, Model<S>& m, const BatchSlice& slice,
                            Var<S> q, const NegativeSet& negs, int k_neg,
                            const ScoreContext<S>& ctx) {
  auto qp = project_to_item_space(g, m, q);
  auto pos = score_ids_per_lane(g, m, qp, slice.target_ids, ctx);
  std::vector<Var<S>> cols;
  cols.reserve(static_cast<size_t>(k_neg));
  std::vector<int> ids(static_cast<size_t>(slice.batch_size()), 0);
  for (int j = 0; j < k_neg; ++j) {
    for (int b = 0; b < slice.batch_size(); ++b) {
      const auto& lane = negs.ids[static_cast<size_t>(b)];
      ids[static_cast<size_t>(b)] = lane.empty() ? 0 : lane[static_cast<size_t>(j)];
    }
    cols.push_back(score_ids_per_lane(g, m, qp, ids, ctx));
  }
  Var<S> neg = cols[0];
  for (size_t j = 1; j < cols.size(); ++j) neg = concat_cols(neg, cols[j]);
  return {pos, neg};
}

}  // namespace detail

// One pass over the slice stream: every step of every session is a training
// example (the data augmentation), one optimizer step per slice.
template <typename S>
EpochStats train_epoch(Model<S>& m, SliceStream& stream, const NegativeSampler& sampler,
                       const TrainConfig& cfg, Optimizer<S>& opt, LaneCarry<S>& carry,
                       Rng& rng) {
  EpochStats stats;
  Graph<S> g;
  BatchSlice slice;
  double loss_sum = 0;
  size_t slices = 0;
  StepOptions step_opt{true, &rng};
  while (stream.next(slice)) {
    g.reset();
    auto q = model_step(g, m, slice, carry, step_opt);
    auto negs = sampler.sample(slice, cfg.k_neg, rng);
    auto scored = detail::slice_scores(g, m, slice, q, negs, cfg.k_neg,
                                       make_context(m, slice));
    auto loss = pairwise_loss(g, cfg.loss, scored.pos, scored.neg, slice.active_mask,
                              cfg.literal_loss_forms);
    const double lv = static_cast<double>(loss.value()(0, 0));
    if (!std::isfinite(lv))
      throw DataError("train_epoch: non-finite loss at slice " + std::to_string(slices) +
                      " (epoch aborted)");
    g.backward(loss);
    opt.step(m.params);
    m.params.zero_grad();
    loss_sum += lv;
    ++slices;
    stats.examples += static_cast<size_t>(slice.active_count());
  }
  stats.steps = slices;
  stats.train_loss = slices ? loss_sum / static_cast<double>(slices) : 0.0;
  return stats;
}

// Validation loss over a stream with dropout off, fixed-seed negatives, and
// no parameter updates; comparable across epochs.
template <typename S>
double validation_loss(Model<S>& m, SliceStream& stream, const NegativeSampler& sampler,
                       const TrainConfig& cfg, uint64_t neg_seed) {
  Rng rng(neg_seed);
  Graph<S> g;
  BatchSlice slice;
  LaneCarry<S> carry;
  double loss_sum = 0;
  size_t slices = 0;
  stream.restart();
  while (stream.next(slice)) {
    g.reset();
    auto q = model_step(g, m, slice, carry);
    auto negs = sampler.sample(slice, cfg.k_neg, rng);
    auto scored = detail::slice_scores(g, m, slice, q, negs, cfg.k_neg,
                                       make_context(m, slice));
    auto loss = pairwise_loss(g, cfg.loss, scored.pos, scored.neg, slice.active_mask,
                              cfg.literal_loss_forms);
    loss_sum += static_cast<double>(loss.value()(0, 0));
    ++slices;
  }
  return slices ? loss_sum / static_cast<double>(slices) : 0.0;
}

struct FitResult {
  std::vector<EpochStats> history;
  int best_epoch = 0;
  double best_val_loss = 0;
  double best_val_mrr20 = 0;
};

struct FitHooks {
  // Testing seam for the early-stop rule; replaces the computed val loss.
  std::function<double(int)> val_loss_override;
  std::function<void(const EpochStats&)> on_epoch;
};

namespace detail {

// Carves the last `fraction` of train sessions (by end time) into an
// in-training validation split, mirroring the test-boundary construction.
inline std::pair<Corpus, Corpus> carve_validation(const Corpus& corpus, double fraction) {
  std::vector<size_t> train = corpus.train_indices();
  std::vector<size_t> order = train;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return corpus.sessions[a].end_ts < corpus.sessions[b].end_ts;
  });
  size_t n_val = std::max<size_t>(1, static_cast<size_t>(
                                         std::floor(fraction * static_cast<double>(order.size()))));
  if (n_val >= order.size()) n_val = order.size() - 1;
  std::set<size_t> val_set(order.end() - static_cast<long>(n_val), order.end());

  Corpus fit_part = corpus;
  Corpus val_part = corpus;
  fit_part.sessions.clear();
  val_part.sessions.clear();
  for (size_t i : train) {
    if (val_set.count(i))
      val_part.sessions.push_back(corpus.sessions[i]);
    else
      fit_part.sessions.push_back(corpus.sessions[i]);
  }
  fit_part.rebuild_user_index();
  val_part.rebuild_user_index();
  return {fit_part, val_part};
}

}  // namespace detail

// Trains until epochs_max or until validation loss fails to improve for
// `early_stop_patience` consecutive evaluations; returns the model at its
// best validation loss.
template <typename S>
FitResult fit(Model<S>& m, const Corpus& corpus, const TrainConfig& cfg,
              const FitHooks& hooks = {}) {
  cfg.validate();
  auto [train_part, val_part] = detail::carve_validation(corpus, cfg.val_fraction);

  NegativeSampler sampler(corpus, cfg.exclude_user_history, cfg.global_fallback);
  Optimizer<S> opt(cfg.optimizer, cfg.learning_rate);
  Rng rng(cfg.seed);

  BatchPlanOptions plan;
  plan.mode = cfg.batch_mode;
  plan.batch_size = cfg.batch_size;
  plan.max_sequence_len = m.cfg.max_session_len;
  plan.shuffle_seed = cfg.shuffle_sessions ? cfg.seed : 0;
  SliceStream train_stream(train_part, plan);
  SliceStream val_stream(val_part, plan);

  FitResult result;
  ParamStore<S> best = m.params.template cast<S>();
  double best_val = std::numeric_limits<double>::infinity();
  double best_mrr = 0;
  int bad_epochs = 0;

  for (int epoch = 1; epoch <= cfg.epochs_max; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    train_stream.restart();
    LaneCarry<S> carry;
    EpochStats stats = train_epoch(m, train_stream, sampler, cfg, opt, carry, rng);
    stats.epoch = epoch;

    stats.val_loss = hooks.val_loss_override
                         ? hooks.val_loss_override(epoch)
                         : validation_loss(m, val_stream, sampler, cfg, cfg.seed ^ 0x5eedull);
    try {
      Corpus val_as_test = val_part;
      for (auto& s : val_as_test.sessions) s.is_test = true;
      stats.val_mrr20 = evaluate(m, val_as_test, {20}, cfg.eval_batch_size).mrr.at(20);
    } catch (const DataError&) {
      stats.val_mrr20 = 0;
    }
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(stats);
    if (hooks.on_epoch) hooks.on_epoch(stats);

    if (stats.val_loss < best_val) {
      best_val = stats.val_loss;
      best_mrr = stats.val_mrr20;
      result.best_epoch = epoch;
      best = m.params.template cast<S>();
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (bad_epochs >= cfg.early_stop_patience) break;
    }
  }
  // restore the best checkpoint
  for (size_t i = 0; i < m.params.count(); ++i)
    m.params.at(i).value = best.at(i).value;
  result.best_val_loss = best_val;
  result.best_val_mrr20 = best_mrr;
  return result;
}

}  // namespace asars
