#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "tipgnn/metrics.hpp"
#include "tipgnn/model.hpp"
#include "tipgnn/optim.hpp"
#include "tipgnn/temporal_graph.hpp"

namespace tipgnn {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  int64_t batch_size = 200;
  int neg_samples = 1;  // negatives per positive
  int max_epochs = 50;
  int patience = 3;
  uint64_t seed = 0;
  bool shuffle_batches = false;  // default: contiguous chronological slices

  void validate() const {
    detail::check(lr > 0, "train config: lr must be positive");
    detail::check(weight_decay >= 0, "train config: negative weight decay");
    detail::check(batch_size >= 1, "train config: batch_size < 1");
    detail::check(neg_samples >= 1, "train config: neg_samples < 1");
    detail::check(max_epochs >= 1, "train config: max_epochs < 1");
    detail::check(patience >= 1, "train config: patience < 1");
  }
};

/// Negative-sampling loss over one batch of positive interactions:
/// -(sum log p(u,v) + sum log(1-p(u,j))) / batch, j drawn uniformly per
/// positive. Stays in log-sigmoid form throughout, so saturated
/// probabilities never reach a bare log.
template <class T>
Tensor<T> link_loss(TipGnn<T>& model, const std::vector<int64_t>& batch,
                    int neg_samples, std::mt19937_64& neg_rng, bool train = false,
                    std::mt19937_64* dropout_rng = nullptr) {
  detail::check(!batch.empty(), "link_loss: empty batch");
  detail::check(neg_samples >= 1, "link_loss: neg_samples < 1");
  const TemporalGraph& g = model.graph();
  int64_t n = static_cast<int64_t>(batch.size());
  std::vector<NodeId> us, vs;
  std::vector<Timestamp> ts;
  us.reserve(n * (1 + neg_samples));
  vs.reserve(n * (1 + neg_samples));
  ts.reserve(n * (1 + neg_samples));
  for (int64_t i : batch) {
    const Interaction& e = g.interaction(i);
    us.push_back(e.src);
    vs.push_back(e.dst);
    ts.push_back(e.t);
  }
  for (int c = 0; c < neg_samples; ++c)
    for (int64_t i : batch) {
      const Interaction& e = g.interaction(i);
      us.push_back(e.src);
      vs.push_back(negative_sample_train(g, neg_rng));
      ts.push_back(e.t);
    }
  Tensor<T> logits = model.link_logits(us, vs, ts, train, dropout_rng);
  int64_t total = n * (1 + neg_samples);
  std::vector<T> sign(total, T(-1));
  std::fill(sign.begin(), sign.begin() + n, T(1));
  Tensor<T> sgn = Tensor<T>::from({total, 1}, std::move(sign));
  Tensor<T> ll = sum_all(log_sigmoid(mul(logits, sgn)));
  return scalar_mul(ll, T(-1) / static_cast<T>(n));
}

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_acc = -1.0;  // -1 when there is no validation set
  double val_auc = -1.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double best_val_auc = -1.0;
  int best_epoch = -1;
  bool stopped_early = false;
  bool hit_max_epochs = false;
  std::string abort_reason;  // non-empty if training aborted on bad numerics
};

/// Index plan for one fit: which interactions to train on, which to
/// validate on, and the boundary no training index may reach.
struct FitPlan {
  std::vector<int64_t> train;
  std::vector<int64_t> val;
  int64_t train_boundary = 0;
};

/// Transductive plan: train on everything before the split boundary,
/// validate on old-node validation interactions.
inline FitPlan transductive_plan(const TemporalGraph& g, const SplitRanges& s) {
  FitPlan plan;
  plan.train.resize(s.train_end);
  std::iota(plan.train.begin(), plan.train.end(), 0);
  plan.val = remove_new_nodes(g, s).val;
  plan.train_boundary = s.train_end;
  return plan;
}

inline FitPlan inductive_plan(const InductiveSplit& is, const SplitRanges& s) {
  return FitPlan{is.train, is.val, s.train_end};
}

/// Scores positive interactions against one fixed negative each.
/// Negatives must be pre-drawn so that consecutive epochs are comparable.
template <class T>
ScoredSet score_against_negatives(TipGnn<T>& model, const std::vector<int64_t>& idx,
                                  const std::vector<NodeId>& negatives,
                                  int64_t chunk = 200) {
  detail::check(idx.size() == negatives.size(), "scoring: negative list mismatch");
  NoGradGuard ng;
  const TemporalGraph& g = model.graph();
  ScoredSet out;
  for (size_t at = 0; at < idx.size(); at += chunk) {
    size_t hi = std::min(idx.size(), at + chunk);
    std::vector<NodeId> us, vs;
    std::vector<Timestamp> ts;
    for (size_t i = at; i < hi; ++i) {
      const Interaction& e = g.interaction(idx[i]);
      us.push_back(e.src);
      vs.push_back(e.dst);
      ts.push_back(e.t);
    }
    for (size_t i = at; i < hi; ++i) {
      const Interaction& e = g.interaction(idx[i]);
      us.push_back(e.src);
      vs.push_back(negatives[i]);
      ts.push_back(e.t);
    }
    Tensor<T> logits = model.link_logits(us, vs, ts);
    int64_t m = static_cast<int64_t>(hi - at);
    for (int64_t r = 0; r < 2 * m; ++r) {
      double z = static_cast<double>(logits.data()[r]);
      double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                        : std::exp(z) / (1.0 + std::exp(z));
      out.scores.push_back(p);
      out.labels.push_back(r < m ? 1 : 0);
    }
  }
  return out;
}

/// Draws one evaluation negative per positive; src kept, dst replaced by a
/// node the source never interacted with.
inline std::vector<NodeId> draw_eval_negatives(const TemporalGraph& g,
                                               const std::vector<int64_t>& idx,
                                               std::mt19937_64& rng) {
  std::vector<NodeId> out;
  out.reserve(idx.size());
  for (int64_t i : idx)
    out.push_back(negative_sample_eval(g, g.interaction(i).src, rng));
  return out;
}

/// Trains with early stopping on validation AUC and restores the best
/// checkpoint before returning. One structured record per epoch lands in
/// the report (and on `log` if given).
template <class T>
TrainReport fit(TipGnn<T>& model, const FitPlan& plan, const TrainConfig& cfg,
                std::ostream* log = nullptr) {
  cfg.validate();
  detail::check(!plan.train.empty(), "fit: empty training set");
  for (int64_t i : plan.train)
    detail::check(i < plan.train_boundary,
                  detail::str("fit: training index ", i, " crosses the split at ",
                              plan.train_boundary));

  RngPool pool(cfg.seed);
  auto neg_rng = pool.stream(rng_purpose::kTrainNegatives);
  auto eval_rng = pool.stream(rng_purpose::kEvalNegatives);
  auto drop_rng = pool.stream(rng_purpose::kDropout);
  auto shuffle_rng = pool.stream(rng_purpose::kShuffle);

  std::vector<NodeId> val_negs =
      plan.val.empty() ? std::vector<NodeId>{}
                       : draw_eval_negatives(model.graph(), plan.val, eval_rng);

  std::vector<Tensor<T>> params;
  for (auto& [name, p] : model.state().params) params.push_back(p);
  Adam<T> opt(params, cfg.lr, cfg.weight_decay);

  TrainReport rep;
  auto best = snapshot_params(params);
  int stale = 0;
  std::vector<int64_t> order = plan.train;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    if (cfg.shuffle_batches) std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    int64_t batches = 0;
    try {
      for (size_t at = 0; at < order.size(); at += cfg.batch_size) {
        size_t hi = std::min(order.size(), at + static_cast<size_t>(cfg.batch_size));
        std::vector<int64_t> batch(order.begin() + at, order.begin() + hi);
        Tensor<T> loss =
            link_loss(model, batch, cfg.neg_samples, neg_rng, true, &drop_rng);
        double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv))
          throw Error(detail::str("training: non-finite loss in epoch ", epoch));
        opt.zero_grad();
        loss.backward();
        opt.step();
        loss_sum += lv;
        ++batches;
      }
    } catch (const Error& e) {
      rep.abort_reason = e.what();
      if (log) *log << "abort " << e.what() << "\n";
      break;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / std::max<int64_t>(batches, 1);
    if (!plan.val.empty()) {
      ScoredSet val_scores = score_against_negatives(model, plan.val, val_negs,
                                                     cfg.batch_size);
      rec.val_acc = accuracy(val_scores);
      rec.val_auc = auc_roc(val_scores);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                      .count();
    rep.epochs.push_back(rec);
    if (log)
      *log << "epoch=" << rec.epoch << " loss=" << rec.mean_loss
           << " val_acc=" << rec.val_acc << " val_auc=" << rec.val_auc
           << " seconds=" << rec.seconds << "\n";

    if (!plan.val.empty()) {
      if (rec.val_auc > rep.best_val_auc) {
        rep.best_val_auc = rec.val_auc;
        rep.best_epoch = epoch;
        best = snapshot_params(params);
        stale = 0;
      } else if (++stale >= cfg.patience) {
        rep.stopped_early = true;
        break;
      }
    }
  }
  if (!rep.stopped_early && rep.abort_reason.empty() &&
      static_cast<int>(rep.epochs.size()) == cfg.max_epochs)
    rep.hit_max_epochs = true;
  // best-epoch weights when validation ranked epochs; initial weights after
  // an abort with no usable epoch (never keep a NaN state)
  if (rep.best_epoch >= 0 || !rep.abort_reason.empty()) restore_params(params, best);
  return rep;
}

}  // namespace tipgnn
