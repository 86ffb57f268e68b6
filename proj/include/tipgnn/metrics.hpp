#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "tipgnn/common.hpp"
#include "tipgnn/optim.hpp"
#include "tipgnn/tensor.hpp"

namespace tipgnn {

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;  // {0,1}

  void validate() const {
    detail::check(scores.size() == labels.size(),
                  detail::str("scored set: ", scores.size(), " scores vs ",
                              labels.size(), " labels"));
    detail::check(!scores.empty(), "scored set: empty");
    for (double s : scores)
      detail::check(s >= 0.0 && s <= 1.0 && std::isfinite(s),
                    detail::str("scored set: score ", s, " outside [0,1]"));
    for (int l : labels)
      detail::check(l == 0 || l == 1, detail::str("scored set: label ", l));
  }
};

/// Fraction of items where (score >= threshold) agrees with the label.
inline double accuracy(const ScoredSet& s, double threshold = 0.5) {
  s.validate();
  int64_t hit = 0;
  for (size_t i = 0; i < s.scores.size(); ++i)
    hit += (s.scores[i] >= threshold) == (s.labels[i] == 1);
  return static_cast<double>(hit) / static_cast<double>(s.scores.size());
}

/// Area under the ROC curve by the rank statistic; tied scores get midranks,
/// which matches trapezoidal integration of the ROC curve exactly.
inline double auc_roc(const ScoredSet& s) {
  s.validate();
  int64_t n = static_cast<int64_t>(s.scores.size());
  int64_t n_pos = std::count(s.labels.begin(), s.labels.end(), 1);
  int64_t n_neg = n - n_pos;
  detail::check(n_pos > 0 && n_neg > 0,
                detail::str("auc: needs both classes, got ", n_pos, " positives of ",
                            n, " items"));
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int64_t a, int64_t b) { return s.scores[a] < s.scores[b]; });
  double rank_sum_pos = 0.0;
  int64_t i = 0;
  while (i < n) {
    int64_t j = i;
    while (j < n && s.scores[order[j]] == s.scores[order[i]]) ++j;
    double midrank = 0.5 * static_cast<double>(i + j + 1);  // 1-based average
    for (int64_t k = i; k < j; ++k)
      if (s.labels[order[k]] == 1) rank_sum_pos += midrank;
    i = j;
  }
  double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Average precision over the descending-score ranking. Ties keep their
/// input order (stable sort), so equal scores rank earlier items first.
inline double average_precision(const ScoredSet& s) {
  s.validate();
  int64_t n = static_cast<int64_t>(s.scores.size());
  int64_t n_pos = std::count(s.labels.begin(), s.labels.end(), 1);
  detail::check(n_pos > 0, "average precision: no positive labels");
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int64_t a, int64_t b) { return s.scores[a] > s.scores[b]; });
  double ap = 0.0;
  int64_t seen_pos = 0;
  for (int64_t k = 0; k < n; ++k) {
    if (s.labels[order[k]] == 1) {
      ++seen_pos;
      ap += static_cast<double>(seen_pos) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(n_pos);
}

// ---------------------------------------------------------------------------
// Downstream node classification on frozen embeddings
// ---------------------------------------------------------------------------

struct DownstreamConfig {
  std::vector<int64_t> hidden = {80, 10};
  double lr = 1e-3;
  double weight_decay = 0.0;
  int64_t batch_size = 100;
  int max_epochs = 200;
  int patience = 10;
  uint64_t seed = 0;
};

namespace detail {

/// Repeats the positive indices of one batch until they reach parity with
/// the negatives. A single-class batch is returned unchanged.
inline std::vector<int64_t> oversample_positives(const std::vector<int64_t>& batch,
                                                 const std::vector<int>& labels) {
  std::vector<int64_t> pos, neg;
  for (int64_t i : batch) (labels[i] == 1 ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) return batch;
  std::vector<int64_t> out = batch;
  for (size_t k = pos.size(); k < neg.size(); ++k)
    out.push_back(pos[k % pos.size()]);
  return out;
}

}  // namespace detail

/// Trains the fixed-architecture probe (d -> hidden... -> 1, ReLU inside,
/// sigmoid head) on frozen embeddings and returns the test AUC. Splits are
/// index ranges over the row order, assumed chronological.
template <class T>
double node_classification(const std::vector<T>& embeddings, int64_t d,
                           const std::vector<int>& labels, int64_t train_end,
                           int64_t val_end, const DownstreamConfig& cfg = {}) {
  int64_t n = static_cast<int64_t>(labels.size());
  detail::check(d >= 1, "downstream: empty embedding dimension");
  detail::check(static_cast<int64_t>(embeddings.size()) == n * d,
                detail::str("downstream: ", embeddings.size(), " values != ", n,
                            " rows x ", d));
  detail::check(0 < train_end && train_end <= val_end && val_end <= n,
                detail::str("downstream: bad split ", train_end, "/", val_end, "/", n));
  detail::check(val_end < n, "downstream: empty test range");
  int64_t train_pos = 0;
  for (int64_t i = 0; i < train_end; ++i) train_pos += labels[i] == 1;
  detail::check(train_pos > 0, "downstream: no positive labels in training range");

  std::mt19937_64 rng(cfg.seed);
  std::vector<int64_t> widths = {d};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(1);
  std::vector<Tensor<T>> ws, bs;
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    double s = std::sqrt(6.0 / static_cast<double>(widths[i] + widths[i + 1]));
    std::uniform_real_distribution<double> u(-s, s);
    std::vector<T> w(widths[i] * widths[i + 1]);
    for (auto& x : w) x = static_cast<T>(u(rng));
    ws.push_back(Tensor<T>::parameter({widths[i], widths[i + 1]}, std::move(w)));
    bs.push_back(Tensor<T>::parameter({widths[i + 1]},
                                      std::vector<T>(widths[i + 1], T(0))));
  }
  std::vector<Tensor<T>> params;
  for (size_t i = 0; i < ws.size(); ++i) {
    params.push_back(ws[i]);
    params.push_back(bs[i]);
  }
  Adam<T> opt(params, cfg.lr, cfg.weight_decay);

  auto forward = [&](const std::vector<int64_t>& rows) {
    std::vector<T> x(rows.size() * d);
    for (size_t r = 0; r < rows.size(); ++r)
      std::copy(embeddings.begin() + rows[r] * d,
                embeddings.begin() + (rows[r] + 1) * d, x.begin() + r * d);
    Tensor<T> h = Tensor<T>::from({static_cast<int64_t>(rows.size()), d},
                                  std::move(x));
    for (size_t i = 0; i < ws.size(); ++i) {
      h = add(matmul(h, ws[i]), bs[i]);
      if (i + 1 < ws.size()) h = relu(h);
    }
    return h;  // logits [rows, 1]
  };
  auto score_range = [&](int64_t lo, int64_t hi) {
    NoGradGuard ng;
    std::vector<int64_t> rows(hi - lo);
    std::iota(rows.begin(), rows.end(), lo);
    Tensor<T> logits = forward(rows);
    ScoredSet set;
    for (int64_t i = 0; i < hi - lo; ++i) {
      double z = static_cast<double>(logits.data()[i]);
      double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      set.scores.push_back(p);
      set.labels.push_back(labels[lo + i]);
    }
    return set;
  };

  std::vector<int64_t> train_rows(train_end);
  std::iota(train_rows.begin(), train_rows.end(), 0);
  double best_val = -1.0;
  auto best = snapshot_params(params);
  int stale = 0;
  bool val_usable = [&] {
    int64_t p = 0;
    for (int64_t i = train_end; i < val_end; ++i) p += labels[i] == 1;
    return p > 0 && p < val_end - train_end;
  }();

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(train_rows.begin(), train_rows.end(), rng);
    for (int64_t at = 0; at < train_end; at += cfg.batch_size) {
      int64_t hi = std::min(train_end, at + cfg.batch_size);
      std::vector<int64_t> batch(train_rows.begin() + at, train_rows.begin() + hi);
      batch = detail::oversample_positives(batch, labels);
      Tensor<T> logits = forward(batch);
      std::vector<T> sign(batch.size());
      for (size_t i = 0; i < batch.size(); ++i)
        sign[i] = labels[batch[i]] == 1 ? T(1) : T(-1);
      Tensor<T> sgn = Tensor<T>::from({static_cast<int64_t>(batch.size()), 1},
                                      std::move(sign));
      Tensor<T> loss = scalar_mul(mean_all(log_sigmoid(mul(logits, sgn))), T(-1));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
    // a degenerate validation range (single class) cannot rank epochs;
    // fall back to the final model in that case
    if (!val_usable) continue;
    double val_auc = auc_roc(score_range(train_end, val_end));
    if (val_auc > best_val) {
      best_val = val_auc;
      best = snapshot_params(params);
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  if (val_usable) restore_params(params, best);
  return auc_roc(score_range(val_end, n));
}

}  // namespace tipgnn
