#pragma once

#include <cstring>
#include <list>
#include <unordered_map>
#include <vector>

#include "tipgnn/common.hpp"
#include "tipgnn/temporal_graph.hpp"
#include "tipgnn/tensor.hpp"

namespace tipgnn {

/// Transition structure of one sampled interaction sequence: which unique
/// neighbors appear, which chronologically adjacent pairs link them, and
/// which neighbor each interaction belongs to.
struct TransitionBundle {
  std::vector<NodeId> neighbor_ids;  // unique, in order of first appearance
  std::vector<uint8_t> A;            // |N| x |N| row-major, 0/1
  std::vector<uint8_t> A_tilde;      // I + A, saturated at 1
  std::vector<int64_t> col_to_row;   // interaction slot -> neighbor index

  int64_t n_neighbors() const { return static_cast<int64_t>(neighbor_ids.size()); }
  int64_t n_interactions() const { return static_cast<int64_t>(col_to_row.size()); }

  /// Dense incidence matrix |N| x |S|; exactly one 1 per column.
  std::vector<uint8_t> dense_B() const {
    std::vector<uint8_t> b(neighbor_ids.size() * col_to_row.size(), 0);
    for (size_t s = 0; s < col_to_row.size(); ++s)
      b[col_to_row[s] * col_to_row.size() + s] = 1;
    return b;
  }
};

/// Build the transition bundle from the partner sequence of an ascending
/// interaction list. Only chronologically adjacent pairs produce links, in
/// the forward direction; repeats of a neighbor reuse its index.
inline TransitionBundle build_transition(const std::vector<NodeId>& seq) {
  TransitionBundle tb;
  std::unordered_map<NodeId, int64_t> id;
  id.reserve(seq.size());
  tb.col_to_row.reserve(seq.size());
  for (NodeId v : seq) {
    auto [it, fresh] = id.try_emplace(v, static_cast<int64_t>(tb.neighbor_ids.size()));
    if (fresh) tb.neighbor_ids.push_back(v);
    tb.col_to_row.push_back(it->second);
  }
  int64_t n = tb.n_neighbors();
  tb.A.assign(n * n, 0);
  for (size_t i = 0; i + 1 < seq.size(); ++i)
    tb.A[tb.col_to_row[i] * n + tb.col_to_row[i + 1]] = 1;
  tb.A_tilde = tb.A;
  for (int64_t i = 0; i < n; ++i) tb.A_tilde[i * n + i] = 1;
  return tb;
}

/// Interaction features stacked with time encodings: row i of the result is
/// concat(e_i, Phi(query_t - t_i)). encode_dt maps a vector of time deltas
/// to a [n, d_t] tensor on the tape.
template <class T, class EncodeFn>
Tensor<T> stack_edge_features(const TemporalGraph& g, const std::vector<int64_t>& inter,
                              Timestamp query_t, EncodeFn&& encode_dt) {
  std::vector<double> deltas(inter.size());
  for (size_t i = 0; i < inter.size(); ++i) {
    const Interaction& s = g.interaction(inter[i]);
    detail::check(s.t <= query_t,
                  detail::str("interaction at t=", s.t, " is after query time ",
                              query_t, " (leakage)"));
    deltas[i] = query_t - s.t;
  }
  Tensor<T> phi = encode_dt(deltas);
  int64_t d_e = g.edge_feat_dim();
  if (d_e == 0) return phi;
  std::vector<T> feats(inter.size() * d_e);
  for (size_t i = 0; i < inter.size(); ++i) {
    const auto& f = g.interaction(inter[i]).feat;
    for (int64_t j = 0; j < d_e; ++j) feats[i * d_e + j] = static_cast<T>(f[j]);
  }
  Tensor<T> ef = Tensor<T>::from({static_cast<int64_t>(inter.size()), d_e},
                                 std::move(feats));
  return concat_last(std::vector<Tensor<T>>{ef, phi});
}

/// LRU cache of bundles keyed by (node, query time, b). The sampled list is
/// a pure function of that key over an immutable graph, so entries never go
/// stale. Single-threaded use.
class TransitionCache {
 public:
  explicit TransitionCache(size_t capacity = 1 << 18) : capacity_(capacity) {}

  const TransitionBundle& get(const TemporalGraph& g, NodeId u, Timestamp t,
                              int64_t b) {
    Key key{u, t, b};
    auto it = map_.find(key);
    if (it != map_.end()) {
      order_.splice(order_.begin(), order_, it->second);
      ++hits_;
      return it->second->second;
    }
    ++misses_;
    std::vector<int64_t> inter = g.sample_recent(u, t, b);
    std::vector<NodeId> seq;
    seq.reserve(inter.size());
    for (int64_t idx : inter) seq.push_back(g.interaction(idx).other(u));
    order_.emplace_front(key, build_transition(seq));
    map_[key] = order_.begin();
    if (map_.size() > capacity_) {
      map_.erase(order_.back().first);
      order_.pop_back();
    }
    return order_.front().second;
  }

  size_t size() const { return map_.size(); }
  uint64_t hits() const { return hits_; }
  uint64_t misses() const { return misses_; }
  void clear() {
    map_.clear();
    order_.clear();
  }

 private:
  struct Key {
    NodeId u;
    Timestamp t;
    int64_t b;
    bool operator==(const Key& o) const { return u == o.u && t == o.t && b == o.b; }
  };
  struct KeyHash {
    size_t operator()(const Key& k) const {
      uint64_t tb;
      static_assert(sizeof(tb) == sizeof(k.t));
      std::memcpy(&tb, &k.t, sizeof(tb));
      uint64_t h = 1469598103934665603ull;
      for (uint64_t v : {static_cast<uint64_t>(k.u), tb, static_cast<uint64_t>(k.b)}) {
        h ^= v;
        h *= 1099511628211ull;
      }
      return static_cast<size_t>(h);
    }
  };
  using Entry = std::pair<Key, TransitionBundle>;
  size_t capacity_;
  std::list<Entry> order_;
  std::unordered_map<Key, typename std::list<Entry>::iterator, KeyHash> map_;
  uint64_t hits_ = 0;
  uint64_t misses_ = 0;
};

}  // namespace tipgnn
