#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <optional>
#include <random>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tipgnn/common.hpp"

namespace tipgnn {

struct RawEdge {
  NodeId src = 0;
  NodeId dst = 0;
  Timestamp t = 0;
  std::vector<double> feat;
};

struct Interaction {
  NodeId src = 0;
  NodeId dst = 0;
  Timestamp t = 0;
  int64_t edge_index = 0;  // position in the chronological order
  std::vector<double> feat;

  NodeId other(NodeId u) const { return src == u ? dst : src; }
};

/// Immutable chronological interaction store with per-node history indices.
/// Simultaneous interactions keep their input order (stable sort), so every
/// query is deterministic.
class TemporalGraph {
 public:
  using NodeFeatures = std::unordered_map<NodeId, std::vector<double>>;

  static TemporalGraph build(std::vector<RawEdge> edges,
                             NodeFeatures node_feats = {}) {
    TemporalGraph g;
    g.d_e_ = edges.empty() ? 0 : static_cast<int64_t>(edges[0].feat.size());
    for (size_t i = 0; i < edges.size(); ++i) {
      const RawEdge& e = edges[i];
      detail::check(std::isfinite(e.t) && e.t >= 0,
                    detail::str("record ", i, ": timestamp ", e.t,
                                " is negative or not finite"));
      detail::check(static_cast<int64_t>(e.feat.size()) == g.d_e_,
                    detail::str("record ", i, ": edge feature dimension ",
                                e.feat.size(), " != ", g.d_e_));
    }
    for (auto& [node, f] : node_feats) {
      if (g.d_n_ == 0) g.d_n_ = static_cast<int64_t>(f.size());
      detail::check(static_cast<int64_t>(f.size()) == g.d_n_,
                    detail::str("node ", node, ": feature dimension ", f.size(),
                                " != ", g.d_n_));
    }

    g.interactions_.reserve(edges.size());
    for (auto& e : edges)
      g.interactions_.push_back(Interaction{e.src, e.dst, e.t, 0, std::move(e.feat)});
    std::stable_sort(g.interactions_.begin(), g.interactions_.end(),
                     [](const Interaction& a, const Interaction& b) { return a.t < b.t; });
    for (size_t i = 0; i < g.interactions_.size(); ++i)
      g.interactions_[i].edge_index = static_cast<int64_t>(i);

    for (size_t i = 0; i < g.interactions_.size(); ++i) {
      const Interaction& s = g.interactions_[i];
      g.by_node_[s.src].push_back(static_cast<int64_t>(i));
      if (s.dst != s.src) g.by_node_[s.dst].push_back(static_cast<int64_t>(i));
      g.partners_[s.src].push_back(s.dst);
      g.partners_[s.dst].push_back(s.src);
    }
    for (auto& [node, ps] : g.partners_) {
      std::sort(ps.begin(), ps.end());
      ps.erase(std::unique(ps.begin(), ps.end()), ps.end());
      g.nodes_.push_back(node);
    }
    std::sort(g.nodes_.begin(), g.nodes_.end());
    for (size_t i = 0; i < g.nodes_.size(); ++i)
      g.node_pos_[g.nodes_[i]] = static_cast<int64_t>(i);
    g.node_feat_ = std::move(node_feats);
    return g;
  }

  int64_t num_nodes() const { return static_cast<int64_t>(nodes_.size()); }
  int64_t num_edges() const { return static_cast<int64_t>(interactions_.size()); }
  int64_t edge_feat_dim() const { return d_e_; }
  int64_t node_feat_dim() const { return d_n_; }
  const std::vector<Interaction>& interactions() const { return interactions_; }
  const Interaction& interaction(int64_t i) const { return interactions_[i]; }
  const std::vector<NodeId>& nodes() const { return nodes_; }

  bool has_node(NodeId u) const { return node_pos_.count(u) > 0; }
  int64_t node_pos(NodeId u) const {
    auto it = node_pos_.find(u);
    detail::check(it != node_pos_.end(), detail::str("unknown node ", u));
    return it->second;
  }

  const std::vector<double>* node_features(NodeId u) const {
    auto it = node_feat_.find(u);
    return it == node_feat_.end() ? nullptr : &it->second;
  }

  /// All-time interaction partners of u, sorted unique.
  const std::vector<NodeId>& partners(NodeId u) const {
    static const std::vector<NodeId> kEmpty;
    auto it = partners_.find(u);
    return it == partners_.end() ? kEmpty : it->second;
  }

  /// The min(b, available) latest interactions of u strictly before t,
  /// ascending in time. Unknown node -> empty (cold start).
  std::vector<int64_t> sample_recent(NodeId u, Timestamp t, int64_t b) const {
    detail::check(b >= 1, detail::str("sample_recent: b=", b, " < 1"));
    auto it = by_node_.find(u);
    if (it == by_node_.end()) return {};
    const std::vector<int64_t>& hist = it->second;
    auto pos = std::lower_bound(hist.begin(), hist.end(), t,
                                [this](int64_t idx, Timestamp query) {
                                  return interactions_[idx].t < query;
                                });
    int64_t avail = static_cast<int64_t>(pos - hist.begin());
    int64_t take = std::min(b, avail);
    return std::vector<int64_t>(hist.begin() + (avail - take), hist.begin() + avail);
  }

  /// Does u's history before t contain anything at all?
  bool has_history(NodeId u, Timestamp t) const {
    auto it = by_node_.find(u);
    if (it == by_node_.end() || it->second.empty()) return false;
    return interactions_[it->second.front()].t < t;
  }

  /// Nodes that never interacted with u (u itself excluded).
  std::vector<NodeId> non_partners(NodeId u) const {
    const std::vector<NodeId>& ps = partners(u);
    std::vector<NodeId> out;
    out.reserve(nodes_.size());
    size_t j = 0;
    for (NodeId v : nodes_) {
      while (j < ps.size() && ps[j] < v) ++j;
      if (v == u || (j < ps.size() && ps[j] == v)) continue;
      out.push_back(v);
    }
    return out;
  }

 private:
  std::vector<Interaction> interactions_;
  std::unordered_map<NodeId, std::vector<int64_t>> by_node_;
  std::unordered_map<NodeId, std::vector<NodeId>> partners_;
  std::vector<NodeId> nodes_;
  std::unordered_map<NodeId, int64_t> node_pos_;
  NodeFeatures node_feat_;
  int64_t d_e_ = 0;
  int64_t d_n_ = 0;
};

// ---------------------------------------------------------------------------
// Context sampling
// ---------------------------------------------------------------------------

/// One node's sampled history before a query time, with the recursion for
/// deeper hops attached per interaction slot.
struct ContextNode {
  NodeId node = 0;
  Timestamp t = 0;
  std::vector<int64_t> inter;     // interaction indices, ascending time, <= b
  std::vector<NodeId> partner;    // other endpoint per sampled interaction
  std::vector<ContextNode> children;  // per slot, present when depth remains

  int64_t total_interactions() const {
    int64_t n = static_cast<int64_t>(inter.size());
    for (const auto& c : children) n += c.total_interactions();
    return n;
  }
};

/// Latest-b sampling, recursing on each sampled partner at its interaction
/// time. Depth L=1 keeps only the root list.
inline ContextNode recursive_sample(const TemporalGraph& g, NodeId u, Timestamp t,
                                    int64_t b, int L) {
  detail::check(L >= 1, detail::str("recursive_sample: L=", L, " < 1"));
  ContextNode ctx;
  ctx.node = u;
  ctx.t = t;
  ctx.inter = g.sample_recent(u, t, b);
  ctx.partner.reserve(ctx.inter.size());
  for (int64_t idx : ctx.inter) ctx.partner.push_back(g.interaction(idx).other(u));
  if (L > 1) {
    ctx.children.reserve(ctx.inter.size());
    for (size_t i = 0; i < ctx.inter.size(); ++i) {
      ctx.children.push_back(recursive_sample(
          g, ctx.partner[i], g.interaction(ctx.inter[i]).t, b, L - 1));
    }
  }
  return ctx;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitRanges {
  int64_t train_end = 0;  // train = [0, train_end)
  int64_t val_end = 0;    // val = [train_end, val_end), test = [val_end, |E|)
  int64_t total = 0;
};

inline SplitRanges chronological_split(const TemporalGraph& g, double r_train = 0.70,
                                       double r_val = 0.15) {
  int64_t e = g.num_edges();
  detail::check(e >= 3, detail::str("split: |E|=", e, " < 3"));
  detail::check(r_train > 0 && r_val >= 0 && r_train + r_val < 1.0 + 1e-12,
                "split: bad ratios");
  SplitRanges s;
  s.train_end = static_cast<int64_t>(std::floor(r_train * static_cast<double>(e)));
  s.val_end = static_cast<int64_t>(std::floor((r_train + r_val) * static_cast<double>(e)));
  s.total = e;
  return s;
}

struct EvalSets {
  std::vector<int64_t> val;
  std::vector<int64_t> test;
};

/// Transductive filtering: drop val/test interactions whose endpoints were
/// never seen during the training window.
inline EvalSets remove_new_nodes(const TemporalGraph& g, const SplitRanges& s) {
  std::unordered_set<NodeId> train_nodes;
  for (int64_t i = 0; i < s.train_end; ++i) {
    train_nodes.insert(g.interaction(i).src);
    train_nodes.insert(g.interaction(i).dst);
  }
  EvalSets out;
  for (int64_t i = s.train_end; i < s.total; ++i) {
    const Interaction& e = g.interaction(i);
    if (!train_nodes.count(e.src) || !train_nodes.count(e.dst)) continue;
    (i < s.val_end ? out.val : out.test).push_back(i);
  }
  if (out.val.empty())
    std::cerr << "warning: transductive validation set is empty after filtering\n";
  if (out.test.empty())
    std::cerr << "warning: transductive test set is empty after filtering\n";
  return out;
}

struct InductiveSplit {
  std::vector<NodeId> hidden;        // sorted
  std::vector<int64_t> train;        // training interactions avoiding hidden nodes
  std::vector<int64_t> val;          // val-range interactions touching a hidden node
  std::vector<int64_t> test;         // test-range interactions touching a hidden node
};

/// Hide round(fraction * |V|) uniformly chosen nodes: their training
/// interactions disappear and evaluation keeps only interactions touching
/// at least one hidden node.
inline InductiveSplit hide_nodes_for_inductive(const TemporalGraph& g,
                                               const SplitRanges& s, double fraction,
                                               std::mt19937_64& rng) {
  detail::check(fraction > 0 && fraction < 1,
                detail::str("hide_nodes: fraction=", fraction, " outside (0,1)"));
  int64_t k = std::llround(fraction * static_cast<double>(g.num_nodes()));
  detail::check(k >= 1, detail::str("hide_nodes: fraction ", fraction, " of ",
                                    g.num_nodes(), " nodes rounds to zero"));
  std::vector<NodeId> pool = g.nodes();
  std::shuffle(pool.begin(), pool.end(), rng);
  InductiveSplit out;
  out.hidden.assign(pool.begin(), pool.begin() + k);
  std::sort(out.hidden.begin(), out.hidden.end());
  auto is_hidden = [&](NodeId v) {
    return std::binary_search(out.hidden.begin(), out.hidden.end(), v);
  };
  for (int64_t i = 0; i < s.train_end; ++i) {
    const Interaction& e = g.interaction(i);
    if (!is_hidden(e.src) && !is_hidden(e.dst)) out.train.push_back(i);
  }
  for (int64_t i = s.train_end; i < s.total; ++i) {
    const Interaction& e = g.interaction(i);
    if (!is_hidden(e.src) && !is_hidden(e.dst)) continue;
    (i < s.val_end ? out.val : out.test).push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Negative sampling
// ---------------------------------------------------------------------------

/// Training negatives: uniform over every node in the graph.
inline NodeId negative_sample_train(const TemporalGraph& g, std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> pick(0, g.num_nodes() - 1);
  return g.nodes()[pick(rng)];
}

/// Evaluation negatives: uniform over nodes that never interacted with u.
inline NodeId negative_sample_eval(const TemporalGraph& g, NodeId u,
                                   std::mt19937_64& rng) {
  std::vector<NodeId> cands = g.non_partners(u);
  detail::check(!cands.empty(),
                detail::str("negative_sample: node ", u,
                            " has interacted with every other node"));
  std::uniform_int_distribution<size_t> pick(0, cands.size() - 1);
  return cands[pick(rng)];
}

// ---------------------------------------------------------------------------
// Dataset description
// ---------------------------------------------------------------------------

struct DatasetStats {
  int64_t num_nodes = 0;
  int64_t num_edges = 0;
  double density = 0;           // 2|E| / (|V| (|V|-1)), multigraph count
  double repetition = 0;        // share of incidences repeating the previous partner
  double timespan_days = 0;
};

inline DatasetStats compute_stats(const TemporalGraph& g) {
  DatasetStats st;
  st.num_nodes = g.num_nodes();
  st.num_edges = g.num_edges();
  double v = static_cast<double>(st.num_nodes);
  if (st.num_nodes > 1)
    st.density = 2.0 * static_cast<double>(st.num_edges) / (v * (v - 1.0));
  if (st.num_edges > 0)
    st.timespan_days =
        (g.interactions().back().t - g.interactions().front().t) / 86400.0;

  // A node's incidence "repeats" when its partner equals the partner of its
  // previous interaction.
  std::unordered_map<NodeId, NodeId> last_partner;
  int64_t repeats = 0, incidences = 0;
  for (const Interaction& e : g.interactions()) {
    for (NodeId u : {e.src, e.dst}) {
      NodeId v2 = e.other(u);
      auto it = last_partner.find(u);
      if (it != last_partner.end()) {
        ++incidences;
        if (it->second == v2) ++repeats;
        it->second = v2;
      } else {
        last_partner.emplace(u, v2);
      }
      if (e.src == e.dst) break;  // a self-loop is one incidence
    }
  }
  if (incidences > 0)
    st.repetition = static_cast<double>(repeats) / static_cast<double>(incidences);
  return st;
}

}  // namespace tipgnn
