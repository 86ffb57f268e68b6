#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iterator>
#include <limits>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tipgnn/common.hpp"
#include "tipgnn/temporal_graph.hpp"
#include "tipgnn/tensor.hpp"
#include "tipgnn/transition.hpp"

namespace tipgnn {

enum class NodeFeatureMode { kZeros, kTable, kLearned };

inline const char* to_string(NodeFeatureMode m) {
  switch (m) {
    case NodeFeatureMode::kZeros: return "zeros";
    case NodeFeatureMode::kTable: return "table";
    case NodeFeatureMode::kLearned: return "learned";
  }
  return "?";
}

struct TipGnnConfig {
  int64_t d = 128;        // embedding width
  int64_t d_t = 128;      // time-encoding width
  int L = 2;              // model layers
  int K = 2;              // propagation steps
  int q_mlp = 2;          // linear maps per propagation MLP (0 = identity)
  double alpha = 0.0;     // damping
  int heads = 2;
  int64_t b = 20;         // sampled interactions per node
  double dropout = 0.1;
  NodeFeatureMode node_feature_mode = NodeFeatureMode::kZeros;
  bool normalize_transition = false;  // row-normalize A_tilde (study flag)
  bool uniform_sampler = false;       // uniform instead of latest-b sampling

  void validate() const {
    detail::check(d >= 1 && d_t >= 1, "config: d and d_t must be positive");
    detail::check(L >= 1, detail::str("config: L=", L, " < 1"));
    detail::check(K >= 0, detail::str("config: K=", K, " < 0"));
    detail::check(q_mlp >= 0, "config: q_mlp < 0");
    detail::check(alpha >= 0.0 && alpha <= 1.0,
                  detail::str("config: alpha=", alpha, " outside [0,1]"));
    detail::check(heads >= 1 && d % heads == 0,
                  detail::str("config: d=", d, " not divisible by heads=", heads));
    detail::check(b >= 1, detail::str("config: b=", b, " < 1"));
    detail::check(dropout >= 0.0 && dropout < 1.0, "config: dropout outside [0,1)");
  }
};

template <class T>
struct ModelState {
  TipGnnConfig cfg;
  int64_t d_e = 0;   // edge feature width
  int64_t f0 = 0;    // layer-0 node representation width

  Tensor<T> omega;  // [1, d_t]
  Tensor<T> node_table;  // learned mode: [|V|+1, d], last row = unknown default

  struct Layer {
    int64_t f_prev = 0;  // width of the previous layer's representation
    Tensor<T> W_n, W_e, W_init, b_init;                    // neighborhood init
    std::vector<std::vector<std::pair<Tensor<T>, Tensor<T>>>> mlp;  // [K][q_mlp]
    Tensor<T> W_Q, W_K, W_V, W_O;                          // pooling
    std::vector<Tensor<T>> W_f, b_f;                       // fusion, per step 0..K
    Tensor<T> q_f;                                         // [d,1], shared in-layer
  };
  std::vector<Layer> layers;

  Tensor<T> W_u, W_v, W_head, b_head;  // link head

  std::vector<std::pair<std::string, Tensor<T>>> params;

  static ModelState init(const TipGnnConfig& cfg, int64_t d_e, int64_t d_n,
                         int64_t num_nodes, double timespan_seconds,
                         std::mt19937_64& rng) {
    cfg.validate();
    ModelState st;
    st.cfg = cfg;
    st.d_e = d_e;
    st.f0 = cfg.node_feature_mode == NodeFeatureMode::kTable ? d_n : cfg.d;
    if (cfg.node_feature_mode == NodeFeatureMode::kTable)
      detail::check(d_n >= 1, "config: table mode needs node features");
    int64_t d = cfg.d;
    int64_t d_he = d_e + cfg.d_t;

    auto glorot = [&rng, &st](const std::string& name, int64_t rows, int64_t cols) {
      double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::uniform_real_distribution<double> u(-s, s);
      std::vector<T> v(rows * cols);
      for (auto& x : v) x = static_cast<T>(u(rng));
      Tensor<T> t = Tensor<T>::parameter({rows, cols}, std::move(v));
      st.params.emplace_back(name, t);
      return t;
    };
    auto zeros_param = [&st](const std::string& name, Shape shape) {
      Tensor<T> t = Tensor<T>::parameter(shape, std::vector<T>(shape_numel(shape), T(0)));
      st.params.emplace_back(name, t);
      return t;
    };

    // geometric frequencies spanning [1/timespan, 1]
    {
      double span = std::max(timespan_seconds, 10.0);
      std::vector<T> w(cfg.d_t);
      if (cfg.d_t == 1) {
        w[0] = T(1);
      } else {
        double beta = static_cast<double>(cfg.d_t) / (cfg.d_t - 1.0) * std::log10(span);
        for (int64_t i = 0; i < cfg.d_t; ++i)
          w[i] = static_cast<T>(std::pow(10.0, -(static_cast<double>(i) * beta /
                                                 static_cast<double>(cfg.d_t))));
      }
      st.omega = Tensor<T>::parameter({1, cfg.d_t}, std::move(w));
      st.params.emplace_back("omega", st.omega);
    }

    if (cfg.node_feature_mode == NodeFeatureMode::kLearned)
      st.node_table = glorot("node_table", num_nodes + 1, d);

    st.layers.resize(cfg.L);
    for (int l = 0; l < cfg.L; ++l) {
      Layer& ly = st.layers[l];
      ly.f_prev = l == 0 ? st.f0 : d;
      std::string p = "layer" + std::to_string(l) + ".";
      ly.W_n = glorot(p + "W_n", ly.f_prev, d);
      ly.W_e = glorot(p + "W_e", d_he, d);
      ly.W_init = glorot(p + "W_init", d, d);
      ly.b_init = zeros_param(p + "b_init", {d});
      ly.mlp.resize(cfg.K);
      for (int k = 0; k < cfg.K; ++k)
        for (int q = 0; q < cfg.q_mlp; ++q) {
          std::string mp = p + "mlp" + std::to_string(k) + "." + std::to_string(q);
          ly.mlp[k].emplace_back(glorot(mp + ".W", d, d),
                                 zeros_param(mp + ".b", {d}));
        }
      ly.W_Q = glorot(p + "W_Q", ly.f_prev, d);
      ly.W_K = glorot(p + "W_K", d, d);
      ly.W_V = glorot(p + "W_V", d, d);
      ly.W_O = glorot(p + "W_O", d, d);
      for (int k = 0; k <= cfg.K; ++k) {
        ly.W_f.push_back(glorot(p + "W_f" + std::to_string(k), d, d));
        ly.b_f.push_back(zeros_param(p + "b_f" + std::to_string(k), {d}));
      }
      ly.q_f = glorot(p + "q_f", d, 1);
    }

    st.W_u = glorot("head.W_u", d, d);
    st.W_v = glorot("head.W_v", d, d);
    st.W_head = glorot("head.W", d, 1);
    st.b_head = zeros_param("head.b", {1});
    return st;
  }

  void zero_grads() {
    for (auto& [name, p] : params) p.zero_grad();
  }

  bool all_finite() const {
    for (const auto& [name, p] : params)
      for (int64_t i = 0; i < p.numel(); ++i)
        if (!std::isfinite(static_cast<double>(p.data()[i]))) return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// Core blocks, written over batched padded tensors. k contexts, each with b
// slots; padded slots carry zero columns in A_tilde / B and zero mask bits,
// which keeps them out of every result that is read downstream.
// ---------------------------------------------------------------------------

/// Eq.-style neighborhood init: Z0 = ReLU(H_N W_n + (B H_S) W_e) W + b.
/// H_N may be undefined (all-zero layer-0 features): the W_n term drops out.
template <class T>
Tensor<T> init_neighbor_embeddings(const typename ModelState<T>::Layer& ly,
                                   const Tensor<T>& H_N, const Tensor<T>& H_S,
                                   const Tensor<T>& B) {
  int64_t k = B.dim(0), rows = B.dim(1);
  Tensor<T> agg = matmul(B, H_S);  // [k, rows, d_he]
  Tensor<T> pre = matmul(reshape(agg, {k * rows, agg.dim(-1)}), ly.W_e);
  if (H_N.defined()) {
    detail::check(H_N.dim(-1) == ly.f_prev,
                  detail::str("init: H_N width ", H_N.dim(-1), " != ", ly.f_prev));
    pre = add(pre, matmul(reshape(H_N, {k * rows, ly.f_prev}), ly.W_n));
  }
  Tensor<T> z = add(matmul(relu(pre), ly.W_init), ly.b_init);
  return reshape(z, {k, rows, z.dim(-1)});
}

/// Damped propagation: returns [Z^0 .. Z^K]. alpha=1 short-circuits to the
/// exact identity; q_mlp=0 propagates without any parametrized projection.
template <class T>
std::vector<Tensor<T>> propagate(const typename ModelState<T>::Layer& ly,
                                 const Tensor<T>& Z0, const Tensor<T>& A_tilde,
                                 int K, double alpha) {
  std::vector<Tensor<T>> zs{Z0};
  int64_t k = Z0.dim(0), rows = Z0.dim(1), d = Z0.dim(2);
  for (int step = 0; step < K; ++step) {
    if (alpha == 1.0) {
      zs.push_back(zs.back());
      continue;
    }
    Tensor<T> m = zs.back();
    if (step < static_cast<int>(ly.mlp.size()) && !ly.mlp[step].empty()) {
      Tensor<T> flat = reshape(m, {k * rows, d});
      const auto& stack = ly.mlp[step];
      for (size_t q = 0; q < stack.size(); ++q) {
        if (q) flat = relu(flat);
        flat = add(matmul(flat, stack[q].first), stack[q].second);
      }
      m = reshape(flat, {k, rows, d});
    }
    Tensor<T> z_hat = matmul(A_tilde, m);
    if (alpha == 0.0) {
      zs.push_back(z_hat);
    } else {
      zs.push_back(add(scalar_mul(zs.back(), static_cast<T>(alpha)),
                       scalar_mul(z_hat, static_cast<T>(1.0 - alpha))));
    }
  }
  return zs;
}

/// Multi-head attention pooling of one propagation step's embeddings.
/// H_q: [k, f_prev] queries (undefined = all-zero layer-0 features, which
/// makes attention uniform over valid slots). Z: [k, rows, d]. mask: one bit
/// per (context, slot). All-masked contexts produce zero rows.
template <class T>
Tensor<T> transition_pool(const typename ModelState<T>::Layer& ly, int heads,
                          const Tensor<T>& H_q, const Tensor<T>& Z,
                          const std::vector<uint8_t>& mask) {
  int64_t k = Z.dim(0), rows = Z.dim(1), d = Z.dim(2);
  int64_t dh = d / heads;
  detail::check(static_cast<int64_t>(mask.size()) == k * rows,
                detail::str("pool: mask size ", mask.size(), " != ", k * rows));

  Tensor<T> kmat = matmul(reshape(Z, {k * rows, d}), ly.W_K);
  kmat = reshape(permute(reshape(kmat, {k, rows, heads, dh}), {0, 2, 1, 3}),
                 {k * heads, rows, dh});
  Tensor<T> scores;
  if (H_q.defined()) {
    Tensor<T> q = matmul(H_q, ly.W_Q);  // [k, d]
    q = reshape(q, {k * heads, 1, dh});
    scores = matmul_nt(q, kmat);  // [k*heads, 1, rows]
  } else {
    scores = Tensor<T>::zeros({k * heads, 1, rows});
  }

  std::vector<uint8_t> head_mask(k * heads * rows);
  for (int64_t c = 0; c < k; ++c)
    for (int64_t h = 0; h < heads; ++h)
      std::copy(mask.begin() + c * rows, mask.begin() + (c + 1) * rows,
                head_mask.begin() + (c * heads + h) * rows);
  Tensor<T> attn = masked_softmax_last(scores, head_mask);

  Tensor<T> v = matmul(reshape(Z, {k * rows, d}), ly.W_V);
  v = reshape(permute(reshape(v, {k, rows, heads, dh}), {0, 2, 1, 3}),
              {k * heads, rows, dh});
  Tensor<T> pooled = matmul(attn, v);               // [k*heads, 1, dh]
  pooled = reshape(pooled, {k, d});                 // heads concatenated
  return matmul(pooled, ly.W_O);
}

/// Projection attention over the K+1 per-step embeddings. Returns the fused
/// embedding and the step weights (rows sum to 1).
template <class T>
std::pair<Tensor<T>, Tensor<T>> attention_fuse(const typename ModelState<T>::Layer& ly,
                                               const std::vector<Tensor<T>>& hs) {
  detail::check(!hs.empty(), "fuse: no step embeddings");
  detail::check(hs.size() == ly.W_f.size(),
                detail::str("fuse: ", hs.size(), " steps vs ", ly.W_f.size(),
                            " parameter sets"));
  int64_t k = hs[0].dim(0), d = hs[0].dim(1);
  int64_t steps = static_cast<int64_t>(hs.size());
  std::vector<Tensor<T>> score_cols;
  for (size_t i = 0; i < hs.size(); ++i) {
    Tensor<T> s = sigmoid(add(matmul(hs[i], ly.W_f[i]), ly.b_f[i]));
    score_cols.push_back(matmul(s, ly.q_f));  // [k,1]
  }
  Tensor<T> weights = masked_softmax_last(concat_last(score_cols), {});  // [k,steps]
  Tensor<T> stacked = reshape(concat_last(hs), {k, steps, d});
  Tensor<T> fused = reshape(matmul(reshape(weights, {k, 1, steps}), stacked), {k, d});
  return {fused, weights};
}

// ---------------------------------------------------------------------------
// Batched recursive embedding engine
// ---------------------------------------------------------------------------

struct QueryKey {
  NodeId node = 0;
  Timestamp t = 0;
  bool operator==(const QueryKey& o) const { return node == o.node && t == o.t; }
};

struct QueryKeyHash {
  size_t operator()(const QueryKey& k) const {
    uint64_t tb;
    std::memcpy(&tb, &k.t, sizeof(tb));
    uint64_t h = 1469598103934665603ull;
    for (uint64_t v : {static_cast<uint64_t>(k.node), tb}) {
      h ^= v;
      h *= 1099511628211ull;
    }
    return static_cast<size_t>(h);
  }
};

template <class T>
struct EmbedResult {
  Tensor<T> h;                // [rows, d], top-layer embeddings
  std::vector<int64_t> row;   // query index -> row in h
  std::vector<T> fusion;      // [rows, K+1] last-layer fusion weights (values)
  int64_t fusion_width = 0;
};

template <class T>
class TipGnn {
 public:
  TipGnn(TipGnnConfig cfg, const TemporalGraph& g, uint64_t seed)
      : g_(g), cache_(1 << 18) {
    cfg.validate();
    double span = g.num_edges() > 0
                      ? g.interactions().back().t - g.interactions().front().t
                      : 0.0;
    RngPool pool(seed);
    auto rng = pool.stream(rng_purpose::kParamInit);
    state_ = ModelState<T>::init(cfg, g.edge_feat_dim(), g.node_feat_dim(),
                                 g.num_nodes(), span, rng);
  }

  const TipGnnConfig& config() const { return state_.cfg; }
  ModelState<T>& state() { return state_; }
  const ModelState<T>& state() const { return state_; }
  const TemporalGraph& graph() const { return g_; }

  /// Time encoding of a batch of deltas: [n, d_t] rows of cos(omega * dt).
  Tensor<T> time_encode(const std::vector<double>& deltas) {
    for (double dt : deltas)
      detail::check(dt >= 0, detail::str("time_encode: negative delta ", dt));
    std::vector<T> col(deltas.begin(), deltas.end());
    Tensor<T> d = Tensor<T>::from({static_cast<int64_t>(deltas.size()), 1},
                                  std::move(col));
    return cos_t(matmul(d, state_.omega));
  }

  /// Top-layer embeddings for a batch of (node, time) queries, deduplicated
  /// per layer. train enables dropout (rng required).
  EmbedResult<T> embed_batch(const std::vector<QueryKey>& queries, bool train = false,
                             std::mt19937_64* dropout_rng = nullptr,
                             std::mt19937_64* sampler_rng = nullptr) {
    const TipGnnConfig& cfg = state_.cfg;
    detail::check(!train || dropout_rng != nullptr,
                  "embed: training mode needs a dropout rng");
    detail::check(!queries.empty(), "embed: empty query batch");

    // ---- plan levels from the top down
    std::vector<LevelPlan> plans(cfg.L);
    {
      std::vector<QueryKey> frontier;
      std::unordered_map<QueryKey, int64_t, QueryKeyHash> fmap;
      for (const QueryKey& q : queries)
        if (fmap.emplace(q, static_cast<int64_t>(fmap.size())).second)
          frontier.push_back(q);
      for (int l = cfg.L - 1; l >= 0; --l) {
        LevelPlan& plan = plans[l];
        plan.keys = std::move(frontier);
        plan.index = std::move(fmap);
        frontier.clear();
        fmap.clear();
        plan.ctx.resize(plan.keys.size());
        for (size_t i = 0; i < plan.keys.size(); ++i) {
          Ctx& c = plan.ctx[i];
          const QueryKey& key = plan.keys[i];
          c.inter = sample_list(key, sampler_rng);
          // unique neighbors in first-appearance order with latest times
          std::unordered_map<NodeId, size_t> seen;
          for (int64_t idx : c.inter) {
            const Interaction& s = g_.interaction(idx);
            NodeId v = s.other(key.node);
            auto [it, fresh] = seen.try_emplace(v, c.nbr.size());
            if (fresh) {
              c.nbr.push_back(v);
              c.nbr_t.push_back(s.t);
            } else {
              c.nbr_t[it->second] = s.t;  // ascending scan: last write is latest
            }
          }
          detail::check(static_cast<int64_t>(c.inter.size()) <= cfg.b,
                        "embed: sampled list exceeds budget");
        }
        if (l > 0) {
          // next frontier: every context's own key and its neighbor keys
          auto push = [&](const QueryKey& k2) {
            if (fmap.emplace(k2, static_cast<int64_t>(fmap.size())).second)
              frontier.push_back(k2);
          };
          for (size_t i = 0; i < plan.keys.size(); ++i) {
            push(plan.keys[i]);
            const Ctx& c = plan.ctx[i];
            for (size_t j = 0; j < c.nbr.size(); ++j)
              push(QueryKey{c.nbr[j], c.nbr_t[j]});
          }
        }
      }
    }

    // ---- layer 0 representation table for the lowest frontier
    // (node features are time-independent: dedup by node)
    std::vector<NodeId> l0_nodes;
    std::unordered_map<NodeId, int64_t> l0_row;
    {
      auto touch = [&](NodeId v) {
        if (l0_row.emplace(v, static_cast<int64_t>(l0_row.size())).second)
          l0_nodes.push_back(v);
      };
      const LevelPlan& bot = plans[0];
      for (size_t i = 0; i < bot.keys.size(); ++i) {
        touch(bot.keys[i].node);
        for (NodeId v : bot.ctx[i].nbr) touch(v);
      }
    }
    Tensor<T> h_prev = layer0_rows(l0_nodes);  // undefined in zeros mode

    // ---- forward through layers
    Tensor<T> fusion_weights;
    for (int l = 0; l < cfg.L; ++l) {
      const LevelPlan& plan = plans[l];
      auto row_of = [&](const QueryKey& k2) -> int64_t {
        if (l == 0) return l0_row.at(k2.node);
        return plans[l - 1].index.at(k2);
      };
      std::pair<Tensor<T>, Tensor<T>> out = level_forward(
          plan, state_.layers[l], h_prev, row_of, train, dropout_rng);
      h_prev = out.first;
      fusion_weights = out.second;
    }

    EmbedResult<T> res;
    res.h = h_prev;  // carries one trailing zero row; res.row never points at it
    res.fusion_width = cfg.K + 1;
    res.fusion.assign(fusion_weights.data(),
                      fusion_weights.data() + fusion_weights.numel());
    res.row.reserve(queries.size());
    for (const QueryKey& q : queries)
      res.row.push_back(plans[cfg.L - 1].index.at(q));
    return res;
  }

  /// Raw link scores (pre-sigmoid) for (u, v, t) triples. One tape.
  Tensor<T> link_logits(const std::vector<NodeId>& us, const std::vector<NodeId>& vs,
                        const std::vector<Timestamp>& ts, bool train = false,
                        std::mt19937_64* dropout_rng = nullptr,
                        std::mt19937_64* sampler_rng = nullptr) {
    detail::check(us.size() == vs.size() && us.size() == ts.size(),
                  "link_logits: ragged inputs");
    std::vector<QueryKey> queries;
    queries.reserve(2 * us.size());
    for (size_t i = 0; i < us.size(); ++i) queries.push_back({us[i], ts[i]});
    for (size_t i = 0; i < vs.size(); ++i) queries.push_back({vs[i], ts[i]});
    EmbedResult<T> emb = embed_batch(queries, train, dropout_rng, sampler_rng);
    size_t n = us.size();
    std::vector<int64_t> ru(emb.row.begin(), emb.row.begin() + n);
    std::vector<int64_t> rv(emb.row.begin() + n, emb.row.end());
    Tensor<T> hu = index_rows(emb.h, ru);
    Tensor<T> hv = index_rows(emb.h, rv);
    Tensor<T> hidden = relu(add(matmul(hu, state_.W_u), matmul(hv, state_.W_v)));
    return add(matmul(hidden, state_.W_head), state_.b_head);
  }

  /// Probability of a single link; inference mode.
  double predict_link(NodeId u, NodeId v, Timestamp t) {
    NoGradGuard ng;
    Tensor<T> s = link_logits({u}, {v}, {t});
    double logit = static_cast<double>(s.item());
    double p = logit >= 0 ? 1.0 / (1.0 + std::exp(-logit))
                          : std::exp(logit) / (1.0 + std::exp(logit));
    // open interval: sigmoid saturates in floating point for |logit| > ~37
    p = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
    return p;
  }

  TransitionCache& cache() { return cache_; }

 private:
  struct Ctx {
    std::vector<int64_t> inter;      // ascending interaction indices
    std::vector<NodeId> nbr;         // unique neighbors, first appearance
    std::vector<Timestamp> nbr_t;    // latest interaction time per neighbor
  };
  struct LevelPlan {
    std::vector<QueryKey> keys;
    std::unordered_map<QueryKey, int64_t, QueryKeyHash> index;
    std::vector<Ctx> ctx;
  };

  std::vector<int64_t> sample_list(const QueryKey& key, std::mt19937_64* rng) {
    const TipGnnConfig& cfg = state_.cfg;
    if (!cfg.uniform_sampler) {
      // cache also memoizes the bundle; the list itself is cheap either way
      return g_.sample_recent(key.node, key.t, cfg.b);
    }
    detail::check(rng != nullptr, "embed: uniform sampler needs an rng");
    std::vector<int64_t> all = g_.sample_recent(key.node, key.t,
                                                std::numeric_limits<int64_t>::max() / 2);
    if (static_cast<int64_t>(all.size()) <= cfg.b) return all;
    std::vector<int64_t> picked;
    std::sample(all.begin(), all.end(), std::back_inserter(picked), cfg.b, *rng);
    return picked;  // std::sample preserves ascending order
  }

  /// Node-feature rows for the given nodes plus one trailing zero row.
  /// Undefined tensor = zeros mode (all rows zero; skip the matmuls).
  Tensor<T> layer0_rows(const std::vector<NodeId>& nodes) {
    const TipGnnConfig& cfg = state_.cfg;
    int64_t n = static_cast<int64_t>(nodes.size());
    switch (cfg.node_feature_mode) {
      case NodeFeatureMode::kZeros:
        return Tensor<T>();
      case NodeFeatureMode::kTable: {
        std::vector<T> rows((n + 1) * state_.f0, T(0));
        for (int64_t i = 0; i < n; ++i) {
          const std::vector<double>* f = g_.node_features(nodes[i]);
          detail::check(f != nullptr,
                        detail::str("node ", nodes[i], " has no feature row"));
          for (int64_t j = 0; j < state_.f0; ++j)
            rows[i * state_.f0 + j] = static_cast<T>((*f)[j]);
        }
        return Tensor<T>::from({n + 1, state_.f0}, std::move(rows));
      }
      case NodeFeatureMode::kLearned: {
        std::vector<int64_t> idx(n + 1);
        int64_t unknown = state_.node_table.dim(0) - 1;
        for (int64_t i = 0; i < n; ++i)
          idx[i] = g_.has_node(nodes[i]) ? g_.node_pos(nodes[i]) : unknown;
        idx[n] = unknown;
        Tensor<T> rows = index_rows(state_.node_table, idx);
        // the trailing row must be exactly zero for padding: mask it
        std::vector<T> m((n + 1) * state_.f0, T(1));
        std::fill(m.end() - state_.f0, m.end(), T(0));
        return mul(rows, Tensor<T>::from({n + 1, state_.f0}, std::move(m)));
      }
    }
    return Tensor<T>();
  }

  /// One layer over all contexts of a level. Returns ([rows+1, d] embeddings
  /// with a zero row appended, fusion weight values).
  template <class RowOf>
  std::pair<Tensor<T>, Tensor<T>> level_forward(const LevelPlan& plan,
                                                const typename ModelState<T>::Layer& ly,
                                                const Tensor<T>& h_prev, RowOf&& row_of,
                                                bool train, std::mt19937_64* rng) {
    const TipGnnConfig& cfg = state_.cfg;
    int64_t k = static_cast<int64_t>(plan.keys.size());
    int64_t b = cfg.b;
    int64_t d_he = state_.d_e + cfg.d_t;

    // padded constants
    std::vector<T> a_pad(k * b * b, T(0));
    std::vector<T> b_pad(k * b * b, T(0));
    std::vector<double> deltas(k * b, 0.0);
    std::vector<T> efeat;
    if (state_.d_e > 0) efeat.assign(k * b * state_.d_e, T(0));
    std::vector<uint8_t> mask(k * b, 0);
    std::vector<int64_t> hn_rows(k * b, 0);
    std::vector<int64_t> hq_rows(k, 0);

    for (int64_t c = 0; c < k; ++c) {
      const QueryKey& key = plan.keys[c];
      const Ctx& ctx = plan.ctx[c];
      int64_t s_n = static_cast<int64_t>(ctx.inter.size());
      int64_t n_n = static_cast<int64_t>(ctx.nbr.size());
      const TransitionBundle& tb =
          cfg.uniform_sampler ? fresh_bundle(key, ctx)
                              : cache_.get(g_, key.node, key.t, cfg.b);
      detail::check(tb.n_neighbors() == n_n && tb.n_interactions() == s_n,
                    "embed: bundle out of sync with context");
      T* arow = a_pad.data() + c * b * b;
      for (int64_t i = 0; i < n_n; ++i) {
        T inv = T(1);
        if (cfg.normalize_transition) {
          int64_t deg = 0;
          for (int64_t j = 0; j < n_n; ++j) deg += tb.A_tilde[i * n_n + j];
          inv = T(1) / static_cast<T>(std::max<int64_t>(deg, 1));
        }
        for (int64_t j = 0; j < n_n; ++j)
          if (tb.A_tilde[i * n_n + j]) arow[i * b + j] = inv;
      }
      T* brow = b_pad.data() + c * b * b;
      for (int64_t s = 0; s < s_n; ++s) brow[tb.col_to_row[s] * b + s] = T(1);

      for (int64_t s = 0; s < s_n; ++s) {
        const Interaction& inter = g_.interaction(ctx.inter[s]);
        detail::check(inter.t < key.t, "embed: sampled interaction not before query");
        deltas[c * b + s] = key.t - inter.t;
        for (int64_t j = 0; j < state_.d_e; ++j)
          efeat[(c * b + s) * state_.d_e + j] = static_cast<T>(inter.feat[j]);
      }
      for (int64_t i = 0; i < n_n; ++i) {
        mask[c * b + i] = 1;
        hn_rows[c * b + i] = row_of(QueryKey{ctx.nbr[i], ctx.nbr_t[i]});
      }
      // padded H_N rows point at the zero row
      int64_t zr = h_prev.defined() ? h_prev.dim(0) - 1 : 0;
      for (int64_t i = n_n; i < b; ++i) hn_rows[c * b + i] = zr;
      hq_rows[c] = row_of(key);
    }

    Tensor<T> A = Tensor<T>::from({k, b, b}, std::move(a_pad));
    Tensor<T> B = Tensor<T>::from({k, b, b}, std::move(b_pad));

    // H_S: time encodings (+ edge features)
    Tensor<T> H_S = time_encode(deltas);  // [k*b, d_t]
    if (state_.d_e > 0) {
      Tensor<T> ef = Tensor<T>::from({k * b, state_.d_e}, std::move(efeat));
      H_S = concat_last(std::vector<Tensor<T>>{ef, H_S});
    }
    H_S = reshape(H_S, {k, b, d_he});

    Tensor<T> H_N, H_q;
    if (h_prev.defined()) {
      H_N = reshape(index_rows(h_prev, hn_rows), {k, b, ly.f_prev});
      H_q = index_rows(h_prev, hq_rows);
    }

    Tensor<T> Z0 = init_neighbor_embeddings<T>(ly, H_N, H_S, B);
    std::vector<Tensor<T>> zs = propagate<T>(ly, Z0, A, cfg.K, cfg.alpha);

    std::vector<Tensor<T>> pooled;
    pooled.reserve(zs.size());
    for (const Tensor<T>& z : zs) {
      Tensor<T> p = transition_pool<T>(ly, cfg.heads, H_q, z, mask);
      if (train && cfg.dropout > 0)
        p = dropout(p, cfg.dropout, true, *rng);
      pooled.push_back(p);
    }
    auto [fused, weights] = attention_fuse<T>(ly, pooled);

    // append a zero row for the next level's padding gathers
    Tensor<T> padded = append_zero_row(fused);
    return {padded, weights};
  }

  const TransitionBundle& fresh_bundle(const QueryKey& key, const Ctx& ctx) {
    std::vector<NodeId> seq;
    seq.reserve(ctx.inter.size());
    for (int64_t idx : ctx.inter) seq.push_back(g_.interaction(idx).other(key.node));
    scratch_bundle_ = build_transition(seq);
    return scratch_bundle_;
  }

  static Tensor<T> append_zero_row(const Tensor<T>& x) {
    int64_t n = x.dim(0), d = x.dim(1);
    std::vector<int64_t> idx(n + 1, 0);
    for (int64_t i = 0; i < n; ++i) idx[i] = i;
    idx[n] = 0;  // placeholder, masked to zero below
    Tensor<T> wide = index_rows(x, idx);
    std::vector<T> m((n + 1) * d, T(1));
    std::fill(m.end() - d, m.end(), T(0));
    return mul(wide, Tensor<T>::from({n + 1, d}, std::move(m)));
  }

  const TemporalGraph& g_;
  ModelState<T> state_;
  TransitionCache cache_;
  TransitionBundle scratch_bundle_;
};

}  // namespace tipgnn
