#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "tipgnn/common.hpp"
#include "tipgnn/temporal_graph.hpp"

namespace tipgnn {

/// Contact-network generator over latent positions: people near each other
/// meet often, and a tunable share of interactions repeats the actor's
/// previous partner. Interaction times spread uniformly over the timespan.
/// Featureless edges, matching the public contact datasets.
inline TemporalGraph contact_graph(int64_t n_nodes, int64_t n_interactions,
                                   double p_repeat, double timespan_days,
                                   uint64_t seed) {
  detail::check(n_nodes >= 3, "contact_graph: too few nodes");
  detail::check(n_interactions >= 1, "contact_graph: no interactions");
  detail::check(p_repeat >= 0 && p_repeat < 1, "contact_graph: bad repeat rate");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<double> x(n_nodes), y(n_nodes);
  for (int64_t i = 0; i < n_nodes; ++i) {
    x[i] = unit(rng);
    y[i] = unit(rng);
  }
  // per-actor proximity preferences, heavy on the nearest few nodes
  std::vector<std::vector<double>> cdf(n_nodes, std::vector<double>(n_nodes));
  for (int64_t u = 0; u < n_nodes; ++u) {
    double acc = 0.0;
    for (int64_t v = 0; v < n_nodes; ++v) {
      double dx = x[u] - x[v], dy = y[u] - y[v];
      acc += v == u ? 0.0 : std::exp(-40.0 * (dx * dx + dy * dy));
      cdf[u][v] = acc;
    }
    for (auto& c : cdf[u]) c /= acc;
  }
  auto draw_partner = [&](int64_t u) {
    double r = unit(rng);
    return static_cast<int64_t>(std::lower_bound(cdf[u].begin(), cdf[u].end(), r) -
                                cdf[u].begin());
  };

  std::vector<NodeId> last(n_nodes, -1);
  std::uniform_int_distribution<int64_t> actor(0, n_nodes - 1);
  double dt = timespan_days * 86400.0 / static_cast<double>(n_interactions);
  std::vector<RawEdge> edges;
  edges.reserve(n_interactions);
  for (int64_t i = 0; i < n_interactions; ++i) {
    int64_t u = actor(rng);
    int64_t v;
    if (last[u] >= 0 && unit(rng) < p_repeat) {
      v = last[u];
    } else {
      v = draw_partner(u);
      if (v == u) v = (v + 1) % n_nodes;
    }
    edges.push_back({u, v, dt * static_cast<double>(i + 1), {}});
    last[u] = v;
    last[v] = u;
  }
  return TemporalGraph::build(std::move(edges));
}

/// Planted transition rule: sources walk their target ring with a constant
/// per-walk stride, so the next target is determined by the previous two
/// (t3 = 2 t2 - t1 on the ring). Targets never act, which keeps every
/// source's neighbor sequence pure rule. Recovering the rule requires
/// relating consecutive neighbors, the signal transition propagation reads.
inline TemporalGraph planted_transition_graph(int64_t n_sources, int64_t n_targets,
                                              int64_t n_interactions, uint64_t seed) {
  detail::check(n_sources >= 1 && n_targets >= 3, "planted graph: too small");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int64_t> pick_target(0, n_targets - 1);
  std::uniform_int_distribution<int64_t> pick_source(0, n_sources - 1);

  // last two target indices per source, -1 while warming up
  std::vector<std::pair<int64_t, int64_t>> h(n_sources, {-1, -1});
  std::vector<RawEdge> edges;
  edges.reserve(n_interactions);
  for (int64_t i = 0; i < n_interactions; ++i) {
    int64_t s = pick_source(rng);
    auto& [t1, t2] = h[s];
    int64_t next;
    if (t2 < 0) {
      next = pick_target(rng);
    } else {
      next = ((2 * t2 - t1) % n_targets + n_targets) % n_targets;
    }
    edges.push_back({s, n_sources + next, static_cast<double>(i + 1), {}});
    t1 = t2;
    t2 = next;
  }
  return TemporalGraph::build(std::move(edges));
}

/// High-repetition stream where the previous neighbor simply repeats most
/// of the time; the freshest step of the transition walk carries nearly all
/// of the predictive signal here.
inline TemporalGraph repetition_graph(int64_t n_nodes, int64_t n_interactions,
                                      double p_repeat, uint64_t seed) {
  return contact_graph(n_nodes, n_interactions, p_repeat, 1.0, seed);
}

struct SeparationSet {
  std::vector<double> embeddings;  // n x d row-major
  std::vector<int> labels;
  int64_t d = 0;
};

/// Linearly separable embedding set for exercising the downstream probe:
/// positives and negatives sit in displaced gaussian clouds on the first
/// few coordinates.
inline SeparationSet planted_separation(int64_t n, int64_t d, uint64_t seed,
                                        double shift = 1.4, double p_pos = 1.0 / 3.0) {
  detail::check(n >= 10 && d >= 2, "planted separation: too small");
  SeparationSet out;
  out.d = d;
  out.embeddings.resize(n * d);
  out.labels.resize(n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution pos(p_pos);
  int64_t planted_dims = std::max<int64_t>(d / 2, 1);
  for (int64_t i = 0; i < n; ++i) {
    out.labels[i] = pos(rng) ? 1 : 0;
    double mu = out.labels[i] == 1 ? shift : -shift;
    for (int64_t j = 0; j < d; ++j)
      out.embeddings[i * d + j] = noise(rng) + (j < planted_dims ? mu : 0.0);
  }
  return out;
}

}  // namespace tipgnn
