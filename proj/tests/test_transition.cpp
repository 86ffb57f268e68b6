#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <random>
#include <set>

#include "tipgnn/temporal_graph.hpp"
#include "tipgnn/transition.hpp"

using tipgnn::NodeId;
using tipgnn::TransitionBundle;
using D = tipgnn::Tensor<double>;

namespace {

// Independent reference built straight from the definitions: ids in order of
// first appearance, one link per chronologically adjacent pair, self-loops
// added on top with saturation. Kept deliberately naive (linear scans, set
// of pairs) so it shares nothing with the production code path.
struct RefTransition {
  std::vector<NodeId> ids;
  std::set<std::pair<int, int>> links;          // A entries
  std::set<std::pair<int, int>> links_tilde;    // A_tilde entries
  std::vector<int> slot_owner;                  // B: column -> row
};

RefTransition reference_transition(const std::vector<NodeId>& seq) {
  RefTransition r;
  auto index_of = [&](NodeId v) {
    for (size_t i = 0; i < r.ids.size(); ++i)
      if (r.ids[i] == v) return static_cast<int>(i);
    r.ids.push_back(v);
    return static_cast<int>(r.ids.size() - 1);
  };
  for (NodeId v : seq) r.slot_owner.push_back(index_of(v));
  for (size_t i = 0; i + 1 < seq.size(); ++i) {
    int a = r.slot_owner[i], b = r.slot_owner[i + 1];
    r.links.insert({a, b});
  }
  r.links_tilde = r.links;
  for (size_t i = 0; i < r.ids.size(); ++i)
    r.links_tilde.insert({static_cast<int>(i), static_cast<int>(i)});
  return r;
}

void expect_matches_reference(const std::vector<NodeId>& seq) {
  TransitionBundle tb = tipgnn::build_transition(seq);
  RefTransition ref = reference_transition(seq);
  INFO("sequence size " << seq.size());
  REQUIRE(tb.neighbor_ids == ref.ids);
  int64_t n = tb.n_neighbors();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      bool a = ref.links.count({static_cast<int>(i), static_cast<int>(j)}) > 0;
      bool at = ref.links_tilde.count({static_cast<int>(i), static_cast<int>(j)}) > 0;
      REQUIRE(static_cast<bool>(tb.A[i * n + j]) == a);
      REQUIRE(static_cast<bool>(tb.A_tilde[i * n + j]) == at);
    }
  }
  REQUIRE(tb.col_to_row.size() == ref.slot_owner.size());
  for (size_t s = 0; s < ref.slot_owner.size(); ++s)
    REQUIRE(tb.col_to_row[s] == ref.slot_owner[s]);
}

}  // namespace

TEST_CASE("single interaction: self-loop only") {
  auto tb = tipgnn::build_transition({41});
  REQUIRE(tb.neighbor_ids == std::vector<NodeId>{41});
  REQUIRE(tb.A == std::vector<uint8_t>{0});
  REQUIRE(tb.A_tilde == std::vector<uint8_t>{1});
  REQUIRE(tb.dense_B() == std::vector<uint8_t>{1});
}

TEST_CASE("repeat visits share an index; links follow adjacent pairs only") {
  auto tb = tipgnn::build_transition({1, 2, 1, 3});  // v1 v2 v1 v3
  REQUIRE(tb.neighbor_ids == std::vector<NodeId>({1, 2, 3}));
  // A rows: v1->v2, v2->v1, v1->v3; nothing else (no v2->v3 skip link)
  std::vector<uint8_t> want_a{0, 1, 1,   // v1 -> v2, v1 -> v3
                              1, 0, 0,   // v2 -> v1
                              0, 0, 0};
  REQUIRE(tb.A == want_a);
  std::vector<uint8_t> want_at{1, 1, 1, 1, 1, 0, 0, 0, 1};
  REQUIRE(tb.A_tilde == want_at);
  REQUIRE(tb.col_to_row == std::vector<int64_t>({0, 1, 0, 2}));
  expect_matches_reference({1, 2, 1, 3});
}

TEST_CASE("consecutive repeats saturate instead of double-counting") {
  auto tb = tipgnn::build_transition({5, 5});
  REQUIRE(tb.neighbor_ids == std::vector<NodeId>{5});
  REQUIRE(tb.A == std::vector<uint8_t>{1});
  REQUIRE(tb.A_tilde == std::vector<uint8_t>{1});
  expect_matches_reference({5, 5});
}

TEST_CASE("empty sequence yields an empty bundle") {
  auto tb = tipgnn::build_transition({});
  REQUIRE(tb.n_neighbors() == 0);
  REQUIRE(tb.n_interactions() == 0);
}

TEST_CASE("exhaustive oracle equivalence over short sequences") {
  // every sequence of length 1..6 over up to 4 distinct neighbors
  for (int len = 1; len <= 6; ++len) {
    int64_t total = 1;
    for (int i = 0; i < len; ++i) total *= 4;
    for (int64_t code = 0; code < total; ++code) {
      std::vector<NodeId> seq;
      int64_t c = code;
      for (int i = 0; i < len; ++i) {
        seq.push_back(static_cast<NodeId>(c % 4));
        c /= 4;
      }
      expect_matches_reference(seq);
    }
  }
}

TEST_CASE("random oracle equivalence over longer sequences") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 2000; ++trial) {
    int len = 1 + static_cast<int>(rng() % 8);
    std::vector<NodeId> seq;
    for (int i = 0; i < len; ++i) seq.push_back(static_cast<NodeId>(rng() % 5));
    expect_matches_reference(seq);
  }
}

TEST_CASE("incidence matrix structure") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    int len = 1 + static_cast<int>(rng() % 10);
    std::vector<NodeId> seq;
    for (int i = 0; i < len; ++i) seq.push_back(static_cast<NodeId>(rng() % 4));
    auto tb = tipgnn::build_transition(seq);
    auto B = tb.dense_B();
    int64_t n = tb.n_neighbors(), s = tb.n_interactions();

    // every column exactly one 1
    for (int64_t c = 0; c < s; ++c) {
      int ones = 0;
      for (int64_t r = 0; r < n; ++r) ones += B[r * s + c];
      REQUIRE(ones == 1);
    }
    // row sums = multiplicities
    for (int64_t r = 0; r < n; ++r) {
      int64_t row_sum = 0;
      for (int64_t c = 0; c < s; ++c) row_sum += B[r * s + c];
      int64_t mult = std::count(seq.begin(), seq.end(), tb.neighbor_ids[r]);
      REQUIRE(row_sum == mult);
    }
    // A_tilde diagonal all ones
    for (int64_t r = 0; r < n; ++r) REQUIRE(tb.A_tilde[r * n + r] == 1);
  }
}

TEST_CASE("transition depends on order, not on timestamp values") {
  // same partner order under two different time scales
  auto a = tipgnn::build_transition({3, 1, 4, 1, 5});
  auto b = tipgnn::build_transition({3, 1, 4, 1, 5});
  REQUIRE(a.A == b.A);
  REQUIRE(a.col_to_row == b.col_to_row);
}

TEST_CASE("stack_edge_features concatenates edge features with time encodings") {
  using tipgnn::RawEdge;
  auto g = tipgnn::TemporalGraph::build(
      {RawEdge{1, 2, 10.0, {0.5, -1.0}}, RawEdge{1, 3, 20.0, {2.0, 0.25}}});
  auto inter = g.sample_recent(1, 30.0, 5);
  REQUIRE(inter.size() == 2);

  // identity-ish encoder: Phi(dt) = [dt, 2 dt]
  auto encode = [](const std::vector<double>& dts) {
    std::vector<double> v;
    for (double dt : dts) {
      v.push_back(dt);
      v.push_back(2 * dt);
    }
    return D::from({static_cast<int64_t>(dts.size()), 2}, v);
  };
  D hs = tipgnn::stack_edge_features<double>(g, inter, 30.0, encode);
  REQUIRE(hs.shape() == tipgnn::Shape{2, 4});
  // row 0: feat (0.5,-1) then Phi(20) = (20,40)
  REQUIRE(hs.data()[0] == 0.5);
  REQUIRE(hs.data()[1] == -1.0);
  REQUIRE(hs.data()[2] == 20.0);
  REQUIRE(hs.data()[3] == 40.0);
  REQUIRE(hs.data()[6] == 10.0);

  REQUIRE_THROWS_WITH(tipgnn::stack_edge_features<double>(g, inter, 15.0, encode),
                      Catch::Matchers::ContainsSubstring("leakage"));
}

TEST_CASE("featureless datasets produce pure time-encoding rows") {
  using tipgnn::RawEdge;
  auto g = tipgnn::TemporalGraph::build({RawEdge{1, 2, 5.0, {}}, RawEdge{1, 3, 6.0, {}}});
  auto inter = g.sample_recent(1, 10.0, 5);
  auto encode = [](const std::vector<double>& dts) {
    return D::full({static_cast<int64_t>(dts.size()), 3}, 1.0);
  };
  D hs = tipgnn::stack_edge_features<double>(g, inter, 10.0, encode);
  REQUIRE(hs.shape() == tipgnn::Shape{2, 3});
}

TEST_CASE("bundle cache returns identical results and evicts at capacity") {
  using tipgnn::RawEdge;
  std::vector<RawEdge> es;
  std::mt19937_64 mk(4);
  for (int i = 0; i < 300; ++i)
    es.push_back(RawEdge{static_cast<NodeId>(mk() % 25),
                         static_cast<NodeId>(mk() % 25), 1.0 * i, {}});
  auto g = tipgnn::TemporalGraph::build(std::move(es));

  tipgnn::TransitionCache cache(8);
  for (int pass = 0; pass < 2; ++pass) {
    for (NodeId u = 0; u < 5; ++u) {
      auto inter = g.sample_recent(u, 250.0, 6);
      std::vector<NodeId> seq;
      for (int64_t i : inter) seq.push_back(g.interaction(i).other(u));
      auto want = tipgnn::build_transition(seq);
      const auto& got = cache.get(g, u, 250.0, 6);
      REQUIRE(got.A == want.A);
      REQUIRE(got.neighbor_ids == want.neighbor_ids);
      REQUIRE(got.col_to_row == want.col_to_row);
    }
  }
  REQUIRE(cache.hits() >= 5);  // second pass hits
  REQUIRE(cache.size() <= 8);

  // overflow the capacity and re-verify correctness after evictions
  for (NodeId u = 0; u < 25; ++u) cache.get(g, u, 100.0, 6);
  REQUIRE(cache.size() <= 8);
  for (NodeId u = 0; u < 5; ++u) {
    auto inter = g.sample_recent(u, 100.0, 6);
    std::vector<NodeId> seq;
    for (int64_t i : inter) seq.push_back(g.interaction(i).other(u));
    REQUIRE(cache.get(g, u, 100.0, 6).col_to_row == tipgnn::build_transition(seq).col_to_row);
  }
}
