#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tipgnn/common.hpp"
#include "tipgnn/temporal_graph.hpp"

namespace tipgnn {

/// Whether an edge-list file carries a weight column between dst and
/// timestamp. kAuto follows the Network Repository convention: exactly four
/// columns means `src dst weight timestamp`, anything else means no weight.
enum class WeightColumn { kAuto, kPresent, kAbsent };

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::string s = line;
  for (char& c : s)
    if (c == ',' || c == '\t') c = ' ';
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

inline double parse_num(const std::string& tok, const char* what, size_t line_no) {
  try {
    size_t used = 0;
    double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw Error(detail::str("line ", line_no, ": cannot parse ", what, " from '",
                            tok, "'"));
  }
}

inline NodeId parse_id(const std::string& tok, const char* what, size_t line_no) {
  double v = parse_num(tok, what, line_no);
  NodeId id = static_cast<NodeId>(std::llround(v));
  if (static_cast<double>(id) != v)
    throw Error(detail::str("line ", line_no, ": ", what, " '", tok,
                            "' is not an integer id"));
  return id;
}

}  // namespace detail

/// Parse `src dst [weight] timestamp [feat...]`; separators are spaces,
/// tabs or commas; lines starting with % or # are headers.
inline std::vector<RawEdge> load_edge_list(const std::string& path,
                                           WeightColumn wc = WeightColumn::kAuto) {
  std::ifstream in(path);
  detail::check(in.good(), detail::str("cannot open ", path));
  std::vector<RawEdge> edges;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = detail::split_fields(line);
    if (fields.empty() || fields[0][0] == '%' || fields[0][0] == '#') continue;
    if (fields.size() < 3)
      throw Error(detail::str("line ", line_no, ": expected at least src dst timestamp, got ",
                              fields.size(), " fields"));
    bool weighted = wc == WeightColumn::kPresent ||
                    (wc == WeightColumn::kAuto && fields.size() == 4);
    size_t t_col = weighted ? 3 : 2;
    if (fields.size() < t_col + 1)
      throw Error(detail::str("line ", line_no, ": no timestamp column"));
    RawEdge e;
    e.src = detail::parse_id(fields[0], "src", line_no);
    e.dst = detail::parse_id(fields[1], "dst", line_no);
    e.t = detail::parse_num(fields[t_col], "timestamp", line_no);
    for (size_t i = t_col + 1; i < fields.size(); ++i)
      e.feat.push_back(detail::parse_num(fields[i], "edge feature", line_no));
    edges.push_back(std::move(e));
  }
  detail::check(!edges.empty(), detail::str(path, ": no interactions found"));
  return edges;
}

/// CSV/whitespace rows `node_id feat_1 ... feat_d`.
inline TemporalGraph::NodeFeatures load_node_features(const std::string& path) {
  std::ifstream in(path);
  detail::check(in.good(), detail::str("cannot open ", path));
  TemporalGraph::NodeFeatures feats;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = detail::split_fields(line);
    if (fields.empty() || fields[0][0] == '%' || fields[0][0] == '#') continue;
    detail::check(fields.size() >= 2,
                  detail::str("line ", line_no, ": node feature row needs id + values"));
    NodeId id = detail::parse_id(fields[0], "node_id", line_no);
    std::vector<double> f;
    for (size_t i = 1; i < fields.size(); ++i)
      f.push_back(detail::parse_num(fields[i], "node feature", line_no));
    feats[id] = std::move(f);
  }
  return feats;
}

/// Rows `node_id label` with integer labels.
inline std::unordered_map<NodeId, int> load_labels(const std::string& path) {
  std::ifstream in(path);
  detail::check(in.good(), detail::str("cannot open ", path));
  std::unordered_map<NodeId, int> labels;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = detail::split_fields(line);
    if (fields.empty() || fields[0][0] == '%' || fields[0][0] == '#') continue;
    detail::check(fields.size() >= 2, detail::str("line ", line_no, ": need id + label"));
    labels[detail::parse_id(fields[0], "node_id", line_no)] =
        static_cast<int>(detail::parse_id(fields[1], "label", line_no));
  }
  detail::check(!labels.empty(), detail::str(path, ": no labels found"));
  return labels;
}

inline void save_edge_list(const std::string& path, const std::vector<RawEdge>& edges) {
  std::ofstream out(path);
  detail::check(out.good(), detail::str("cannot write ", path));
  out << "% src dst timestamp [features]\n";
  for (const RawEdge& e : edges) {
    out << e.src << ' ' << e.dst << ' ' << e.t;
    for (double f : e.feat) out << ' ' << f;
    out << '\n';
  }
}

}  // namespace tipgnn
