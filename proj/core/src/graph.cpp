#include "graphgp/graph.hpp"

#include "graphgp/error.hpp"
#include "graphgp/log.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace graphgp {

WeightedGraph::WeightedGraph(int node_count, std::vector<Edge> edges) : node_count_(node_count) {
  if (node_count < 0) throw InvalidArgument("node count must be non-negative");
  for (Edge& e : edges) {
    if (e.u < 0 || e.v < 0 || e.u >= node_count || e.v >= node_count)
      throw InvalidArgument("edge (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                            ") references a node outside [0, " + std::to_string(node_count) + ")");
    if (e.u == e.v) throw InvalidArgument("self-loop on node " + std::to_string(e.u));
    if (!(e.weight > 0.0) || !std::isfinite(e.weight))
      throw InvalidArgument("edge weights must be finite and strictly positive");
    if (e.u > e.v) std::swap(e.u, e.v);
  }
  std::sort(edges.begin(), edges.end(),
            [](const Edge& a, const Edge& b) { return std::tie(a.u, a.v) < std::tie(b.u, b.v); });
  for (const Edge& e : edges) {
    if (!edges_.empty() && edges_.back().u == e.u && edges_.back().v == e.v)
      edges_.back().weight += e.weight;
    else
      edges_.push_back(e);
  }
}

SparseMatrix WeightedGraph::adjacency() const {
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(2 * edges_.size());
  for (const Edge& e : edges_) {
    triplets.emplace_back(e.u, e.v, e.weight);
    triplets.emplace_back(e.v, e.u, e.weight);
  }
  SparseMatrix w(node_count_, node_count_);
  w.setFromTriplets(triplets.begin(), triplets.end());
  return w;
}

Eigen::VectorXd WeightedGraph::degrees() const {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(node_count_);
  for (const Edge& e : edges_) {
    d[e.u] += e.weight;
    d[e.v] += e.weight;
  }
  return d;
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

long long parse_index(std::string_view tok, int line_no) {
  long long value = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("invalid node index '" + std::string(tok) + "'", line_no);
  if (value < 0) throw ParseError("negative node index", line_no);
  if (value > std::numeric_limits<int>::max() - 1) throw ParseError("node index too large", line_no);
  return value;
}

double parse_weight(std::string_view tok, int line_no) {
  // std::from_chars for double is available in libstdc++ >= 11.
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("invalid weight '" + std::string(tok) + "'", line_no);
  if (!std::isfinite(value)) throw ParseError("non-finite weight", line_no);
  if (value <= 0.0) throw ParseError("non-positive weight", line_no);
  return value;
}

}  // namespace

EdgeListParseResult parse_edge_list(std::istream& in) {
  EdgeListParseResult result;
  std::vector<Edge> edges;
  long long declared_nodes = -1;
  long long max_index = -1;
  bool seen_record = false;
  std::map<std::pair<int, int>, int> seen_pairs;

  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto tokens = split_ws(line);
    if (tokens.empty()) continue;

    if (tokens[0] == "nodes") {
      if (seen_record) throw ParseError("'nodes' header must precede all edges", line_no);
      if (tokens.size() != 2) throw ParseError("expected 'nodes N'", line_no);
      declared_nodes = parse_index(tokens[1], line_no);
      seen_record = true;
      continue;
    }
    seen_record = true;
    if (tokens.size() < 2 || tokens.size() > 3)
      throw ParseError("expected 'u v [w]'", line_no);
    const auto u = parse_index(tokens[0], line_no);
    const auto v = parse_index(tokens[1], line_no);
    const double w = tokens.size() == 3 ? parse_weight(tokens[2], line_no) : 1.0;
    if (declared_nodes >= 0 && (u >= declared_nodes || v >= declared_nodes))
      throw ParseError("node index exceeds declared node count", line_no);
    max_index = std::max({max_index, u, v});
    if (u == v) {
      ++result.self_loops_dropped;
      continue;
    }
    auto key = std::minmax(static_cast<int>(u), static_cast<int>(v));
    if (seen_pairs[key]++ > 0) ++result.duplicates_merged;
    edges.push_back({static_cast<int>(u), static_cast<int>(v), w});
  }

  const long long n = declared_nodes >= 0 ? declared_nodes : max_index + 1;
  if (result.self_loops_dropped > 0)
    warn("edge list: dropped " + std::to_string(result.self_loops_dropped) + " self-loop(s)");
  result.graph = WeightedGraph(static_cast<int>(n), std::move(edges));
  return result;
}

EdgeListParseResult parse_edge_list(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_edge_list(in);
}

EdgeListParseResult read_edge_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open edge list '" + path + "'");
  return parse_edge_list(in);
}

std::string format_edge_list(const WeightedGraph& g) {
  std::ostringstream out;
  out.precision(17);
  out << "nodes " << g.node_count() << '\n';
  for (const Edge& e : g.edges()) out << e.u << ' ' << e.v << ' ' << e.weight << '\n';
  return out.str();
}

std::unordered_map<std::string, int> read_node_id_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open node id map '" + path + "'");
  std::unordered_map<std::string, int> map;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.empty() || raw[0] == '#') continue;
    const auto comma = raw.rfind(',');
    if (comma == std::string::npos) throw ParseError("expected 'id,index'", line_no);
    std::string id = raw.substr(0, comma);
    std::string_view idx = std::string_view(raw).substr(comma + 1);
    if (line_no == 1 && idx == "index") continue;  // header
    const int index = static_cast<int>(parse_index(idx, line_no));
    if (!map.emplace(std::move(id), index).second) throw ParseError("duplicate id", line_no);
  }
  return map;
}

std::string_view to_string(LaplacianKind kind) {
  return kind == LaplacianKind::unnormalized ? "unnormalized" : "sym_normalized";
}

LaplacianKind laplacian_kind_from_string(std::string_view name) {
  if (name == "unnormalized" || name == "combinatorial") return LaplacianKind::unnormalized;
  if (name == "sym_normalized" || name == "normalized" || name == "symmetric")
    return LaplacianKind::sym_normalized;
  throw InvalidArgument("unknown Laplacian kind '" + std::string(name) + "'");
}

LaplacianOperator build_laplacian(const WeightedGraph& g, LaplacianKind kind) {
  const int n = g.node_count();
  LaplacianOperator op;
  op.kind = kind;
  op.degrees = g.degrees();

  Eigen::VectorXd scale = Eigen::VectorXd::Ones(n);
  if (kind == LaplacianKind::sym_normalized) {
    for (int i = 0; i < n; ++i) scale[i] = op.degrees[i] > 0.0 ? 1.0 / std::sqrt(op.degrees[i]) : 0.0;
  }

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(2 * g.edge_count() + n);
  for (const Edge& e : g.edges()) {
    const double off = -e.weight * scale[e.u] * scale[e.v];
    triplets.emplace_back(e.u, e.v, off);
    triplets.emplace_back(e.v, e.u, off);
  }
  for (int i = 0; i < n; ++i) {
    double diag = op.degrees[i];
    if (kind == LaplacianKind::sym_normalized) diag = op.degrees[i] > 0.0 ? 1.0 : 0.0;
    triplets.emplace_back(i, i, diag);
  }
  op.matrix.resize(n, n);
  op.matrix.setFromTriplets(triplets.begin(), triplets.end());
  op.matrix.makeCompressed();
  return op;
}

std::vector<int> connected_components(const WeightedGraph& g) {
  const int n = g.node_count();
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (const Edge& e : g.edges()) {
    const int a = find(e.u), b = find(e.v);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::vector<int> labels(n, -1);
  std::vector<int> root_label(n, -1);
  int next = 0;
  for (int i = 0; i < n; ++i) {
    const int r = find(i);
    if (root_label[r] < 0) root_label[r] = next++;
    labels[i] = root_label[r];
  }
  return labels;
}

int component_count(std::span<const int> labels) {
  int count = 0;
  for (int l : labels) count = std::max(count, l + 1);
  return count;
}

Subgraph largest_component(const WeightedGraph& g) {
  const auto labels = connected_components(g);
  const int count = component_count(labels);
  if (count == 0) return {};
  std::vector<int> sizes(count, 0);
  for (int l : labels) ++sizes[l];
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());

  Subgraph sub;
  std::vector<int> new_index(g.node_count(), -1);
  for (int i = 0; i < g.node_count(); ++i) {
    if (labels[i] == best) {
      new_index[i] = static_cast<int>(sub.original_index.size());
      sub.original_index.push_back(i);
    }
  }
  std::vector<Edge> edges;
  for (const Edge& e : g.edges())
    if (labels[e.u] == best) edges.push_back({new_index[e.u], new_index[e.v], e.weight});
  sub.graph = WeightedGraph(static_cast<int>(sub.original_index.size()), std::move(edges));
  return sub;
}

}  // namespace graphgp
