#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace graphgp {

using SparseMatrix = Eigen::SparseMatrix<double>;

struct Edge {
  int u = 0;
  int v = 0;
  double weight = 1.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Weighted undirected graph on nodes 0..node_count-1.
///
/// Edges are stored canonically (u < v, sorted, one entry per unordered pair).
/// The constructor rejects self-loops, non-positive weights and out-of-range
/// indices; repeated pairs are merged by summing their weights.
class WeightedGraph {
 public:
  WeightedGraph() = default;
  WeightedGraph(int node_count, std::vector<Edge> edges);

  int node_count() const { return node_count_; }
  std::span<const Edge> edges() const { return edges_; }
  std::size_t edge_count() const { return edges_.size(); }

  /// Symmetric weighted adjacency matrix W.
  SparseMatrix adjacency() const;
  /// Row sums of W.
  Eigen::VectorXd degrees() const;

 private:
  int node_count_ = 0;
  std::vector<Edge> edges_;
};

struct EdgeListParseResult {
  WeightedGraph graph;
  int self_loops_dropped = 0;
  int duplicates_merged = 0;
};

// Edge-list format: one "u v [w]" per line, '#' starts a comment, an optional
// first record "nodes N" fixes the node count (otherwise 1 + max index).
EdgeListParseResult parse_edge_list(std::istream& in);
EdgeListParseResult parse_edge_list(std::string_view text);
EdgeListParseResult read_edge_list(const std::string& path);

/// Writes the canonical edge list, including a "nodes N" header.
std::string format_edge_list(const WeightedGraph& g);

/// Reads a "id,index" CSV mapping external string identifiers to node indices.
std::unordered_map<std::string, int> read_node_id_map(const std::string& path);

enum class LaplacianKind { unnormalized, sym_normalized };

std::string_view to_string(LaplacianKind kind);
LaplacianKind laplacian_kind_from_string(std::string_view name);

/// Graph Laplacian D - W, or its symmetric normalization D^-1/2 (D - W) D^-1/2.
///
/// For sym_normalized, degree-zero nodes get D^-1/2 = 0, so their row and
/// column are identically zero.
struct LaplacianOperator {
  LaplacianKind kind = LaplacianKind::unnormalized;
  SparseMatrix matrix;
  Eigen::VectorXd degrees;

  int size() const { return static_cast<int>(matrix.rows()); }
};

LaplacianOperator build_laplacian(const WeightedGraph& g, LaplacianKind kind);

/// Connected component labels, numbered 0.. in order of first appearance.
std::vector<int> connected_components(const WeightedGraph& g);
int component_count(std::span<const int> labels);

/// Induced subgraph on the largest connected component. `original_index[i]`
/// gives the node in `g` that became node i.
struct Subgraph {
  WeightedGraph graph;
  std::vector<int> original_index;
};
Subgraph largest_component(const WeightedGraph& g);

}  // namespace graphgp
