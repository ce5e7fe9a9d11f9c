#pragma once

#include "graphgp/classifier.hpp"
#include "graphgp/graph.hpp"
#include "graphgp/kernels.hpp"
#include "graphgp/regression.hpp"

#include <Eigen/Core>

#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace graphgp {

inline constexpr int kSchemaVersion = 1;

/// Rows of a "node_index,value" CSV. A non-numeric first line is a header.
struct NodeValues {
  std::vector<int> nodes;
  Eigen::VectorXd values;
};
NodeValues parse_targets_csv(std::istream& in);
NodeValues read_targets_csv(const std::string& path);

/// Rows of a "node_index,class_index" CSV.
struct NodeLabels {
  std::vector<int> nodes;
  std::vector<int> labels;
  int num_classes() const;  // 1 + max label, 0 if empty
};
NodeLabels parse_labels_csv(std::istream& in);
NodeLabels read_labels_csv(const std::string& path);

/// Kernel spec given either inline as JSON or as a path to a JSON file.
KernelSpec load_kernel_spec(const std::string& json_or_path);

struct RegressionSnapshot {
  KernelSpec spec;
  double noise_variance = 0.0;
  std::vector<int> train_nodes;
  Eigen::VectorXd targets;  // as seen by the model (after standardization)
  int eigenpairs = 0;
  double target_mean = 0.0;
  double target_std = 1.0;
};
std::string to_json(const RegressionSnapshot& s);
RegressionSnapshot regression_snapshot_from_json(std::string_view json);

/// Variational parameters. `scale` holds, per class, the diagonal of R_c
/// (diagonal form) or the lower triangle of R_c in row-major order
/// (R_00, R_10, R_11, R_20, ...) in full form; Sigma_c = R_c R_c^T.
struct ClassifierSnapshot {
  KernelSpec spec;
  int num_classes = 0;
  std::vector<int> inducing_nodes;
  Eigen::MatrixXd mean;                   // C x m
  std::vector<std::vector<double>> scale;  // C entries
  VariationalCovariance form = VariationalCovariance::diagonal;
  bool whitened = true;
  double epsilon = 1e-3;
  int eigenpairs = 0;
};
ClassifierSnapshot snapshot(const VariationalClassifier& model, int eigenpairs);
VariationalClassifier restore(const ClassifierSnapshot& s, std::shared_ptr<const SpectralBasis> basis);
std::string to_json(const ClassifierSnapshot& s);
ClassifierSnapshot classifier_snapshot_from_json(std::string_view json);

/// Reads the "model" field of a snapshot ("regression" or "classification").
std::string snapshot_model_type(std::string_view json);

/// A LINQS-format citation dataset (<name>.cites and <name>.content).
/// Citations become unweighted undirected edges; self-citations and
/// citations to papers without content are dropped.
struct CitationDataset {
  WeightedGraph graph;
  std::vector<int> labels;
  std::vector<std::string> class_names;  // sorted, label i is class_names[i]
  std::vector<std::string> paper_ids;    // node i is paper_ids[i]
};
CitationDataset read_linqs(const std::string& directory, const std::string& name = "cora");

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view contents);

}  // namespace graphgp
