#include "graphgp/io.hpp"

#include "graphgp/error.hpp"
#include "graphgp/log.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace graphgp {
namespace {

using ordered_json = nlohmann::ordered_json;

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

bool parse_int(std::string_view s, int& out) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_double(std::string_view s, double& out) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Calls row(fields, line_number) for each data row of a two-column CSV.
template <class Row>
void for_each_csv_row(std::istream& in, Row row) {
  std::string line;
  int line_no = 0;
  bool seen_data = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto fields = split_fields(text);
    if (fields.size() != 2) throw ParseError("expected 2 comma-separated fields", line_no);
    int probe;
    if (!seen_data && !parse_int(fields[0], probe)) {
      seen_data = true;  // header
      continue;
    }
    seen_data = true;
    row(fields, line_no);
  }
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return in;
}

nlohmann::json parse_json(std::string_view text, const char* what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(std::string("invalid ") + what + " JSON: " + e.what());
  }
}

void check_schema(const nlohmann::json& j, const char* model) {
  if (j.value("schema_version", -1) != kSchemaVersion)
    throw InvalidArgument("unsupported snapshot schema_version (expected " + std::to_string(kSchemaVersion) + ")");
  if (j.value("model", std::string()) != model)
    throw InvalidArgument(std::string("snapshot is not a ") + model + " model");
}

}  // namespace

NodeValues parse_targets_csv(std::istream& in) {
  std::vector<int> nodes;
  std::vector<double> values;
  for_each_csv_row(in, [&](const std::vector<std::string_view>& f, int line) {
    int node;
    double value;
    if (!parse_int(f[0], node) || node < 0) throw ParseError("invalid node index '" + std::string(f[0]) + "'", line);
    if (!parse_double(f[1], value)) throw ParseError("invalid value '" + std::string(f[1]) + "'", line);
    nodes.push_back(node);
    values.push_back(value);
  });
  NodeValues out;
  out.nodes = std::move(nodes);
  out.values = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  return out;
}

NodeValues read_targets_csv(const std::string& path) {
  auto in = open_input(path);
  return parse_targets_csv(in);
}

int NodeLabels::num_classes() const {
  return labels.empty() ? 0 : 1 + *std::max_element(labels.begin(), labels.end());
}

NodeLabels parse_labels_csv(std::istream& in) {
  NodeLabels out;
  for_each_csv_row(in, [&](const std::vector<std::string_view>& f, int line) {
    int node, label;
    if (!parse_int(f[0], node) || node < 0) throw ParseError("invalid node index '" + std::string(f[0]) + "'", line);
    if (!parse_int(f[1], label) || label < 0)
      throw ParseError("invalid class index '" + std::string(f[1]) + "'", line);
    out.nodes.push_back(node);
    out.labels.push_back(label);
  });
  return out;
}

NodeLabels read_labels_csv(const std::string& path) {
  auto in = open_input(path);
  return parse_labels_csv(in);
}

KernelSpec load_kernel_spec(const std::string& json_or_path) {
  const auto text = trim(json_or_path);
  if (!text.empty() && text.front() == '{') return kernel_spec_from_json(text);
  return kernel_spec_from_json(read_text_file(json_or_path));
}

std::string to_json(const RegressionSnapshot& s) {
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["model"] = "regression";
  j["kernel"] = ordered_json::parse(to_json(s.spec));
  j["noise_variance"] = s.noise_variance;
  j["eigenpairs"] = s.eigenpairs;
  j["target_mean"] = s.target_mean;
  j["target_std"] = s.target_std;
  j["train_nodes"] = s.train_nodes;
  j["targets"] = std::vector<double>(s.targets.data(), s.targets.data() + s.targets.size());
  return j.dump(2) + "\n";
}

RegressionSnapshot regression_snapshot_from_json(std::string_view text) {
  const auto j = parse_json(text, "snapshot");
  check_schema(j, "regression");
  try {
    RegressionSnapshot s;
    s.spec = kernel_spec_from_json(j.at("kernel").dump());
    s.noise_variance = j.at("noise_variance").get<double>();
    s.eigenpairs = j.at("eigenpairs").get<int>();
    s.target_mean = j.value("target_mean", 0.0);
    s.target_std = j.value("target_std", 1.0);
    s.train_nodes = j.at("train_nodes").get<std::vector<int>>();
    const auto y = j.at("targets").get<std::vector<double>>();
    if (y.size() != s.train_nodes.size()) throw InvalidArgument("snapshot has mismatched train_nodes and targets");
    s.targets = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed regression snapshot: ") + e.what());
  }
}

ClassifierSnapshot snapshot(const VariationalClassifier& model, int eigenpairs) {
  ClassifierSnapshot s;
  s.spec = model.spec();
  s.num_classes = model.num_classes();
  s.inducing_nodes = model.inducing_nodes();
  s.mean = model.mean();
  s.form = model.covariance_form();
  s.whitened = model.whitened();
  s.epsilon = model.epsilon();
  s.eigenpairs = eigenpairs;
  const int m = model.num_inducing();
  for (int c = 0; c < s.num_classes; ++c) {
    std::vector<double> entries;
    if (s.form == VariationalCovariance::diagonal) {
      for (int j = 0; j < m; ++j) entries.push_back(model.scale()(c, j));
    } else {
      const Eigen::MatrixXd R = model.scale_factor(c);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j <= i; ++j) entries.push_back(R(i, j));
    }
    s.scale.push_back(std::move(entries));
  }
  return s;
}

VariationalClassifier restore(const ClassifierSnapshot& s, std::shared_ptr<const SpectralBasis> basis) {
  VariationalClassifier model(std::move(basis), s.spec, s.num_classes, s.inducing_nodes, s.form, s.whitened,
                              s.epsilon);
  const int m = model.num_inducing();
  const std::size_t per_class =
      s.form == VariationalCovariance::diagonal ? static_cast<std::size_t>(m) : static_cast<std::size_t>(m) * (m + 1) / 2;
  if (s.scale.size() != static_cast<std::size_t>(s.num_classes))
    throw InvalidArgument("snapshot scale must have one entry per class");
  for (const auto& row : s.scale)
    if (row.size() != per_class) throw InvalidArgument("snapshot scale entry has the wrong length");
  model.set_mean(s.mean);
  if (s.form == VariationalCovariance::diagonal) {
    Eigen::MatrixXd scale(s.num_classes, m);
    for (int c = 0; c < s.num_classes; ++c)
      for (int j = 0; j < m; ++j) scale(c, j) = s.scale[c][j];
    model.set_scale(scale);
  } else {
    for (int c = 0; c < s.num_classes; ++c) {
      Eigen::MatrixXd R = Eigen::MatrixXd::Zero(m, m);
      std::size_t at = 0;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j <= i; ++j) R(i, j) = s.scale[c][at++];
      model.set_scale_factor(c, R);
    }
  }
  return model;
}

std::string to_json(const ClassifierSnapshot& s) {
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["model"] = "classification";
  j["kernel"] = ordered_json::parse(to_json(s.spec));
  j["num_classes"] = s.num_classes;
  j["eigenpairs"] = s.eigenpairs;
  j["epsilon"] = s.epsilon;
  j["whitened"] = s.whitened;
  j["covariance"] = s.form == VariationalCovariance::diagonal ? "diagonal" : "full";
  j["inducing_nodes"] = s.inducing_nodes;
  ordered_json mean = ordered_json::array();
  for (Eigen::Index c = 0; c < s.mean.rows(); ++c) {
    std::vector<double> row(static_cast<std::size_t>(s.mean.cols()));
    for (Eigen::Index k = 0; k < s.mean.cols(); ++k) row[static_cast<std::size_t>(k)] = s.mean(c, k);
    mean.push_back(row);
  }
  j["mean"] = mean;
  j["scale"] = s.scale;
  return j.dump(2) + "\n";
}

ClassifierSnapshot classifier_snapshot_from_json(std::string_view text) {
  const auto j = parse_json(text, "snapshot");
  check_schema(j, "classification");
  try {
    ClassifierSnapshot s;
    s.spec = kernel_spec_from_json(j.at("kernel").dump());
    s.num_classes = j.at("num_classes").get<int>();
    s.eigenpairs = j.at("eigenpairs").get<int>();
    s.epsilon = j.at("epsilon").get<double>();
    s.whitened = j.at("whitened").get<bool>();
    const auto form = j.at("covariance").get<std::string>();
    if (form == "diagonal")
      s.form = VariationalCovariance::diagonal;
    else if (form == "full")
      s.form = VariationalCovariance::full;
    else
      throw InvalidArgument("unknown covariance form '" + form + "'");
    s.inducing_nodes = j.at("inducing_nodes").get<std::vector<int>>();
    const auto mean = j.at("mean").get<std::vector<std::vector<double>>>();
    const auto m = static_cast<Eigen::Index>(s.inducing_nodes.size());
    if (mean.size() != static_cast<std::size_t>(s.num_classes)) throw InvalidArgument("snapshot mean has wrong shape");
    s.mean.resize(s.num_classes, m);
    for (int c = 0; c < s.num_classes; ++c) {
      if (mean[c].size() != static_cast<std::size_t>(m)) throw InvalidArgument("snapshot mean has wrong shape");
      for (Eigen::Index k = 0; k < m; ++k) s.mean(c, k) = mean[c][static_cast<std::size_t>(k)];
    }
    s.scale = j.at("scale").get<std::vector<std::vector<double>>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed classifier snapshot: ") + e.what());
  }
}

std::string snapshot_model_type(std::string_view text) {
  const auto j = parse_json(text, "snapshot");
  if (!j.is_object() || !j.contains("model")) throw InvalidArgument("snapshot has no 'model' field");
  return j["model"].get<std::string>();
}

CitationDataset read_linqs(const std::string& directory, const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path dir(directory);
  auto content = open_input((dir / (name + ".content")).string());

  CitationDataset out;
  std::unordered_map<std::string, int> index;
  std::vector<std::string> raw_labels;
  std::string line;
  int line_no = 0;
  while (std::getline(content, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::string> tokens;
    for (std::string t; fields >> t;) tokens.push_back(std::move(t));
    if (tokens.empty()) continue;
    if (tokens.size() < 2) throw ParseError("content row needs an id and a label", line_no);
    if (!index.emplace(tokens.front(), static_cast<int>(out.paper_ids.size())).second)
      throw ParseError("duplicate paper id '" + tokens.front() + "'", line_no);
    out.paper_ids.push_back(tokens.front());
    raw_labels.push_back(tokens.back());
  }

  std::set<std::string> classes(raw_labels.begin(), raw_labels.end());
  out.class_names.assign(classes.begin(), classes.end());
  for (const auto& label : raw_labels)
    out.labels.push_back(static_cast<int>(
        std::lower_bound(out.class_names.begin(), out.class_names.end(), label) - out.class_names.begin()));

  auto cites = open_input((dir / (name + ".cites")).string());
  std::set<std::pair<int, int>> pairs;
  int unknown = 0;
  line_no = 0;
  while (std::getline(cites, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string a, b;
    if (!(fields >> a)) continue;
    if (!(fields >> b)) throw ParseError("citation row needs two paper ids", line_no);
    const auto ia = index.find(a), ib = index.find(b);
    if (ia == index.end() || ib == index.end()) {
      ++unknown;
      continue;
    }
    if (ia->second == ib->second) continue;
    pairs.emplace(std::min(ia->second, ib->second), std::max(ia->second, ib->second));
  }
  if (unknown > 0) warn(std::to_string(unknown) + " citations reference papers without content; dropped");

  std::vector<Edge> edges;
  edges.reserve(pairs.size());
  for (const auto& [u, v] : pairs) edges.push_back({u, v, 1.0});
  out.graph = WeightedGraph(static_cast<int>(out.paper_ids.size()), std::move(edges));
  return out;
}

std::string read_text_file(const std::string& path) {
  auto in = open_input(path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text_file(const std::string& path, std::string_view contents) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << contents;
  if (!out) throw Error("failed writing '" + path + "'");
}

}  // namespace graphgp
