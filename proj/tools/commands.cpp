#include "commands.hpp"

#include "graphgp/classifier.hpp"
#include "graphgp/error.hpp"
#include "graphgp/graph.hpp"
#include "graphgp/io.hpp"
#include "graphgp/log.hpp"
#include "graphgp/regression.hpp"
#include "graphgp/spectral.hpp"
#include "graphgp/training.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

namespace graphgp::cli {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::string fmt(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string out_path(const RunConfig& config, const std::string& name) {
  return (fs::path(config.out) / name).string();
}

void write_json(const std::string& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

Json parse_json(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), 0);
  }
}

// User JSON overrides the command's defaults field by field.
KernelSpec kernel_with_defaults(const std::string& arg, const KernelSpec& defaults) {
  if (arg.empty()) return defaults;
  const auto first = arg.find_first_not_of(" \t\r\n");
  const std::string text = first != std::string::npos && arg[first] == '{' ? arg : read_text_file(arg);
  Json merged = parse_json(to_json(defaults));
  merged.update(parse_json(text));
  return kernel_spec_from_json(merged.dump());
}

Json spec_json(const KernelSpec& spec) { return parse_json(to_json(spec)); }

struct LoadedBasis {
  std::shared_ptr<const SpectralBasis> basis;
  bool cache_hit = false;
  std::string cache_file;
};

SpectralBasis leading(SpectralBasis full, int count) {
  if (count >= full.size()) return full;
  full.eigenvalues.conservativeResize(count);
  full.eigenvectors.conservativeResize(Eigen::NoChange, count);
  return full;
}

// Dense up to the dense limit (exact, like an eigh call), Lanczos beyond.
LoadedBasis load_basis(const WeightedGraph& graph, LaplacianKind kind, int requested) {
  if (requested < 1) throw InvalidArgument("--eigenpairs must be at least 1");
  const int n = graph.node_count();
  if (n == 0) throw InvalidArgument("graph has no nodes");
  int ell = requested;
  if (ell > n) {
    warn("requested " + std::to_string(requested) + " eigenpairs but the graph has " + std::to_string(n) +
         " nodes; using " + std::to_string(n));
    ell = n;
  }
  const auto L = build_laplacian(graph, kind);
  const auto hash = laplacian_content_hash(L);
  LoadedBasis out;
  out.cache_file = (fs::path(cache_directory()) / (hex(hash) + "-" + std::to_string(ell) + ".eig")).string();
  if (auto cached = read_eigen_cache(out.cache_file, hash); cached && cached->size() == ell && cached->kind == kind) {
    out.basis = std::make_shared<SpectralBasis>(std::move(*cached));
    out.cache_hit = true;
    return out;
  }
  SpectralBasis basis = n <= kDefaultDenseLimit ? leading(eigendecompose_full(L), ell) : eigendecompose_truncated(L, ell);
  try {
    fs::create_directories(fs::path(out.cache_file).parent_path());
    write_eigen_cache(out.cache_file, basis, hash);
  } catch (const std::exception& e) {
    warn(std::string("could not write eigenpair cache: ") + e.what());
  }
  out.basis = std::make_shared<SpectralBasis>(std::move(basis));
  return out;
}

void check_node_range(std::span<const int> nodes, int n, const std::string& what) {
  std::vector<int> bad;
  for (int v : nodes)
    if (v < 0 || v >= n) bad.push_back(v);
  if (bad.empty()) return;
  std::ostringstream msg;
  msg << what << " refers to nodes outside the graph (" << n << " nodes):";
  for (std::size_t i = 0; i < bad.size() && i < 20; ++i) msg << ' ' << bad[i];
  if (bad.size() > 20) msg << " ... (" << bad.size() << " total)";
  throw InvalidArgument(msg.str());
}

std::vector<int> iota(int n) {
  std::vector<int> v(n);
  for (int i = 0; i < n; ++i) v[i] = i;
  return v;
}

template <class T>
std::vector<T> gather(const std::vector<T>& values, std::span<const int> rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(values[r]);
  return out;
}

Eigen::VectorXd gather(const Eigen::VectorXd& values, std::span<const int> rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = values[rows[i]];
  return out;
}

int default_train_size(int requested, int population, int protocol_default) {
  if (requested >= 0) return requested;
  return population > protocol_default ? protocol_default : population / 2;
}

// Split over row positions of the data file, so the same node may appear on
// several rows (repeated observations).
Split split_rows(int rows, const RunConfig& config, int train, std::uint64_t seed) {
  const auto population = iota(rows);
  return random_split(population, train, seed, config.test_size);
}

// ---------------------------------------------------------------- regression

struct RegressionRun {
  std::unique_ptr<GPRegressionModel> model;
  Standardizer standardizer;
  Split split;
  RegressionFitResult fit;
  Eigen::VectorXd mean;  // data units, every node
  Eigen::VectorXd sd;
  std::optional<double> test_mse;           // standardized units
  std::optional<double> test_mse_original;  // data units
  double train_mse = 0.0;
};

std::optional<double> mse_on(const Eigen::VectorXd& pred_all, const NodeValues& data, std::span<const int> rows,
                             const Standardizer* z) {
  if (rows.empty()) return std::nullopt;
  Eigen::VectorXd pred(static_cast<Eigen::Index>(rows.size())), truth(pred.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    pred[static_cast<Eigen::Index>(i)] = pred_all[data.nodes[rows[i]]];
    truth[static_cast<Eigen::Index>(i)] = data.values[rows[i]];
  }
  if (z) {
    pred = z->transform(pred);
    truth = z->transform(truth);
  }
  return mean_squared_error(pred, truth);
}

RegressionRun run_regression(std::shared_ptr<const SpectralBasis> basis, const NodeValues& data,
                             const KernelSpec& spec, const RunConfig& config, std::uint64_t seed) {
  RegressionRun run;
  const int rows = static_cast<int>(data.nodes.size());
  run.split = split_rows(rows, config, default_train_size(config.train_size, rows, 250), derive_seed(seed, 0));
  if (run.split.train.empty()) throw InvalidArgument("training split is empty");
  const Eigen::VectorXd y_train = gather(data.values, run.split.train);
  run.standardizer = Standardizer::fit(y_train);
  run.model = std::make_unique<GPRegressionModel>(basis, spec, config.noise, gather(data.nodes, run.split.train),
                                                  run.standardizer.transform(y_train));
  AdamConfig adam;
  adam.iterations = config.iterations;
  adam.learning_rate = config.lr;
  run.fit = fit(*run.model, adam);

  const auto post = run.model->posterior(iota(basis->total_dim), CovarianceMode::diagonal);
  run.mean = run.standardizer.inverse(post.mean);
  run.sd = post.variance.cwiseMax(0.0).cwiseSqrt() * run.standardizer.stddev();
  run.test_mse = mse_on(run.mean, data, run.split.test, &run.standardizer);
  run.test_mse_original = mse_on(run.mean, data, run.split.test, nullptr);
  run.train_mse = *mse_on(run.mean, data, run.split.train, &run.standardizer);
  return run;
}

NodeValues load_targets(const RunConfig& config, int n) {
  if (config.targets.empty()) throw InvalidArgument("--targets is required");
  auto data = read_targets_csv(config.targets);
  if (data.nodes.empty()) throw InvalidArgument("targets file has no rows");
  check_node_range(data.nodes, n, "targets file");
  return data;
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::string regression_predictions_csv(const Eigen::VectorXd& mean, const Eigen::VectorXd& sd) {
  std::string csv = "node_index,mean,std\n";
  for (Eigen::Index i = 0; i < mean.size(); ++i)
    csv += std::to_string(i) + "," + fmt(mean[i]) + "," + fmt(sd[i]) + "\n";
  return csv;
}

// ------------------------------------------------------------ classification

struct ClassificationRun {
  std::unique_ptr<VariationalClassifier> model;
  Split split;
  ClassifierFitResult fit;
  ClassPrediction prediction;  // every node
  std::optional<double> train_accuracy;
  std::optional<double> test_accuracy;
};

std::optional<double> accuracy_on(const ClassPrediction& pred, const NodeLabels& data, std::span<const int> rows) {
  if (rows.empty()) return std::nullopt;
  std::vector<int> p, t;
  for (int r : rows) {
    p.push_back(pred.labels[data.nodes[r]]);
    t.push_back(data.labels[r]);
  }
  return accuracy(p, t);
}

KernelSpec classifier_defaults() {
  KernelSpec s;
  s.nu = 3.0;
  s.kappa = 5.0;
  s.sigma2 = 1.0;
  return s;
}

ClassificationRun run_classification(std::shared_ptr<const SpectralBasis> basis, const NodeLabels& data, int classes,
                                     const KernelSpec& spec, const RunConfig& config, std::uint64_t seed) {
  ClassificationRun run;
  const int rows = static_cast<int>(data.nodes.size());
  run.split = split_rows(rows, config, default_train_size(config.train_size, rows, 140), derive_seed(seed, 0));
  if (run.split.train.empty()) throw InvalidArgument("training split is empty");
  const auto train_nodes = gather(data.nodes, run.split.train);
  const auto train_labels = gather(data.labels, run.split.train);
  run.model = std::make_unique<VariationalClassifier>(basis, spec, classes, train_nodes);
  ClassifierFitConfig fit_config;
  fit_config.adam.iterations = config.iterations;
  fit_config.adam.learning_rate = config.lr;
  fit_config.mc_samples = config.mc_samples;
  run.fit = fit_classifier(*run.model, train_nodes, train_labels, fit_config, derive_seed(seed, 1));
  run.prediction = run.model->predict(iota(basis->total_dim), config.predict_samples, derive_seed(seed, 2));
  run.train_accuracy = accuracy_on(run.prediction, data, run.split.train);
  run.test_accuracy = accuracy_on(run.prediction, data, run.split.test);
  return run;
}

NodeLabels load_labels(const RunConfig& config, int n, int& classes) {
  if (config.labels.empty()) throw InvalidArgument("--labels is required");
  auto data = read_labels_csv(config.labels);
  if (data.nodes.empty()) throw InvalidArgument("labels file has no rows");
  check_node_range(data.nodes, n, "labels file");
  classes = data.num_classes();
  if (config.num_classes > 0) {
    if (classes > config.num_classes)
      throw InvalidArgument("labels file has class index " + std::to_string(classes - 1) + " but --num-classes is " +
                            std::to_string(config.num_classes));
    classes = config.num_classes;
  }
  if (classes < 2) throw InvalidArgument("classification needs at least two classes");
  return data;
}

std::string classification_predictions_csv(const ClassPrediction& pred) {
  std::string csv = "node_index";
  for (Eigen::Index c = 0; c < pred.probabilities.cols(); ++c) csv += ",p_" + std::to_string(c);
  csv += ",label\n";
  for (Eigen::Index i = 0; i < pred.probabilities.rows(); ++i) {
    csv += std::to_string(i);
    for (Eigen::Index c = 0; c < pred.probabilities.cols(); ++c) csv += "," + fmt(pred.probabilities(i, c));
    csv += "," + std::to_string(pred.labels[static_cast<std::size_t>(i)]) + "\n";
  }
  return csv;
}

WeightedGraph load_graph(const RunConfig& config) {
  if (config.graph.empty()) throw InvalidArgument("--graph is required");
  return read_edge_list(config.graph).graph;
}

}  // namespace

std::string cache_directory() {
  if (const char* dir = std::getenv("GRAPHGP_CACHE_DIR"); dir && *dir) return dir;
  if (const char* xdg = std::getenv("XDG_CACHE_HOME"); xdg && *xdg) return (fs::path(xdg) / "graphgp").string();
  if (const char* home = std::getenv("HOME"); home && *home) return (fs::path(home) / ".cache" / "graphgp").string();
  return ".graphgp-cache";
}

int cmd_eigen(const RunConfig& config) {
  const auto graph = load_graph(config);
  const auto spec = kernel_with_defaults(config.kernel, KernelSpec{});
  const auto loaded = load_basis(graph, spec.laplacian, config.eigenpairs);
  const auto& b = *loaded.basis;
  std::cerr << (loaded.cache_hit ? "reused" : "wrote") << " eigenpair cache " << loaded.cache_file << "\n";
  Json summary;
  summary["schema_version"] = kSchemaVersion;
  summary["command"] = "eigen";
  summary["nodes"] = graph.node_count();
  summary["laplacian"] = std::string(to_string(spec.laplacian));
  summary["eigenpairs"] = b.size();
  summary["lambda_min"] = b.eigenvalues[0];
  summary["lambda_max"] = b.eigenvalues[b.size() - 1];
  summary["eigenvalues"] = std::vector<double>(b.eigenvalues.data(), b.eigenvalues.data() + b.size());
  write_json(out_path(config, "eigen.json"), summary);
  std::cout << "eigenpairs " << b.size() << "  lambda_min " << fmt(b.eigenvalues[0]) << "  lambda_max "
            << fmt(b.eigenvalues[b.size() - 1]) << "\n";
  return 0;
}

int cmd_fit_regression(const RunConfig& config) {
  const auto graph = load_graph(config);
  const auto data = load_targets(config, graph.node_count());
  const auto spec = kernel_with_defaults(config.kernel, KernelSpec{});
  const auto loaded = load_basis(graph, spec.laplacian, config.eigenpairs);
  RegressionRun run;
  try {
    run = run_regression(loaded.basis, data, spec, config, config.seed);
  } catch (const FitError& e) {
    write_text_file(out_path(config, "failed_fit.json"), e.snapshot() + "\n");
    throw;
  }
  const auto& model = *run.model;

  RegressionSnapshot snap;
  snap.spec = model.spec();
  snap.noise_variance = model.noise_variance();
  snap.train_nodes = model.train_nodes();
  snap.targets = model.targets();
  snap.eigenpairs = loaded.basis->size();
  snap.target_mean = run.standardizer.mean();
  snap.target_std = run.standardizer.stddev();
  write_text_file(out_path(config, "model.json"), to_json(snap) + "\n");
  write_text_file(out_path(config, "predictions.csv"), regression_predictions_csv(run.mean, run.sd));

  std::string trace = "iteration,loss,best_loss\n";
  for (std::size_t i = 0; i < run.fit.loss_trace.size(); ++i)
    trace += std::to_string(i) + "," + fmt(run.fit.loss_trace[i]) + "," + fmt(run.fit.best_loss_trace[i]) + "\n";
  write_text_file(out_path(config, "trace.csv"), trace);

  Json metrics;
  metrics["schema_version"] = kSchemaVersion;
  metrics["command"] = "fit-regression";
  metrics["seed"] = config.seed;
  metrics["nodes"] = graph.node_count();
  metrics["eigenpairs"] = loaded.basis->size();
  metrics["train_size"] = run.split.train.size();
  metrics["test_size"] = run.split.test.size();
  metrics["iterations"] = config.iterations;
  metrics["learning_rate"] = config.lr;
  metrics["best_iteration"] = run.fit.best_iteration;
  metrics["kernel"] = spec_json(model.spec());
  metrics["noise_variance"] = model.noise_variance();
  metrics["log_marginal_likelihood"] = model.log_marginal_likelihood().value;
  metrics["train_mse"] = run.train_mse;
  metrics["test_mse"] = optional_number(run.test_mse);
  metrics["test_mse_original_units"] = optional_number(run.test_mse_original);
  write_json(out_path(config, "metrics.json"), metrics);
  std::cout << "test_mse " << (run.test_mse ? fmt(*run.test_mse) : "n/a") << "\n";
  return 0;
}

int cmd_fit_classify(const RunConfig& config) {
  const auto graph = load_graph(config);
  int classes = 0;
  const auto data = load_labels(config, graph.node_count(), classes);
  const auto spec = kernel_with_defaults(config.kernel, classifier_defaults());
  const auto loaded = load_basis(graph, spec.laplacian, config.eigenpairs);
  ClassificationRun run;
  try {
    run = run_classification(loaded.basis, data, classes, spec, config, config.seed);
  } catch (const ClassifierFitError& e) {
    write_text_file(out_path(config, "failed_fit.json"), e.snapshot() + "\n");
    throw;
  }
  write_text_file(out_path(config, "model.json"), to_json(snapshot(*run.model, loaded.basis->size())) + "\n");
  write_text_file(out_path(config, "predictions.csv"), classification_predictions_csv(run.prediction));

  std::string trace = "iteration,elbo\n";
  for (std::size_t i = 0; i < run.fit.elbo_trace.size(); ++i)
    trace += std::to_string(i) + "," + fmt(run.fit.elbo_trace[i]) + "\n";
  write_text_file(out_path(config, "trace.csv"), trace);

  Json metrics;
  metrics["schema_version"] = kSchemaVersion;
  metrics["command"] = "fit-classify";
  metrics["seed"] = config.seed;
  metrics["nodes"] = graph.node_count();
  metrics["classes"] = classes;
  metrics["eigenpairs"] = loaded.basis->size();
  metrics["train_size"] = run.split.train.size();
  metrics["test_size"] = run.split.test.size();
  metrics["iterations"] = config.iterations;
  metrics["learning_rate"] = config.lr;
  metrics["kernel"] = spec_json(run.model->spec());
  metrics["final_elbo"] = run.fit.elbo_trace.empty() ? Json(nullptr) : Json(run.fit.elbo_trace.back());
  metrics["train_accuracy"] = optional_number(run.train_accuracy);
  metrics["test_accuracy"] = optional_number(run.test_accuracy);
  write_json(out_path(config, "metrics.json"), metrics);
  std::cout << "test_accuracy " << (run.test_accuracy ? fmt(*run.test_accuracy) : "n/a") << "\n";
  return 0;
}

int cmd_predict(const RunConfig& config) {
  if (config.model.empty()) throw InvalidArgument("--model is required");
  const auto graph = load_graph(config);
  const std::string json = read_text_file(config.model);
  const std::string type = snapshot_model_type(json);
  if (type == "regression") {
    const auto s = regression_snapshot_from_json(json);
    check_node_range(s.train_nodes, graph.node_count(), "model");
    const auto loaded = load_basis(graph, s.spec.laplacian, s.eigenpairs);
    GPRegressionModel model(loaded.basis, s.spec, s.noise_variance, s.train_nodes, s.targets);
    const auto post = model.posterior(iota(graph.node_count()), CovarianceMode::diagonal);
    const Eigen::VectorXd mean = (post.mean.array() * s.target_std + s.target_mean).matrix();
    const Eigen::VectorXd sd = post.variance.cwiseMax(0.0).cwiseSqrt() * s.target_std;
    write_text_file(out_path(config, "predictions.csv"), regression_predictions_csv(mean, sd));
  } else {
    const auto s = classifier_snapshot_from_json(json);
    check_node_range(s.inducing_nodes, graph.node_count(), "model");
    const auto loaded = load_basis(graph, s.spec.laplacian, s.eigenpairs);
    const auto model = restore(s, loaded.basis);
    const auto pred = model.predict(iota(graph.node_count()), config.predict_samples, derive_seed(config.seed, 2));
    write_text_file(out_path(config, "predictions.csv"), classification_predictions_csv(pred));
  }
  std::cout << "wrote " << out_path(config, "predictions.csv") << "\n";
  return 0;
}

int cmd_compare_kernels(const RunConfig& config) {
  if (config.targets.empty() == config.labels.empty())
    throw InvalidArgument("compare-kernels needs exactly one of --targets (regression) or --labels (classification)");
  if (config.repeats < 1) throw InvalidArgument("--repeats must be at least 1");
  const bool regression = !config.targets.empty();
  const auto graph = load_graph(config);
  const int n = graph.node_count();
  std::optional<NodeValues> targets;
  std::optional<NodeLabels> labels;
  int classes = 0;
  if (regression)
    targets = load_targets(config, n);
  else
    labels = load_labels(config, n, classes);
  const KernelSpec base = kernel_with_defaults(config.kernel, regression ? KernelSpec{} : classifier_defaults());

  const std::vector<KernelFamily> families{KernelFamily::matern, KernelFamily::diffusion, KernelFamily::random_walk,
                                           KernelFamily::inverse_cosine};
  const std::vector<LaplacianKind> kinds{LaplacianKind::unnormalized, LaplacianKind::sym_normalized};
  const std::string metric = regression ? "test_mse" : "test_accuracy";

  Json results = Json::array();
  std::string csv = "family,laplacian,runs,mean,std\n";
  std::string table = "| Laplacian | Matern | Diffusion | Random walk | Inverse cosine |\n|---|---|---|---|---|\n";
  for (auto kind : kinds) {
    const auto loaded = load_basis(graph, kind, config.eigenpairs);
    table += "| " + std::string(to_string(kind)) + " |";
    for (auto family : families) {
      const bool available =
          kind == LaplacianKind::sym_normalized ||
          (family != KernelFamily::random_walk && family != KernelFamily::inverse_cosine);
      if (!available) {
        table += " --- |";
        continue;
      }
      KernelSpec spec = base;
      spec.family = family;
      spec.laplacian = kind;
      if (family == KernelFamily::random_walk && base.family != KernelFamily::random_walk) {
        spec.alpha = 0.5;
        spec.p = 2;
      }
      std::vector<double> values;
      for (int r = 0; r < config.repeats; ++r) {
        const auto seed = derive_seed(config.seed, static_cast<std::uint64_t>(r));
        if (regression) {
          const auto run = run_regression(loaded.basis, *targets, spec, config, seed);
          if (!run.test_mse_original) throw InvalidArgument("compare-kernels needs a non-empty test split");
          values.push_back(*run.test_mse_original);
        } else {
          const auto run = run_classification(loaded.basis, *labels, classes, spec, config, seed);
          if (!run.test_accuracy) throw InvalidArgument("compare-kernels needs a non-empty test split");
          values.push_back(*run.test_accuracy);
        }
      }
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      const double sd = std::sqrt(var / static_cast<double>(values.size()));

      char cell[64];
      std::snprintf(cell, sizeof cell, " %.2f (%.2f) |", mean, sd);
      table += cell;
      csv += std::string(to_string(family)) + "," + std::string(to_string(kind)) + "," +
             std::to_string(values.size()) + "," + fmt(mean) + "," + fmt(sd) + "\n";
      Json row;
      row["family"] = std::string(to_string(family));
      row["laplacian"] = std::string(to_string(kind));
      row["values"] = values;
      row["mean"] = mean;
      row["std"] = sd;
      results.push_back(row);
    }
    table += "\n";
  }

  Json summary;
  summary["schema_version"] = kSchemaVersion;
  summary["command"] = "compare-kernels";
  summary["task"] = regression ? "regression" : "classification";
  summary["metric"] = regression ? "test_mse_original_units" : metric;
  summary["seed"] = config.seed;
  summary["repeats"] = config.repeats;
  summary["eigenpairs"] = std::min(config.eigenpairs, n);
  summary["iterations"] = config.iterations;
  summary["learning_rate"] = config.lr;
  summary["results"] = results;
  write_json(out_path(config, "comparison.json"), summary);
  write_text_file(out_path(config, "comparison.csv"), csv);
  write_text_file(out_path(config, "comparison.md"), table);
  std::cout << table;
  return 0;
}

}  // namespace graphgp::cli
