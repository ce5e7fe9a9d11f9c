#include "commands.hpp"

#include "graphgp/error.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using graphgp::cli::RunConfig;

void add_common(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--graph", c.graph, "Edge list: 'u v [w]' per line")->required()->check(CLI::ExistingFile);
  cmd->add_option("--kernel", c.kernel, "Kernel spec as inline JSON or a path to a JSON file");
  cmd->add_option("--eigenpairs", c.eigenpairs, "Number of Laplacian eigenpairs")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "Base seed")->capture_default_str();
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

void add_training(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--train-size", c.train_size, "Training rows (default: paper protocol, or half the rows)");
  cmd->add_option("--test-size", c.test_size, "Test rows (default: all remaining rows)");
  cmd->add_option("--iterations", c.iterations, "ADAM iterations")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd->add_option("--lr", c.lr, "ADAM learning rate")->capture_default_str()->check(CLI::PositiveNumber);
}

void add_regression(CLI::App* cmd, RunConfig& c, bool required) {
  auto* opt = cmd->add_option("--targets", c.targets, "CSV 'node_index,value'")->check(CLI::ExistingFile);
  if (required) opt->required();
  cmd->add_option("--noise", c.noise, "Initial noise variance")->capture_default_str()->check(CLI::PositiveNumber);
}

void add_classification(CLI::App* cmd, RunConfig& c, bool required) {
  auto* opt = cmd->add_option("--labels", c.labels, "CSV 'node_index,class_index'")->check(CLI::ExistingFile);
  if (required) opt->required();
  cmd->add_option("--num-classes", c.num_classes, "Declared class count (default: 1 + max label)");
  cmd->add_option("--mc-samples", c.mc_samples, "Monte-Carlo samples per point in the ELBO")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--predict-samples", c.predict_samples, "Monte-Carlo samples per node for prediction")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Matern Gaussian processes on graphs"};
  app.require_subcommand(1);
  RunConfig c;

  auto* eigen = app.add_subcommand("eigen", "Compute and cache Laplacian eigenpairs");
  add_common(eigen, c);

  auto* reg = app.add_subcommand("fit-regression", "Fit GP regression on node targets");
  add_common(reg, c);
  add_training(reg, c);
  add_regression(reg, c, true);

  auto* cls = app.add_subcommand("fit-classify", "Fit the variational GP classifier on node labels");
  add_common(cls, c);
  add_training(cls, c);
  add_classification(cls, c, true);

  auto* pred = app.add_subcommand("predict", "Predict every node from a saved model");
  add_common(pred, c);
  pred->add_option("--model", c.model, "model.json written by a fit command")->required()->check(CLI::ExistingFile);
  pred->add_option("--predict-samples", c.predict_samples, "Monte-Carlo samples per node (classification)")
      ->capture_default_str();

  auto* cmp = app.add_subcommand("compare-kernels", "Mean (std) test metric for every kernel and Laplacian");
  add_common(cmp, c);
  add_training(cmp, c);
  add_regression(cmp, c, false);
  add_classification(cmp, c, false);
  cmp->add_option("--repeats", c.repeats, "Runs per cell")->capture_default_str()->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*eigen) return graphgp::cli::cmd_eigen(c);
    if (*reg) return graphgp::cli::cmd_fit_regression(c);
    if (*cls) return graphgp::cli::cmd_fit_classify(c);
    if (*pred) return graphgp::cli::cmd_predict(c);
    if (*cmp) return graphgp::cli::cmd_compare_kernels(c);
  } catch (const graphgp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
