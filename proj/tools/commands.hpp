#pragma once

#include <cstdint>
#include <string>

namespace graphgp::cli {

struct RunConfig {
  std::string graph;
  std::string targets;
  std::string labels;
  std::string kernel;  // inline JSON or a path; empty for command defaults
  std::string model;
  std::string out = ".";
  int eigenpairs = 500;
  std::uint64_t seed = 0;
  int train_size = -1;  // -1: command default
  int test_size = -1;   // -1: every node not used for training
  int iterations = 20000;
  double lr = 1e-3;
  double noise = 0.01;
  int num_classes = 0;  // 0: inferred from the labels
  int mc_samples = 20;
  int predict_samples = 1000;
  int repeats = 10;
};

int cmd_eigen(const RunConfig& config);
int cmd_fit_regression(const RunConfig& config);
int cmd_fit_classify(const RunConfig& config);
int cmd_predict(const RunConfig& config);
int cmd_compare_kernels(const RunConfig& config);

/// GRAPHGP_CACHE_DIR, else $XDG_CACHE_HOME/graphgp, else ~/.cache/graphgp.
std::string cache_directory();

}  // namespace graphgp::cli
