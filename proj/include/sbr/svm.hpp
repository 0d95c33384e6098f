#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sbr/cnn.hpp"

namespace sbr {

// Soft-margin RBF SVM over 1-D score features.
struct SvmModel {
  std::vector<double> support;   // score features
  std::vector<double> alpha_y;   // alpha_i * y_i
  double bias = 0.0;
  double gamma = 0.5;
  double C = 10.0;
  std::string source_checkpoint_id;  // identity of the scoring CNN

  double margin(double feature) const;
  int predict(double feature) const;  // 0 or 1
};

// exp(-gamma * (a-b)^2), in (0, 1].
double rbf_kernel(double a, double b, double gamma);

// SMO-style working-set solver for the soft-margin dual; labels in {-1,+1}.
// Deterministic given the seed (scan-order shuffling only). Throws on
// single-class input; reports non-convergence past the pass cap with the
// best iterate kept.
SvmModel smo_train(const std::vector<double>& features,
                   const std::vector<int>& labels, double gamma, double C,
                   double tol = 1e-3, std::uint64_t seed = 0);

// Dual objective of a model's alphas on its own training data.
double svm_dual_objective(const std::vector<double>& features,
                          const std::vector<int>& labels,
                          const std::vector<double>& alphas, double gamma);

struct GridSearchSpec {
  std::vector<double> gamma_grid = {0.0625, 0.125, 0.25, 0.5, 1.0};
  std::vector<double> c_grid = {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0};
  int folds = 5;
  std::uint64_t seed = 0;
};

struct GridCell {
  double gamma = 0;
  double C = 0;
  double mean_accuracy = 0;
};

struct GridSearchResult {
  double best_gamma = 0;
  double best_C = 0;
  std::vector<GridCell> table;
};

// Stratified seed-deterministic 5-fold CV over the grid; accuracy metric;
// ties broken by smaller C, then smaller gamma. Labels in {0,1}.
GridSearchResult grid_search_cv(const std::vector<double>& features,
                                const std::vector<int>& labels,
                                const GridSearchSpec& spec);

// JSON model file: {gamma, C, bias, support:[{s, alpha_y}],
// source_checkpoint_id, cv_table?}.
void save_svm(const SvmModel& model, const std::string& path,
              const GridSearchResult* cv = nullptr);
SvmModel load_svm(const std::string& path);

struct HybridPrediction {
  std::string id;
  int label;
  double score;
  double margin;
  int predicted;
};

// CNN scores (audit temperature) fed through the SVM head. Refuses a
// checkpoint that does not match the SVM's recorded source unless
// allow_mismatch is set (which logs a warning to stderr).
std::vector<HybridPrediction> cnn_svm_predict(const CnnCheckpoint& ckpt,
                                              const SvmModel& svm,
                                              const DatasetManifest& manifest,
                                              double temperature = 0.85,
                                              bool allow_mismatch = false);

}  // namespace sbr
