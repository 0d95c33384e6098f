#include "sbr/svm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "sbr/errors.hpp"
#include "sbr/rng.hpp"

using ordered_json = nlohmann::ordered_json;

namespace sbr {

double rbf_kernel(double a, double b, double gamma) {
  if (!(gamma > 0.0)) throw ConfigError("rbf_kernel: gamma must be > 0");
  const double d = a - b;
  return std::exp(-gamma * d * d);
}

double SvmModel::margin(double feature) const {
  double f = bias;
  for (std::size_t i = 0; i < support.size(); ++i)
    f += alpha_y[i] * rbf_kernel(support[i], feature, gamma);
  return f;
}

int SvmModel::predict(double feature) const { return margin(feature) >= 0 ? 1 : 0; }

double svm_dual_objective(const std::vector<double>& features,
                          const std::vector<int>& labels,
                          const std::vector<double>& alphas, double gamma) {
  const std::size_t n = features.size();
  double obj = std::accumulate(alphas.begin(), alphas.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      obj -= 0.5 * alphas[i] * alphas[j] * labels[i] * labels[j] *
             rbf_kernel(features[i], features[j], gamma);
  return obj;
}

SvmModel smo_train(const std::vector<double>& features,
                   const std::vector<int>& labels, double gamma, double C,
                   double tol, std::uint64_t seed) {
  const std::size_t n = features.size();
  if (n != labels.size()) throw DimensionError("smo_train: feature/label mismatch");
  if (n < 2) throw DomainError("smo_train: need at least two samples");
  if (!(C > 0.0)) throw ConfigError("smo_train: C must be > 0");
  bool pos = false, neg = false;
  for (int y : labels) {
    if (y == 1) pos = true;
    else if (y == -1) neg = true;
    else throw DomainError("smo_train: labels must be -1 or +1");
  }
  for (double f : features)
    if (!std::isfinite(f)) throw NumericError("smo_train: non-finite feature");
  if (!pos || !neg) throw DomainError("smo_train: both classes required");

  std::vector<std::vector<double>> K(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      K[i][j] = rbf_kernel(features[i], features[j], gamma);

  std::vector<double> alpha(n, 0.0);
  double b = 0.0;
  auto decision = [&](std::size_t i) {
    double f = b;
    for (std::size_t j = 0; j < n; ++j)
      if (alpha[j] > 0) f += alpha[j] * labels[j] * K[j][i];
    return f;
  };

  constexpr long kMaxPasses = 100000;
  Rng rng(derive_seed(seed, "smo-order"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  long pass = 0;
  bool converged = false;
  for (; pass < kMaxPasses; ++pass) {
    rng.shuffle(order);
    std::size_t changed = 0;
    for (std::size_t oi = 0; oi < n; ++oi) {
      const std::size_t i = order[oi];
      const double Ei = decision(i) - labels[i];
      const double ri = labels[i] * Ei;
      if (!((ri < -tol && alpha[i] < C) || (ri > tol && alpha[i] > 0))) continue;

      auto try_pair = [&](std::size_t j) {
        const double Ej = decision(j) - labels[j];
        const double ai_old = alpha[i], aj_old = alpha[j];
        double lo, hi;
        if (labels[i] != labels[j]) {
          lo = std::max(0.0, aj_old - ai_old);
          hi = std::min(C, C + aj_old - ai_old);
        } else {
          lo = std::max(0.0, ai_old + aj_old - C);
          hi = std::min(C, ai_old + aj_old);
        }
        if (hi - lo < 1e-12) return false;
        const double eta = 2.0 * K[i][j] - K[i][i] - K[j][j];
        if (eta >= -1e-12) return false;

        double aj = aj_old - labels[j] * (Ei - Ej) / eta;
        aj = std::clamp(aj, lo, hi);
        if (std::abs(aj - aj_old) < 1e-7 * (aj + aj_old + 1e-7)) return false;
        const double ai = ai_old + labels[i] * labels[j] * (aj_old - aj);
        alpha[i] = ai;
        alpha[j] = aj;

        const double b1 = b - Ei - labels[i] * (ai - ai_old) * K[i][i] -
                          labels[j] * (aj - aj_old) * K[i][j];
        const double b2 = b - Ej - labels[i] * (ai - ai_old) * K[i][j] -
                          labels[j] * (aj - aj_old) * K[j][j];
        if (ai > 0 && ai < C)
          b = b1;
        else if (aj > 0 && aj < C)
          b = b2;
        else
          b = 0.5 * (b1 + b2);
        return true;
      };

      // second choice: maximal |Ei - Ej| first, then every other candidate
      // in scan order so a blocked pair cannot stall the whole pass
      std::size_t best_j = n;
      double best_gap = -1.0;
      for (std::size_t cand = 0; cand < n; ++cand) {
        if (cand == i) continue;
        const double gap = std::abs(Ei - (decision(cand) - labels[cand]));
        if (gap > best_gap) {
          best_gap = gap;
          best_j = cand;
        }
      }
      if (best_j == n) continue;
      bool stepped = try_pair(best_j);
      for (std::size_t oj = 0; !stepped && oj < n; ++oj) {
        const std::size_t j = order[oj];
        if (j != i && j != best_j) stepped = try_pair(j);
      }
      changed += stepped;
    }
    if (changed == 0) {
      converged = true;
      break;
    }
  }
  if (!converged)
    std::cerr << "smo_train: pass cap reached (" << kMaxPasses
              << "), returning best iterate\n";

  // Recompute the bias from free support vectors for a stable value.
  double b_sum = 0;
  std::size_t b_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (alpha[i] > tol && alpha[i] < C - tol) {
      double f = 0;
      for (std::size_t j = 0; j < n; ++j)
        f += alpha[j] * labels[j] * K[j][i];
      b_sum += labels[i] - f;
      ++b_count;
    }
  }
  if (b_count > 0) b = b_sum / static_cast<double>(b_count);

  SvmModel model;
  model.gamma = gamma;
  model.C = C;
  model.bias = b;
  for (std::size_t i = 0; i < n; ++i) {
    if (alpha[i] > tol) {
      model.support.push_back(features[i]);
      model.alpha_y.push_back(alpha[i] * labels[i]);
    }
  }
  if (model.support.empty()) {
    // every alpha below tolerance: keep the largest so prediction is defined
    const auto it = std::max_element(alpha.begin(), alpha.end());
    const std::size_t i = static_cast<std::size_t>(it - alpha.begin());
    model.support.push_back(features[i]);
    model.alpha_y.push_back(alpha[i] * labels[i]);
  }
  return model;
}

namespace {

// Stratified seeded fold assignment, invariant to input ordering: indices
// are sorted by (label, feature) before the shuffle.
std::vector<int> fold_assignment(const std::vector<double>& features,
                                 const std::vector<int>& labels, int folds,
                                 std::uint64_t seed) {
  std::vector<int> fold_of(features.size(), -1);
  for (int cls : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < features.size(); ++i)
      if (labels[i] == cls) idx.push_back(i);
    if (static_cast<int>(idx.size()) < folds)
      throw DomainError("grid_search_cv: a class has fewer samples than folds");
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return features[a] < features[b];
    });
    Rng rng(derive_seed(seed, "cv-folds/class-" + std::to_string(cls)));
    rng.shuffle(idx);
    for (std::size_t k = 0; k < idx.size(); ++k)
      fold_of[idx[k]] = static_cast<int>(k % folds);
  }
  return fold_of;
}

}  // namespace

GridSearchResult grid_search_cv(const std::vector<double>& features,
                                const std::vector<int>& labels,
                                const GridSearchSpec& spec) {
  if (features.size() != labels.size())
    throw DimensionError("grid_search_cv: feature/label mismatch");
  if (spec.folds < 2) throw ConfigError("grid_search_cv: folds must be >= 2");
  if (spec.gamma_grid.empty() || spec.c_grid.empty())
    throw ConfigError("grid_search_cv: empty grid");
  for (int y : labels)
    if (y != 0 && y != 1)
      throw DomainError("grid_search_cv: labels must be 0 or 1");

  const auto fold_of = fold_assignment(features, labels, spec.folds, spec.seed);

  GridSearchResult res;
  double best_acc = -1.0;
  for (double C : spec.c_grid) {
    for (double gamma : spec.gamma_grid) {
      double acc_sum = 0;
      for (int f = 0; f < spec.folds; ++f) {
        std::vector<double> xt, xv;
        std::vector<int> yt, yv;
        for (std::size_t i = 0; i < features.size(); ++i) {
          if (fold_of[i] == f) {
            xv.push_back(features[i]);
            yv.push_back(labels[i]);
          } else {
            xt.push_back(features[i]);
            yt.push_back(labels[i] == 1 ? 1 : -1);
          }
        }
        const SvmModel m = smo_train(xt, yt, gamma, C, 1e-3, spec.seed);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < xv.size(); ++i)
          if (m.predict(xv[i]) == yv[i]) ++correct;
        acc_sum += static_cast<double>(correct) / static_cast<double>(xv.size());
      }
      const double mean_acc = acc_sum / spec.folds;
      res.table.push_back({gamma, C, mean_acc});
      // strict improvement only: earlier (smaller C, then smaller gamma) wins ties
      if (mean_acc > best_acc) {
        best_acc = mean_acc;
        res.best_gamma = gamma;
        res.best_C = C;
      }
    }
  }
  return res;
}

void save_svm(const SvmModel& model, const std::string& path,
              const GridSearchResult* cv) {
  ordered_json j;
  j["gamma"] = model.gamma;
  j["C"] = model.C;
  j["bias"] = model.bias;
  ordered_json support = ordered_json::array();
  for (std::size_t i = 0; i < model.support.size(); ++i)
    support.push_back({{"s", model.support[i]}, {"alpha_y", model.alpha_y[i]}});
  j["support"] = std::move(support);
  j["source_checkpoint_id"] = model.source_checkpoint_id;
  if (cv) {
    ordered_json table = ordered_json::array();
    for (const auto& cell : cv->table)
      table.push_back({{"gamma", cell.gamma},
                       {"C", cell.C},
                       {"mean_accuracy", cell.mean_accuracy}});
    j["cv_table"] = std::move(table);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write svm model: " + path);
  out << j.dump(2) << "\n";
}

SvmModel load_svm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("svm model file not found: " + path);
  ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("svm model parse error in " + path + ": " + e.what());
  }
  SvmModel m;
  m.gamma = j.at("gamma").get<double>();
  m.C = j.at("C").get<double>();
  m.bias = j.at("bias").get<double>();
  for (const auto& sv : j.at("support")) {
    m.support.push_back(sv.at("s").get<double>());
    m.alpha_y.push_back(sv.at("alpha_y").get<double>());
  }
  m.source_checkpoint_id = j.at("source_checkpoint_id").get<std::string>();
  return m;
}

std::vector<HybridPrediction> cnn_svm_predict(const CnnCheckpoint& ckpt,
                                              const SvmModel& svm,
                                              const DatasetManifest& manifest,
                                              double temperature,
                                              bool allow_mismatch) {
  if (!svm.source_checkpoint_id.empty() &&
      svm.source_checkpoint_id != ckpt.id()) {
    if (!allow_mismatch)
      throw UsageError(
          "SVM was fitted on scores from checkpoint " + svm.source_checkpoint_id +
          ", not " + ckpt.id() + "; pass allow_mismatch to override");
    std::cerr << "warning: scoring checkpoint " << ckpt.id()
              << " differs from the SVM's source " << svm.source_checkpoint_id
              << "\n";
  }
  std::vector<HybridPrediction> out;
  for (const auto& s :
       predict_scores(ckpt, manifest, TemperatureConfig{temperature})) {
    const double margin = svm.margin(s.score);
    out.push_back({s.id, s.label, s.score, margin, margin >= 0 ? 1 : 0});
  }
  return out;
}

}  // namespace sbr
