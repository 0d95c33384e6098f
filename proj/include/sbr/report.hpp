#pragma once

#include <map>
#include <string>
#include <vector>

#include "sbr/cnn.hpp"
#include "sbr/manifest.hpp"

namespace sbr {

// Exact ratio of matching (prediction, label) pairs.
double accuracy(const std::vector<int>& predictions,
                const std::vector<int>& labels);

struct MethodPredictions {
  std::string method;
  std::map<std::string, int> predicted;  // sample id -> {0,1}
};

struct TableCell {
  double acc = 0;
  std::size_t correct = 0;
  std::size_t count = 0;
};

// Rows: "overall" then each group in manifest first-appearance order;
// columns: one per method.
struct GroupAccuracyTable {
  std::vector<std::string> rows;
  std::vector<std::string> methods;
  std::vector<std::vector<TableCell>> cells;  // [row][method]
};

GroupAccuracyTable group_accuracy_table(
    const std::vector<MethodPredictions>& methods,
    const DatasetManifest& manifest);

// Accuracies formatted to 4 decimals; counts carried in a trailing column.
std::string table_to_csv(const GroupAccuracyTable& t);
std::string table_to_json(const GroupAccuracyTable& t);

struct ScoreHistogram {
  std::vector<double> edges;        // bins + 1, strictly increasing over [0,1]
  std::vector<long> counts_class0;  // per bin
  std::vector<long> counts_class1;
};

// Class-conditional histograms over [0,1]; scores outside that range are an
// error. A score of exactly 1 lands in the last bin.
ScoreHistogram score_histogram(const std::vector<ScoredSample>& scores,
                               int bins = 50);

// Overlaid class histograms with the flagging band annotated around each
// label (distance <= threshold shaded). Deterministic bytes.
std::string histogram_to_svg(const ScoreHistogram& h, double threshold);

struct CurveSeries {
  std::string run_id;
  std::vector<EpochStats> history;
};

// Columns: run,epoch,train_loss,train_accuracy,val_loss,val_accuracy.
std::string curves_to_csv(const std::vector<CurveSeries>& runs);
std::string curves_to_svg(const std::vector<CurveSeries>& runs);

struct PredictionRow {
  std::string id;
  int label;
  std::string group;
  double score;
  int predicted;
};

// predictions.csv: id,label,group,score,predicted. The raw material every
// report number can be recomputed from.
std::string predictions_to_csv(const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> predictions_from_csv(const std::string& text);

}  // namespace sbr
