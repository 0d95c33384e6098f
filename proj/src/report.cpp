#include "sbr/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "sbr/errors.hpp"

using ordered_json = nlohmann::ordered_json;

namespace sbr {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

}  // namespace

double accuracy(const std::vector<int>& predictions,
                const std::vector<int>& labels) {
  if (predictions.empty()) throw DomainError("accuracy: empty input");
  if (predictions.size() != labels.size())
    throw DimensionError("accuracy: prediction/label length mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

GroupAccuracyTable group_accuracy_table(
    const std::vector<MethodPredictions>& methods,
    const DatasetManifest& manifest) {
  manifest.validate();
  GroupAccuracyTable t;
  t.rows.push_back("overall");
  for (const auto& s : manifest.samples)
    if (s.group && std::find(t.rows.begin(), t.rows.end(), *s.group) == t.rows.end())
      t.rows.push_back(*s.group);

  for (const auto& m : methods) {
    for (const auto& s : manifest.samples)
      if (!m.predicted.count(s.id))
        throw DomainError("method " + m.method + " has no prediction for sample " +
                          s.id);
    t.methods.push_back(m.method);
  }

  t.cells.assign(t.rows.size(), std::vector<TableCell>(methods.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    for (std::size_t c = 0; c < methods.size(); ++c) {
      TableCell& cell = t.cells[r][c];
      for (const auto& s : manifest.samples) {
        if (r > 0 && (!s.group || *s.group != t.rows[r])) continue;
        ++cell.count;
        if (methods[c].predicted.at(s.id) == s.label) ++cell.correct;
      }
      if (cell.count == 0)
        throw DomainError("group " + t.rows[r] + " has no samples in the manifest");
      cell.acc = static_cast<double>(cell.correct) / static_cast<double>(cell.count);
    }
  }
  return t;
}

std::string table_to_csv(const GroupAccuracyTable& t) {
  std::ostringstream out;
  out << "row";
  for (const auto& m : t.methods) out << "," << m;
  out << ",count\n";
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    out << t.rows[r];
    for (std::size_t c = 0; c < t.methods.size(); ++c)
      out << "," << fmt("%.4f", t.cells[r][c].acc);
    out << "," << (t.cells[r].empty() ? 0 : t.cells[r][0].count) << "\n";
  }
  return out.str();
}

std::string table_to_json(const GroupAccuracyTable& t) {
  ordered_json j;
  j["methods"] = t.methods;
  ordered_json rows = ordered_json::array();
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    ordered_json row;
    row["row"] = t.rows[r];
    ordered_json cells = ordered_json::array();
    for (const auto& cell : t.cells[r])
      cells.push_back({{"accuracy", cell.acc},
                       {"correct", cell.correct},
                       {"count", cell.count}});
    row["cells"] = std::move(cells);
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

ScoreHistogram score_histogram(const std::vector<ScoredSample>& scores,
                               int bins) {
  if (bins < 1) throw ConfigError("score_histogram: bins must be >= 1");
  ScoreHistogram h;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i)
    h.edges[static_cast<std::size_t>(i)] = static_cast<double>(i) / bins;
  h.counts_class0.assign(static_cast<std::size_t>(bins), 0);
  h.counts_class1.assign(static_cast<std::size_t>(bins), 0);
  for (const auto& s : scores) {
    if (s.score < 0.0 || s.score > 1.0)
      throw DomainError("score_histogram: score outside [0,1] for " + s.id);
    int b = std::min(static_cast<int>(s.score * bins), bins - 1);
    auto& counts = s.label == 0 ? h.counts_class0 : h.counts_class1;
    counts[static_cast<std::size_t>(b)] += 1;
  }
  return h;
}

namespace {

constexpr int kPlotW = 640, kPlotH = 400, kMargin = 40;

double x_px(double v, double lo, double hi) {
  return kMargin + (v - lo) / (hi - lo) * (kPlotW - 2 * kMargin);
}

double y_px(double v, double hi) {
  return kPlotH - kMargin - v / hi * (kPlotH - 2 * kMargin);
}

}  // namespace

std::string histogram_to_svg(const ScoreHistogram& h, double threshold) {
  long max_count = 1;
  for (std::size_t i = 0; i < h.counts_class0.size(); ++i)
    max_count = std::max({max_count, h.counts_class0[i], h.counts_class1[i]});

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kPlotW
      << "\" height=\"" << kPlotH << "\">\n";
  // flagging band: distance > threshold from either label
  out << "<rect x=\"" << fmt("%.2f", x_px(threshold, 0, 1)) << "\" y=\"" << kMargin
      << "\" width=\""
      << fmt("%.2f", x_px(1.0 - threshold, 0, 1) - x_px(threshold, 0, 1))
      << "\" height=\"" << (kPlotH - 2 * kMargin)
      << "\" fill=\"#dddddd\" stroke=\"#888888\" stroke-dasharray=\"4 3\"/>\n";
  const char* colors[2] = {"#cc3333", "#3333cc"};
  for (int cls = 0; cls < 2; ++cls) {
    const auto& counts = cls == 0 ? h.counts_class0 : h.counts_class1;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] == 0) continue;
      const double x0 = x_px(h.edges[i], 0, 1);
      const double x1 = x_px(h.edges[i + 1], 0, 1);
      const double y = y_px(static_cast<double>(counts[i]),
                            static_cast<double>(max_count));
      out << "<rect x=\"" << fmt("%.2f", x0) << "\" y=\"" << fmt("%.2f", y)
          << "\" width=\"" << fmt("%.2f", x1 - x0) << "\" height=\""
          << fmt("%.2f", kPlotH - kMargin - y) << "\" fill=\"" << colors[cls]
          << "\" fill-opacity=\"0.5\"/>\n";
    }
  }
  out << "<line x1=\"" << kMargin << "\" y1=\"" << (kPlotH - kMargin) << "\" x2=\""
      << (kPlotW - kMargin) << "\" y2=\"" << (kPlotH - kMargin)
      << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << kMargin << "\" y=\"" << (kPlotH - 10)
      << "\" font-size=\"12\">score</text>\n";
  out << "</svg>\n";
  return out.str();
}

std::string curves_to_csv(const std::vector<CurveSeries>& runs) {
  std::ostringstream out;
  out << "run,epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  for (const auto& r : runs)
    for (const auto& e : r.history)
      out << r.run_id << "," << e.epoch << "," << fmt("%.9g", e.train_loss) << ","
          << fmt("%.9g", e.train_accuracy) << "," << fmt("%.9g", e.val_loss) << ","
          << fmt("%.9g", e.val_accuracy) << "\n";
  return out.str();
}

std::string curves_to_svg(const std::vector<CurveSeries>& runs) {
  if (runs.empty()) throw DomainError("curves_to_svg: no runs");
  int max_epoch = 1;
  for (const auto& r : runs)
    for (const auto& e : r.history) max_epoch = std::max(max_epoch, e.epoch);

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kPlotW
      << "\" height=\"" << kPlotH << "\">\n";
  const char* colors[] = {"#cc3333", "#3333cc", "#33aa33", "#aa7700"};
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const char* color = colors[r % 4];
    std::ostringstream pts;
    for (const auto& e : runs[r].history)
      pts << fmt("%.2f", x_px(e.epoch, 0, max_epoch)) << ","
          << fmt("%.2f", y_px(e.train_accuracy, 1.0)) << " ";
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\""
        << pts.str() << "\"/>\n";
    out << "<text x=\"" << (kMargin + 4) << "\" y=\"" << (kMargin + 14 * (r + 1))
        << "\" font-size=\"12\" fill=\"" << color << "\">" << runs[r].run_id
        << " (train accuracy)</text>\n";
  }
  out << "<line x1=\"" << kMargin << "\" y1=\"" << (kPlotH - kMargin) << "\" x2=\""
      << (kPlotW - kMargin) << "\" y2=\"" << (kPlotH - kMargin)
      << "\" stroke=\"black\"/>\n";
  out << "</svg>\n";
  return out.str();
}

std::string predictions_to_csv(const std::vector<PredictionRow>& rows) {
  std::ostringstream out;
  out << "id,label,group,score,predicted\n";
  for (const auto& r : rows)
    out << r.id << "," << r.label << "," << r.group << "," << fmt("%.9g", r.score)
        << "," << r.predicted << "\n";
  return out.str();
}

std::vector<PredictionRow> predictions_from_csv(const std::string& text) {
  std::vector<PredictionRow> rows;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "id,label,group,score,predicted")
    throw IoError("predictions csv: unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    PredictionRow r;
    std::string field;
    std::getline(ls, r.id, ',');
    std::getline(ls, field, ',');
    r.label = std::stoi(field);
    std::getline(ls, r.group, ',');
    std::getline(ls, field, ',');
    r.score = std::stod(field);
    std::getline(ls, field, ',');
    r.predicted = std::stoi(field);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace sbr
