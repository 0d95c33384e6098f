#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sbr/report.hpp"

using namespace sbr;

namespace {

DatasetManifest grouped_manifest() {
  DatasetManifest m;
  auto add = [&](const std::string& id, int label, const std::string& group) {
    m.samples.push_back({id, "/" + id + ".png", label, group,
                         SampleOrigin::kOriginal, std::nullopt});
  };
  // 4 majority / 2 minority, balanced labels
  add("a1", 0, "majority");
  add("a2", 1, "majority");
  add("a3", 0, "majority");
  add("a4", 1, "majority");
  add("b1", 0, "minority");
  add("b2", 1, "minority");
  return m;
}

}  // namespace

TEST_CASE("accuracy") {
  CHECK(accuracy({1, 0, 1}, {1, 0, 1}) == 1.0);
  CHECK(accuracy({1, 0, 1, 0}, {1, 1, 1, 1}) == 0.5);
  CHECK(accuracy({0}, {1}) == 0.0);
  // exact ratio 5/8
  CHECK(accuracy({1, 1, 1, 1, 1, 0, 0, 0}, {1, 1, 1, 1, 1, 1, 1, 1}) == 0.625);
  CHECK_THROWS_AS(accuracy({}, {}), DomainError);
  CHECK_THROWS_AS(accuracy({1}, {1, 0}), DimensionError);
}

TEST_CASE("group accuracy table layout and numbers") {
  auto m = grouped_manifest();
  MethodPredictions perfect{"baseline", {{"a1", 0}, {"a2", 1}, {"a3", 0},
                                         {"a4", 1}, {"b1", 0}, {"b2", 1}}};
  MethodPredictions biased{"sbr", {{"a1", 0}, {"a2", 1}, {"a3", 0},
                                   {"a4", 1}, {"b1", 1}, {"b2", 0}}};
  auto t = group_accuracy_table({perfect, biased}, m);

  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0] == "overall");
  CHECK(t.rows[1] == "majority");  // first-appearance order
  CHECK(t.rows[2] == "minority");
  REQUIRE(t.methods.size() == 2);
  CHECK(t.methods[0] == "baseline");
  CHECK(t.methods[1] == "sbr");

  CHECK(t.cells[0][0].acc == 1.0);
  CHECK(t.cells[0][0].count == 6);
  CHECK(t.cells[0][1].acc == doctest::Approx(4.0 / 6).epsilon(1e-12));
  CHECK(t.cells[1][1].acc == 1.0);
  CHECK(t.cells[2][1].acc == 0.0);
  CHECK(t.cells[2][1].count == 2);
  CHECK(t.cells[2][1].correct == 0);
  CHECK(t.cells[1][0].correct == 4);

  SUBCASE("csv formatting uses 4 decimals") {
    auto csv = table_to_csv(t);
    CHECK(csv.find("overall") != std::string::npos);
    CHECK(csv.find("0.6667") != std::string::npos);
    CHECK(csv.find("1.0000") != std::string::npos);
    CHECK(csv.find("0.0000") != std::string::npos);
    // header row names the methods
    CHECK(csv.find("baseline") != std::string::npos);
    CHECK(csv.find("sbr") != std::string::npos);
  }
  SUBCASE("json carries counts for recomputation") {
    auto js = nlohmann::ordered_json::parse(table_to_json(t));
    CHECK(js.at("rows").size() == 3);
    CHECK(js.at("methods")[1] == "sbr");
    bool found = false;
    for (const auto& row : js.at("rows"))
      if (row.at("row") == "minority") {
        const auto& cell = row.at("cells")[1];  // column order matches methods
        CHECK(cell.at("correct") == 0);
        CHECK(cell.at("count") == 2);
        found = true;
      }
    CHECK(found);
  }
  SUBCASE("missing prediction for a manifest sample throws") {
    MethodPredictions partial{"p", {{"a1", 0}}};
    CHECK_THROWS_AS(group_accuracy_table({partial}, m), DomainError);
  }
}

TEST_CASE("table without groups has only the overall row") {
  DatasetManifest m;
  m.samples.push_back({"x", "/x.png", 1, std::nullopt, SampleOrigin::kOriginal,
                       std::nullopt});
  MethodPredictions p{"m", {{"x", 1}}};
  auto t = group_accuracy_table({p}, m);
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0] == "overall");
  CHECK(t.cells[0][0].acc == 1.0);
}

TEST_CASE("score histogram binning") {
  std::vector<ScoredSample> s;
  s.push_back({"a", 0, 0.0});     // first bin
  s.push_back({"b", 0, 0.999});   // last bin
  s.push_back({"c", 1, 1.0});     // exactly 1 -> last bin
  s.push_back({"d", 1, 0.5});     // bin 25 of 50
  s.push_back({"e", 1, 0.02001}); // bin 1
  auto h = score_histogram(s, 50);
  REQUIRE(h.edges.size() == 51);
  CHECK(h.edges.front() == 0.0);
  CHECK(h.edges.back() == 1.0);
  REQUIRE(h.counts_class0.size() == 50);
  CHECK(h.counts_class0[0] == 1);
  CHECK(h.counts_class0[49] == 1);
  CHECK(h.counts_class1[49] == 1);
  CHECK(h.counts_class1[25] == 1);
  CHECK(h.counts_class1[1] == 1);
  long total = 0;
  for (int i = 0; i < 50; ++i) total += h.counts_class0[i] + h.counts_class1[i];
  CHECK(total == 5);

  CHECK_THROWS_AS(score_histogram({{"z", 0, -0.01}}, 50), DomainError);
  CHECK_THROWS_AS(score_histogram({{"z", 0, 1.01}}, 50), DomainError);
  CHECK_THROWS_AS(score_histogram(s, 0), ConfigError);
}

TEST_CASE("histogram svg is deterministic and annotated") {
  std::vector<ScoredSample> s;
  for (int i = 0; i < 40; ++i) {
    s.push_back({"n" + std::to_string(i), 0, 0.02 * i});
    s.push_back({"p" + std::to_string(i), 1, 1.0 - 0.02 * i});
  }
  auto h = score_histogram(s, 50);
  auto svg = histogram_to_svg(h, 0.15);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(histogram_to_svg(h, 0.15) == svg);          // deterministic bytes
  CHECK(histogram_to_svg(h, 0.30) != svg);          // threshold is drawn
}

TEST_CASE("training curves csv and svg") {
  CurveSeries a{"baseline", {}};
  a.history.push_back({1, 0.9, 0.55, 0.8, 0.6});
  a.history.push_back({2, 0.5, 0.81, 0.6, 0.75});
  CurveSeries b{"retrained", {}};
  b.history.push_back({1, 0.7, 0.66, 0.7, 0.66});

  auto csv = curves_to_csv({a, b});
  CHECK(csv.find("run,epoch,train_loss,train_accuracy,val_loss,val_accuracy") !=
        std::string::npos);
  CHECK(csv.find("baseline,1,") != std::string::npos);
  CHECK(csv.find("retrained,1,") != std::string::npos);
  // three data rows plus header
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 4);

  auto svg = curves_to_svg({a, b});
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(curves_to_svg({a, b}) == svg);
}

TEST_CASE("predictions csv round trip") {
  std::vector<PredictionRow> rows;
  rows.push_back({"a1", 0, "majority", 0.123456789, 0});
  rows.push_back({"b2", 1, "minority", 0.987654321, 1});
  rows.push_back({"c3", 1, "", 0.5, 0});
  auto csv = predictions_to_csv(rows);
  CHECK(csv.rfind("id,label,group,score,predicted", 0) == 0);
  auto back = predictions_from_csv(csv);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].id == rows[i].id);
    CHECK(back[i].label == rows[i].label);
    CHECK(back[i].group == rows[i].group);
    CHECK(std::abs(back[i].score - rows[i].score) < 1e-8);
    CHECK(back[i].predicted == rows[i].predicted);
  }
  // round trip of the serialized form is byte-stable
  CHECK(predictions_to_csv(back) == csv);

  CHECK_THROWS_AS(predictions_from_csv("garbage\n1,2"), IoError);
}
