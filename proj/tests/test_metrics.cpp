#include <doctest.h>

#include <cmath>

#include "cbamnet/metrics.hpp"
#include "oracles.hpp"

using namespace cbamnet;

namespace {

struct Instance {
  std::vector<double> scores;
  std::vector<uint8_t> labels;
};

// random instance guaranteed non-degenerate, with duplicated scores
Instance random_instance(Rng& rng, int max_n = 50) {
  const auto n = 2 + rng.uniform_int(static_cast<uint64_t>(max_n - 1));
  Instance inst;
  inst.scores.resize(n);
  inst.labels.resize(n);
  // draw from a small value set so ties are frequent
  const int levels = 1 + static_cast<int>(rng.uniform_int(12));
  for (size_t i = 0; i < n; ++i)
    inst.scores[i] = static_cast<double>(rng.uniform_int(static_cast<uint64_t>(levels))) / levels;
  while (true) {
    int64_t pos = 0;
    for (auto& y : inst.labels) {
      y = rng.uniform() < 0.5 ? 1 : 0;
      pos += y;
    }
    if (pos > 0 && pos < static_cast<int64_t>(n)) break;
  }
  return inst;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("auc on the four-sample example is 0.75") {
  std::vector<double> scores{0.1, 0.4, 0.35, 0.8};
  std::vector<uint8_t> labels{0, 0, 1, 1};
  CHECK(auc_binary(scores, labels) == 0.75);
  CHECK(oracles::auc_pairwise(scores, labels) == 0.75);
}

TEST_CASE("perfect separation gives auc 1") {
  std::vector<double> scores{0.9, 0.8, 0.2, 0.1};
  std::vector<uint8_t> labels{1, 1, 0, 0};
  CHECK(auc_binary(scores, labels) == 1.0);
}

TEST_CASE("all-equal scores give auc 0.5") {
  std::vector<double> scores{0.3, 0.3, 0.3, 0.3, 0.3};
  std::vector<uint8_t> labels{1, 0, 1, 0, 0};
  CHECK(auc_binary(scores, labels) == 0.5);
}

TEST_CASE("degenerate classes raise the dedicated error") {
  std::vector<double> scores{0.1, 0.2};
  CHECK_THROWS_AS(auc_binary(scores, std::vector<uint8_t>{1, 1}), DegenerateClassError);
  CHECK_THROWS_AS(auc_binary(scores, std::vector<uint8_t>{0, 0}), DegenerateClassError);
}

TEST_CASE("rank-sum auc equals the exhaustive pairwise oracle exactly on 500 instances") {
  Rng rng(2718);
  for (int trial = 0; trial < 500; ++trial) {
    auto inst = random_instance(rng);
    CHECK(auc_binary(inst.scores, inst.labels) == oracles::auc_pairwise(inst.scores, inst.labels));
  }
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    auto inst = random_instance(rng);
    const double base = auc_binary(inst.scores, inst.labels);
    auto transformed = inst.scores;
    for (auto& s : transformed) s = std::exp(3.0 * s) + 7.0;  // strictly increasing
    CHECK(auc_binary(transformed, inst.labels) == base);
  }
}

TEST_CASE("complementing labels flips the auc") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    auto inst = random_instance(rng);
    auto flipped = inst.labels;
    for (auto& y : flipped) y = static_cast<uint8_t>(1 - y);
    CHECK(auc_binary(inst.scores, flipped) == doctest::Approx(1.0 - auc_binary(inst.scores, inst.labels))
                                                  .epsilon(1e-15));
  }
}

TEST_CASE("roc endpoints, monotonicity, and trapezoid equality") {
  Rng rng(123);
  for (int trial = 0; trial < 100; ++trial) {
    auto inst = random_instance(rng);
    auto pts = roc_points(inst.scores, inst.labels);
    REQUIRE(pts.size() >= 2);
    CHECK(pts.front().fpr == 0.0);
    CHECK(pts.front().tpr == 0.0);
    CHECK(pts.back().fpr == 1.0);
    CHECK(pts.back().tpr == 1.0);
    for (size_t i = 1; i < pts.size(); ++i) {
      CHECK(pts[i].fpr >= pts[i - 1].fpr);
      CHECK(pts[i].tpr >= pts[i - 1].tpr);
    }
    CHECK(std::abs(trapezoid_area(pts) - auc_binary(inst.scores, inst.labels)) < 1e-12);
  }
}

TEST_CASE("roc of perfect separation passes through (0,1)") {
  std::vector<double> scores{0.9, 0.8, 0.2, 0.1};
  std::vector<uint8_t> labels{1, 1, 0, 0};
  auto pts = roc_points(scores, labels);
  bool hits = false;
  for (const auto& p : pts) hits = hits || (p.fpr == 0.0 && p.tpr == 1.0);
  CHECK(hits);
}

TEST_CASE("roc with all-equal scores is exactly the two endpoints") {
  std::vector<double> scores{0.4, 0.4, 0.4};
  std::vector<uint8_t> labels{1, 0, 1};
  auto pts = roc_points(scores, labels);
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].fpr == 0.0);
  CHECK(pts[0].tpr == 0.0);
  CHECK(pts[1].fpr == 1.0);
  CHECK(pts[1].tpr == 1.0);
  CHECK(trapezoid_area(pts) == 0.5);
}

TEST_CASE("roc area equals auc on the four-sample example") {
  std::vector<double> scores{0.1, 0.4, 0.35, 0.8};
  std::vector<uint8_t> labels{0, 0, 1, 1};
  CHECK(trapezoid_area(roc_points(scores, labels)) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("evaluate flags degenerate classes and excludes them from the mean") {
  ScoreMatrix m;
  m.n = 4;
  m.l = 2;
  m.class_names = {"a", "b"};
  // class 0: informative; class 1: all-negative (degenerate)
  m.scores = {0.9, 0.1, 0.8, 0.2, 0.2, 0.3, 0.1, 0.4};
  m.labels = {1, 0, 1, 0, 0, 0, 0, 0};
  auto report = evaluate(m);
  CHECK(report.degenerate_count == 1);
  CHECK(report.classes[1].degenerate);
  CHECK(report.mean_auc == report.classes[0].auc);
  CHECK(report.classes[0].auc == 1.0);
}

TEST_CASE("evaluate matches the pairwise oracle on a random 50x6 matrix") {
  Rng rng(9090);
  ScoreMatrix m;
  m.n = 50;
  m.l = 6;
  m.scores.resize(300);
  m.labels.resize(300);
  for (auto& s : m.scores) s = static_cast<double>(rng.uniform_int(16)) / 16.0;
  for (int64_t c = 0; c < m.l; ++c) {
    while (true) {
      int64_t pos = 0;
      for (int64_t r = 0; r < m.n; ++r) {
        m.labels[static_cast<size_t>(r * m.l + c)] = rng.uniform() < 0.4 ? 1 : 0;
        pos += m.labels[static_cast<size_t>(r * m.l + c)];
      }
      if (pos > 0 && pos < m.n) break;
    }
  }
  auto report = evaluate(m);
  for (int64_t c = 0; c < m.l; ++c) {
    std::vector<double> scores(50);
    std::vector<uint8_t> labels(50);
    for (int64_t r = 0; r < m.n; ++r) {
      scores[static_cast<size_t>(r)] = m.scores[static_cast<size_t>(r * m.l + c)];
      labels[static_cast<size_t>(r)] = m.labels[static_cast<size_t>(r * m.l + c)];
    }
    CHECK(report.classes[static_cast<size_t>(c)].auc == oracles::auc_pairwise(scores, labels));
  }
}

TEST_CASE("evaluate rejects fully degenerate matrices") {
  ScoreMatrix m;
  m.n = 3;
  m.l = 1;
  m.class_names = {"only"};
  m.scores = {0.1, 0.2, 0.3};
  m.labels = {1, 1, 1};
  CHECK_THROWS_AS(evaluate(m), MetricError);
}

TEST_CASE("baseline fixture holds the published values") {
  const auto& t = chestxray14_baselines();
  CHECK(t.mean.wang2017 == 0.7451);
  CHECK(t.mean.chexnet.value() == 0.841);
  CHECK(t.mean.prior_sota == 0.85433);
  CHECK(t.mean.cbam_densenet121 == 0.8681);
  CHECK(t.mean.cbam_vgg16 == 0.8695);
  CHECK(std::string(t.rows[13].pathology) == "Hernia");
  CHECK(t.rows[13].cbam_densenet121 == 0.9660);
  CHECK(t.rows[13].cbam_vgg16 == 0.9529);
  // the published CheXNet Consolidation cell is malformed; stored missing
  CHECK(std::string(t.rows[8].pathology) == "Consolidation");
  CHECK_FALSE(t.rows[8].chexnet.has_value());
}

namespace {

EvalReport report_from_column(bool vgg) {
  const auto& t = chestxray14_baselines();
  EvalReport r;
  double sum = 0.0;
  for (const auto& row : t.rows) {
    ClassEval ce;
    ce.name = row.pathology;
    ce.auc = vgg ? row.cbam_vgg16 : row.cbam_densenet121;
    sum += ce.auc;
    r.classes.push_back(ce);
  }
  // Mean AUC is reported at published precision, not recomputed from rows.
  r.mean_auc = vgg ? t.mean.cbam_vgg16 : t.mean.cbam_densenet121;
  (void)sum;
  return r;
}

}  // namespace

TEST_CASE("feeding the published VGG16 column back gives all-zero deltas vs that column") {
  auto rows = compare_to_baselines(report_from_column(true));
  REQUIRE(rows.size() == 15);
  for (const auto& r : rows) {
    REQUIRE(r.vs_cbam_vgg16.has_value());
    CHECK(*r.vs_cbam_vgg16 == 0.0);
  }
  // and the headline gaps against the older baselines, at stored precision
  const auto& mean = rows.back();
  CHECK(mean.name == "Mean AUC");
  CHECK(*mean.vs_wang2017 == doctest::Approx(0.1244).epsilon(1e-12));
  CHECK(*mean.vs_prior_sota == doctest::Approx(0.01517).epsilon(1e-12));
}

TEST_CASE("consolidation deltas against chexnet stay empty") {
  auto rows = compare_to_baselines(report_from_column(false));
  CHECK_FALSE(rows[8].vs_chexnet.has_value());
  CHECK(rows[0].vs_chexnet.has_value());
}

TEST_CASE("compare_to_baselines rejects mismatched class names") {
  auto r = report_from_column(true);
  r.classes[2].name = "Pleural Effusion";
  CHECK_THROWS_WITH_AS(compare_to_baselines(r), doctest::Contains("Pleural Effusion"), MetricError);
  r.classes.pop_back();
  CHECK_THROWS_AS(compare_to_baselines(r), MetricError);
}

TEST_SUITE_END();
