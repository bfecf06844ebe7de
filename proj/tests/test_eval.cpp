#include <gtest/gtest.h>

#include <random>

#include "mtlam/corpus.hpp"
#include "mtlam/eval.hpp"
#include "mtlam/thresholds.hpp"

using namespace mtlam;

namespace {

// Exhaustive oracle: J at every midpoint of sorted distinct scores and at the
// two sentinels, with the rule score > threshold.
double oracle_best_j(const std::vector<double>& s, const std::vector<Label>& y) {
  std::vector<double> u = s;
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  std::vector<double> cand = {1e-7, 1 - 1e-7};
  for (std::size_t i = 1; i < u.size(); ++i) cand.push_back((u[i - 1] + u[i]) / 2);
  double P = 0, N = 0;
  for (auto l : y) (l ? P : N) += 1;
  double best = -2;
  for (double c : cand) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] > c) (y[i] ? tp : fp) += 1;
    }
    best = std::max(best, tp / P - fp / N);
  }
  return best;
}

std::vector<Label> classify(const std::vector<double>& s, double thr) {
  std::vector<Label> out;
  for (double v : s) out.push_back(v > thr);
  return out;
}

}  // namespace

TEST(Tune, PerfectlySeparatedPicksMidpoint) {
  const std::vector<double> s = {0.1, 0.2, 0.8, 0.9};
  const std::vector<Label> y = {0, 0, 1, 1};
  const auto r = tune(s, y);
  EXPECT_DOUBLE_EQ(r.threshold, 0.5);
  EXPECT_DOUBLE_EQ(r.youden_j, 1.0);
}

TEST(Tune, TieBetweenCandidatesGoesToHalf) {
  // Candidates: eps, 0.35, 0.5, 1 - eps. At 0.35: TP 1 (0.6), FP 1 (0.4) so
  // J = 0.5 - 1 = -0.5. At 0.5: TP 1, FP 0, J = 0.5. At eps: J = 0.
  // The unique maximum is 0.5.
  const std::vector<double> s = {0.4, 0.6, 0.3};
  const std::vector<Label> y = {0, 1, 1};
  const auto r = tune(s, y);
  EXPECT_DOUBLE_EQ(r.threshold, 0.5);
  EXPECT_DOUBLE_EQ(r.youden_j, 0.5);
  EXPECT_EQ(candidate_thresholds(s), (std::vector<double>{1e-7, 0.35, 0.5, 1 - 1e-7}));
}

TEST(Tune, AllCandidatesEqualReturnsHalf) {
  const std::vector<double> s = {0.3, 0.3, 0.3, 0.3};
  const std::vector<Label> y = {0, 1, 0, 1};
  EXPECT_DOUBLE_EQ(tune(s, y).threshold, 0.5);
  const auto single = tune(s, std::vector<Label>{1, 1, 1, 1});
  EXPECT_DOUBLE_EQ(single.threshold, 0.5);
  EXPECT_TRUE(single.diagnostic);
}

TEST(Tune, MatchesExhaustiveScan) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u;
  std::uniform_int_distribution<int> n(2, 40), bit(0, 1), coarse(0, 9);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> s(static_cast<std::size_t>(n(rng)));
    std::vector<Label> y(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = trial % 2 ? u(rng) : coarse(rng) / 10.0 + 0.05;  // half the sets have ties
      y[i] = bit(rng);
    }
    y[0] = 0;
    y[1] = 1;
    const auto r = tune(s, y);
    const auto pred = classify(s, r.threshold);
    double tp = 0, fp = 0, P = 0, N = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      (y[i] ? P : N) += 1;
      if (pred[i]) (y[i] ? tp : fp) += 1;
    }
    EXPECT_NEAR(r.youden_j, oracle_best_j(s, y), 1e-12);
    EXPECT_NEAR(tp / P - fp / N, r.youden_j, 1e-12);
  }
}

TEST(Apply, StrictInequalityAndMonotone) {
  ThresholdSet t;
  Matrix p = Matrix::Constant(2, 10, 0.7);
  p(1, 3) = 0.5;
  const auto out = apply(p, t);
  EXPECT_EQ(out(0, 0), 1);
  EXPECT_EQ(out(1, 3), 0);
  Matrix q = p;
  q(1, 3) = 0.51;
  EXPECT_EQ(apply(q, t)(1, 3), 1);
  EXPECT_THROW(apply(Matrix::Zero(1, 9), t), std::invalid_argument);
}

TEST(ThresholdSet, JsonRoundTrip) {
  ThresholdSet t;
  t.values[4] = 0.3125;
  EXPECT_EQ(thresholds_from_json(nlohmann::json::parse(to_json(t).dump())), t);
}

TEST(WeightedMetrics, IdentityIsHundred) {
  const std::vector<Label> y = {1, 0, 1, 1, 0};
  const auto m = weighted_metrics(y, y);
  EXPECT_DOUBLE_EQ(m.f1, 100);
  EXPECT_DOUBLE_EQ(m.precision, 100);
  EXPECT_DOUBLE_EQ(m.recall, 100);
  EXPECT_DOUBLE_EQ(m.accuracy, 100);
  EXPECT_THROW(weighted_metrics(std::vector<Label>{}, std::vector<Label>{}), DataError);
}

TEST(WeightedMetrics, HandComputedConfusion) {
  const std::vector<Label> y = {1, 1, 0, 0}, p = {1, 0, 1, 0};
  const auto m = weighted_metrics(p, y);
  EXPECT_DOUBLE_EQ(m.f1, 50.0);
  EXPECT_DOUBLE_EQ(m.accuracy, 50.0);
}

TEST(WeightedMetrics, AllPositiveOnRareClass) {
  std::vector<Label> y(100, 0), p(100, 1);
  for (int i = 0; i < 6; ++i) y[i] = 1;
  // Class 1: P = 6/100, R = 1, F1 = 12/106. Class 0: F1 = 0. Weighted by 6/100.
  const auto m = weighted_metrics(p, y);
  EXPECT_NEAR(m.f1, 100 * 0.06 * (12.0 / 106), 1e-9);
  EXPECT_LT(m.f1, 100);
}

TEST(WeightedMetrics, PermutationInvariantAndBounded) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> bit(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Label> y(30), p(30);
    for (int i = 0; i < 30; ++i) y[i] = bit(rng), p[i] = bit(rng);
    std::vector<std::size_t> idx(30);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<Label> y2, p2;
    for (auto i : idx) y2.push_back(y[i]), p2.push_back(p[i]);
    const auto a = weighted_metrics(p, y), b = weighted_metrics(p2, y2);
    EXPECT_DOUBLE_EQ(a.f1, b.f1);
    // Per-class F1 bounds.
    std::array<double, 2> f{};
    for (int c = 0; c < 2; ++c) {
      double tp = 0, fp = 0, fn = 0;
      for (int i = 0; i < 30; ++i) {
        tp += p[i] == c && y[i] == c;
        fp += p[i] == c && y[i] != c;
        fn += p[i] != c && y[i] == c;
      }
      f[c] = tp > 0 ? 100 * 2 * tp / (2 * tp + fp + fn) : 0;
    }
    EXPECT_GE(a.f1, std::min(f[0], f[1]) - 1e-9);
    EXPECT_LE(a.f1, std::max(f[0], f[1]) + 1e-9);
  }
}

TEST(RandomBaseline, BalancedTaskNearFifty) {
  DatasetStats st;
  for (auto& t : st.tasks) t = {100, {50, 50}, {0.5, 0.5}};
  const auto r = random_baseline(st, 100, 7);
  // E[weighted F1] at p = 0.5 is p^2 + (1-p)^2 = 0.5.
  for (const auto& m : r.tasks) EXPECT_NEAR(m->f1, 50.0, 1.5);
  const auto again = random_baseline(st, 100, 7);
  EXPECT_EQ(to_json(r).dump(), to_json(again).dump());
}

TEST(NaiveBayes, SeparableSyntheticTaskScoresHigh) {
  SynthConfig cfg;
  cfg.n_per_type = 600;
  cfg.seed = 3;
  const auto rs = split(synthesize(cfg), {0.8, 0.1, 0.1}, 3);
  const auto r = unigram_nb_baseline(filter_split(rs, Split::kTrain), filter_split(rs, Split::kTest));
  EXPECT_EQ(r.task_count(), 10u);
  EXPECT_GE(r.tasks[9]->f1, 95.0);
  EXPECT_GE(r.aggregate.f1, 90.0);
}

TEST(NaiveBayes, OneDocumentPerClass) {
  UnigramNaiveBayes nb;
  nb.fit({{"apple apple pear", 1}, {"stone rock", 0}});
  // Class 1: P(apple) = (2+1)/(3+4) vs class 0: (0+1)/(2+4); priors equal.
  EXPECT_EQ(nb.predict("apple"), 1);
  EXPECT_EQ(nb.predict("rock rock"), 0);
  EXPECT_THROW(unigram_nb_baseline({}, {}), DataError);
}

TEST(Compare, ReproducesReferenceGains) {
  const auto a = compare_values({"disagree_agree", "", "Acc.", 68.20, 70.73}, 70.73);
  EXPECT_EQ(round2(a.absolute_gain), 2.53);
  EXPECT_EQ(round2(a.relative_gain), 3.71);
  const auto b = compare_values({"emotion_fact", "", "F1", 46.20, 63.93}, 63.93);
  EXPECT_EQ(round2(b.absolute_gain), 17.73);
  EXPECT_EQ(round2(b.relative_gain), 38.38);
  const auto c = compare_values({"nasty_nice", "", "F1", 69.0, std::nullopt}, 69.0);
  EXPECT_EQ(c.absolute_gain, 0);
  EXPECT_EQ(c.relative_gain, 0);
}

TEST(Compare, ReadsMetricFromReportAndRejectsUnknown) {
  MetricsReport r;
  r.tasks[2] = Metrics{70, 71, 63.93, 80, 10};
  const auto rows = compare(r, {{"emotion_fact", "x", "F1", 46.20, std::nullopt}});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_DOUBLE_EQ(rows[0].value, 63.93);
  EXPECT_THROW(compare(r, {{"emotion_fact", "x", "AUC", 46.20, std::nullopt}}), std::exception);
}
