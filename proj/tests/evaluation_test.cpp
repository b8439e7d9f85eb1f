#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "milnet/data_io.hpp"
#include "milnet/evaluation.hpp"
#include "milnet/metrics.hpp"

using namespace milnet;

namespace {

double pair_count_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return num / pairs;
}

double brute_accuracy(const std::vector<double>& s, const std::vector<int>& y) {
  double hit = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) hit += (s[i] >= 0.5 ? 1 : 0) == y[i];
  return hit / double(s.size());
}

}  // namespace

TEST(Metrics, AccuracyExamples) {
  EXPECT_DOUBLE_EQ(accuracy(std::vector<double>{0.9, 0.2}, std::vector<int>{1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(accuracy(std::vector<double>{0.9, 0.2}, std::vector<int>{0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(accuracy(std::vector<double>{0.5}, std::vector<int>{1}), 1.0);
  EXPECT_THROW(accuracy(std::vector<double>{}, std::vector<int>{}), std::invalid_argument);
  EXPECT_THROW(accuracy(std::vector<double>{0.1}, std::vector<int>{1, 0}), std::invalid_argument);
}

TEST(Metrics, AucExamples) {
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.9, 0.4, 0.3, 0.5}, std::vector<int>{1, 1, 0, 0}), 0.75);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.9, 0.8, 0.1}, std::vector<int>{1, 1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.3, 0.3, 0.3}, std::vector<int>{1, 0, 0}), 0.5);
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), std::invalid_argument);
}

TEST(Metrics, ExhaustiveSmallSets) {
  // Every label pattern and every score assignment over a 3-level grid, sizes 2..8.
  for (std::size_t n = 2; n <= 8; ++n) {
    std::size_t patterns = 1;
    for (std::size_t i = 0; i < n; ++i) patterns *= 3;
    for (std::size_t lab = 1; lab + 1 < (std::size_t(1) << n); ++lab) {
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = int((lab >> i) & 1);
      for (std::size_t code = 0; code < patterns; code += (n > 6 ? 7 : 1)) {
        std::vector<double> s(n);
        std::size_t c = code;
        for (std::size_t i = 0; i < n; ++i, c /= 3) s[i] = 0.25 * double(c % 3 + 1);
        ASSERT_NEAR(auc(s, y), pair_count_auc(s, y), 1e-12);
        ASSERT_DOUBLE_EQ(accuracy(s, y), brute_accuracy(s, y));
      }
    }
  }
}

TEST(Metrics, RandomLargerSetsAndRocConsistency) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 9 + rng() % 120;
    std::vector<double> s(n);
    std::vector<int> y(n);
    const bool coarse = trial % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = coarse ? std::round(u(rng) * 10) / 10 : u(rng);
      y[i] = int(rng() % 3 == 0);
    }
    y[0] = 1;
    y[1] = 0;
    const double a = auc(s, y);
    ASSERT_NEAR(a, pair_count_auc(s, y), 1e-12);
    const auto curve = roc_curve(s, y);
    ASSERT_NEAR(trapezoid_area(curve), a, 1e-12);
    ASSERT_EQ(curve.front().fpr, 0.0);
    ASSERT_EQ(curve.front().tpr, 0.0);
    ASSERT_EQ(curve.back().fpr, 1.0);
    ASSERT_EQ(curve.back().tpr, 1.0);
    for (std::size_t i = 1; i < curve.size(); ++i) {
      ASSERT_GE(curve[i].fpr, curve[i - 1].fpr);
      ASSERT_GE(curve[i].tpr, curve[i - 1].tpr);
    }
    // Strictly increasing transforms do not change the AUC.
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(3.0 * s[i]) - 7.0;
    ASSERT_NEAR(auc(t, y), a, 1e-12);
  }
}

TEST(Metrics, RocExamples) {
  const auto sep = roc_curve(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{1, 1, 0, 0});
  bool through_corner = false;
  for (const auto& p : sep) through_corner |= p.fpr == 0.0 && p.tpr == 1.0;
  EXPECT_TRUE(through_corner);
  EXPECT_TRUE(std::isinf(sep.front().threshold));
  EXPECT_DOUBLE_EQ(trapezoid_area(roc_curve(std::vector<double>{0.7, 0.2}, std::vector<int>{1, 0})), 1.0);
  EXPECT_THROW(roc_curve(std::vector<double>{0.7, 0.2}, std::vector<int>{0, 0}), std::invalid_argument);
  const std::string csv = roc_csv(sep);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "fpr,tpr,threshold");
}

TEST(Folds, CountsAndRotation) {
  std::vector<int> labels(50, 0);
  for (std::size_t i = 0; i < 10; ++i) labels[i * 5] = 1;
  const FoldPlan plan = make_folds(labels, 5, 7);
  std::vector<int> pos(5, 0), neg(5, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg)[plan.fold_of[i]]++;
  for (int f = 0; f < 5; ++f) {
    EXPECT_EQ(pos[f], 2);
    EXPECT_EQ(neg[f], 8);
  }
  EXPECT_EQ(make_folds(labels, 5, 7).fold_of, plan.fold_of);
  EXPECT_NE(make_folds(labels, 5, 8).fold_of, plan.fold_of);

  std::vector<int> tested(labels.size(), 0);
  for (std::size_t t = 0; t < 5; ++t) {
    const auto run = plan.run(t);
    EXPECT_EQ(run.test_fold, t);
    EXPECT_EQ(run.val_fold, (t + 1) % 5);
    EXPECT_EQ(run.train.size() + run.val.size() + run.test.size(), labels.size());
    EXPECT_EQ(run.train.size(), 30u);
    for (auto i : run.test) tested[i]++;
    for (auto i : run.val) EXPECT_EQ(plan.fold_of[i], (t + 1) % 5);
  }
  for (int c : tested) EXPECT_EQ(c, 1);
}

TEST(Folds, RemainderRule) {
  std::vector<int> labels(410, 0);
  for (std::size_t i = 0; i < 94; ++i) labels[i] = 1;
  const FoldPlan plan = make_folds(labels, 5, 1);
  std::vector<int> pos(5, 0), total(5, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    pos[plan.fold_of[i]] += labels[i];
    total[plan.fold_of[i]]++;
  }
  EXPECT_EQ(pos, (std::vector<int>{19, 19, 19, 19, 18}));
  for (int t : total) EXPECT_EQ(t, 82);

  std::vector<int> few{1, 1, 1, 0, 0, 0, 0, 0, 0};
  EXPECT_THROW(make_folds(few, 5, 1), std::invalid_argument);
}

TEST(Bagging, Examples) {
  EXPECT_EQ(bagging({{0.2}, {0.8}}, BagMode::kAverage), (std::vector<double>{0.5}));
  EXPECT_NEAR(bagging({{0.9}, {0.9}, {0.1}}, BagMode::kVote)[0], 2.0 / 3.0, 1e-15);
  const std::vector<double> one{0.3, 0.7};
  EXPECT_EQ(bagging({one}, BagMode::kAverage), one);
  EXPECT_EQ(bagging({one}, BagMode::kVote), (std::vector<double>{0.0, 1.0}));
  EXPECT_THROW(bagging({}, BagMode::kAverage), std::invalid_argument);
  EXPECT_THROW(bagging({{0.1}, {0.1, 0.2}}, BagMode::kAverage), std::invalid_argument);
  EXPECT_THROW(parse_bag_mode("median"), std::invalid_argument);
}

TEST(Summary, MeanStdAndCsv) {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto [m, s] = mean_std(v);
  EXPECT_DOUBLE_EQ(m, 2.5);
  EXPECT_NEAR(s, std::sqrt(5.0 / 3.0), 1e-15);

  CvSummary sum;
  for (std::size_t f = 0; f < 5; ++f) {
    FoldResult r;
    r.fold = f;
    r.accuracy = 0.8;
    r.auc = 0.9;
    sum.folds.push_back(r);
  }
  sum.mean_accuracy = 0.8;
  sum.mean_auc = 0.9;
  const std::string csv = cv_summary_csv(sum);
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n';
  EXPECT_EQ(lines, 8u);  // header, 5 folds, mean, std
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "fold,accuracy,auc");
  EXPECT_NE(csv.find("\nmean,"), std::string::npos);
  EXPECT_NE(csv.find("\nstd,"), std::string::npos);
}

TEST(Histogram, SingleValueGivesOneBin) {
  const std::vector<double> one{100.0};
  const Histogram h = histogram("image_width", one);
  ASSERT_EQ(h.count.size(), 1u);
  EXPECT_EQ(h.count[0], 1u);
  const std::vector<double> many{0, 1, 2, 3, 4, 5, 6, 7, 8, 10};
  const Histogram g = histogram("x", many, 5);
  std::size_t total = 0;
  for (auto c : g.count) total += c;
  EXPECT_EQ(total, many.size());
  EXPECT_EQ(g.count.back(), 2u);  // the maximum lands in the last bin
}

TEST(ResponseGeometry, CellRectsTileTheImage) {
  ResponseMap map{3, 4, std::vector<double>(12, 0.1)};
  std::vector<int> cover(30 * 20, 0);
  for (std::size_t i = 0; i < 12; ++i) {
    const Box b = cell_rect(map, i, 30, 20);
    for (std::size_t y = b.y; y < b.y + b.h; ++y)
      for (std::size_t x = b.x; x < b.x + b.w; ++x) cover[y * 30 + x]++;
  }
  for (int c : cover) EXPECT_EQ(c, 1);

  map.values[6] = 0.9;  // row 1, column 2
  const GrayImage up = upsample_nearest(map, 30, 20);
  const Box hot = cell_rect(map, 6, 30, 20);
  EXPECT_DOUBLE_EQ(up.at(hot.x, hot.y), 0.9);
  EXPECT_TRUE(argmax_hits(map, Box{hot.x + 1, hot.y, 2, 2}, 30, 20));
  EXPECT_FALSE(argmax_hits(map, Box{0, 0, 2, 2}, 30, 20));
}

TEST(DatasetStats, SyntheticAreaFraction) {
  const auto dir = std::filesystem::temp_directory_path() / "milnet_stats_test";
  std::filesystem::remove_all(dir);
  SynthSpec spec;
  spec.n_pos = 10;
  spec.n_neg = 10;
  const Manifest m = generate_synthetic(spec, dir);
  const DatasetStats st = dataset_stats(m);
  EXPECT_EQ(st.images, 20u);
  EXPECT_EQ(st.masses, 10u);
  EXPECT_DOUBLE_EQ(st.mean_image_width, 64.0);
  const double configured = spec.mass_fraction * spec.mass_fraction;
  EXPECT_LE(std::abs(st.mass_area_fraction - configured) / configured, 0.10);
  EXPECT_NE(histograms_csv(st).find("quantity,bin_lo,bin_hi,count"), std::string::npos);
  EXPECT_NE(stats_summary_csv(st).find("mass_area_fraction"), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(DatasetStats, SingleImageOneBin) {
  const auto dir = std::filesystem::temp_directory_path() / "milnet_stats_single";
  std::filesystem::create_directories(dir);
  write_pgm(dir / "a.pgm", GrayImage(100, 200, 9.0));
  Manifest m;
  m.records.push_back({dir / "a.pgm", 0, std::nullopt});
  const DatasetStats st = dataset_stats(m);
  ASSERT_FALSE(st.histograms.empty());
  for (const auto& h : st.histograms) {
    if (h.quantity.starts_with("image_")) {
      ASSERT_EQ(h.count.size(), 1u);
      EXPECT_EQ(h.count[0], 1u);
    } else {
      EXPECT_TRUE(h.count.empty());
    }
  }
  EXPECT_DOUBLE_EQ(st.mean_image_height, 200.0);
  std::filesystem::remove_all(dir);
}
