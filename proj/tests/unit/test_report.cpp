#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "rem/error.hpp"
#include "rem/report.hpp"

using namespace rem;
using testutil::uniform;

namespace {

GroundTruthTrack sized_track(const std::string& id, double length, const std::string& tag = "car") {
  return GroundTruthTrack{id, "s", {{0, Box3D{0, 0, 0.8, length, 2.0, 1.6, 0}}}, tag};
}

// O(n*m) pair count
double brute_auroc(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (double x : a) {
    for (double y : b) s += x < y ? 1.0 : (x == y ? 0.5 : 0.0);
  }
  return s / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

}  // namespace

TEST_CASE("percentile recall examples") {
  std::vector<double> r(100);
  std::iota(r.begin(), r.end(), 0.0);
  const auto all = percentile_recall(r, std::vector<bool>(100, true));
  REQUIRE(all.bins.size() == 50);
  for (const auto& b : all.bins) CHECK(b.recall == 1.0);
  const auto none = percentile_recall(r, std::vector<bool>(100, false));
  for (const auto& b : none.bins) CHECK(b.recall == 0.0);

  // values 90..99 are the rarest
  std::vector<bool> m(100, true);
  for (int i = 90; i < 100; ++i) m[i] = false;
  const auto ten = percentile_recall(r, m);
  for (int b = 0; b < 50; ++b) CHECK(ten.bins[b].recall == (b < 5 ? 0.0 : 1.0));
  CHECK(ten.bins[0].rareness_max == 99.0);
  CHECK(ten.bins[0].rareness_min == 98.0);
  CHECK(ten.overall_recall == 0.9);

  const auto odd = percentile_recall(std::vector<double>(103, 1.0), std::vector<bool>(103, true));
  CHECK(odd.bins.back().count == 5);
  CHECK(percentile_recall(std::vector<double>(7, 1.0), std::vector<bool>(7, true)).bins.size() == 7);
  CHECK_THROWS_AS(percentile_recall(std::vector<double>{}, {}), ValidationError);
  CHECK_THROWS_AS(percentile_recall(std::vector<double>{1, 2}, {true}), ValidationError);
}

TEST_CASE("percentile recall properties") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 400)(rng);
    std::vector<double> r(n);
    std::vector<bool> m(n);
    for (int i = 0; i < n; ++i) {
      r[i] = std::floor(uniform(rng, 0, 20));  // ties on purpose
      m[i] = uniform(rng, 0, 1) < 0.6;
    }
    const auto base = percentile_recall(r, m);
    std::size_t sum = 0;
    double weighted = 0;
    for (const auto& b : base.bins) {
      sum += b.count;
      weighted += b.recall * static_cast<double>(b.count);
      REQUIRE(b.recall >= 0.0);
      REQUIRE(b.recall <= 1.0);
    }
    REQUIRE(sum == static_cast<std::size_t>(n));
    REQUIRE(std::abs(weighted / n - base.overall_recall) < 1e-12);

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> r2(n);
    std::vector<bool> m2(n);
    for (int i = 0; i < n; ++i) {
      r2[i] = r[perm[i]];
      m2[i] = m[perm[i]];
    }
    REQUIRE(to_json(percentile_recall(r2, m2)).dump() == to_json(base).dump());
  }
}

TEST_CASE("ground truth matching") {
  const std::vector<PoolTarget> gt{{"g0", "s", 0, Box3D{0, 0, 0.8, 4, 2, 1.6, 0}},
                                   {"g1", "s", 0, Box3D{20, 0, 0.8, 4, 2, 1.6, 0}},
                                   {"g2", "s", 1, Box3D{0, 0, 0.8, 4, 2, 1.6, 0}}};
  std::vector<DetectionRecord> dets(3);
  dets[0].segment_id = dets[1].segment_id = dets[2].segment_id = "s";
  dets[0].box = Box3D{0.2, 0, 0.8, 4, 2, 1.6, 0};
  dets[0].score = 0.5;
  dets[1].box = Box3D{21.5, 0, 0.8, 4, 2, 1.6, 0};  // IoU 2.5/5.5 < 0.5
  dets[1].score = 0.9;
  dets[2].box = Box3D{0, 0, 0.8, 4, 2, 1.6, 0};
  dets[2].frame_index = 1;
  dets[2].score = 0.0;  // not above the threshold
  CHECK(match_ground_truth(gt, dets) == std::vector<bool>{true, false, false});
  RecallMatchConfig loose;
  loose.iou_threshold = 0.4;
  loose.score_threshold = -1.0;
  CHECK(match_ground_truth(gt, dets, loose) == std::vector<bool>{true, true, true});
  dets[0].model_id = 1;
  CHECK(match_ground_truth(gt, dets)[0] == false);
}

TEST_CASE("composition examples") {
  std::vector<GroundTruthTrack> gt;
  for (int i = 0; i < 1268; ++i) gt.push_back(sized_track("t" + std::to_string(i), i < 404 ? 9.0 : 4.5));
  gt.push_back(sized_track("tiny", 2.0, "other"));
  const auto r = composition("md-rem", std::vector<GroundTruthTrack>(gt.begin(), gt.begin() + 1268), gt);
  CHECK(r.total == 1268);
  CHECK(r.by_category.at("large") == 404);
  CHECK(r.ratio_large == doctest::Approx(0.3186).epsilon(1e-4));
  CHECK(r.by_category.at("small") + r.by_category.at("regular") + r.by_category.at("large") == r.total);
  CHECK(r.corpus_large_prevalence == doctest::Approx(404.0 / 1269.0));
  CHECK(r.upsampling == doctest::Approx(r.ratio_large / r.corpus_large_prevalence));
  CHECK(r.tag_ratio.at("car") == 1.0);
  CHECK(r.tag_ratio.at("other") == 0.0);

  const auto regular = composition("x", {gt[500], gt[501]}, gt);
  CHECK(regular.ratio_large == 0.0);
  CHECK_THROWS_AS(composition("x", {sized_track("ghost", 4)}, gt), ValidationError);

  // mean size decides the category of a multi-frame track
  GroundTruthTrack mixed{"m", "s", {{0, Box3D{0, 0, 0, 6.5, 2, 2, 0}}, {1, Box3D{0, 0, 0, 7.7, 2, 2, 0}}}, "car"};
  CHECK(track_category(mixed) == SizeCategory::large);
}

TEST_CASE("random selection stays in the binomial band") {
  std::mt19937_64 rng(11);
  std::vector<GroundTruthTrack> gt;
  for (int i = 0; i < 20000; ++i) gt.push_back(sized_track("t" + std::to_string(i), uniform(rng, 0, 1) < 0.03 ? 11 : 4.6));
  int inside = 0;
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<GroundTruthTrack> pick;
    std::sample(gt.begin(), gt.end(), std::back_inserter(pick), 1000, rng);
    const auto r = composition("random", pick, gt);
    const double p = r.corpus_large_prevalence;
    const double sigma = std::sqrt(p * (1 - p) / 1000.0);
    inside += std::abs(r.ratio_large - p) <= 2 * sigma;
  }
  // 95.4% nominal coverage; 40 trials
  CHECK(inside >= 33);
}

TEST_CASE("auroc and ranks") {
  const std::vector<double> a{1, 2, 3, 4};
  CHECK(auroc(a, a) == 0.5);
  CHECK(auroc(std::vector<double>{1, 2}, std::vector<double>{3, 4}) == 1.0);
  CHECK(auroc(std::vector<double>{3, 4}, std::vector<double>{1, 2}) == 0.0);
  CHECK(midranks(std::vector<double>{5, 1, 5, 3}) == std::vector<double>{3.5, 1, 3.5, 2});
  std::mt19937_64 rng(8);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> x(std::uniform_int_distribution<int>(1, 60)(rng));
    std::vector<double> y(std::uniform_int_distribution<int>(1, 60)(rng));
    for (double& v : x) v = std::round(uniform(rng, 0, 10));
    for (double& v : y) v = std::round(uniform(rng, 1, 11));
    REQUIRE(std::abs(auroc(x, y) - brute_auroc(x, y)) < 1e-12);
    REQUIRE(std::abs(auroc(x, y) + auroc(y, x) - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(auroc(std::vector<double>{}, a), ValidationError);
}

TEST_CASE("spearman and quantiles") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  CHECK(spearman(x, std::vector<double>{2, 4, 6, 8, 100}) == doctest::Approx(1.0));
  CHECK(spearman(x, std::vector<double>{5, 4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman(x, std::vector<double>{1, 3, 2, 5, 4}) == doctest::Approx(0.8));
  CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(quantile({1, 2, 3, 4}, 0.0) == 1.0);
  CHECK(quantile({1, 2, 3, 4}, 1.0) == 4.0);
  CHECK(quantile({10}, 0.3) == 10.0);
}

TEST_CASE("distribution report") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> train(3000), val(3000), ood(3000);
  for (double& v : train) v = n(rng);
  for (double& v : val) v = n(rng);
  for (double& v : ood) v = n(rng) - 6;
  const auto r = distribution_report({{"train", train}, {"val", val}, {"ood", ood}});
  REQUIRE(r.sets.size() == 3);
  CHECK(std::abs(r.sets[0].mean - r.sets[1].mean) < 0.1);
  CHECK(r.pairs.size() == 6);
  for (const auto& s : r.sets) {
    CHECK(std::accumulate(s.histogram.begin(), s.histogram.end(), std::size_t{0}) == s.n);
    CHECK(s.histogram.size() + 1 == r.bin_edges.size());
    CHECK(s.quantiles.at("q05") <= s.quantiles.at("q50"));
  }
  for (const auto& p : r.pairs) {
    if (p.a == "ood" && p.b == "train") CHECK(p.auroc > 0.99);
    if (p.a == "train" && p.b == "val") CHECK(std::abs(p.auroc - 0.5) < 0.05);
  }
  CHECK(r.sets[0].std == doctest::Approx(1.0).epsilon(0.05));
  CHECK_THROWS_AS(distribution_report({{"empty", {}}}), ValidationError);
}

TEST_CASE("track ranking and csv output") {
  const auto t = rank_tracks({{"a", -1.0}, {"b", -5.0}, {"a", -3.0}, {"c", -2.0}});
  REQUIRE(t.size() == 3);
  CHECK(t[0].track_id == "b");
  CHECK(t[1].track_id == "a");
  CHECK(t[1].frames == 2);
  CHECK(t[1].rareness == 2.0);
  CHECK(t[2].track_id == "c");

  std::vector<double> r(10, 1.0);
  const std::string csv = recall_csv(percentile_recall(r, std::vector<bool>(10, true), 5));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
}
