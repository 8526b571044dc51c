#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "mine_reference.hpp"
#include "rem/error.hpp"
#include "rem/mine.hpp"

using namespace rem;
using namespace testutil;

namespace {

GroundTruthTrack track(const std::string& id, std::map<int, Box3D> boxes, const std::string& seg = "s") {
  return GroundTruthTrack{id, seg, std::move(boxes), "car"};
}

RankedDetection ranked(const std::string& id, int frame, double x, double y, double score, const std::string& seg = "s") {
  return RankedDetection{id, seg, frame, Box3D{x, y, 0.8, 4, 2, 1.6, 0}, score};
}

Box3D at(double x, double y) { return Box3D{x, y, 0.8, 4, 2, 1.6, 0}; }

}  // namespace

TEST_CASE("mining matches the naive reference on random instances") {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const MiningInstance inst = random_mining_instance(seed);
    const std::size_t budget = seed % 7;
    const std::string diff = compare_with_reference(inst, budget);
    INFO("seed " << seed);
    REQUIRE(diff.empty());
    ++checked;
  }
  CHECK(checked == 1000);
}

TEST_CASE("mining properties") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const MiningInstance inst = random_mining_instance(seed + 5000);
    const auto ranking = sorted_ranking(inst.detections);
    const Oracle oracle = make_simulated_oracle(inst.gt);
    std::vector<std::string> prev;
    for (std::size_t k = 0; k <= 6; ++k) {
      const MiningResult r = mine_tracks(ranking, oracle, inst.auto_tracks, k);
      REQUIRE(r.human_tracks.size() <= k);
      const auto ids = ids_of(r.human_tracks);
      // a larger budget extends the same selection
      REQUIRE(std::equal(prev.begin(), prev.end(), ids.begin()));
      prev = ids;
      std::map<std::string, const RankedDetection*> by_id;
      for (const auto& d : ranking) by_id[d.detection_id] = &d;
      for (std::size_t i = 0; i < r.log.size(); ++i) {
        if (!r.log[i].object_exists) {
          REQUIRE(r.log[i].discarded.empty());
          continue;
        }
        const auto& t = *std::find_if(r.human_tracks.begin(), r.human_tracks.end(),
                                      [&](const auto& h) { return h.track_id == r.log[i].track_id; });
        for (const std::string& gone : r.log[i].discarded) {
          const RankedDetection& d = *by_id.at(gone);
          REQUIRE(d.segment_id == t.segment_id);
          REQUIRE(bev_iou(d.box, t.boxes.at(d.frame_index)) > 0.0);
        }
      }
      for (const auto& a : r.auto_tracks_retained) {
        for (const auto& h : r.human_tracks) REQUIRE_FALSE(tracks_intersect(a, h));
      }
    }
  }
}

TEST_CASE("zero budget selects nothing") {
  const auto gt = std::vector<GroundTruthTrack>{track("A", {{0, at(0, 0)}})};
  const MiningResult r = mine_tracks({ranked("d", 0, 0, 0, 1)}, make_simulated_oracle(gt), gt, 0);
  CHECK(r.human_tracks.empty());
  CHECK(r.log.empty());
  CHECK(ids_of(r.merged) == std::vector<std::string>{"A"});
}

TEST_CASE("three detections on two tracks with budget one") {
  const std::vector<GroundTruthTrack> gt{track("A", {{0, at(0, 0)}, {1, at(1, 0)}}), track("B", {{0, at(20, 0)}})};
  const std::vector<RankedDetection> dets{ranked("d1", 0, 0.2, 0, 0.9), ranked("d2", 1, 1.1, 0.1, 0.8),
                                          ranked("d3", 0, 20, 0, 0.7)};
  std::vector<GroundTruthTrack> autos{track("A", {{0, at(0.1, 0)}}), track("B", {{0, at(20.1, 0)}}),
                                      track("C", {{1, at(1.5, 0.5)}})};
  autos[0].attribute_tag = autos[1].attribute_tag = autos[2].attribute_tag = "auto-labeled";
  const MiningResult r = mine_tracks(dets, make_simulated_oracle(gt), autos, 1);
  CHECK(ids_of(r.human_tracks) == std::vector<std::string>{"A"});
  REQUIRE(r.log.size() == 1);
  CHECK(r.log[0].discarded == std::vector<std::string>{"d2"});
  CHECK(r.auto_tracks_removed == std::vector<std::string>{"A", "C"});
  CHECK(ids_of(r.merged) == std::vector<std::string>{"A", "B"});
  CHECK(r.merged[0].attribute_tag == "car");
}

TEST_CASE("false positive does not consume budget") {
  const std::vector<GroundTruthTrack> gt{track("A", {{0, at(0, 0)}})};
  const std::vector<RankedDetection> dets{ranked("fp", 0, 40, 40, 0.9), ranked("d", 0, 0, 0, 0.5)};
  const MiningResult r = mine_tracks(dets, make_simulated_oracle(gt), {}, 1);
  REQUIRE(r.log.size() == 2);
  CHECK_FALSE(r.log[0].object_exists);
  CHECK(r.log[0].track_id.empty());
  CHECK(ids_of(r.human_tracks) == std::vector<std::string>{"A"});
}

TEST_CASE("oracle picks the highest overlap") {
  const std::vector<GroundTruthTrack> gt{track("A", {{0, at(0, 0)}}), track("B", {{0, at(3, 0)}}),
                                         track("C", {{1, at(0, 0)}})};
  const auto hit = simulate_oracle(ranked("d", 0, 0.6, 0, 1), gt);
  REQUIRE(hit);
  CHECK(hit->track_id == "A");
  CHECK(simulate_oracle(ranked("d", 0, 2.5, 0, 1), gt)->track_id == "B");
  CHECK_FALSE(simulate_oracle(ranked("d", 2, 0, 0, 1), gt));
  CHECK_FALSE(simulate_oracle(ranked("d", 0, 0, 0, 1, "other"), gt));
  const Oracle indexed = make_simulated_oracle(gt);
  CHECK(indexed(ranked("d", 0, 2.5, 0, 1))->track_id == "B");
}

TEST_CASE("malformed rankings and oracle failures") {
  const std::vector<GroundTruthTrack> gt{track("A", {{0, at(0, 0)}})};
  const Oracle oracle = make_simulated_oracle(gt);
  CHECK_THROWS_AS(mine_tracks({ranked("a", 0, 0, 0, 0.1), ranked("b", 0, 9, 9, 0.5)}, oracle, {}, 1), ValidationError);
  CHECK_THROWS_AS(mine_tracks({ranked("b", 0, 0, 0, 0.5), ranked("a", 0, 9, 9, 0.5)}, oracle, {}, 1), ValidationError);
  CHECK_THROWS_AS(mine_tracks({ranked("a", 0, 0, 0, 0.5), ranked("a", 0, 9, 9, 0.4)}, oracle, {}, 1), ValidationError);
  CHECK_THROWS_AS(mine_tracks({ranked("a", 0, 0, 0, std::nan(""))}, oracle, {}, 1), ValidationError);
  const Oracle stuck = [&](const RankedDetection&) { return std::optional<GroundTruthTrack>(gt[0]); };
  CHECK_THROWS_AS(mine_tracks({ranked("a", 0, 0, 0, 0.5), ranked("b", 0, 30, 30, 0.4)}, stuck, {}, 2), ValidationError);
  const Oracle broken = [](const RankedDetection&) -> std::optional<GroundTruthTrack> {
    throw std::runtime_error("labeler offline");
  };
  CHECK_THROWS(mine_tracks({ranked("a", 0, 0, 0, 0.5)}, broken, {}, 1));
}

TEST_CASE("ranking drops filtered records and breaks ties by id") {
  std::vector<DetectionRecord> dets(3);
  for (int i = 0; i < 3; ++i) {
    dets[i].detection_id = std::string(1, static_cast<char>('c' - i));
    dets[i].segment_id = "s";
    dets[i].box = at(i * 10.0, 0);
  }
  const std::vector<ScoreRecord> scores{{"c", "", ScoreMethod::md_rem, 1.0, 1, false},
                                        {"b", "", ScoreMethod::md_rem, 0.0, 0, true},
                                        {"a", "", ScoreMethod::md_rem, 1.0, 1, false}};
  const auto r = rank_detections(scores, dets);
  REQUIRE(r.size() == 2);
  CHECK(r[0].detection_id == "a");
  CHECK(r[1].detection_id == "c");
  auto dup = scores;
  dup.push_back(scores[0]);
  CHECK_THROWS_AS(rank_detections(dup, dets), ValidationError);
  auto missing = scores;
  missing[0].detection_id = "zz";
  CHECK_THROWS_AS(rank_detections(missing, dets), ValidationError);
}

TEST_CASE("simulated auto-labels") {
  std::vector<GroundTruthTrack> gt;
  for (int i = 0; i < 4000; ++i) gt.push_back(track("t" + std::to_string(i), {{0, at(i, 0)}, {1, at(i, 1)}}));

  const auto clean = simulate_autolabels(gt, AutoLabelConfig{0, 0, 0}, 1);
  REQUIRE(clean.size() == gt.size());
  CHECK(clean[5].boxes.at(1).center_y == 1.0);
  CHECK(clean[5].boxes.at(1).length == 4.0);
  CHECK(clean[5].attribute_tag == "auto-labeled");
  CHECK(clean[5].track_id == "t5");

  CHECK(simulate_autolabels(gt, AutoLabelConfig{0.2, 0.05, 1.0}, 1).empty());
  CHECK_THROWS_AS(simulate_autolabels(gt, AutoLabelConfig{-1, 0, 0}, 1), ValidationError);
  CHECK_THROWS_AS(simulate_autolabels(gt, AutoLabelConfig{0, 0, 1.5}, 1), ValidationError);

  const auto noisy = simulate_autolabels(gt, AutoLabelConfig{0.2, 0.0, 0.0}, 2);
  double sum = 0;
  int n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    for (const auto& [f, b] : noisy[i].boxes) {
      sum += std::abs(b.center_x - gt[i].boxes.at(f).center_x);
      ++n;
    }
  }
  const double expected = 0.2 * std::sqrt(2.0 / M_PI);
  CHECK(expected == doctest::Approx(0.1596).epsilon(1e-3));
  CHECK(std::abs(sum / n - expected) < 0.2 * expected);

  const auto a = simulate_autolabels(gt, AutoLabelConfig{}, 9);
  const auto b = simulate_autolabels(gt, AutoLabelConfig{}, 9);
  CHECK(ids_of(a) == ids_of(b));
  CHECK(a[0].boxes.at(0).center_x == b[0].boxes.at(0).center_x);
  const double kept = static_cast<double>(a.size()) / gt.size();
  CHECK(std::abs(kept - 0.95) < 0.02);
}

TEST_CASE("mining result json round trip") {
  const MiningInstance inst = random_mining_instance(77);
  const MiningResult r =
      mine_tracks(sorted_ranking(inst.detections), make_simulated_oracle(inst.gt), inst.auto_tracks, 4);
  const Json j = mining_result_to_json(r);
  const MiningResult back = mining_result_from_json(Json::parse(j.dump()));
  CHECK(back.budget == 4);
  CHECK(ids_of(back.human_tracks) == ids_of(r.human_tracks));
  CHECK(ids_of(back.auto_tracks_retained) == ids_of(r.auto_tracks_retained));
  CHECK(back.auto_tracks_removed == r.auto_tracks_removed);
  CHECK(ids_of(back.merged) == ids_of(r.merged));
  REQUIRE(back.log.size() == r.log.size());
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    CHECK(back.log[i].detection_id == r.log[i].detection_id);
    CHECK(back.log[i].discarded == r.log[i].discarded);
    CHECK(back.log[i].score == r.log[i].score);
  }
  CHECK(mining_result_to_json(back).dump() == j.dump());
}
