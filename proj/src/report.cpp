#include "rem/report.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rem/embed.hpp"
#include "rem/error.hpp"

namespace rem {

PercentileBinReport percentile_recall(std::span<const double> rareness, const std::vector<bool>& matched, int bins) {
  const std::size_t n = rareness.size();
  if (n == 0) throw ValidationError("percentile recall of an empty ground-truth set");
  if (matched.size() != n) throw ValidationError("rareness and match lists differ in length");
  if (bins < 1) throw ValidationError("need at least one bin");
  for (double r : rareness) {
    if (!std::isfinite(r)) throw ValidationError("non-finite rareness");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (rareness[a] != rareness[b]) return rareness[a] > rareness[b];
    return matched[a] < matched[b];
  });
  const std::size_t nb = std::min<std::size_t>(static_cast<std::size_t>(bins), n);
  const std::size_t per = n / nb;
  PercentileBinReport report;
  report.total = n;
  std::size_t total_matched = 0;
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t lo = b * per;
    const std::size_t hi = (b + 1 == nb) ? n : lo + per;
    RecallBin bin;
    bin.rareness_max = rareness[order[lo]];
    bin.rareness_min = rareness[order[hi - 1]];
    bin.count = hi - lo;
    for (std::size_t i = lo; i < hi; ++i) bin.matched += matched[order[i]] ? 1 : 0;
    bin.recall = static_cast<double>(bin.matched) / static_cast<double>(bin.count);
    total_matched += bin.matched;
    report.bins.push_back(bin);
  }
  report.overall_recall = static_cast<double>(total_matched) / static_cast<double>(n);
  return report;
}

std::vector<bool> match_ground_truth(const std::vector<PoolTarget>& gt_boxes,
                                     const std::vector<DetectionRecord>& detections,
                                     const RecallMatchConfig& config) {
  std::map<std::pair<std::string, int>, std::vector<const DetectionRecord*>> frames;
  for (const DetectionRecord& d : detections) {
    if (d.model_id == config.model_id && d.score > config.score_threshold) {
      frames[{d.segment_id, d.frame_index}].push_back(&d);
    }
  }
  std::vector<bool> out(gt_boxes.size(), false);
  for (std::size_t i = 0; i < gt_boxes.size(); ++i) {
    auto it = frames.find({gt_boxes[i].segment_id, gt_boxes[i].frame_index});
    if (it == frames.end()) continue;
    for (const DetectionRecord* d : it->second) {
      if (bev_iou(gt_boxes[i].box, d->box) >= config.iou_threshold) {
        out[i] = true;
        break;
      }
    }
  }
  return out;
}

SizeCategory track_category(const GroundTruthTrack& track) {
  if (track.boxes.empty()) throw ValidationError("track '" + track.track_id + "' has no boxes");
  double sum = 0.0;
  for (const auto& [frame, box] : track.boxes) sum += vehicle_size(box);
  Box3D mean_box;
  mean_box.length = sum / static_cast<double>(track.boxes.size());
  return size_category(mean_box);
}

CompositionReport composition(const std::string& method, const std::vector<GroundTruthTrack>& mined,
                              const std::vector<GroundTruthTrack>& gt_tracks) {
  std::map<std::string, const GroundTruthTrack*> gt;
  std::map<std::string, std::size_t> tag_counts;
  std::size_t large = 0;
  for (const GroundTruthTrack& t : gt_tracks) {
    gt[t.track_id] = &t;
    if (track_category(t) == SizeCategory::large) ++large;
    ++tag_counts[t.attribute_tag];
  }
  CompositionReport r;
  r.method = method;
  r.total = mined.size();
  for (const char* c : {"small", "regular", "large"}) r.by_category[c] = 0;
  for (const auto& [tag, count] : tag_counts) r.by_tag[tag] = 0;
  for (const GroundTruthTrack& m : mined) {
    auto it = gt.find(m.track_id);
    if (it == gt.end()) throw ValidationError("mined track '" + m.track_id + "' not in ground truth");
    ++r.by_category[to_string(track_category(*it->second))];
    ++r.by_tag[it->second->attribute_tag];
  }
  const double n_gt = static_cast<double>(gt_tracks.size());
  r.corpus_large_prevalence = n_gt > 0 ? static_cast<double>(large) / n_gt : 0.0;
  r.ratio_large = r.total > 0 ? static_cast<double>(r.by_category["large"]) / static_cast<double>(r.total) : 0.0;
  r.upsampling = r.corpus_large_prevalence > 0 ? r.ratio_large / r.corpus_large_prevalence : 0.0;
  for (const auto& [tag, count] : r.by_tag) {
    r.tag_ratio[tag] = r.total > 0 ? static_cast<double>(count) / static_cast<double>(r.total) : 0.0;
    r.tag_prevalence[tag] = n_gt > 0 ? static_cast<double>(tag_counts[tag]) / n_gt : 0.0;
  }
  return r;
}

std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("spearman needs two equal lists of length >= 2");
  const auto rx = midranks(x);
  const auto ry = midranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericalError("spearman of a constant list");
  return sxy / std::sqrt(sxx * syy);
}

double auroc(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ValidationError("auroc needs two nonempty sets");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = midranks(pooled);
  double rank_sum_b = 0.0;
  for (std::size_t i = a.size(); i < pooled.size(); ++i) rank_sum_b += ranks[i];
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  return (rank_sum_b - nb * (nb + 1.0) / 2.0) / (na * nb);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of an empty list");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

DistributionReport distribution_report(const std::vector<std::pair<std::string, std::vector<double>>>& sets) {
  if (sets.empty()) throw ValidationError("distribution report needs at least one set");
  std::vector<double> pooled;
  for (const auto& [name, values] : sets) {
    if (values.empty()) throw ValidationError("set '" + name + "' is empty");
    for (double v : values) {
      if (!std::isfinite(v)) throw ValidationError("set '" + name + "' has a non-finite value");
    }
    pooled.insert(pooled.end(), values.begin(), values.end());
  }
  DistributionReport r;
  const double lo = *std::min_element(pooled.begin(), pooled.end());
  const double hi = *std::max_element(pooled.begin(), pooled.end());
  const double iqr = quantile(pooled, 0.75) - quantile(pooled, 0.25);
  const double width = 2.0 * iqr / std::cbrt(static_cast<double>(pooled.size()));
  std::size_t bins = 1;
  if (width > 0.0 && hi > lo) bins = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil((hi - lo) / width)), 1, 1000);
  const double step = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
  for (std::size_t i = 0; i <= bins; ++i) r.bin_edges.push_back(lo + step * static_cast<double>(i));

  for (const auto& [name, values] : sets) {
    DistributionSummary s;
    s.name = name;
    s.n = values.size();
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n));
    for (auto [key, q] : {std::pair{"q05", 0.05}, {"q25", 0.25}, {"q50", 0.5}, {"q75", 0.75}, {"q95", 0.95}}) {
      s.quantiles[key] = quantile(values, q);
    }
    s.histogram.assign(bins, 0);
    for (double v : values) {
      auto idx = static_cast<std::size_t>((v - lo) / step);
      ++s.histogram[std::min(idx, bins - 1)];
    }
    r.sets.push_back(std::move(s));
  }
  for (const auto& [na, va] : sets) {
    for (const auto& [nb, vb] : sets) {
      if (na == nb) continue;
      r.pairs.push_back({na, nb, auroc(va, vb)});
    }
  }
  return r;
}

std::vector<TrackRareness> rank_tracks(const std::vector<std::pair<std::string, double>>& per_frame_log_prob) {
  std::map<std::string, std::vector<double>> grouped;
  for (const auto& [id, lp] : per_frame_log_prob) grouped[id].push_back(lp);
  std::vector<TrackRareness> out;
  for (const auto& [id, values] : grouped) {
    TrackRareness t;
    t.track_id = id;
    t.frames = values.size();
    t.mean_log_prob = track_score(values);
    t.rareness = -t.mean_log_prob;
    out.push_back(t);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const TrackRareness& a, const TrackRareness& b) { return a.rareness > b.rareness; });
  return out;
}

Json to_json(const PercentileBinReport& r) {
  Json bins = Json::array();
  for (std::size_t i = 0; i < r.bins.size(); ++i) {
    const RecallBin& b = r.bins[i];
    bins.push_back({{"bin", i},
                    {"rareness_max", b.rareness_max},
                    {"rareness_min", b.rareness_min},
                    {"count", b.count},
                    {"matched", b.matched},
                    {"recall", b.recall}});
  }
  return Json{{"total", r.total}, {"overall_recall", r.overall_recall}, {"bins", bins}};
}

Json to_json(const CompositionReport& r) {
  return Json{{"method", r.method},
              {"total", r.total},
              {"by_category", r.by_category},
              {"by_tag", r.by_tag},
              {"ratio_large", r.ratio_large},
              {"corpus_large_prevalence", r.corpus_large_prevalence},
              {"upsampling", r.upsampling},
              {"tag_ratio", r.tag_ratio},
              {"tag_prevalence", r.tag_prevalence}};
}

Json to_json(const DistributionReport& r) {
  Json sets = Json::array();
  for (const DistributionSummary& s : r.sets) {
    sets.push_back({{"name", s.name},
                    {"n", s.n},
                    {"mean", s.mean},
                    {"std", s.std},
                    {"quantiles", s.quantiles},
                    {"histogram", s.histogram}});
  }
  Json pairs = Json::array();
  for (const PairAuroc& p : r.pairs) pairs.push_back({{"a", p.a}, {"b", p.b}, {"auroc", p.auroc}});
  return Json{{"bin_edges", r.bin_edges}, {"sets", sets}, {"auroc", pairs}};
}

Json to_json(const std::vector<TrackRareness>& r) {
  Json out = Json::array();
  for (const TrackRareness& t : r) {
    out.push_back({{"track_id", t.track_id},
                   {"frames", t.frames},
                   {"mean_log_prob", t.mean_log_prob},
                   {"rareness", t.rareness}});
  }
  return out;
}

std::string recall_csv(const PercentileBinReport& r) {
  std::ostringstream os;
  os << "bin,percentile_lo,percentile_hi,rareness_max,rareness_min,count,matched,recall\n";
  std::size_t seen = 0;
  for (std::size_t i = 0; i < r.bins.size(); ++i) {
    const RecallBin& b = r.bins[i];
    const double p_lo = 100.0 * static_cast<double>(seen) / static_cast<double>(r.total);
    seen += b.count;
    const double p_hi = 100.0 * static_cast<double>(seen) / static_cast<double>(r.total);
    os << i << ',' << format_double(p_lo) << ',' << format_double(p_hi) << ',' << format_double(b.rareness_max) << ','
       << format_double(b.rareness_min) << ',' << b.count << ',' << b.matched << ',' << format_double(b.recall)
       << '\n';
  }
  return os.str();
}

std::string composition_csv(const std::vector<CompositionReport>& reports) {
  std::ostringstream os;
  os << "method,total,small,regular,large,ratio_large,corpus_large_prevalence,upsampling\n";
  for (const CompositionReport& r : reports) {
    os << r.method << ',' << r.total << ',' << r.by_category.at("small") << ',' << r.by_category.at("regular") << ','
       << r.by_category.at("large") << ',' << format_double(r.ratio_large) << ','
       << format_double(r.corpus_large_prevalence) << ',' << format_double(r.upsampling) << '\n';
  }
  return os.str();
}

std::string distribution_csv(const DistributionReport& r) {
  std::ostringstream os;
  os << "bin_lo,bin_hi";
  for (const DistributionSummary& s : r.sets) os << ',' << s.name;
  os << '\n';
  for (std::size_t i = 0; i + 1 < r.bin_edges.size(); ++i) {
    os << format_double(r.bin_edges[i]) << ',' << format_double(r.bin_edges[i + 1]);
    for (const DistributionSummary& s : r.sets) os << ',' << s.histogram[i];
    os << '\n';
  }
  return os.str();
}

}  // namespace rem
