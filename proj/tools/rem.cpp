#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rem/corpus.hpp"
#include "rem/embed.hpp"
#include "rem/error.hpp"
#include "rem/flow.hpp"
#include "rem/io.hpp"
#include "rem/mine.hpp"
#include "rem/report.hpp"
#include "rem/score.hpp"

namespace fs = std::filesystem;
using namespace rem;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  bool quiet = false;
};

void note(const Globals& g, const std::string& msg) {
  if (!g.quiet) std::cerr << msg << '\n';
}

Json load_config(const Globals& g) { return g.config.empty() ? Json::object() : read_json_file(g.config); }

std::string track_of(const std::string& instance) {
  const auto at = instance.rfind('@');
  if (at == std::string::npos) throw ValidationError("'" + instance + "' is not a track@frame key");
  return instance.substr(0, at);
}

// gen-corpus

struct GenArgs {
  std::string spec;
  std::string out;
};

void run_gen_corpus(const Globals& g, const GenArgs& a) {
  const std::string path = a.spec.empty() ? g.config : a.spec;
  if (path.empty()) throw ValidationError("gen-corpus needs --spec");
  CorpusSpec spec = read_json_file(path).get<CorpusSpec>();
  if (g.seed) spec.seed = *g.seed;
  Corpus corpus = generate_corpus(spec);
  write_corpus(corpus, a.out);
  write_tracks(fs::path(a.out) / "auto_tracks.jsonl",
               simulate_autolabels(corpus.gt_tracks, spec.autolabel, spec.seed ^ 0xa5a5a5a5a5a5a5a5ULL));
  note(g, "corpus: " + std::to_string(corpus.gt_tracks.size()) + " tracks, " +
              std::to_string(corpus.detections.size()) + " detections -> " + a.out);
}

// embed

struct EmbedArgs {
  std::string corpus;
  int k = 10;
  std::string pca_out;
  std::string pca_in;
  std::string out;
  std::string source = "detections";
};

void run_embed(const Globals& g, const EmbedArgs& a) {
  const Corpus corpus = read_corpus(a.corpus);
  std::vector<PoolTarget> targets;
  if (a.source == "detections") {
    std::vector<DetectionRecord> main;
    for (const DetectionRecord& d : corpus.detections) {
      if (d.model_id == 0) main.push_back(d);
    }
    targets = detection_targets(main);
  } else if (a.source == "gt") {
    targets = ground_truth_targets(corpus.gt_tracks);
  } else {
    throw ValidationError("--source must be 'detections' or 'gt'");
  }
  const Eigen::MatrixXd roi = pool_targets(corpus, targets);
  PcaTransform pca;
  if (!a.pca_in.empty()) {
    pca = pca_from_json(read_json_file(a.pca_in));
  } else {
    pca = fit_pca(roi, a.k);
    if (a.pca_out.empty()) throw ValidationError("embed needs --pca-out when fitting");
    write_json_file(a.pca_out, pca_to_json(pca));
  }
  const Eigen::MatrixXd normed = apply_embedding(pca, roi);
  std::vector<EmbeddingRecord> records(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    records[i].detection_id = targets[i].id;
    records[i].x_roi = roi.row(static_cast<Eigen::Index>(i)).transpose();
    records[i].x_norm = normed.row(static_cast<Eigen::Index>(i)).transpose();
  }
  write_embeddings_csv(a.out, records);
  note(g, "embedded " + std::to_string(records.size()) + " boxes (k=" + std::to_string(pca.output_dim()) + ")");
}

// train-flow

struct TrainArgs {
  std::string embeddings;
  std::string out;
  std::string pca;
};

void run_train_flow(const Globals& g, const TrainArgs& a) {
  FlowConfig config = flow_config_from_json(load_config(g));
  if (g.seed) config.seed = *g.seed;
  const Eigen::MatrixXd data = embedding_matrix(read_embeddings_csv(a.embeddings));
  FlowModel model = train_flow(data, config, [&](int epoch, double nll) {
    note(g, "epoch " + std::to_string(epoch + 1) + "/" + std::to_string(config.epochs) + " nll " + format_double(nll));
  });
  model.pca_reference = a.pca;
  write_json_file(a.out, flow_to_json(model));
}

// score

struct ScoreArgs {
  std::string method;
  std::string corpus;
  std::string detections;
  std::string model;
  std::string embeddings;
  std::string out;
};

void run_score(const Globals& g, const ScoreArgs& a) {
  const ScoreMethod method = parse_score_method(a.method);
  const Json cfg = load_config(g);
  ScoringInputs in;
  in.hard_filter.point_threshold = cfg.value("point_threshold", in.hard_filter.point_threshold);
  in.hard_filter.range_threshold_m = cfg.value("range_threshold_m", in.hard_filter.range_threshold_m);
  if (!(in.hard_filter.range_threshold_m > 0.0) || in.hard_filter.point_threshold < 0) {
    throw ValidationError("invalid hard filter thresholds");
  }
  in.ensemble_size = cfg.value("ensemble_size", 0);
  in.association_iou = cfg.value("association_iou", in.association_iou);
  in.seed = g.seed.value_or(cfg.value("seed", std::uint64_t{0}));

  const fs::path det_path = !a.detections.empty() ? fs::path(a.detections) : fs::path(a.corpus) / "detections.jsonl";
  const std::vector<DetectionRecord> detections = read_detections(det_path);
  in.detections = &detections;

  std::map<std::string, double> data;
  if (method == ScoreMethod::d_rem || method == ScoreMethod::md_rem) {
    if (a.model.empty() || a.embeddings.empty()) throw ValidationError(a.method + " needs --model and --embeddings");
    const FlowModel model = flow_from_json(read_json_file(a.model));
    const auto records = read_embeddings_csv(a.embeddings);
    const Eigen::VectorXd r = rareness_data(model, embedding_matrix(records));
    for (std::size_t i = 0; i < records.size(); ++i) data[records[i].detection_id] = r(static_cast<Eigen::Index>(i));
    in.data_rareness = &data;
  }
  std::vector<Json> rows;
  for (const ScoreRecord& s : score_detections(method, in)) rows.push_back(s);
  write_jsonl(a.out, rows);
  note(g, "scored " + std::to_string(rows.size()) + " detections with " + a.method);
}

// mine

struct MineArgs {
  std::string scores;
  std::size_t budget = 0;
  std::string corpus;
  std::string detections;
  std::string gt;
  std::string autolabels;
  std::string out;
};

void run_mine(const Globals& g, const MineArgs& a) {
  auto pick = [&](const std::string& given, const char* file) {
    if (!given.empty()) return fs::path(given);
    if (a.corpus.empty()) throw ValidationError(std::string("mine needs --corpus or an explicit path for ") + file);
    return fs::path(a.corpus) / file;
  };
  const auto detections = read_detections(pick(a.detections, "detections.jsonl"));
  const auto gt = read_tracks(pick(a.gt, "gt_tracks.jsonl"));
  const auto autolabels = read_tracks(pick(a.autolabels, "auto_tracks.jsonl"));
  std::vector<ScoreRecord> scores;
  for (const Json& j : read_jsonl(a.scores)) scores.push_back(j.get<ScoreRecord>());
  const MiningResult result = mine_tracks(rank_detections(scores, detections), make_simulated_oracle(gt), autolabels, a.budget);
  write_json_file(a.out, mining_result_to_json(result));
  note(g, "mined " + std::to_string(result.human_tracks.size()) + "/" + std::to_string(a.budget) + " tracks, merged " +
              std::to_string(result.merged.size()));
}

// report

struct ReportArgs {
  std::string kind;
  std::string corpus;
  std::string model;
  std::string embeddings;
  std::vector<std::string> mined;
  std::vector<std::string> sets;
  std::string out;
  std::string csv;
};

void run_report(const Globals& g, const ReportArgs& a) {
  const Json cfg = load_config(g);
  Json report;
  std::string csv;
  if (a.kind == "recall" || a.kind == "tracks") {
    if (a.model.empty() || a.embeddings.empty() || a.corpus.empty()) {
      throw ValidationError("report " + a.kind + " needs --corpus, --model and --embeddings (ground-truth source)");
    }
    const FlowModel model = flow_from_json(read_json_file(a.model));
    const auto records = read_embeddings_csv(a.embeddings);
    const Eigen::VectorXd lp = log_prob(model, embedding_matrix(records));
    if (a.kind == "tracks") {
      std::vector<std::pair<std::string, double>> per_frame;
      for (std::size_t i = 0; i < records.size(); ++i) {
        per_frame.emplace_back(track_of(records[i].detection_id), lp(static_cast<Eigen::Index>(i)));
      }
      const auto ranked = rank_tracks(per_frame);
      report = Json{{"kind", "tracks"}, {"tracks", to_json(ranked)}};
      std::ostringstream os;
      os << "rank,track_id,frames,mean_log_prob,rareness\n";
      for (std::size_t i = 0; i < ranked.size(); ++i) {
        os << i << ',' << ranked[i].track_id << ',' << ranked[i].frames << ',' << format_double(ranked[i].mean_log_prob)
           << ',' << format_double(ranked[i].rareness) << '\n';
      }
      csv = os.str();
    } else {
      const Corpus corpus = read_corpus(a.corpus, false);
      std::map<std::string, PoolTarget> by_key;
      for (const PoolTarget& t : ground_truth_targets(corpus.gt_tracks)) by_key.emplace(t.id, t);
      std::vector<PoolTarget> boxes;
      std::vector<double> rareness;
      for (std::size_t i = 0; i < records.size(); ++i) {
        auto it = by_key.find(records[i].detection_id);
        if (it == by_key.end()) throw ValidationError("embedding '" + records[i].detection_id + "' is not a ground-truth box");
        boxes.push_back(it->second);
        rareness.push_back(-lp(static_cast<Eigen::Index>(i)));
      }
      RecallMatchConfig match;
      match.iou_threshold = cfg.value("iou_threshold", match.iou_threshold);
      match.score_threshold = cfg.value("score_threshold", match.score_threshold);
      const auto matched = match_ground_truth(boxes, corpus.detections, match);
      const auto bins = percentile_recall(rareness, matched, cfg.value("bins", 50));
      report = to_json(bins);
      report["kind"] = "recall";
      report["iou_threshold"] = match.iou_threshold;
      report["score_threshold"] = match.score_threshold;
      csv = recall_csv(bins);
    }
  } else if (a.kind == "composition") {
    if (a.corpus.empty() || a.mined.empty()) throw ValidationError("report composition needs --corpus and --mined");
    const auto gt = read_tracks(fs::path(a.corpus) / "gt_tracks.jsonl");
    std::vector<CompositionReport> reports;
    Json methods = Json::array();
    for (const std::string& spec : a.mined) {
      const auto eq = spec.find('=');
      const std::string name = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
      const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
      const MiningResult mined = mining_result_from_json(read_json_file(path));
      reports.push_back(composition(name, mined.human_tracks, gt));
      methods.push_back(to_json(reports.back()));
    }
    report = Json{{"kind", "composition"}, {"methods", methods}};
    csv = composition_csv(reports);
  } else if (a.kind == "distribution") {
    if (a.model.empty() || a.sets.empty()) throw ValidationError("report distribution needs --model and --set");
    const FlowModel model = flow_from_json(read_json_file(a.model));
    std::vector<std::pair<std::string, std::vector<double>>> sets;
    for (const std::string& spec : a.sets) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects name=embeddings.csv");
      const Eigen::VectorXd lp = log_prob(model, embedding_matrix(read_embeddings_csv(spec.substr(eq + 1))));
      sets.emplace_back(spec.substr(0, eq), std::vector<double>(lp.data(), lp.data() + lp.size()));
    }
    const auto dist = distribution_report(sets);
    report = to_json(dist);
    report["kind"] = "distribution";
    csv = distribution_csv(dist);
  } else {
    throw ValidationError("unknown report kind '" + a.kind + "'");
  }
  write_json_file(a.out, report);
  if (!a.csv.empty()) write_text_file(a.csv, csv);
  note(g, "wrote " + a.kind + " report to " + a.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rare example mining for 3D detection corpora"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed overriding any seed in the inputs");
  app.add_option("--config", g.config, "JSON configuration for the subcommand");
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Generate a synthetic corpus");
  gen_cmd->add_option("--spec", gen.spec, "Corpus spec JSON");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  EmbedArgs emb;
  auto* emb_cmd = app.add_subcommand("embed", "ROI-pool boxes and project with PCA");
  emb_cmd->add_option("--corpus", emb.corpus)->required();
  emb_cmd->add_option("--k", emb.k, "PCA dimension")->check(CLI::PositiveNumber);
  emb_cmd->add_option("--pca-out", emb.pca_out, "Write the fitted PCA here");
  emb_cmd->add_option("--pca", emb.pca_in, "Apply an existing PCA instead of fitting");
  emb_cmd->add_option("--source", emb.source, "detections (model 0) or gt");
  emb_cmd->add_option("--out", emb.out)->required();

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train-flow", "Train the density model");
  tr_cmd->add_option("--embeddings", tr.embeddings)->required();
  tr_cmd->add_option("--pca", tr.pca, "PCA file recorded in the model");
  tr_cmd->add_option("--out", tr.out)->required();

  ScoreArgs sc;
  auto* sc_cmd = app.add_subcommand("score", "Score detections");
  sc_cmd->add_option("--method", sc.method, "d-rem|m-rem|md-rem|ensemble|random|predict-size")->required();
  sc_cmd->add_option("--corpus", sc.corpus);
  sc_cmd->add_option("--detections", sc.detections);
  sc_cmd->add_option("--model", sc.model);
  sc_cmd->add_option("--embeddings", sc.embeddings);
  sc_cmd->add_option("--out", sc.out)->required();

  MineArgs mn;
  auto* mn_cmd = app.add_subcommand("mine", "Budgeted track mining");
  mn_cmd->add_option("--scores", mn.scores)->required();
  mn_cmd->add_option("--budget", mn.budget)->required();
  mn_cmd->add_option("--corpus", mn.corpus);
  mn_cmd->add_option("--detections", mn.detections);
  mn_cmd->add_option("--gt", mn.gt);
  mn_cmd->add_option("--auto", mn.autolabels);
  mn_cmd->add_option("--out", mn.out)->required();

  ReportArgs rp;
  auto* rp_cmd = app.add_subcommand("report", "Analysis reports");
  rp_cmd->add_option("--kind", rp.kind, "recall|composition|distribution|tracks")->required();
  rp_cmd->add_option("--corpus", rp.corpus);
  rp_cmd->add_option("--model", rp.model);
  rp_cmd->add_option("--embeddings", rp.embeddings);
  rp_cmd->add_option("--mined", rp.mined, "[name=]mined.json, repeatable");
  rp_cmd->add_option("--set", rp.sets, "name=embeddings.csv, repeatable");
  rp_cmd->add_option("--out", rp.out)->required();
  rp_cmd->add_option("--csv", rp.csv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (seed_opt->count() > 0) g.seed = seed;

  try {
    if (*gen_cmd) run_gen_corpus(g, gen);
    else if (*emb_cmd) run_embed(g, emb);
    else if (*tr_cmd) run_train_flow(g, tr);
    else if (*sc_cmd) run_score(g, sc);
    else if (*mn_cmd) run_mine(g, mn);
    else if (*rp_cmd) run_report(g, rp);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed input: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
