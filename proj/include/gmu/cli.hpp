#ifndef GMU_CLI_HPP
#define GMU_CLI_HPP

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gmu/config.hpp"
#include "gmu/engine.hpp"
#include "gmu/evaluator.hpp"
#include "gmu/io.hpp"
#include "gmu/model.hpp"

namespace gmu::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace detail {

inline TrainConfig profile_base(const std::string& profile) {
  if (profile == "paper") return TrainConfig::paper_profile();
  if (profile == "desk") return TrainConfig::desk_profile();
  throw UsageError("unknown profile '" + profile + "' (expected paper or desk)");
}

/// Registers every TrainConfig field as a flag named exactly like its config
/// key, bound to `c`; help text shows the stock TrainConfig defaults.
struct ConfigFlags {
  TrainConfig values;  // receives parsed flag values
  std::vector<std::string> keys;

  void attach(CLI::App* cmd) {
    auto opt_i = [&](const char* k, int& v, const char* d) {
      cmd->add_option(std::string("--") + k, v, d)->capture_default_str();
      keys.push_back(k);
    };
    auto opt_d = [&](const char* k, double& v, const char* d) {
      cmd->add_option(std::string("--") + k, v, d)->capture_default_str();
      keys.push_back(k);
    };
    auto opt_b = [&](const char* k, bool& v, const char* d) {
      cmd->add_option(std::string("--") + k, v, d)->capture_default_str();
      keys.push_back(k);
    };
    opt_i("T", values.T, "moments per video");
    opt_i("d", values.d, "model feature dimension");
    opt_i("d_i", values.d_i, "ingested feature dimension");
    opt_i("n_l", values.n_l, "local-attention ResBlock layers");
    opt_i("n_g", values.n_g, "non-local attention blocks");
    opt_i("N", values.N, "samples per proposal");
    opt_i("kappa_e", values.kappa_e, "EarlyConv layers");
    opt_i("kappa_l", values.kappa_l, "LateConv layers");
    opt_i("B", values.B, "batch size");
    opt_d("lr", values.lr, "learning rate");
    opt_d("lr_decay", values.lr_decay, "learning-rate decay factor");
    opt_i("lr_decay_every", values.lr_decay_every, "epochs between decays (0: ceil(epochs/3))");
    opt_i("epochs", values.epochs, "training epochs");
    opt_i("upsilon", values.upsilon, "epoch gating the BCE weight to 0.001 (-1 disables)");
    opt_d("o_min", values.o_min, "scaled-IoU lower threshold");
    opt_d("o_max", values.o_max, "scaled-IoU upper threshold");
    opt_d("theta", values.theta, "boundary-label positive threshold");
    cmd->add_option("--seed", values.seed, "RNG seed")->capture_default_str();
    keys.push_back("seed");
    opt_i("L_max", values.L_max, "maximum query length");
    opt_b("share_encoders", values.share_encoders, "share encoders between levels");
    opt_b("generation_guided_moment", values.generation_guided_moment,
          "generation-guided moment level");
    opt_b("generation_guided_clip", values.generation_guided_clip,
          "generation-guided clip level");
    opt_b("enable_mlm", values.enable_mlm, "masked-token auxiliary task");
    opt_b("enable_tag", values.enable_tag, "temporal attention guidance loss");
  }

  /// JSON object holding only the flags the user actually passed.
  json explicit_json(CLI::App* cmd) const {
    const json all = to_json(values);
    json out = json::object();
    for (const std::string& k : keys)
      if (cmd->count("--" + k) > 0) out[k] = all.at(k);
    return out;
  }
};

/// profile defaults < --config file < explicit flags.
inline TrainConfig resolve_config(const std::string& profile, const std::string& config_path,
                                  const ConfigFlags& flags, CLI::App* cmd) {
  TrainConfig cfg = profile_base(profile);
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw DataError("cannot open config file " + config_path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw UsageError(std::string("config file: ") + e.what());
    }
    merge_json(cfg, j);
  }
  merge_json(cfg, flags.explicit_json(cmd));
  validate(cfg);
  return cfg;
}

inline io::Vocabulary build_vocabulary(const std::vector<io::AnnotationRecord>& records) {
  io::Vocabulary vocab;
  for (const io::AnnotationRecord& r : records)
    for (const std::string& tok : io::tokenize(r.query)) vocab.add(tok);
  return vocab;
}

struct SampleSource {
  io::PreparedSample sample;
};

/// Resolves the (video, query) pair shared by predict and dump-maps.
inline io::PreparedSample prepare_single(const std::string& features_file,
                                         const std::string& features_dir,
                                         const std::string& video_id, const std::string& query,
                                         const io::Vocabulary& vocab, const TrainConfig& cfg) {
  fs::path fpath;
  if (!features_file.empty()) {
    fpath = features_file;
  } else {
    if (features_dir.empty() || video_id.empty())
      throw UsageError("pass --features, or --features-dir together with --video");
    fpath = fs::path(features_dir) / (video_id + ".gmuf");
  }
  const io::VideoFeatureSequence seq = io::load_features(fpath);
  io::PreparedSample s;
  s.video_id = seq.video_id;
  s.grid = MomentGrid(cfg.T, seq.duration);
  s.features = io::resample_moments(seq.features, cfg.T);
  Rng rng(0);
  s.token_ids = io::tokenize_and_mask(query, vocab, rng, /*training=*/false, cfg.L_max).token_ids;
  return s;
}

// ---- command bodies --------------------------------------------------------

struct SynthArgs {
  std::string out;
  int videos = 64;
  int t_raw = 16;
  int d_i = 16;
  int actions = 8;
  double noise = 0.05;
  uint64_t seed = 1;
};

inline int run_synth(const SynthArgs& a) {
  const io::SyntheticDataset ds = io::make_synthetic_dataset(
      a.out, a.videos, a.t_raw, a.d_i, a.actions, a.noise, a.seed);
  json out = {{"features_dir", ds.features_dir.string()},
              {"annotations", ds.annotations_path.string()},
              {"vocab", ds.vocab_path.string()},
              {"n_videos", ds.n_videos}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

struct DataArgs {
  std::string features_dir;
  std::string annotations;
  std::string format = "json_lines";
  std::string vocab;
};

inline io::Dataset load_data(const DataArgs& a, const io::Vocabulary& vocab,
                             const TrainConfig& cfg) {
  return io::load_dataset(a.features_dir, a.annotations, io::parse_annotation_format(a.format),
                          vocab, cfg.T, cfg.o_min, cfg.o_max, cfg.L_max);
}

inline int run_train(const DataArgs& data, const TrainConfig& cfg, const std::string& out_path,
                     const std::string& log_path) {
  io::Vocabulary vocab;
  if (!data.vocab.empty()) {
    vocab = io::Vocabulary::load(data.vocab);
  } else {
    vocab = build_vocabulary(
        io::load_annotations(data.annotations, io::parse_annotation_format(data.format)).records);
    const fs::path vpath = fs::path(out_path).string() + ".vocab.json";
    vocab.save(vpath);
    log_info("built vocabulary (" + std::to_string(vocab.size()) + " tokens) -> " + vpath.string());
  }
  const io::Dataset ds = load_data(data, vocab, cfg);
  GroundingModel model(cfg, vocab.size());
  AdamOptimizer opt;
  TrainOptions topts;
  if (!log_path.empty()) topts.log_csv_path = log_path;
  const TrainSummary summary = train(model, ds, opt, topts);
  save_checkpoint(out_path, model, opt, cfg.epochs);
  json out = {{"checkpoint", out_path},
              {"epochs", summary.epochs_run},
              {"steps", summary.steps_run},
              {"skipped_batches", summary.skipped_batches},
              {"final_total_loss", summary.final_total_loss}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

inline int run_eval(const DataArgs& data, const std::string& checkpoint_path,
                    const std::optional<TrainConfig>& expected_cfg, double nms_iou,
                    const std::string& out_path) {
  if (data.vocab.empty()) throw UsageError("eval requires --vocab");
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
  if (expected_cfg &&
      config_hash(*expected_cfg) != config_hash(ckpt.model->config()))
    throw DataError("checkpoint config hash mismatch: checkpoint was trained with a different "
                    "configuration than the one supplied");
  const io::Vocabulary vocab = io::Vocabulary::load(data.vocab);
  if (vocab.size() != ckpt.model->vocab_size())
    throw DataError("vocabulary size " + std::to_string(vocab.size()) +
                    " does not match checkpoint (" + std::to_string(ckpt.model->vocab_size()) + ")");
  const io::Dataset ds = load_data(data, vocab, ckpt.model->config());
  const LevelReports reports = evaluate_dataset(*ckpt.model, ds, nms_iou);
  const std::string text = to_json(reports).dump(2);
  std::cout << text << "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write report to " + out_path);
    out << text << "\n";
  }
  return 0;
}

struct SingleArgs {
  std::string checkpoint;
  std::string vocab;
  std::string features_file;
  std::string features_dir;
  std::string video;
  std::string query;
  std::string level = "fusion";
  int k = 1;
  double nms_iou = 0.5;
  std::string out;  // dump-maps prefix
};

inline int run_predict(const SingleArgs& a) {
  if (a.vocab.empty()) throw UsageError("predict requires --vocab");
  if (a.query.empty()) throw UsageError("predict requires --query");
  LoadedCheckpoint ckpt = load_checkpoint(a.checkpoint);
  const io::Vocabulary vocab = io::Vocabulary::load(a.vocab);
  if (vocab.size() != ckpt.model->vocab_size())
    throw DataError("vocabulary does not match checkpoint");
  const io::PreparedSample sample = prepare_single(a.features_file, a.features_dir, a.video,
                                                   a.query, vocab, ckpt.model->config());
  const GroundingModel::SampleMaps maps = ckpt.model->infer(sample);
  const Mat* map = &maps.s_f;
  if (a.level == "moment") map = &maps.s_m;
  else if (a.level == "clip") map = &maps.s_c;
  else if (a.level != "fusion") throw UsageError("unknown level '" + a.level + "'");
  const auto preds = top_k(*map, sample.grid, a.k, a.nms_iou);
  json plist = json::array();
  for (const GroundingPrediction& p : preds)
    plist.push_back({{"start", p.interval.start}, {"end", p.interval.end}, {"score", p.score}});
  json out = {{"video_id", sample.video_id},
              {"query", a.query},
              {"level", a.level},
              {"predictions", plist}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

inline int run_dump_maps(const SingleArgs& a) {
  if (a.vocab.empty()) throw UsageError("dump-maps requires --vocab");
  if (a.query.empty()) throw UsageError("dump-maps requires --query");
  if (a.out.empty()) throw UsageError("dump-maps requires --out (path prefix)");
  LoadedCheckpoint ckpt = load_checkpoint(a.checkpoint);
  const io::Vocabulary vocab = io::Vocabulary::load(a.vocab);
  if (vocab.size() != ckpt.model->vocab_size())
    throw DataError("vocabulary does not match checkpoint");
  const io::PreparedSample sample = prepare_single(a.features_file, a.features_dir, a.video,
                                                   a.query, vocab, ckpt.model->config());
  const GroundingModel::SampleMaps maps = ckpt.model->infer(sample);
  dump_maps(maps.s_m, maps.s_c, maps.s_f, a.out);
  json out = {{"moment", a.out + "_moment.csv"},
              {"clip", a.out + "_clip.csv"},
              {"fused", a.out + "_fused.csv"}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace detail

/// Entry point shared by the binary and the tests. argv excludes the program
/// name. Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
inline int run(const std::vector<std::string>& argv) {
  CLI::App app{"Temporal video grounding: two-level score-map training, evaluation, and export"};
  app.require_subcommand(1);

  // synth ---------------------------------------------------------------
  detail::SynthArgs synth;
  CLI::App* c_synth = app.add_subcommand("synth", "generate a synthetic planted-segment dataset");
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--videos", synth.videos, "number of videos")->capture_default_str();
  c_synth->add_option("--t-raw", synth.t_raw, "raw moments (= seconds) per video")
      ->capture_default_str();
  c_synth->add_option("--d-i", synth.d_i, "feature dimension")->capture_default_str();
  c_synth->add_option("--actions", synth.actions, "distinct actions")->capture_default_str();
  c_synth->add_option("--noise", synth.noise, "feature noise sigma")->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "RNG seed")->capture_default_str();

  // train ---------------------------------------------------------------
  detail::DataArgs train_data;
  detail::ConfigFlags train_flags;
  std::string train_profile = "desk", train_config_path, train_out = "model.gmuc", train_log;
  CLI::App* c_train = app.add_subcommand("train", "train a model on a dataset");
  c_train->add_option("--features-dir", train_data.features_dir, "directory of .gmuf files")
      ->required();
  c_train->add_option("--annotations", train_data.annotations, "annotations file")->required();
  c_train->add_option("--format", train_data.format, "charades_lines or json_lines")
      ->capture_default_str();
  c_train->add_option("--vocab", train_data.vocab, "vocabulary JSON (built from queries if absent)");
  c_train->add_option("--out", train_out, "checkpoint output path")->capture_default_str();
  c_train->add_option("--log", train_log, "training-loss CSV path");
  c_train->add_option("--profile", train_profile, "base profile: paper or desk")
      ->capture_default_str();
  c_train->add_option("--config", train_config_path, "config JSON (merges under explicit flags)");
  train_flags.attach(c_train);

  // eval ----------------------------------------------------------------
  detail::DataArgs eval_data;
  detail::ConfigFlags eval_flags;
  std::string eval_profile, eval_config_path, eval_checkpoint, eval_out;
  double eval_nms = 0.5;
  CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  c_eval->add_option("--checkpoint", eval_checkpoint, "checkpoint path")->required();
  c_eval->add_option("--features-dir", eval_data.features_dir, "directory of .gmuf files")
      ->required();
  c_eval->add_option("--annotations", eval_data.annotations, "annotations file")->required();
  c_eval->add_option("--format", eval_data.format, "charades_lines or json_lines")
      ->capture_default_str();
  c_eval->add_option("--vocab", eval_data.vocab, "vocabulary JSON")->required();
  c_eval->add_option("--nms-iou", eval_nms, "NMS IoU threshold")->capture_default_str();
  c_eval->add_option("--out", eval_out, "also write the report JSON here");
  c_eval->add_option("--profile", eval_profile, "expected profile (hash-checked)");
  c_eval->add_option("--config", eval_config_path, "expected config JSON (hash-checked)");
  eval_flags.attach(c_eval);

  // predict ----------------------------------------------------------------
  detail::SingleArgs pred;
  CLI::App* c_pred = app.add_subcommand("predict", "top-k intervals for one (video, query) pair");
  c_pred->add_option("--checkpoint", pred.checkpoint, "checkpoint path")->required();
  c_pred->add_option("--vocab", pred.vocab, "vocabulary JSON")->required();
  c_pred->add_option("--features", pred.features_file, "single .gmuf feature file");
  c_pred->add_option("--features-dir", pred.features_dir, "feature directory (with --video)");
  c_pred->add_option("--video", pred.video, "video id inside --features-dir");
  c_pred->add_option("--query", pred.query, "text query")->required();
  c_pred->add_option("--level", pred.level, "moment, clip, or fusion")->capture_default_str();
  c_pred->add_option("--k", pred.k, "number of intervals")->capture_default_str();
  c_pred->add_option("--nms-iou", pred.nms_iou, "NMS IoU threshold")->capture_default_str();

  // dump-maps ----------------------------------------------------------------
  detail::SingleArgs dump;
  CLI::App* c_dump = app.add_subcommand("dump-maps", "export score maps of one sample as CSV");
  c_dump->add_option("--checkpoint", dump.checkpoint, "checkpoint path")->required();
  c_dump->add_option("--vocab", dump.vocab, "vocabulary JSON")->required();
  c_dump->add_option("--features", dump.features_file, "single .gmuf feature file");
  c_dump->add_option("--features-dir", dump.features_dir, "feature directory (with --video)");
  c_dump->add_option("--video", dump.video, "video id inside --features-dir");
  c_dump->add_option("--query", dump.query, "text query")->required();
  c_dump->add_option("--out", dump.out, "output path prefix")->required();

  std::vector<std::string> args = argv;
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (c_synth->parsed()) return detail::run_synth(synth);
    if (c_train->parsed()) {
      const TrainConfig cfg =
          detail::resolve_config(train_profile, train_config_path, train_flags, c_train);
      return detail::run_train(train_data, cfg, train_out, train_log);
    }
    if (c_eval->parsed()) {
      std::optional<TrainConfig> expected;
      if (!eval_profile.empty() || !eval_config_path.empty() ||
          !eval_flags.explicit_json(c_eval).empty())
        expected = detail::resolve_config(eval_profile.empty() ? "paper" : eval_profile,
                                          eval_config_path, eval_flags, c_eval);
      return detail::run_eval(eval_data, eval_checkpoint, expected, eval_nms, eval_out);
    }
    if (c_pred->parsed()) return detail::run_predict(pred);
    if (c_dump->parsed()) return detail::run_dump_maps(dump);
    throw UsageError("no command given");
  } catch (const UsageError& e) {
    log_error(e.what());
    return 1;
  } catch (const DataError& e) {
    log_error(e.what());
    return 2;
  } catch (const NumericError& e) {
    log_error(e.what());
    return 3;
  } catch (const std::exception& e) {
    log_error(std::string("unexpected error: ") + e.what());
    return 3;
  }
}

}  // namespace gmu::cli

#endif  // GMU_CLI_HPP
