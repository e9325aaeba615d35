#ifndef GMU_ENGINE_HPP
#define GMU_ENGINE_HPP

#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gmu/config.hpp"
#include "gmu/io.hpp"
#include "gmu/model.hpp"
#include "gmu/objectives.hpp"
#include "gmu/params.hpp"

namespace gmu {

namespace fs = std::filesystem;

/// Stacks the selected samples into one BatchInput. Training mode masks one
/// uniformly chosen token per query; the mask RNG stream is derived from
/// (seed, epoch, dataset index) so the batch stream is a pure function of its
/// inputs.
inline BatchInput assemble_batch(const io::Dataset& ds, const std::vector<size_t>& idx,
                                 const TrainConfig& cfg, bool training, int epoch) {
  const int B = static_cast<int>(idx.size());
  const int T = cfg.T;
  BatchInput in;
  in.B = B;
  in.features.resize(static_cast<long>(B) * T, ds.d_i);
  in.l_start.resize(static_cast<long>(B) * T);
  in.l_end.resize(static_cast<long>(B) * T);
  in.y.resize(static_cast<long>(B) * T * T);
  in.valid.resize(static_cast<long>(B) * T * T);
  for (int b = 0; b < B; ++b) {
    const io::PreparedSample& s = ds.samples[idx[b]];
    in.sample_ids.push_back(s.video_id);
    in.features.middleRows(static_cast<long>(b) * T, T) = s.features;
    in.l_start.segment(static_cast<long>(b) * T, T) = s.boundary.l_start;
    in.l_end.segment(static_cast<long>(b) * T, T) = s.boundary.l_end;
    Vec wh(T);
    for (int i = 0; i < T; ++i) wh[i] = s.tag.w_hat[i];
    in.w_hat.push_back(std::move(wh));
    for (int i = 0; i < T; ++i) {
      for (int j = 0; j < T; ++j) {
        const long row = static_cast<long>(b) * T * T + static_cast<long>(i) * T + j;
        in.y[row] = s.proposal.y(i, j);
        in.valid[row] = s.proposal.valid[cell_index(T, i, j)] ? 1.0 : 0.0;
      }
    }
    std::vector<int> toks = s.token_ids;
    int target = -1;
    if (training && !toks.empty()) {
      Rng rng(splitmix64(cfg.seed ^ (0x6d61736bULL + static_cast<uint64_t>(epoch) * 0x100000001b3ULL +
                                     static_cast<uint64_t>(idx[b]))));
      const int pos = static_cast<int>(rng.next_int(0, static_cast<int64_t>(toks.size()) - 1));
      target = toks[pos];
      toks[pos] = io::Vocabulary::kMask;
    }
    in.tokens.push_back(std::move(toks));
    in.mask_targets.push_back(target);
  }
  return in;
}

// ---------------------------------------------------------------------------
// Checkpointing
//
// Versioned binary holding the canonical config, vocabulary size, epoch and
// optimizer step counters, and every parameter entry (Adam moments included)
// in registration order. save -> load -> save reproduces identical bytes.

namespace detail {

inline void put_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}
inline void put_u64(std::ostream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), 8);
}
inline void put_mat(std::ostream& out, const Mat& m) {
  put_u32(out, static_cast<uint32_t>(m.rows()));
  put_u32(out, static_cast<uint32_t>(m.cols()));
  for (long r = 0; r < m.rows(); ++r)
    for (long c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
}

inline uint32_t get_u32(std::istream& in, const char* what) {
  uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw DataError(std::string("checkpoint: truncated ") + what);
  return v;
}
inline uint64_t get_u64(std::istream& in, const char* what) {
  uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 8)) throw DataError(std::string("checkpoint: truncated ") + what);
  return v;
}
inline Mat get_mat(std::istream& in, const char* what) {
  const uint32_t rows = get_u32(in, what);
  const uint32_t cols = get_u32(in, what);
  Mat m(rows, cols);
  for (uint32_t r = 0; r < rows; ++r)
    for (uint32_t c = 0; c < cols; ++c) {
      double v = 0;
      if (!in.read(reinterpret_cast<char*>(&v), 8))
        throw DataError(std::string("checkpoint: truncated ") + what);
      m(r, c) = v;
    }
  return m;
}

}  // namespace detail

inline void save_checkpoint(const fs::path& path, const GroundingModel& model,
                            const AdamOptimizer& opt, int epochs_completed) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write("GMUC", 4);
  detail::put_u32(out, 1u);  // version
  detail::put_u64(out, config_hash(model.config()));
  const std::string cfg_json = canonical_config_string(model.config());
  detail::put_u32(out, static_cast<uint32_t>(cfg_json.size()));
  out.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));
  detail::put_u32(out, static_cast<uint32_t>(model.vocab_size()));
  detail::put_u32(out, static_cast<uint32_t>(epochs_completed));
  detail::put_u64(out, static_cast<uint64_t>(opt.step_count()));
  const auto& entries = model.params().entries();
  detail::put_u32(out, static_cast<uint32_t>(entries.size()));
  for (const ParamStore::Entry& e : entries) {
    detail::put_u32(out, static_cast<uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    const uint8_t tr = e.trainable ? 1 : 0;
    out.write(reinterpret_cast<const char*>(&tr), 1);
    detail::put_mat(out, e.value);
    if (e.trainable) {
      detail::put_mat(out, e.m);
      detail::put_mat(out, e.v);
    }
  }
  if (!out) throw DataError("write failed for checkpoint " + path.string());
}

struct LoadedCheckpoint {
  std::unique_ptr<GroundingModel> model;
  AdamOptimizer optimizer;
  int epochs_completed = 0;
};

inline LoadedCheckpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "GMUC", 4) != 0)
    throw DataError("checkpoint " + path.string() + ": bad magic");
  const uint32_t version = detail::get_u32(in, "version");
  if (version != 1u) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const uint64_t stored_hash = detail::get_u64(in, "config hash");
  const uint32_t json_len = detail::get_u32(in, "config length");
  std::string cfg_json(json_len, '\0');
  if (!in.read(cfg_json.data(), json_len)) throw DataError("checkpoint: truncated config");
  TrainConfig cfg;
  merge_json(cfg, nlohmann::json::parse(cfg_json));
  if (config_hash(cfg) != stored_hash)
    throw DataError("checkpoint: config hash mismatch (file corrupt or config schema drift)");
  const uint32_t vocab_size = detail::get_u32(in, "vocab size");
  const uint32_t epochs = detail::get_u32(in, "epoch counter");
  const uint64_t adam_step = detail::get_u64(in, "adam step");

  LoadedCheckpoint out;
  out.model = std::make_unique<GroundingModel>(cfg, static_cast<int>(vocab_size));
  out.optimizer.set_step_count(static_cast<int64_t>(adam_step));
  out.epochs_completed = static_cast<int>(epochs);

  const uint32_t n_params = detail::get_u32(in, "param count");
  auto& entries = out.model->params().entries();
  if (n_params != entries.size())
    throw DataError("checkpoint: parameter count mismatch (wiring differs)");
  for (ParamStore::Entry& e : entries) {
    const uint32_t name_len = detail::get_u32(in, "param name");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw DataError("checkpoint: truncated param name");
    if (name != e.name)
      throw DataError("checkpoint: parameter order mismatch at '" + name + "' (expected '" +
                      e.name + "')");
    uint8_t tr = 0;
    if (!in.read(reinterpret_cast<char*>(&tr), 1)) throw DataError("checkpoint: truncated flags");
    if ((tr != 0) != e.trainable) throw DataError("checkpoint: trainable flag mismatch for " + name);
    Mat v = detail::get_mat(in, "param value");
    if (v.rows() != e.value.rows() || v.cols() != e.value.cols())
      throw DataError("checkpoint: shape mismatch for " + name);
    e.value = std::move(v);
    if (e.trainable) {
      e.m = detail::get_mat(in, "adam m");
      e.v = detail::get_mat(in, "adam v");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainOptions {
  std::optional<std::string> log_csv_path;
  int log_every = 1;  // CSV row every k-th step
  std::function<void(int epoch)> on_epoch_end;  // e.g. progress probes
};

struct TrainSummary {
  int epochs_run = 0;
  int steps_run = 0;
  int skipped_batches = 0;  // degenerate boundary labels
  double final_total_loss = 0.0;
};

/// Full training: forward both levels, the four-term objective with the
/// epoch-gated BCE weight, Adam with the stepped learning-rate decay.
/// Deterministic in cfg.seed. The caller owns the optimizer so its state can
/// be checkpointed alongside the parameters.
inline TrainSummary train(GroundingModel& model, const io::Dataset& ds, AdamOptimizer& opt,
                          const TrainOptions& opts = {}) {
  const TrainConfig& cfg = model.config();
  if (ds.samples.empty()) throw DataError("train: empty dataset");
  if (ds.T != cfg.T) throw DataError("train: dataset grid does not match config T");
  if (ds.d_i != cfg.d_i) throw DataError("train: dataset feature dim does not match config d_i");

  std::unique_ptr<LossCsvWriter> log;
  if (opts.log_csv_path) log = std::make_unique<LossCsvWriter>(*opts.log_csv_path);

  TrainSummary summary;
  const int decay_every = cfg.effective_lr_decay_every();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr * std::pow(cfg.lr_decay, epoch / decay_every);
    const auto batches = io::make_batches(ds.samples.size(), cfg.B, cfg.seed, epoch);
    for (size_t step = 0; step < batches.size(); ++step) {
      BatchInput in = assemble_batch(ds, batches[step], cfg, /*training=*/true, epoch);
      std::string batch_desc = "epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                               "; batch videos:";
      for (const std::string& id : in.sample_ids) batch_desc += " " + id;

      LossBreakdown breakdown;
      try {
        ad::Tape t;
        TapeParams P(t, model.params());
        ForwardVars f = model.forward(t, P, in, /*training=*/true);

        ad::Var l_bl;
        try {
          l_bl = loss_bl_tape(t, f.s_start, f.s_end, in.l_start, in.l_end, cfg.theta);
        } catch (const DataError& e) {
          ++summary.skipped_batches;
          log_info(std::string("skipping degenerate batch at ") + batch_desc + ": " + e.what());
          continue;
        }
        const bool has_mlm = cfg.enable_mlm && !f.mask_targets.empty();
        ad::Var l_ce = has_mlm ? loss_ce_tape(t, f.mask_logits, f.mask_targets)
                               : t.constant(Mat::Zero(1, 1));
        ad::Var l_tag = cfg.enable_tag ? loss_tag_tape(t, f.w_a, in.w_hat)
                                       : t.constant(Mat::Zero(1, 1));
        ad::Var l_bce = loss_bce_tape(t, f.s_c, in.y, in.valid);

        breakdown = total_loss(t.value(l_bl)(0, 0), t.value(l_ce)(0, 0), t.value(l_tag)(0, 0),
                               t.value(l_bce)(0, 0), epoch, cfg.upsilon, has_mlm);
        if (!std::isfinite(breakdown.total))
          throw NumericError("non-finite loss");
        ad::Var total =
            t.add(t.add(l_bl, l_ce), t.add(l_tag, t.scale(l_bce, breakdown.bce_weight)));
        t.backward(total);
        opt.step(model.params(), P.collect_grads(), lr);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at " + batch_desc);
      }
      if (log && static_cast<int>(step) % opts.log_every == 0)
        log->row(epoch, static_cast<int>(step), breakdown);
      summary.final_total_loss = breakdown.total;
      ++summary.steps_run;
    }
    ++summary.epochs_run;
    if (opts.on_epoch_end) opts.on_epoch_end(epoch);
  }
  return summary;
}

}  // namespace gmu

#endif  // GMU_ENGINE_HPP
