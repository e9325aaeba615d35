#ifndef GMU_MODEL_HPP
#define GMU_MODEL_HPP

#include <string>
#include <vector>

#include "gmu/autodiff.hpp"
#include "gmu/clip.hpp"
#include "gmu/common.hpp"
#include "gmu/config.hpp"
#include "gmu/encoders.hpp"
#include "gmu/grounding.hpp"
#include "gmu/io.hpp"
#include "gmu/moment.hpp"
#include "gmu/params.hpp"

namespace gmu {

/// Constant inputs of one forward pass, stacked over the batch.
struct BatchInput {
  int B = 0;
  Mat features;                          // (B*T) x d_i
  std::vector<std::vector<int>> tokens;  // per sample, masked when training
  std::vector<int> mask_targets;         // per sample; -1 when unmasked
  Vec l_start, l_end;                    // (B*T)
  std::vector<Vec> w_hat;                // per sample, length T
  Vec y, valid;                          // (B*T*T), row-major cells i*T+j
  std::vector<std::string> sample_ids;   // diagnostics
};

struct ForwardVars {
  ad::Var s_start, s_end;  // (B*T) x 1
  ad::Var w_a;             // (B*T) x 1
  ad::Var mask_logits;     // M x |V| rows for the masked samples (invalid when M = 0)
  std::vector<int> mask_targets;  // row-aligned with mask_logits
  ad::Var s_c;             // (B*T*T) x 1
};

/// The assembled two-level grounding network. Construction registers every
/// parameter the configured wiring needs (and nothing else): flags change the
/// registered set, so a checkpoint pins its wiring.
class GroundingModel {
 public:
  GroundingModel(const TrainConfig& cfg, int vocab_size)
      : cfg_(cfg), vocab_size_(vocab_size), sampling_(cfg.T, cfg.N) {
    validate(cfg);
    if (vocab_size < 3) throw DataError("GroundingModel: vocabulary too small");
    Rng rng(splitmix64(cfg.seed ^ 0x1217b0d31ULL));
    if (cfg.share_encoders) {
      register_encoder_params(store_, "enc_", vocab_size, cfg.d, cfg.d_i, cfg.T, rng);
    } else {
      register_encoder_params(store_, "encm_", vocab_size, cfg.d, cfg.d_i, cfg.T, rng);
      register_encoder_params(store_, "encc_", vocab_size, cfg.d, cfg.d_i, cfg.T, rng);
    }
    register_moment_params(store_, "mom_", cfg.d, cfg.n_l, cfg.n_g, vocab_size,
                           cfg.generation_guided_moment, cfg.enable_mlm, rng);
    register_clip_params(store_, "clip_", cfg.d, cfg.kappa_e, cfg.kappa_l,
                         cfg.generation_guided_clip, rng);
  }

  const TrainConfig& config() const { return cfg_; }
  int vocab_size() const { return vocab_size_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const SamplingWeights& sampling_weights() const { return sampling_; }

  std::string moment_encoder_prefix() const { return cfg_.share_encoders ? "enc_" : "encm_"; }
  std::string clip_encoder_prefix() const { return cfg_.share_encoders ? "enc_" : "encc_"; }

  /// Builds the full two-level forward pass on `t`. Training mode uses batch
  /// statistics in the ResBlock normalization and updates the stored running
  /// estimates as a side effect.
  ForwardVars forward(ad::Tape& t, TapeParams& P, const BatchInput& in, bool training) {
    const int B = in.B;
    const int T = cfg_.T;
    if (in.features.rows() != static_cast<long>(B) * T || in.features.cols() != cfg_.d_i)
      throw DataError("forward: feature matrix is not (B*T) x d_i");
    if (static_cast<int>(in.tokens.size()) != B) throw DataError("forward: token list size != B");

    ad::Var v_o = t.constant(in.features);

    // ---- moment level -------------------------------------------------
    const std::string me = moment_encoder_prefix();
    std::vector<ad::Var> s_rows_m;
    s_rows_m.reserve(B);
    for (int b = 0; b < B; ++b) s_rows_m.push_back(encode_query_tape(t, P, me, in.tokens[b]));
    ad::Var s_m = B == 1 ? s_rows_m[0] : t.concat_rows(s_rows_m);
    ad::Var v_f_m = encode_visual_tape(t, P, me, v_o, B);

    ad::Var f_sa = fuse_semantic_tape(t, v_f_m, s_m, T);
    BatchNormMode bn;
    bn.training = training;
    bn.mutable_store = training ? &store_ : nullptr;
    ad::Var f_l = local_attention_tape(t, P, "mom_", f_sa, B, cfg_.n_l, bn);
    ad::Var f_o = global_attention_tape(t, P, "mom_", f_l, B, T, cfg_.n_g);

    ForwardVars out;
    std::vector<ad::Var> w_a_parts, start_parts, end_parts, logit_parts;
    for (int b = 0; b < B; ++b) {
      ad::Var f_o_b = t.slice_rows(f_o, static_cast<long>(b) * T, T);
      GeneratorVars gen =
          generate_tape(t, P, "mom_", f_o_b, cfg_.generation_guided_moment, cfg_.enable_mlm);
      w_a_parts.push_back(gen.w_a);
      if (cfg_.generation_guided_moment) {
        ad::Var v_f_b = t.slice_rows(v_f_m, static_cast<long>(b) * T, T);
        start_parts.push_back(boundary_scores_tape(t, P, "mom_", v_f_b, gen.f_start));
        end_parts.push_back(boundary_scores_tape(t, P, "mom_", v_f_b, gen.f_end));
      }
      if (cfg_.enable_mlm && in.mask_targets[b] >= 0) {
        logit_parts.push_back(mask_logits_tape(t, P, "mom_", gen.s_mask));
        out.mask_targets.push_back(in.mask_targets[b]);
      }
    }
    out.w_a = B == 1 ? w_a_parts[0] : t.concat_rows(w_a_parts);
    if (cfg_.generation_guided_moment) {
      out.s_start = B == 1 ? start_parts[0] : t.concat_rows(start_parts);
      out.s_end = B == 1 ? end_parts[0] : t.concat_rows(end_parts);
    } else {
      out.s_start =
          t.sigmoid(t.add_rowvec(t.matmul(f_o, P["mom_head_start_w"]), P["mom_head_start_b"]));
      out.s_end =
          t.sigmoid(t.add_rowvec(t.matmul(f_o, P["mom_head_end_w"]), P["mom_head_end_b"]));
    }
    if (!logit_parts.empty())
      out.mask_logits = logit_parts.size() == 1 ? logit_parts[0] : t.concat_rows(logit_parts);

    // ---- clip level ----------------------------------------------------
    const std::string ce = clip_encoder_prefix();
    ad::Var s_c_rows = s_m;
    ad::Var v_f_c = v_f_m;
    if (!cfg_.share_encoders) {
      std::vector<ad::Var> rows;
      rows.reserve(B);
      for (int b = 0; b < B; ++b) rows.push_back(encode_query_tape(t, P, ce, in.tokens[b]));
      s_c_rows = B == 1 ? rows[0] : t.concat_rows(rows);
      v_f_c = encode_visual_tape(t, P, ce, v_o, B);
    }
    ad::Var m_v = dpgm_tape(t, v_f_c, sampling_, B);
    ad::Var query_rows = cfg_.generation_guided_clip
                             ? clip_generator_tape(t, P, "clip_", m_v, s_c_rows, B, T, cfg_.kappa_e)
                             : s_c_rows;
    out.s_c = clip_scores_tape(t, P, "clip_", m_v, query_rows, B, T, cfg_.kappa_l);
    return out;
  }

  /// Per-sample inference (evaluation mode): the three score maps.
  struct SampleMaps {
    Mat s_m;  // T x T biaffine moment map
    Mat s_c;  // T x T clip map
    Mat s_f;  // T x T fusion map
  };

  SampleMaps infer(const io::PreparedSample& sample) {
    const int T = cfg_.T;
    BatchInput in;
    in.B = 1;
    in.features = sample.features;
    in.tokens = {sample.token_ids};
    in.mask_targets = {-1};
    in.sample_ids = {sample.video_id};
    ad::Tape t;
    TapeParams P(t, store_);
    ForwardVars f = forward(t, P, in, /*training=*/false);
    ad::Var s_m_map = biaffine_map_tape(t, f.s_start, f.s_end);
    SampleMaps maps;
    maps.s_m = t.value(s_m_map);
    maps.s_c = Mat::Zero(T, T);
    const Mat& sc = t.value(f.s_c);
    for (int i = 0; i < T; ++i)
      for (int j = 0; j < T; ++j) maps.s_c(i, j) = sc(static_cast<long>(i) * T + j, 0);
    maps.s_f = maps.s_m.cwiseProduct(maps.s_c);
    return maps;
  }

 private:
  TrainConfig cfg_;
  int vocab_size_ = 0;
  ParamStore store_;
  SamplingWeights sampling_;
};

}  // namespace gmu

#endif  // GMU_MODEL_HPP
