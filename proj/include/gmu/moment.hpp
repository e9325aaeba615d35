#ifndef GMU_MOMENT_HPP
#define GMU_MOMENT_HPP

#include <string>
#include <vector>

#include "gmu/autodiff.hpp"
#include "gmu/common.hpp"
#include "gmu/grounding.hpp"
#include "gmu/params.hpp"

namespace gmu {

/// Moment-level predictor parameters: n_l conv1x1+BN ResBlock layers, n_g
/// non-local blocks, the attentive-pooling generator with its start/end/mask
/// heads, the shared similarity scorer, and the MLM vocabulary head.
/// `generation_guided` false swaps the similarity scorer for direct
/// per-moment boundary heads on f_o.
inline void register_moment_params(ParamStore& store, const std::string& prefix, int d, int n_l,
                                   int n_g, int vocab_size, bool generation_guided,
                                   bool enable_mlm, Rng& rng) {
  for (int l = 0; l < n_l; ++l) {
    const std::string p = prefix + "local" + std::to_string(l) + "_";
    store.create(p + "w", uniform_init(d, d, d, rng));
    store.create(p + "b", Mat::Zero(1, d));
    store.create(p + "gamma", Mat::Ones(1, d));
    store.create(p + "beta", Mat::Zero(1, d));
    store.create(p + "rm", Mat::Zero(1, d), /*trainable=*/false);
    store.create(p + "rv", Mat::Ones(1, d), /*trainable=*/false);
  }
  for (int g = 0; g < n_g; ++g) {
    const std::string p = prefix + "global" + std::to_string(g) + "_";
    store.create(p + "wq", uniform_init(d, d, d, rng));
    store.create(p + "wk", uniform_init(d, d, d, rng));
    store.create(p + "wv", uniform_init(d, d, d, rng));
  }
  store.create(prefix + "gen_ap_w", uniform_init(d, 1, d, rng));
  store.create(prefix + "gen_ap_b", Mat::Zero(1, 1));
  if (generation_guided) {
    for (const char* head : {"start", "end"}) {
      store.create(prefix + "gen_" + std::string(head) + "_w", uniform_init(d, d, d, rng));
      store.create(prefix + "gen_" + std::string(head) + "_b", Mat::Zero(1, d));
    }
    store.create(prefix + "sim_wb", uniform_init(d, d, d, rng));
    store.create(prefix + "sim_wa", uniform_init(d, 1, d, rng));
    store.create(prefix + "sim_ba", Mat::Zero(1, 1));
  } else {
    for (const char* head : {"start", "end"}) {
      store.create(prefix + "head_" + std::string(head) + "_w", uniform_init(d, 1, d, rng));
      store.create(prefix + "head_" + std::string(head) + "_b", Mat::Zero(1, 1));
    }
  }
  if (enable_mlm) {
    store.create(prefix + "gen_mask_w", uniform_init(d, d, d, rng));
    store.create(prefix + "gen_mask_b", Mat::Zero(1, d));
    store.create(prefix + "vocab_w", uniform_init(d, vocab_size, d, rng));
    store.create(prefix + "vocab_b", Mat::Zero(1, vocab_size));
  }
}

/// Semantic fusion: each visual row is gated by its sample's sentence feature
/// (Hadamard). v_f stacked ((B*T) x d), s_rows (B x d).
inline ad::Var fuse_semantic_tape(ad::Tape& t, ad::Var v_f, ad::Var s_rows, int T) {
  return t.mul_block_rowvec(v_f, s_rows, T);
}

struct BatchNormMode {
  bool training = false;
  ParamStore* mutable_store = nullptr;  // running-stat updates when training
  double momentum = 0.1;
  double eps = 1e-5;
};

/// ResBlock local attention: n_l rounds of f <- ReLU(f + BasicBlock(f)),
/// BasicBlock = temporal conv1x1 -> batch norm -> ReLU. Works on the stacked
/// (B*T) x d matrix; batch statistics couple the whole batch. A single-sample
/// batch (and evaluation) uses running statistics.
inline ad::Var local_attention_tape(ad::Tape& t, TapeParams& P, const std::string& prefix,
                                    ad::Var f, int B, int n_l, const BatchNormMode& bn) {
  for (int l = 0; l < n_l; ++l) {
    const std::string p = prefix + "local" + std::to_string(l) + "_";
    ad::Var z = t.add_rowvec(t.matmul(f, P[p + "w"]), P[p + "b"]);
    ad::Var normed;
    if (bn.training && B >= 2) {
      auto r = t.batchnorm_train(z, P[p + "gamma"], P[p + "beta"], bn.eps);
      normed = r.y;
      if (bn.mutable_store != nullptr) {
        Mat& rm = bn.mutable_store->at(p + "rm");
        Mat& rv = bn.mutable_store->at(p + "rv");
        rm = (1.0 - bn.momentum) * rm + bn.momentum * Mat(r.batch_mean);
        const long R = t.value(z).rows();
        const double unbias = R > 1 ? double(R) / double(R - 1) : 1.0;
        rv = (1.0 - bn.momentum) * rv + bn.momentum * unbias * Mat(r.batch_var);
      }
    } else {
      const Mat& rm = P.store().at(p + "rm");
      const Mat& rv = P.store().at(p + "rv");
      normed = t.batchnorm_eval(z, P[p + "gamma"], P[p + "beta"], rm.row(0), rv.row(0), bn.eps);
    }
    f = t.relu(t.add(f, t.relu(normed)));
  }
  return f;
}

/// Non-local global attention, n_g blocks of
/// f <- f + softmax(Q K^T / sqrt(d)) V with Q = f Wq, K = f Wk, V = f Wv.
/// Attention runs within each sample's T rows.
inline ad::Var global_attention_tape(ad::Tape& t, TapeParams& P, const std::string& prefix,
                                     ad::Var f, int B, int T, int n_g) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(t.value(f).cols()));
  for (int g = 0; g < n_g; ++g) {
    const std::string p = prefix + "global" + std::to_string(g) + "_";
    std::vector<ad::Var> outs;
    outs.reserve(B);
    for (int b = 0; b < B; ++b) {
      ad::Var fb = t.slice_rows(f, static_cast<long>(b) * T, T);
      ad::Var q = t.matmul(fb, P[p + "wq"]);
      ad::Var k = t.matmul(fb, P[p + "wk"]);
      ad::Var v = t.matmul(fb, P[p + "wv"]);
      ad::Var attn = t.softmax_rows(t.scale(t.matmul(q, t.transpose(k)), inv_sqrt_d));
      outs.push_back(t.add(fb, t.matmul(attn, v)));
    }
    f = B == 1 ? outs[0] : t.concat_rows(outs);
  }
  return f;
}

struct GeneratorVars {
  ad::Var w_a;      // T x 1, simplex over moments
  ad::Var f_a;      // 1 x d, attentive pooled feature
  ad::Var f_start;  // 1 x d (only when generation-guided)
  ad::Var f_end;    // 1 x d
  ad::Var s_mask;   // 1 x d (only when MLM enabled)
};

/// Attentive pooling over one sample's f_o (T x d) plus the generator heads.
inline GeneratorVars generate_tape(ad::Tape& t, TapeParams& P, const std::string& prefix,
                                   ad::Var f_o, bool generation_guided, bool enable_mlm) {
  const int T = static_cast<int>(t.value(f_o).rows());
  GeneratorVars out;
  ad::Var scores = t.add_rowvec(t.matmul(f_o, P[prefix + "gen_ap_w"]), P[prefix + "gen_ap_b"]);
  out.w_a = t.softmax_col_blocks(scores, T);
  out.f_a = t.matmul(t.transpose(out.w_a), f_o);
  if (generation_guided) {
    out.f_start = t.add(t.matmul(out.f_a, P[prefix + "gen_start_w"]), P[prefix + "gen_start_b"]);
    out.f_end = t.add(t.matmul(out.f_a, P[prefix + "gen_end_w"]), P[prefix + "gen_end_b"]);
  }
  if (enable_mlm)
    out.s_mask = t.add(t.matmul(out.f_a, P[prefix + "gen_mask_w"]), P[prefix + "gen_mask_b"]);
  return out;
}

/// Per-moment boundary probability: cosine-style normalized Hadamard of each
/// visual row with the generated query feature, reduced by the shared scorer
/// (W_b then W_a with bias) and squashed. Zero visual rows score
/// sigmoid(bias); a zero query feature is an error.
inline ad::Var boundary_scores_tape(ad::Tape& t, TapeParams& P, const std::string& prefix,
                                    ad::Var v_f, ad::Var f_query) {
  if (t.value(f_query).norm() == 0.0) throw NumericError("boundary_scores: zero query feature");
  ad::Var v_hat = t.l2_normalize_rows(v_f, 1e-8);
  ad::Var f_hat = t.l2_normalize_rows(f_query, 0.0);
  ad::Var u = t.mul_rowvec(v_hat, f_hat);
  ad::Var h = t.matmul(u, P[prefix + "sim_wb"]);
  return t.sigmoid(t.add_rowvec(t.matmul(h, P[prefix + "sim_wa"]), P[prefix + "sim_ba"]));
}

/// Biaffine multiplication: S_m[i,j] = sqrt(s_start[i]*s_end[j]) on cells
/// with j >= i, 0 elsewhere. Inputs are T x 1 column vectors.
inline ad::Var biaffine_map_tape(ad::Tape& t, ad::Var s_start, ad::Var s_end) {
  const int T = static_cast<int>(t.value(s_start).rows());
  ad::Var outer = t.matmul(s_start, t.transpose(s_end));
  Mat mask = Mat::Zero(T, T);
  for (int i = 0; i < T; ++i)
    for (int j = i; j < T; ++j) mask(i, j) = 1.0;
  return t.mul(t.sqrt_(outer), t.constant(mask));
}

/// MLM head: affine map of the generated mask feature to vocabulary logits.
inline ad::Var mask_logits_tape(ad::Tape& t, TapeParams& P, const std::string& prefix,
                                ad::Var s_mask) {
  return t.add(t.matmul(s_mask, P[prefix + "vocab_w"]), P[prefix + "vocab_b"]);
}

// ---------------------------------------------------------------------------
// Value-level wrappers

inline Mat fuse_semantic(const Mat& v_f, const Vec& s) {
  if (v_f.cols() != s.size()) throw DataError("fuse_semantic: dimension mismatch");
  ad::Tape t;
  return t.value(fuse_semantic_tape(t, t.constant(v_f), t.constant(s.transpose()),
                                    static_cast<int>(v_f.rows())));
}

inline Mat biaffine_map(const Vec& s_start, const Vec& s_end) {
  if (s_start.size() != s_end.size()) throw DataError("biaffine_map: length mismatch");
  ad::Tape t;
  return t.value(biaffine_map_tape(t, t.constant(s_start), t.constant(s_end)));
}

}  // namespace gmu

#endif  // GMU_MOMENT_HPP
