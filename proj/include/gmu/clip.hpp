#ifndef GMU_CLIP_HPP
#define GMU_CLIP_HPP

#include <array>
#include <string>
#include <vector>

#include "gmu/autodiff.hpp"
#include "gmu/common.hpp"
#include "gmu/grounding.hpp"
#include "gmu/params.hpp"

namespace gmu {

/// Dense sampling weights W[n,i,j,t]: proposal (i,j) places N positions
/// uniformly on [i, j] in moment-index coordinates (midpoint for N = 1); each
/// position splits weight 1 between its two neighboring integer moments by
/// linear interpolation. Stored as the two taps per (n,i,j); a dense accessor
/// reconstructs W[n,i,j,t] on demand.
class SamplingWeights {
 public:
  struct Tap {
    int t = 0;
    double w = 0.0;
  };

  SamplingWeights(int T, int N) : T_(T), N_(N) {
    if (T < 2) throw DataError("SamplingWeights: T must be >= 2");
    if (N < 1) throw DataError("SamplingWeights: N must be >= 1");
    taps_.resize(static_cast<size_t>(T) * T * N);
    for (int i = 0; i < T; ++i) {
      for (int j = i; j < T; ++j) {
        for (int n = 0; n < N; ++n) {
          const double pos = N == 1 ? 0.5 * (i + j)
                                    : i + static_cast<double>(n) * (j - i) / (N - 1);
          const int lo = std::min(static_cast<int>(pos), T - 1);
          const double frac = pos - lo;
          auto& pair = taps_[tap_index(n, i, j)];
          pair[0] = Tap{lo, 1.0 - frac};
          pair[1] = Tap{std::min(lo + 1, T - 1), frac};
        }
      }
    }
  }

  int T() const { return T_; }
  int N() const { return N_; }
  bool is_valid(int i, int j) const { return j >= i; }

  /// Dense view W[n,i,j,t]; zero on invalid cells.
  double at(int n, int i, int j, int t) const {
    if (!is_valid(i, j)) return 0.0;
    double w = 0.0;
    for (const Tap& tap : taps_[tap_index(n, i, j)])
      if (tap.t == t) w += tap.w;
    return w;
  }

  const std::array<Tap, 2>& taps(int n, int i, int j) const { return taps_[tap_index(n, i, j)]; }

 private:
  size_t tap_index(int n, int i, int j) const {
    return (static_cast<size_t>(i) * T_ + j) * N_ + n;
  }

  int T_ = 0;
  int N_ = 0;
  std::vector<std::array<Tap, 2>> taps_;
};

inline SamplingWeights build_sampling_weights(int T, int N) { return SamplingWeights(T, N); }

/// DPGM: gather each proposal's N interpolated moment features and take the
/// elementwise max over the samples. v_f holds B stacked T x d blocks; the
/// result holds B stacked T*T x d proposal maps (row i*T+j), invalid cells 0.
/// `w` must outlive the tape (the backward pass reads its taps).
inline ad::Var dpgm_tape(ad::Tape& t, ad::Var v_f, const SamplingWeights& w, int B) {
  const Mat& V = t.value(v_f);
  const int T = w.T();
  const int N = w.N();
  const long d = V.cols();
  if (V.rows() != static_cast<long>(B) * T) throw NumericError("dpgm: v_f rows != B*T");

  const long cells = static_cast<long>(T) * T;
  Mat out = Mat::Zero(B * cells, d);
  // argmax over n for every (b, cell, channel); -1 marks invalid cells
  std::vector<int8_t> arg(static_cast<size_t>(B) * cells * d, -1);
  for (int b = 0; b < B; ++b) {
    const long vbase = static_cast<long>(b) * T;
    for (int i = 0; i < T; ++i) {
      for (int j = i; j < T; ++j) {
        const long row = b * cells + static_cast<long>(i) * T + j;
        for (long c = 0; c < d; ++c) {
          double best = -std::numeric_limits<double>::infinity();
          int best_n = 0;
          for (int n = 0; n < N; ++n) {
            const auto& taps = w.taps(n, i, j);
            const double s =
                taps[0].w * V(vbase + taps[0].t, c) + taps[1].w * V(vbase + taps[1].t, c);
            if (s > best) {
              best = s;
              best_n = n;
            }
          }
          out(row, c) = best;
          arg[static_cast<size_t>(row) * d + c] = static_cast<int8_t>(best_n);
        }
      }
    }
  }
  return t.node(std::move(out), {v_f}, [v_f, &w, B, T, d, cells, arg = std::move(arg)](
                                           ad::Tape& tp, ad::Var self) {
    const Mat& g = tp.grad(self);
    Mat gv = Mat::Zero(static_cast<long>(B) * T, d);
    for (int b = 0; b < B; ++b) {
      const long vbase = static_cast<long>(b) * T;
      for (int i = 0; i < T; ++i) {
        for (int j = i; j < T; ++j) {
          const long row = b * cells + static_cast<long>(i) * T + j;
          for (long c = 0; c < d; ++c) {
            const int n = arg[static_cast<size_t>(row) * d + c];
            if (n < 0) continue;
            const auto& taps = w.taps(n, i, j);
            gv(vbase + taps[0].t, c) += taps[0].w * g(row, c);
            gv(vbase + taps[1].t, c) += taps[1].w * g(row, c);
          }
        }
      }
    }
    tp.accumulate(v_f, gv);
  });
}

/// Value-level DPGM on a single sample (unit-test surface).
inline Mat dpgm(const SamplingWeights& w, const Mat& v_f) {
  ad::Tape t;
  return t.value(dpgm_tape(t, t.constant(v_f), w, 1));
}

// ---------------------------------------------------------------------------
// Convolution stacks
//
// EarlyConv: kappa_e kernel-5 layers over the T x T map; the first layer pads
// by 2*kappa_e so the kappa_e - 1 pad-free layers shrink the map back to
// T x T. LateConv: kappa_l - 1 kernel-5 layers with the same padding rule
// followed by a 1x1 layer onto a single channel. ReLU sits between layers;
// the final layer of each stack is linear.

inline int first_layer_padding(int kernel5_layers) { return 2 * kernel5_layers; }

inline void register_conv_stack(ParamStore& store, const std::string& prefix, int layers,
                                int kernel5_layers, int d_in, int d_out_last, Rng& rng) {
  for (int l = 0; l < layers; ++l) {
    const bool is_k5 = l < kernel5_layers;
    const int k = is_k5 ? 5 : 1;
    const int cout = (l == layers - 1) ? d_out_last : d_in;
    store.create(prefix + std::to_string(l) + "_w",
                 uniform_init(static_cast<long>(k) * k * d_in, cout, k * k * d_in, rng));
    store.create(prefix + std::to_string(l) + "_b", Mat::Zero(1, cout));
  }
}

/// Applies a registered stack to a (B*T*T) x C map; asserts the padding
/// schedule returns the map to T x T.
inline ad::Var conv_stack_tape(ad::Tape& t, TapeParams& P, const std::string& prefix, ad::Var x,
                               int B, int T, int layers, int kernel5_layers) {
  int h = T;
  for (int l = 0; l < layers; ++l) {
    const bool is_k5 = l < kernel5_layers;
    const int k = is_k5 ? 5 : 1;
    const int pad = (l == 0 && is_k5) ? first_layer_padding(kernel5_layers) : 0;
    x = t.conv2d(x, P[prefix + std::to_string(l) + "_w"], P[prefix + std::to_string(l) + "_b"],
                 B, h, h, k, pad);
    h = h + 2 * pad - k + 1;
    if (l + 1 < layers) x = t.relu(x);
  }
  if (h != T)
    throw NumericError("conv stack: padding schedule produced " + std::to_string(h) + " != T=" +
                       std::to_string(T));
  return x;
}

inline void register_clip_params(ParamStore& store, const std::string& prefix, int d, int kappa_e,
                                 int kappa_l, bool generation_guided, Rng& rng) {
  if (generation_guided)
    register_conv_stack(store, prefix + "early", kappa_e, kappa_e, d, d, rng);
  register_conv_stack(store, prefix + "late", kappa_l, kappa_l - 1, d, 1, rng);
}

/// Clip-level generator: EarlyConv over the proposal map, Hadamard with the
/// sentence feature, then a per-channel max over valid cells. m_v holds B
/// stacked T*T x d maps, s_rows is B x d; the result is B x d.
inline ad::Var clip_generator_tape(ad::Tape& t, TapeParams& P, const std::string& prefix,
                                   ad::Var m_v, ad::Var s_rows, int B, int T, int kappa_e) {
  ad::Var m_f = conv_stack_tape(t, P, prefix + "early", m_v, B, T, kappa_e, kappa_e);
  ad::Var fused = t.mul_block_rowvec(m_f, s_rows, T * T);
  return t.masked_block_max(fused, T * T, valid_mask(T));
}

/// Clip-level scores: Hadamard of the (short-cut) proposal map with the clip
/// query, LateConv to one channel, sigmoid, invalid cells forced to zero.
/// Returns (B*T*T) x 1.
inline ad::Var clip_scores_tape(ad::Tape& t, TapeParams& P, const std::string& prefix,
                                ad::Var m_v, ad::Var query_rows, int B, int T, int kappa_l) {
  ad::Var fused = t.mul_block_rowvec(m_v, query_rows, T * T);
  ad::Var pre = conv_stack_tape(t, P, prefix + "late", fused, B, T, kappa_l, kappa_l - 1);
  ad::Var s = t.sigmoid(pre);
  const std::vector<uint8_t> vm = valid_mask(T);
  Mat mask(static_cast<long>(B) * T * T, 1);
  for (int b = 0; b < B; ++b)
    for (int cidx = 0; cidx < T * T; ++cidx)
      mask(static_cast<long>(b) * T * T + cidx, 0) = vm[cidx] ? 1.0 : 0.0;
  return t.mul(s, t.constant(mask));
}

}  // namespace gmu

#endif  // GMU_CLIP_HPP
