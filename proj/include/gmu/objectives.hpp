#ifndef GMU_OBJECTIVES_HPP
#define GMU_OBJECTIVES_HPP

#include <fstream>
#include <string>
#include <vector>

#include "gmu/autodiff.hpp"
#include "gmu/common.hpp"
#include "gmu/params.hpp"

namespace gmu {

constexpr double kLogClamp = 1e-7;

struct LossBreakdown {
  double l_bl = 0.0;
  double l_ce = 0.0;
  double l_tag = 0.0;
  double l_bce = 0.0;
  double bce_weight = 1.0;
  double total = 0.0;
  bool has_mlm_samples = true;  // false when no masked sample was in the batch
};

// ---------------------------------------------------------------------------
// Tape-level losses (the training path); value-level wrappers follow.

namespace detail {

inline ad::Var log_clamped(ad::Tape& t, ad::Var x) {
  return t.log_(t.clamp(x, kLogClamp, 1.0 - kLogClamp));
}

}  // namespace detail

/// Weighted binary logistic regression over one boundary side. `s` is a
/// (N_b x 1) prediction column in (0,1); labels l_i are binarized by
/// b_i = 1[l_i > theta] and the two classes are reweighted to balance.
inline ad::Var wbl_loss_tape(ad::Tape& t, ad::Var s, const Vec& labels, double theta) {
  const long n = labels.size();
  if (t.value(s).rows() != n || t.value(s).cols() != 1)
    throw NumericError("wbl_loss: prediction/label shape mismatch");
  Vec b(n);
  for (long i = 0; i < n; ++i) b[i] = labels[i] > theta ? 1.0 : 0.0;
  const double pos = b.sum();
  if (pos == 0.0 || pos == static_cast<double>(n))
    throw DataError("wbl_loss: degenerate batch (all labels on one side); resample or skip");
  const double alpha_pos = static_cast<double>(n) / pos;
  const double alpha_neg = static_cast<double>(n) / (static_cast<double>(n) - pos);

  ad::Var log_p = detail::log_clamped(t, s);
  ad::Var one_minus = t.sub(t.constant(Mat::Ones(n, 1)), s);
  ad::Var log_q = detail::log_clamped(t, one_minus);
  ad::Var pos_term = t.sum(t.mul(log_p, t.constant(Mat(b))));
  ad::Var neg_term = t.sum(t.mul(log_q, t.constant(Mat((1.0 - b.array()).matrix()))));
  return t.scale(t.add(t.scale(pos_term, alpha_pos), t.scale(neg_term, alpha_neg)),
                 -1.0 / static_cast<double>(n));
}

/// Boundary location loss: weighted logistic loss on the start side plus the
/// end side (each side balances its own positives).
inline ad::Var loss_bl_tape(ad::Tape& t, ad::Var s_start, ad::Var s_end, const Vec& l_start,
                            const Vec& l_end, double theta) {
  return t.add(wbl_loss_tape(t, s_start, l_start, theta), wbl_loss_tape(t, s_end, l_end, theta));
}

/// Masked-token cross entropy: mean of -log softmax(logits)[target] over the
/// masked samples. Empty input is the caller's no-MLM case (constant 0).
inline ad::Var loss_ce_tape(ad::Tape& t, ad::Var logits, const std::vector<int>& targets) {
  if (targets.empty()) return t.constant(Mat::Zero(1, 1));
  const Mat& L = t.value(logits);
  if (L.rows() != static_cast<long>(targets.size()))
    throw NumericError("loss_ce: one target per logits row required");
  Mat hot = Mat::Zero(L.rows(), L.cols());
  for (long r = 0; r < L.rows(); ++r) {
    if (targets[r] < 0 || targets[r] >= L.cols()) throw NumericError("loss_ce: target out of range");
    hot(r, targets[r]) = -1.0 / static_cast<double>(L.rows());
  }
  ad::Var log_probs = t.log_(t.clamp(t.softmax_rows(logits), kLogClamp, 2.0));
  return t.sum(t.mul(log_probs, t.constant(hot)));
}

/// Temporal attention guidance: for each sample, cross entropy of the
/// attentive-pooling weights against the (normalized) binary ground-truth
/// moments, summed over the batch. w_a is (B*T x 1); w_hat rows align.
inline ad::Var loss_tag_tape(ad::Tape& t, ad::Var w_a, const std::vector<Vec>& w_hat) {
  const int B = static_cast<int>(w_hat.size());
  if (B == 0) throw NumericError("loss_tag: empty batch");
  const long T = w_hat[0].size();
  if (t.value(w_a).rows() != B * T || t.value(w_a).cols() != 1)
    throw NumericError("loss_tag: shape mismatch");
  Mat coeff(static_cast<long>(B) * T, 1);
  for (int b = 0; b < B; ++b) {
    const double denom = w_hat[b].sum();
    if (denom <= 0.0) throw DataError("loss_tag: sample with all-zero ground-truth moments");
    coeff.middleRows(static_cast<long>(b) * T, T) = -w_hat[b] / denom;
  }
  return t.sum(t.mul(t.log_(t.clamp(w_a, kLogClamp, 2.0)), t.constant(coeff)));
}

/// Dense BCE over valid proposal cells with scaled-IoU targets, averaged over
/// the valid-cell count. p is (B*T*T x 1); y and valid align row-wise.
inline ad::Var loss_bce_tape(ad::Tape& t, ad::Var p, const Vec& y, const Vec& valid) {
  const long n = y.size();
  if (t.value(p).rows() != n || valid.size() != n) throw NumericError("loss_bce: shape mismatch");
  const double n_valid = valid.sum();
  if (n_valid <= 0.0) throw NumericError("loss_bce: no valid cells");
  ad::Var log_p = detail::log_clamped(t, p);
  ad::Var log_q = detail::log_clamped(t, t.sub(t.constant(Mat::Ones(n, 1)), p));
  const Vec cy = (y.array() * valid.array()).matrix();
  const Vec cq = ((1.0 - y.array()) * valid.array()).matrix();
  ad::Var s = t.add(t.sum(t.mul(log_p, t.constant(Mat(cy)))),
                    t.sum(t.mul(log_q, t.constant(Mat(cq)))));
  return t.scale(s, -1.0 / n_valid);
}

// ---------------------------------------------------------------------------
// Value-level wrappers

inline double loss_bl(const Vec& s_start, const Vec& s_end, const Vec& l_start, const Vec& l_end,
                      double theta = 0.5) {
  ad::Tape t;
  return t.value(loss_bl_tape(t, t.constant(Mat(s_start)), t.constant(Mat(s_end)), l_start,
                              l_end, theta))(0, 0);
}

inline std::pair<double, bool> loss_ce(const Mat& logits, const std::vector<int>& targets) {
  if (targets.empty()) return {0.0, false};
  ad::Tape t;
  return {t.value(loss_ce_tape(t, t.constant(logits), targets))(0, 0), true};
}

inline double loss_tag(const std::vector<Vec>& w_a, const std::vector<Vec>& w_hat) {
  if (w_a.size() != w_hat.size()) throw NumericError("loss_tag: batch size mismatch");
  ad::Tape t;
  const long T = w_a.empty() ? 0 : w_a[0].size();
  Mat stacked(static_cast<long>(w_a.size()) * T, 1);
  for (size_t b = 0; b < w_a.size(); ++b) stacked.middleRows(b * T, T) = w_a[b];
  return t.value(loss_tag_tape(t, t.constant(stacked), w_hat))(0, 0);
}

inline double loss_bce(const Vec& p, const Vec& y, const Vec& valid) {
  ad::Tape t;
  return t.value(loss_bce_tape(t, t.constant(Mat(p)), y, valid))(0, 0);
}

/// Total objective with the epoch-gated BCE weight: weight 1.0 before epoch
/// upsilon, 0.001 from upsilon on; upsilon < 0 disables the gate.
inline LossBreakdown total_loss(double l_bl, double l_ce, double l_tag, double l_bce, int epoch,
                                int upsilon, bool has_mlm_samples = true) {
  LossBreakdown out;
  out.l_bl = l_bl;
  out.l_ce = l_ce;
  out.l_tag = l_tag;
  out.l_bce = l_bce;
  out.bce_weight = (upsilon >= 0 && epoch >= upsilon) ? 0.001 : 1.0;
  out.total = l_bl + l_ce + l_tag + out.bce_weight * l_bce;
  out.has_mlm_samples = has_mlm_samples;
  return out;
}

/// Appends loss-breakdown rows to the training log CSV.
class LossCsvWriter {
 public:
  explicit LossCsvWriter(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw DataError("cannot open training log " + path);
    out_ << "epoch,step,l_bl,l_ce,l_tag,l_bce,bce_weight,total\n";
  }

  void row(int epoch, int step, const LossBreakdown& l) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", epoch, step, l.l_bl,
                  l.l_ce, l.l_tag, l.l_bce, l.bce_weight, l.total);
    out_ << buf;
  }

 private:
  std::ofstream out_;
};

}  // namespace gmu

#endif  // GMU_OBJECTIVES_HPP
