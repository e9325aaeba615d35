#ifndef GMU_GROUNDING_HPP
#define GMU_GROUNDING_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gmu/common.hpp"

namespace gmu {

/// Uniform temporal grid: T moments tiling a video of `duration` seconds.
/// Moment i (0-indexed) covers [i*seconds_per_moment(), (i+1)*seconds_per_moment()].
struct MomentGrid {
  int T = 0;
  double duration = 0.0;

  MomentGrid() = default;
  MomentGrid(int t, double d) : T(t), duration(d) {
    if (t < 2) throw DataError("MomentGrid: T must be >= 2, got " + std::to_string(t));
    if (!(d > 0.0)) throw DataError("MomentGrid: duration must be > 0");
  }

  double seconds_per_moment() const { return duration / T; }
  double moment_start(int i) const { return i * seconds_per_moment(); }
  double moment_end(int i) const { return (i + 1) * seconds_per_moment(); }
  double moment_center(int i) const { return (i + 0.5) * seconds_per_moment(); }
};

/// Closed interval in seconds, 0 <= start <= end.
struct Interval {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
};

struct BoundaryLabels {
  Vec l_start;  // length T, entries in [0,1]
  Vec l_end;    // length T, entries in [0,1]
};

struct ProposalLabelMap {
  Mat y;                         // T x T, zero on invalid cells
  std::vector<uint8_t> valid;    // row-major T*T, 1 iff j >= i
};

struct TagLabels {
  std::vector<uint8_t> w_hat;  // length T, binary
};

/// Row-major index of cell (i, j) in a T x T map.
inline int cell_index(int T, int i, int j) { return i * T + j; }

/// Validity mask for a T x T proposal map: cell (i, j) is valid iff j >= i.
inline std::vector<uint8_t> valid_mask(int T) {
  std::vector<uint8_t> m(static_cast<size_t>(T) * T, 0);
  for (int i = 0; i < T; ++i)
    for (int j = i; j < T; ++j) m[cell_index(T, i, j)] = 1;
  return m;
}

/// IoU of two intervals. A zero-length union counts as IoU 1 for identical
/// point pairs and 0 otherwise, keeping the identity case continuous.
inline double interval_iou(const Interval& a, const Interval& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = a.length() + b.length() - inter;
  if (uni <= 0.0) return (a.start == b.start && a.end == b.end) ? 1.0 : 0.0;
  return inter / uni;
}

/// Interval covered by proposal cell (i, j): moments i..j inclusive.
inline Interval cell_to_interval(const MomentGrid& grid, int i, int j) {
  if (i < 0 || j < i || j >= grid.T)
    throw DataError("cell_to_interval: invalid cell (" + std::to_string(i) + "," +
                    std::to_string(j) + ") for T=" + std::to_string(grid.T));
  return Interval{grid.moment_start(i), grid.moment_end(j)};
}

/// Soft start/end boundary labels. Each boundary timestamp is expanded into a
/// window 1.5*D_m wide on each side; the label of moment i is the overlap of
/// the moment with the (video-clamped) window divided by the moment length,
/// so exact full containment yields 1.0.
inline BoundaryLabels boundary_labels(const MomentGrid& grid, const Interval& gt) {
  const double dm = grid.seconds_per_moment();
  if (gt.end > grid.duration + dm)
    throw DataError("boundary_labels: gt.end " + std::to_string(gt.end) +
                    " exceeds duration " + std::to_string(grid.duration) + " by more than one moment");
  const double ts = std::clamp(gt.start, 0.0, grid.duration);
  const double te = std::clamp(gt.end, 0.0, grid.duration);

  auto window_labels = [&](double t) {
    Vec l = Vec::Zero(grid.T);
    const double lo = std::max(0.0, t - 1.5 * dm);
    const double hi = std::min(grid.duration, t + 1.5 * dm);
    for (int i = 0; i < grid.T; ++i) {
      const double inter =
          std::max(0.0, std::min(grid.moment_end(i), hi) - std::max(grid.moment_start(i), lo));
      l[i] = inter / dm;
    }
    return l;
  };
  return BoundaryLabels{window_labels(ts), window_labels(te)};
}

/// Scaled-IoU labels for every valid proposal cell: raw IoU of the cell's
/// interval with gt, remapped linearly through (o_min, o_max) to [0,1].
inline ProposalLabelMap proposal_label_map(const MomentGrid& grid, const Interval& gt,
                                           double o_min, double o_max) {
  if (!(0.0 <= o_min && o_min < o_max && o_max <= 1.0))
    throw DataError("proposal_label_map: need 0 <= o_min < o_max <= 1");
  ProposalLabelMap out;
  out.y = Mat::Zero(grid.T, grid.T);
  out.valid = valid_mask(grid.T);
  for (int i = 0; i < grid.T; ++i) {
    for (int j = i; j < grid.T; ++j) {
      const double o = interval_iou(cell_to_interval(grid, i, j), gt);
      double y = 0.0;
      if (o >= o_max) {
        y = 1.0;
      } else if (o > o_min) {
        y = (o - o_min) / (o_max - o_min);
      }
      out.y(i, j) = y;
    }
  }
  return out;
}

/// Binary per-moment labels: 1 iff the moment center lies inside gt. If no
/// center qualifies (gt narrower than one moment), the single moment with
/// maximal overlap is marked so the TAG denominator stays positive.
inline TagLabels tag_labels(const MomentGrid& grid, const Interval& gt) {
  TagLabels out;
  out.w_hat.assign(grid.T, 0);
  bool any = false;
  for (int i = 0; i < grid.T; ++i) {
    const double c = grid.moment_center(i);
    if (c >= gt.start && c <= gt.end) {
      out.w_hat[i] = 1;
      any = true;
    }
  }
  if (!any) {
    int best = 0;
    double best_overlap = -1.0;
    for (int i = 0; i < grid.T; ++i) {
      const double inter =
          std::max(0.0, std::min(grid.moment_end(i), gt.end) - std::max(grid.moment_start(i), gt.start));
      if (inter > best_overlap) {
        best_overlap = inter;
        best = i;
      }
    }
    out.w_hat[best] = 1;
  }
  return out;
}

}  // namespace gmu

#endif  // GMU_GROUNDING_HPP
