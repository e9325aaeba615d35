#ifndef GMU_EVALUATOR_HPP
#define GMU_EVALUATOR_HPP

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmu/common.hpp"
#include "gmu/grounding.hpp"
#include "gmu/model.hpp"

namespace gmu {

inline constexpr std::array<double, 4> kRecallThresholds{0.1, 0.3, 0.5, 0.7};

struct GroundingPrediction {
  Interval interval;
  double score = 0.0;
};

/// Fusion map: elementwise product of the moment and clip maps, invalid cells
/// forced to zero.
inline Mat fuse(const Mat& s_m, const Mat& s_c) {
  if (s_m.rows() != s_c.rows() || s_m.cols() != s_c.cols() || s_m.rows() != s_m.cols())
    throw DataError("fuse: score maps must be square and same shape");
  Mat out = s_m.cwiseProduct(s_c);
  for (long i = 0; i < out.rows(); ++i)
    for (long j = 0; j < i; ++j) out(i, j) = 0.0;
  return out;
}

/// Greedy top-k over valid cells with interval NMS: candidates in descending
/// score order (ties broken by smaller i, then smaller j) are kept unless
/// their IoU with an already kept interval reaches nms_iou.
inline std::vector<GroundingPrediction> top_k(const Mat& map, const MomentGrid& grid, int k,
                                              double nms_iou) {
  if (map.rows() != grid.T || map.cols() != grid.T) throw DataError("top_k: map/grid mismatch");
  if (k < 1) throw UsageError("top_k: k must be >= 1");
  if (!(nms_iou > 0.0)) throw UsageError("top_k: nms_iou must be positive");
  struct Cell {
    double score;
    int i, j;
  };
  std::vector<Cell> cells;
  cells.reserve(static_cast<size_t>(grid.T) * (grid.T + 1) / 2);
  for (int i = 0; i < grid.T; ++i)
    for (int j = i; j < grid.T; ++j) cells.push_back({map(i, j), i, j});
  std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  std::vector<GroundingPrediction> out;
  for (const Cell& c : cells) {
    if (static_cast<int>(out.size()) == k) break;
    const Interval cand = cell_to_interval(grid, c.i, c.j);
    bool suppressed = false;
    for (const GroundingPrediction& kept : out)
      if (interval_iou(cand, kept.interval) >= nms_iou) {
        suppressed = true;
        break;
      }
    if (!suppressed) out.push_back({cand, c.score});
  }
  return out;
}

struct EvalReport {
  std::map<double, double> recall_at;  // IoU threshold -> R@1
  double miou = 0.0;
  int n_samples = 0;
};

/// R@1 at the standard thresholds plus mean IoU of the top-1 predictions.
inline EvalReport evaluate(const std::vector<Interval>& predictions,
                           const std::vector<Interval>& gts) {
  if (predictions.size() != gts.size())
    throw DataError("evaluate: prediction/ground-truth count mismatch");
  if (predictions.empty()) throw DataError("evaluate: empty input");
  EvalReport rep;
  rep.n_samples = static_cast<int>(predictions.size());
  double iou_sum = 0.0;
  std::map<double, int> hits;
  for (double th : kRecallThresholds) hits[th] = 0;
  for (size_t s = 0; s < predictions.size(); ++s) {
    const double iou = interval_iou(predictions[s], gts[s]);
    iou_sum += iou;
    for (double th : kRecallThresholds)
      if (iou >= th) ++hits[th];
  }
  for (double th : kRecallThresholds)
    rep.recall_at[th] = static_cast<double>(hits[th]) / rep.n_samples;
  rep.miou = iou_sum / rep.n_samples;
  return rep;
}

inline nlohmann::json to_json(const EvalReport& rep) {
  nlohmann::json r1 = nlohmann::json::object();
  for (const auto& [th, v] : rep.recall_at) {
    char key[16];
    std::snprintf(key, sizeof(key), "%.1f", th);
    r1[key] = v;
  }
  return nlohmann::json{{"n_samples", rep.n_samples}, {"mIoU", rep.miou}, {"R@1", r1}};
}

/// Writes the three score maps as <prefix>_moment.csv, _clip.csv, _fused.csv:
/// T rows of T comma-separated 6-decimal values, invalid cells as 0.
inline void dump_maps(const Mat& s_m, const Mat& s_c, const Mat& s_f,
                      const std::string& path_prefix) {
  auto write_one = [](const Mat& m, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write score map " + path);
    char buf[32];
    for (long i = 0; i < m.rows(); ++i) {
      for (long j = 0; j < m.cols(); ++j) {
        const double v = j >= i ? m(i, j) : 0.0;
        std::snprintf(buf, sizeof(buf), "%.6f", v);
        out << buf;
        if (j + 1 < m.cols()) out << ",";
      }
      out << "\n";
    }
  };
  write_one(s_m, path_prefix + "_moment.csv");
  write_one(s_c, path_prefix + "_clip.csv");
  write_one(s_f, path_prefix + "_fused.csv");
}

// ---------------------------------------------------------------------------
// Dataset-level evaluation

struct LevelReports {
  EvalReport moment;
  EvalReport clip;
  EvalReport fusion;
};

/// Runs inference over every sample and scores the top-1 interval of each of
/// the three maps against its ground truth.
inline LevelReports evaluate_dataset(GroundingModel& model, const io::Dataset& ds,
                                     double nms_iou = 0.5) {
  std::vector<Interval> gts, pred_m, pred_c, pred_f;
  for (const io::PreparedSample& s : ds.samples) {
    const GroundingModel::SampleMaps maps = model.infer(s);
    gts.push_back(s.gt);
    pred_m.push_back(top_k(maps.s_m, s.grid, 1, nms_iou).at(0).interval);
    pred_c.push_back(top_k(maps.s_c, s.grid, 1, nms_iou).at(0).interval);
    pred_f.push_back(top_k(maps.s_f, s.grid, 1, nms_iou).at(0).interval);
  }
  return LevelReports{evaluate(pred_m, gts), evaluate(pred_c, gts), evaluate(pred_f, gts)};
}

inline nlohmann::json to_json(const LevelReports& reports) {
  return nlohmann::json{{"moment", to_json(reports.moment)},
                        {"clip", to_json(reports.clip)},
                        {"fusion", to_json(reports.fusion)}};
}

}  // namespace gmu

#endif  // GMU_EVALUATOR_HPP
