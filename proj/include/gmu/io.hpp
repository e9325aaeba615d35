#ifndef GMU_IO_HPP
#define GMU_IO_HPP

#include <algorithm>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gmu/common.hpp"
#include "gmu/grounding.hpp"

namespace gmu::io {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kMask = 1;
  static constexpr int kUnk = 2;

  Vocabulary() {
    add("<pad>");
    add("<mask>");
    add("<unk>");
  }

  int add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    ids_.emplace(token, id);
    return id;
  }

  /// Id of a known token, or kUnk.
  int lookup(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const { return tokens_.at(id); }
  int size() const { return static_cast<int>(tokens_.size()); }

  void save(const fs::path& path) const {
    json obj = json::object();
    for (int i = 0; i < size(); ++i) obj[tokens_[i]] = i;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocabulary file " + path.string());
    out << obj.dump(2) << "\n";
  }

  static Vocabulary load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary file " + path.string());
    json obj;
    try {
      in >> obj;
    } catch (const json::exception& e) {
      throw DataError("vocabulary file " + path.string() + ": " + e.what());
    }
    std::vector<std::string> by_id(obj.size());
    for (auto& [tok, id] : obj.items()) {
      const int i = id.get<int>();
      if (i < 0 || i >= static_cast<int>(by_id.size()) || !by_id[i].empty())
        throw DataError("vocabulary ids must be dense and unique");
      by_id[i] = tok;
    }
    if (by_id.size() < 3 || by_id[0] != "<pad>" || by_id[1] != "<mask>" || by_id[2] != "<unk>")
      throw DataError("vocabulary must reserve <pad>=0, <mask>=1, <unk>=2");
    Vocabulary v;
    for (size_t i = 3; i < by_id.size(); ++i) v.add(by_id[i]);
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Lowercase, split on whitespace, strip trailing punctuation.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    while (!tok.empty() && std::ispunct(static_cast<unsigned char>(tok.back()))) tok.pop_back();
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Annotations

struct AnnotationRecord {
  std::string video_id;
  double duration = -1.0;  // < 0: unknown (charades lines carry no duration)
  Interval gt;
  std::string query;
};

struct AnnotationLoadResult {
  std::vector<AnnotationRecord> records;
  int dropped = 0;  // records with end <= start
};

enum class AnnotationFormat { kCharadesLines, kJsonLines };

inline AnnotationFormat parse_annotation_format(const std::string& s) {
  if (s == "charades_lines") return AnnotationFormat::kCharadesLines;
  if (s == "json_lines") return AnnotationFormat::kJsonLines;
  throw UsageError("unknown annotation format '" + s + "'");
}

namespace detail {

inline double parse_number(const std::string& s, int line_no, const char* what) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw DataError("annotations line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
  }
}

}  // namespace detail

/// Parses "<vid> <start> <end>##<sentence>" lines or JSON-lines objects with
/// keys video_id, duration, start, end, query. Inverted intervals are dropped
/// (counted); malformed lines raise DataError naming the line number.
inline AnnotationLoadResult load_annotations(const fs::path& path, AnnotationFormat format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotations file " + path.string());
  AnnotationLoadResult out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    AnnotationRecord rec;
    if (format == AnnotationFormat::kCharadesLines) {
      const size_t sep = line.find("##");
      if (sep == std::string::npos)
        throw DataError("annotations line " + std::to_string(line_no) + ": missing '##' separator");
      std::istringstream head(line.substr(0, sep));
      std::string vid, start_s, end_s, extra;
      if (!(head >> vid >> start_s >> end_s) || (head >> extra))
        throw DataError("annotations line " + std::to_string(line_no) +
                        ": expected '<vid> <start> <end>##<sentence>'");
      rec.video_id = vid;
      rec.gt.start = detail::parse_number(start_s, line_no, "start");
      rec.gt.end = detail::parse_number(end_s, line_no, "end");
      rec.query = line.substr(sep + 2);
    } else {
      json obj;
      try {
        obj = json::parse(line);
      } catch (const json::exception& e) {
        throw DataError("annotations line " + std::to_string(line_no) + ": " + e.what());
      }
      for (const char* key : {"video_id", "duration", "start", "end", "query"})
        if (!obj.contains(key))
          throw DataError("annotations line " + std::to_string(line_no) + ": missing key '" +
                          key + "'");
      try {
        rec.video_id = obj["video_id"].get<std::string>();
        rec.duration = obj["duration"].get<double>();
        rec.gt.start = obj["start"].get<double>();
        rec.gt.end = obj["end"].get<double>();
        rec.query = obj["query"].get<std::string>();
      } catch (const json::exception& e) {
        throw DataError("annotations line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    if (rec.gt.end <= rec.gt.start) {
      ++out.dropped;
      continue;
    }
    out.records.push_back(std::move(rec));
  }
  if (out.dropped > 0)
    log_info("dropped " + std::to_string(out.dropped) + " annotation(s) with end <= start");
  return out;
}

// ---------------------------------------------------------------------------
// GMUF feature files
//
// Layout: magic "GMUF", u32 version=1, u32 T_raw, u32 d_i, then T_raw*d_i
// little-endian float32, row-major. The format stores no duration; features
// are taken to be sampled at 1 Hz (duration = T_raw seconds) unless the
// annotation record supplies an explicit duration.

struct VideoFeatureSequence {
  std::string video_id;
  Mat features;  // T_raw x d_i
  double duration = 0.0;
};

inline void save_features(const fs::path& path, const Mat& features) {
  if (features.rows() < 1 || features.cols() < 1)
    throw DataError("save_features: empty matrix");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write feature file " + path.string());
  out.write("GMUF", 4);
  auto put_u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  put_u32(1u);
  put_u32(static_cast<uint32_t>(features.rows()));
  put_u32(static_cast<uint32_t>(features.cols()));
  for (long r = 0; r < features.rows(); ++r) {
    for (long c = 0; c < features.cols(); ++c) {
      const float f = static_cast<float>(features(r, c));
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (!out) throw DataError("write failed for " + path.string());
}

inline VideoFeatureSequence load_features(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "GMUF", 4) != 0)
    throw DataError("feature file " + path.string() + ": bad magic (not a GMUF file)");
  auto get_u32 = [&](const char* what) {
    uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4))
      throw DataError("feature file " + path.string() + ": truncated header (" + what + ")");
    return v;
  };
  const uint32_t version = get_u32("version");
  if (version != 1u)
    throw DataError("feature file " + path.string() + ": unsupported version " +
                    std::to_string(version));
  const uint32_t T_raw = get_u32("T_raw");
  const uint32_t d_i = get_u32("d_i");
  if (T_raw < 1 || d_i < 1)
    throw DataError("feature file " + path.string() + ": empty shape in header");
  VideoFeatureSequence seq;
  seq.video_id = path.stem().string();
  seq.features = Mat(T_raw, d_i);
  for (uint32_t r = 0; r < T_raw; ++r) {
    for (uint32_t c = 0; c < d_i; ++c) {
      float f = 0.0f;
      if (!in.read(reinterpret_cast<char*>(&f), 4))
        throw DataError("feature file " + path.string() + ": truncated payload");
      if (!std::isfinite(f))
        throw DataError("feature file " + path.string() + ": non-finite value at row " +
                        std::to_string(r));
      seq.features(r, c) = static_cast<double>(f);
    }
  }
  seq.duration = static_cast<double>(T_raw);
  return seq;
}

// ---------------------------------------------------------------------------
// Temporal resampling

/// Linear interpolation of T_raw rows onto T uniformly spaced positions;
/// output row k sits at source coordinate k*(T_raw-1)/(T-1).
inline Mat resample_moments(const Mat& features, int T) {
  if (T < 2) throw DataError("resample_moments: T must be >= 2");
  const long T_raw = features.rows();
  Mat out(T, features.cols());
  for (int k = 0; k < T; ++k) {
    const double coord = (T_raw == 1) ? 0.0 : k * double(T_raw - 1) / double(T - 1);
    const long lo = static_cast<long>(std::floor(coord));
    const long hi = std::min(lo + 1, T_raw - 1);
    const double frac = coord - lo;
    out.row(k) = (1.0 - frac) * features.row(lo) + frac * features.row(hi);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Query samples

struct QuerySample {
  std::string video_id;
  std::vector<int> token_ids;
  int mask_index = -1;          // -1: not masked (evaluation mode)
  int masked_original_id = -1;  // CE target when masked
  Interval gt;
  MomentGrid grid;
};

/// Tokenize a query and (in training mode) mask exactly one uniformly chosen
/// token position, recording the original id as the CE target.
inline QuerySample tokenize_and_mask(const std::string& query, const Vocabulary& vocab,
                                     Rng& rng, bool training, int L_max = 30) {
  QuerySample s;
  const std::vector<std::string> toks = tokenize(query);
  if (toks.empty()) throw DataError("empty query after tokenization: '" + query + "'");
  for (const std::string& t : toks) {
    if (static_cast<int>(s.token_ids.size()) >= L_max) break;
    s.token_ids.push_back(vocab.lookup(t));
  }
  if (training) {
    const int L = static_cast<int>(s.token_ids.size());
    s.mask_index = static_cast<int>(rng.next_int(0, L - 1));
    s.masked_original_id = s.token_ids[s.mask_index];
    s.token_ids[s.mask_index] = Vocabulary::kMask;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic planted-segment dataset

struct SyntheticDataset {
  fs::path features_dir;
  fs::path annotations_path;
  fs::path vocab_path;
  int n_videos = 0;
};

/// Generates n_videos videos of duration T_raw seconds, tiled by 2..3
/// contiguous segments with distinct action ids and a minimum length of two
/// seconds (a one-moment segment is not localizable through the 3-moment
/// boundary windows, so the grounding task would be ill-posed). Moment
/// features are one-hot(action) in the first n_actions dims plus Gaussian
/// noise. Each video gets one annotation: the query "do action<k>" of a
/// uniformly chosen segment, with that segment's interval as ground truth.
/// Deterministic in the seed, byte for byte.
inline SyntheticDataset make_synthetic_dataset(const fs::path& out_dir, int n_videos, int T_raw,
                                               int d_i, int n_actions, double noise_sigma,
                                               uint64_t seed) {
  if (n_actions > d_i) throw UsageError("make_synthetic_dataset: n_actions must be <= d_i");
  if (n_actions < 2) throw UsageError("make_synthetic_dataset: need at least 2 actions");
  if (T_raw < 4) throw UsageError("make_synthetic_dataset: T_raw must be >= 4");
  if (noise_sigma < 0) throw UsageError("make_synthetic_dataset: noise_sigma must be >= 0");

  SyntheticDataset ds;
  ds.features_dir = out_dir / "features";
  ds.annotations_path = out_dir / "annotations.jsonl";
  ds.vocab_path = out_dir / "vocab.json";
  ds.n_videos = n_videos;
  fs::create_directories(ds.features_dir);

  Vocabulary vocab;
  vocab.add("do");
  for (int a = 0; a < n_actions; ++a) vocab.add("action" + std::to_string(a));
  vocab.save(ds.vocab_path);

  std::ofstream ann(ds.annotations_path);
  if (!ann) throw DataError("cannot write " + ds.annotations_path.string());

  const int max_by_length = T_raw / 2;  // every segment needs >= 2 seconds
  const int max_segments = std::min({3, n_actions, max_by_length});
  for (int v = 0; v < n_videos; ++v) {
    Rng rng(splitmix64(seed ^ (0x5ee0000ULL + static_cast<uint64_t>(v))));
    const int n_seg = static_cast<int>(rng.next_int(2, max_segments));

    // distinct actions via partial Fisher-Yates
    std::vector<int> actions(n_actions);
    std::iota(actions.begin(), actions.end(), 0);
    for (int i = 0; i < n_seg; ++i) {
      const int j = static_cast<int>(rng.next_int(i, n_actions - 1));
      std::swap(actions[i], actions[j]);
    }

    // cut points with pairwise gaps >= 2 and >= 2 from both video ends:
    // sample k distinct values from {2 .. T_raw-2-2(k-1)}, sort, then shift
    // the i-th by 2i to restore the gaps
    const int k = n_seg - 1;
    std::vector<int> pool(T_raw - 3 - 2 * (k - 1));
    std::iota(pool.begin(), pool.end(), 2);
    for (int i = 0; i < k; ++i) {
      const int j = static_cast<int>(rng.next_int(i, static_cast<int>(pool.size()) - 1));
      std::swap(pool[i], pool[j]);
    }
    std::vector<int> bounds(pool.begin(), pool.begin() + k);
    std::sort(bounds.begin(), bounds.end());
    for (int i = 0; i < k; ++i) bounds[i] += 2 * i;
    bounds.insert(bounds.begin(), 0);
    bounds.push_back(T_raw);

    Mat feats = Mat::Zero(T_raw, d_i);
    for (int s = 0; s < n_seg; ++s)
      for (int t = bounds[s]; t < bounds[s + 1]; ++t) feats(t, actions[s]) = 1.0;
    if (noise_sigma > 0)
      for (long r = 0; r < feats.rows(); ++r)
        for (long c = 0; c < feats.cols(); ++c) feats(r, c) += noise_sigma * rng.next_normal();

    char name[32];
    std::snprintf(name, sizeof(name), "synth%04d", v);
    save_features(ds.features_dir / (std::string(name) + ".gmuf"), feats);

    const int pick = static_cast<int>(rng.next_int(0, n_seg - 1));
    json rec = {{"video_id", name},
                {"duration", static_cast<double>(T_raw)},
                {"start", static_cast<double>(bounds[pick])},
                {"end", static_cast<double>(bounds[pick + 1])},
                {"query", "do action" + std::to_string(actions[pick])}};
    ann << rec.dump() << "\n";
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Prepared dataset and deterministic batch order

/// One annotation with its video features resampled onto the model grid and
/// all training labels precomputed.
struct PreparedSample {
  std::string video_id;
  Mat features;  // T x d_i
  std::vector<int> token_ids;  // unmasked
  Interval gt;
  MomentGrid grid;
  BoundaryLabels boundary;
  TagLabels tag;
  ProposalLabelMap proposal;
};

struct Dataset {
  std::vector<PreparedSample> samples;
  int T = 0;
  int d_i = 0;
};

inline Dataset load_dataset(const fs::path& features_dir, const fs::path& annotations_path,
                            AnnotationFormat format, const Vocabulary& vocab, int T,
                            double o_min, double o_max, int L_max) {
  Dataset ds;
  ds.T = T;
  AnnotationLoadResult ann = load_annotations(annotations_path, format);
  std::map<std::string, VideoFeatureSequence> cache;
  int clamped = 0;
  for (const AnnotationRecord& rec : ann.records) {
    auto it = cache.find(rec.video_id);
    if (it == cache.end()) {
      const fs::path fpath = features_dir / (rec.video_id + ".gmuf");
      if (!fs::exists(fpath))
        throw DataError("missing feature file for video '" + rec.video_id + "': " +
                        fpath.string());
      it = cache.emplace(rec.video_id, load_features(fpath)).first;
    }
    const VideoFeatureSequence& seq = it->second;
    const double duration = rec.duration > 0 ? rec.duration : seq.duration;

    PreparedSample s;
    s.video_id = rec.video_id;
    s.grid = MomentGrid(T, duration);
    s.features = resample_moments(seq.features, T);
    Rng dummy(0);
    QuerySample q = tokenize_and_mask(rec.query, vocab, dummy, /*training=*/false, L_max);
    s.token_ids = q.token_ids;
    s.gt.start = std::clamp(rec.gt.start, 0.0, duration);
    s.gt.end = std::clamp(rec.gt.end, 0.0, duration);
    if (s.gt.end != rec.gt.end || s.gt.start != rec.gt.start) ++clamped;
    if (s.gt.end <= s.gt.start) continue;  // degenerate after clamping
    s.boundary = boundary_labels(s.grid, s.gt);
    s.tag = tag_labels(s.grid, s.gt);
    s.proposal = proposal_label_map(s.grid, s.gt, o_min, o_max);
    if (ds.d_i == 0) ds.d_i = static_cast<int>(s.features.cols());
    if (ds.d_i != s.features.cols())
      throw DataError("inconsistent feature dimension for video '" + rec.video_id + "'");
    ds.samples.push_back(std::move(s));
  }
  if (clamped > 0) log_debug(std::to_string(clamped) + " ground-truth interval(s) clamped to video duration");
  if (ds.samples.empty()) throw DataError("dataset is empty");
  return ds;
}

/// Deterministic per-epoch sample order: Fisher-Yates driven by (seed, epoch).
inline std::vector<size_t> shuffle_indices(size_t n, uint64_t seed, int epoch) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  Rng rng(splitmix64(seed ^ (0xe90cULL + static_cast<uint64_t>(epoch) * 0x9e3779b9ULL)));
  for (size_t i = n; i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.next_int(0, static_cast<int64_t>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

inline std::vector<std::vector<size_t>> make_batches(size_t n, int B, uint64_t seed, int epoch) {
  const std::vector<size_t> idx = shuffle_indices(n, seed, epoch);
  std::vector<std::vector<size_t>> batches;
  for (size_t at = 0; at < n; at += B) {
    const size_t take = std::min(static_cast<size_t>(B), n - at);
    batches.emplace_back(idx.begin() + at, idx.begin() + at + take);
  }
  return batches;
}

}  // namespace gmu::io

#endif  // GMU_IO_HPP
