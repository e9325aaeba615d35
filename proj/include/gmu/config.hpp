#ifndef GMU_CONFIG_HPP
#define GMU_CONFIG_HPP

#include <cstdint>
#include <string>

#include <json.hpp>

#include "gmu/common.hpp"

namespace gmu {

/// Full training/model configuration. The paper profile mirrors the published
/// hyper-parameters; the desk profile shrinks the model so the whole pipeline
/// trains on a laptop-class CPU in minutes.
struct TrainConfig {
  int T = 64;            // moments per video
  int d = 512;           // feature dimension
  int d_i = 4096;        // raw (ingested) feature dimension
  int n_l = 3;           // local-attention ResBlock layers
  int n_g = 2;           // non-local blocks
  int N = 4;             // samples per proposal in the sampling weight tensor
  int kappa_e = 8;       // EarlyConv layers (all kernel 5)
  int kappa_l = 9;       // LateConv layers (kappa_l - 1 kernel-5 + final 1x1)
  int B = 32;            // batch size
  double lr = 1e-4;
  double lr_decay = 0.5;
  int lr_decay_every = 0;  // optimizer epochs between decays; 0 = ceil(epochs/3)
  int epochs = 12;
  int upsilon = 9;       // epoch at which the BCE weight drops to 0.001; -1 disables
  double o_min = 0.5;
  double o_max = 1.0;
  double theta = 0.5;    // boundary-label positive threshold
  uint64_t seed = 1;
  int L_max = 30;
  bool share_encoders = true;
  bool generation_guided_moment = true;
  bool generation_guided_clip = true;
  bool enable_mlm = true;
  bool enable_tag = true;

  static TrainConfig paper_profile() { return TrainConfig{}; }

  static TrainConfig desk_profile() {
    TrainConfig c;
    c.T = 16;
    c.d = 32;
    c.d_i = 16;
    c.B = 8;
    c.kappa_e = 1;
    c.kappa_l = 2;
    c.lr = 3e-3;
    c.epochs = 200;
    c.upsilon = -1;
    return c;
  }

  int effective_lr_decay_every() const {
    return lr_decay_every > 0 ? lr_decay_every : (epochs + 2) / 3;
  }

  double bce_weight(int epoch) const {
    return (upsilon >= 0 && epoch >= upsilon) ? 0.001 : 1.0;
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{{"T", c.T},
                        {"d", c.d},
                        {"d_i", c.d_i},
                        {"n_l", c.n_l},
                        {"n_g", c.n_g},
                        {"N", c.N},
                        {"kappa_e", c.kappa_e},
                        {"kappa_l", c.kappa_l},
                        {"B", c.B},
                        {"lr", c.lr},
                        {"lr_decay", c.lr_decay},
                        {"lr_decay_every", c.lr_decay_every},
                        {"epochs", c.epochs},
                        {"upsilon", c.upsilon},
                        {"o_min", c.o_min},
                        {"o_max", c.o_max},
                        {"theta", c.theta},
                        {"seed", c.seed},
                        {"L_max", c.L_max},
                        {"share_encoders", c.share_encoders},
                        {"generation_guided_moment", c.generation_guided_moment},
                        {"generation_guided_clip", c.generation_guided_clip},
                        {"enable_mlm", c.enable_mlm},
                        {"enable_tag", c.enable_tag}};
}

/// Overlays the keys present in `j` onto `c`; unknown keys are an error so
/// typos in config files fail loudly.
inline void merge_json(TrainConfig& c, const nlohmann::json& j) {
  for (auto& [key, val] : j.items()) {
    try {
      if (key == "T") c.T = val.get<int>();
      else if (key == "d") c.d = val.get<int>();
      else if (key == "d_i") c.d_i = val.get<int>();
      else if (key == "n_l") c.n_l = val.get<int>();
      else if (key == "n_g") c.n_g = val.get<int>();
      else if (key == "N") c.N = val.get<int>();
      else if (key == "kappa_e") c.kappa_e = val.get<int>();
      else if (key == "kappa_l") c.kappa_l = val.get<int>();
      else if (key == "B") c.B = val.get<int>();
      else if (key == "lr") c.lr = val.get<double>();
      else if (key == "lr_decay") c.lr_decay = val.get<double>();
      else if (key == "lr_decay_every") c.lr_decay_every = val.get<int>();
      else if (key == "epochs") c.epochs = val.get<int>();
      else if (key == "upsilon") c.upsilon = val.get<int>();
      else if (key == "o_min") c.o_min = val.get<double>();
      else if (key == "o_max") c.o_max = val.get<double>();
      else if (key == "theta") c.theta = val.get<double>();
      else if (key == "seed") c.seed = val.get<uint64_t>();
      else if (key == "L_max") c.L_max = val.get<int>();
      else if (key == "share_encoders") c.share_encoders = val.get<bool>();
      else if (key == "generation_guided_moment") c.generation_guided_moment = val.get<bool>();
      else if (key == "generation_guided_clip") c.generation_guided_clip = val.get<bool>();
      else if (key == "enable_mlm") c.enable_mlm = val.get<bool>();
      else if (key == "enable_tag") c.enable_tag = val.get<bool>();
      else throw UsageError("unknown config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config key '" + key + "': " + e.what());
    }
  }
}

inline void validate(const TrainConfig& c) {
  if (c.T < 2) throw UsageError("config: T must be >= 2");
  if (c.d < 1 || c.d_i < 1) throw UsageError("config: d and d_i must be >= 1");
  if (c.n_l < 1 || c.n_g < 0) throw UsageError("config: n_l >= 1, n_g >= 0 required");
  if (c.N < 1) throw UsageError("config: N must be >= 1");
  if (c.kappa_e < 1 || c.kappa_l < 2) throw UsageError("config: kappa_e >= 1, kappa_l >= 2 required");
  if (c.B < 1) throw UsageError("config: B must be >= 1");
  if (!(c.lr > 0)) throw UsageError("config: lr must be > 0");
  if (c.epochs < 1) throw UsageError("config: epochs must be >= 1");
  if (!(0.0 <= c.o_min && c.o_min < c.o_max && c.o_max <= 1.0))
    throw UsageError("config: need 0 <= o_min < o_max <= 1");
  if (c.L_max < 1) throw UsageError("config: L_max must be >= 1");
}

/// Canonical JSON dump (nlohmann objects serialize with sorted keys).
inline std::string canonical_config_string(const TrainConfig& c) { return to_json(c).dump(); }

/// FNV-1a hash of the canonical config string; stored in checkpoints to
/// reject evaluation against a mismatched configuration.
inline uint64_t config_hash(const TrainConfig& c) {
  const std::string s = canonical_config_string(c);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace gmu

#endif  // GMU_CONFIG_HPP
