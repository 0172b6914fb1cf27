#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "zoomdet/policy.hpp"
#include "zoomdet/regressor.hpp"
#include "zoomdet/sim.hpp"

namespace zoomdet {

// Invalid or inconsistent configuration; the CLI maps it to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat `key = value` file with `#` comments and dotted section keys, e.g.
// `scene.width = 320`. CLI overrides apply one-for-one on the same keys.
class KeyValueFile {
 public:
  static KeyValueFile load(const std::string& path);
  static KeyValueFile from_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key,
                                  const std::vector<double>& fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

struct DataConfig {
  int train_scenes = 20;
  int test_scenes = 100;
};

struct EvalConfig {
  std::vector<double> budgets{0.40, 0.55, 0.70};
  int seeds = 5;
  double iou_threshold = 0.5;
};

struct ExperimentConfig {
  std::uint64_t master_seed = 1;
  SceneConfig scene;
  DetectorModel coarse;
  DetectorModel fine;
  RegressorConfig regressor;
  RLConfig rl;
  std::vector<WindowSize> window_sizes{{160.0, 120.0}, {107.0, 80.0}};
  double downsample = 2.0;
  double alpha = 1.0;
  bool mask_zoomed = false;
  DataConfig data;
  EvalConfig eval;
  std::string out_dir = "out";
  std::string rl_env = "detection";  // "detection" or "toy2"

  static ExperimentConfig from_file(const std::string& path,
                                    const std::vector<std::string>& overrides = {});
  static ExperimentConfig from_kv(const KeyValueFile& kv);

  // Throws ConfigError on inconsistencies (frame vs window sizes, zero
  // softness, non-divisible downsample, ...).
  void validate() const;
};

// Seeds for one evaluation world: everything derives from (master, run).
struct WorldSeeds {
  std::uint64_t train_scenes = 0;
  std::uint64_t test_scenes = 0;
  std::uint64_t coarse_stream = 0;
  std::uint64_t fine_stream = 0;
  std::uint64_t regressor = 0;
  std::uint64_t rl = 0;
};

WorldSeeds derive_world_seeds(std::uint64_t master_seed, int run_index);

}  // namespace zoomdet
