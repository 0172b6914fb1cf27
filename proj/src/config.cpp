#include "zoomdet/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "zoomdet/rng.hpp"

namespace zoomdet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueFile KeyValueFile::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return from_string(buf.str());
}

KeyValueFile KeyValueFile::from_string(const std::string& text) {
  KeyValueFile kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    kv.entries_[key] = value;
  }
  return kv;
}

void KeyValueFile::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

bool KeyValueFile::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string KeyValueFile::get_string(const std::string& key,
                                     const std::string& fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

int KeyValueFile::get_int(const std::string& key, int fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (...) {
    throw ConfigError("config key " + key + ": expected integer, got '" + it->second + "'");
  }
}

std::uint64_t KeyValueFile::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (...) {
    throw ConfigError("config key " + key + ": expected unsigned integer");
  }
}

double KeyValueFile::get_double(const std::string& key, double fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (...) {
    throw ConfigError("config key " + key + ": expected number, got '" + it->second + "'");
  }
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key " + key + ": expected boolean, got '" + v + "'");
}

std::vector<double> KeyValueFile::get_doubles(const std::string& key,
                                              const std::vector<double>& fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::vector<double> out;
  std::stringstream ss(it->second);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (part.empty()) continue;
    try {
      out.push_back(std::stod(part));
    } catch (...) {
      throw ConfigError("config key " + key + ": expected comma-separated numbers");
    }
  }
  return out;
}

namespace {

DetectorModel parse_oracle(const KeyValueFile& kv, const std::string& prefix,
                           const DetectorModel& defaults) {
  DetectorModel m = defaults;
  m.size_midpoint = kv.get_double(prefix + ".size_midpoint", m.size_midpoint);
  m.size_softness = kv.get_double(prefix + ".size_softness", m.size_softness);
  m.score_noise_sd = kv.get_double(prefix + ".score_noise_sd", m.score_noise_sd);
  m.false_positive_rate = kv.get_double(prefix + ".false_positive_rate", m.false_positive_rate);
  m.localization_jitter_sd =
      kv.get_double(prefix + ".localization_jitter_sd", m.localization_jitter_sd);
  m.feature_dim = kv.get_int(prefix + ".feature_dim", m.feature_dim);
  m.upper_midpoint = kv.get_double(prefix + ".upper_midpoint", m.upper_midpoint);
  m.upper_softness = kv.get_double(prefix + ".upper_softness", m.upper_softness);
  m.fp_score_mean = kv.get_double(prefix + ".fp_score_mean", m.fp_score_mean);
  m.fp_score_sd = kv.get_double(prefix + ".fp_score_sd", m.fp_score_sd);
  m.time_base = kv.get_double(prefix + ".time_base", m.time_base);
  m.time_per_mpixel = kv.get_double(prefix + ".time_per_mpixel", m.time_per_mpixel);
  return m;
}

std::vector<WindowSize> parse_window_sizes(const std::string& text) {
  // "160x120,107x80"
  std::vector<WindowSize> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (part.empty()) continue;
    const auto x = part.find('x');
    if (x == std::string::npos)
      throw ConfigError("grid.window_sizes: expected WxH entries, got '" + part + "'");
    try {
      out.push_back(WindowSize{std::stod(part.substr(0, x)), std::stod(part.substr(x + 1))});
    } catch (...) {
      throw ConfigError("grid.window_sizes: bad entry '" + part + "'");
    }
  }
  if (out.empty()) throw ConfigError("grid.window_sizes: no window sizes given");
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const std::string& path,
                                             const std::vector<std::string>& overrides) {
  KeyValueFile kv = KeyValueFile::load(path);
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override '" + ov + "': expected key=value");
    kv.set(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  return from_kv(kv);
}

ExperimentConfig ExperimentConfig::from_kv(const KeyValueFile& kv) {
  ExperimentConfig c;
  c.master_seed = kv.get_u64("experiment.seed", c.master_seed);

  c.scene.width = kv.get_int("scene.width", c.scene.width);
  c.scene.height = kv.get_int("scene.height", c.scene.height);
  c.scene.count_min = kv.get_int("scene.count_min", c.scene.count_min);
  c.scene.count_max = kv.get_int("scene.count_max", c.scene.count_max);
  c.scene.small_frac = kv.get_double("scene.small_frac", c.scene.small_frac);
  c.scene.small_height_min = kv.get_double("scene.small_height_min", c.scene.small_height_min);
  c.scene.small_height_max = kv.get_double("scene.small_height_max", c.scene.small_height_max);
  c.scene.large_height_min = kv.get_double("scene.large_height_min", c.scene.large_height_min);
  c.scene.large_height_max = kv.get_double("scene.large_height_max", c.scene.large_height_max);
  c.scene.aspect_mean = kv.get_double("scene.aspect_mean", c.scene.aspect_mean);
  c.scene.aspect_sd = kv.get_double("scene.aspect_sd", c.scene.aspect_sd);
  c.scene.cluster_count = kv.get_int("scene.cluster_count", c.scene.cluster_count);
  c.scene.cluster_sd = kv.get_double("scene.cluster_sd", c.scene.cluster_sd);

  c.coarse = parse_oracle(kv, "oracle.coarse", c.coarse);
  c.fine = parse_oracle(kv, "oracle.fine", c.fine);

  c.regressor.feature_dim = kv.get_int("regressor.feature_dim", c.regressor.feature_dim);
  c.regressor.hidden = kv.get_int("regressor.hidden", c.regressor.hidden);
  c.regressor.epochs = kv.get_int("regressor.epochs", c.regressor.epochs);
  c.regressor.batch_size = kv.get_int("regressor.batch_size", c.regressor.batch_size);
  c.regressor.learning_rate = kv.get_double("regressor.learning_rate", c.regressor.learning_rate);
  c.regressor.lr_halflife = kv.get_int("regressor.lr_halflife", c.regressor.lr_halflife);

  c.rl.gamma = kv.get_double("rl.gamma", c.rl.gamma);
  c.rl.target_sync_c = kv.get_int("rl.target_sync", c.rl.target_sync_c);
  c.rl.eps_start = kv.get_double("rl.eps_start", c.rl.eps_start);
  c.rl.eps_decrement = kv.get_double("rl.eps_decrement", c.rl.eps_decrement);
  c.rl.eps_floor = kv.get_double("rl.eps_floor", c.rl.eps_floor);
  c.rl.lambda_cost = kv.get_double("rl.lambda", c.rl.lambda_cost);
  c.rl.stop_threshold = kv.get_double("rl.stop_threshold", c.rl.stop_threshold);
  c.rl.max_steps = kv.get_int("rl.max_steps", c.rl.max_steps);
  c.rl.replay_capacity = kv.get_int("rl.replay_capacity", c.rl.replay_capacity);
  c.rl.batch_size = kv.get_int("rl.batch_size", c.rl.batch_size);
  c.rl.learning_rate = kv.get_double("rl.learning_rate", c.rl.learning_rate);
  c.rl.epochs = kv.get_int("rl.epochs", c.rl.epochs);
  c.rl.positive_stop = kv.get_bool("rl.positive_stop", c.rl.positive_stop);
  c.rl.qnet.trunk_channels = kv.get_int("rl.trunk_channels", c.rl.qnet.trunk_channels);
  c.rl.qnet.trunk_kernel = kv.get_int("rl.trunk_kernel", c.rl.qnet.trunk_kernel);
  c.rl.qnet.trunk_stride = kv.get_int("rl.trunk_stride", c.rl.qnet.trunk_stride);

  if (kv.has("grid.window_sizes"))
    c.window_sizes = parse_window_sizes(kv.get_string("grid.window_sizes", ""));

  c.downsample = kv.get_double("map.downsample", c.downsample);
  c.alpha = kv.get_double("map.alpha", c.alpha);
  c.mask_zoomed = kv.get_bool("rl.mask_zoomed", c.mask_zoomed);

  c.data.train_scenes = kv.get_int("data.train_scenes", c.data.train_scenes);
  c.data.test_scenes = kv.get_int("data.test_scenes", c.data.test_scenes);

  c.eval.budgets = kv.get_doubles("eval.budgets", c.eval.budgets);
  c.eval.seeds = kv.get_int("eval.seeds", c.eval.seeds);
  c.eval.iou_threshold = kv.get_double("eval.iou_threshold", c.eval.iou_threshold);

  c.out_dir = kv.get_string("out.dir", c.out_dir);
  c.rl_env = kv.get_string("rl.env", c.rl_env);

  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (scene.width <= 0 || scene.height <= 0)
    throw ConfigError("scene dimensions must be positive");
  if (scene.count_min < 0 || scene.count_max < scene.count_min)
    throw ConfigError("scene object count range is inverted");
  if (downsample <= 0) throw ConfigError("map.downsample must be positive");
  if (std::fmod(scene.width, downsample) != 0.0 ||
      std::fmod(scene.height, downsample) != 0.0)
    throw ConfigError("scene dimensions must be divisible by map.downsample");
  for (const auto& ws : window_sizes) {
    if (ws.w <= 0 || ws.h <= 0) throw ConfigError("window sizes must be positive");
    if (ws.w > scene.width || ws.h > scene.height)
      throw ConfigError("frame " + std::to_string(scene.width) + "x" +
                        std::to_string(scene.height) + " is smaller than zoom window " +
                        std::to_string(ws.w) + "x" + std::to_string(ws.h));
  }
  if (coarse.size_softness <= 0 || fine.size_softness <= 0)
    throw ConfigError("oracle size_softness must be positive");
  if (coarse.feature_dim < 4 || fine.feature_dim < 4)
    throw ConfigError("oracle feature_dim must be at least 4");
  if (regressor.feature_dim != coarse.feature_dim)
    throw ConfigError("regressor.feature_dim must match oracle.coarse.feature_dim");
  if (rl.gamma < 0 || rl.gamma >= 1) throw ConfigError("rl.gamma must be in [0, 1)");
  if (rl.target_sync_c <= 0) throw ConfigError("rl.target_sync must be positive");
  if (rl.batch_size <= 0 || rl.replay_capacity < rl.batch_size)
    throw ConfigError("rl.replay_capacity must be at least rl.batch_size");
  if (rl.max_steps < 0) throw ConfigError("rl.max_steps must be nonnegative");
  if (eval.seeds <= 0) throw ConfigError("eval.seeds must be positive");
  for (const double b : eval.budgets)
    if (b <= 0 || b > 1) throw ConfigError("eval.budgets entries must be in (0, 1]");
  if (rl_env != "detection" && rl_env != "toy2")
    throw ConfigError("rl.env must be 'detection' or 'toy2'");
}

WorldSeeds derive_world_seeds(std::uint64_t master_seed, int run_index) {
  const std::uint64_t run = static_cast<std::uint64_t>(run_index);
  WorldSeeds s;
  s.train_scenes = mix_seed(master_seed, run, 101);
  s.test_scenes = mix_seed(master_seed, run, 202);
  s.coarse_stream = mix_seed(master_seed, run, 303);
  s.fine_stream = mix_seed(master_seed, run, 404);
  s.regressor = mix_seed(master_seed, run, 505);
  s.rl = mix_seed(master_seed, run, 606);
  return s;
}

}  // namespace zoomdet
