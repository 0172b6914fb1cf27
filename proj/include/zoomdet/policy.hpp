#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <ostream>
#include <utility>
#include <vector>

#include "zoomdet/nn.hpp"
#include "zoomdet/regressor.hpp"
#include "zoomdet/rng.hpp"
#include "zoomdet/sim.hpp"

namespace zoomdet {

// A zoom-in action: a fixed-size rectangle in full-resolution coordinates.
struct ZoomAction {
  BBox box;
  int size_class = 0;
};

struct WindowSize {
  double w = 0.0, h = 0.0;
};

struct GridClass {
  WindowSize size;
  double stride_x = 0.0, stride_y = 0.0;
  int nx = 0, ny = 0;  // lattice dims (columns, rows)
  int offset = 0;      // index of this class's first action
};

// All candidate zoom windows: per size class a sliding-window lattice with
// stride W/2, H/2. Actions are flattened class-major, row-major within a
// class, which fixes the tie-break and Q-head output ordering.
struct ActionGrid {
  double frame_w = 0.0, frame_h = 0.0;
  std::vector<GridClass> classes;
  std::vector<ZoomAction> actions;

  int count() const { return static_cast<int>(actions.size()); }
};

ActionGrid build_action_grid(double frame_w, double frame_h,
                             const std::vector<WindowSize>& window_sizes);

// One proposal's contribution to an action's reward.
struct RewardItem {
  int g = 0;
  double p_l = 0.0;
  double p_h = 0.0;
};

// Cost-aware reward: sum of per-proposal accuracy improvements minus
// lambda * region_pixels / image_pixels.
double immediate_reward(const std::vector<RewardItem>& items, double region_pixels,
                        double image_pixels, double lambda);

struct QNetConfig {
  int trunk_channels = 16;
  int trunk_kernel = 5;
  int trunk_stride = 2;
  // AG-map cells carry tiny per-pixel gains; a fixed input gain keeps the
  // trunk pre-activations at a trainable magnitude.
  double input_scale = 25.0;
  std::uint64_t seed = 11;
};

// Fully convolutional action-value network: a shared conv trunk over the AG
// map and one conv head per window size class whose output geometry equals
// that class's position lattice.
struct QNetwork {
  nn::Network trunk;
  std::vector<nn::Network> heads;
  int map_w = 0, map_h = 0;
  double input_scale = 25.0;
  std::vector<std::pair<int, int>> head_out;  // (ny, nx) per class

  int action_count() const;
};

// Kernel/stride pair such that a valid conv over `in_size` emits exactly
// `out_target` cells.
std::pair<int, int> head_conv_geometry(int in_size, int out_target);

QNetwork build_qnetwork(int map_w, int map_h, const ActionGrid& grid,
                        const QNetConfig& config);

// One value per grid action, concatenated across size classes in grid order.
std::vector<double> q_forward(const QNetwork& q, const AccuracyGainMap& state);

// Epsilon-greedy: with probability epsilon a uniform action, otherwise the
// argmax (ties resolved to the lowest index).
int select_action(const std::vector<double>& values, double epsilon, Rng& rng);

// Local shift search of Eq-style refinement: candidates at x +- mu_x,
// y +- mu_y (clipped to the frame), scored by AG-sum; the original window is
// always a candidate so the result never scores below it.
ZoomAction refine_window(const ZoomAction& action, const AccuracyGainMap& state,
                         double mu_x, double mu_y);

// Where per-proposal gains come from: the trained regressor, or the entropy
// of the coarse score (ER baseline).
struct GainSource {
  const GainRegressor* regressor = nullptr;
  bool use_entropy = false;

  double gain_for(const Detection& det) const;
};

struct RLConfig {
  double gamma = 0.5;
  int target_sync_c = 10;
  double eps_start = 1.0;
  double eps_decrement = 0.1;
  double eps_floor = 0.1;
  double lambda_cost = 1.0;
  double stop_threshold = 0.1;
  int max_steps = 8;
  int replay_capacity = 10000;
  int batch_size = 32;
  double learning_rate = 0.05;
  int epochs = 8;
  bool positive_stop = false;
  std::uint64_t seed = 11;
  QNetConfig qnet;
};

// Episode environment seen by the Q-learning loop: AG-map states, grid
// actions, scalar rewards.
class ZoomEnv {
 public:
  virtual ~ZoomEnv() = default;
  virtual const ActionGrid& grid() const = 0;
  virtual int map_width() const = 0;
  virtual int map_height() const = 0;
  virtual int episodes_per_epoch() const = 0;

  // Starts the next episode and returns the initial state.
  virtual const AccuracyGainMap& reset() = 0;
  // True when the current state is already terminal.
  virtual bool exhausted() const = 0;

  struct StepResult {
    double reward = 0.0;
    bool terminal = false;
  };
  virtual StepResult step(int action_index) = 0;
  virtual const AccuracyGainMap& state() const = 0;
};

struct EpisodeOptions {
  bool refine = true;
  double lambda = 1.0;
  double stop_threshold = 0.1;
  int max_steps = 8;
  double pixel_budget = std::numeric_limits<double>::infinity();
  bool positive_stop = false;
  bool mask_zoomed = false;
  double alpha = 1.0;
  double downsample = 2.0;
};

// Detection episodes over a scene list, cycled in order. Training uses the
// raw grid window (no refinement).
class DetectionEnv : public ZoomEnv {
 public:
  DetectionEnv(const std::vector<Scene>& scenes, const DetectorModel& coarse_model,
               const DetectorModel& fine_model, GainSource gains, const ActionGrid& grid,
               const EpisodeOptions& opts);
  ~DetectionEnv() override;

  const ActionGrid& grid() const override;
  int map_width() const override;
  int map_height() const override;
  int episodes_per_epoch() const override;
  const AccuracyGainMap& reset() override;
  bool exhausted() const override;
  StepResult step(int action_index) override;
  const AccuracyGainMap& state() const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Scripted deterministic two-region environment with exactly two actions:
// action 0 pays kRewardDirect and terminates; action 1 pays kRewardDetour
// and moves to a state where action 0 pays kRewardDeferred. With gamma 0.5
// the optimal first action is 1.
class TwoRegionEnv : public ZoomEnv {
 public:
  static constexpr double kRewardDirect = 0.2;
  static constexpr double kRewardDetour = 0.1;
  static constexpr double kRewardDeferred = 0.4;

  TwoRegionEnv();

  const ActionGrid& grid() const override { return grid_; }
  int map_width() const override { return 24; }
  int map_height() const override { return 16; }
  int episodes_per_epoch() const override { return 4; }
  const AccuracyGainMap& reset() override;
  bool exhausted() const override { return phase_ == 2; }
  StepResult step(int action_index) override;
  const AccuracyGainMap& state() const override { return state_; }

 private:
  void load_phase_state();

  ActionGrid grid_;
  AccuracyGainMap state_;
  int phase_ = 2;
};

struct TrainEpisodeRow {
  int episode = 0;
  int epoch = 0;
  double epsilon = 0.0;
  int steps = 0;
  double total_reward = 0.0;
  double mean_loss = 0.0;
};

struct TrainCurves {
  std::vector<TrainEpisodeRow> rows;
  int total_updates = 0;
};

// DQN-style training: epsilon-greedy rollouts, uniform replay, squared
// Bellman error against a target network lagging exactly target_sync_c
// updates.
QNetwork q_learning_train(ZoomEnv& env, const RLConfig& config,
                          TrainCurves* curves = nullptr, std::ostream* log = nullptr);

struct StepObservation {
  int step_index = 0;  // 0 for the first zoom of an episode
  ZoomAction selected;
  ZoomAction refined;
  double selected_sum = 0.0;
  double refined_sum = 0.0;
  double reward = 0.0;
  std::vector<RewardItem> replaced;
  const AccuracyGainMap* map_after = nullptr;
};
using StepObserver = std::function<void(const StepObservation&)>;

struct EpisodeResult {
  std::vector<Detection> detections;
  std::vector<ZoomAction> zoom_trail;
  CostLedger ledger;
  std::vector<double> rewards;
};

enum class PolicyKind { qnet, greedy_ag };

// Full inference episode: coarse pass, sequential zooms under the stop rule
// and optional pixel budget, detection replacement, final cross-source
// duplicate suppression. `qnet` may be null for the greedy policy.
EpisodeResult run_episode(const Scene& scene, const DetectorModel& coarse_model,
                          const DetectorModel& fine_model, const GainSource& gains,
                          const ActionGrid& grid, const QNetwork* qnet,
                          PolicyKind policy, const EpisodeOptions& opts,
                          const StepObserver& observer = {});

// The Fine-detection-all baseline: one full-resolution pass over the frame.
EpisodeResult run_fine_all(const Scene& scene, const DetectorModel& fine_model);

void save_qnetwork(const QNetwork& q, const std::string& weights_path,
                   const std::string& sidecar_path);
QNetwork load_qnetwork(const std::string& weights_path, const std::string& sidecar_path);

}  // namespace zoomdet
