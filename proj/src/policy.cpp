#include "zoomdet/policy.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "zoomdet/match.hpp"
#include "zoomdet/rng.hpp"

namespace zoomdet {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("policy: " + msg);
}

nn::Tensor map_to_tensor(const AccuracyGainMap& m) {
  nn::Tensor t(std::vector<int>{1, m.height, m.width});
  t.data.assign(m.values.begin(), m.values.end());
  return t;
}

}  // namespace

ActionGrid build_action_grid(double frame_w, double frame_h,
                             const std::vector<WindowSize>& window_sizes) {
  if (frame_w <= 0 || frame_h <= 0) fail("build_action_grid: bad frame dims");
  if (window_sizes.empty()) fail("build_action_grid: no window sizes");

  ActionGrid grid;
  grid.frame_w = frame_w;
  grid.frame_h = frame_h;
  for (int sc = 0; sc < static_cast<int>(window_sizes.size()); ++sc) {
    const WindowSize& ws = window_sizes[static_cast<std::size_t>(sc)];
    if (ws.w > frame_w || ws.h > frame_h)
      fail("build_action_grid: window " + std::to_string(ws.w) + "x" +
           std::to_string(ws.h) + " larger than frame");
    GridClass cls;
    cls.size = ws;
    cls.stride_x = ws.w / 2.0;
    cls.stride_y = ws.h / 2.0;
    cls.nx = static_cast<int>(std::floor((frame_w - ws.w) / cls.stride_x)) + 1;
    cls.ny = static_cast<int>(std::floor((frame_h - ws.h) / cls.stride_y)) + 1;
    cls.offset = grid.count();
    for (int iy = 0; iy < cls.ny; ++iy)
      for (int ix = 0; ix < cls.nx; ++ix)
        grid.actions.push_back(
            ZoomAction{BBox{ix * cls.stride_x, iy * cls.stride_y, ws.w, ws.h}, sc});
    grid.classes.push_back(cls);
  }
  return grid;
}

double immediate_reward(const std::vector<RewardItem>& items, double region_pixels,
                        double image_pixels, double lambda) {
  double acc = 0.0;
  for (const auto& it : items) acc += gain_target(it.g, it.p_l, it.p_h);
  return acc - lambda * region_pixels / image_pixels;
}

int QNetwork::action_count() const {
  int n = 0;
  for (const auto& [ny, nx] : head_out) n += ny * nx;
  return n;
}

std::pair<int, int> head_conv_geometry(int in_size, int out_target) {
  if (out_target <= 0 || in_size <= 0) fail("head_conv_geometry: bad sizes");
  if (out_target > in_size)
    fail("head_conv_geometry: lattice " + std::to_string(out_target) +
         " exceeds feature size " + std::to_string(in_size));
  if (out_target == 1) return {in_size, 1};
  const int stride = in_size / out_target;
  const int kernel = in_size - (out_target - 1) * stride;
  return {kernel, stride};
}

QNetwork build_qnetwork(int map_w, int map_h, const ActionGrid& grid,
                        const QNetConfig& config) {
  QNetwork q;
  q.map_w = map_w;
  q.map_h = map_h;
  q.input_scale = config.input_scale;
  q.trunk = nn::Network::build(
      {nn::Conv2dSpec{1, config.trunk_channels, config.trunk_kernel, config.trunk_kernel,
                      config.trunk_stride, config.trunk_stride},
       nn::ReluSpec{}},
      mix_seed(config.seed, 0x7124ULL));

  const auto [th, tw] = nn::conv_output_geometry(map_h, map_w, config.trunk_kernel,
                                                 config.trunk_kernel, config.trunk_stride,
                                                 config.trunk_stride);
  for (int sc = 0; sc < static_cast<int>(grid.classes.size()); ++sc) {
    const GridClass& cls = grid.classes[static_cast<std::size_t>(sc)];
    const auto [kh, sh] = head_conv_geometry(th, cls.ny);
    const auto [kw, sw] = head_conv_geometry(tw, cls.nx);
    q.heads.push_back(nn::Network::build(
        {nn::Conv2dSpec{config.trunk_channels, 1, kh, kw, sh, sw}},
        mix_seed(config.seed, 0x8e40ULL, static_cast<std::uint64_t>(sc))));
    // Zero-initialized value heads: all actions start at Q = 0, so early
    // targets are pure rewards instead of initialization noise.
    for (auto& p : q.heads.back().params)
      for (double& v : p.data) v = 0.0;
    q.head_out.emplace_back(cls.ny, cls.nx);
  }
  return q;
}

namespace {

struct QTrace {
  nn::Trace trunk;
  std::vector<nn::Trace> heads;
};

std::vector<double> q_forward_tensor(const QNetwork& q, const nn::Tensor& state,
                                     QTrace* trace) {
  if (state.shape != std::vector<int>{1, q.map_h, q.map_w})
    fail("q_forward: state geometry does not match trained network");
  if (trace) trace->heads.resize(q.heads.size());

  nn::Tensor scaled = state;
  for (double& v : scaled.data) v *= q.input_scale;
  const nn::Tensor trunk_out =
      nn::forward(q.trunk, scaled, trace ? &trace->trunk : nullptr);
  std::vector<double> values;
  for (std::size_t h = 0; h < q.heads.size(); ++h) {
    const nn::Tensor out =
        nn::forward(q.heads[h], trunk_out, trace ? &trace->heads[h] : nullptr);
    const auto [ny, nx] = q.head_out[h];
    if (out.shape != std::vector<int>{1, ny, nx})
      fail("q_forward: head " + std::to_string(h) + " geometry mismatch");
    values.insert(values.end(), out.data.begin(), out.data.end());
  }
  return values;
}

}  // namespace

std::vector<double> q_forward(const QNetwork& q, const AccuracyGainMap& state) {
  return q_forward_tensor(q, map_to_tensor(state), nullptr);
}

int select_action(const std::vector<double>& values, double epsilon, Rng& rng) {
  if (values.empty()) fail("select_action: empty action set");
  if (epsilon > 0.0 && rng.uniform() < epsilon)
    return rng.uniform_int(0, static_cast<int>(values.size()) - 1);
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i)
    if (values[static_cast<std::size_t>(i)] > values[static_cast<std::size_t>(best)])
      best = i;
  return best;
}

ZoomAction refine_window(const ZoomAction& action, const AccuracyGainMap& state,
                         double mu_x, double mu_y) {
  const double frame_w = state.width * state.coordinate_scale;
  const double frame_h = state.height * state.coordinate_scale;

  ZoomAction best = action;
  double best_sum = state.region_sum(action.box);
  for (const double dy : {-mu_y, 0.0, mu_y}) {
    for (const double dx : {-mu_x, 0.0, mu_x}) {
      if (dx == 0.0 && dy == 0.0) continue;
      ZoomAction cand = action;
      cand.box.x = std::clamp(action.box.x + dx, 0.0, frame_w - action.box.w);
      cand.box.y = std::clamp(action.box.y + dy, 0.0, frame_h - action.box.h);
      const double s = state.region_sum(cand.box);
      if (s > best_sum) {
        best = cand;
        best_sum = s;
      }
    }
  }
  return best;
}

double GainSource::gain_for(const Detection& det) const {
  if (use_entropy) return entropy_gain(det.score);
  if (!regressor) fail("GainSource: regressor not set");
  return predict_gain(*regressor, det.feature);
}

// ---------------------------------------------------------------------------
// Shared episode mechanics: coarse pass, AG map, zoom execution with
// detection replacement and reward bookkeeping.
// ---------------------------------------------------------------------------

namespace {

struct EpisodeCore {
  const Scene* scene = nullptr;
  const DetectorModel* coarse_model = nullptr;
  const DetectorModel* fine_model = nullptr;
  double lambda = 1.0;
  double alpha = 1.0;
  double downsample = 2.0;

  CostLedger ledger;
  std::vector<Detection> actives;  // coarse detections not yet replaced
  std::vector<Detection> fines;
  AccuracyGainMap map;
  double image_pixels = 0.0;

  void init(const Scene& sc, const DetectorModel& coarse, const DetectorModel& fine,
            const GainSource& gains, const EpisodeOptions& opts) {
    scene = &sc;
    coarse_model = &coarse;
    fine_model = &fine;
    lambda = opts.lambda;
    alpha = opts.alpha;
    downsample = opts.downsample;
    ledger = CostLedger{};
    fines.clear();
    image_pixels = static_cast<double>(sc.width) * sc.height;

    const BBox frame{0.0, 0.0, static_cast<double>(sc.width),
                     static_cast<double>(sc.height)};
    actives = run_detector(coarse, sc, frame, 1.0 / downsample, ledger);

    std::vector<GainProposal> proposals;
    proposals.reserve(actives.size());
    const int map_w = static_cast<int>(std::lround(sc.width / downsample));
    const int map_h = static_cast<int>(std::lround(sc.height / downsample));
    for (const auto& det : actives) {
      BBox b{det.box.x / downsample, det.box.y / downsample, det.box.w / downsample,
             det.box.h / downsample};
      // Guard against jitter pushing a box fractionally past the map edge.
      b.x = std::clamp(b.x, 0.0, static_cast<double>(map_w));
      b.y = std::clamp(b.y, 0.0, static_cast<double>(map_h));
      b.w = std::min(b.w, map_w - b.x);
      b.h = std::min(b.h, map_h - b.y);
      if (b.w <= 0.0 || b.h <= 0.0) continue;
      proposals.push_back(GainProposal{b, gains.gain_for(det)});
    }
    map = build_ag_map(proposals, map_w, map_h, alpha, downsample);
  }

  double stop_sum(bool positive) const {
    return positive ? map.positive_sum() : map.sum();
  }

  struct ZoomOutcome {
    double reward = 0.0;
    std::vector<RewardItem> replaced;
  };

  ZoomOutcome execute(const BBox& window) {
    ZoomOutcome out;
    const auto window_fines = run_detector(*fine_model, *scene, window, 1.0, ledger);

    // Replacement rule: detections centered inside the window are replaced
    // by the window's own fine detections. For earlier fine detections this
    // only matters when windows overlap; the newest pass wins, which keeps
    // one detection per object.
    std::vector<Detection> in_window, survivors;
    for (auto& det : actives) {
      if (contains(window, det.box.cx(), det.box.cy()))
        in_window.push_back(std::move(det));
      else
        survivors.push_back(std::move(det));
    }
    // Overlapping windows: an earlier fine detection is superseded when the
    // new pass re-detects the same object (IoU match); unmatched ones
    // survive, so extra zooms never lose objects and never duplicate them.
    if (!fines.empty() && !window_fines.empty()) {
      std::vector<bool> superseded(fines.size(), false);
      for (const auto& [oi, ni] : match_detections(fines, window_fines))
        superseded[static_cast<std::size_t>(oi)] = true;
      std::vector<Detection> kept;
      for (std::size_t i = 0; i < fines.size(); ++i)
        if (!superseded[i]) kept.push_back(std::move(fines[i]));
      fines = std::move(kept);
    }

    std::vector<int> fine_for(in_window.size(), -1);
    for (const auto& [ci, fi] : match_detections(in_window, window_fines))
      fine_for[static_cast<std::size_t>(ci)] = fi;

    for (std::size_t i = 0; i < in_window.size(); ++i) {
      RewardItem item;
      item.g = assign_label(in_window[i], scene->objects);
      item.p_l = in_window[i].score;
      item.p_h = fine_for[i] >= 0
                     ? window_fines[static_cast<std::size_t>(fine_for[i])].score
                     : 0.0;
      out.replaced.push_back(item);
    }
    out.reward = immediate_reward(out.replaced, area(window), image_pixels, lambda);

    actives = std::move(survivors);
    fines.insert(fines.end(), window_fines.begin(), window_fines.end());
    map.zero_region(window);
    ledger.steps += 1;
    return out;
  }

  // Merged detections with cross-source duplicate suppression: a surviving
  // coarse detection overlapping any fine detection at IoU > 0.5 is dropped.
  std::vector<Detection> final_detections() const {
    std::vector<Detection> result = fines;
    for (const auto& det : actives) {
      bool duplicated = false;
      for (const auto& f : fines)
        if (iou(det.box, f.box) > 0.5) {
          duplicated = true;
          break;
        }
      if (!duplicated) result.push_back(det);
    }
    return result;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// DetectionEnv
// ---------------------------------------------------------------------------

struct DetectionEnv::Impl {
  const std::vector<Scene>* scenes;
  const DetectorModel* coarse_model;
  const DetectorModel* fine_model;
  GainSource gains;
  const ActionGrid* grid;
  EpisodeOptions opts;
  EpisodeCore core;
  int episode_counter = 0;
  int map_w = 0, map_h = 0;
};

DetectionEnv::DetectionEnv(const std::vector<Scene>& scenes,
                           const DetectorModel& coarse_model,
                           const DetectorModel& fine_model, GainSource gains,
                           const ActionGrid& grid, const EpisodeOptions& opts)
    : impl_(std::make_unique<Impl>()) {
  if (scenes.empty()) fail("DetectionEnv: no scenes");
  impl_->scenes = &scenes;
  impl_->coarse_model = &coarse_model;
  impl_->fine_model = &fine_model;
  impl_->gains = gains;
  impl_->grid = &grid;
  impl_->opts = opts;
  impl_->map_w = static_cast<int>(std::lround(scenes[0].width / opts.downsample));
  impl_->map_h = static_cast<int>(std::lround(scenes[0].height / opts.downsample));
}

DetectionEnv::~DetectionEnv() = default;

const ActionGrid& DetectionEnv::grid() const { return *impl_->grid; }
int DetectionEnv::map_width() const { return impl_->map_w; }
int DetectionEnv::map_height() const { return impl_->map_h; }
int DetectionEnv::episodes_per_epoch() const {
  return static_cast<int>(impl_->scenes->size());
}

const AccuracyGainMap& DetectionEnv::reset() {
  const auto& scenes = *impl_->scenes;
  const Scene& scene =
      scenes[static_cast<std::size_t>(impl_->episode_counter) % scenes.size()];
  impl_->episode_counter += 1;
  impl_->core.init(scene, *impl_->coarse_model, *impl_->fine_model, impl_->gains,
                   impl_->opts);
  return impl_->core.map;
}

bool DetectionEnv::exhausted() const {
  return impl_->core.stop_sum(impl_->opts.positive_stop) < impl_->opts.stop_threshold;
}

DetectionEnv::StepResult DetectionEnv::step(int action_index) {
  const auto& actions = impl_->grid->actions;
  if (action_index < 0 || action_index >= static_cast<int>(actions.size()))
    fail("DetectionEnv::step: action index out of range");
  const auto outcome =
      impl_->core.execute(actions[static_cast<std::size_t>(action_index)].box);
  StepResult r;
  r.reward = outcome.reward;
  r.terminal = exhausted();
  return r;
}

const AccuracyGainMap& DetectionEnv::state() const { return impl_->core.map; }

// ---------------------------------------------------------------------------
// TwoRegionEnv
// ---------------------------------------------------------------------------

TwoRegionEnv::TwoRegionEnv() {
  grid_ = build_action_grid(48.0, 32.0, {WindowSize{32.0, 32.0}});
  state_.width = 24;
  state_.height = 16;
  state_.coordinate_scale = 2.0;
  state_.values.assign(24 * 16, 0.0);
}

void TwoRegionEnv::load_phase_state() {
  std::fill(state_.values.begin(), state_.values.end(), 0.0);
  auto blob = [&](int x0, int x1, int y0, int y1, double v) {
    for (int iy = y0; iy <= y1; ++iy)
      for (int ix = x0; ix <= x1; ++ix)
        state_.values[static_cast<std::size_t>(iy) * state_.width + ix] = v;
  };
  if (phase_ == 0) {
    blob(2, 9, 4, 11, 0.02);    // left region
    blob(14, 21, 4, 11, 0.02);  // right region
  } else if (phase_ == 1) {
    // after the detour only the left region remains, at higher value, so the
    // left action head (whose receptive field is only the left half) can
    // tell the two phases apart
    blob(2, 9, 4, 11, 0.05);
  }
}

const AccuracyGainMap& TwoRegionEnv::reset() {
  phase_ = 0;
  load_phase_state();
  return state_;
}

TwoRegionEnv::StepResult TwoRegionEnv::step(int action_index) {
  if (action_index < 0 || action_index > 1) fail("TwoRegionEnv: bad action");
  StepResult r;
  if (phase_ == 0) {
    if (action_index == 0) {
      r.reward = kRewardDirect;
      r.terminal = true;
      phase_ = 2;
    } else {
      r.reward = kRewardDetour;
      r.terminal = false;
      phase_ = 1;
    }
  } else if (phase_ == 1) {
    r.reward = action_index == 0 ? kRewardDeferred : 0.0;
    r.terminal = true;
    phase_ = 2;
  } else {
    fail("TwoRegionEnv: step on finished episode");
  }
  load_phase_state();
  return r;
}

// ---------------------------------------------------------------------------
// Q-learning
// ---------------------------------------------------------------------------

namespace {

struct SparseState {
  std::vector<std::pair<std::uint32_t, float>> nz;
};

SparseState sparsify(const AccuracyGainMap& m) {
  SparseState s;
  for (std::size_t i = 0; i < m.values.size(); ++i)
    if (m.values[i] != 0.0)
      s.nz.emplace_back(static_cast<std::uint32_t>(i), static_cast<float>(m.values[i]));
  return s;
}

void densify(const SparseState& s, nn::Tensor& out) {
  std::fill(out.data.begin(), out.data.end(), 0.0);
  for (const auto& [idx, v] : s.nz) out.data[idx] = static_cast<double>(v);
}

struct Transition {
  SparseState s, s2;
  int action = 0;
  float reward = 0.0f;
  bool terminal = false;
};

struct QGrads {
  std::vector<nn::Tensor> trunk;
  std::vector<std::vector<nn::Tensor>> heads;

  static QGrads zeros_like(const QNetwork& q) {
    QGrads g;
    for (const auto& p : q.trunk.params) g.trunk.emplace_back(nn::Tensor(p.shape));
    g.heads.resize(q.heads.size());
    for (std::size_t h = 0; h < q.heads.size(); ++h)
      for (const auto& p : q.heads[h].params)
        g.heads[h].emplace_back(nn::Tensor(p.shape));
    return g;
  }

  void add(const QGrads& o) {
    auto add_set = [](std::vector<nn::Tensor>& dst, const std::vector<nn::Tensor>& src) {
      for (std::size_t i = 0; i < dst.size(); ++i)
        for (std::size_t j = 0; j < dst[i].data.size(); ++j)
          dst[i].data[j] += src[i].data[j];
    };
    add_set(trunk, o.trunk);
    for (std::size_t h = 0; h < heads.size(); ++h) add_set(heads[h], o.heads[h]);
  }
};

// Locate (head, row, col) for a flat action index.
struct HeadPos {
  int head = 0, pos = 0;
};

HeadPos locate_action(const QNetwork& q, int action) {
  int base = 0;
  for (std::size_t h = 0; h < q.head_out.size(); ++h) {
    const int n = q.head_out[h].first * q.head_out[h].second;
    if (action < base + n) return {static_cast<int>(h), action - base};
    base += n;
  }
  fail("locate_action: index out of range");
}

// Gradient contribution of one transition; err and squared error returned via
// out parameters.
void item_update(const QNetwork& q, const QNetwork& target_net, const Transition& t,
                 double gamma, double grad_scale, nn::Tensor& scratch_state,
                 QTrace& trace, QGrads& grads, double& sq_err) {
  double target = static_cast<double>(t.reward);
  if (!t.terminal) {
    densify(t.s2, scratch_state);
    const auto q2 = q_forward_tensor(target_net, scratch_state, nullptr);
    target += gamma * *std::max_element(q2.begin(), q2.end());
  }

  densify(t.s, scratch_state);
  const auto values = q_forward_tensor(q, scratch_state, &trace);
  const double err = values[static_cast<std::size_t>(t.action)] - target;
  sq_err += err * err;

  const HeadPos hp = locate_action(q, t.action);
  const auto [ny, nx] = q.head_out[static_cast<std::size_t>(hp.head)];
  nn::Tensor head_grad(std::vector<int>{1, ny, nx});
  head_grad.data[static_cast<std::size_t>(hp.pos)] = 2.0 * err * grad_scale;

  nn::Gradients hg = nn::backward(q.heads[static_cast<std::size_t>(hp.head)],
                                  trace.heads[static_cast<std::size_t>(hp.head)],
                                  head_grad);
  nn::Gradients tg = nn::backward(q.trunk, trace.trunk, hg.input_grad);

  for (std::size_t i = 0; i < hg.param_grads.size(); ++i)
    for (std::size_t j = 0; j < hg.param_grads[i].data.size(); ++j)
      grads.heads[static_cast<std::size_t>(hp.head)][i].data[j] +=
          hg.param_grads[i].data[j];
  for (std::size_t i = 0; i < tg.param_grads.size(); ++i)
    for (std::size_t j = 0; j < tg.param_grads[i].data.size(); ++j)
      grads.trunk[i].data[j] += tg.param_grads[i].data[j];
}

}  // namespace

QNetwork q_learning_train(ZoomEnv& env, const RLConfig& config, TrainCurves* curves,
                          std::ostream* log) {
  QNetConfig qc = config.qnet;
  qc.seed = mix_seed(config.seed, 0x71ULL);
  QNetwork qnet = build_qnetwork(env.map_width(), env.map_height(), env.grid(), qc);

  // Target parameters lag the live ones by exactly target_sync_c updates:
  // a queue of snapshots, front = theta_{i - C} (initial parameters while
  // warming up).
  std::deque<QNetwork> history;
  history.push_back(qnet);

  std::vector<Transition> replay;
  replay.reserve(static_cast<std::size_t>(std::min(config.replay_capacity, 65536)));
  std::size_t write_slot = 0;

  Rng act_rng(mix_seed(config.seed, 0xac7ULL));
  Rng replay_rng(mix_seed(config.seed, 0x3e91ULL));

  nn::Tensor state_tensor(std::vector<int>{1, env.map_height(), env.map_width()});

  const int batch = std::max(1, config.batch_size);
  int updates = 0;
  int episode_index = 0;

  auto do_update = [&]() -> double {
    std::vector<int> idx(static_cast<std::size_t>(batch));
    for (auto& i : idx)
      i = replay_rng.uniform_int(0, static_cast<int>(replay.size()) - 1);

    const QNetwork& target_net = history.front();
    const double grad_scale = 1.0 / batch;

    // Two fixed buckets so the reduction order (and therefore the result) is
    // independent of whether the halves run in parallel.
    QGrads g0 = QGrads::zeros_like(qnet), g1 = QGrads::zeros_like(qnet);
    double sq0 = 0.0, sq1 = 0.0;
    const int half = batch / 2;

    auto work = [&](int lo, int hi, QGrads& g, double& sq) {
      nn::Tensor scratch(std::vector<int>{1, env.map_height(), env.map_width()});
      QTrace trace;
      for (int i = lo; i < hi; ++i)
        item_update(qnet, target_net, replay[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])],
                    config.gamma, grad_scale, scratch, trace, g, sq);
    };

    if (batch >= 8 && std::thread::hardware_concurrency() >= 2) {
      std::thread t0([&] { work(0, half, g0, sq0); });
      work(half, batch, g1, sq1);
      t0.join();
    } else {
      work(0, half, g0, sq0);
      work(half, batch, g1, sq1);
    }
    g0.add(g1);
    const double loss = (sq0 + sq1) / batch;
    if (!std::isfinite(loss))
      throw nn::TrainingDivergence("q_learning_train: non-finite loss at update " +
                                   std::to_string(updates));

    nn::sgd_step(qnet.trunk, g0.trunk, config.learning_rate);
    for (std::size_t h = 0; h < qnet.heads.size(); ++h)
      nn::sgd_step(qnet.heads[h], g0.heads[h], config.learning_rate);

    ++updates;
    history.push_back(qnet);
    if (static_cast<int>(history.size()) > config.target_sync_c + 1)
      history.pop_front();
    if (log && updates % std::max(1, config.target_sync_c) == 0)
      (*log) << "update " << updates << ": target lag "
             << std::min(updates, config.target_sync_c) << " updates\n";
    return loss;
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double eps =
        std::max(config.eps_floor, config.eps_start - config.eps_decrement * epoch);
    if (log) (*log) << "epoch " << epoch << ": epsilon " << eps << "\n";

    for (int e = 0; e < env.episodes_per_epoch(); ++e) {
      env.reset();
      TrainEpisodeRow row;
      row.episode = episode_index++;
      row.epoch = epoch;
      row.epsilon = eps;

      double loss_sum = 0.0;
      int loss_count = 0;
      SparseState s = sparsify(env.state());

      while (!env.exhausted() && row.steps < config.max_steps) {
        state_tensor.data.assign(env.state().values.begin(), env.state().values.end());
        const auto values = q_forward_tensor(qnet, state_tensor, nullptr);
        const int a = select_action(values, eps, act_rng);
        const auto sr = env.step(a);
        SparseState s2 = sparsify(env.state());

        Transition t;
        t.s = std::move(s);
        t.s2 = s2;
        t.action = a;
        t.reward = static_cast<float>(sr.reward);
        t.terminal = sr.terminal;
        if (static_cast<int>(replay.size()) < config.replay_capacity) {
          replay.push_back(std::move(t));
        } else {
          replay[write_slot] = std::move(t);
          write_slot = (write_slot + 1) % replay.size();
        }
        s = std::move(s2);

        if (static_cast<int>(replay.size()) >= batch) {
          loss_sum += do_update();
          ++loss_count;
        }

        row.total_reward += sr.reward;
        row.steps += 1;
        if (sr.terminal) break;
      }
      row.mean_loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
      if (curves) curves->rows.push_back(row);
    }
  }
  if (curves) curves->total_updates = updates;
  return qnet;
}

// ---------------------------------------------------------------------------
// Inference episodes
// ---------------------------------------------------------------------------

EpisodeResult run_episode(const Scene& scene, const DetectorModel& coarse_model,
                          const DetectorModel& fine_model, const GainSource& gains,
                          const ActionGrid& grid, const QNetwork* qnet,
                          PolicyKind policy, const EpisodeOptions& opts,
                          const StepObserver& observer) {
  if (policy == PolicyKind::qnet && qnet == nullptr)
    fail("run_episode: qnet policy requires a trained network");

  EpisodeCore core;
  core.init(scene, coarse_model, fine_model, gains, opts);

  EpisodeResult result;
  Rng unused_rng(0);

  while (static_cast<int>(result.zoom_trail.size()) < opts.max_steps) {
    if (core.stop_sum(opts.positive_stop) < opts.stop_threshold) break;

    std::vector<double> values(static_cast<std::size_t>(grid.count()));
    if (policy == PolicyKind::qnet) {
      values = q_forward(*qnet, core.map);
    } else {
      for (int i = 0; i < grid.count(); ++i)
        values[static_cast<std::size_t>(i)] =
            core.map.region_sum(grid.actions[static_cast<std::size_t>(i)].box);
    }

    if (opts.mask_zoomed) {
      bool any = false;
      for (int i = 0; i < grid.count(); ++i) {
        if (core.map.region_sum(grid.actions[static_cast<std::size_t>(i)].box) == 0.0)
          values[static_cast<std::size_t>(i)] = -std::numeric_limits<double>::infinity();
        else
          any = true;
      }
      if (!any) break;
    }

    const int a = select_action(values, 0.0, unused_rng);
    const ZoomAction selected = grid.actions[static_cast<std::size_t>(a)];
    ZoomAction refined = selected;
    if (opts.refine) {
      const GridClass& cls = grid.classes[static_cast<std::size_t>(selected.size_class)];
      refined = refine_window(selected, core.map, 0.5 * cls.stride_x, 0.5 * cls.stride_y);
    }

    if (static_cast<double>(core.ledger.pixels_processed) + area(refined.box) >
        opts.pixel_budget)
      break;

    const double selected_sum = core.map.region_sum(selected.box);
    const double refined_sum = core.map.region_sum(refined.box);
    auto outcome = core.execute(refined.box);

    result.zoom_trail.push_back(refined);
    result.rewards.push_back(outcome.reward);
    if (observer) {
      StepObservation obs;
      obs.step_index = static_cast<int>(result.zoom_trail.size()) - 1;
      obs.selected = selected;
      obs.refined = refined;
      obs.selected_sum = selected_sum;
      obs.refined_sum = refined_sum;
      obs.reward = outcome.reward;
      obs.replaced = std::move(outcome.replaced);
      obs.map_after = &core.map;
      observer(obs);
    }
  }

  result.detections = core.final_detections();
  result.ledger = core.ledger;
  return result;
}

EpisodeResult run_fine_all(const Scene& scene, const DetectorModel& fine_model) {
  EpisodeResult result;
  const BBox frame{0.0, 0.0, static_cast<double>(scene.width),
                   static_cast<double>(scene.height)};
  result.detections = run_detector(fine_model, scene, frame, 1.0, result.ledger);
  return result;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

void save_qnetwork(const QNetwork& q, const std::string& weights_path,
                   const std::string& sidecar_path) {
  std::vector<const nn::Network*> nets;
  nets.push_back(&q.trunk);
  for (const auto& h : q.heads) nets.push_back(&h);
  nn::save_networks(nets, weights_path);

  std::ofstream os(sidecar_path);
  if (!os) fail("cannot open " + sidecar_path + " for writing");
  os << "map " << q.map_w << " " << q.map_h << "\n";
  os << "scale " << q.input_scale << "\n";
  for (const auto& [ny, nx] : q.head_out) os << "head " << ny << " " << nx << "\n";
}

QNetwork load_qnetwork(const std::string& weights_path, const std::string& sidecar_path) {
  auto nets = nn::load_networks(weights_path);
  if (nets.empty()) fail(weights_path + ": no networks in file");

  QNetwork q;
  q.trunk = std::move(nets[0]);
  for (std::size_t i = 1; i < nets.size(); ++i) q.heads.push_back(std::move(nets[i]));

  std::ifstream is(sidecar_path);
  if (!is) fail("cannot open " + sidecar_path);
  std::string word;
  while (is >> word) {
    if (word == "map") {
      is >> q.map_w >> q.map_h;
    } else if (word == "scale") {
      is >> q.input_scale;
    } else if (word == "head") {
      int ny = 0, nx = 0;
      is >> ny >> nx;
      q.head_out.emplace_back(ny, nx);
    } else {
      fail(sidecar_path + ": unknown record '" + word + "'");
    }
  }
  if (q.head_out.size() != q.heads.size())
    fail(sidecar_path + ": head count does not match weights file");
  return q;
}

}  // namespace zoomdet
