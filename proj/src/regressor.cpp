#include "zoomdet/regressor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "zoomdet/rng.hpp"

namespace zoomdet {

GainRegressor train_regressor(const std::vector<Correspondence>& data,
                              const RegressorConfig& config,
                              RegressorTrainStats* stats) {
  if (data.empty()) throw std::invalid_argument("train_regressor: empty training set");
  for (const auto& c : data)
    if (static_cast<int>(c.coarse.feature.size()) != config.feature_dim)
      throw std::invalid_argument("train_regressor: feature dimension mismatch");

  GainRegressor reg;
  reg.feature_dim = config.feature_dim;
  reg.net = nn::Network::build(
      {nn::DenseSpec{config.feature_dim, config.hidden}, nn::ReluSpec{},
       nn::DenseSpec{config.hidden, 1}},
      config.seed);
  // Zero-initialized output layer: the regressor starts as the constant-zero
  // function, so the mean-gain component converges geometrically instead of
  // having to iron initialization wiggle out of the predictions.
  for (double& v : reg.net.params[2].data) v = 0.0;
  for (double& v : reg.net.params[3].data) v = 0.0;

  Rng rng(mix_seed(config.seed, 0x4367ULL));
  const int n = static_cast<int>(data.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  nn::Tensor input(std::vector<int>{config.feature_dim});
  if (stats) stats->mse_curve.clear();

  double epoch_mse = 0.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr =
        config.lr_halflife > 0
            ? config.learning_rate *
                  std::pow(0.5, static_cast<double>(epoch) / config.lr_halflife)
            : config.learning_rate;
    // Fisher-Yates with the project rng keeps the trajectory seed-determined.
    for (int i = n - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(rng.uniform_int(0, i))]);

    double sq_sum = 0.0;
    for (int start = 0; start < n; start += config.batch_size) {
      const int end = std::min(n, start + config.batch_size);
      const int batch = end - start;

      std::vector<nn::Tensor> grads;
      for (const auto& p : reg.net.params) grads.emplace_back(nn::Tensor(p.shape));

      for (int bi = start; bi < end; ++bi) {
        const auto& sample = data[static_cast<std::size_t>(order[static_cast<std::size_t>(bi)])];
        input.data.assign(sample.coarse.feature.begin(), sample.coarse.feature.end());
        nn::Trace trace;
        const nn::Tensor out = nn::forward(reg.net, input, &trace);
        const double err = out.data[0] - sample.gain_target;
        sq_sum += err * err;

        nn::Tensor out_grad(std::vector<int>{1});
        out_grad.data[0] = 2.0 * err / batch;
        nn::Gradients g = nn::backward(reg.net, trace, out_grad);
        for (std::size_t pi = 0; pi < grads.size(); ++pi)
          for (std::size_t j = 0; j < grads[pi].data.size(); ++j)
            grads[pi].data[j] += g.param_grads[pi].data[j];
      }
      nn::sgd_step(reg.net, grads, lr);
    }

    epoch_mse = sq_sum / n;
    if (!std::isfinite(epoch_mse))
      throw nn::TrainingDivergence("train_regressor: training diverged (non-finite loss)");
    if (stats) stats->mse_curve.push_back(epoch_mse);
  }
  if (stats) stats->final_mse = epoch_mse;
  return reg;
}

double predict_gain(const GainRegressor& regressor, const std::vector<double>& feature) {
  if (static_cast<int>(feature.size()) != regressor.feature_dim)
    throw std::invalid_argument("predict_gain: feature dimension mismatch");
  nn::Tensor input(std::vector<int>{regressor.feature_dim});
  input.data.assign(feature.begin(), feature.end());
  return nn::forward(regressor.net, input).data[0];
}

double AccuracyGainMap::sum() const {
  double s = 0.0;
  for (const double v : values) s += v;
  return s;
}

double AccuracyGainMap::positive_sum() const {
  double s = 0.0;
  for (const double v : values) s += v > 0.0 ? v : 0.0;
  return s;
}

namespace {

// Iterate cells of `m` whose center lies inside `region` (given in
// full-resolution coordinates).
template <typename Fn>
void for_region_cells(const AccuracyGainMap& m, const BBox& region, Fn&& fn) {
  const double cs = m.coordinate_scale;
  const BBox r{region.x / cs, region.y / cs, region.w / cs, region.h / cs};
  const int x0 = std::max(0, static_cast<int>(std::floor(r.x - 1.0)));
  const int y0 = std::max(0, static_cast<int>(std::floor(r.y - 1.0)));
  const int x1 = std::min(m.width - 1, static_cast<int>(std::ceil(r.x2())));
  const int y1 = std::min(m.height - 1, static_cast<int>(std::ceil(r.y2())));
  for (int iy = y0; iy <= y1; ++iy)
    for (int ix = x0; ix <= x1; ++ix)
      if (contains(r, ix + 0.5, iy + 0.5)) fn(ix, iy);
}

}  // namespace

double AccuracyGainMap::region_sum(const BBox& region) const {
  double s = 0.0;
  for_region_cells(*this, region,
                   [&](int ix, int iy) { s += values[static_cast<std::size_t>(iy) * width + ix]; });
  return s;
}

void AccuracyGainMap::zero_region(const BBox& region) {
  for_region_cells(*this, region, [&](int ix, int iy) {
    values[static_cast<std::size_t>(iy) * width + ix] = 0.0;
  });
}

AccuracyGainMap build_ag_map(const std::vector<GainProposal>& proposals, int width,
                             int height, double alpha, double coordinate_scale) {
  AccuracyGainMap m;
  m.width = width;
  m.height = height;
  m.coordinate_scale = coordinate_scale;
  m.values.assign(static_cast<std::size_t>(width) * height, 0.0);

  for (const auto& prop : proposals) {
    if (!prop.box.valid())
      throw std::invalid_argument("build_ag_map: degenerate proposal box");
    if (prop.box.x < -1e-6 || prop.box.y < -1e-6 || prop.box.x2() > width + 1e-6 ||
        prop.box.y2() > height + 1e-6)
      throw std::invalid_argument("build_ag_map: proposal outside map");

    // Member cells by the center rule; b_k is their count.
    std::vector<std::size_t> cells;
    const int x0 = std::max(0, static_cast<int>(std::floor(prop.box.x)));
    const int y0 = std::max(0, static_cast<int>(std::floor(prop.box.y)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(prop.box.x2())));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(prop.box.y2())));
    for (int iy = y0; iy <= y1; ++iy)
      for (int ix = x0; ix <= x1; ++ix)
        if (contains(prop.box, ix + 0.5, iy + 0.5))
          cells.push_back(static_cast<std::size_t>(iy) * width + ix);

    if (cells.empty()) continue;  // sub-cell box, no mass to place
    const double per_cell = alpha * prop.gain / static_cast<double>(cells.size());
    for (const std::size_t idx : cells) m.values[idx] += per_cell;
  }
  return m;
}

}  // namespace zoomdet
