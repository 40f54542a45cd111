#include "ncaswarm/sim/firefly_experiment.hpp"

#include <algorithm>
#include <cmath>

#include "ncaswarm/sim/metrics.hpp"

namespace ncaswarm::sim {

std::vector<GridPos> disc_layout(std::size_t cells) {
  std::vector<GridPos> pts;
  const int r = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cells)))) + 1;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) pts.push_back({x, y});
  std::stable_sort(pts.begin(), pts.end(), [](GridPos a, GridPos b) {
    const int da = a.x * a.x + a.y * a.y, db = b.x * b.x + b.y * b.y;
    if (da != db) return da < db;
    return a < b;
  });
  pts.resize(std::min(cells, pts.size()));
  return pts;
}

std::optional<double> FireflySeries::first_below(double threshold) const {
  for (std::size_t i = 0; i < sigma.size(); ++i)
    if (sigma[i] < threshold) return seconds[i];
  return std::nullopt;
}

FireflySeries run_firefly_experiment(const FireflyExperimentConfig& cfg) {
  auto params = cfg.params;
  if (!cfg.coupled) {
    params.coupling = 0.0f;
    params.noise_max = 0.0f;
  }
  WorldConfig wc;
  wc.seed = cfg.seed;
  wc.scheduler = SchedulerKind::Jittered;
  wc.jitter = cfg.jitter;
  wc.tick_ms = cfg.tick_ms;
  World world(wc);
  world.set_program(std::make_shared<const vm::Program>(model::compile_firefly(params)));
  auto rng = CounterRng::for_stream(cfg.seed, 0xf1ef1e);
  for (auto pos : disc_layout(cfg.cells)) {
    const auto id = world.add_cell(pos);
    const float state[model::kFireflyChannels] = {1.0f, rng.uniform(), 0.0f};
    world.set_state(id, state);
  }
  const std::uint64_t per_second = std::max<std::uint64_t>(1, 1000 / cfg.tick_ms);
  const auto total = static_cast<std::uint64_t>(std::llround(cfg.seconds * static_cast<double>(per_second)));
  const MetricsSpec spec{std::nullopt, std::nullopt, model::kFireflyPhase};
  bool removed = false;
  FireflySeries series;
  for (std::uint64_t t = 1; t <= total; ++t) {
    world.tick();
    if (cfg.remove_at_second && !removed && world.simulated_seconds() >= *cfg.remove_at_second) {
      const auto ids = world.cell_ids();
      world.remove_cell(ids[ids.size() / 2]);
      removed = true;
    }
    if (t % per_second == 0) {
      series.seconds.push_back(world.simulated_seconds());
      series.sigma.push_back(*measure(world, spec).sigma);
    }
  }
  return series;
}

std::vector<double> window_means(const std::vector<double>& values, std::size_t window) {
  std::vector<double> out;
  if (window == 0) return out;
  for (std::size_t i = 0; i + window <= values.size(); i += window) {
    double s = 0.0;
    for (std::size_t k = i; k < i + window; ++k) s += values[k];
    out.push_back(s / static_cast<double>(window));
  }
  return out;
}

double trend_slope(const std::vector<double>& v) {
  const auto n = static_cast<double>(v.size());
  if (v.size() < 2) return 0.0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto x = static_cast<double>(i);
    sx += x;
    sy += v[i];
    sxx += x * x;
    sxy += x * v[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace ncaswarm::sim
