#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ncaswarm/model/firefly.hpp"
#include "ncaswarm/sim/world.hpp"

namespace ncaswarm::sim {

// The `cells` lattice points closest to the origin, ties broken by (y, x).
// For 29 this is exactly the disc x^2 + y^2 <= 9.
std::vector<GridPos> disc_layout(std::size_t cells);

struct FireflyExperimentConfig {
  std::size_t cells = 29;
  double seconds = 300.0;
  std::uint64_t seed = 1;
  double jitter = 0.05;
  std::uint32_t tick_ms = 50;
  model::FireflyParams params;
  bool coupled = true;  // false disables the flash response entirely
  std::optional<double> remove_at_second;  // drop one cell mid-run
};

struct FireflySeries {
  std::vector<double> seconds;
  std::vector<double> sigma;

  std::optional<double> first_below(double threshold) const;
};

// Random initial phases, jittered scheduler, sigma logged once per
// simulated second.
FireflySeries run_firefly_experiment(const FireflyExperimentConfig& cfg);

// Means over consecutive windows of `window` samples.
std::vector<double> window_means(const std::vector<double>& values, std::size_t window);
// Least-squares slope of values against their index.
double trend_slope(const std::vector<double>& values);

}  // namespace ncaswarm::sim
