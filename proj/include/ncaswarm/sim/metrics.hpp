#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "ncaswarm/model/model.hpp"
#include "ncaswarm/sim/world.hpp"

namespace ncaswarm::sim {

// Resultant length of phases taken as angles 2*pi*phi.
double resultant_length(std::span<const double> phases);
// sqrt(-2 ln R) / (2 pi), with R clamped to [1e-12, 1].
double circular_sigma(std::span<const double> phases);

struct MetricsSpec {
  std::optional<model::NcaModel> model;      // enables per-cell classes
  std::optional<int> target;                 // enables accuracy
  std::optional<std::size_t> phase_channel;  // enables sigma
};

struct MetricsRow {
  std::uint64_t tick = 0;
  std::vector<std::pair<std::uint32_t, int>> classes;  // powered, attached cells; -1 without a model
  std::optional<double> accuracy;
  std::optional<double> sigma;
};

MetricsRow measure(const World& world, const MetricsSpec& spec);

void write_metrics_header(std::ostream& out);
// classes are written as "id:class" pairs separated by ';'.
void write_metrics_row(std::ostream& out, const MetricsRow& row);

}  // namespace ncaswarm::sim
