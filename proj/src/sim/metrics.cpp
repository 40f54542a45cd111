#include "ncaswarm/sim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ncaswarm::sim {

double resultant_length(std::span<const double> phases) {
  if (phases.empty()) return 0.0;
  double s = 0.0, c = 0.0;
  for (double p : phases) {
    s += std::sin(2.0 * std::numbers::pi * p);
    c += std::cos(2.0 * std::numbers::pi * p);
  }
  return std::sqrt(s * s + c * c) / static_cast<double>(phases.size());
}

double circular_sigma(std::span<const double> phases) {
  const double r = std::clamp(resultant_length(phases), 1e-12, 1.0);
  return std::sqrt(-2.0 * std::log(r)) / (2.0 * std::numbers::pi);
}

MetricsRow measure(const World& world, const MetricsSpec& spec) {
  MetricsRow row;
  row.tick = world.tick_count();
  std::vector<double> phases;
  std::size_t hits = 0;
  for (auto id : world.cell_ids()) {
    const auto& c = world.cell(id);
    if (!c.attached() || !c.powered) continue;
    int cls = -1;
    if (spec.model && c.state.size() == spec.model->channels) {
      const auto o = model::classify(*spec.model, std::span<const float>(c.state));
      cls = static_cast<int>(model::argmax(o));
    }
    row.classes.emplace_back(id, cls);
    if (spec.target && cls == *spec.target) ++hits;
    if (spec.phase_channel && *spec.phase_channel < c.state.size()) phases.push_back(c.state[*spec.phase_channel]);
  }
  if (spec.model && spec.target && !row.classes.empty())
    row.accuracy = static_cast<double>(hits) / static_cast<double>(row.classes.size());
  if (spec.phase_channel && !phases.empty()) row.sigma = circular_sigma(phases);
  return row;
}

void write_metrics_header(std::ostream& out) { out << "tick,accuracy,sigma,classes\n"; }

void write_metrics_row(std::ostream& out, const MetricsRow& row) {
  out << row.tick << ',';
  if (row.accuracy) out << *row.accuracy;
  out << ',';
  if (row.sigma) out << *row.sigma;
  out << ',';
  for (std::size_t i = 0; i < row.classes.size(); ++i)
    out << (i ? ";" : "") << row.classes[i].first << ':' << row.classes[i].second;
  out << '\n';
}

}  // namespace ncaswarm::sim
