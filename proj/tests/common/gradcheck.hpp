#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ncaswarm/rng.hpp"
#include "ncaswarm/train/kernels.hpp"

namespace ncaswarm::testing {

// A small batch with random shapes, rotations, weights and states, evaluated
// in double precision with fixed dropout and noise masks.
struct GradProblem {
  model::NcaModel shape;
  train::ParamLayout layout;
  train::BatchGraph graph;
  std::vector<double> params;
  std::vector<double> s0;
  std::size_t steps = 4;
  train::RolloutNoise noise;
  train::Engine engine = train::Engine::Reference;

  train::KernelContext context() const { return {&shape.kernels, layout, engine}; }
};

inline GradProblem make_grad_problem(std::uint64_t seed, std::size_t c = 6, std::size_t h = 10,
                                     std::size_t classes = 3, std::size_t head_inputs = 4) {  // 0 = no head
  CounterRng rng(derive_key(seed, 0x67));
  GradProblem p;
  p.shape = model::NcaModel::zeros(c, h, model::KernelSet::classification(), classes,
                                     head_inputs ? std::optional<std::size_t>(head_inputs) : std::nullopt);
  p.layout = train::ParamLayout::for_model(p.shape);
  p.params.resize(p.layout.total);
  for (auto& v : p.params) v = rng.normal() * 0.3;
  const int W = 5, H = 5;
  for (int sample = 0; sample < 3; ++sample) {
    std::vector<std::uint8_t> alive(W * H, 0), turns(W * H, 0);
    for (int i = 0; i < W * H; ++i) {
      alive[i] = rng.uniform() < 0.6f;
      turns[i] = static_cast<std::uint8_t>(rng.below(4));
    }
    alive[12] = 1;
    train::append_sample(p.graph, W, H, alive.data(), turns.data(), static_cast<int>(rng.below(classes)));
  }
  p.s0.resize(p.graph.rows * c);
  for (std::size_t r = 0; r < p.graph.rows; ++r) {
    p.s0[r * c] = 1.0;
    for (std::size_t ch = 1; ch < c; ++ch) p.s0[r * c + ch] = rng.normal() * 0.5;
  }
  p.noise = {0.3f, 0.02f, derive_key(seed, 0x99)};
  return p;
}

// Loss at `params`; `pattern` receives the on/off state of every hidden unit
// over the whole rollout so callers can spot ReLU kinks between two probes.
inline double grad_problem_loss(const GradProblem& p, const std::vector<double>& params,
                                std::vector<bool>* pattern = nullptr) {
  const auto ctx = p.context();
  std::vector<double> s = p.s0, next(s.size());
  for (std::size_t t = 0; t < p.steps; ++t) {
    train::StepTape<double> tape;
    tape.p.resize(p.graph.rows * p.layout.pk);
    tape.hid.resize(p.graph.rows * p.layout.h);
    tape.keep.resize(p.graph.rows);
    train::forward_step<double>(ctx, p.graph, params.data(), s.data(), next.data(), p.noise.at(t), &tape);
    if (pattern)
      for (double v : tape.hid) pattern->push_back(v > 0.0);
    s.swap(next);
  }
  std::vector<double> ds(s.size()), g(p.layout.total);
  return train::loss_and_output_grad<double>(p.layout, p.graph, params.data(), s.data(), ds.data(), g.data());
}

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t kinks_skipped = 0;
  double max_rel_error = 0.0;
  std::vector<std::size_t> per_tensor = std::vector<std::size_t>(5, 0);  // W1 B1 W2 B2 WC
};

// Central differences on `per_tensor` random coordinates of each weight
// tensor. Coordinates whose probes straddle a ReLU kink are redrawn.
inline GradCheckReport check_gradients(const GradProblem& p, std::size_t per_tensor, double eps, std::uint64_t seed) {
  std::vector<double> s = p.s0, grad;
  train::loss_and_gradient<double>(p.context(), p.graph, p.params.data(), s, p.steps, p.noise, grad);

  const auto& L = p.layout;
  const std::size_t begin[5] = {L.w1, L.b1, L.w2, L.b2, L.wc};
  const std::size_t end[5] = {L.b1, L.w2, L.b2, L.head ? L.wc : L.total, L.total};
  CounterRng rng(derive_key(seed, 0x6c));
  GradCheckReport rep;
  for (std::size_t k = 0; k < (L.head ? 5u : 4u); ++k) {
    std::size_t tries = 0;
    while (rep.per_tensor[k] < per_tensor && tries++ < per_tensor * 20) {
      const std::size_t i = begin[k] + rng.below(end[k] - begin[k]);
      auto plus = p.params, minus = p.params;
      plus[i] += eps;
      minus[i] -= eps;
      std::vector<bool> pat_plus, pat_minus, pat0;
      const double lp = grad_problem_loss(p, plus, &pat_plus);
      const double lm = grad_problem_loss(p, minus, &pat_minus);
      grad_problem_loss(p, p.params, &pat0);
      if (pat_plus != pat0 || pat_minus != pat0) {
        ++rep.kinks_skipped;
        continue;
      }
      const double numeric = (lp - lm) / (2 * eps);
      const double analytic = grad[i];
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      rep.max_rel_error = std::max(rep.max_rel_error, std::abs(numeric - analytic) / scale);
      ++rep.per_tensor[k];
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace ncaswarm::testing
