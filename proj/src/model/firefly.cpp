#include "ncaswarm/model/firefly.hpp"

#include "ncaswarm/model/compiler.hpp"

namespace ncaswarm::model {

FireflyResult firefly_step(float phase, bool flash_detected, const FireflyParams& p, CounterRng& rng) {
  const float u = rng.uniform();
  float s = phase + p.rate;
  if (flash_detected) {
    s = s + p.coupling * s;
    s = s + u * p.noise_max;
  }
  if (s >= p.threshold) return {0.0f, true};
  return {s, false};
}

vm::Program compile_firefly(const FireflyParams& p) {
  using namespace vm::ops;
  constexpr std::size_t c = kFireflyChannels;
  const KernelSet kernels({Kernel::Identity, Kernel::VonNeumann});
  const std::size_t pk = kernels.size() * c;

  vm::Program prog;
  prog.header.state_size = c;
  std::uint8_t next = 1;
  std::uint16_t offset = 0;
  auto writable = [&](std::uint8_t id, std::uint16_t len) {
    prog.tensors.push_back({id, vm::TensorKind::Writable, len, {}, offset});
    offset = static_cast<std::uint16_t>(offset + len);
    return id;
  };
  auto constant = [&](std::vector<float> data) {
    const auto id = next++;
    prog.tensors.push_back({id, vm::TensorKind::ReadOnly, static_cast<std::uint16_t>(data.size()), std::move(data), 0});
    return id;
  };
  auto scratch = [&](std::uint16_t len) { return writable(next++, len); };

  writable(vm::kStateTensor, static_cast<std::uint16_t>(vm::kNeighborSlots * c));
  const auto perc = constant(perception_matrix(kernels, c));
  std::vector<float> pick_phase(pk, 0.0f), pick_flashes(pk, 0.0f);
  pick_phase[kFireflyPhase] = 1.0f;          // identity block, phase channel
  pick_flashes[c + kFireflyFlash] = 1.0f;    // von Neumann block, flash channel
  const auto sel_phase = constant(std::move(pick_phase));
  const auto sel_flash = constant(std::move(pick_flashes));
  const auto rate = constant({p.rate});
  const auto coupling = constant({p.coupling});
  const auto one = constant({1.0f});
  const auto noise = constant({p.noise_max});
  const auto minus_one = constant({-1.0f});
  const auto to_phase = constant({0.0f, 1.0f, 0.0f});
  const auto to_flash = constant({0.0f, 0.0f, 1.0f});
  const auto alive = constant({1.0f, 0.0f, 0.0f});
  std::vector<float> white(vm::kOutputLength, 1.0f), red(vm::kOutputLength, 0.0f);
  for (std::size_t i = 0; i < vm::kLedCount; ++i) red[3 * i] = 1.0f;
  const auto led_white = constant(std::move(white));
  const auto led_red = constant(std::move(red));

  const auto perception = scratch(static_cast<std::uint16_t>(pk));
  const auto phase = scratch(1);
  const auto seen = scratch(1);
  const auto detected = scratch(1);
  const auto push = scratch(1);
  const auto jitter = scratch(1);
  const auto flash = scratch(1);
  const auto keep = scratch(1);
  const auto vec = scratch(c);
  const auto vec2 = scratch(c);
  const auto led_tmp = scratch(vm::kOutputLength);
  const auto out = writable(vm::kOutputTensor, vm::kOutputLength);

  auto& ops = prog.operations;
  ops.push_back(mat_mul(vm::kStateTensor, perc, perception, 1, 5 * c, pk));
  ops.push_back(mat_mul(perception, sel_phase, phase, 1, pk, 1));
  ops.push_back(mat_mul(perception, sel_flash, seen, 1, pk, 1));
  ops.push_back(step(seen, detected, 1, p.threshold));
  ops.push_back(add(phase, rate, phase, 1));
  ops.push_back(mul(phase, coupling, push, 1));
  ops.push_back(mul(push, detected, push, 1));
  ops.push_back(add(phase, push, phase, 1));
  ops.push_back(fill_rand(jitter, 1));
  ops.push_back(mul(jitter, noise, jitter, 1));
  ops.push_back(mul(jitter, detected, jitter, 1));
  ops.push_back(add(phase, jitter, phase, 1));
  ops.push_back(step(phase, flash, 1, p.threshold));
  ops.push_back(mul(flash, minus_one, keep, 1));
  ops.push_back(add(keep, one, keep, 1));
  ops.push_back(mul(phase, keep, phase, 1));
  ops.push_back(mat_mul(phase, to_phase, vec, 1, 1, c));
  ops.push_back(mat_mul(flash, to_flash, vec2, 1, 1, c));
  ops.push_back(add(vec, vec2, vec, c));
  ops.push_back(add(vec, alive, vm::kStateTensor, c));
  ops.push_back(mat_mul(phase, led_white, out, 1, 1, vm::kOutputLength));
  ops.push_back(mat_mul(flash, led_red, led_tmp, 1, 1, vm::kOutputLength));
  ops.push_back(add(out, led_tmp, out, vm::kOutputLength));

  vm::validate(prog);
  return prog;
}

}  // namespace ncaswarm::model
