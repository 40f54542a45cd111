#pragma once

#include <array>
#include <memory>
#include <span>
#include <vector>

#include "ncaswarm/rng.hpp"
#include "ncaswarm/vm/program.hpp"

namespace ncaswarm::vm {

struct CycleResult {
  std::vector<float> next_state;  // length c
  std::vector<float> led_output;  // length 75
};

// Executes a validated Program for one cell. Owns the scratch buffer that
// backs every writable tensor; read-only tensors are read in place from the
// shared program. Not re-entrant; one instance per cell.
class VmInstance {
 public:
  VmInstance(std::shared_ptr<const Program> program, CounterRng rng);

  // input_state is [self, port0, port1, port2, port3] in the cell's local
  // frame, each segment state_size long; absent neighbors are zeros.
  CycleResult execute_cycle(std::span<const float> input_state);

  // Runs a single descriptor against the current scratch buffer.
  void exec_op(const OpDescriptor& op);

  const Program& program() const noexcept { return *program_; }
  const std::shared_ptr<const Program>& program_ptr() const noexcept { return program_; }
  std::size_t state_size() const noexcept { return program_->header.state_size; }

  std::span<const float> scratch() const noexcept { return scratch_; }
  std::span<float> scratch() noexcept { return scratch_; }
  std::span<const float> tensor(std::uint8_t id) const;

  const CounterRng& rng() const noexcept { return rng_; }
  void set_rng(CounterRng rng) noexcept { rng_ = rng; }

 private:
  struct Slot {
    bool present = false;
    bool read_only = false;
    std::uint32_t offset = 0;  // into scratch_ (writable) or index into program tensors (read-only)
    std::uint16_t length = 0;
  };

  const float* src(std::uint16_t id) const;
  float* dst(std::uint16_t id);

  std::shared_ptr<const Program> program_;
  std::vector<float> scratch_;
  std::array<Slot, 256> slots_{};
  CounterRng rng_;
};

}  // namespace ncaswarm::vm
