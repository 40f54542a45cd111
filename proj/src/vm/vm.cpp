#include "ncaswarm/vm/vm.hpp"

#include <algorithm>
#include <cmath>

namespace ncaswarm::vm {

VmInstance::VmInstance(std::shared_ptr<const Program> program, CounterRng rng)
    : program_(std::move(program)), rng_(rng) {
  validate(*program_);
  scratch_.assign(program_->scratch_size(), 0.0f);
  for (std::size_t i = 0; i < program_->tensors.size(); ++i) {
    const auto& t = program_->tensors[i];
    auto& s = slots_[t.id];
    s.present = true;
    s.read_only = t.kind == TensorKind::ReadOnly;
    s.offset = s.read_only ? static_cast<std::uint32_t>(i) : t.buffer_offset;
    s.length = t.length;
  }
}

const float* VmInstance::src(std::uint16_t id) const {
  const auto& s = slots_[id];
  if (s.read_only) return program_->tensors[s.offset].data.data();
  return scratch_.data() + s.offset;
}

float* VmInstance::dst(std::uint16_t id) { return scratch_.data() + slots_[id].offset; }

std::span<const float> VmInstance::tensor(std::uint8_t id) const {
  const auto& s = slots_[id];
  if (!s.present) throw std::out_of_range("no tensor t" + std::to_string(id));
  return {src(id), s.length};
}

void VmInstance::exec_op(const OpDescriptor& op) {
  switch (op.opcode) {
    case Opcode::Nop: return;
    case Opcode::Add: {
      const float* a = src(op.int_arg(0));
      const float* b = src(op.int_arg(1));
      float* d = dst(op.int_arg(2));
      const std::size_t n = op.int_arg(3);
      for (std::size_t i = 0; i < n; ++i) d[i] = a[i] + b[i];
      return;
    }
    case Opcode::Mul: {
      const float* a = src(op.int_arg(0));
      const float* b = src(op.int_arg(1));
      float* d = dst(op.int_arg(2));
      const std::size_t n = op.int_arg(3);
      for (std::size_t i = 0; i < n; ++i) d[i] = a[i] * b[i];
      return;
    }
    case Opcode::MatMul: {
      const float* a = src(op.int_arg(0));
      const float* b = src(op.int_arg(1));
      float* d = dst(op.int_arg(2));
      const std::size_t m = op.int_arg(3), k = op.int_arg(4), n = op.int_arg(5);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < n; ++j) {
          float acc = 0.0f;
          for (std::size_t i = 0; i < k; ++i) acc += a[r * k + i] * b[i * n + j];
          d[r * n + j] = acc;
        }
      }
      return;
    }
    case Opcode::Relu: {
      const float* a = src(op.int_arg(0));
      float* d = dst(op.int_arg(1));
      const std::size_t n = op.int_arg(2);
      for (std::size_t i = 0; i < n; ++i) d[i] = a[i] > 0.0f ? a[i] : 0.0f;
      return;
    }
    case Opcode::Fill: {
      float* d = dst(op.int_arg(0));
      std::fill_n(d, op.int_arg(1), op.float_arg(2));
      return;
    }
    case Opcode::FillRand: {
      float* d = dst(op.int_arg(0));
      const std::size_t n = op.int_arg(1);
      for (std::size_t i = 0; i < n; ++i) d[i] = rng_.uniform();
      return;
    }
    case Opcode::Max: {
      const float* a = src(op.int_arg(0));
      const std::size_t n = op.int_arg(2);
      float m = a[0];
      for (std::size_t i = 1; i < n; ++i) m = a[i] > m ? a[i] : m;
      dst(op.int_arg(1))[0] = m;
      return;
    }
    case Opcode::ArgMax: {
      const float* a = src(op.int_arg(0));
      const std::size_t n = op.int_arg(2);
      std::size_t best = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (a[i] > a[best]) best = i;
      dst(op.int_arg(1))[0] = static_cast<float>(best);
      return;
    }
    case Opcode::Softmax: {
      const float* a = src(op.int_arg(0));
      float* d = dst(op.int_arg(1));
      const std::size_t n = op.int_arg(2);
      if (n == 0) return;
      float m = a[0];
      for (std::size_t i = 1; i < n; ++i) m = a[i] > m ? a[i] : m;
      float sum = 0.0f;
      for (std::size_t i = 0; i < n; ++i) {
        d[i] = std::exp(a[i] - m);
        sum += d[i];
      }
      for (std::size_t i = 0; i < n; ++i) d[i] /= sum;
      return;
    }
    case Opcode::Step: {
      const float* a = src(op.int_arg(0));
      float* d = dst(op.int_arg(1));
      const std::size_t n = op.int_arg(2);
      const float t = op.float_arg(3);
      for (std::size_t i = 0; i < n; ++i) d[i] = a[i] >= t ? 1.0f : 0.0f;
      return;
    }
  }
}

CycleResult VmInstance::execute_cycle(std::span<const float> input_state) {
  const std::size_t c = state_size();
  if (input_state.size() != kNeighborSlots * c) throw std::invalid_argument("input state must have 5 x state_size elements");
  std::copy(input_state.begin(), input_state.end(), dst(kStateTensor));
  for (const auto& op : program_->operations) exec_op(op);
  CycleResult out;
  const float* state = src(kStateTensor);
  out.next_state.assign(state, state + c);
  const float* led = src(kOutputTensor);
  out.led_output.assign(led, led + kOutputLength);
  return out;
}

}  // namespace ncaswarm::vm
