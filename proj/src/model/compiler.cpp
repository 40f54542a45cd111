#include "ncaswarm/model/compiler.hpp"

#include <limits>

namespace ncaswarm::model {

namespace {

constexpr std::size_t kMaxLength = std::numeric_limits<std::uint16_t>::max();

std::string_view code_name(CompileErrorCode c) {
  return c == CompileErrorCode::UnsupportedKernel ? "UnsupportedKernel" : "ChannelMismatch";
}

// Incrementally lays out a program: read-only constants and writable scratch
// regions with ids handed out in creation order.
class ProgramBuilder {
 public:
  explicit ProgramBuilder(std::size_t channels) {
    program_.header.state_size = static_cast<std::uint8_t>(channels);
    writable(vm::kStateTensor, vm::kNeighborSlots * channels);
  }

  std::uint8_t constant(std::vector<float> data) {
    check_length(data.size());
    vm::TensorEntry t;
    t.id = next_id_++;
    t.kind = vm::TensorKind::ReadOnly;
    t.length = static_cast<std::uint16_t>(data.size());
    t.data = std::move(data);
    program_.tensors.push_back(std::move(t));
    return program_.tensors.back().id;
  }

  std::uint8_t scratch(std::size_t length) { return writable(next_id_++, length); }

  std::uint8_t output() { return writable(vm::kOutputTensor, vm::kOutputLength); }

  void emit(vm::OpDescriptor op) { program_.operations.push_back(std::move(op)); }

  vm::Program finish() {
    vm::validate(program_);
    return std::move(program_);
  }

 private:
  std::uint8_t writable(std::uint8_t id, std::size_t length) {
    check_length(length);
    if (offset_ + length > kMaxLength)
      throw CompileError(CompileErrorCode::ChannelMismatch, "scratch buffer exceeds 16-bit addressing");
    vm::TensorEntry t;
    t.id = id;
    t.kind = vm::TensorKind::Writable;
    t.length = static_cast<std::uint16_t>(length);
    t.buffer_offset = static_cast<std::uint16_t>(offset_);
    offset_ += length;
    program_.tensors.push_back(std::move(t));
    return id;
  }

  static void check_length(std::size_t n) {
    if (n > kMaxLength) throw CompileError(CompileErrorCode::ChannelMismatch, "tensor longer than 65535 elements");
  }

  vm::Program program_;
  std::uint8_t next_id_ = 1;
  std::size_t offset_ = 0;
};

std::uint16_t u16(std::size_t n) { return static_cast<std::uint16_t>(n); }

}  // namespace

CompileError::CompileError(CompileErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(code_name(code)) + ": " + detail), code_(code) {}

std::vector<float> perception_matrix(const KernelSet& kernels, std::size_t c) {
  const std::size_t cols = kernels.size() * c;
  std::vector<float> m(vm::kNeighborSlots * c * cols, 0.0f);
  // slot 0 = self, slots 1..4 = local ports north, east, south, west
  auto set = [&](std::size_t slot, std::size_t ch, std::size_t k, float v) { m[(slot * c + ch) * cols + k * c + ch] = v; };
  for (std::size_t k = 0; k < kernels.size(); ++k) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      switch (kernels.kernels()[k]) {
        case Kernel::Identity: set(0, ch, k, 1.0f); break;
        case Kernel::GradientX:
          set(1 + East, ch, k, 1.0f);
          set(1 + West, ch, k, -1.0f);
          break;
        case Kernel::GradientY:
          set(1 + North, ch, k, 1.0f);
          set(1 + South, ch, k, -1.0f);
          break;
        case Kernel::VonNeumann:
          for (int d = 0; d < 4; ++d) set(1 + static_cast<std::size_t>(d), ch, k, 1.0f);
          break;
      }
    }
  }
  return m;
}

vm::Program compile(const NcaModel& model) {
  model.validate();
  const std::size_t c = model.channels, h = model.hidden, C = model.classes;
  if (c > 255) throw CompileError(CompileErrorCode::ChannelMismatch, "state size must fit in 8 bits");
  if (model.kernels.size() == 0) throw CompileError(CompileErrorCode::UnsupportedKernel, "empty kernel set");
  const std::size_t pk = model.perception_size();
  const std::size_t in = vm::kNeighborSlots * c;

  ProgramBuilder b(c);
  const auto perc = b.constant(perception_matrix(model.kernels, c));
  const auto w1 = b.constant(model.w1);
  const auto b1 = b.constant(model.b1);
  const auto w2 = b.constant(model.w2);
  const auto b2 = b.constant(model.b2);
  std::vector<float> keep(c, 1.0f), alive(c, 0.0f);
  keep[0] = 0.0f;
  alive[0] = 1.0f;
  const auto keep_t = b.constant(std::move(keep));
  const auto alive_t = b.constant(std::move(alive));

  std::size_t head_rows = 0;
  std::vector<float> head;
  if (model.head) {
    head_rows = model.head->inputs;
    head = model.head->weights;
  } else {
    head_rows = C + 1;
    head.assign(head_rows * C, 0.0f);
    for (std::size_t j = 0; j < C; ++j) head[(1 + j) * C + j] = 1.0f;
  }
  const auto head_t = b.constant(std::move(head));
  const auto glyph_t = b.constant(model.glyphs);

  const auto p_t = b.scratch(pk);
  const auto h_t = b.scratch(h);
  const auto d_t = b.scratch(c);
  const auto o_t = b.scratch(C);
  const auto prob_t = b.scratch(C);
  const auto out_t = b.output();
  const auto s_t = vm::kStateTensor;

  b.emit(vm::ops::mat_mul(s_t, perc, p_t, 1, u16(in), u16(pk)));
  b.emit(vm::ops::mat_mul(p_t, w1, h_t, 1, u16(pk), u16(h)));
  b.emit(vm::ops::add(h_t, b1, h_t, u16(h)));
  b.emit(vm::ops::relu(h_t, h_t, u16(h)));
  b.emit(vm::ops::mat_mul(h_t, w2, d_t, 1, u16(h), u16(c)));
  b.emit(vm::ops::add(d_t, b2, d_t, u16(c)));
  b.emit(vm::ops::add(s_t, d_t, s_t, u16(c)));
  b.emit(vm::ops::mul(s_t, keep_t, s_t, u16(c)));
  b.emit(vm::ops::add(s_t, alive_t, s_t, u16(c)));
  b.emit(vm::ops::mat_mul(s_t, head_t, o_t, 1, u16(head_rows), u16(C)));
  b.emit(vm::ops::softmax(o_t, prob_t, u16(C)));
  b.emit(vm::ops::mat_mul(prob_t, glyph_t, out_t, 1, u16(C), u16(vm::kOutputLength)));
  return b.finish();
}

}  // namespace ncaswarm::model
