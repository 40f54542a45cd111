#include "ncaswarm/vm/program.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace ncaswarm::vm {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'N', 'C', 'A', 'P'};
constexpr std::uint8_t kTagInt = 0;
constexpr std::uint8_t kTagFloat = 1;

// Argument roles per opcode. The layout of every descriptor is fixed by its
// opcode; the arg_count byte is redundant but lets a reader skip ops.
enum class Role { Src, Dst, Len, Const };

struct Schema {
  std::vector<Role> roles;
};

const Schema& schema(Opcode op) {
  using enum Role;
  static const Schema nop{{}};
  static const Schema binary{{Src, Src, Dst, Len}};
  static const Schema matmul{{Src, Src, Dst, Len, Len, Len}};
  static const Schema unary{{Src, Dst, Len}};
  static const Schema fill{{Dst, Len, Const}};
  static const Schema fill_rand{{Dst, Len}};
  static const Schema step{{Src, Dst, Len, Const}};
  switch (op) {
    case Opcode::Nop: return nop;
    case Opcode::Add:
    case Opcode::Mul: return binary;
    case Opcode::MatMul: return matmul;
    case Opcode::Relu:
    case Opcode::Max:
    case Opcode::Softmax:
    case Opcode::ArgMax: return unary;
    case Opcode::Fill: return fill;
    case Opcode::FillRand: return fill_rand;
    case Opcode::Step: return step;
  }
  return nop;
}

[[noreturn]] void fail(ErrorCode code, const std::string& detail) { throw ProgramError(code, detail); }

std::string tensor_name(std::uint16_t id) { return "t" + std::to_string(id); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(ErrorCode::TruncatedProgram, std::string("truncated while reading ") + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  float f32(const char* what) {
    need(4, what);
    std::uint32_t bits = 0;
    for (int i = 3; i >= 0; --i) bits = (bits << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return std::bit_cast<float>(bits);
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    out_.push_back(static_cast<std::uint8_t>(v & 0xff));
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void f32(float f) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

void check_extent(const TensorEntry& t, std::size_t needed, const OpDescriptor& op) {
  if (needed > t.length) {
    fail(ErrorCode::OutOfBoundsLength, std::string(mnemonic(op.opcode)) + " needs " + std::to_string(needed) +
                                           " elements of " + tensor_name(t.id) + " (length " +
                                           std::to_string(t.length) + ")");
  }
}

}  // namespace

bool is_known_opcode(std::uint8_t code) noexcept {
  return code <= 0x08 || code == 0x0B || code == 0x0C;
}

std::string_view mnemonic(Opcode op) noexcept {
  switch (op) {
    case Opcode::Nop: return "NOP";
    case Opcode::Add: return "ADD";
    case Opcode::MatMul: return "MAT_MUL";
    case Opcode::Relu: return "RELU";
    case Opcode::Fill: return "FILL";
    case Opcode::Max: return "MAX";
    case Opcode::Softmax: return "SOFTMAX";
    case Opcode::Step: return "STEP";
    case Opcode::Mul: return "MUL";
    case Opcode::FillRand: return "FILL_RAND";
    case Opcode::ArgMax: return "ARG_MAX";
  }
  return "?";
}

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedProgram: return "TruncatedProgram";
    case ErrorCode::UnknownOpcode: return "UnknownOpcode";
    case ErrorCode::DanglingTensorId: return "DanglingTensorId";
    case ErrorCode::WriteToReadOnly: return "WriteToReadOnly";
    case ErrorCode::OutOfBoundsLength: return "OutOfBoundsLength";
    case ErrorCode::MalformedProgram: return "MalformedProgram";
  }
  return "?";
}

ProgramError::ProgramError(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

namespace ops {
OpDescriptor nop() { return {Opcode::Nop, {}}; }
OpDescriptor add(std::uint8_t a, std::uint8_t b, std::uint8_t dst, std::uint16_t n) {
  return {Opcode::Add, {std::uint16_t{a}, std::uint16_t{b}, std::uint16_t{dst}, n}};
}
OpDescriptor mul(std::uint8_t a, std::uint8_t b, std::uint8_t dst, std::uint16_t n) {
  return {Opcode::Mul, {std::uint16_t{a}, std::uint16_t{b}, std::uint16_t{dst}, n}};
}
OpDescriptor mat_mul(std::uint8_t a, std::uint8_t b, std::uint8_t dst, std::uint16_t m, std::uint16_t k,
                     std::uint16_t n) {
  return {Opcode::MatMul, {std::uint16_t{a}, std::uint16_t{b}, std::uint16_t{dst}, m, k, n}};
}
OpDescriptor relu(std::uint8_t a, std::uint8_t dst, std::uint16_t n) {
  return {Opcode::Relu, {std::uint16_t{a}, std::uint16_t{dst}, n}};
}
OpDescriptor fill(std::uint8_t dst, std::uint16_t n, float value) {
  return {Opcode::Fill, {std::uint16_t{dst}, n, value}};
}
OpDescriptor fill_rand(std::uint8_t dst, std::uint16_t n) { return {Opcode::FillRand, {std::uint16_t{dst}, n}}; }
OpDescriptor max(std::uint8_t a, std::uint8_t dst, std::uint16_t n) {
  return {Opcode::Max, {std::uint16_t{a}, std::uint16_t{dst}, n}};
}
OpDescriptor softmax(std::uint8_t a, std::uint8_t dst, std::uint16_t n) {
  return {Opcode::Softmax, {std::uint16_t{a}, std::uint16_t{dst}, n}};
}
OpDescriptor step(std::uint8_t a, std::uint8_t dst, std::uint16_t n, float threshold) {
  return {Opcode::Step, {std::uint16_t{a}, std::uint16_t{dst}, n, threshold}};
}
OpDescriptor arg_max(std::uint8_t a, std::uint8_t dst, std::uint16_t n) {
  return {Opcode::ArgMax, {std::uint16_t{a}, std::uint16_t{dst}, n}};
}
}  // namespace ops

const TensorEntry* Program::find(std::uint8_t id) const noexcept {
  for (const auto& t : tensors)
    if (t.id == id) return &t;
  return nullptr;
}

std::size_t Program::scratch_size() const noexcept {
  std::size_t size = 0;
  for (const auto& t : tensors)
    if (t.kind == TensorKind::Writable) size = std::max<std::size_t>(size, std::size_t{t.buffer_offset} + t.length);
  return size;
}

void validate(const Program& p) {
  if (p.header.version != kFormatVersion)
    fail(ErrorCode::UnsupportedVersion, "version " + std::to_string(p.header.version));
  if (p.header.state_size == 0) fail(ErrorCode::MalformedProgram, "state_size must be at least 1");
  if (p.tensors.size() < 2 || p.tensors.size() > 255)
    fail(ErrorCode::MalformedProgram, "tensor count " + std::to_string(p.tensors.size()) + " out of range");
  if (p.operations.size() > 0xffff) fail(ErrorCode::MalformedProgram, "too many operations");

  std::array<bool, 256> seen{};
  std::vector<std::pair<std::size_t, std::size_t>> regions;
  for (const auto& t : p.tensors) {
    if (seen[t.id]) fail(ErrorCode::MalformedProgram, "duplicate tensor id " + tensor_name(t.id));
    seen[t.id] = true;
    if (t.kind == TensorKind::ReadOnly) {
      if (t.data.size() != t.length)
        fail(ErrorCode::MalformedProgram, "payload size mismatch for " + tensor_name(t.id));
    } else {
      if (!t.data.empty()) fail(ErrorCode::MalformedProgram, "writable tensor carries payload: " + tensor_name(t.id));
      regions.emplace_back(t.buffer_offset, std::size_t{t.buffer_offset} + t.length);
    }
  }

  const auto* state = p.find(kStateTensor);
  const auto* output = p.find(kOutputTensor);
  if (state == nullptr) fail(ErrorCode::DanglingTensorId, "state tensor t0 missing");
  if (output == nullptr) fail(ErrorCode::DanglingTensorId, "output tensor t255 missing");
  if (state->kind != TensorKind::Writable || output->kind != TensorKind::Writable)
    fail(ErrorCode::WriteToReadOnly, "reserved tensors t0 and t255 must be writable");
  if (state->length != kNeighborSlots * p.header.state_size)
    fail(ErrorCode::OutOfBoundsLength, "t0 must hold 5 x state_size elements");
  if (output->length != kOutputLength) fail(ErrorCode::OutOfBoundsLength, "t255 must hold 75 elements");

  std::sort(regions.begin(), regions.end());
  for (std::size_t i = 1; i < regions.size(); ++i)
    if (regions[i].first < regions[i - 1].second)
      fail(ErrorCode::MalformedProgram, "writable tensors overlap in the scratch buffer");

  for (std::size_t idx = 0; idx < p.operations.size(); ++idx) {
    const auto& op = p.operations[idx];
    if (!is_known_opcode(static_cast<std::uint8_t>(op.opcode)))
      fail(ErrorCode::UnknownOpcode, "opcode " + std::to_string(static_cast<int>(op.opcode)));
    const auto& roles = schema(op.opcode).roles;
    const std::string where = "op " + std::to_string(idx) + " (" + std::string(mnemonic(op.opcode)) + ")";
    if (op.args.size() != roles.size()) fail(ErrorCode::MalformedProgram, where + ": wrong argument count");

    std::vector<const TensorEntry*> srcs;
    const TensorEntry* dst = nullptr;
    std::vector<std::size_t> lens;
    for (std::size_t i = 0; i < roles.size(); ++i) {
      const bool is_float = std::holds_alternative<float>(op.args[i]);
      if ((roles[i] == Role::Const) != is_float) fail(ErrorCode::MalformedProgram, where + ": argument type mismatch");
      if (roles[i] == Role::Const) continue;
      const auto v = std::get<std::uint16_t>(op.args[i]);
      if (roles[i] == Role::Len) {
        lens.push_back(v);
        continue;
      }
      const TensorEntry* t = v <= 255 ? p.find(static_cast<std::uint8_t>(v)) : nullptr;
      if (t == nullptr) fail(ErrorCode::DanglingTensorId, where + " references " + tensor_name(v));
      if (roles[i] == Role::Src) {
        srcs.push_back(t);
      } else {
        if (t->kind != TensorKind::Writable) fail(ErrorCode::WriteToReadOnly, where + " writes " + tensor_name(t->id));
        dst = t;
      }
    }

    switch (op.opcode) {
      case Opcode::Nop: break;
      case Opcode::Add:
      case Opcode::Mul:
        check_extent(*srcs[0], lens[0], op);
        check_extent(*srcs[1], lens[0], op);
        check_extent(*dst, lens[0], op);
        break;
      case Opcode::MatMul: {
        const std::size_t m = lens[0], k = lens[1], n = lens[2];
        check_extent(*srcs[0], m * k, op);
        check_extent(*srcs[1], k * n, op);
        check_extent(*dst, m * n, op);
        if (dst == srcs[0] || dst == srcs[1])
          fail(ErrorCode::MalformedProgram, where + ": destination aliases a source");
        break;
      }
      case Opcode::Relu:
      case Opcode::Softmax:
      case Opcode::Step:
        check_extent(*srcs[0], lens[0], op);
        check_extent(*dst, lens[0], op);
        break;
      case Opcode::Fill:
      case Opcode::FillRand: check_extent(*dst, lens[0], op); break;
      case Opcode::Max:
      case Opcode::ArgMax:
        if (lens[0] == 0) fail(ErrorCode::OutOfBoundsLength, where + ": reduction over zero elements");
        check_extent(*srcs[0], lens[0], op);
        check_extent(*dst, 1, op);
        break;
    }
  }
}

Program load_program(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  in.need(kMagic.size(), "magic");
  for (std::size_t i = 0; i < kMagic.size(); ++i)
    if (in.u8("magic") != kMagic[i]) fail(ErrorCode::BadMagic, "expected \"NCAP\"");

  Program p;
  p.header.version = in.u16("version");
  if (p.header.version != kFormatVersion)
    fail(ErrorCode::UnsupportedVersion, "version " + std::to_string(p.header.version));
  p.header.state_size = in.u8("state_size");
  const std::uint8_t tensor_count = in.u8("tensor_count");
  const std::uint16_t op_count = in.u16("op_count");
  p.header.pre_delay_ms = in.u16("pre_delay_ms");
  p.header.post_delay_ms = in.u16("post_delay_ms");

  p.tensors.reserve(tensor_count);
  for (std::uint8_t i = 0; i < tensor_count; ++i) {
    TensorEntry t;
    t.id = in.u8("tensor id");
    const auto kind = in.u8("tensor kind");
    if (kind > 1) fail(ErrorCode::MalformedProgram, "unknown tensor kind " + std::to_string(kind));
    t.kind = static_cast<TensorKind>(kind);
    t.length = in.u16("tensor length");
    if (t.kind == TensorKind::ReadOnly) {
      in.need(std::size_t{t.length} * 4, "tensor payload");
      t.data.resize(t.length);
      for (auto& v : t.data) v = in.f32("tensor payload");
    } else {
      t.buffer_offset = in.u16("buffer offset");
    }
    p.tensors.push_back(std::move(t));
  }

  p.operations.reserve(op_count);
  for (std::uint16_t i = 0; i < op_count; ++i) {
    const auto code = in.u8("opcode");
    if (!is_known_opcode(code)) fail(ErrorCode::UnknownOpcode, "opcode 0x" + [&] {
      std::ostringstream s;
      s << std::hex << static_cast<int>(code);
      return s.str();
    }());
    OpDescriptor op;
    op.opcode = static_cast<Opcode>(code);
    const auto argc = in.u8("arg count");
    for (std::uint8_t a = 0; a < argc; ++a) {
      const auto tag = in.u8("arg tag");
      if (tag == kTagInt)
        op.args.emplace_back(in.u16("int arg"));
      else if (tag == kTagFloat)
        op.args.emplace_back(in.f32("float arg"));
      else
        fail(ErrorCode::MalformedProgram, "unknown argument tag " + std::to_string(tag));
    }
    p.operations.push_back(std::move(op));
  }
  if (!in.done()) fail(ErrorCode::MalformedProgram, "trailing bytes after operation list");

  validate(p);
  return p;
}

std::vector<std::uint8_t> save_program(const Program& p) {
  Writer out;
  for (auto b : kMagic) out.u8(b);
  out.u16(p.header.version);
  out.u8(p.header.state_size);
  out.u8(static_cast<std::uint8_t>(p.tensors.size()));
  out.u16(static_cast<std::uint16_t>(p.operations.size()));
  out.u16(p.header.pre_delay_ms);
  out.u16(p.header.post_delay_ms);
  for (const auto& t : p.tensors) {
    out.u8(t.id);
    out.u8(static_cast<std::uint8_t>(t.kind));
    out.u16(t.length);
    if (t.kind == TensorKind::ReadOnly)
      for (float v : t.data) out.f32(v);
    else
      out.u16(t.buffer_offset);
  }
  for (const auto& op : p.operations) {
    out.u8(static_cast<std::uint8_t>(op.opcode));
    out.u8(static_cast<std::uint8_t>(op.args.size()));
    for (const auto& a : op.args) {
      if (const auto* i = std::get_if<std::uint16_t>(&a)) {
        out.u8(kTagInt);
        out.u16(*i);
      } else {
        out.u8(kTagFloat);
        out.f32(std::get<float>(a));
      }
    }
  }
  return out.take();
}

Program read_program_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open program file " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load_program(bytes);
}

void write_program_file(const std::string& path, const Program& program) {
  const auto bytes = save_program(program);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write program file " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string disassemble(const OpDescriptor& op) {
  std::ostringstream s;
  s << mnemonic(op.opcode);
  auto t = [&](std::size_t i) { return tensor_name(op.int_arg(i)); };
  switch (op.opcode) {
    case Opcode::Nop: break;
    case Opcode::Add:
    case Opcode::Mul: s << ' ' << t(0) << ' ' << t(1) << " -> " << t(2) << " len=" << op.int_arg(3); break;
    case Opcode::MatMul:
      s << ' ' << t(0) << ' ' << t(1) << " -> " << t(2) << " m=" << op.int_arg(3) << " k=" << op.int_arg(4)
        << " n=" << op.int_arg(5);
      break;
    case Opcode::Relu:
    case Opcode::Max:
    case Opcode::Softmax:
    case Opcode::ArgMax: s << ' ' << t(0) << " -> " << t(1) << " len=" << op.int_arg(2); break;
    case Opcode::Step: s << ' ' << t(0) << " -> " << t(1) << " len=" << op.int_arg(2) << " t=" << op.float_arg(3); break;
    case Opcode::Fill: s << ' ' << op.float_arg(2) << " -> " << t(0) << " len=" << op.int_arg(1); break;
    case Opcode::FillRand: s << " -> " << t(0) << " len=" << op.int_arg(1); break;
  }
  return s.str();
}

std::string disassemble(const Program& p) {
  std::ostringstream s;
  s << "; version=" << p.header.version << " state_size=" << int{p.header.state_size}
    << " tensors=" << p.tensors.size() << " ops=" << p.operations.size() << " delays=" << p.header.pre_delay_ms
    << '/' << p.header.post_delay_ms << '\n';
  for (const auto& t : p.tensors) {
    s << "; " << tensor_name(t.id) << ' ' << (t.kind == TensorKind::ReadOnly ? "R" : "W") << " len=" << t.length;
    if (t.kind == TensorKind::Writable) s << " @" << t.buffer_offset;
    s << '\n';
  }
  for (const auto& op : p.operations) s << disassemble(op) << '\n';
  return s.str();
}

}  // namespace ncaswarm::vm
