#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace ncaswarm::vm {

inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::uint8_t kStateTensor = 0;
inline constexpr std::uint8_t kOutputTensor = 255;
inline constexpr std::size_t kLedCount = 25;
inline constexpr std::size_t kOutputLength = kLedCount * 3;
inline constexpr std::size_t kNeighborSlots = 5;  // self, then four ports

enum class Opcode : std::uint8_t {
  Nop = 0x00,
  Add = 0x01,
  MatMul = 0x02,
  Relu = 0x03,
  Fill = 0x04,
  Max = 0x05,
  Softmax = 0x06,
  Step = 0x07,
  Mul = 0x08,
  FillRand = 0x0B,
  ArgMax = 0x0C,
};

bool is_known_opcode(std::uint8_t code) noexcept;
std::string_view mnemonic(Opcode op) noexcept;

enum class ErrorCode {
  BadMagic,
  UnsupportedVersion,
  TruncatedProgram,
  UnknownOpcode,
  DanglingTensorId,
  WriteToReadOnly,
  OutOfBoundsLength,
  MalformedProgram,
};

std::string_view to_string(ErrorCode code) noexcept;

class ProgramError : public std::runtime_error {
 public:
  ProgramError(ErrorCode code, const std::string& detail);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct ProgramHeader {
  std::uint16_t version = kFormatVersion;
  std::uint8_t state_size = 0;
  std::uint16_t pre_delay_ms = 0;
  std::uint16_t post_delay_ms = 0;

  bool operator==(const ProgramHeader&) const = default;
};

enum class TensorKind : std::uint8_t { ReadOnly = 0, Writable = 1 };

struct TensorEntry {
  std::uint8_t id = 0;
  TensorKind kind = TensorKind::Writable;
  std::uint16_t length = 0;
  std::vector<float> data;         // ReadOnly payload
  std::uint16_t buffer_offset = 0;  // Writable placement in the scratch buffer

  bool operator==(const TensorEntry&) const = default;
};

// One operation argument. Integers (tensor ids, lengths, shapes) and float
// constants are tagged separately in the binary form.
using Arg = std::variant<std::uint16_t, float>;

struct OpDescriptor {
  Opcode opcode = Opcode::Nop;
  std::vector<Arg> args;

  std::uint16_t int_arg(std::size_t i) const { return std::get<std::uint16_t>(args.at(i)); }
  float float_arg(std::size_t i) const { return std::get<float>(args.at(i)); }

  bool operator==(const OpDescriptor&) const = default;
};

// Builders for well-formed descriptors.
namespace ops {
OpDescriptor nop();
OpDescriptor add(std::uint8_t a, std::uint8_t b, std::uint8_t dst, std::uint16_t n);
OpDescriptor mul(std::uint8_t a, std::uint8_t b, std::uint8_t dst, std::uint16_t n);
OpDescriptor mat_mul(std::uint8_t a, std::uint8_t b, std::uint8_t dst, std::uint16_t m, std::uint16_t k,
                     std::uint16_t n);
OpDescriptor relu(std::uint8_t a, std::uint8_t dst, std::uint16_t n);
OpDescriptor fill(std::uint8_t dst, std::uint16_t n, float value);
OpDescriptor fill_rand(std::uint8_t dst, std::uint16_t n);
OpDescriptor max(std::uint8_t a, std::uint8_t dst, std::uint16_t n);
OpDescriptor softmax(std::uint8_t a, std::uint8_t dst, std::uint16_t n);
OpDescriptor step(std::uint8_t a, std::uint8_t dst, std::uint16_t n, float threshold);
OpDescriptor arg_max(std::uint8_t a, std::uint8_t dst, std::uint16_t n);
}  // namespace ops

struct Program {
  ProgramHeader header;
  std::vector<TensorEntry> tensors;
  std::vector<OpDescriptor> operations;

  const TensorEntry* find(std::uint8_t id) const noexcept;
  // Elements needed for all writable tensors.
  std::size_t scratch_size() const noexcept;

  bool operator==(const Program&) const = default;
};

// Validates every static constraint: tensor table consistency, op argument
// schemas, ids, destinations and declared extents. Throws ProgramError.
void validate(const Program& program);

Program load_program(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> save_program(const Program& program);

Program read_program_file(const std::string& path);
void write_program_file(const std::string& path, const Program& program);

// One op per line, e.g. "ADD t3 t4 -> t5 len=14". Debug aid only.
std::string disassemble(const Program& program);
std::string disassemble(const OpDescriptor& op);

}  // namespace ncaswarm::vm
