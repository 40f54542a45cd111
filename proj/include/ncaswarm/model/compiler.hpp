#pragma once

#include <stdexcept>
#include <string>

#include "ncaswarm/model/model.hpp"
#include "ncaswarm/vm/program.hpp"

namespace ncaswarm::model {

enum class CompileErrorCode { UnsupportedKernel, ChannelMismatch };

class CompileError : public std::runtime_error {
 public:
  CompileError(CompileErrorCode code, const std::string& detail);
  CompileErrorCode code() const noexcept { return code_; }

 private:
  CompileErrorCode code_;
};

// Constant (5c) x (n_k c) matrix mapping the local-frame input stack
// [self, port0..port3] onto the perception vector. Row = slot * c + channel.
std::vector<float> perception_matrix(const KernelSet& kernels, std::size_t channels);

// Lowers perceive -> update -> classify -> glyph render onto the opcode set.
// Rotation compensation is not emitted: the VM input is already in the
// cell's local frame.
vm::Program compile(const NcaModel& model);

}  // namespace ncaswarm::model
