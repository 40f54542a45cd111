#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncaswarm::model {

enum class Kernel : std::uint8_t { Identity, GradientX, GradientY, VonNeumann };

std::string to_string(Kernel k);
Kernel kernel_from_string(const std::string& name);

// World directions, also the order of the neighbor arrays below.
enum Direction : int { North = 0, East = 1, South = 2, West = 3 };

// Orientation as a quarter-turn count: 0, 90, 180, 270 degrees.
struct Rotation {
  std::uint8_t quarter_turns = 0;

  static Rotation from_degrees(int degrees);
  int degrees() const noexcept { return 90 * quarter_turns; }
  Rotation operator+(Rotation other) const noexcept {
    return Rotation{static_cast<std::uint8_t>((quarter_turns + other.quarter_turns) & 3u)};
  }
  bool operator==(const Rotation&) const = default;
};

// The local port p of a cell with rotation r faces world direction (p + r) mod 4.
constexpr int world_direction_of_port(int port, Rotation r) noexcept { return (port + r.quarter_turns) & 3; }

// Rotates a world-frame gradient pair by R(theta) = [[cos, -sin], [sin, cos]].
// Exact for quarter turns (pure sign flips and swaps).
template <class T>
constexpr void rotate_gradient(Rotation r, T px, T py, T& out_x, T& out_y) noexcept {
  switch (r.quarter_turns & 3u) {
    case 0: out_x = px; out_y = py; break;
    case 1: out_x = -py; out_y = px; break;
    case 2: out_x = -px; out_y = -py; break;
    default: out_x = py; out_y = -px; break;
  }
}

class KernelSet {
 public:
  KernelSet() = default;
  explicit KernelSet(std::vector<Kernel> kernels);

  static KernelSet classification() { return KernelSet({Kernel::Identity, Kernel::GradientX, Kernel::GradientY}); }

  std::size_t size() const noexcept { return kernels_.size(); }
  const std::vector<Kernel>& kernels() const noexcept { return kernels_; }
  // Index of GradientX / GradientY within the set, if present.
  std::optional<std::size_t> gradient_x() const noexcept { return gx_; }
  std::optional<std::size_t> gradient_y() const noexcept { return gy_; }

  bool operator==(const KernelSet& o) const { return kernels_ == o.kernels_; }

 private:
  std::vector<Kernel> kernels_;
  std::optional<std::size_t> gx_, gy_;
};

struct ClassificationHead {
  std::size_t inputs = 0;   // R: leading state channels fed to the head
  std::size_t classes = 0;  // C
  std::vector<float> weights;  // R x C row-major
};

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Trainable description of the update rule plus output rendering.
struct NcaModel {
  std::size_t channels = 0;  // c
  std::size_t hidden = 0;    // h
  KernelSet kernels;
  std::vector<float> w1;  // (n_k * c) x h
  std::vector<float> b1;  // h
  std::vector<float> w2;  // h x c
  std::vector<float> b2;  // c
  std::optional<ClassificationHead> head;
  std::size_t classes = 0;     // C
  std::vector<float> glyphs;   // C x 75

  std::size_t perception_size() const noexcept { return kernels.size() * channels; }
  // Throws ModelError when dimensions are inconsistent or weights non-finite.
  void validate() const;

  // Zero-initialised model with the given shape.
  static NcaModel zeros(std::size_t channels, std::size_t hidden, KernelSet kernels, std::size_t classes,
                        std::optional<std::size_t> head_inputs);
};

struct CellState {
  std::vector<float> channels;
  Rotation theta;
  bool alive = false;

  static CellState seed(std::size_t c, Rotation theta = {});
  static CellState dead(std::size_t c);
};

using NeighborView = std::array<std::optional<std::span<const float>>, 4>;

// Perception vector of one cell. Neighbors are given in world order
// (N, E, S, W); missing ones read as zeros. The gradient pair is rotated into
// the cell's own frame.
std::vector<float> perceive(const KernelSet& kernels, std::span<const float> self, const NeighborView& neighbors,
                            Rotation theta);

// One update step (alive-masked, channel 0 clamped).
CellState update(const NcaModel& model, const CellState& self, std::span<const float> perception);

// Same arithmetic as `update` on a raw channel span.
void update_in_place(const NcaModel& model, std::span<float> state, bool alive, std::span<const float> perception);

class DeadCellError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<float> classify(const NcaModel& model, const CellState& state);
std::vector<float> classify(const NcaModel& model, std::span<const float> channels);

std::vector<float> softmax(std::span<const float> logits);
std::vector<float> render_glyph(std::span<const float> scores, std::span<const float> glyphs, std::size_t classes);

std::size_t argmax(std::span<const float> values) noexcept;

}  // namespace ncaswarm::model
