#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncaswarm/model/model.hpp"
#include "ncaswarm/vm/vm.hpp"

namespace ncaswarm::sim {

enum class SimErrorCode { PositionOccupied, UnknownCell, NotAttached, NoProgram, BadScenario };

std::string_view to_string(SimErrorCode code) noexcept;

class SimError : public std::runtime_error {
 public:
  SimError(SimErrorCode code, const std::string& detail);
  SimErrorCode code() const noexcept { return code_; }

 private:
  SimErrorCode code_;
};

struct GridPos {
  int x = 0;
  int y = 0;  // grows southwards
  auto operator<=>(const GridPos&) const = default;
};

GridPos step_towards(GridPos p, int world_direction) noexcept;

enum class SchedulerKind { Synchronous, Jittered };

std::string to_string(SchedulerKind k);
SchedulerKind scheduler_from_string(const std::string& s);

struct WorldConfig {
  std::uint64_t seed = 1;
  SchedulerKind scheduler = SchedulerKind::Synchronous;
  double jitter = 0.05;   // probability a cell skips a tick (Jittered only)
  std::uint32_t latency = 1;  // ticks between send and delivery
  std::uint32_t tick_ms = 50;
};

struct InFlight {
  std::uint64_t deliver_tick = 0;
  std::vector<float> frame;
};

// Receive side of one local edge.
struct Port {
  std::optional<std::uint32_t> peer;
  int peer_port = 0;
  std::deque<InFlight> queue;
  std::optional<std::vector<float>> snapshot;  // most recently delivered frame
};

struct Cell {
  std::uint32_t id = 0;
  std::optional<GridPos> position;  // empty while detached
  model::Rotation rotation;
  bool powered = true;
  std::vector<float> state;
  std::vector<float> led;
  std::shared_ptr<const vm::Program> program;
  std::optional<vm::VmInstance> vm;
  std::array<Port, 4> ports;  // indexed by local port

  bool attached() const noexcept { return position.has_value(); }
};

struct Link {
  std::uint32_t a = 0;
  int port_a = 0;
  std::uint32_t b = 0;
  int port_b = 0;
  auto operator<=>(const Link&) const = default;
};

// A 2D world of cells exchanging state frames with their four neighbours.
// All mutation goes through this class; commands take effect between ticks.
class World {
 public:
  explicit World(WorldConfig cfg = {});

  const WorldConfig& config() const noexcept { return cfg_; }
  void set_scheduler(SchedulerKind kind, double jitter);
  std::uint64_t tick_count() const noexcept { return tick_; }
  double simulated_seconds() const noexcept { return static_cast<double>(tick_) * cfg_.tick_ms / 1000.0; }

  // Program used by every cell; existing cells are reloaded. Cell states are
  // kept when the state size matches and reseeded otherwise.
  void set_program(std::shared_ptr<const vm::Program> program);
  void set_cell_program(std::uint32_t id, std::shared_ptr<const vm::Program> program);
  const std::shared_ptr<const vm::Program>& program() const noexcept { return program_; }

  // New cell in the seed state ([1, 0, ...]); attached when pos is given.
  std::uint32_t add_cell(std::optional<GridPos> pos, model::Rotation rot = {});
  // Same, with a caller-chosen id (throws PositionOccupied if the id exists).
  void add_cell_with_id(std::uint32_t id, std::optional<GridPos> pos, model::Rotation rot = {});
  void remove_cell(std::uint32_t id);
  void attach(std::uint32_t id, GridPos pos, model::Rotation rot);
  void detach(std::uint32_t id);
  void move(std::uint32_t id, GridPos pos);
  void rotate(std::uint32_t id, model::Rotation delta);
  void set_power(std::uint32_t id, bool on);
  void set_state(std::uint32_t id, std::span<const float> state);

  void tick();
  void run(std::uint64_t ticks);

  bool has_cell(std::uint32_t id) const noexcept { return cells_.count(id) != 0; }
  const Cell& cell(std::uint32_t id) const;
  std::vector<std::uint32_t> cell_ids() const;
  std::optional<std::uint32_t> cell_at(GridPos p) const;
  std::vector<Link> links() const;
  // The [self, port0..port3] vector the cell would feed its VM right now.
  std::vector<float> local_input(std::uint32_t id) const;
  // Neighbour state per local port as currently held (absent = nullopt).
  std::array<std::optional<std::vector<float>>, 4> received(std::uint32_t id) const;

  // Exact serialisation including scratch buffers and RNG counters.
  std::vector<std::uint8_t> save() const;
  static World restore(std::span<const std::uint8_t> bytes);

  bool operator==(const World& other) const;

 private:
  Cell& mutable_cell(std::uint32_t id);
  void link(std::uint32_t id);
  void unlink(std::uint32_t id);
  void install_program(Cell& c, std::shared_ptr<const vm::Program> program);
  std::size_t state_size_of(const Cell& c) const noexcept;
  bool skips(std::uint32_t id) const noexcept;

  WorldConfig cfg_;
  std::uint64_t tick_ = 0;
  std::uint32_t next_id_ = 1;
  std::shared_ptr<const vm::Program> program_;
  std::map<std::uint32_t, Cell> cells_;
  std::map<GridPos, std::uint32_t> occupancy_;
};

class CorruptSnapshot : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ncaswarm::sim
