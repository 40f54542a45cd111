#include "ncaswarm/sim/world.hpp"

#include <algorithm>
#include <cstring>

#include "ncaswarm/rng.hpp"

namespace ncaswarm::sim {

std::string_view to_string(SimErrorCode code) noexcept {
  switch (code) {
    case SimErrorCode::PositionOccupied: return "PositionOccupied";
    case SimErrorCode::UnknownCell: return "UnknownCell";
    case SimErrorCode::NotAttached: return "NotAttached";
    case SimErrorCode::NoProgram: return "NoProgram";
    case SimErrorCode::BadScenario: return "BadScenario";
  }
  return "SimError";
}

SimError::SimError(SimErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

GridPos step_towards(GridPos p, int dir) noexcept {
  switch (dir & 3) {
    case model::North: return {p.x, p.y - 1};
    case model::East: return {p.x + 1, p.y};
    case model::South: return {p.x, p.y + 1};
    default: return {p.x - 1, p.y};
  }
}

std::string to_string(SchedulerKind k) { return k == SchedulerKind::Synchronous ? "synchronous" : "jittered"; }

SchedulerKind scheduler_from_string(const std::string& s) {
  if (s == "synchronous") return SchedulerKind::Synchronous;
  if (s == "jittered") return SchedulerKind::Jittered;
  throw SimError(SimErrorCode::BadScenario, "unknown scheduler '" + s + "'");
}

World::World(WorldConfig cfg) : cfg_(cfg) {
  if (cfg_.latency < 1) throw SimError(SimErrorCode::BadScenario, "latency must be at least one tick");
}

void World::set_scheduler(SchedulerKind kind, double jitter) {
  if (!(jitter >= 0.0 && jitter <= 1.0)) throw SimError(SimErrorCode::BadScenario, "jitter must lie in [0, 1]");
  cfg_.scheduler = kind;
  cfg_.jitter = jitter;
}

const Cell& World::cell(std::uint32_t id) const {
  auto it = cells_.find(id);
  if (it == cells_.end()) throw SimError(SimErrorCode::UnknownCell, "no cell " + std::to_string(id));
  return it->second;
}

Cell& World::mutable_cell(std::uint32_t id) { return const_cast<Cell&>(cell(id)); }

std::vector<std::uint32_t> World::cell_ids() const {
  std::vector<std::uint32_t> ids;
  for (const auto& [id, c] : cells_) ids.push_back(id);
  return ids;
}

std::optional<std::uint32_t> World::cell_at(GridPos p) const {
  auto it = occupancy_.find(p);
  if (it == occupancy_.end()) return std::nullopt;
  return it->second;
}

std::size_t World::state_size_of(const Cell& c) const noexcept {
  return c.program ? c.program->header.state_size : c.state.size();
}

void World::install_program(Cell& c, std::shared_ptr<const vm::Program> program) {
  c.program = std::move(program);
  if (!c.program) {
    c.vm.reset();
    return;
  }
  c.vm.emplace(c.program, CounterRng::for_stream(cfg_.seed, c.id));
  const std::size_t n = c.program->header.state_size;
  if (c.state.size() != n) {
    c.state.assign(n, 0.0f);
    c.state[0] = 1.0f;
  }
  c.led.assign(vm::kOutputLength, 0.0f);
  for (auto& p : c.ports) {
    p.queue.clear();
    p.snapshot.reset();
  }
}

void World::set_program(std::shared_ptr<const vm::Program> program) {
  program_ = program;
  for (auto& [id, c] : cells_) install_program(c, program);
}

void World::set_cell_program(std::uint32_t id, std::shared_ptr<const vm::Program> program) {
  install_program(mutable_cell(id), std::move(program));
}

void World::add_cell_with_id(std::uint32_t id, std::optional<GridPos> pos, model::Rotation rot) {
  if (cells_.count(id)) throw SimError(SimErrorCode::PositionOccupied, "cell id " + std::to_string(id) + " exists");
  if (pos && occupancy_.count(*pos))
    throw SimError(SimErrorCode::PositionOccupied,
                   "(" + std::to_string(pos->x) + "," + std::to_string(pos->y) + ") is taken");
  Cell c;
  c.id = id;
  c.rotation = rot;
  c.state = {1.0f};
  c.led.assign(vm::kOutputLength, 0.0f);
  auto& stored = cells_.emplace(id, std::move(c)).first->second;
  install_program(stored, program_);
  next_id_ = std::max(next_id_, id + 1);
  if (pos) attach(id, *pos, rot);
}

std::uint32_t World::add_cell(std::optional<GridPos> pos, model::Rotation rot) {
  const auto id = next_id_;
  add_cell_with_id(id, pos, rot);
  return id;
}

void World::remove_cell(std::uint32_t id) {
  if (cell(id).attached()) detach(id);
  cells_.erase(id);
}

void World::unlink(std::uint32_t id) {
  auto& c = mutable_cell(id);
  for (auto& p : c.ports) {
    if (p.peer) {
      auto& back = mutable_cell(*p.peer).ports[static_cast<std::size_t>(p.peer_port)];
      back = Port{};
    }
    p = Port{};
  }
}

void World::link(std::uint32_t id) {
  auto& c = mutable_cell(id);
  if (!c.attached() || !c.powered) return;
  for (int d = 0; d < 4; ++d) {
    const auto other = cell_at(step_towards(*c.position, d));
    if (!other) continue;
    auto& n = mutable_cell(*other);
    if (!n.powered) continue;
    const int mine = (d - c.rotation.quarter_turns) & 3;
    const int theirs = ((d + 2) - n.rotation.quarter_turns) & 3;
    c.ports[static_cast<std::size_t>(mine)] = Port{*other, theirs, {}, {}};
    n.ports[static_cast<std::size_t>(theirs)] = Port{id, mine, {}, {}};
  }
}

void World::attach(std::uint32_t id, GridPos pos, model::Rotation rot) {
  auto& c = mutable_cell(id);
  if (c.attached()) detach(id);
  if (occupancy_.count(pos))
    throw SimError(SimErrorCode::PositionOccupied,
                   "(" + std::to_string(pos.x) + "," + std::to_string(pos.y) + ") is taken");
  c.position = pos;
  c.rotation = rot;
  occupancy_[pos] = id;
  link(id);
}

void World::detach(std::uint32_t id) {
  auto& c = mutable_cell(id);
  if (!c.attached()) throw SimError(SimErrorCode::NotAttached, "cell " + std::to_string(id) + " is detached");
  unlink(id);
  occupancy_.erase(*c.position);
  c.position.reset();
}

void World::move(std::uint32_t id, GridPos pos) {
  const auto& c = cell(id);
  if (c.attached() && *c.position == pos) return;
  if (occupancy_.count(pos))
    throw SimError(SimErrorCode::PositionOccupied,
                   "(" + std::to_string(pos.x) + "," + std::to_string(pos.y) + ") is taken");
  const auto rot = c.rotation;
  if (c.attached()) detach(id);
  attach(id, pos, rot);
}

void World::rotate(std::uint32_t id, model::Rotation delta) {
  auto& c = mutable_cell(id);
  c.rotation = c.rotation + delta;
  if (!c.attached()) return;
  unlink(id);
  link(id);
}

void World::set_power(std::uint32_t id, bool on) {
  auto& c = mutable_cell(id);
  if (c.powered == on) return;
  if (!on) {
    unlink(id);
    c.powered = false;
    std::fill(c.led.begin(), c.led.end(), 0.0f);
  } else {
    c.powered = true;
    link(id);
  }
}

void World::set_state(std::uint32_t id, std::span<const float> state) {
  auto& c = mutable_cell(id);
  if (c.program && state.size() != c.program->header.state_size)
    throw SimError(SimErrorCode::BadScenario, "state has " + std::to_string(state.size()) + " channels, program expects " +
                                                  std::to_string(c.program->header.state_size));
  c.state.assign(state.begin(), state.end());
}

std::array<std::optional<std::vector<float>>, 4> World::received(std::uint32_t id) const {
  std::array<std::optional<std::vector<float>>, 4> out;
  const auto& c = cell(id);
  for (std::size_t p = 0; p < 4; ++p) out[p] = c.ports[p].snapshot;
  return out;
}

std::vector<float> World::local_input(std::uint32_t id) const {
  const auto& c = cell(id);
  const std::size_t n = state_size_of(c);
  std::vector<float> in(vm::kNeighborSlots * n, 0.0f);
  std::copy_n(c.state.begin(), std::min(n, c.state.size()), in.begin());
  for (std::size_t p = 0; p < 4; ++p) {
    const auto& snap = c.ports[p].snapshot;
    if (!snap) continue;
    std::copy_n(snap->begin(), std::min(n, snap->size()), in.begin() + static_cast<std::ptrdiff_t>((p + 1) * n));
  }
  return in;
}

bool World::skips(std::uint32_t id) const noexcept {
  if (cfg_.scheduler != SchedulerKind::Jittered || cfg_.jitter <= 0.0) return false;
  const auto bits = CounterRng::at(derive_key(derive_key(cfg_.seed, 0x6a17), tick_), id);
  return static_cast<double>(bits >> 11) * 0x1.0p-53 < cfg_.jitter;
}

void World::tick() {
  // Every powered cell publishes its current state first, so with latency 1
  // all cells of a tick read the same generation of neighbour states.
  for (auto& [id, c] : cells_) {
    if (!c.powered || !c.attached()) continue;
    for (const auto& p : c.ports) {
      if (!p.peer) continue;
      auto& dest = cells_.at(*p.peer).ports[static_cast<std::size_t>(p.peer_port)];
      dest.queue.push_back({tick_ + cfg_.latency - 1, c.state});
    }
  }
  for (auto& [id, c] : cells_) {
    if (!c.powered || !c.attached()) continue;
    if (skips(id)) continue;
    for (auto& p : c.ports) {
      while (!p.queue.empty() && p.queue.front().deliver_tick <= tick_) {
        p.snapshot = std::move(p.queue.front().frame);
        p.queue.pop_front();
      }
    }
    if (!c.vm) continue;
    auto result = c.vm->execute_cycle(local_input(id));
    c.state = std::move(result.next_state);
    c.led = std::move(result.led_output);
  }
  ++tick_;
}

void World::run(std::uint64_t ticks) {
  for (std::uint64_t i = 0; i < ticks; ++i) tick();
}

std::vector<Link> World::links() const {
  std::vector<Link> out;
  for (const auto& [id, c] : cells_)
    for (int p = 0; p < 4; ++p) {
      const auto& port = c.ports[static_cast<std::size_t>(p)];
      if (port.peer && id < *port.peer) out.push_back({id, p, *port.peer, port.peer_port});
    }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------- snapshots

namespace {

constexpr char kSnapshotMagic[4] = {'N', 'C', 'S', 'W'};
constexpr std::uint16_t kSnapshotVersion = 1;

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void floats(const std::vector<float>& v) {
    put<std::uint32_t>(static_cast<std::uint32_t>(v.size()));
    for (float f : v) put(f);
  }
  void bytes(const std::vector<std::uint8_t>& v) {
    put<std::uint32_t>(static_cast<std::uint32_t>(v.size()));
    out.insert(out.end(), v.begin(), v.end());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : buf(b) {}
  template <class T>
  T get() {
    if (pos + sizeof(T) > buf.size()) throw CorruptSnapshot("snapshot truncated");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::vector<float> floats() {
    const auto n = get<std::uint32_t>();
    if (static_cast<std::size_t>(n) * 4 > buf.size() - pos) throw CorruptSnapshot("snapshot truncated");
    std::vector<float> v(n);
    for (auto& f : v) f = get<float>();
    return v;
  }
  std::vector<std::uint8_t> bytes() {
    const auto n = get<std::uint32_t>();
    if (n > buf.size() - pos) throw CorruptSnapshot("snapshot truncated");
    std::vector<std::uint8_t> v(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                                buf.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return v;
  }
  std::span<const std::uint8_t> buf;
  std::size_t pos = 0;
};

}  // namespace

std::vector<std::uint8_t> World::save() const {
  // Programs are stored once and referenced by index (-1 = none).
  std::vector<const vm::Program*> table;
  auto index_of = [&](const std::shared_ptr<const vm::Program>& p) -> std::int32_t {
    if (!p) return -1;
    auto it = std::find(table.begin(), table.end(), p.get());
    if (it != table.end()) return static_cast<std::int32_t>(it - table.begin());
    table.push_back(p.get());
    return static_cast<std::int32_t>(table.size() - 1);
  };
  const auto world_prog = index_of(program_);
  std::vector<std::int32_t> cell_prog;
  for (const auto& [id, c] : cells_) cell_prog.push_back(index_of(c.program));

  Writer w;
  for (char ch : kSnapshotMagic) w.put(ch);
  w.put(kSnapshotVersion);
  w.put(cfg_.seed);
  w.put(static_cast<std::uint8_t>(cfg_.scheduler));
  w.put(cfg_.jitter);
  w.put(cfg_.latency);
  w.put(cfg_.tick_ms);
  w.put(tick_);
  w.put(next_id_);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(table.size()));
  for (const auto* p : table) w.bytes(vm::save_program(*p));
  w.put(world_prog);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cells_.size()));
  std::size_t k = 0;
  for (const auto& [id, c] : cells_) {
    w.put(id);
    w.put<std::uint8_t>(c.position.has_value());
    w.put<std::int32_t>(c.position ? c.position->x : 0);
    w.put<std::int32_t>(c.position ? c.position->y : 0);
    w.put(c.rotation.quarter_turns);
    w.put<std::uint8_t>(c.powered);
    w.floats(c.state);
    w.floats(c.led);
    w.put(cell_prog[k++]);
    if (c.vm) {
      w.floats(std::vector<float>(c.vm->scratch().begin(), c.vm->scratch().end()));
      w.put(c.vm->rng().key());
      w.put(c.vm->rng().counter());
    }
    for (const auto& p : c.ports) {
      w.put<std::uint8_t>(p.peer.has_value());
      w.put<std::uint32_t>(p.peer.value_or(0));
      w.put<std::int32_t>(p.peer_port);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(p.queue.size()));
      for (const auto& f : p.queue) {
        w.put(f.deliver_tick);
        w.floats(f.frame);
      }
      w.put<std::uint8_t>(p.snapshot.has_value());
      if (p.snapshot) w.floats(*p.snapshot);
    }
  }
  w.put(fnv1a(w.out));
  return std::move(w.out);
}

World World::restore(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 8) throw CorruptSnapshot("snapshot truncated");
  const auto body = bytes.first(bytes.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 8);
  if (std::memcmp(bytes.data(), kSnapshotMagic, 4) != 0) throw CorruptSnapshot("not a world snapshot");
  if (stored != fnv1a(body)) throw CorruptSnapshot("snapshot checksum mismatch");
  Reader r(body);
  r.pos = 4;
  if (r.get<std::uint16_t>() != kSnapshotVersion) throw CorruptSnapshot("unsupported snapshot version");
  WorldConfig cfg;
  cfg.seed = r.get<std::uint64_t>();
  cfg.scheduler = static_cast<SchedulerKind>(r.get<std::uint8_t>());
  cfg.jitter = r.get<double>();
  cfg.latency = r.get<std::uint32_t>();
  cfg.tick_ms = r.get<std::uint32_t>();
  World w(cfg);
  w.tick_ = r.get<std::uint64_t>();
  w.next_id_ = r.get<std::uint32_t>();
  std::vector<std::shared_ptr<const vm::Program>> table;
  const auto programs = r.get<std::uint32_t>();
  try {
    for (std::uint32_t i = 0; i < programs; ++i)
      table.push_back(std::make_shared<const vm::Program>(vm::load_program(r.bytes())));
  } catch (const vm::ProgramError& e) {
    throw CorruptSnapshot(std::string("embedded program invalid: ") + e.what());
  }
  auto program_at = [&](std::int32_t idx) -> std::shared_ptr<const vm::Program> {
    if (idx < 0) return nullptr;
    if (static_cast<std::size_t>(idx) >= table.size()) throw CorruptSnapshot("program index out of range");
    return table[static_cast<std::size_t>(idx)];
  };
  w.program_ = program_at(r.get<std::int32_t>());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    Cell c;
    c.id = r.get<std::uint32_t>();
    const bool has_pos = r.get<std::uint8_t>() != 0;
    const auto x = r.get<std::int32_t>();
    const auto y = r.get<std::int32_t>();
    if (has_pos) c.position = GridPos{x, y};
    c.rotation.quarter_turns = static_cast<std::uint8_t>(r.get<std::uint8_t>() & 3u);
    c.powered = r.get<std::uint8_t>() != 0;
    c.state = r.floats();
    c.led = r.floats();
    c.program = program_at(r.get<std::int32_t>());
    if (c.program) {
      c.vm.emplace(c.program, CounterRng{});
      auto scratch = r.floats();
      if (scratch.size() != c.vm->scratch().size()) throw CorruptSnapshot("scratch size mismatch");
      std::copy(scratch.begin(), scratch.end(), c.vm->scratch().begin());
      const auto key = r.get<std::uint64_t>();
      const auto counter = r.get<std::uint64_t>();
      c.vm->set_rng(CounterRng(key, counter));
    }
    for (auto& p : c.ports) {
      const bool has_peer = r.get<std::uint8_t>() != 0;
      const auto peer = r.get<std::uint32_t>();
      if (has_peer) p.peer = peer;
      p.peer_port = r.get<std::int32_t>();
      const auto queued = r.get<std::uint32_t>();
      for (std::uint32_t q = 0; q < queued; ++q) {
        InFlight f;
        f.deliver_tick = r.get<std::uint64_t>();
        f.frame = r.floats();
        p.queue.push_back(std::move(f));
      }
      if (r.get<std::uint8_t>() != 0) p.snapshot = r.floats();
    }
    if (c.position) {
      if (w.occupancy_.count(*c.position)) throw CorruptSnapshot("two cells share a position");
      w.occupancy_[*c.position] = c.id;
    }
    w.cells_.emplace(c.id, std::move(c));
  }
  if (r.pos != body.size()) throw CorruptSnapshot("trailing bytes in snapshot");
  for (const auto& [id, c] : w.cells_)
    for (const auto& p : c.ports)
      if (p.peer && !w.cells_.count(*p.peer)) throw CorruptSnapshot("link to a missing cell");
  return w;
}

bool World::operator==(const World& o) const { return save() == o.save(); }

}  // namespace ncaswarm::sim
