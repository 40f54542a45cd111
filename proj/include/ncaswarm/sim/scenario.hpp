#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncaswarm/sim/world.hpp"

namespace ncaswarm::sim {

// One timestamped command. Ops: attach, detach, move, rotate, power,
// load_program, set_state, remove. Applied before the tick it names.
struct Command {
  std::uint64_t tick = 0;
  std::string op;
  nlohmann::json args;
};

struct Scenario {
  WorldConfig world;
  std::uint64_t ticks = 0;  // run length; defaults to the last command tick + 1
  std::optional<std::string> program;
  std::optional<int> target;
  std::optional<std::size_t> phase_channel;
  std::uint64_t metrics_every = 1;
  std::vector<Command> commands;  // stable-sorted by tick
};

// Accepts either a bare command list or {world, ticks, program, target,
// phase_channel, metrics_every, commands}.
Scenario parse_scenario(const nlohmann::json& doc);
Scenario load_scenario(const std::string& path);
nlohmann::json to_json(const Scenario& s);
nlohmann::json to_json(const Command& c);

using ProgramResolver = std::function<std::shared_ptr<const vm::Program>(const std::string&)>;

void apply_command(World& world, const Command& cmd, const ProgramResolver& resolve);

// Builds a world from the scenario config, installs `program` (if any) and
// runs to s.ticks, calling observe after every tick.
World replay(const Scenario& s, std::shared_ptr<const vm::Program> program, const ProgramResolver& resolve,
             const std::function<void(const World&)>& observe = {});

}  // namespace ncaswarm::sim
