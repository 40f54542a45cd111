#include "ncaswarm/sim/scenario.hpp"

#include <algorithm>
#include <fstream>

namespace ncaswarm::sim {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& what) { throw SimError(SimErrorCode::BadScenario, what); }

const std::vector<std::string>& known_ops() {
  static const std::vector<std::string> ops = {"attach",       "detach",    "move",   "rotate", "power",
                                               "load_program", "set_state", "remove"};
  return ops;
}

std::uint32_t id_of(const json& a) {
  if (!a.contains("id")) bad("command needs an 'id'");
  return a.at("id").get<std::uint32_t>();
}

GridPos pos_of(const json& a) {
  if (!a.contains("pos") || !a["pos"].is_array() || a["pos"].size() != 2) bad("command needs 'pos': [x, y]");
  return {a["pos"][0].get<int>(), a["pos"][1].get<int>()};
}

model::Rotation rot_of(const json& a, const char* key, int fallback) {
  const int deg = a.value(key, fallback);
  try {
    return model::Rotation::from_degrees(deg);
  } catch (const std::exception& e) {
    bad(e.what());
  }
}

}  // namespace

Scenario parse_scenario(const json& doc) {
  Scenario s;
  try {
    const json* commands = &doc;
    if (doc.is_object()) {
      if (doc.contains("world")) {
        const auto& w = doc["world"];
        s.world.seed = w.value("seed", s.world.seed);
        s.world.scheduler = scheduler_from_string(w.value("scheduler", std::string("synchronous")));
        s.world.jitter = w.value("jitter", s.world.jitter);
        s.world.latency = w.value("latency", s.world.latency);
        s.world.tick_ms = w.value("tick_ms", s.world.tick_ms);
      }
      if (doc.contains("program")) s.program = doc["program"].get<std::string>();
      if (doc.contains("target")) s.target = doc["target"].get<int>();
      if (doc.contains("phase_channel")) s.phase_channel = doc["phase_channel"].get<std::size_t>();
      s.metrics_every = std::max<std::uint64_t>(1, doc.value("metrics_every", std::uint64_t{1}));
      s.ticks = doc.value("ticks", std::uint64_t{0});
      if (!doc.contains("commands")) bad("scenario object needs 'commands'");
      commands = &doc["commands"];
    }
    if (!commands->is_array()) bad("commands must be a list");
    for (const auto& c : *commands) {
      Command cmd;
      cmd.tick = c.at("tick").get<std::uint64_t>();
      cmd.op = c.at("op").get<std::string>();
      if (std::find(known_ops().begin(), known_ops().end(), cmd.op) == known_ops().end())
        bad("unknown op '" + cmd.op + "'");
      cmd.args = c;
      s.commands.push_back(std::move(cmd));
    }
  } catch (const json::exception& e) {
    bad(e.what());
  }
  std::stable_sort(s.commands.begin(), s.commands.end(),
                   [](const Command& a, const Command& b) { return a.tick < b.tick; });
  if (s.ticks == 0 && !s.commands.empty()) s.ticks = s.commands.back().tick + 1;
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) bad("cannot open scenario " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    bad(path + ": " + e.what());
  }
  return parse_scenario(doc);
}

json to_json(const Command& c) {
  json j = c.args.is_object() ? c.args : json::object();
  j["tick"] = c.tick;
  j["op"] = c.op;
  return j;
}

json to_json(const Scenario& s) {
  json doc;
  doc["world"] = {{"seed", s.world.seed},
                  {"scheduler", to_string(s.world.scheduler)},
                  {"jitter", s.world.jitter},
                  {"latency", s.world.latency},
                  {"tick_ms", s.world.tick_ms}};
  doc["ticks"] = s.ticks;
  if (s.program) doc["program"] = *s.program;
  if (s.target) doc["target"] = *s.target;
  if (s.phase_channel) doc["phase_channel"] = *s.phase_channel;
  doc["metrics_every"] = s.metrics_every;
  doc["commands"] = json::array();
  for (const auto& c : s.commands) doc["commands"].push_back(to_json(c));
  return doc;
}

void apply_command(World& w, const Command& cmd, const ProgramResolver& resolve) {
  const auto& a = cmd.args;
  try {
    if (cmd.op == "attach") {
      const auto id = id_of(a);
      const auto rot = rot_of(a, "rot", 0);
      if (!w.has_cell(id))
        w.add_cell_with_id(id, pos_of(a), rot);
      else
        w.attach(id, pos_of(a), rot);
    } else if (cmd.op == "detach") {
      w.detach(id_of(a));
    } else if (cmd.op == "move") {
      w.move(id_of(a), pos_of(a));
    } else if (cmd.op == "rotate") {
      w.rotate(id_of(a), rot_of(a, "degrees", 90));
    } else if (cmd.op == "power") {
      w.set_power(id_of(a), a.value("on", true));
    } else if (cmd.op == "remove") {
      w.remove_cell(id_of(a));
    } else if (cmd.op == "set_state") {
      w.set_state(id_of(a), a.at("state").get<std::vector<float>>());
    } else if (cmd.op == "load_program") {
      const std::string ref = a.contains("path") ? a["path"].get<std::string>() : a.value("name", std::string());
      if (ref.empty()) bad("load_program needs 'path' or 'name'");
      if (!resolve) bad("no program resolver available");
      auto prog = resolve(ref);
      if (a.contains("id"))
        w.set_cell_program(id_of(a), prog);
      else
        w.set_program(prog);
    } else {
      bad("unknown op '" + cmd.op + "'");
    }
  } catch (const json::exception& e) {
    bad(cmd.op + ": " + e.what());
  }
}

World replay(const Scenario& s, std::shared_ptr<const vm::Program> program, const ProgramResolver& resolve,
             const std::function<void(const World&)>& observe) {
  World w(s.world);
  if (program) w.set_program(std::move(program));
  std::size_t next = 0;
  while (w.tick_count() < s.ticks) {
    while (next < s.commands.size() && s.commands[next].tick <= w.tick_count()) apply_command(w, s.commands[next++], resolve);
    w.tick();
    if (observe) observe(w);
  }
  return w;
}

}  // namespace ncaswarm::sim
