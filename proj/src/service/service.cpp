#include "ncaswarm/service/service.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <boost/beast/core/detail/base64.hpp>

#include "ncaswarm/model/checkpoint.hpp"
#include "ncaswarm/model/firefly.hpp"
#include "ncaswarm/sim/metrics.hpp"

namespace ncaswarm::service {

using nlohmann::json;
namespace fs = std::filesystem;

thread_local std::uint64_t Service::connection_ = 0;

std::string_view to_string(ErrorCode c) noexcept {
  switch (c) {
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::InvalidCommand: return "InvalidCommand";
    case ErrorCode::BadProgram: return "BadProgram";
    case ErrorCode::CorruptSnapshot: return "CorruptSnapshot";
  }
  return "Error";
}

ServiceError::ServiceError(ErrorCode code, const std::string& detail) : std::runtime_error(detail), code_(code) {}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  namespace b64 = boost::beast::detail::base64;
  if (text.size() % 4 != 0) throw ServiceError(ErrorCode::InvalidCommand, "base64 length must be a multiple of 4");
  std::vector<std::uint8_t> out(b64::decoded_size(text.size()));
  const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  std::size_t pad = 0;
  while (pad < 2 && pad < text.size() && text[text.size() - 1 - pad] == '=') ++pad;
  if (read + pad != text.size()) throw ServiceError(ErrorCode::InvalidCommand, "invalid base64 payload");
  out.resize(written);
  return out;
}

namespace {

[[noreturn]] void invalid(const std::string& what) { throw ServiceError(ErrorCode::InvalidCommand, what); }

sim::GridPos pos_of(const json& p) {
  if (!p.contains("pos") || !p["pos"].is_array() || p["pos"].size() != 2) invalid("payload needs 'pos': [x, y]");
  return {p["pos"][0].get<int>(), p["pos"][1].get<int>()};
}

std::uint32_t id_of(const json& p) {
  if (!p.contains("id")) invalid("payload needs 'id'");
  return p["id"].get<std::uint32_t>();
}

json program_summary(const std::string& name, const vm::Program& p) {
  return {{"name", name},
          {"state_size", p.header.state_size},
          {"tensor_count", p.tensors.size()},
          {"op_count", p.operations.size()}};
}

json arg_json(const vm::Arg& a) {
  return std::visit([](auto v) { return json(v); }, a);
}

}  // namespace

Service::Service(ServiceConfig cfg) : cfg_(std::move(cfg)) {}

std::shared_ptr<Session> Service::session(const std::string& id) const {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(ErrorCode::UnknownSession, "no session '" + id + "'");
  return it->second;
}

std::shared_ptr<Session> Service::create_session(std::optional<sim::WorldConfig> cfg) {
  std::lock_guard lock(sessions_mutex_);
  sim::WorldConfig wc;
  wc.seed = cfg_.seed;
  if (cfg) wc = *cfg;
  const std::string id = "s" + std::to_string(next_session_++);
  auto s = std::make_shared<Session>(id, wc);
  sessions_[id] = s;
  return s;
}

std::shared_ptr<const vm::Program> Service::resolve_model(const std::string& name) const {
  if (name == "firefly") return std::make_shared<const vm::Program>(model::compile_firefly({}));
  if (!cfg_.models_dir.empty()) {
    const auto path = fs::path(cfg_.models_dir) / (name + ".ncap");
    if (fs::exists(path)) return std::make_shared<const vm::Program>(vm::read_program_file(path.string()));
  }
  return nullptr;
}

json Service::handle(const json& request, const FrameSink& sink) {
  std::uint64_t seq = 0;
  std::string sid;
  std::string type;
  try {
    if (!request.is_object()) invalid("request must be a JSON object");
    if (request.contains("seq")) {
      if (!request["seq"].is_number_unsigned()) invalid("seq must be a non-negative integer");
      seq = request["seq"].get<std::uint64_t>();
    }
    if (!request.contains("type") || !request["type"].is_string()) invalid("request needs a string 'type'");
    type = request["type"].get<std::string>();
    if (request.contains("session_id") && request["session_id"].is_string()) sid = request["session_id"].get<std::string>();
    const json payload = request.value("payload", json::object());
    if (!payload.is_object()) invalid("payload must be an object");

    std::shared_ptr<Session> s;
    if (type == "CreateSession") {
      std::optional<sim::WorldConfig> wc;
      if (!payload.empty()) {
        sim::WorldConfig c;
        c.seed = payload.value("seed", cfg_.seed);
        c.scheduler = sim::scheduler_from_string(payload.value("scheduler", std::string("synchronous")));
        c.jitter = payload.value("jitter", c.jitter);
        c.latency = payload.value("latency", c.latency);
        c.tick_ms = payload.value("tick_ms", c.tick_ms);
        wc = c;
      }
      s = create_session(wc);
      return {{"type", type}, {"session_id", s->id}, {"seq", seq}, {"payload", {{"session_id", s->id}}}};
    }
    if (type == "RestoreSession") {
      const auto file = payload.at("file").get<std::string>();
      s = restore_session((fs::path(cfg_.session_dir) / fs::path(file).filename()).string());
      return {{"type", type}, {"session_id", s->id}, {"seq", seq}, {"payload", {{"session_id", s->id}}}};
    }
    if (type == "ListModels" && sid.empty()) {
      return {{"type", type}, {"session_id", sid}, {"seq", seq}, {"payload", dispatch(type, nullptr, payload, sink)}};
    }
    s = session(sid);
    json result = dispatch(type, s, payload, sink);
    return {{"type", type}, {"session_id", sid}, {"seq", seq}, {"payload", std::move(result)}};
  } catch (const ServiceError& e) {
    return {{"type", "Error"},
            {"session_id", sid},
            {"seq", seq},
            {"payload", {{"code", to_string(e.code())}, {"message", e.what()}, {"request", type}}}};
  } catch (const vm::ProgramError& e) {
    return {{"type", "Error"},
            {"session_id", sid},
            {"seq", seq},
            {"payload", {{"code", "BadProgram"}, {"message", e.what()}, {"request", type}}}};
  } catch (const sim::CorruptSnapshot& e) {
    return {{"type", "Error"},
            {"session_id", sid},
            {"seq", seq},
            {"payload", {{"code", "CorruptSnapshot"}, {"message", e.what()}, {"request", type}}}};
  } catch (const std::exception& e) {
    return {{"type", "Error"},
            {"session_id", sid},
            {"seq", seq},
            {"payload", {{"code", "InvalidCommand"}, {"message", e.what()}, {"request", type}}}};
  }
}

json Service::dispatch(const std::string& type, const std::shared_ptr<Session>& s, const json& payload,
                       const FrameSink& sink) {
  if (type == "ListModels") {
    json models = json::array();
    models.push_back({{"name", "firefly"}, {"source", "library"}});
    if (!cfg_.models_dir.empty() && fs::is_directory(cfg_.models_dir)) {
      std::vector<std::string> names;
      for (const auto& e : fs::directory_iterator(cfg_.models_dir))
        if (e.path().extension() == ".ncap") names.push_back(e.path().stem().string());
      std::sort(names.begin(), names.end());
      for (const auto& n : names) models.push_back({{"name", n}, {"source", "library"}});
    }
    if (s) {
      std::lock_guard lock(s->mutex);
      for (const auto& [name, prog] : s->programs) {
        auto entry = program_summary(name, *prog);
        entry["source"] = "session";
        entry["active"] = s->active_program == name;
        models.push_back(std::move(entry));
      }
    }
    return {{"models", models}};
  }

  std::lock_guard lock(s->mutex);
  auto& w = s->world;
  if (type == "LoadProgram") {
    const auto name = payload.value("name", std::string("uploaded"));
    std::shared_ptr<const vm::Program> prog;
    if (payload.contains("bytes")) {
      const auto raw = base64_decode(payload["bytes"].get<std::string>());
      prog = std::make_shared<const vm::Program>(vm::load_program(raw));
    } else if (auto it = s->programs.find(name); it != s->programs.end()) {
      prog = it->second;
    } else {
      prog = resolve_model(name);
      if (!prog) throw ServiceError(ErrorCode::BadProgram, "no model named '" + name + "'");
    }
    if (payload.contains("checkpoint")) {
      try {
        s->classifier = model::model_from_json(payload["checkpoint"]);
      } catch (const model::ModelError& e) {
        throw ServiceError(ErrorCode::BadProgram, e.what());
      }
    }
    if (payload.contains("phase_channel")) s->phase_channel = payload["phase_channel"].get<std::size_t>();
    if (name == "firefly" && !payload.contains("bytes")) s->phase_channel = model::kFireflyPhase;
    s->programs[name] = prog;
    if (payload.value("activate", true)) {
      w.set_program(prog);
      s->active_program = name;
    }
    return program_summary(name, *prog);
  }
  if (type == "AddCell") {
    const auto rot = model::Rotation::from_degrees(payload.value("rot", 0));
    std::optional<sim::GridPos> pos;
    if (payload.contains("pos")) pos = pos_of(payload);
    std::uint32_t id;
    if (payload.contains("id")) {
      id = id_of(payload);
      w.add_cell_with_id(id, pos, rot);
    } else {
      id = w.add_cell(pos, rot);
    }
    if (payload.contains("state")) w.set_state(id, payload["state"].get<std::vector<float>>());
    return {{"id", id}};
  }
  if (type == "MoveCell") {
    const auto id = id_of(payload);
    if (w.cell(id).attached())
      w.move(id, pos_of(payload));
    else
      w.attach(id, pos_of(payload), w.cell(id).rotation);
    return {{"id", id}};
  }
  if (type == "RotateCell") {
    const auto id = id_of(payload);
    w.rotate(id, model::Rotation::from_degrees(payload.value("degrees", 90)));
    return {{"id", id}, {"rot", w.cell(id).rotation.degrees()}};
  }
  if (type == "RemoveCell") {
    w.remove_cell(id_of(payload));
    return json::object();
  }
  if (type == "DetachCell") {
    w.detach(id_of(payload));
    return json::object();
  }
  if (type == "SetPower") {
    w.set_power(id_of(payload), payload.value("on", true));
    return json::object();
  }
  if (type == "SetState") {
    w.set_state(id_of(payload), payload.at("state").get<std::vector<float>>());
    return json::object();
  }
  if (type == "SetScheduler") {
    w.set_scheduler(sim::scheduler_from_string(payload.at("scheduler").get<std::string>()),
                    payload.value("jitter", w.config().jitter));
    return json::object();
  }
  if (type == "SetTarget") {
    if (payload.contains("target") && !payload["target"].is_null())
      s->target = payload["target"].get<int>();
    else
      s->target.reset();
    return json::object();
  }
  if (type == "Start") {
    s->run_state = RunState::Running;
    return {{"run_state", "running"}};
  }
  if (type == "Stop") {
    s->run_state = RunState::Paused;
    return {{"run_state", "paused"}, {"tick", w.tick_count()}};
  }
  if (type == "Step") {
    const auto n = payload.value("n", std::uint64_t{1});
    if (n > 1000000) invalid("Step n too large");
    s->run_state = RunState::Paused;
    json ticks = json::array();
    for (std::uint64_t i = 0; i < n; ++i) {
      w.tick();
      ticks.push_back(w.tick_count());
    }
    return {{"ticks", ticks}, {"tick", w.tick_count()}, {"run_state", "paused"}};
  }
  if (type == "InspectCell") return inspect(*s, id_of(payload));
  if (type == "Subscribe") {
    if (!sink) invalid("subscriptions need a streaming connection");
    const auto ch = payload.value("channel", std::string("leds"));
    if (ch != "leds" && ch != "metrics") invalid("channel must be 'leds' or 'metrics'");
    Subscription sub{next_subscription_++, connection_, ch == "leds" ? Channel::Leds : Channel::Metrics, sink};
    s->subscribers.push_back(sub);
    s->published_tick = ~0ULL;
    return {{"subscription", sub.id}, {"channel", ch}};
  }
  if (type == "Unsubscribe") {
    const auto id = payload.at("subscription").get<std::uint64_t>();
    std::erase_if(s->subscribers, [&](const Subscription& x) { return x.id == id; });
    return json::object();
  }
  if (type == "Snapshot") {
    if (s->run_state != RunState::Paused) invalid("stop the session before taking a snapshot");
    const auto file = fs::path(payload.value("file", s->id + ".snap")).filename();
    fs::create_directories(cfg_.session_dir);
    const auto path = fs::path(cfg_.session_dir) / file;
    save_session(*s, path.string());
    return {{"file", file.string()}, {"bytes", fs::file_size(path)}, {"tick", w.tick_count()}};
  }
  if (type == "Error") invalid("clients may not send Error messages");
  invalid("unknown message type '" + type + "'");
}

void Service::drop_subscriber(std::uint64_t connection) {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(sessions_mutex_);
    for (auto& [id, s] : sessions_) all.push_back(s);
  }
  for (auto& s : all) {
    std::lock_guard lock(s->mutex);
    std::erase_if(s->subscribers, [&](const Subscription& x) { return x.connection == connection; });
  }
}

void Service::tick_running() {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(sessions_mutex_);
    for (auto& [id, s] : sessions_) all.push_back(s);
  }
  for (auto& s : all) {
    std::lock_guard lock(s->mutex);
    if (s->run_state == RunState::Running) s->world.tick();
  }
}

void Service::publish(bool force) {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(sessions_mutex_);
    for (auto& [id, s] : sessions_) all.push_back(s);
  }
  const auto now = std::chrono::steady_clock::now();
  const auto min_gap = std::chrono::duration<double>(1.0 / std::max(cfg_.max_push_hz, 1e-3));
  for (auto& s : all) {
    std::vector<std::pair<FrameSink, std::shared_ptr<const json>>> out;
    {
      std::lock_guard lock(s->mutex);
      if (s->subscribers.empty()) continue;
      if (!force && s->world.tick_count() == s->published_tick) continue;
      if (!force && now - s->last_push < min_gap) continue;
      std::shared_ptr<const json> leds, metrics;
      for (const auto& sub : s->subscribers) {
        auto& frame = sub.channel == Channel::Leds ? leds : metrics;
        if (!frame)
          frame = std::make_shared<const json>(sub.channel == Channel::Leds ? led_frame(*s) : metrics_frame(*s));
        out.emplace_back(sub.sink, frame);
      }
      s->published_tick = s->world.tick_count();
      s->last_push = now;
    }
    for (auto& [sink, frame] : out) sink(*frame);
  }
}

json Service::led_frame(const Session& s) {
  json cells = json::array();
  for (auto id : s.world.cell_ids()) {
    const auto& c = s.world.cell(id);
    cells.push_back({{"id", id},
                     {"pos", c.position ? json::array({c.position->x, c.position->y}) : json(nullptr)},
                     {"rot", c.rotation.degrees()},
                     {"powered", c.powered},
                     {"led", c.led}});
  }
  return {{"type", "LedFrame"},
          {"session_id", s.id},
          {"seq", 0},
          {"payload",
           {{"tick", s.world.tick_count()},
            {"run_state", s.run_state == RunState::Running ? "running" : "paused"},
            {"cells", cells}}}};
}

json Service::metrics_frame(const Session& s) {
  sim::MetricsSpec spec{s.classifier, s.target, s.phase_channel};
  const auto row = sim::measure(s.world, spec);
  json classes = json::array();
  for (auto [id, cls] : row.classes) classes.push_back({id, cls});
  return {{"type", "MetricsFrame"},
          {"session_id", s.id},
          {"seq", 0},
          {"payload",
           {{"tick", row.tick},
            {"accuracy", row.accuracy ? json(*row.accuracy) : json(nullptr)},
            {"sigma", row.sigma ? json(*row.sigma) : json(nullptr)},
            {"classes", classes}}}};
}

json Service::inspect(const Session& s, std::uint32_t id) {
  const auto& w = s.world;
  const auto& c = w.cell(id);
  json received = json::array();
  for (const auto& r : w.received(id)) received.push_back(r ? json(*r) : json(nullptr));
  json out = {{"id", id},
              {"pos", c.position ? json::array({c.position->x, c.position->y}) : json(nullptr)},
              {"rot", c.rotation.degrees()},
              {"powered", c.powered},
              {"tick", w.tick_count()},
              {"state", c.state},
              {"received", received},
              {"output", c.led}};
  if (c.vm) {
    out["scratch"] = std::vector<float>(c.vm->scratch().begin(), c.vm->scratch().end());
    const auto& p = *c.program;
    json ro = json::array(), wr = json::array(), ops = json::array();
    for (const auto& t : p.tensors) {
      if (t.kind == vm::TensorKind::ReadOnly)
        ro.push_back({{"id", t.id}, {"length", t.length}, {"data", t.data}});
      else
        wr.push_back({{"id", t.id}, {"length", t.length}, {"offset", t.buffer_offset}});
    }
    for (const auto& op : p.operations) {
      json args = json::array();
      for (const auto& a : op.args) args.push_back(arg_json(a));
      ops.push_back({{"opcode", static_cast<int>(op.opcode)},
                     {"mnemonic", vm::mnemonic(op.opcode)},
                     {"args", args},
                     {"text", vm::disassemble(op)}});
    }
    out["program"] = {{"name", s.active_program ? json(*s.active_program) : json(nullptr)},
                      {"version", p.header.version},
                      {"state_size", p.header.state_size},
                      {"pre_delay_ms", p.header.pre_delay_ms},
                      {"post_delay_ms", p.header.post_delay_ms},
                      {"read_only", ro},
                      {"writable", wr},
                      {"operations", ops}};
  } else {
    out["scratch"] = json::array();
    out["program"] = nullptr;
  }
  return out;
}

// File layout: "NCSS", u32 metadata length, metadata JSON, world snapshot.
void Service::save_session(Session& s, const std::string& path) const {
  json meta;
  json programs = json::object();
  for (const auto& [name, prog] : s.programs) programs[name] = base64_encode(vm::save_program(*prog));
  meta["programs"] = programs;
  meta["active_program"] = s.active_program ? json(*s.active_program) : json(nullptr);
  meta["target"] = s.target ? json(*s.target) : json(nullptr);
  meta["phase_channel"] = s.phase_channel ? json(*s.phase_channel) : json(nullptr);
  meta["classifier"] = s.classifier ? model::to_json(*s.classifier) : json(nullptr);
  const std::string text = meta.dump();
  const auto world = s.world.save();
  std::ofstream f(path, std::ios::binary);
  if (!f) invalid("cannot write " + path);
  const auto len = static_cast<std::uint32_t>(text.size());
  f.write("NCSS", 4);
  f.write(reinterpret_cast<const char*>(&len), 4);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  f.write(reinterpret_cast<const char*>(world.data()), static_cast<std::streamsize>(world.size()));
  if (!f) invalid("failed writing " + path);
}

std::shared_ptr<Session> Service::restore_session(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ServiceError(ErrorCode::CorruptSnapshot, "cannot open snapshot " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "NCSS", 4) != 0)
    throw ServiceError(ErrorCode::CorruptSnapshot, "not a session snapshot");
  std::uint32_t len;
  std::memcpy(&len, bytes.data() + 4, 4);
  if (len > bytes.size() - 8) throw ServiceError(ErrorCode::CorruptSnapshot, "snapshot truncated");
  json meta;
  try {
    meta = json::parse(bytes.begin() + 8, bytes.begin() + 8 + len);
  } catch (const json::exception& e) {
    throw ServiceError(ErrorCode::CorruptSnapshot, std::string("bad snapshot metadata: ") + e.what());
  }
  sim::World world;
  try {
    world = sim::World::restore(std::span<const std::uint8_t>(bytes).subspan(8 + len));
  } catch (const sim::CorruptSnapshot& e) {
    throw ServiceError(ErrorCode::CorruptSnapshot, e.what());
  }
  auto s = create_session(world.config());
  std::lock_guard lock(s->mutex);
  s->world = std::move(world);
  try {
    for (auto it = meta.at("programs").begin(); it != meta.at("programs").end(); ++it)
      s->programs[it.key()] = std::make_shared<const vm::Program>(vm::load_program(base64_decode(it.value())));
    if (!meta.at("active_program").is_null()) s->active_program = meta["active_program"].get<std::string>();
    if (!meta.at("target").is_null()) s->target = meta["target"].get<int>();
    if (!meta.at("phase_channel").is_null()) s->phase_channel = meta["phase_channel"].get<std::size_t>();
    if (!meta.at("classifier").is_null()) s->classifier = model::model_from_json(meta["classifier"]);
  } catch (const std::exception& e) {
    throw ServiceError(ErrorCode::CorruptSnapshot, std::string("bad snapshot metadata: ") + e.what());
  }
  return s;
}

}  // namespace ncaswarm::service
