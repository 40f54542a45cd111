#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "ncaswarm/model/firefly.hpp"
#include "ncaswarm/service/server.hpp"
#include "ncaswarm/sim/firefly_experiment.hpp"

using namespace ncaswarm;
using namespace ncaswarm::service;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  fs::path dir = fs::temp_directory_path() / ("ncaswarm_service_" + std::to_string(::getpid()));
  Service svc{ServiceConfig{dir.string(), "", 20.0, 1000.0, 1}};
  std::uint64_t seq = 1;

  ~Fixture() { fs::remove_all(dir); }

  json call(const std::string& type, const std::string& sid, json payload = json::object(), const FrameSink& sink = {}) {
    return svc.handle({{"type", type}, {"session_id", sid}, {"seq", seq++}, {"payload", payload}}, sink);
  }

  std::string firefly_session(int cells = 9) {
    const auto sid = call("CreateSession", "")["session_id"].get<std::string>();
    REQUIRE(call("LoadProgram", sid, {{"name", "firefly"}})["type"] == "LoadProgram");
    const auto layout = sim::disc_layout(static_cast<std::size_t>(cells));
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto r = call("AddCell", sid, {{"pos", {layout[i].x, layout[i].y}}, {"rot", 90 * (i % 4)}});
      REQUIRE(r["type"] == "AddCell");
      call("SetState", sid, {{"id", r["payload"]["id"]}, {"state", {1.0, 0.1 * static_cast<double>(i), 0.0}}});
    }
    return sid;
  }
};

}  // namespace

TEST_CASE("session lifecycle") {
  Fixture f;
  const auto r = f.call("CreateSession", "");
  CHECK(r["type"] == "CreateSession");
  CHECK(r["seq"] == 1);
  const auto sid = r["session_id"].get<std::string>();
  CHECK(f.svc.session(sid)->world.cell_ids().empty());

  const auto bad = f.call("Step", "nope", {{"n", 1}});
  CHECK(bad["type"] == "Error");
  CHECK(bad["payload"]["code"] == "UnknownSession");
  CHECK(bad["seq"] == 2);

  CHECK(f.call("Explode", sid)["payload"]["code"] == "InvalidCommand");
  CHECK(f.call("AddCell", sid, {{"pos", "x"}})["payload"]["code"] == "InvalidCommand");
  CHECK(f.svc.handle(json::array())["payload"]["code"] == "InvalidCommand");
}

TEST_CASE("step advances exactly n ticks and pauses") {
  Fixture f;
  const auto sid = f.firefly_session();
  f.call("Start", sid);
  const auto r = f.call("Step", sid, {{"n", 3}});
  CHECK(r["payload"]["ticks"] == json::array({1, 2, 3}));
  CHECK(r["payload"]["run_state"] == "paused");
  CHECK(f.svc.session(sid)->world.tick_count() == 3);
  f.svc.tick_running();
  CHECK(f.svc.session(sid)->world.tick_count() == 3);
}

TEST_CASE("inspect the firefly demo") {
  Fixture f;
  const auto sid = f.firefly_session();
  f.call("Step", sid, {{"n", 25}});
  const auto r = f.call("InspectCell", sid, {{"id", 2}});
  REQUIRE(r["type"] == "InspectCell");
  const auto& p = r["payload"];
  const double phase = p["state"][model::kFireflyPhase];
  CHECK(phase >= 0.0);
  CHECK(phase < 1.0);
  CHECK(p["received"].size() == 4);
  CHECK(p["output"].size() == 75);
  CHECK(p["scratch"].size() > 0);
  CHECK(p["program"]["read_only"].size() > 0);
  CHECK(p["program"]["operations"].size() == model::compile_firefly({}).operations.size());
  for (const auto& op : p["program"]["operations"]) CHECK(op["mnemonic"].get<std::string>().size() > 0);
}

TEST_CASE("program upload") {
  Fixture f;
  const auto sid = f.call("CreateSession", "")["session_id"].get<std::string>();
  const auto bytes = vm::save_program(model::compile_firefly({}));
  auto r = f.call("LoadProgram", sid, {{"name", "mine"}, {"bytes", base64_encode(bytes)}});
  CHECK(r["type"] == "LoadProgram");
  CHECK(r["payload"]["state_size"] == 3);
  auto corrupt = bytes;
  corrupt[0] = 'X';
  r = f.call("LoadProgram", sid, {{"name", "bad"}, {"bytes", base64_encode(corrupt)}});
  CHECK(r["payload"]["code"] == "BadProgram");
  CHECK(r["payload"]["message"].get<std::string>().find("BadMagic") != std::string::npos);
  const auto models = f.call("ListModels", sid)["payload"]["models"];
  bool found = false;
  for (const auto& m : models) found |= m["name"] == "mine";
  CHECK(found);
  CHECK(base64_decode(base64_encode({1, 2, 3, 250})) == std::vector<std::uint8_t>{1, 2, 3, 250});
}

TEST_CASE("snapshot and restore") {
  Fixture f;
  const auto sid = f.firefly_session(13);
  f.call("SetScheduler", sid, {{"scheduler", "jittered"}, {"jitter", 0.2}});
  f.call("Step", sid, {{"n", 40}});
  f.call("Start", sid);
  CHECK(f.call("Snapshot", sid)["payload"]["code"] == "InvalidCommand");
  f.call("Stop", sid);
  const auto snap = f.call("Snapshot", sid, {{"file", "a.snap"}});
  REQUIRE(snap["type"] == "Snapshot");
  const auto led_before = f.svc.session(sid)->world.cell(3).led;

  const auto restored = f.call("RestoreSession", "", {{"file", "a.snap"}});
  INFO(restored.dump());
  REQUIRE(restored["type"] == "RestoreSession");
  const auto rid = restored["session_id"].get<std::string>();
  CHECK(f.svc.session(rid)->world.cell(3).led == led_before);

  f.call("Step", sid, {{"n", 100}});
  f.call("Step", rid, {{"n", 100}});
  CHECK(f.svc.session(sid)->world.save() == f.svc.session(rid)->world.save());

  const auto path = fs::path(f.dir) / "a.snap";
  const auto size = fs::file_size(path);
  fs::resize_file(path, size - 7);
  CHECK(f.call("RestoreSession", "", {{"file", "a.snap"}})["payload"]["code"] == "CorruptSnapshot");
}

TEST_CASE("subscribers see identical frames") {
  Fixture f;
  const auto sid = f.firefly_session();
  std::vector<json> a, b, metrics;
  f.call("Subscribe", sid, {{"channel", "leds"}}, [&](const json& j) { a.push_back(j); });
  f.call("Subscribe", sid, {{"channel", "leds"}}, [&](const json& j) { b.push_back(j); });
  f.call("SetTarget", sid, {{"target", nullptr}});
  f.call("Subscribe", sid, {{"channel", "metrics"}}, [&](const json& j) { metrics.push_back(j); });
  for (int i = 0; i < 5; ++i) {
    f.call("Step", sid, {{"n", 1}});
    f.svc.publish(true);
  }
  CHECK(a.size() == 5);
  CHECK(a == b);
  for (const auto& fr : a) CHECK(fr["seq"] == 0);
  CHECK(a.back()["payload"]["tick"] == 5);
  REQUIRE(metrics.size() == 5);
  CHECK(metrics.back()["payload"]["sigma"].is_number());
}

TEST_CASE("message log replays identically") {
  auto drive = [] {
    Fixture f;
    const auto sid = f.firefly_session(9);
    f.call("SetScheduler", sid, {{"scheduler", "jittered"}, {"jitter", 0.1}});
    f.call("Step", sid, {{"n", 30}});
    f.call("RotateCell", sid, {{"id", 2}, {"degrees", 90}});
    f.call("MoveCell", sid, {{"id", 3}, {"pos", {5, 5}}});
    f.call("SetPower", sid, {{"id", 4}, {"on", false}});
    f.call("Step", sid, {{"n", 30}});
    f.call("RemoveCell", sid, {{"id", 5}});
    f.call("Step", sid, {{"n", 30}});
    return f.svc.session(sid)->world.save();
  };
  CHECK(drive() == drive());
}

TEST_CASE("tcp transport") {
  Fixture f;
  Server server(f.svc, "127.0.0.1", 0);
  server.start();
  {
    Client c("127.0.0.1", server.port());
    const auto r = c.request("CreateSession", "");
    REQUIRE(r["type"] == "CreateSession");
    const auto sid = r["session_id"].get<std::string>();
    CHECK(c.request("LoadProgram", sid, {{"name", "firefly"}})["type"] == "LoadProgram");
    for (int i = 0; i < 4; ++i) c.request("AddCell", sid, {{"pos", {i, 0}}});
    const auto sub = c.request("Subscribe", sid, {{"channel", "leds"}});
    CHECK(sub["type"] == "Subscribe");
    c.request("Start", sid);
    std::uint64_t last_tick = 0;
    for (int i = 0; i < 3; ++i) {
      const auto frame = c.next_frame();
      CHECK(frame["type"] == "LedFrame");
      CHECK(frame["seq"] == 0);
      const std::uint64_t t = frame["payload"]["tick"];
      CHECK(t >= last_tick);
      last_tick = t;
    }
    const auto stop = c.request("Stop", sid);
    CHECK(stop["type"] == "Stop");
    const auto bad = c.request("Step", "missing", {{"n", 1}});
    CHECK(bad["payload"]["code"] == "UnknownSession");
  }
  server.stop();
}
