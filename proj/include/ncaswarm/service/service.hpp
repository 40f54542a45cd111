#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncaswarm/model/model.hpp"
#include "ncaswarm/sim/world.hpp"

namespace ncaswarm::service {

// Error codes carried in Error payloads.
enum class ErrorCode { UnknownSession, InvalidCommand, BadProgram, CorruptSnapshot };
std::string_view to_string(ErrorCode c) noexcept;

class ServiceError : public std::runtime_error {
 public:
  ServiceError(ErrorCode code, const std::string& detail);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct ServiceConfig {
  std::string session_dir = "sessions";
  std::string models_dir;         // precompiled *.ncap files offered by ListModels
  double tick_rate_hz = 20.0;     // wall-clock rate of running sessions
  double max_push_hz = 20.0;      // subscription frame limit
  std::uint64_t seed = 1;
};

enum class RunState { Paused, Running };

using FrameSink = std::function<void(const nlohmann::json&)>;

enum class Channel { Leds, Metrics };

struct Subscription {
  std::uint64_t id = 0;
  std::uint64_t connection = 0;
  Channel channel = Channel::Leds;
  FrameSink sink;
};

struct Session {
  std::string id;
  sim::World world;
  std::map<std::string, std::shared_ptr<const vm::Program>> programs;
  std::optional<std::string> active_program;
  std::optional<model::NcaModel> classifier;  // for metrics frames
  std::optional<int> target;
  std::optional<std::size_t> phase_channel;
  RunState run_state = RunState::Paused;
  std::vector<Subscription> subscribers;
  std::uint64_t published_tick = ~0ULL;
  std::chrono::steady_clock::time_point last_push{};
  std::mutex mutex;  // commands and ticks are serialised through this lock

  explicit Session(std::string sid, sim::WorldConfig cfg) : id(std::move(sid)), world(cfg) {}
};

// Request/response dispatcher. Every request {type, session_id, seq,
// payload} yields exactly one response with the same seq; subscription
// frames are delivered through FrameSink with seq 0.
class Service {
 public:
  explicit Service(ServiceConfig cfg);

  nlohmann::json handle(const nlohmann::json& request, const FrameSink& sink = {});
  // Removes every subscription registered with the given connection token.
  void drop_subscriber(std::uint64_t connection);

  // Advances running sessions by one tick each.
  void tick_running();
  // Pushes the latest frame to subscribers of sessions that changed since
  // the last push, respecting max_push_hz. force ignores the rate limit.
  void publish(bool force = false);

  std::shared_ptr<Session> session(const std::string& id) const;
  const ServiceConfig& config() const noexcept { return cfg_; }

  // Builds the same frame subscribers receive.
  static nlohmann::json led_frame(const Session& s);
  static nlohmann::json metrics_frame(const Session& s);
  static nlohmann::json inspect(const Session& s, std::uint32_t cell);

  void save_session(Session& s, const std::string& path) const;
  std::shared_ptr<Session> restore_session(const std::string& path);

  // Connection token used to tag subscriptions made by the calling thread.
  static void set_connection(std::uint64_t token) { connection_ = token; }

 private:
  nlohmann::json dispatch(const std::string& type, const std::shared_ptr<Session>& s, const nlohmann::json& payload,
                          const FrameSink& sink);
  std::shared_ptr<Session> create_session(std::optional<sim::WorldConfig> cfg);
  std::shared_ptr<const vm::Program> resolve_model(const std::string& name) const;

  ServiceConfig cfg_;
  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_session_ = 1;
  std::uint64_t next_subscription_ = 1;
  static thread_local std::uint64_t connection_;
};

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace ncaswarm::service
