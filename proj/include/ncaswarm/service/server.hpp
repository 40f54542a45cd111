#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <nlohmann/json.hpp>

#include "ncaswarm/service/service.hpp"

namespace ncaswarm::service {

// Frames on the wire: u32 little-endian byte count, then a UTF-8 JSON object.
void write_frame(boost::asio::ip::tcp::socket& sock, const nlohmann::json& msg);
nlohmann::json read_frame(boost::asio::ip::tcp::socket& sock);

// TCP front end. One thread per connection plus a clock thread that advances
// running sessions and pushes subscription frames.
class Server {
 public:
  Server(Service& service, const std::string& host, std::uint16_t port);
  ~Server();

  std::uint16_t port() const noexcept { return port_; }
  void start();
  void stop();

 private:
  struct Connection;

  void accept_loop();
  void clock_loop();
  void serve(std::shared_ptr<Connection> conn);

  Service& service_;
  boost::asio::io_context io_;
  boost::asio::ip::tcp::acceptor acceptor_;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_thread_;
  std::thread clock_thread_;
  std::mutex conns_mutex_;
  std::vector<std::shared_ptr<Connection>> conns_;
  std::vector<std::thread> workers_;
  std::uint64_t next_connection_ = 1;
};

// Blocking client used by tests and the CLI.
class Client {
 public:
  Client(const std::string& host, std::uint16_t port);

  // Sends a request and returns the response with the matching seq. Frames
  // that arrive first are kept for next_frame().
  nlohmann::json request(const std::string& type, const std::string& session_id, nlohmann::json payload = {});
  nlohmann::json next_frame();

 private:
  boost::asio::io_context io_;
  boost::asio::ip::tcp::socket sock_;
  std::uint64_t seq_ = 1;
  std::vector<nlohmann::json> pending_;
};

}  // namespace ncaswarm::service
