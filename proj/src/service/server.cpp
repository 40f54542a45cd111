#include "ncaswarm/service/server.hpp"

#include <chrono>

#include <sys/socket.h>

namespace ncaswarm::service {

namespace asio = boost::asio;
using asio::ip::tcp;
using nlohmann::json;

namespace {
constexpr std::uint32_t kMaxFrameBytes = 16u << 20;
}

void write_frame(tcp::socket& sock, const json& msg) {
  const std::string body = msg.dump();
  const auto n = static_cast<std::uint32_t>(body.size());
  const std::uint8_t len[4] = {static_cast<std::uint8_t>(n), static_cast<std::uint8_t>(n >> 8),
                               static_cast<std::uint8_t>(n >> 16), static_cast<std::uint8_t>(n >> 24)};
  std::vector<asio::const_buffer> bufs{asio::buffer(len), asio::buffer(body)};
  asio::write(sock, bufs);
}

json read_frame(tcp::socket& sock) {
  std::uint8_t len[4];
  asio::read(sock, asio::buffer(len));
  const std::uint32_t n = len[0] | (len[1] << 8) | (len[2] << 16) | (static_cast<std::uint32_t>(len[3]) << 24);
  if (n > kMaxFrameBytes) throw std::runtime_error("frame too large");
  std::string body(n, '\0');
  asio::read(sock, asio::buffer(body));
  return json::parse(body);
}

struct Server::Connection {
  explicit Connection(tcp::socket s, std::uint64_t t) : sock(std::move(s)), token(t) {}
  tcp::socket sock;
  std::uint64_t token;
  std::mutex write_mutex;
  std::atomic<bool> open{true};

  void send(const json& msg) {
    if (!open) return;
    std::lock_guard lock(write_mutex);
    boost::system::error_code ec;
    try {
      write_frame(sock, msg);
    } catch (const std::exception&) {
      open = false;
    }
  }
};

Server::Server(Service& service, const std::string& host, std::uint16_t port)
    : service_(service), acceptor_(io_, tcp::endpoint(asio::ip::make_address(host), port)) {
  port_ = acceptor_.local_endpoint().port();
}

Server::~Server() { stop(); }

void Server::start() {
  running_ = true;
  acceptor_thread_ = std::thread([this] { accept_loop(); });
  clock_thread_ = std::thread([this] { clock_loop(); });
}

void Server::stop() {
  if (!running_.exchange(false)) return;
  boost::system::error_code ec;
  // close() alone does not wake a thread blocked in accept() on Linux
  ::shutdown(acceptor_.native_handle(), SHUT_RDWR);
  acceptor_.close(ec);
  {
    std::lock_guard lock(conns_mutex_);
    for (auto& c : conns_) {
      c->open = false;
      c->sock.shutdown(tcp::socket::shutdown_both, ec);
      c->sock.close(ec);
    }
  }
  if (acceptor_thread_.joinable()) acceptor_thread_.join();
  if (clock_thread_.joinable()) clock_thread_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(conns_mutex_);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
}

void Server::accept_loop() {
  while (running_) {
    boost::system::error_code ec;
    tcp::socket sock(io_);
    acceptor_.accept(sock, ec);
    if (ec) {
      if (!running_) return;
      continue;
    }
    sock.set_option(tcp::no_delay(true), ec);
    std::lock_guard lock(conns_mutex_);
    auto conn = std::make_shared<Connection>(std::move(sock), next_connection_++);
    conns_.push_back(conn);
    workers_.emplace_back([this, conn] { serve(conn); });
  }
}

void Server::serve(std::shared_ptr<Connection> conn) {
  Service::set_connection(conn->token);
  std::weak_ptr<Connection> weak = conn;
  FrameSink sink = [weak](const json& frame) {
    if (auto c = weak.lock()) c->send(frame);
  };
  while (conn->open) {
    json response;
    try {
      response = service_.handle(read_frame(conn->sock), sink);
    } catch (const json::parse_error& e) {
      response = {{"type", "Error"},
                  {"session_id", ""},
                  {"seq", 0},
                  {"payload", {{"code", "InvalidCommand"}, {"message", e.what()}}}};
    } catch (const std::exception&) {
      break;  // peer closed or framing broke
    }
    conn->send(response);
  }
  conn->open = false;
  service_.drop_subscriber(conn->token);
  std::lock_guard lock(conns_mutex_);
  std::erase(conns_, conn);
}

void Server::clock_loop() {
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(
      std::chrono::duration<double>(1.0 / std::max(service_.config().tick_rate_hz, 1e-3)));
  auto next = clock::now();
  while (running_) {
    service_.tick_running();
    service_.publish();
    next += period;
    const auto now = clock::now();
    if (next < now) next = now;
    std::this_thread::sleep_until(std::min(next, now + std::chrono::milliseconds(50)));
  }
}

Client::Client(const std::string& host, std::uint16_t port) : sock_(io_) {
  tcp::resolver resolver(io_);
  asio::connect(sock_, resolver.resolve(host, std::to_string(port)));
  sock_.set_option(tcp::no_delay(true));
}

json Client::request(const std::string& type, const std::string& session_id, json payload) {
  const auto seq = seq_++;
  if (payload.is_null()) payload = json::object();
  write_frame(sock_, {{"type", type}, {"session_id", session_id}, {"seq", seq}, {"payload", std::move(payload)}});
  while (true) {
    json msg = read_frame(sock_);
    if (msg.value("seq", std::uint64_t{0}) == seq) return msg;
    pending_.push_back(std::move(msg));
  }
}

json Client::next_frame() {
  if (!pending_.empty()) {
    json f = std::move(pending_.front());
    pending_.erase(pending_.begin());
    return f;
  }
  return read_frame(sock_);
}

}  // namespace ncaswarm::service
