#pragma once

// Manager wire protocol: 4-byte big-endian length prefix, then a UTF-8 JSON object.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <list>
#include <mutex>
#include <string>
#include <thread>

#include <json.hpp>

#include "teshu/manager.hpp"

namespace teshu::wire {

inline constexpr std::uint32_t kMaxFrame = 64u << 20;

inline std::string encode_frame(const nlohmann::json& msg) {
  std::string body = msg.dump();
  if (body.size() > kMaxFrame) throw ProtocolError("frame too large");
  auto n = static_cast<std::uint32_t>(body.size());
  std::string out(4, '\0');
  out[0] = static_cast<char>((n >> 24) & 0xff);
  out[1] = static_cast<char>((n >> 16) & 0xff);
  out[2] = static_cast<char>((n >> 8) & 0xff);
  out[3] = static_cast<char>(n & 0xff);
  return out + body;
}

/// Decodes one frame from the front of `data`; returns bytes consumed or 0 when incomplete.
inline std::size_t decode_frame(std::string_view data, nlohmann::json& out) {
  if (data.size() < 4) return 0;
  std::uint32_t n = (std::uint32_t(std::uint8_t(data[0])) << 24) | (std::uint32_t(std::uint8_t(data[1])) << 16) |
                    (std::uint32_t(std::uint8_t(data[2])) << 8) | std::uint32_t(std::uint8_t(data[3]));
  if (n > kMaxFrame) throw ProtocolError("frame too large");
  if (data.size() < 4 + std::size_t{n}) return 0;
  out = nlohmann::json::parse(data.substr(4, n));
  return 4 + std::size_t{n};
}

namespace detail {

inline bool write_all(int fd, const std::string& s) {
  std::size_t off = 0;
  while (off < s.size()) {
    ssize_t k = ::send(fd, s.data() + off, s.size() - off, MSG_NOSIGNAL);
    if (k <= 0) return false;
    off += static_cast<std::size_t>(k);
  }
  return true;
}

inline bool read_exact(int fd, char* buf, std::size_t n) {
  std::size_t off = 0;
  while (off < n) {
    ssize_t k = ::recv(fd, buf + off, n - off, 0);
    if (k <= 0) return false;
    off += static_cast<std::size_t>(k);
  }
  return true;
}

inline bool read_frame(int fd, nlohmann::json& out) {
  char hdr[4];
  if (!read_exact(fd, hdr, 4)) return false;
  std::uint32_t n = (std::uint32_t(std::uint8_t(hdr[0])) << 24) | (std::uint32_t(std::uint8_t(hdr[1])) << 16) |
                    (std::uint32_t(std::uint8_t(hdr[2])) << 8) | std::uint32_t(std::uint8_t(hdr[3]));
  if (n > kMaxFrame) return false;
  std::string body(n, '\0');
  if (!read_exact(fd, body.data(), n)) return false;
  out = nlohmann::json::parse(body, nullptr, false);
  return !out.is_discarded();
}

inline int connect_to(const std::string& host, std::uint16_t port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw ProtocolError("socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw InvalidArgument("bad IPv4 address '" + host + "'");
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd);
    throw ProtocolError("connect to " + host + ":" + std::to_string(port) + " failed: " + std::strerror(errno));
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return fd;
}

}  // namespace detail

/// Serves a ShuffleManager over TCP, one thread per connection.
class TcpManagerServer {
 public:
  explicit TcpManagerServer(ShuffleManager& mgr) : mgr_(mgr) {}
  ~TcpManagerServer() { stop(); }
  TcpManagerServer(const TcpManagerServer&) = delete;
  TcpManagerServer& operator=(const TcpManagerServer&) = delete;

  /// Binds 127.0.0.1 (or `host`); port 0 picks an ephemeral port. Returns the bound port.
  std::uint16_t start(std::uint16_t port = 0, const std::string& host = "127.0.0.1") {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw ProtocolError("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) throw InvalidArgument("bad IPv4 address '" + host + "'");
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 64) != 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw ProtocolError(std::string("bind/listen failed: ") + std::strerror(errno));
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
    return port_;
  }

  std::uint16_t port() const { return port_; }

  void stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (acceptor_.joinable()) acceptor_.join();
    std::list<Conn> conns;
    {
      std::lock_guard lk(mu_);
      conns.swap(conns_);
    }
    for (auto& c : conns) ::shutdown(c.fd, SHUT_RDWR);
    for (auto& c : conns) {
      if (c.thread.joinable()) c.thread.join();
      ::close(c.fd);
    }
  }

 private:
  struct Conn {
    int fd;
    std::thread thread;
  };

  void accept_loop() {
    while (running_) {
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (!running_) break;
        continue;
      }
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      std::lock_guard lk(mu_);
      conns_.push_back({fd, std::thread([this, fd] { serve(fd); })});
    }
  }

  void serve(int fd) {
    nlohmann::json req;
    while (detail::read_frame(fd, req)) {
      nlohmann::json resp = req.is_object() ? handle_request(mgr_, req) : nlohmann::json{{"ok", false}, {"err", "bad_request"}};
      if (!detail::write_all(fd, encode_frame(resp))) break;
    }
  }

  ShuffleManager& mgr_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::list<Conn> conns_;
};

/// Blocking request/response client. Cache-hit STARTs go through a background
/// connection so the caller does not wait for the acknowledgment.
class TcpManagerClient : public JsonManagerClient {
 public:
  TcpManagerClient(std::string host, std::uint16_t port) : host_(std::move(host)), port_(port) {
    fd_ = detail::connect_to(host_, port_);
  }
  ~TcpManagerClient() override {
    {
      std::lock_guard lk(q_mu_);
      closing_ = true;
    }
    q_cv_.notify_all();
    if (notifier_.joinable()) notifier_.join();
    if (fd_ >= 0) ::close(fd_);
  }

  void notify_start(WorkerId w, std::uint64_t shuffle, const std::string& template_id) override {
    {
      std::lock_guard lk(q_mu_);
      queue_.push_back({{"op", "record_start"}, {"wId", w}, {"shuffleId", shuffle}, {"templateId", template_id}});
      ++pending_;
      if (!notifier_.joinable()) notifier_ = std::thread([this] { notify_loop(); });
    }
    q_cv_.notify_all();
  }

  /// Blocks until queued fire-and-forget messages have been acknowledged or dropped.
  void flush() {
    std::unique_lock lk(q_mu_);
    q_cv_.wait(lk, [&] { return pending_ == 0; });
  }

 protected:
  nlohmann::json roundtrip(const nlohmann::json& req) override {
    std::lock_guard lk(mu_);
    return exchange(fd_, req);
  }

 private:
  nlohmann::json exchange(int fd, const nlohmann::json& req) {
    std::string frame = encode_frame(req);
    if (!detail::write_all(fd, frame)) throw ProtocolError("manager connection closed");
    nlohmann::json resp;
    if (!detail::read_frame(fd, resp)) throw ProtocolError("manager connection closed");
    account(frame.size() + resp.dump().size() + 4);
    return resp;
  }

  void notify_loop() {
    int fd = -1;
    try {
      fd = detail::connect_to(host_, port_);
    } catch (const std::exception& e) {
      std::clog << "teshu: warning: start notifier cannot connect: " << e.what() << "\n";
    }
    std::unique_lock lk(q_mu_);
    for (;;) {
      q_cv_.wait(lk, [&] { return closing_ || !queue_.empty(); });
      if (queue_.empty() && closing_) break;
      nlohmann::json req = std::move(queue_.front());
      queue_.pop_front();
      lk.unlock();
      try {
        if (fd < 0) throw ProtocolError("no connection");
        auto resp = exchange(fd, req);
        if (!resp.value("ok", false))
          std::clog << "teshu: warning: start record rejected: " << resp.value("err", "?") << "\n";
      } catch (const std::exception& e) {
        std::clog << "teshu: warning: start record lost: " << e.what() << "\n";
      }
      lk.lock();
      --pending_;
      q_cv_.notify_all();
    }
    if (fd >= 0) ::close(fd);
  }

  std::string host_;
  std::uint16_t port_;
  int fd_ = -1;
  std::mutex mu_;

  std::mutex q_mu_;
  std::condition_variable q_cv_;
  std::deque<nlohmann::json> queue_;
  std::size_t pending_ = 0;
  bool closing_ = false;
  std::thread notifier_;
};

}  // namespace teshu::wire
