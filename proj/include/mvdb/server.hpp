#pragma once

// Serving loop for the wire protocol. One dispatcher thread owns the session;
// transports (TCP lines, WebSocket at /debug, standard streams) only queue
// lines and receive broadcast events.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <openssl/evp.h>
#include <openssl/sha.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <functional>
#include <istream>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <system_error>
#include <thread>
#include <vector>

#include "mvdb/wire.hpp"

namespace mvdb::protocol {

inline constexpr std::uint16_t kDefaultPort = 8334;
inline constexpr std::size_t kMaxLineBytes = 1u << 20;

/// Where a connection's events go.
class Sink {
 public:
  virtual ~Sink() = default;
  /// Returns false once the peer is gone.
  virtual bool send(const std::string& line) = 0;
};

class StreamSink : public Sink {
 public:
  explicit StreamSink(std::ostream& out) : out_(out) {}
  bool send(const std::string& line) override {
    std::lock_guard lk(mu_);
    out_ << line << '\n';
    out_.flush();
    return static_cast<bool>(out_);
  }

 private:
  std::mutex mu_;
  std::ostream& out_;
};

/// Serializes every request into one ordered queue and fans events out.
class Dispatcher {
 public:
  explicit Dispatcher(Session& session, std::uint64_t play_batch = 64)
      : session_(session), batch_(play_batch) {}

  Dispatcher(const Dispatcher&) = delete;
  Dispatcher& operator=(const Dispatcher&) = delete;

  /// Registers a sink; it is sent the full session state before any later event.
  void attach(std::shared_ptr<Sink> sink) {
    std::lock_guard lk(mu_);
    queue_.push_back({sink, {}, true});
    cv_.notify_one();
  }

  void detach(const Sink* sink) {
    std::lock_guard lk(sinks_mu_);
    std::erase_if(sinks_, [&](const auto& s) { return s.get() == sink; });
  }

  void submit(std::shared_ptr<Sink> from, std::string line) {
    std::lock_guard lk(mu_);
    queue_.push_back({std::move(from), std::move(line), false});
    cv_.notify_one();
  }

  /// Called after each request is dispatched, in dispatch order.
  void on_dispatch(std::function<void(const Request&)> hook) { hook_ = std::move(hook); }

  /// Read-only access to the session between dispatches.
  template <class F>
  auto inspect(F&& f) const {
    std::lock_guard lk(session_mu_);
    return f(static_cast<const Session&>(session_));
  }

  /// Processes requests until stop(). Pending requests are still handled.
  void run() {
    for (;;) {
      std::unique_lock lk(mu_);
      if (queue_.empty()) {
        if (stopping_) return;
        if (playing()) {
          lk.unlock();
          play_batch();
          continue;
        }
        cv_.wait(lk, [&] { return !queue_.empty() || stopping_; });
        continue;
      }
      Item item = std::move(queue_.front());
      queue_.pop_front();
      lk.unlock();
      process(item);
    }
  }

  void stop() {
    std::lock_guard lk(mu_);
    stopping_ = true;
    cv_.notify_all();
  }

  std::size_t sink_count() const {
    std::lock_guard lk(sinks_mu_);
    return sinks_.size();
  }

 private:
  struct Item {
    std::shared_ptr<Sink> from;
    std::string line;
    bool greeting = false;
  };

  bool playing() const {
    std::lock_guard lk(session_mu_);
    return session_.playing();
  }

  void play_batch() {
    Events evs;
    {
      std::lock_guard lk(session_mu_);
      try {
        evs = session_.run(batch_);
      } catch (const std::exception& e) {
        evs = session_.pause();
        evs.push_back(event::Diagnostic{"InternalError", e.what(), {}});
      }
    }
    broadcast(evs);
  }

  void process(const Item& item) {
    if (item.greeting) {
      Events evs;
      {
        std::lock_guard lk(session_mu_);
        evs = session_.full_state();
      }
      bool ok = true;
      for (const auto& e : evs) ok = ok && item.from->send(encode_event(e));
      if (ok) {
        std::lock_guard lk(sinks_mu_);
        sinks_.push_back(item.from);
      }
      return;
    }
    RequestDecode d = decode_request(item.line);
    if (!d.request) {
      item.from->send(encode_event(*d.error));
      return;
    }
    Events evs;
    {
      std::lock_guard lk(session_mu_);
      try {
        evs = apply_request(session_, *d.request);
      } catch (const std::exception& e) {
        evs.push_back(event::Diagnostic{"InternalError", e.what(), {}});
      }
    }
    if (hook_) hook_(*d.request);
    broadcast(evs);
  }

  void broadcast(const Events& evs) {
    if (evs.empty()) return;
    std::vector<std::string> lines;
    lines.reserve(evs.size());
    for (const auto& e : evs) lines.push_back(encode_event(e));
    std::lock_guard lk(sinks_mu_);
    std::erase_if(sinks_, [&](const std::shared_ptr<Sink>& s) {
      for (const auto& l : lines) {
        if (!s->send(l)) return true;
      }
      return false;
    });
  }

  Session& session_;
  std::uint64_t batch_;
  mutable std::mutex session_mu_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Item> queue_;
  bool stopping_ = false;
  mutable std::mutex sinks_mu_;
  std::vector<std::shared_ptr<Sink>> sinks_;
  std::function<void(const Request&)> hook_;
};

/// Line-per-message over standard streams. Returns at end of input once
/// every queued request has been handled.
inline void serve_stdio(Session& session, std::istream& in, std::ostream& out) {
  Dispatcher d(session);
  auto sink = std::make_shared<StreamSink>(out);
  d.attach(sink);
  std::thread worker([&] { d.run(); });
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) d.submit(sink, line);
  }
  d.stop();
  worker.join();
}

namespace ws {

inline std::string accept_key(const std::string& client_key) {
  static constexpr char kGuid[] = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  const std::string in = client_key + kGuid;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(in.data()), in.size(), digest);
  unsigned char out[4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1];
  const int n = EVP_EncodeBlock(out, digest, SHA_DIGEST_LENGTH);
  return std::string(reinterpret_cast<char*>(out), static_cast<std::size_t>(n));
}

enum class Opcode : std::uint8_t { Continuation = 0, Text = 1, Binary = 2, Close = 8, Ping = 9, Pong = 10 };

/// Server-to-client frame (never masked).
inline std::string frame(Opcode op, std::string_view payload) {
  std::string f;
  f.push_back(static_cast<char>(0x80 | static_cast<std::uint8_t>(op)));
  const std::size_t n = payload.size();
  if (n < 126) {
    f.push_back(static_cast<char>(n));
  } else if (n <= 0xFFFF) {
    f.push_back(static_cast<char>(126));
    f.push_back(static_cast<char>(n >> 8));
    f.push_back(static_cast<char>(n & 0xFF));
  } else {
    f.push_back(static_cast<char>(127));
    for (int i = 7; i >= 0; --i) f.push_back(static_cast<char>((static_cast<std::uint64_t>(n) >> (8 * i)) & 0xFF));
  }
  f.append(payload);
  return f;
}

/// Client-to-server frame, masked with `mask`.
inline std::string client_frame(Opcode op, std::string_view payload, std::uint32_t mask = 0x1234abcd) {
  std::string f = frame(op, payload);
  const std::size_t header = f.size() - payload.size();
  f[1] = static_cast<char>(f[1] | 0x80);
  const char m[4] = {static_cast<char>(mask >> 24), static_cast<char>(mask >> 16), static_cast<char>(mask >> 8),
                     static_cast<char>(mask)};
  f.insert(header, m, 4);
  for (std::size_t i = 0; i < payload.size(); ++i) f[header + 4 + i] = static_cast<char>(payload[i] ^ m[i % 4]);
  return f;
}

struct Frame {
  bool fin = true;
  Opcode op = Opcode::Text;
  std::string payload;
};

/// Parses one frame from the front of `buf`; returns nullopt when more bytes
/// are needed. Throws std::runtime_error on protocol violations.
inline std::optional<Frame> parse_frame(std::string& buf, bool require_mask) {
  if (buf.size() < 2) return std::nullopt;
  const auto b0 = static_cast<std::uint8_t>(buf[0]);
  const auto b1 = static_cast<std::uint8_t>(buf[1]);
  const bool masked = (b1 & 0x80) != 0;
  if (require_mask && !masked) throw std::runtime_error("unmasked client frame");
  std::uint64_t len = b1 & 0x7F;
  std::size_t pos = 2;
  if (len == 126) {
    if (buf.size() < 4) return std::nullopt;
    len = (static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[2])) << 8) | static_cast<std::uint8_t>(buf[3]);
    pos = 4;
  } else if (len == 127) {
    if (buf.size() < 10) return std::nullopt;
    len = 0;
    for (int i = 0; i < 8; ++i) len = (len << 8) | static_cast<std::uint8_t>(buf[2 + static_cast<std::size_t>(i)]);
    pos = 10;
  }
  if (len > kMaxLineBytes) throw std::runtime_error("frame too large");
  char mask[4] = {0, 0, 0, 0};
  if (masked) {
    if (buf.size() < pos + 4) return std::nullopt;
    std::memcpy(mask, buf.data() + pos, 4);
    pos += 4;
  }
  if (buf.size() < pos + len) return std::nullopt;
  Frame f;
  f.fin = (b0 & 0x80) != 0;
  f.op = static_cast<Opcode>(b0 & 0x0F);
  f.payload = buf.substr(pos, static_cast<std::size_t>(len));
  if (masked) {
    for (std::size_t i = 0; i < f.payload.size(); ++i) f.payload[i] = static_cast<char>(f.payload[i] ^ mask[i % 4]);
  }
  buf.erase(0, pos + static_cast<std::size_t>(len));
  return f;
}

}  // namespace ws

namespace detail {

inline bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n <= 0) return false;
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

class SocketSink : public Sink {
 public:
  SocketSink(int fd, bool websocket) : fd_(fd), websocket_(websocket) {}
  bool send(const std::string& line) override {
    std::lock_guard lk(mu_);
    if (closed_) return false;
    const bool ok = websocket_ ? send_all(fd_, ws::frame(ws::Opcode::Text, line)) : send_all(fd_, line + "\n");
    if (!ok) closed_ = true;
    return ok;
  }
  bool send_raw(std::string_view bytes) {
    std::lock_guard lk(mu_);
    return !closed_ && send_all(fd_, bytes);
  }
  void mark_closed() {
    std::lock_guard lk(mu_);
    closed_ = true;
  }

 private:
  std::mutex mu_;
  int fd_;
  bool websocket_;
  bool closed_ = false;
};

inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::string trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return std::string(s);
}

}  // namespace detail

/// TCP server: plain newline-delimited JSON, plus a WebSocket endpoint at
/// "/debug" on the same port.
class TcpServer {
 public:
  TcpServer(Dispatcher& dispatcher, std::uint16_t port = kDefaultPort, std::string host = "127.0.0.1")
      : dispatcher_(dispatcher) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw std::system_error(errno, std::generic_category(), "socket");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(listen_fd_);
      throw std::invalid_argument("bad listen address '" + host + "'");
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 16) != 0) {
      const int err = errno;
      ::close(listen_fd_);
      throw std::system_error(err, std::generic_category(), "cannot listen on port " + std::to_string(port));
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  ~TcpServer() { stop(); }

  std::uint16_t port() const { return port_; }

  void start() {
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  void stop() {
    if (stopped_.exchange(true)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (accept_thread_.joinable()) accept_thread_.join();
    {
      std::lock_guard lk(conn_mu_);
      for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : conn_threads_) {
      if (t.joinable()) t.join();
    }
  }

 private:
  void accept_loop() {
    while (!stopped_) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (stopped_) return;
        continue;
      }
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      std::lock_guard lk(conn_mu_);
      open_fds_.push_back(fd);
      conn_threads_.emplace_back([this, fd] { serve_connection(fd); });
    }
  }

  void serve_connection(int fd) {
    std::string buf;
    char chunk[4096];
    auto read_more = [&]() {
      const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
      if (n <= 0) return false;
      buf.append(chunk, static_cast<std::size_t>(n));
      return true;
    };
    // A WebSocket client speaks first with "GET ". Anything else, including
    // a client that stays silent, is a line client.
    constexpr std::string_view kGet = "GET ";
    bool ok = true;
    while (ok && buf.size() < kGet.size() && kGet.starts_with(buf)) {
      pollfd p{fd, POLLIN, 0};
      if (::poll(&p, 1, kClassifyMillis) <= 0) break;
      ok = read_more();
    }
    if (ok) {
      if (buf.starts_with(kGet)) {
        serve_websocket(fd, buf, read_more);
      } else {
        serve_lines(fd, buf, read_more);
      }
    }
    {
      std::lock_guard lk(conn_mu_);
      std::erase(open_fds_, fd);
    }
    ::close(fd);
  }

  template <class ReadMore>
  void serve_lines(int fd, std::string& buf, ReadMore& read_more) {
    auto sink = std::make_shared<detail::SocketSink>(fd, false);
    dispatcher_.attach(sink);
    for (;;) {
      std::size_t nl;
      while ((nl = buf.find('\n')) != std::string::npos) {
        std::string line = buf.substr(0, nl);
        buf.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) dispatcher_.submit(sink, std::move(line));
      }
      if (buf.size() > kMaxLineBytes) {
        sink->send(encode_event(event::Diagnostic{"MalformedMessage", "line too long", 0}));
        buf.clear();
      }
      if (!read_more()) break;
    }
    sink->mark_closed();
    dispatcher_.detach(sink.get());
  }

  template <class ReadMore>
  void serve_websocket(int fd, std::string& buf, ReadMore& read_more) {
    std::size_t end;
    while ((end = buf.find("\r\n\r\n")) == std::string::npos) {
      if (buf.size() > 16384 || !read_more()) return;
    }
    const std::string head = buf.substr(0, end);
    buf.erase(0, end + 4);
    std::string path, key, upgrade;
    {
      std::size_t pos = 0, line_no = 0;
      while (pos <= head.size()) {
        std::size_t eol = head.find("\r\n", pos);
        if (eol == std::string::npos) eol = head.size();
        const std::string line = head.substr(pos, eol - pos);
        if (line_no++ == 0) {
          const auto sp1 = line.find(' ');
          const auto sp2 = line.find(' ', sp1 + 1);
          if (sp1 != std::string::npos) path = line.substr(sp1 + 1, sp2 - sp1 - 1);
        } else if (auto colon = line.find(':'); colon != std::string::npos) {
          const std::string name = detail::lower(line.substr(0, colon));
          const std::string value = detail::trim(std::string_view(line).substr(colon + 1));
          if (name == "sec-websocket-key") key = value;
          if (name == "upgrade") upgrade = detail::lower(value);
        }
        pos = eol + 2;
      }
    }
    if (path != "/debug" || upgrade != "websocket" || key.empty()) {
      detail::send_all(fd, "HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
      return;
    }
    detail::send_all(fd, "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                         "Sec-WebSocket-Accept: " + ws::accept_key(key) + "\r\n\r\n");
    auto sink = std::make_shared<detail::SocketSink>(fd, true);
    dispatcher_.attach(sink);
    std::string message;
    bool open = true;
    while (open) {
      std::optional<ws::Frame> f;
      try {
        f = ws::parse_frame(buf, true);
      } catch (const std::exception&) {
        break;
      }
      if (!f) {
        if (!read_more()) break;
        continue;
      }
      switch (f->op) {
        case ws::Opcode::Text:
        case ws::Opcode::Binary:
        case ws::Opcode::Continuation:
          message += f->payload;
          if (message.size() > kMaxLineBytes) open = false;
          if (f->fin) {
            // a message may carry several newline-separated requests
            std::size_t start = 0;
            while (start <= message.size()) {
              auto nl = message.find('\n', start);
              if (nl == std::string::npos) nl = message.size();
              std::string line = message.substr(start, nl - start);
              if (!line.empty() && line.back() == '\r') line.pop_back();
              if (!line.empty()) dispatcher_.submit(sink, std::move(line));
              start = nl + 1;
            }
            message.clear();
          }
          break;
        case ws::Opcode::Ping:
          sink->send_raw(ws::frame(ws::Opcode::Pong, f->payload));
          break;
        case ws::Opcode::Close:
          sink->send_raw(ws::frame(ws::Opcode::Close, f->payload.substr(0, 2)));
          open = false;
          break;
        default:
          break;
      }
    }
    sink->mark_closed();
    dispatcher_.detach(sink.get());
  }

  static constexpr int kClassifyMillis = 200;

  Dispatcher& dispatcher_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopped_{false};
  std::thread accept_thread_;
  std::mutex conn_mu_;
  std::vector<int> open_fds_;
  std::vector<std::thread> conn_threads_;
};

}  // namespace mvdb::protocol
