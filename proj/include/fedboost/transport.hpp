// SPDX-License-Identifier: Apache-2.0
#pragma once

// Message transports. Both carry the same frame:
//
//   +----------------------+--------+------------------+
//   | length (u32, BE)     | kind   | body (UTF-8)     |
//   +----------------------+--------+------------------+
//   length = body bytes + 1
//
// The loopback pair is an in-process FIFO; the TCP endpoint reassembles
// frames from the byte stream and delivers each one whole or not at all.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "fedboost/error.hpp"

namespace fedboost::transport {

inline constexpr std::uint32_t kDefaultMaxFrame = 64u * 1024u * 1024u;

using Timeout = std::optional<std::chrono::milliseconds>;

struct Frame {
  std::uint8_t kind = 0;
  std::string body;

  friend bool operator==(const Frame&, const Frame&) = default;
};

inline std::string encode_frame(const Frame& f) {
  const auto length = static_cast<std::uint32_t>(f.body.size() + 1);
  std::string out(5 + f.body.size(), '\0');
  out[0] = static_cast<char>((length >> 24) & 0xff);
  out[1] = static_cast<char>((length >> 16) & 0xff);
  out[2] = static_cast<char>((length >> 8) & 0xff);
  out[3] = static_cast<char>(length & 0xff);
  out[4] = static_cast<char>(f.kind);
  std::memcpy(out.data() + 5, f.body.data(), f.body.size());
  return out;
}

inline std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

inline void check_declared_length(std::uint32_t length, std::uint32_t max_frame) {
  if (length == 0) fail(Errc::ProtocolViolation, "frame length 0 leaves no room for the kind byte");
  if (length > max_frame)
    fail(Errc::FrameTooLarge, "declared frame length " + std::to_string(length) + " exceeds limit " +
                                  std::to_string(max_frame));
}

/// Incremental parser for a concatenated frame stream.
class FrameDecoder {
 public:
  explicit FrameDecoder(std::uint32_t max_frame = kDefaultMaxFrame) : max_frame_(max_frame) {}

  void feed(std::string_view bytes) { buffer_.append(bytes); }

  std::optional<Frame> next() {
    if (buffer_.size() < 4) return std::nullopt;
    const auto length = read_be32(reinterpret_cast<const unsigned char*>(buffer_.data()));
    check_declared_length(length, max_frame_);
    if (buffer_.size() < 4 + std::size_t{length}) return std::nullopt;
    Frame f{static_cast<std::uint8_t>(buffer_[4]), buffer_.substr(5, length - 1)};
    buffer_.erase(0, 4 + std::size_t{length});
    return f;
  }

  std::size_t buffered() const noexcept { return buffer_.size(); }

 private:
  std::uint32_t max_frame_;
  std::string buffer_;
};

/// One side of a bidirectional channel. Supports one concurrent reader and
/// one concurrent writer.
class Endpoint {
 public:
  virtual ~Endpoint() = default;
  virtual void send(const Frame& frame) = 0;
  /// Blocks until a frame arrives; throws Timeout when `timeout` elapses and
  /// ChannelClosed when the peer is gone and nothing is buffered.
  virtual Frame recv(Timeout timeout = std::nullopt) = 0;
  virtual void close() = 0;
};

namespace detail {

struct Queue {
  std::deque<Frame> items;
  bool closed = false;
};

struct LoopbackChannel {
  explicit LoopbackChannel(std::size_t cap) : capacity(cap) {}
  std::mutex mu;
  std::condition_variable cv;
  std::size_t capacity;
  Queue lanes[2];
};

}  // namespace detail

class LoopbackEndpoint final : public Endpoint {
 public:
  LoopbackEndpoint(std::shared_ptr<detail::LoopbackChannel> ch, int side) : ch_(std::move(ch)), side_(side) {}
  ~LoopbackEndpoint() override { close(); }

  void send(const Frame& frame) override {
    std::unique_lock lock(ch_->mu);
    auto& out = ch_->lanes[1 - side_];
    ch_->cv.wait(lock, [&] { return out.closed || out.items.size() < ch_->capacity; });
    if (out.closed) fail(Errc::ChannelClosed, "send on a closed loopback channel");
    out.items.push_back(frame);
    ch_->cv.notify_all();
  }

  Frame recv(Timeout timeout) override {
    std::unique_lock lock(ch_->mu);
    auto& in = ch_->lanes[side_];
    auto ready = [&] { return !in.items.empty() || in.closed; };
    if (timeout) {
      if (!ch_->cv.wait_for(lock, *timeout, ready)) fail(Errc::Timeout, "loopback receive timed out");
    } else {
      ch_->cv.wait(lock, ready);
    }
    if (in.items.empty()) fail(Errc::ChannelClosed, "loopback channel closed");
    Frame f = std::move(in.items.front());
    in.items.pop_front();
    ch_->cv.notify_all();
    return f;
  }

  // Closing either side closes both lanes; frames already queued stay readable.
  void close() override {
    std::lock_guard lock(ch_->mu);
    ch_->lanes[0].closed = true;
    ch_->lanes[1].closed = true;
    ch_->cv.notify_all();
  }

 private:
  std::shared_ptr<detail::LoopbackChannel> ch_;
  int side_;
};

inline std::pair<std::unique_ptr<Endpoint>, std::unique_ptr<Endpoint>> loopback_pair(std::size_t capacity = 1024) {
  if (capacity < 1) fail(Errc::InvalidArgument, "loopback capacity must be >= 1");
  auto ch = std::make_shared<detail::LoopbackChannel>(capacity);
  return {std::make_unique<LoopbackEndpoint>(ch, 0), std::make_unique<LoopbackEndpoint>(ch, 1)};
}

namespace detail {

inline std::string os_error(const std::string& what) { return what + ": " + std::strerror(errno); }

struct HostPort {
  std::string host;
  std::string port;
};

inline HostPort parse_addr(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == addr.size())
    fail(Errc::TransportError, "address '" + addr + "' is not host:port");
  HostPort hp{addr.substr(0, colon), addr.substr(colon + 1)};
  for (char ch : hp.port)
    if (ch < '0' || ch > '9') fail(Errc::TransportError, "address '" + addr + "' has a non-numeric port");
  return hp;
}

struct AddrInfo {
  addrinfo* head = nullptr;
  ~AddrInfo() {
    if (head) freeaddrinfo(head);
  }
};

inline void resolve(const HostPort& hp, bool passive, AddrInfo& out) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  const int rc = getaddrinfo(hp.host.c_str(), hp.port.c_str(), &hints, &out.head);
  if (rc != 0) fail(Errc::TransportError, "cannot resolve " + hp.host + ": " + gai_strerror(rc));
}

// Waits for readability; false on timeout.
inline bool wait_readable(int fd, Timeout timeout) {
  pollfd p{fd, POLLIN, 0};
  const int ms = timeout ? static_cast<int>(timeout->count()) : -1;
  for (;;) {
    const int rc = ::poll(&p, 1, ms);
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) fail(Errc::TransportError, os_error("poll"));
  }
}

}  // namespace detail

class TcpEndpoint final : public Endpoint {
 public:
  explicit TcpEndpoint(int fd, std::uint32_t max_frame = kDefaultMaxFrame)
      : fd_(fd), max_frame_(max_frame), decoder_(max_frame) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  ~TcpEndpoint() override {
    close();
    if (fd_ >= 0) ::close(fd_);
  }
  TcpEndpoint(const TcpEndpoint&) = delete;
  TcpEndpoint& operator=(const TcpEndpoint&) = delete;

  void send(const Frame& frame) override {
    if (frame.body.size() + 1 > max_frame_) fail(Errc::FrameTooLarge, "outgoing frame exceeds limit");
    send_raw(encode_frame(frame));
  }

  /// Writes bytes verbatim; used to exercise reassembly and malformed input.
  void send_raw(std::string_view bytes) {
    std::lock_guard lock(write_mu_);
    std::size_t sent = 0;
    while (sent < bytes.size()) {
      const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        if (errno == EPIPE || errno == ECONNRESET) fail(Errc::ChannelClosed, "peer closed the connection");
        fail(Errc::TransportError, detail::os_error("send"));
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  Frame recv(Timeout timeout) override {
    const auto deadline = timeout ? std::optional(std::chrono::steady_clock::now() + *timeout) : std::nullopt;
    for (;;) {
      std::optional<Frame> f;
      try {
        f = decoder_.next();
      } catch (const Error&) {
        close();
        throw;
      }
      if (f) return std::move(*f);
      Timeout remaining;
      if (deadline) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - std::chrono::steady_clock::now());
        remaining = std::max(left, std::chrono::milliseconds(0));
      }
      if (!detail::wait_readable(fd_, remaining)) fail(Errc::Timeout, "tcp receive timed out");
      char buf[16384];
      const ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
      if (n < 0) {
        if (errno == EINTR) continue;
        if (errno == ECONNRESET) fail(Errc::ChannelClosed, "connection reset");
        fail(Errc::TransportError, detail::os_error("recv"));
      }
      if (n == 0) {
        if (decoder_.buffered() > 0) fail(Errc::ProtocolViolation, "connection closed mid-frame");
        fail(Errc::ChannelClosed, "peer closed the connection");
      }
      decoder_.feed(std::string_view(buf, static_cast<std::size_t>(n)));
    }
  }

  // Shuts the socket down so a blocked reader wakes; the descriptor is
  // released by the destructor.
  void close() override {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_;
  std::uint32_t max_frame_;
  FrameDecoder decoder_;
  std::mutex write_mu_;
};

class TcpListener {
 public:
  explicit TcpListener(const std::string& addr, std::uint32_t max_frame = kDefaultMaxFrame) : max_frame_(max_frame) {
    const auto hp = detail::parse_addr(addr);
    detail::AddrInfo info;
    detail::resolve(hp, true, info);
    fd_ = ::socket(info.head->ai_family, info.head->ai_socktype, info.head->ai_protocol);
    if (fd_ < 0) fail(Errc::TransportError, detail::os_error("socket"));
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd_, info.head->ai_addr, info.head->ai_addrlen) != 0) {
      const auto msg = detail::os_error("bind " + addr);
      ::close(fd_);
      fail(Errc::TransportError, msg);
    }
    if (::listen(fd_, 64) != 0) {
      const auto msg = detail::os_error("listen");
      ::close(fd_);
      fail(Errc::TransportError, msg);
    }
  }
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const {
    sockaddr_in sa{};
    socklen_t len = sizeof(sa);
    if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len) != 0)
      fail(Errc::TransportError, detail::os_error("getsockname"));
    return ntohs(sa.sin_port);
  }

  std::unique_ptr<TcpEndpoint> accept(Timeout timeout = std::nullopt) {
    if (!detail::wait_readable(fd_, timeout)) fail(Errc::Timeout, "accept timed out");
    for (;;) {
      const int fd = ::accept(fd_, nullptr, nullptr);
      if (fd >= 0) return std::make_unique<TcpEndpoint>(fd, max_frame_);
      if (errno != EINTR) fail(Errc::TransportError, detail::os_error("accept"));
    }
  }

 private:
  int fd_ = -1;
  std::uint32_t max_frame_;
};

inline std::unique_ptr<TcpListener> tcp_listen(const std::string& addr, std::uint32_t max_frame = kDefaultMaxFrame) {
  return std::make_unique<TcpListener>(addr, max_frame);
}

inline std::unique_ptr<TcpEndpoint> tcp_connect(const std::string& addr, std::uint32_t max_frame = kDefaultMaxFrame) {
  const auto hp = detail::parse_addr(addr);
  detail::AddrInfo info;
  detail::resolve(hp, false, info);
  const int fd = ::socket(info.head->ai_family, info.head->ai_socktype, info.head->ai_protocol);
  if (fd < 0) fail(Errc::TransportError, detail::os_error("socket"));
  for (;;) {
    if (::connect(fd, info.head->ai_addr, info.head->ai_addrlen) == 0) break;
    if (errno == EINTR) continue;
    const auto msg = detail::os_error("connect " + addr);
    ::close(fd);
    fail(Errc::TransportError, msg);
  }
  return std::make_unique<TcpEndpoint>(fd, max_frame);
}

}  // namespace fedboost::transport
