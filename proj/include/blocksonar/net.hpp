#pragma once

// POSIX TCP transport backing wire::Channel. Blocking sockets with poll()
// for read timeouts; v4 and v6 addresses accepted everywhere.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <memory>
#include <string>

#include "blocksonar/wire.hpp"

namespace blocksonar::net {

using wire::ChannelError;

namespace detail {

inline std::string errno_str(const char* op) {
  return std::string(op) + ": " + std::strerror(errno);
}

}  // namespace detail

class TcpConn : public wire::Channel {
 public:
  explicit TcpConn(int fd) : fd_(fd) {}
  TcpConn(const TcpConn&) = delete;
  TcpConn& operator=(const TcpConn&) = delete;
  ~TcpConn() override { close_fd(); }

  // Blocking connect; throws ChannelError{Io} on failure or timeout.
  static std::unique_ptr<TcpConn> connect(const std::string& host, uint16_t port,
                                          int timeout_ms = 10'000) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    std::string service = std::to_string(port);
    if (int rc = getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
      throw ChannelError(ChannelError::Io, std::string("resolve ") + host + ": " + gai_strerror(rc));
    std::unique_ptr<addrinfo, decltype(&freeaddrinfo)> guard(res, freeaddrinfo);

    std::string last_err = "no addresses";
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
      int fd = socket(ai->ai_family, SOCK_STREAM, 0);
      if (fd < 0) {
        last_err = detail::errno_str("socket");
        continue;
      }
      int flags = fcntl(fd, F_GETFL, 0);
      fcntl(fd, F_SETFL, flags | O_NONBLOCK);
      int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
      if (rc != 0 && errno == EINPROGRESS) {
        pollfd pfd{fd, POLLOUT, 0};
        rc = poll(&pfd, 1, timeout_ms);
        if (rc == 1) {
          int err = 0;
          socklen_t len = sizeof err;
          getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
          rc = err == 0 ? 0 : -1;
          errno = err;
        } else {
          rc = -1;
          errno = rc == 0 ? ETIMEDOUT : errno;
        }
      }
      if (rc != 0) {
        last_err = detail::errno_str("connect");
        ::close(fd);
        continue;
      }
      fcntl(fd, F_SETFL, flags);
      int one = 1;
      setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return std::make_unique<TcpConn>(fd);
    }
    throw ChannelError(ChannelError::Io, "connect " + host + ":" + service + ": " + last_err);
  }

  size_t read_some(uint8_t* buf, size_t n, int timeout_ms) override {
    pollfd pfd{fd_, POLLIN, 0};
    int rc = poll(&pfd, 1, timeout_ms);
    if (rc == 0) throw ChannelError(ChannelError::Timeout, "read timeout");
    if (rc < 0) throw ChannelError(ChannelError::Io, detail::errno_str("poll"));
    ssize_t got = recv(fd_, buf, n, 0);
    if (got < 0) throw ChannelError(ChannelError::Io, detail::errno_str("recv"));
    return static_cast<size_t>(got);
  }

  void write_all(std::span<const uint8_t> data) override {
    size_t off = 0;
    while (off < data.size()) {
      ssize_t sent = send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (sent < 0) {
        if (errno == EINTR) continue;
        throw ChannelError(ChannelError::Io, detail::errno_str("send"));
      }
      off += static_cast<size_t>(sent);
    }
  }

  void shutdown() override { ::shutdown(fd_, SHUT_RDWR); }

  std::string peer_name() const {
    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    if (getpeername(fd_, reinterpret_cast<sockaddr*>(&ss), &len) != 0) return "?";
    char host[NI_MAXHOST], serv[NI_MAXSERV];
    if (getnameinfo(reinterpret_cast<sockaddr*>(&ss), len, host, sizeof host, serv, sizeof serv,
                    NI_NUMERICHOST | NI_NUMERICSERV) != 0)
      return "?";
    if (ss.ss_family == AF_INET6) return std::string("[") + host + "]:" + serv;
    return std::string(host) + ":" + serv;
  }

 private:
  void close_fd() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }
  int fd_;
};

class TcpListener {
 public:
  // Binds 127.0.0.1 by default; port 0 picks a free port (see port()).
  explicit TcpListener(uint16_t port, const std::string& bind_addr = "127.0.0.1") {
    fd_ = socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw ChannelError(ChannelError::Io, detail::errno_str("socket"));
    int one = 1;
    setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    if (inet_pton(AF_INET, bind_addr.c_str(), &sa.sin_addr) != 1) {
      ::close(fd_);
      throw ChannelError(ChannelError::Io, "bad bind address " + bind_addr);
    }
    if (bind(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0 || listen(fd_, 64) != 0) {
      std::string err = detail::errno_str("bind/listen");
      ::close(fd_);
      throw ChannelError(ChannelError::Io, err);
    }
    socklen_t len = sizeof sa;
    getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len);
    port_ = ntohs(sa.sin_port);
  }
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }

  uint16_t port() const { return port_; }

  std::unique_ptr<TcpConn> accept(int timeout_ms = -1) {
    pollfd pfd{fd_, POLLIN, 0};
    int rc = poll(&pfd, 1, timeout_ms);
    if (rc == 0) throw ChannelError(ChannelError::Timeout, "accept timeout");
    if (rc < 0) throw ChannelError(ChannelError::Io, detail::errno_str("poll"));
    int cfd = ::accept(fd_, nullptr, nullptr);
    if (cfd < 0) throw ChannelError(ChannelError::Io, detail::errno_str("accept"));
    int one = 1;
    setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return std::make_unique<TcpConn>(cfd);
  }

 private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

}  // namespace blocksonar::net
