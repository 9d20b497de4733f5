// Copyright 2026 The StoreTorrent Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "common/net.hpp"

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

#include "common/error.hpp"

namespace storetorrent::net {
namespace {

int remaining_ms(Clock::time_point deadline) {
  auto left = std::chrono::duration_cast<Millis>(deadline - Clock::now()).count();
  return left < 0 ? 0 : static_cast<int>(left);
}

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(port);
  std::string h = host.empty() || host == "localhost" ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, h.c_str(), &sa.sin_addr) == 1) return sa;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(h.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw Error(Errc::invalid_argument, "cannot resolve host " + host);
  }
  sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return sa;
}

}  // namespace

void Fd::reset() noexcept {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

std::string endpoint(const std::string& host, std::uint16_t port) {
  return host + ":" + std::to_string(port);
}

Fd tcp_listen(const std::string& addr, std::uint16_t port, int backlog) {
  Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!fd.valid()) throw Error(Errc::io, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in sa = resolve(addr.empty() ? "0.0.0.0" : addr, port);
  if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
    throw Error(Errc::io, "bind " + endpoint(addr, port) + ": " + std::strerror(errno));
  }
  if (::listen(fd.get(), backlog) != 0) throw Error(Errc::io, std::string("listen: ") + std::strerror(errno));
  return fd;
}

std::uint16_t local_port(int fd) {
  sockaddr_in sa{};
  socklen_t len = sizeof(sa);
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len) != 0) {
    throw Error(Errc::io, std::string("getsockname: ") + std::strerror(errno));
  }
  return ntohs(sa.sin_port);
}

void set_nonblocking(int fd, bool on) {
  int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, on ? (flags | O_NONBLOCK) : (flags & ~O_NONBLOCK));
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

Fd tcp_connect(const std::string& host, std::uint16_t port, Millis timeout) {
  sockaddr_in sa = resolve(host, port);
  Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0));
  if (!fd.valid()) throw Error(Errc::io, std::string("socket: ") + std::strerror(errno));
  int rc = ::connect(fd.get(), reinterpret_cast<sockaddr*>(&sa), sizeof(sa));
  if (rc != 0 && errno != EINPROGRESS) {
    throw Error(Errc::peer_failed, "connect " + endpoint(host, port) + ": " + std::strerror(errno));
  }
  if (rc != 0) {
    pollfd pfd{fd.get(), POLLOUT, 0};
    int n;
    do {
      n = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    } while (n < 0 && errno == EINTR);
    if (n == 0) throw Error(Errc::peer_failed, "connect " + endpoint(host, port) + ": timed out");
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) throw Error(Errc::peer_failed, "connect " + endpoint(host, port) + ": " + std::strerror(err));
  }
  set_nodelay(fd.get());
  return fd;
}

void send_all(int fd, std::span<const std::uint8_t> data, Clock::time_point deadline) {
  std::size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL | MSG_DONTWAIT);
    if (n > 0) {
      off += static_cast<std::size_t>(n);
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
      pollfd pfd{fd, POLLOUT, 0};
      int left = remaining_ms(deadline);
      if (left == 0 || ::poll(&pfd, 1, left) == 0) throw Error(Errc::peer_failed, "send timed out");
      continue;
    }
    throw Error(Errc::peer_failed, std::string("send: ") + std::strerror(errno));
  }
}

FrameConnection FrameConnection::connect(const std::string& host, std::uint16_t port, Millis timeout) {
  return FrameConnection(tcp_connect(host, port, timeout));
}

void FrameConnection::send(const wire::Message& m, Millis timeout) {
  auto bytes = wire::encode_message(m);
  send_bytes(bytes, timeout);
}

void FrameConnection::send_bytes(std::span<const std::uint8_t> bytes, Millis timeout) {
  if (!fd_.valid()) throw Error(Errc::peer_failed, "connection closed");
  send_all(fd_.get(), bytes, Clock::now() + timeout);
}

std::optional<wire::Message> FrameConnection::receive(Millis timeout) {
  auto deadline = Clock::now() + timeout;
  std::uint8_t buf[64 * 1024];
  while (true) {
    if (!ready_.empty()) {
      auto m = std::move(ready_.front());
      ready_.pop_front();
      return m;
    }
    if (!fd_.valid()) throw Error(Errc::peer_failed, "connection closed");
    pollfd pfd{fd_.get(), POLLIN, 0};
    int left = remaining_ms(deadline);
    int n = ::poll(&pfd, 1, left);
    if (n < 0 && errno == EINTR) continue;
    if (n == 0) return std::nullopt;
    ssize_t got = ::recv(fd_.get(), buf, sizeof(buf), MSG_DONTWAIT);
    if (got == 0) throw Error(Errc::peer_failed, "connection closed by remote");
    if (got < 0) {
      if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) continue;
      throw Error(Errc::peer_failed, std::string("recv: ") + std::strerror(errno));
    }
    decoder_.feed(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(got)));
    for (auto& m : decoder_.drain()) ready_.push_back(std::move(m));
  }
}

}  // namespace storetorrent::net
