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

#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "wire/protocol.hpp"

namespace storetorrent::net {

using Clock = std::chrono::steady_clock;
using Millis = std::chrono::milliseconds;

// Owning file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) noexcept : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  int release() noexcept { return std::exchange(fd_, -1); }
  void reset() noexcept;

 private:
  int fd_ = -1;
};

Fd tcp_listen(const std::string& addr, std::uint16_t port, int backlog = 128);
std::uint16_t local_port(int fd);

// Blocking connect bounded by timeout. Throws Error(peer_failed) on refusal
// or timeout; the message names host:port.
Fd tcp_connect(const std::string& host, std::uint16_t port, Millis timeout);

void set_nonblocking(int fd, bool on);
void set_nodelay(int fd);

// Writes every byte or throws Error(peer_failed). Honors deadline.
void send_all(int fd, std::span<const std::uint8_t> data, Clock::time_point deadline);

// Blocking framed connection used for short request/reply exchanges
// (peer ring links, probes, admin operations).
class FrameConnection {
 public:
  FrameConnection() = default;
  explicit FrameConnection(Fd fd) : fd_(std::move(fd)) {}

  static FrameConnection connect(const std::string& host, std::uint16_t port, Millis timeout);

  void send(const wire::Message& m, Millis timeout);
  void send_bytes(std::span<const std::uint8_t> bytes, Millis timeout);
  // Next frame, or nullopt on timeout. Throws Error(peer_failed) on EOF or
  // socket error, ProtocolError on malformed data.
  std::optional<wire::Message> receive(Millis timeout);

  bool valid() const noexcept { return fd_.valid(); }
  int fd() const noexcept { return fd_.get(); }
  void close() noexcept { fd_.reset(); }

 private:
  Fd fd_;
  wire::FrameDecoder decoder_;
  std::deque<wire::Message> ready_;
};

std::string endpoint(const std::string& host, std::uint16_t port);

}  // namespace storetorrent::net
