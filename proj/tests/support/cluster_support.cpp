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

#include "cluster_support.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <stdexcept>

#include "meta/infofile.hpp"
#include "wire/crc32.hpp"

namespace storetorrent::test {

fs::path st_binary() {
  if (const char* env = std::getenv("ST_BINARY")) return env;
#ifdef ST_BINARY_PATH
  return ST_BINARY_PATH;
#else
  return "st";
#endif
}

ScratchDir::ScratchDir(const std::string& tag) {
  std::string tmpl = (fs::temp_directory_path() / ("st-" + tag + "-XXXXXX")).string();
  if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

ScratchDir::~ScratchDir() {
  if (std::getenv("ST_KEEP_SCRATCH")) return;
  std::error_code ec;
  fs::remove_all(path_, ec);
}

harness::ClusterSpec small_cluster(const fs::path& base, std::size_t peers) {
  harness::ClusterSpec s;
  s.peers = peers;
  s.base = base;
  s.st_binary = st_binary();
  s.announce_interval = 250ms;
  s.k_missed = 3;
  s.durable_write = false;
  s.scrub_min_age = 0ms;
  return s;
}

std::set<std::string> Dataset::names() const {
  std::set<std::string> out;
  for (std::size_t i = 0; i < count; ++i) out.insert(name(i));
  return out;
}

std::vector<std::string> write_dataset(client::FileHandle& f, const Dataset& d,
                                       const std::function<void(std::size_t)>& after_queue) {
  std::vector<std::string> failed;
  auto drain = [&](std::chrono::milliseconds wait) {
    for (const auto& e : f.poll(wait)) {
      if (e.type == client::Event::Type::failed) failed.push_back(e.name + ": " + e.message);
    }
  };
  for (std::size_t i = 0; i < d.count; ++i) {
    auto data = std::make_shared<const client::Bytes>(d.payload(i));
    while (!f.queue_put(data, d.name(i))) drain(100ms);
    if (after_queue) after_queue(i);
    drain(0ms);
  }
  while (!f.get_inflight().empty()) drain(100ms);
  f.flush();
  drain(0ms);
  return failed;
}

std::vector<std::string> verify_dataset(const client::ClientConfig& cfg, const Dataset& d) {
  std::vector<std::string> problems;
  auto f = client::FileHandle::open(cfg, d.path);
  std::set<std::string> committed;
  for (const auto& r : f.records()) committed.insert(r.name);
  for (std::size_t i = 0; i < d.count; ++i) {
    auto name = d.name(i);
    if (!committed.count(name)) {
      problems.push_back(name + ": not committed");
      continue;
    }
    try {
      auto got = f.get(name);
      if (got != d.payload(i)) problems.push_back(name + ": content differs");
    } catch (const std::exception& e) {
      problems.push_back(name + ": " + e.what());
    }
  }
  return problems;
}

std::map<std::uint16_t, std::size_t> peer_indices(const harness::Cluster& c, const std::string& path) {
  auto db = meta::Infofile::open(c.meta_root() / meta::normalize_path(path), meta::Infofile::Mode::read_only);
  std::map<std::uint16_t, std::size_t> out;
  for (const auto& p : db.info().peerlist) {
    auto idx = c.peer_index(p);
    if (idx) out[p.peer_id] = *idx;
  }
  return out;
}

std::set<std::size_t> running_peers(const harness::Cluster& c) {
  std::set<std::size_t> out;
  for (std::size_t i = 0; i < c.peers().size(); ++i) {
    if (c.peers()[i].running && !c.peers()[i].stopped) out.insert(i);
  }
  return out;
}

std::vector<std::string> holder_problems(const harness::Cluster& c, const std::string& path,
                                         const std::set<std::size_t>* alive) {
  auto db = meta::Infofile::open(c.meta_root() / meta::normalize_path(path), meta::Infofile::Mode::read_only);
  auto info = db.info();
  auto index = peer_indices(c, path);
  std::vector<std::string> problems;
  for (const auto& r : db.records()) {
    std::set<std::uint16_t> distinct(r.locations.begin(), r.locations.end());
    if (r.locations.size() != static_cast<std::size_t>(info.ft.copies) || distinct.size() != r.locations.size()) {
      problems.push_back(r.name + ": holders not distinct");
      continue;
    }
    if (!alive) continue;
    for (auto id : r.locations) {
      auto it = index.find(id);
      if (it == index.end() || !alive->count(it->second)) {
        problems.push_back(r.name + ": holder " + std::to_string(id) + " not alive");
        break;
      }
    }
  }
  return problems;
}

CliResult run_cli(const std::vector<std::string>& args) {
  std::string cmd = "'" + st_binary().string() + "'";
  for (const auto& a : args) {
    std::string q;
    for (char ch : a) {
      if (ch == '\'') {
        q += "'\\''";
      } else {
        q += ch;
      }
    }
    cmd += " '" + q + "'";
  }
  cmd += " 2>&1";
  CliResult r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), p)) > 0) r.out.append(buf, n);
  int st = ::pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

RawPeer::RawPeer(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  ::inet_pton(AF_INET, host.c_str(), &addr.sin_addr);
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd_);
    throw std::runtime_error("connect to peer failed");
  }
}

RawPeer::~RawPeer() {
  if (fd_ >= 0) ::close(fd_);
}

void RawPeer::send(const wire::Message& m) { send_raw(wire::encode_message(m)); }

void RawPeer::send_raw(const std::vector<std::uint8_t>& bytes) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    ssize_t w = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (w <= 0) throw std::runtime_error("send to peer failed");
    off += static_cast<std::size_t>(w);
  }
}

std::vector<wire::Message> RawPeer::receive(std::size_t count, std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  std::vector<std::uint8_t> buf(1 << 16);
  while (ready_.size() < count) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) break;
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) break;
    ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n <= 0) break;
    decoder_.feed(std::span<const std::uint8_t>(buf.data(), static_cast<std::size_t>(n)));
    for (auto& m : decoder_.drain()) ready_.push_back(std::move(m));
  }
  std::size_t take = std::min(count, ready_.size());
  std::vector<wire::Message> out(ready_.begin(), ready_.begin() + static_cast<long>(take));
  ready_.erase(ready_.begin(), ready_.begin() + static_cast<long>(take));
  return out;
}

bool RawPeer::closed(std::chrono::milliseconds timeout) {
  pollfd p{fd_, POLLIN, 0};
  if (::poll(&p, 1, static_cast<int>(timeout.count())) <= 0) return false;
  char c;
  return ::recv(fd_, &c, 1, MSG_PEEK) == 0;
}

}  // namespace storetorrent::test
