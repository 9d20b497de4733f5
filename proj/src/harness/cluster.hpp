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

#include <sys/types.h>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "client/client.hpp"
#include "meta/infofile.hpp"

namespace storetorrent::harness {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace std::chrono_literals;

struct ClusterSpec {
  std::size_t peers = 4;
  fs::path base;
  std::uint16_t port_base = 0;  // 0 picks a free contiguous range
  std::uint16_t port_span = 64;  // ports reserved for tracker + peers (incl. expansion)
  std::chrono::milliseconds announce_interval = 500ms;
  int k_missed = 3;
  bool durable_write = true;
  std::uint64_t key_seed = 1;
  std::uint64_t seed = 1;  // tracker scheduling seed
  std::uint64_t peer_capacity = 64ull << 30;
  std::uint64_t target_bytes_per_peer = 1ull << 20;
  std::chrono::milliseconds scrub_interval = 24h;
  std::chrono::milliseconds scrub_min_age = 1h;
  fs::path st_binary;  // defaults to the running executable
  std::chrono::milliseconds startup_timeout = 10s;
};

enum class FaultKind { kill, hang, resume, drop_connections, disk_corrupt, rejoin_wiped, restart };

FaultKind parse_fault_kind(const std::string& s);
std::string fault_kind_name(FaultKind k);

struct FaultAction {
  std::size_t peer = 0;
  FaultKind kind = FaultKind::kill;
  // disk_corrupt only: StoreTorrent path and record name.
  std::string path;
  std::string name;
};

struct ProcInfo {
  pid_t pid = -1;
  std::uint16_t port = 0;
  fs::path base;
  std::string node_id;
  bool running = false;
  bool stopped = false;  // SIGSTOP'd
};

// Local StoreTorrent deployment: one tracker and N peer daemons, each a
// separate `st` process, sharing an infofile directory under base/meta.
class Cluster {
 public:
  static Cluster spawn(const ClusterSpec& spec);
  // Loads a cluster started by another process from base/cluster.json. The
  // returned handle does not stop the cluster when destroyed.
  static Cluster attach(const fs::path& base);

  Cluster(Cluster&&) noexcept;
  Cluster& operator=(Cluster&&) noexcept;
  ~Cluster();

  // Sends SIGTERM to every process, then SIGKILL after `grace`.
  void shutdown(std::chrono::milliseconds grace = 2s);
  void detach() noexcept { owning_ = false; }
  void save() const;

  const ClusterSpec& spec() const noexcept { return spec_; }
  std::string tracker_url() const;
  fs::path meta_root() const { return spec_.base / "meta"; }
  fs::path key_file() const { return spec_.base / "key"; }
  const std::vector<ProcInfo>& peers() const noexcept { return peers_; }
  const ProcInfo& tracker() const noexcept { return tracker_; }
  std::string peer_endpoint(std::size_t i) const;
  std::optional<std::size_t> peer_index(const meta::PeerInfo& p) const;

  client::ClientConfig client_config(std::optional<std::size_t> local_peer = std::nullopt) const;

  void inject(const FaultAction& action);
  // Asks every running peer to scrub now (SIGUSR1); returns the count signalled.
  std::size_t trigger_scrub();
  // Starts n new peers and waits for their first announce.
  std::vector<std::size_t> expand(std::size_t n);

  json status() const;
  bool wait_for_alive(std::size_t count, std::chrono::milliseconds timeout) const;
  // Elapsed time until the tracker lists the peer as failed.
  std::optional<std::chrono::milliseconds> wait_for_failed(std::size_t peer, std::chrono::milliseconds timeout) const;
  // Sum of a per-peer counter over the latest announces.
  std::uint64_t peer_counter(const std::string& key) const;
  // Waits until every alive peer has announced a snapshot taken after this call.
  void wait_for_announces() const;

 private:
  Cluster() = default;
  void start_tracker();
  void start_peer(std::size_t i);
  std::vector<std::string> peer_argv(std::size_t i) const;

  ClusterSpec spec_;
  ProcInfo tracker_;
  std::vector<ProcInfo> peers_;
  bool owning_ = false;
};

// Process helpers shared with the benchmarks.
struct Child {
  pid_t pid = -1;
  int in = -1;   // write end of the child's stdin, or -1
  int out = -1;  // read end of the child's stdout, or -1
};
Child spawn_child(const std::vector<std::string>& argv, const fs::path& log, bool pipes, bool new_session);
bool process_alive(pid_t pid);
// Waits for the process to exit; returns false on timeout.
bool wait_exit(pid_t pid, std::chrono::milliseconds timeout);
fs::path self_executable();

}  // namespace storetorrent::harness
