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

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "common/net.hpp"
#include "peer/replica_index.hpp"
#include "store/peer_store.hpp"
#include "wire/protocol.hpp"

namespace storetorrent::peer {

namespace fs = std::filesystem;
using namespace std::chrono_literals;

struct PeerConfig {
  fs::path base;
  std::string bind_addr = "127.0.0.1";
  std::string advertise_addr = "127.0.0.1";
  std::uint16_t port = 0;
  std::string tracker_url;  // empty disables announces
  std::chrono::milliseconds announce_interval = 10s;
  bool durable_write = true;
  std::vector<std::uint8_t> shared_key;
  fs::path meta_root;  // read-only infofile tree; empty disables scrubbing
  std::chrono::milliseconds scrub_interval = 24h;
  std::chrono::milliseconds scrub_min_age = 1h;
  std::uint64_t capacity = 0;  // reported device capacity; 0 = statvfs
  std::chrono::milliseconds ring_timeout_base = 2000ms;
  std::chrono::milliseconds ring_timeout_per_peer = 50ms;
  std::string node_id;
};

struct PeerStats {
  std::uint64_t piece_bytes_sent = 0;
  std::uint64_t index_ring_bytes_sent = 0;
  std::uint64_t collectives = 0;
  std::uint64_t records_stored = 0;
  std::uint64_t connections = 0;
};

class RingSession;
struct Connection;

// Storage server. Services PUT/GET/DELETE/GET_LOCAL on one TCP port,
// announces to the tracker, scrubs uncommitted records, and joins ring
// collectives with the other peers of a file.
class PeerDaemon {
 public:
  explicit PeerDaemon(PeerConfig config);
  ~PeerDaemon();
  PeerDaemon(const PeerDaemon&) = delete;
  PeerDaemon& operator=(const PeerDaemon&) = delete;

  // Binds and starts the acceptor, announce and scrub threads. Returns the port.
  std::uint16_t start();
  // Tears down every connection and joins all threads.
  void stop();

  bool announce_once();
  void trigger_scrub();
  // Scrubs every file held; returns the number of entries removed.
  std::size_t scrub_now(std::chrono::milliseconds min_age);
  void drop_connections();

  // Runs (or joins) the ring collective for file_id over ring and returns
  // the global replica map. Throws Error(peer_failed) with the dead peer
  // ids in the message, or Error(duplicate_rank).
  ReplicaMap allreduce_replica_index(const std::string& file_id, const std::vector<wire::RingPeer>& ring);

  store::PeerStore& store() noexcept { return *store_; }
  const PeerConfig& config() const noexcept { return config_; }
  std::uint16_t port() const noexcept { return port_; }
  PeerStats stats() const;

 private:
  friend class RingSession;
  void accept_loop();
  void announce_loop();
  void scrub_loop();
  void serve(std::shared_ptr<Connection> conn);
  void spawn(std::function<void()> fn);

  std::shared_ptr<RingSession> join_session(const std::string& file_id, std::uint32_t nonce,
                                            const std::vector<wire::RingPeer>& ring,
                                            std::shared_ptr<Connection> incoming);
  std::shared_ptr<RingSession> find_session(const std::string& file_id, std::uint32_t nonce);
  void session_finished(const RingSession& s);
  std::optional<std::size_t> self_index(const std::vector<wire::RingPeer>& ring) const;
  std::vector<wire::IndexEntry> local_index(const std::string& file_id);
  std::chrono::milliseconds ring_timeout(std::size_t n) const {
    return config_.ring_timeout_base + config_.ring_timeout_per_peer * static_cast<long>(n);
  }

  PeerConfig config_;
  std::unique_ptr<store::PeerStore> store_;
  net::Fd listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint32_t> next_conn_id_{1};

  std::mutex threads_mutex_;
  std::condition_variable threads_cv_;
  int active_threads_ = 0;

  std::mutex conns_mutex_;
  std::map<std::uint32_t, std::shared_ptr<Connection>> conns_;

  std::mutex wake_mutex_;
  std::condition_variable wake_cv_;
  bool scrub_requested_ = false;

  std::mutex sessions_mutex_;
  std::map<std::pair<std::string, std::uint32_t>, std::shared_ptr<RingSession>> sessions_;
  std::mt19937 nonce_rng_{std::random_device{}()};

  std::atomic<std::uint64_t> piece_bytes_sent_{0};
  std::atomic<std::uint64_t> ring_bytes_sent_{0};
  std::atomic<std::uint64_t> collectives_{0};
  std::atomic<std::uint64_t> records_stored_{0};
  std::atomic<std::uint64_t> connections_{0};
};

// Blocks SIGTERM/SIGINT/SIGUSR1/SIGUSR2 for the calling thread; call before
// starting any daemon so worker threads inherit the mask.
void block_daemon_signals();
// Waits for signals: TERM/INT stop the daemon, USR1 triggers a scrub, USR2
// drops every connection.
void run_until_signal(PeerDaemon& daemon);

}  // namespace storetorrent::peer
