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
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "meta/infofile.hpp"
#include "tracker/peer_table.hpp"

namespace httplib {
class Server;
}

namespace storetorrent::tracker {

namespace fs = std::filesystem;
using nlohmann::json;

struct TrackerConfig {
  fs::path root;  // infofile tree, shared read-only with clients and peers
  std::string bind_addr = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks a free port
  std::vector<std::uint8_t> shared_key;
  std::chrono::milliseconds announce_interval{10000};
  int k_missed = 3;
  std::uint64_t target_bytes_per_peer = 8ull << 30;
  std::uint64_t seed = 0;
  std::chrono::seconds cert_lifetime{24 * 3600};
};

struct CreateResult {
  meta::FileInfo info;
  std::vector<std::uint8_t> cert;
};

struct OpenResult {
  meta::FileInfo info;
  std::vector<std::uint16_t> failed;  // file-local peer ids currently failed
  std::vector<std::uint8_t> cert;
};

// Metadata authority for one deployment. All hard state lives in the
// infofiles under config.root; the peer table is soft and rebuilt from
// announces after a restart.
class Tracker {
 public:
  explicit Tracker(TrackerConfig config);
  ~Tracker();
  Tracker(const Tracker&) = delete;
  Tracker& operator=(const Tracker&) = delete;

  CreateResult create_file(const std::string& path, const meta::FtClass& ft, std::uint64_t est_size,
                           const std::string& client_id, std::uint64_t quota_bytes = 0);
  OpenResult open_file(const std::string& path, const std::string& client_id);
  std::size_t commit_records(const std::string& path, const std::vector<meta::RecordMeta>& batch);
  std::size_t delete_records(const std::string& path, const std::vector<std::string>& names);
  void handle_announce(const json& body);
  bool report_failure(const std::string& path, std::uint16_t peer_id);
  json status() const;

  std::uint64_t commit_transactions() const noexcept { return commit_transactions_.load(); }
  PeerTable& peers() noexcept { return peers_; }
  fs::path infofile_path(const std::string& path) const;
  std::vector<Candidate> alive_candidates() const;

  // Serves the HTTP API on a background thread; returns the bound port.
  std::uint16_t start();
  void stop();

 private:
  std::shared_ptr<std::mutex> path_lock(const std::string& normalized);
  std::function<bool(std::uint16_t)> liveness_for(const meta::FileInfo& info) const;
  std::vector<std::uint16_t> failed_peers(const meta::FileInfo& info) const;
  std::vector<std::uint8_t> issue_cert(const std::string& file_id, const std::string& client_id) const;
  void verify_client(const json& body, const std::string& file_id) const;
  void install_routes();

  TrackerConfig config_;
  PeerTable peers_;
  std::mutex rng_mutex_;
  std::mt19937_64 rng_;
  std::mutex locks_mutex_;
  std::map<std::string, std::shared_ptr<std::mutex>> path_locks_;
  std::atomic<std::uint64_t> files_created_{0};
  std::atomic<std::uint64_t> commit_transactions_{0};
  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;
};

}  // namespace storetorrent::tracker
