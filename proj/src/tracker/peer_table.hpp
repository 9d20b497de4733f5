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
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

namespace storetorrent::tracker {

using Clock = std::chrono::steady_clock;

struct AnnouncePayload {
  std::string node_id;
  std::string addr;
  std::uint16_t port = 0;
  std::uint64_t bytes_used = 0;
  std::uint64_t bytes_available = 0;
  std::uint64_t files_held = 0;
  std::uint64_t timestamp = 0;
  // Traffic counters reported alongside capacity.
  std::uint64_t piece_bytes_sent = 0;
  std::uint64_t index_ring_bytes_sent = 0;
  std::uint64_t collectives = 0;

  nlohmann::json to_json() const;
  static AnnouncePayload from_json(const nlohmann::json& j);
};

enum class PeerStatus { alive, failed };

struct PeerEntry {
  AnnouncePayload last;
  Clock::time_point last_seen;
  bool reported_failed = false;
};

struct PeerView {
  std::string endpoint;
  AnnouncePayload last;
  PeerStatus status = PeerStatus::alive;
  double seconds_since_announce = 0;
};

// Soft-state table of peers, rebuilt from announces. A peer is failed when
// it has missed more than k announce intervals or a client reported it.
class PeerTable {
 public:
  PeerTable(std::chrono::milliseconds interval, int k_missed);

  void announce(const AnnouncePayload& payload, Clock::time_point now = Clock::now());
  // Returns false when the endpoint is unknown.
  bool report_failure(const std::string& endpoint);
  PeerStatus status(const std::string& endpoint, Clock::time_point now = Clock::now()) const;
  std::vector<PeerView> snapshot(Clock::time_point now = Clock::now()) const;
  std::chrono::milliseconds failure_window() const { return interval_ * k_missed_; }

 private:
  PeerStatus status_locked(const std::string& endpoint, Clock::time_point now) const;

  std::chrono::milliseconds interval_;
  int k_missed_;
  Clock::time_point started_ = Clock::now();
  mutable std::mutex mutex_;
  std::map<std::string, PeerEntry> peers_;
};

struct Candidate {
  std::string endpoint;
  std::string addr;
  std::uint16_t port = 0;
  std::uint64_t bytes_available = 0;
};

// Number of peers a new file receives: min(alive, max(F, ceil(est / target))).
std::size_t scheduled_count(std::uint64_t est_size, std::size_t alive, int copies,
                            std::uint64_t target_bytes_per_peer);

// Weighted random sampling without replacement, weight = bytes_available.
// Candidates must be in a deterministic order for reproducible schedules.
std::vector<Candidate> schedule_peers(std::uint64_t est_size, const std::vector<Candidate>& alive, int copies,
                                      std::uint64_t target_bytes_per_peer, std::mt19937_64& rng);

}  // namespace storetorrent::tracker
