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

#include "tracker/peer_table.hpp"

#include "common/error.hpp"
#include "common/net.hpp"

namespace storetorrent::tracker {

nlohmann::json AnnouncePayload::to_json() const {
  return nlohmann::json{{"node_id", node_id},
                        {"addr", addr},
                        {"port", port},
                        {"bytes_used", bytes_used},
                        {"bytes_available", bytes_available},
                        {"files_held", files_held},
                        {"timestamp", timestamp},
                        {"piece_bytes_sent", piece_bytes_sent},
                        {"index_ring_bytes_sent", index_ring_bytes_sent},
                        {"collectives", collectives}};
}

AnnouncePayload AnnouncePayload::from_json(const nlohmann::json& j) {
  AnnouncePayload p;
  p.node_id = j.value("node_id", std::string());
  p.addr = j.at("addr").get<std::string>();
  p.port = j.at("port").get<std::uint16_t>();
  p.bytes_used = j.at("bytes_used").get<std::uint64_t>();
  p.bytes_available = j.at("bytes_available").get<std::uint64_t>();
  p.files_held = j.value("files_held", std::uint64_t{0});
  p.timestamp = j.value("timestamp", std::uint64_t{0});
  p.piece_bytes_sent = j.value("piece_bytes_sent", std::uint64_t{0});
  p.index_ring_bytes_sent = j.value("index_ring_bytes_sent", std::uint64_t{0});
  p.collectives = j.value("collectives", std::uint64_t{0});
  return p;
}

PeerTable::PeerTable(std::chrono::milliseconds interval, int k_missed) : interval_(interval), k_missed_(k_missed) {}

void PeerTable::announce(const AnnouncePayload& payload, Clock::time_point now) {
  std::lock_guard lock(mutex_);
  auto& e = peers_[net::endpoint(payload.addr, payload.port)];
  e.last = payload;
  e.last_seen = now;
  e.reported_failed = false;
}

bool PeerTable::report_failure(const std::string& endpoint) {
  std::lock_guard lock(mutex_);
  auto it = peers_.find(endpoint);
  if (it == peers_.end()) return false;
  it->second.reported_failed = true;
  return true;
}

PeerStatus PeerTable::status_locked(const std::string& endpoint, Clock::time_point now) const {
  auto it = peers_.find(endpoint);
  if (it == peers_.end()) {
    // Not heard from since the tracker started: only presumed alive while
    // it could still be inside its first announce window.
    return now - started_ > failure_window() ? PeerStatus::failed : PeerStatus::alive;
  }
  if (it->second.reported_failed) return PeerStatus::failed;
  return now - it->second.last_seen > failure_window() ? PeerStatus::failed : PeerStatus::alive;
}

PeerStatus PeerTable::status(const std::string& endpoint, Clock::time_point now) const {
  std::lock_guard lock(mutex_);
  return status_locked(endpoint, now);
}

std::vector<PeerView> PeerTable::snapshot(Clock::time_point now) const {
  std::lock_guard lock(mutex_);
  std::vector<PeerView> out;
  out.reserve(peers_.size());
  for (const auto& [ep, e] : peers_) {
    out.push_back(PeerView{ep, e.last, status_locked(ep, now),
                           std::chrono::duration<double>(now - e.last_seen).count()});
  }
  return out;
}

std::size_t scheduled_count(std::uint64_t est_size, std::size_t alive, int copies,
                            std::uint64_t target_bytes_per_peer) {
  std::uint64_t wanted = target_bytes_per_peer == 0 ? alive
                                                    : (est_size + target_bytes_per_peer - 1) / target_bytes_per_peer;
  wanted = std::max<std::uint64_t>(wanted, static_cast<std::uint64_t>(copies));
  return static_cast<std::size_t>(std::min<std::uint64_t>(wanted, alive));
}

std::vector<Candidate> schedule_peers(std::uint64_t est_size, const std::vector<Candidate>& alive, int copies,
                                      std::uint64_t target_bytes_per_peer, std::mt19937_64& rng) {
  if (alive.size() < static_cast<std::size_t>(copies)) {
    throw Error(Errc::capacity, "only " + std::to_string(alive.size()) + " alive peers, class needs " +
                                    std::to_string(copies));
  }
  std::size_t count = scheduled_count(est_size, alive.size(), copies, target_bytes_per_peer);
  std::vector<Candidate> pool = alive;
  std::vector<Candidate> chosen;
  chosen.reserve(count);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (chosen.size() < count) {
    long double total = 0;
    for (const auto& c : pool) total += static_cast<long double>(c.bytes_available);
    std::size_t pick = 0;
    if (total <= 0) {
      pick = static_cast<std::size_t>(unit(rng) * static_cast<double>(pool.size()));
      pick = std::min(pick, pool.size() - 1);
    } else {
      long double target = static_cast<long double>(unit(rng)) * total;
      long double acc = 0;
      pick = pool.size() - 1;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        acc += static_cast<long double>(pool[i].bytes_available);
        if (target < acc) {
          pick = i;
          break;
        }
      }
      // Skip zero-weight tail entries chosen by rounding.
      while (pool[pick].bytes_available == 0 && pick > 0) --pick;
    }
    chosen.push_back(pool[pick]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return chosen;
}

}  // namespace storetorrent::tracker
