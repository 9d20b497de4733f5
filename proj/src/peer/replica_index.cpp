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

#include "peer/replica_index.hpp"

#include <algorithm>

#include "common/error.hpp"

namespace storetorrent::peer {

void merge_block(ReplicaMap& map, std::uint16_t origin, const std::vector<wire::IndexEntry>& block) {
  std::set<std::string> seen;
  for (const auto& e : block) {
    if (!seen.insert(e.name).second) {
      throw Error(Errc::duplicate_rank, "peer " + std::to_string(origin) + " holds more than one copy of record '" +
                                            e.name + "'");
    }
    auto& ranks = map.copies[e.name];
    auto [it, inserted] = ranks.emplace(e.rank, origin);
    if (!inserted && it->second != origin) {
      auto a = std::min(it->second, origin);
      auto b = std::max(it->second, origin);
      throw Error(Errc::duplicate_rank, "record '" + e.name + "' copy rank " + std::to_string(e.rank) +
                                            " held by both peer " + std::to_string(a) + " and peer " +
                                            std::to_string(b));
    }
  }
}

ReplicaMap build_replica_map(const std::string& file_id,
                             const std::map<std::uint16_t, std::vector<wire::IndexEntry>>& blocks) {
  ReplicaMap map;
  map.file_id = file_id;
  for (const auto& [origin, block] : blocks) merge_block(map, origin, block);
  return map;
}

std::vector<std::string> reveal_names(const ReplicaMap& map, std::uint16_t self,
                                      const std::set<std::uint16_t>& alive) {
  std::vector<std::string> out;
  for (const auto& [name, ranks] : map.copies) {
    // ranks is ordered, so the first alive holder owns the lowest live rank.
    for (const auto& [rank, holder] : ranks) {
      if (!alive.count(holder)) continue;
      if (holder == self) out.push_back(name);
      break;
    }
  }
  return out;
}

std::vector<wire::LocalEntry> compute_reveal_set(const ReplicaMap& map, std::uint16_t self,
                                                 const std::set<std::uint16_t>& alive,
                                                 const std::function<std::string(const std::string&)>& local_path) {
  std::vector<wire::LocalEntry> out;
  for (auto& name : reveal_names(map, self, alive)) {
    std::string path = local_path(name);
    out.push_back(wire::LocalEntry{std::move(name), std::move(path)});
  }
  return out;
}

std::vector<std::uint8_t> serialize(const ReplicaMap& map) {
  wire::IndexRing all;
  all.file_id = map.file_id;
  std::vector<std::uint8_t> out;
  for (const auto& [name, ranks] : map.copies) {
    for (const auto& [rank, holder] : ranks) {
      all.entries.push_back(wire::IndexEntry{name, rank});
      out.push_back(static_cast<std::uint8_t>(holder >> 8));
      out.push_back(static_cast<std::uint8_t>(holder));
    }
  }
  auto frame = wire::encode_message(all);
  out.insert(out.begin(), frame.begin(), frame.end());
  return out;
}

}  // namespace storetorrent::peer
