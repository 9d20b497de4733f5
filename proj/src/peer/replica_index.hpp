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

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "wire/protocol.hpp"

namespace storetorrent::peer {

// Global view of record copies for one file: name -> rank -> peer_id.
struct ReplicaMap {
  std::string file_id;
  std::map<std::string, std::map<std::uint8_t, std::uint16_t>> copies;

  bool operator==(const ReplicaMap&) const = default;
  std::size_t size() const noexcept { return copies.size(); }
};

// Adds one peer's local index. Throws Error(duplicate_rank) when another
// peer already holds the same (name, rank), naming both peers, or when the
// block lists a record twice.
void merge_block(ReplicaMap& map, std::uint16_t origin, const std::vector<wire::IndexEntry>& block);

ReplicaMap build_replica_map(const std::string& file_id,
                             const std::map<std::uint16_t, std::vector<wire::IndexEntry>>& blocks);

// Names self exposes to its local clients: those it holds at some rank r
// where no alive peer holds a lower rank.
std::vector<std::string> reveal_names(const ReplicaMap& map, std::uint16_t self,
                                      const std::set<std::uint16_t>& alive);

std::vector<wire::LocalEntry> compute_reveal_set(const ReplicaMap& map, std::uint16_t self,
                                                 const std::set<std::uint16_t>& alive,
                                                 const std::function<std::string(const std::string&)>& local_path);

// Canonical byte encoding, used to compare maps across participants.
std::vector<std::uint8_t> serialize(const ReplicaMap& map);

}  // namespace storetorrent::peer
