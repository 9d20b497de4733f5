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
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace storetorrent::client {

// rank -> peer_id chosen for one PUT.
struct PutPlacement {
  std::string name;
  std::vector<std::uint16_t> locations;
  bool operator==(const PutPlacement&) const = default;
};

// Chooses distinct peers for each record. The rank-0 peer is redrawn at
// random every `blocksize` records (or when it fails); the other ranks are
// drawn uniformly from the remaining usable peers.
class Placer {
 public:
  Placer(std::vector<std::uint16_t> peers, int copies, std::size_t blocksize, std::uint64_t seed);

  // Throws Error(capacity) when fewer than `copies` peers are usable.
  PutPlacement place(const std::string& name, const std::set<std::uint16_t>& failed);

  // A usable peer outside `exclude`, or nullopt.
  std::optional<std::uint16_t> replacement(const std::set<std::uint16_t>& exclude);

  std::size_t placed() const noexcept { return position_; }

 private:
  std::vector<std::uint16_t> peers_;
  int copies_;
  std::size_t blocksize_;
  std::mt19937_64 rng_;
  std::size_t position_ = 0;
  std::optional<std::uint16_t> block_peer_;
};

}  // namespace storetorrent::client
