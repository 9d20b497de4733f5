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

#include "client/placement.hpp"

#include <algorithm>

#include "common/error.hpp"

namespace storetorrent::client {

Placer::Placer(std::vector<std::uint16_t> peers, int copies, std::size_t blocksize, std::uint64_t seed)
    : peers_(std::move(peers)), copies_(copies), blocksize_(std::max<std::size_t>(blocksize, 1)), rng_(seed) {
  if (copies_ < 1) throw Error(Errc::invalid_argument, "copy count must be at least 1");
}

PutPlacement Placer::place(const std::string& name, const std::set<std::uint16_t>& failed) {
  std::vector<std::uint16_t> usable;
  for (auto p : peers_) {
    if (!failed.count(p)) usable.push_back(p);
  }
  if (usable.size() < static_cast<std::size_t>(copies_)) {
    throw Error(Errc::capacity, "record '" + name + "' needs " + std::to_string(copies_) + " peers, " +
                                    std::to_string(usable.size()) + " usable");
  }
  bool boundary = position_ % blocksize_ == 0;
  if (boundary || !block_peer_ || failed.count(*block_peer_)) {
    std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
    block_peer_ = usable[pick(rng_)];
  }
  ++position_;

  PutPlacement out{name, {*block_peer_}};
  usable.erase(std::find(usable.begin(), usable.end(), *block_peer_));
  for (int r = 1; r < copies_; ++r) {
    std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
    auto i = pick(rng_);
    out.locations.push_back(usable[i]);
    usable.erase(usable.begin() + static_cast<std::ptrdiff_t>(i));
  }
  return out;
}

std::optional<std::uint16_t> Placer::replacement(const std::set<std::uint16_t>& exclude) {
  std::vector<std::uint16_t> usable;
  for (auto p : peers_) {
    if (!exclude.count(p)) usable.push_back(p);
  }
  if (usable.empty()) return std::nullopt;
  std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
  return usable[pick(rng_)];
}

}  // namespace storetorrent::client
