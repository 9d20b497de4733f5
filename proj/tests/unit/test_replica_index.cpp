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

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "common/error.hpp"
#include "peer/replica_index.hpp"

using namespace storetorrent;
using namespace storetorrent::peer;
using wire::IndexEntry;

namespace {

using Blocks = std::map<std::uint16_t, std::vector<IndexEntry>>;

std::set<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

// Randomized cluster: each record gets F distinct holders, one per rank.
struct Layout {
  Blocks blocks;
  std::map<std::string, std::vector<std::uint16_t>> holders;  // name -> peer by rank
};

Layout random_layout(std::mt19937_64& rng, int peers, int copies, int records) {
  Layout l;
  for (int p = 0; p < peers; ++p) l.blocks[static_cast<std::uint16_t>(p)];
  for (int r = 0; r < records; ++r) {
    std::vector<std::uint16_t> ids(static_cast<std::size_t>(peers));
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(static_cast<std::size_t>(copies));
    std::string name = "rec" + std::to_string(r);
    l.holders[name] = ids;
    for (int k = 0; k < copies; ++k) {
      l.blocks[ids[static_cast<std::size_t>(k)]].push_back(IndexEntry{name, static_cast<std::uint8_t>(k)});
    }
  }
  for (auto& [_, b] : l.blocks) std::shuffle(b.begin(), b.end(), rng);
  return l;
}

}  // namespace

TEST(ReplicaIndex, SinglePeerRingIsOwnIndex) {
  Blocks b{{0, {{"a", 0}, {"b", 1}}}};
  auto map = build_replica_map("f", b);
  EXPECT_EQ(map.size(), 2u);
  EXPECT_EQ(map.copies.at("a").at(0), 0);
  EXPECT_EQ(map.copies.at("b").at(1), 0);
  EXPECT_EQ(as_set(reveal_names(map, 0, {0})), (std::set<std::string>{"a", "b"}));
}

TEST(ReplicaIndex, DisjointPeersUnion) {
  Blocks b;
  std::set<std::string> all;
  for (std::uint16_t p = 0; p < 4; ++p) {
    for (int i = 0; i < 5; ++i) {
      std::string n = "p" + std::to_string(p) + "r" + std::to_string(i);
      b[p].push_back({n, 0});
      all.insert(n);
    }
  }
  auto map = build_replica_map("f", b);
  std::set<std::string> keys;
  for (const auto& [n, ranks] : map.copies) {
    keys.insert(n);
    EXPECT_EQ(ranks.size(), 1u);
  }
  EXPECT_EQ(keys, all);
}

TEST(ReplicaIndex, DuplicateRankNamesBothPeers) {
  Blocks b{{3, {{"r", 0}}}, {5, {{"r", 0}}}};
  try {
    build_replica_map("f", b);
    FAIL() << "expected duplicate_rank";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::duplicate_rank);
    std::string msg = e.what();
    EXPECT_NE(msg.find("peer 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("peer 5"), std::string::npos) << msg;
  }
}

TEST(ReplicaIndex, SamePeerListingRecordTwiceRejected) {
  ReplicaMap m;
  EXPECT_THROW(merge_block(m, 1, {{"r", 0}, {"r", 1}}), Error);
}

TEST(ReplicaIndex, LowerRankTakesPrecedence) {
  Blocks b{{0, {{"r", 0}}}, {1, {{"r", 1}}}};
  auto map = build_replica_map("f", b);
  EXPECT_EQ(reveal_names(map, 0, {0, 1}), std::vector<std::string>{"r"});
  EXPECT_TRUE(reveal_names(map, 1, {0, 1}).empty());
  // Rank-0 holder failed: the rank-1 copy is revealed instead.
  EXPECT_EQ(reveal_names(map, 1, {1}), std::vector<std::string>{"r"});
}

TEST(ReplicaIndex, ThirdCopyRevealedWhenFirstTwoFailed) {
  Blocks b{{0, {{"r", 0}}}, {1, {{"r", 1}}}, {2, {{"r", 2}}}};
  auto map = build_replica_map("f", b);
  EXPECT_EQ(reveal_names(map, 2, {2}), std::vector<std::string>{"r"});
  EXPECT_TRUE(reveal_names(map, 2, {1, 2}).empty());
  EXPECT_EQ(reveal_names(map, 1, {1, 2}), std::vector<std::string>{"r"});
}

TEST(ReplicaIndex, RevealSetCarriesLocalPaths) {
  Blocks b{{0, {{"a", 0}, {"b", 0}}}};
  auto map = build_replica_map("f", b);
  auto entries = compute_reveal_set(map, 0, {0}, [](const std::string& n) { return "/data/" + n; });
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].path, "/data/" + entries[0].name);
}

TEST(ReplicaIndex, CoverageAndDisjointnessRandomized) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 400; ++trial) {
    int peers = 1 + static_cast<int>(rng() % 8);
    int copies = 1 + static_cast<int>(rng() % std::min(peers, 3));
    auto layout = random_layout(rng, peers, copies, 1 + static_cast<int>(rng() % 60));
    std::set<std::uint16_t> alive;
    for (int p = 0; p < peers; ++p) {
      if (rng() % 3 != 0) alive.insert(static_cast<std::uint16_t>(p));
    }
    auto map = build_replica_map("f", layout.blocks);

    // Oracle: the owner of each record is its lowest-rank alive holder.
    std::map<std::string, std::uint16_t> owner;
    for (const auto& [name, by_rank] : layout.holders) {
      for (auto id : by_rank) {
        if (alive.count(id)) {
          owner[name] = id;
          break;
        }
      }
    }
    std::map<std::string, int> seen;
    for (auto p : alive) {
      for (const auto& n : reveal_names(map, p, alive)) {
        ++seen[n];
        ASSERT_EQ(owner.at(n), p) << "trial " << trial;
      }
    }
    ASSERT_EQ(seen.size(), owner.size()) << "trial " << trial;
    for (const auto& [n, count] : seen) ASSERT_EQ(count, 1) << n;
  }
}

TEST(ReplicaIndex, SerializationIndependentOfMergeOrder) {
  std::mt19937_64 rng(5);
  auto layout = random_layout(rng, 6, 2, 200);
  auto reference = serialize(build_replica_map("f", layout.blocks));
  std::vector<std::uint16_t> order;
  for (const auto& [p, _] : layout.blocks) order.push_back(p);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(order.begin(), order.end(), rng);
    ReplicaMap m;
    m.file_id = "f";
    for (auto p : order) merge_block(m, p, layout.blocks.at(p));
    EXPECT_EQ(serialize(m), reference);
  }
}
