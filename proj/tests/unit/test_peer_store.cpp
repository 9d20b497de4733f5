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

#include <fstream>
#include <random>
#include <thread>

#include "common/error.hpp"
#include "store/peer_store.hpp"
#include "test_util.hpp"
#include "wire/crc32.hpp"

using namespace storetorrent;
using namespace storetorrent::store;
using storetorrent::test::TempDir;

namespace {

Bytes bytes_of(const std::string& s) { return Bytes(s.begin(), s.end()); }

Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes b(n);
  for (auto& c : b) c = static_cast<std::uint8_t>(rng());
  return b;
}

StoredRecord put(PeerStore& s, const std::string& file, const std::string& name, const Bytes& data,
                 std::uint8_t rank = 0) {
  return s.store_record(file, name, rank, data, wire::crc32(data));
}

// Names of completed records found by listing the directory tree directly.
std::set<std::string> visible_names(const fs::path& root) {
  std::set<std::string> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::string f = e.path().filename().string();
    if (f.find(".tmp.") != std::string::npos) continue;
    if (f.size() > 4 && f.compare(f.size() - 4, 4, ".crc") == 0) continue;
    out.insert(f);
  }
  return out;
}

std::size_t temp_files(const fs::path& root) {
  std::size_t n = 0;
  if (!fs::exists(root)) return 0;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename().string().find(".tmp.") != std::string::npos) ++n;
  }
  return n;
}

void age_everything(const fs::path& root, std::chrono::seconds by) {
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) fs::last_write_time(e.path(), fs::last_write_time(e.path()) - by);
  }
}

}  // namespace

TEST(RecordPath, RejectsSeparatorAndEmpty) {
  for (const std::string& bad : std::vector<std::string>{"a/b", "", std::string("a\0b", 3), ".", "..", "x.crc", "x.tmp.1"}) {
    EXPECT_THROW(record_path("/base", "f", bad), Error) << bad;
  }
  EXPECT_THROW(record_path("/base", "f", std::string(kMaxNameLength + 1, 'a')), Error);
  EXPECT_NO_THROW(record_path("/base", "f", std::string(kMaxNameLength, 'a')));
}

TEST(RecordPath, Deterministic) {
  EXPECT_EQ(record_path("/base", "f1", "ad"), record_path("/base", "f1", "ad"));
  auto p = record_path("/base", "f1", "ad");
  char hh[3];
  std::snprintf(hh, sizeof(hh), "%02x", wire::crc32(std::string("ad")) >> 24);
  EXPECT_EQ(p, fs::path("/base") / "f1" / hh / "ad");
}

TEST(RecordPath, BucketSpread) {
  std::mt19937_64 rng(17);
  std::vector<std::size_t> counts(256, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    std::string name = "rec-" + std::to_string(rng());
    std::string bucket = record_path("/b", "f", name).parent_path().filename().string();
    ASSERT_EQ(bucket.size(), 2u);
    ++counts[std::stoul(bucket, nullptr, 16)];
  }
  double mean = n / 256.0;
  for (std::size_t b = 0; b < 256; ++b) {
    EXPECT_GE(counts[b], 0.5 * mean) << "bucket " << b;
    EXPECT_LE(counts[b], 2.0 * mean) << "bucket " << b;
  }
}

TEST(PeerStore, StoreAndReadTwoRecords) {
  TempDir dir;
  PeerStore s({dir.path(), false, {}});
  Bytes ad = bytes_of("contents of ad");
  Bytes am = bytes_of("contents of am, a little longer");
  put(s, "file", "ad", ad);
  put(s, "file", "am", am, 1);
  auto [got_ad, crc_ad] = s.read_record("file", "ad");
  auto [got_am, crc_am] = s.read_record("file", "am");
  EXPECT_EQ(got_ad, ad);
  EXPECT_EQ(crc_ad, wire::crc32(ad));
  EXPECT_EQ(got_am, am);
  EXPECT_EQ(crc_am, wire::crc32(am));
  EXPECT_EQ(s.lookup("file", "am")->rank, 1);
}

TEST(PeerStore, ZeroLengthRecord) {
  TempDir dir;
  PeerStore s({dir.path(), true, {}});
  auto rec = put(s, "file", "empty", {});
  EXPECT_EQ(rec.crc, 0u);
  EXPECT_TRUE(fs::exists(rec.path));
  EXPECT_EQ(fs::file_size(rec.path), 0u);
  auto [data, crc] = s.read_record("file", "empty");
  EXPECT_TRUE(data.empty());
  EXPECT_EQ(crc, 0u);
}

TEST(PeerStore, SidecarLayout) {
  TempDir dir;
  PeerStore s({dir.path(), false, {}});
  auto rec = put(s, "file", "r", bytes_of("123456789"), 2);
  std::ifstream in(rec.path.string() + ".crc");
  std::string crc_line, rank_line;
  std::getline(in, crc_line);
  std::getline(in, rank_line);
  EXPECT_EQ(crc_line, "cbf43926");
  EXPECT_EQ(rank_line, "rank=2");
}

TEST(PeerStore, MissingRecordIsNotFound) {
  TempDir dir;
  PeerStore s({dir.path(), false, {}});
  try {
    s.read_record("file", "never");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::not_found);
  }
}

TEST(PeerStore, MissingSidecarIsIntegrityError) {
  TempDir dir;
  PeerStore s({dir.path(), false, {}});
  auto rec = put(s, "file", "r", bytes_of("x"));
  fs::remove(rec.path.string() + ".crc");
  try {
    s.read_record("file", "r");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::integrity);
  }
}

TEST(PeerStore, FlippedSidecarReturnedVerbatim) {
  TempDir dir;
  PeerStore s({dir.path(), false, {}});
  Bytes data = bytes_of("some record bytes");
  auto rec = put(s, "file", "r", data, 1);
  std::uint32_t flipped = wire::crc32(data) ^ 0x00010000u;
  {
    std::ofstream out(rec.path.string() + ".crc", std::ios::trunc);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%08x", flipped);
    out << buf << "\nrank=1\n";
  }
  auto [got, crc] = s.read_record("file", "r");
  EXPECT_EQ(got, data);
  EXPECT_EQ(crc, flipped);
  EXPECT_NE(wire::crc32(got), crc);
}

TEST(PeerStore, DeleteIsIdempotent) {
  TempDir dir;
  PeerStore s({dir.path(), false, {}});
  auto rec = put(s, "file", "r", bytes_of("x"));
  EXPECT_TRUE(s.delete_record("file", "r"));
  EXPECT_FALSE(s.delete_record("file", "r"));
  EXPECT_TRUE(s.list_records("file").empty());
  EXPECT_FALSE(fs::exists(rec.path));
  EXPECT_FALSE(fs::exists(rec.path.string() + ".crc"));
}

TEST(PeerStore, ListSortedByName) {
  TempDir dir;
  PeerStore s({dir.path(), false, {}});
  EXPECT_TRUE(s.list_records("file").empty());
  put(s, "file", "zeta", bytes_of("1"));
  put(s, "file", "alpha", bytes_of("22"), 1);
  put(s, "file", "mid", bytes_of("333"));
  auto l = s.list_records("file");
  ASSERT_EQ(l.size(), 3u);
  EXPECT_EQ(l[0].name, "alpha");
  EXPECT_EQ(l[0].size, 2u);
  EXPECT_EQ(l[0].rank, 1);
  EXPECT_EQ(l[1].name, "mid");
  EXPECT_EQ(l[2].name, "zeta");
  EXPECT_TRUE(s.list_records("other").empty());
}

TEST(PeerStore, RestartIndexEqualsDirectoryWalk) {
  TempDir dir;
  std::mt19937_64 rng(8);
  std::vector<IndexEntry> before;
  {
    PeerStore s({dir.path(), false, {}});
    for (int i = 0; i < 300; ++i) {
      auto data = random_bytes(rng, rng() % 300);
      put(s, "file", "n" + std::to_string(rng() % 1000), data, static_cast<std::uint8_t>(rng() % 3));
    }
    for (int i = 0; i < 50; ++i) s.delete_record("file", "n" + std::to_string(rng() % 1000));
    before = s.list_records("file");
    EXPECT_EQ(before, walk_records(dir.path(), "file"));
  }
  PeerStore again({dir.path(), false, {}});
  EXPECT_EQ(again.list_records("file"), before);
  again.reload();
  EXPECT_EQ(again.list_records("file"), before);
  std::uint64_t total = 0;
  for (const auto& e : before) total += e.size;
  EXPECT_EQ(again.bytes_used(), total);
}

TEST(PeerStore, SameRecordTwiceLeavesOne) {
  TempDir dir;
  PeerStore s({dir.path(), false, {}});
  Bytes data = bytes_of("same");
  put(s, "file", "r", data);
  put(s, "file", "r", data);
  EXPECT_EQ(s.list_records("file").size(), 1u);
  EXPECT_EQ(s.read_record("file", "r").first, data);
  EXPECT_EQ(visible_names(dir.path() / "file"), std::set<std::string>{"r"});
  EXPECT_EQ(temp_files(dir.path()), 0u);
}

TEST(PeerStore, ShortDeliveryRemovesTemp) {
  TempDir dir;
  PeerStore s({dir.path(), false, {}});
  {
    auto w = s.begin_record("file", "r", 0, 100, 0, 5);
    w.write(Bytes(40, 1));
    EXPECT_EQ(temp_files(dir.path()), 1u);
    EXPECT_THROW(w.finish(), Error);
  }
  EXPECT_EQ(temp_files(dir.path()), 0u);
  EXPECT_FALSE(s.lookup("file", "r"));
  {
    auto w = s.begin_record("file", "r", 0, 100, 0, 6);
    w.write(Bytes(10, 1));
  }  // connection dropped
  EXPECT_EQ(temp_files(dir.path()), 0u);
  auto w = s.begin_record("file", "r", 0, 4, 0, 7);
  EXPECT_THROW(w.write(Bytes(5, 1)), Error);
}

TEST(PeerStore, ConcurrentWritersUseDistinctTemps) {
  TempDir dir;
  PeerStore s({dir.path(), false, {}});
  Bytes a(1000, 'a');
  Bytes b(1000, 'b');
  auto wa = s.begin_record("file", "r", 0, a.size(), wire::crc32(a), 1);
  auto wb = s.begin_record("file", "r", 1, b.size(), wire::crc32(b), 2);
  wa.write(std::span(a).first(500));
  wb.write(std::span(b).first(500));
  EXPECT_EQ(temp_files(dir.path()), 2u);
  wa.write(std::span(a).subspan(500));
  wb.write(std::span(b).subspan(500));
  wa.finish();
  wb.finish();
  auto [data, crc] = s.read_record("file", "r");
  EXPECT_EQ(data, b);
  EXPECT_EQ(crc, wire::crc32(b));
}

namespace {

// Every I/O boundary, in order, and whether the record should be visible
// after a crash there.
const std::vector<std::pair<WriteStep, bool>> kCrashPoints = {
    {WriteStep::temp_opened, false},  {WriteStep::half_written, false},   {WriteStep::data_written, false},
    {WriteStep::data_synced, false},  {WriteStep::sidecar_written, false}, {WriteStep::renamed, true},
};

void expect_consistent(const fs::path& base, const std::string& file) {
  // Every visible record has its full length and a matching sidecar.
  PeerStore fresh({base, false, {}});
  for (const auto& e : walk_records(base, file)) {
    auto [data, crc] = fresh.read_record(file, e.name);
    EXPECT_EQ(wire::crc32(data), crc) << e.name;
    EXPECT_EQ(data.size(), e.size);
  }
}

}  // namespace

TEST(PeerStoreCrash, EveryStepBoundary) {
  for (auto [step, visible] : kCrashPoints) {
    TempDir dir;
    WriteStep target = step;
    PeerStore s({dir.path(), true, [target](WriteStep at) {
                   if (at == target) throw SimulatedCrash();
                 }});
    Bytes data(4096, 7);
    EXPECT_THROW(put(s, "file", "victim", data), SimulatedCrash);
    PeerStore restarted({dir.path(), false, {}});
    auto names = restarted.list_records("file");
    bool present = !names.empty() && names[0].name == "victim";
    EXPECT_EQ(present, visible) << "step " << static_cast<int>(step);
    if (step == WriteStep::half_written) {
      EXPECT_EQ(temp_files(dir.path()), 1u);
      for (const auto& e : fs::recursive_directory_iterator(dir.path())) {
        if (e.is_regular_file() && e.path().filename().string().find(".tmp.") != std::string::npos) {
          EXPECT_EQ(fs::file_size(e.path()), data.size() / 2);
        }
      }
    }
    expect_consistent(dir.path(), "file");
  }
}

TEST(PeerStoreCrash, ReplacementNeverMixesOldAndNew) {
  for (auto [step, visible] : kCrashPoints) {
    (void)visible;
    TempDir dir;
    Bytes old_data(3000, 1);
    Bytes new_data(5000, 2);
    {
      PeerStore s({dir.path(), false, {}});
      put(s, "file", "r", old_data);
    }
    WriteStep target = step;
    PeerStore s({dir.path(), true, [target](WriteStep at) {
                   if (at == target) throw SimulatedCrash();
                 }});
    EXPECT_THROW(put(s, "file", "r", new_data), SimulatedCrash);
    PeerStore restarted({dir.path(), false, {}});
    if (restarted.lookup("file", "r")) {
      auto [data, crc] = restarted.read_record("file", "r");
      EXPECT_EQ(wire::crc32(data), crc) << "step " << static_cast<int>(step);
      EXPECT_TRUE(data == old_data || data == new_data);
    }
    expect_consistent(dir.path(), "file");
  }
}

TEST(PeerStoreCrash, ScrubClearsLeftovers) {
  TempDir dir;
  PeerStore s({dir.path(), false, [](WriteStep at) {
                 if (at == WriteStep::half_written) throw SimulatedCrash();
               }});
  EXPECT_THROW(put(s, "file", "partial", Bytes(100, 1)), SimulatedCrash);
  ASSERT_EQ(temp_files(dir.path()), 1u);
  EXPECT_TRUE(s.scrub("file", std::set<std::string>{}, std::chrono::hours(1)).empty());
  age_everything(dir.path(), std::chrono::hours(2));
  auto removed = s.scrub("file", std::set<std::string>{}, std::chrono::hours(1));
  EXPECT_EQ(removed.size(), 1u);
  EXPECT_EQ(temp_files(dir.path()), 0u);
}

TEST(PeerStoreScrub, AllCommittedRemovesNothing) {
  TempDir dir;
  PeerStore s({dir.path(), false, {}});
  put(s, "file", "a", bytes_of("1"));
  put(s, "file", "b", bytes_of("2"));
  EXPECT_TRUE(s.scrub("file", std::set<std::string>{"a", "b"}, std::chrono::milliseconds(0)).empty());
  EXPECT_EQ(s.list_records("file").size(), 2u);
}

TEST(PeerStoreScrub, AgeGuardKeepsYoungRecords) {
  TempDir dir;
  PeerStore s({dir.path(), false, {}});
  put(s, "file", "young", bytes_of("1"));
  EXPECT_TRUE(s.scrub("file", std::set<std::string>{}, std::chrono::hours(1)).empty());
  EXPECT_TRUE(s.lookup("file", "young"));
  age_everything(dir.path(), std::chrono::hours(2));
  put(s, "file", "fresh", bytes_of("2"));
  auto removed = s.scrub("file", std::set<std::string>{}, std::chrono::hours(1));
  EXPECT_EQ(removed, std::vector<std::string>{"young"});
  EXPECT_TRUE(s.lookup("file", "fresh"));
}

TEST(PeerStoreScrub, RandomizedSetDifference) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 25; ++trial) {
    TempDir dir;
    PeerStore s({dir.path(), false, {}});
    std::set<std::string> stored, committed;
    for (int i = 0; i < 60; ++i) {
      std::string name = "k" + std::to_string(rng() % 80);
      if (rng() % 4 != 0) {
        put(s, "file", name, random_bytes(rng, rng() % 50));
        stored.insert(name);
      }
      if (rng() % 2 == 0) committed.insert(name);
    }
    std::set<std::string> expected;
    std::set_difference(stored.begin(), stored.end(), committed.begin(), committed.end(),
                        std::inserter(expected, expected.end()));
    auto removed = s.scrub("file", committed, std::chrono::milliseconds(0));
    EXPECT_EQ(std::set<std::string>(removed.begin(), removed.end()), expected);
    std::set<std::string> kept;
    std::set_intersection(stored.begin(), stored.end(), committed.begin(), committed.end(),
                          std::inserter(kept, kept.end()));
    EXPECT_EQ(visible_names(dir.path() / "file"), kept);
  }
}

TEST(PeerStoreScrub, PredicateRecheckedBeforeUnlink) {
  TempDir dir;
  PeerStore s({dir.path(), false, {}});
  put(s, "file", "racing", bytes_of("1"));
  int calls = 0;
  // Uncommitted on the first look, committed by the time of the unlink.
  auto removed = s.scrub("file", [&calls](const std::string&) { return ++calls > 1; }, std::chrono::milliseconds(0));
  EXPECT_TRUE(removed.empty());
  EXPECT_TRUE(s.lookup("file", "racing"));
}

TEST(PeerStore, DeleteDuringReadsNeverTorn) {
  TempDir dir;
  PeerStore s({dir.path(), false, {}});
  Bytes data(1 << 16);
  std::mt19937_64 rng(4);
  for (auto& c : data) c = static_cast<std::uint8_t>(rng());
  std::atomic<bool> stop{false};
  std::atomic<int> torn{0};
  std::thread reader([&] {
    while (!stop) {
      try {
        auto [got, crc] = s.read_record("file", "r");
        if (got != data || crc != wire::crc32(data)) ++torn;
      } catch (const Error& e) {
        if (e.code() != Errc::not_found) ++torn;
      }
    }
  });
  for (int i = 0; i < 200; ++i) {
    put(s, "file", "r", data);
    s.delete_record("file", "r");
  }
  stop = true;
  reader.join();
  EXPECT_EQ(torn.load(), 0);
}
