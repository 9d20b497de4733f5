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

#include <openssl/hmac.h>

#include <atomic>
#include <thread>

#include "common/error.hpp"
#include "meta/certificate.hpp"
#include "meta/infofile.hpp"
#include "test_util.hpp"

using namespace storetorrent;
using namespace storetorrent::meta;
using storetorrent::test::TempDir;

namespace {

std::vector<std::uint8_t> key_of(const std::string& s) { return {s.begin(), s.end()}; }

FileInfo sample_info(int copies = 2, std::uint64_t quota = 0) {
  FileInfo fi;
  fi.path = "exp/run1";
  fi.file_id = file_id_for(fi.path);
  fi.ft = FtClass{copies};
  fi.est_size = 1 << 20;
  fi.quota_bytes = quota;
  for (std::uint16_t i = 0; i < 4; ++i) fi.peerlist.push_back({i, "127.0.0.1", static_cast<std::uint16_t>(7000 + i)});
  return fi;
}

RecordMeta rec(const std::string& name, std::uint64_t size, std::vector<std::uint16_t> loc) {
  return RecordMeta{name, size, 0, std::move(loc)};
}

auto all_alive = [](std::uint16_t) { return true; };

}  // namespace

TEST(Certificate, VerifiesAndMatchesHmacLayout) {
  auto key = key_of("deployment-secret");
  std::uint64_t expiry = 2000000000;
  auto cert = issue_certificate(key, "exp%2Frun1", "client-7", expiry);
  ASSERT_EQ(cert.size(), 40u);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(cert[static_cast<std::size_t>(i)], (expiry >> (56 - 8 * i)) & 0xFF);

  std::string text = std::string("st-cert") + '\0' + "exp%2Frun1" + '\0' + "client-7" + '\0' + std::to_string(expiry);
  unsigned char mac[32];
  unsigned int len = 0;
  HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), reinterpret_cast<const unsigned char*>(text.data()),
       text.size(), mac, &len);
  ASSERT_EQ(len, 32u);
  EXPECT_TRUE(std::equal(mac, mac + 32, cert.begin() + 8));

  EXPECT_TRUE(verify_certificate(key, "exp%2Frun1", "client-7", cert, expiry - 1));
}

TEST(Certificate, Rejections) {
  auto key = key_of("k1");
  auto cert = issue_certificate(key, "f", "c", 1000);
  EXPECT_FALSE(verify_certificate(key_of("k2"), "f", "c", cert, 10));
  EXPECT_FALSE(verify_certificate(key, "g", "c", cert, 10));
  EXPECT_FALSE(verify_certificate(key, "f", "d", cert, 10));
  EXPECT_FALSE(verify_certificate(key, "f", "c", cert, 1001));
  for (std::size_t i = 0; i < cert.size(); ++i) {
    auto bad = cert;
    bad[i] ^= 1;
    EXPECT_FALSE(verify_certificate(key, "f", "c", bad, 10)) << "byte " << i;
  }
  EXPECT_FALSE(verify_certificate(key, "f", "c", std::span(cert).first(39), 10));
}

TEST(Paths, Normalize) {
  EXPECT_EQ(normalize_path("/foo/bar"), "foo/bar");
  EXPECT_EQ(normalize_path("foo//bar/"), "foo/bar");
  EXPECT_THROW(normalize_path(""), Error);
  EXPECT_THROW(normalize_path("/"), Error);
  EXPECT_THROW(normalize_path("a/../b"), Error);
  EXPECT_THROW(normalize_path("a/./b"), Error);
}

TEST(Paths, FileIdReversibleAndSlashFree) {
  for (std::string p : {"a", "foo/bar/baz", "with space/x%y", "deep/a/b/c/d/e"}) {
    auto id = file_id_for(p);
    EXPECT_EQ(id.find('/'), std::string::npos) << id;
    EXPECT_EQ(path_for_file_id(id), p);
  }
  EXPECT_NE(file_id_for("a/b"), file_id_for("a%2Fb"));
}

TEST(FtClass, Parse) {
  EXPECT_EQ(FtClass::parse("x1").copies, 1);
  EXPECT_EQ(FtClass::parse("x2").copies, 2);
  EXPECT_EQ(FtClass::parse("x12").name(), "x12");
  for (std::string bad : {"", "x", "x0", "y2", "x2a", "raid5"}) EXPECT_THROW(FtClass::parse(bad), Error) << bad;
}

TEST(Infofile, CreateOpenRoundtrip) {
  TempDir dir;
  auto loc = dir.path() / "exp" / "run1";
  fs::create_directories(loc.parent_path());
  auto info = sample_info();
  Infofile::create(loc, info);
  auto ro = Infofile::open(loc, Infofile::Mode::read_only);
  auto got = ro.info();
  EXPECT_EQ(got.path, info.path);
  EXPECT_EQ(got.ft, info.ft);
  EXPECT_EQ(got.peerlist, info.peerlist);
  EXPECT_EQ(got.quota_used, 0u);
  EXPECT_EQ(ro.record_count(), 0u);
  try {
    Infofile::create(loc, info);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::already_exists);
  }
  try {
    Infofile::open(dir.path() / "missing", Infofile::Mode::read_only);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::not_found);
  }
}

TEST(Infofile, ConcurrentCreateOneWins) {
  for (int round = 0; round < 10; ++round) {
    TempDir dir;
    auto loc = dir.path() / "f";
    std::atomic<int> ok{0}, exists{0};
    std::vector<std::thread> ts;
    for (int i = 0; i < 4; ++i) {
      ts.emplace_back([&] {
        try {
          Infofile::create(loc, sample_info());
          ++ok;
        } catch (const Error& e) {
          if (e.code() == Errc::already_exists) ++exists;
        }
      });
    }
    for (auto& t : ts) t.join();
    EXPECT_EQ(ok.load(), 1);
    EXPECT_EQ(exists.load(), 3);
  }
}

TEST(Infofile, CommitAndQuota) {
  TempDir dir;
  auto f = Infofile::create(dir.path() / "f", sample_info(2, 1000));
  EXPECT_EQ(f.commit({}, all_alive), 0u);
  EXPECT_EQ(f.commit({rec("a", 100, {0, 1}), rec("b", 200, {2, 3})}, all_alive), 2u);
  EXPECT_EQ(f.info().quota_used, 600u);
  // 600 + 2*250 > 1000: whole batch rejected.
  try {
    f.commit({rec("c", 10, {0, 1}), rec("d", 250, {1, 2})}, all_alive);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::quota);
  }
  EXPECT_EQ(f.names(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(f.info().quota_used, 600u);
  EXPECT_EQ(f.remove({"a", "zzz"}), 1u);
  EXPECT_EQ(f.remove({"a"}), 0u);
  EXPECT_EQ(f.info().quota_used, 400u);
  EXPECT_FALSE(f.lookup("a"));
  EXPECT_EQ(f.lookup("b")->locations, (std::vector<std::uint16_t>{2, 3}));
}

TEST(Infofile, MalformedLocationsRejected) {
  TempDir dir;
  auto f = Infofile::create(dir.path() / "f", sample_info(2));
  EXPECT_THROW(f.commit({rec("a", 1, {0})}, all_alive), Error);
  EXPECT_THROW(f.commit({rec("a", 1, {1, 1})}, all_alive), Error);
  EXPECT_THROW(f.commit({rec("a", 1, {0, 9})}, all_alive), Error);
  EXPECT_THROW(f.commit({rec("a", 1, {0, 1}), rec("a", 1, {2, 3})}, all_alive), Error);
  // Nothing partial became visible.
  EXPECT_EQ(f.record_count(), 0u);
}

TEST(Infofile, RecommitRuleOverAllHolderStates) {
  // Original holders {0,1}; every alive/failed combination against every
  // replacement pair drawn from the 4-peer list.
  for (int mask = 0; mask < 4; ++mask) {
    auto alive = [mask](std::uint16_t id) { return id > 1 || ((mask >> id) & 1); };
    for (std::uint16_t a = 0; a < 4; ++a) {
      for (std::uint16_t b = 0; b < 4; ++b) {
        if (a == b) continue;
        TempDir dir;
        auto f = Infofile::create(dir.path() / "f", sample_info(2));
        f.commit({rec("r", 10, {0, 1})}, all_alive);
        // Oracle: each alive original holder keeps its rank.
        bool allowed = (!alive(0) || a == 0) && (!alive(1) || b == 1);
        bool accepted = true;
        try {
          f.commit({rec("r", 10, {a, b})}, alive);
        } catch (const Error&) {
          accepted = false;
        }
        EXPECT_EQ(accepted, allowed) << "mask " << mask << " -> {" << a << "," << b << "}";
        auto now = f.lookup("r")->locations;
        std::vector<std::uint16_t> expect = accepted ? std::vector<std::uint16_t>{a, b} : std::vector<std::uint16_t>{0, 1};
        EXPECT_EQ(now, expect);
        EXPECT_EQ(f.info().quota_used, 20u);
      }
    }
  }
}

TEST(Infofile, ReadersSeeWholeBatches) {
  TempDir dir;
  auto loc = dir.path() / "f";
  auto w = Infofile::create(loc, sample_info(2));
  const int batches = 60, per_batch = 40;
  std::atomic<bool> done{false};
  std::atomic<int> partial{0}, reads{0};
  std::thread reader([&] {
    auto r = Infofile::open(loc, Infofile::Mode::read_only);
    while (!done) {
      auto n = r.names().size();
      if (n % per_batch != 0) ++partial;
      ++reads;
    }
  });
  for (int b = 0; b < batches; ++b) {
    std::vector<RecordMeta> batch;
    for (int i = 0; i < per_batch; ++i) {
      batch.push_back(rec("b" + std::to_string(b) + "-" + std::to_string(i), 1, {static_cast<std::uint16_t>(i % 4),
                                                                               static_cast<std::uint16_t>((i + 1) % 4)}));
    }
    w.commit(batch, all_alive);
  }
  done = true;
  reader.join();
  EXPECT_EQ(partial.load(), 0);
  EXPECT_GT(reads.load(), 0);
  EXPECT_EQ(w.record_count(), static_cast<std::size_t>(batches * per_batch));
}

TEST(Infofile, ReadOnlyHandleCannotWrite) {
  TempDir dir;
  Infofile::create(dir.path() / "f", sample_info());
  auto r = Infofile::open(dir.path() / "f", Infofile::Mode::read_only);
  EXPECT_THROW(r.commit({rec("a", 1, {0, 1})}, all_alive), Error);
}

TEST(Infofile, LocationsEncoding) {
  std::vector<std::uint16_t> v{3, 0, 65535};
  EXPECT_EQ(decode_locations(encode_locations(v)), v);
}
