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

#include <random>

#include "wire/crc32.hpp"
#include "wire/protocol.hpp"

using namespace storetorrent;
using namespace storetorrent::wire;

namespace {

// Second decoder, written only from the frame table. Reads exactly one frame
// and returns the message; throws std::runtime_error on any inconsistency.
class RefReader {
 public:
  explicit RefReader(const Bytes& b) : b_(b) {}

  Message frame() {
    std::uint32_t len = u32();
    std::size_t end = pos_ + len;
    if (end > b_.size()) throw std::runtime_error("short frame");
    std::uint8_t kind = u8();
    Message m = body(kind);
    if (pos_ != end) throw std::runtime_error("length mismatch");
    return m;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint16_t u16() {
    std::uint16_t v = static_cast<std::uint16_t>(u8() << 8);
    return static_cast<std::uint16_t>(v | u8());
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | u8();
    return v;
  }
  std::string str() {
    std::size_t n = u16();
    need(n);
    std::string s(b_.begin() + static_cast<long>(pos_), b_.begin() + static_cast<long>(pos_ + n));
    pos_ += n;
    return s;
  }
  Bytes raw(std::size_t n) {
    need(n);
    Bytes out(b_.begin() + static_cast<long>(pos_), b_.begin() + static_cast<long>(pos_ + n));
    pos_ += n;
    return out;
  }
  void need(std::size_t n) {
    if (pos_ + n > b_.size()) throw std::runtime_error("truncated");
  }

  Message body(std::uint8_t kind) {
    switch (kind) {
      case 0x01: {
        Handshake h;
        h.version = u8();
        h.client_id = str();
        h.file_id = str();
        h.cert = raw(u16());
        return h;
      }
      case 0x02: {
        Put p;
        p.seq = u32();
        p.rank = u8();
        p.name = str();
        p.crc = u32();
        p.data = raw(u64());
        return p;
      }
      case 0x03: {
        PutAck a;
        a.seq = u32();
        a.status = u8();
        return a;
      }
      case 0x04: {
        Get g;
        g.seq = u32();
        g.name = str();
        return g;
      }
      case 0x05: {
        Piece p;
        p.seq = u32();
        p.crc = u32();
        p.data = raw(u64());
        return p;
      }
      case 0x06: {
        Delete d;
        d.seq = u32();
        d.name = str();
        return d;
      }
      case 0x07: {
        DeleteAck a;
        a.seq = u32();
        a.status = u8();
        return a;
      }
      case 0x08: {
        GetLocal g;
        g.seq = u32();
        std::uint16_t n = u16();
        for (std::uint16_t i = 0; i < n; ++i) {
          RingPeer p;
          p.peer_id = u16();
          p.addr = str();
          p.port = u16();
          g.peers.push_back(p);
        }
        return g;
      }
      case 0x09: {
        LocalList l;
        l.seq = u32();
        std::uint32_t n = u32();
        for (std::uint32_t i = 0; i < n; ++i) {
          LocalEntry e;
          e.name = str();
          e.path = str();
          l.entries.push_back(e);
        }
        return l;
      }
      case 0x0A: {
        ErrorMsg e;
        e.seq = u32();
        e.code = u8();
        e.detail = str();
        return e;
      }
      case 0x0B: {
        IndexRing r;
        r.file_id = str();
        r.round = u16();
        r.origin_peer = u16();
        std::uint32_t n = u32();
        for (std::uint32_t i = 0; i < n; ++i) {
          IndexEntry e;
          e.name = str();
          e.rank = u8();
          r.entries.push_back(e);
        }
        return r;
      }
      default:
        throw std::runtime_error("unknown kind");
    }
  }

  const Bytes& b_;
  std::size_t pos_ = 0;
};

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  Message any() {
    switch (pick(11)) {
      case 0:
        return Handshake{static_cast<std::uint8_t>(pick(256)), str(), str(), bytes(64)};
      case 1:
        return Put{u32(), static_cast<std::uint8_t>(pick(8)), str(), u32(), bytes(4096)};
      case 2:
        return PutAck{u32(), static_cast<std::uint8_t>(pick(256))};
      case 3:
        return Get{u32(), str()};
      case 4:
        return Piece{u32(), u32(), bytes(4096)};
      case 5:
        return Delete{u32(), str()};
      case 6:
        return DeleteAck{u32(), static_cast<std::uint8_t>(pick(256))};
      case 7: {
        GetLocal g{u32(), {}};
        for (std::size_t i = pick(8); i > 0; --i) {
          g.peers.push_back(RingPeer{static_cast<std::uint16_t>(pick(65536)), str(), static_cast<std::uint16_t>(pick(65536))});
        }
        return g;
      }
      case 8: {
        LocalList l{u32(), {}};
        for (std::size_t i = pick(8); i > 0; --i) l.entries.push_back(LocalEntry{str(), str()});
        return l;
      }
      case 9:
        return ErrorMsg{u32(), static_cast<std::uint8_t>(pick(256)), str()};
      default: {
        IndexRing r{str(), static_cast<std::uint16_t>(pick(65536)), static_cast<std::uint16_t>(pick(65536)), {}};
        for (std::size_t i = pick(8); i > 0; --i) r.entries.push_back(IndexEntry{str(), static_cast<std::uint8_t>(pick(256))});
        return r;
      }
    }
  }

  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(rng_()); }
  std::string str() {
    std::string s(pick(40), '\0');
    for (auto& c : s) c = static_cast<char>(pick(256));
    return s;
  }
  Bytes bytes(std::size_t max) {
    Bytes b(pick(max + 1));
    for (auto& c : b) c = static_cast<std::uint8_t>(pick(256));
    return b;
  }

 private:
  std::mt19937_64 rng_;
};

Bytes concat(const std::vector<Message>& ms) {
  Bytes out;
  for (const auto& m : ms) append_message(out, m);
  return out;
}

}  // namespace

TEST(WireFrame, PutAckBytes) {
  Bytes expected{0x00, 0x00, 0x00, 0x06, 0x03, 0x00, 0x00, 0x00, 0x00, 0x00};
  EXPECT_EQ(encode_message(PutAck{0, 0}), expected);
}

TEST(WireFrame, LengthPrefixCountsKindAndPayload) {
  Gen g(7);
  for (int i = 0; i < 500; ++i) {
    auto b = encode_message(g.any());
    ASSERT_GE(b.size(), 5u);
    std::uint32_t len = (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
    EXPECT_EQ(len, b.size() - 4);
  }
}

TEST(WireFrame, RandomMessagesMatchReferenceDecoder) {
  Gen g(20240611);
  for (int i = 0; i < 10000; ++i) {
    Message m = g.any();
    Bytes b = encode_message(m);
    RefReader ref(b);
    Message back = ref.frame();
    ASSERT_TRUE(ref.done());
    ASSERT_EQ(back, m) << describe(m);
    auto ours = decode_stream(b);
    ASSERT_EQ(ours.messages.size(), 1u);
    ASSERT_EQ(ours.messages[0], m);
    ASSERT_TRUE(ours.remainder.empty());
    // Re-encoding the decoded message is byte identical.
    ASSERT_EQ(encode_message(back), b);
  }
}

TEST(WireFrame, SplitHeadersMatchWholeFrames) {
  Bytes data{1, 2, 3, 4, 5};
  Bytes whole = encode_message(Put{9, 1, "am", crc32(data), data});
  Bytes split = encode_put_header(9, 1, "am", crc32(data), data.size());
  split.insert(split.end(), data.begin(), data.end());
  EXPECT_EQ(split, whole);
  Bytes piece = encode_piece_header(4, 77, data.size());
  piece.insert(piece.end(), data.begin(), data.end());
  EXPECT_EQ(piece, encode_message(Piece{4, 77, data}));
}

TEST(WireFrame, OversizeStringRejected) {
  Get g{1, std::string(kMaxStringLength + 1, 'x')};
  try {
    encode_message(g);
    FAIL() << "expected an encoding error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_argument);
  }
  EXPECT_NO_THROW(encode_message(Get{1, std::string(kMaxStringLength, 'x')}));
}

TEST(WireDecode, EmptyBuffer) {
  auto r = decode_stream({});
  EXPECT_TRUE(r.messages.empty());
  EXPECT_TRUE(r.remainder.empty());
}

TEST(WireDecode, TwoAcks) {
  Bytes b = concat({PutAck{1, 0}, PutAck{2, 1}});
  auto r = decode_stream(b);
  ASSERT_EQ(r.messages.size(), 2u);
  EXPECT_EQ(r.messages[0], Message(PutAck{1, 0}));
  EXPECT_EQ(r.messages[1], Message(PutAck{2, 1}));
  EXPECT_TRUE(r.remainder.empty());
}

TEST(WireDecode, PartialFrameLeftInRemainder) {
  Bytes b = concat({PutAck{1, 0}, Get{2, "ad"}});
  for (std::size_t cut = 0; cut <= b.size(); ++cut) {
    std::span<const std::uint8_t> prefix(b.data(), cut);
    auto r = decode_stream(prefix);
    std::size_t expect = cut >= b.size() ? 2 : (cut >= 10 ? 1 : 0);
    ASSERT_EQ(r.messages.size(), expect) << "cut " << cut;
    std::size_t consumed = expect == 2 ? b.size() : expect * 10;
    EXPECT_EQ(r.remainder.size(), cut - consumed);
  }
}

TEST(WireDecode, EverySplitPointOfOneFrame) {
  Gen g(99);
  for (int k = 0; k < 20; ++k) {
    Message m = g.any();
    Bytes b = encode_message(m);
    for (std::size_t cut = 0; cut <= b.size(); ++cut) {
      FrameDecoder d;
      d.feed(std::span<const std::uint8_t>(b.data(), cut));
      auto first = d.drain();
      d.feed(std::span<const std::uint8_t>(b.data() + cut, b.size() - cut));
      auto second = d.drain();
      first.insert(first.end(), second.begin(), second.end());
      ASSERT_EQ(first.size(), 1u) << "cut " << cut;
      ASSERT_EQ(first[0], m);
      EXPECT_EQ(d.buffered(), 0u);
    }
  }
}

TEST(WireDecode, ArbitraryChunkingMatchesOneShot) {
  Gen g(5);
  std::vector<Message> ms;
  for (int i = 0; i < 200; ++i) ms.push_back(g.any());
  Bytes b = concat(ms);
  std::mt19937 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    FrameDecoder d;
    std::vector<Message> got;
    std::size_t pos = 0;
    while (pos < b.size()) {
      std::size_t n = std::min<std::size_t>(b.size() - pos, 1 + rng() % 700);
      d.feed(std::span<const std::uint8_t>(b.data() + pos, n));
      pos += n;
      for (auto& m : d.drain()) got.push_back(std::move(m));
    }
    ASSERT_EQ(got, ms);
  }
}

TEST(WireDecode, UnknownKindReportsOffset) {
  Bytes b = concat({PutAck{1, 0}});
  std::size_t second = b.size();
  append_message(b, Get{2, "x"});
  b[second + 4] = 0x7F;
  try {
    decode_stream(b);
    FAIL() << "expected a protocol error";
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.offset(), second);
  }
}

TEST(WireDecode, OversizeLengthRejected) {
  Bytes b{0xFF, 0xFF, 0xFF, 0xFF, 0x03};
  EXPECT_THROW(decode_stream(b), ProtocolError);
  Bytes zero{0, 0, 0, 0};
  EXPECT_THROW(decode_stream(zero), ProtocolError);
}

TEST(WireDecode, PayloadDisagreeingWithLengthRejected) {
  Bytes b = encode_message(PutAck{1, 0});
  b[3] = 7;  // claims one byte more than the PUT_ACK layout
  b.push_back(0);
  EXPECT_THROW(decode_stream(b), ProtocolError);

  Bytes put = encode_message(Put{1, 0, "a", 0, Bytes(10, 1)});
  // data_len field is the 8 bytes before the data.
  put[put.size() - 10 - 1] = 11;
  EXPECT_THROW(decode_stream(put), ProtocolError);
}

TEST(WireDecode, CorruptPayloadDoesNotAffectNextFrame) {
  Gen g(11);
  for (int i = 0; i < 300; ++i) {
    Put p{static_cast<std::uint32_t>(i), 0, "rec", 0, g.bytes(200)};
    Message next = g.any();
    Bytes b = concat({p, next});
    Bytes first = encode_message(p);
    if (!p.data.empty()) b[first.size() - 1 - g.pick(p.data.size())] ^= 0xFF;
    auto r = decode_stream(b);
    ASSERT_EQ(r.messages.size(), 2u);
    EXPECT_EQ(r.messages[1], next);
  }
}

namespace {
std::uint32_t bitwise_crc(const std::string& s) {
  std::uint32_t c = 0xFFFFFFFFu;
  for (unsigned char ch : s) {
    c ^= ch;
    for (int k = 0; k < 8; ++k) c = (c & 1u) ? (c >> 1) ^ 0xEDB88320u : c >> 1;
  }
  return ~c;
}
std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}
}  // namespace

TEST(Crc32, Empty) { EXPECT_EQ(crc32(std::span<const std::uint8_t>{}), 0x00000000u); }

TEST(Crc32, CheckValue) {
  EXPECT_EQ(bitwise_crc("123456789"), 0xCBF43926u);
  EXPECT_EQ(crc32(as_bytes("123456789")), 0xCBF43926u);
}

TEST(Crc32, MatchesBitwiseReference) {
  Gen g(1);
  for (int i = 0; i < 500; ++i) {
    std::string s = g.str() + g.str() + g.str();
    ASSERT_EQ(crc32(as_bytes(s)), bitwise_crc(s));
  }
}

TEST(Crc32, IncrementalEqualsOneShot) {
  std::string s(10000, '\0');
  std::mt19937 rng(2);
  for (auto& c : s) c = static_cast<char>(rng());
  for (std::size_t cut : {0ul, 1ul, 7ul, 8ul, 9ul, 4095ul, 9999ul, 10000ul}) {
    auto a = crc32_update(0, as_bytes(s.substr(0, cut)));
    EXPECT_EQ(crc32_update(a, as_bytes(s.substr(cut))), crc32(as_bytes(s)));
  }
}

TEST(Crc32, SingleBitFlipsDetected) {
  std::mt19937_64 rng(42);
  std::string s(4096, '\0');
  for (auto& c : s) c = static_cast<char>(rng());
  auto base = crc32(as_bytes(s));
  for (int i = 0; i < 1000; ++i) {
    std::string t = s;
    auto bit = rng() % (t.size() * 8);
    t[bit / 8] = static_cast<char>(t[bit / 8] ^ (1 << (bit % 8)));
    ASSERT_NE(crc32(as_bytes(t)), base) << "bit " << bit;
  }
}
