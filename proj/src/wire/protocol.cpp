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

#include "wire/protocol.hpp"

#include <cstring>
#include <sstream>

namespace storetorrent::wire {
namespace {

class Writer {
 public:
  explicit Writer(Bytes& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
    out_.push_back(static_cast<std::uint8_t>(v));
  }
  void u32(std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out_.push_back(static_cast<std::uint8_t>(v >> shift));
  }
  void u64(std::uint64_t v) {
    for (int shift = 56; shift >= 0; shift -= 8) out_.push_back(static_cast<std::uint8_t>(v >> shift));
  }
  void str(const std::string& s) {
    if (s.size() > kMaxStringLength) {
      throw Error(Errc::invalid_argument, "string field of " + std::to_string(s.size()) +
                                              " bytes exceeds the u16 length prefix");
    }
    u16(static_cast<std::uint16_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void short_bytes(const Bytes& b) {
    if (b.size() > kMaxStringLength) throw Error(Errc::invalid_argument, "certificate too long");
    u16(static_cast<std::uint16_t>(b.size()));
    out_.insert(out_.end(), b.begin(), b.end());
  }
  void data(const Bytes& b) {
    if (b.size() > kMaxRecordSize) throw Error(Errc::invalid_argument, "record exceeds maximum size");
    u64(b.size());
    out_.insert(out_.end(), b.begin(), b.end());
  }
  template <typename T>
  void count32(const std::vector<T>& v) {
    if (v.size() > 0xFFFFFFFFull) throw Error(Errc::invalid_argument, "too many entries");
    u32(static_cast<std::uint32_t>(v.size()));
  }

 private:
  Bytes& out_;
};

// Bounds-checked reader over one frame's payload.
class Reader {
 public:
  Reader(std::span<const std::uint8_t> payload, std::size_t frame_offset)
      : data_(payload), frame_offset_(frame_offset) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>((data_[pos_] << 8) | data_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | data_[pos_ + i];
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | data_[pos_ + i];
    pos_ += 8;
    return v;
  }
  std::string str() {
    std::size_t n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Bytes short_bytes() {
    std::size_t n = u16();
    return take(n);
  }
  Bytes data() {
    std::uint64_t n = u64();
    if (n > kMaxRecordSize) fail("record length " + std::to_string(n) + " exceeds maximum");
    return take(static_cast<std::size_t>(n));
  }
  std::uint32_t count(std::size_t min_entry_size) {
    std::uint32_t n = u32();
    // Every entry occupies at least min_entry_size bytes, so a count larger
    // than the remaining payload allows is malformed; reject before reserving.
    if (static_cast<std::uint64_t>(n) * min_entry_size > data_.size() - pos_) {
      fail("entry count " + std::to_string(n) + " exceeds frame length");
    }
    return n;
  }
  void finish() const {
    if (pos_ != data_.size()) fail("trailing bytes in frame payload");
  }
  [[noreturn]] void fail(const std::string& what) const { throw ProtocolError(frame_offset_, what); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail("frame payload truncated");
  }
  Bytes take(std::size_t n) {
    need(n);
    Bytes b(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
            data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return b;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::size_t frame_offset_;
};

void encode_payload(Writer& w, const Message& m) {
  std::visit(
      [&w](const auto& msg) {
        using T = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<T, Handshake>) {
          w.u8(msg.version);
          w.str(msg.client_id);
          w.str(msg.file_id);
          w.short_bytes(msg.cert);
        } else if constexpr (std::is_same_v<T, Put>) {
          w.u32(msg.seq);
          w.u8(msg.rank);
          w.str(msg.name);
          w.u32(msg.crc);
          w.data(msg.data);
        } else if constexpr (std::is_same_v<T, PutAck> || std::is_same_v<T, DeleteAck>) {
          w.u32(msg.seq);
          w.u8(msg.status);
        } else if constexpr (std::is_same_v<T, Get> || std::is_same_v<T, Delete>) {
          w.u32(msg.seq);
          w.str(msg.name);
        } else if constexpr (std::is_same_v<T, Piece>) {
          w.u32(msg.seq);
          w.u32(msg.crc);
          w.data(msg.data);
        } else if constexpr (std::is_same_v<T, GetLocal>) {
          w.u32(msg.seq);
          if (msg.peers.size() > 0xFFFF) throw Error(Errc::invalid_argument, "peerlist too long");
          w.u16(static_cast<std::uint16_t>(msg.peers.size()));
          for (const auto& p : msg.peers) {
            w.u16(p.peer_id);
            w.str(p.addr);
            w.u16(p.port);
          }
        } else if constexpr (std::is_same_v<T, LocalList>) {
          w.u32(msg.seq);
          w.count32(msg.entries);
          for (const auto& e : msg.entries) {
            w.str(e.name);
            w.str(e.path);
          }
        } else if constexpr (std::is_same_v<T, ErrorMsg>) {
          w.u32(msg.seq);
          w.u8(msg.code);
          w.str(msg.detail);
        } else if constexpr (std::is_same_v<T, IndexRing>) {
          w.str(msg.file_id);
          w.u16(msg.round);
          w.u16(msg.origin_peer);
          w.count32(msg.entries);
          for (const auto& e : msg.entries) {
            w.str(e.name);
            w.u8(e.rank);
          }
        }
      },
      m);
}

Message decode_payload(Kind kind, Reader& r) {
  switch (kind) {
    case Kind::handshake: {
      Handshake h;
      h.version = r.u8();
      h.client_id = r.str();
      h.file_id = r.str();
      h.cert = r.short_bytes();
      return h;
    }
    case Kind::put: {
      Put p;
      p.seq = r.u32();
      p.rank = r.u8();
      p.name = r.str();
      p.crc = r.u32();
      p.data = r.data();
      return p;
    }
    case Kind::put_ack: {
      PutAck a;
      a.seq = r.u32();
      a.status = r.u8();
      return a;
    }
    case Kind::get: {
      Get g;
      g.seq = r.u32();
      g.name = r.str();
      return g;
    }
    case Kind::piece: {
      Piece p;
      p.seq = r.u32();
      p.crc = r.u32();
      p.data = r.data();
      return p;
    }
    case Kind::del: {
      Delete d;
      d.seq = r.u32();
      d.name = r.str();
      return d;
    }
    case Kind::delete_ack: {
      DeleteAck a;
      a.seq = r.u32();
      a.status = r.u8();
      return a;
    }
    case Kind::get_local: {
      GetLocal g;
      g.seq = r.u32();
      std::uint16_t n = r.u16();
      g.peers.reserve(n);
      for (std::uint16_t i = 0; i < n; ++i) {
        RingPeer p;
        p.peer_id = r.u16();
        p.addr = r.str();
        p.port = r.u16();
        g.peers.push_back(std::move(p));
      }
      return g;
    }
    case Kind::local_list: {
      LocalList l;
      l.seq = r.u32();
      std::uint32_t n = r.count(4);
      l.entries.reserve(n);
      for (std::uint32_t i = 0; i < n; ++i) {
        LocalEntry e;
        e.name = r.str();
        e.path = r.str();
        l.entries.push_back(std::move(e));
      }
      return l;
    }
    case Kind::error: {
      ErrorMsg e;
      e.seq = r.u32();
      e.code = r.u8();
      e.detail = r.str();
      return e;
    }
    case Kind::index_ring: {
      IndexRing ir;
      ir.file_id = r.str();
      ir.round = r.u16();
      ir.origin_peer = r.u16();
      std::uint32_t n = r.count(3);
      ir.entries.reserve(n);
      for (std::uint32_t i = 0; i < n; ++i) {
        IndexEntry e;
        e.name = r.str();
        e.rank = r.u8();
        ir.entries.push_back(std::move(e));
      }
      return ir;
    }
  }
  r.fail("unknown message kind " + std::to_string(static_cast<int>(kind)));
}

bool known_kind(std::uint8_t k) { return k >= 0x01 && k <= 0x0B; }

void patch_length(Bytes& out, std::size_t frame_start, std::uint64_t extra) {
  std::uint64_t len = out.size() - frame_start - kLengthPrefixSize + extra;
  if (len > kMaxFrameLength) throw Error(Errc::invalid_argument, "frame too large");
  for (int i = 0; i < 4; ++i) out[frame_start + i] = static_cast<std::uint8_t>(len >> (24 - 8 * i));
}

}  // namespace

Kind kind_of(const Message& m) noexcept {
  static constexpr Kind kinds[] = {Kind::handshake, Kind::put,       Kind::put_ack,
                                   Kind::get,       Kind::piece,     Kind::del,
                                   Kind::delete_ack, Kind::get_local, Kind::local_list,
                                   Kind::error,     Kind::index_ring};
  return kinds[m.index()];
}

void append_message(Bytes& out, const Message& m) {
  std::size_t start = out.size();
  out.resize(start + kLengthPrefixSize);
  try {
    Writer w(out);
    w.u8(static_cast<std::uint8_t>(kind_of(m)));
    encode_payload(w, m);
    patch_length(out, start, 0);
  } catch (...) {
    out.resize(start);
    throw;
  }
}

Bytes encode_message(const Message& m) {
  Bytes out;
  append_message(out, m);
  return out;
}

Bytes encode_put_header(std::uint32_t seq, std::uint8_t rank, const std::string& name,
                        std::uint32_t crc, std::uint64_t data_len) {
  if (data_len > kMaxRecordSize) throw Error(Errc::invalid_argument, "record exceeds maximum size");
  Bytes out(kLengthPrefixSize);
  Writer w(out);
  w.u8(static_cast<std::uint8_t>(Kind::put));
  w.u32(seq);
  w.u8(rank);
  w.str(name);
  w.u32(crc);
  w.u64(data_len);
  patch_length(out, 0, data_len);
  return out;
}

Bytes encode_piece_header(std::uint32_t seq, std::uint32_t crc, std::uint64_t data_len) {
  if (data_len > kMaxRecordSize) throw Error(Errc::invalid_argument, "record exceeds maximum size");
  Bytes out(kLengthPrefixSize);
  Writer w(out);
  w.u8(static_cast<std::uint8_t>(Kind::piece));
  w.u32(seq);
  w.u32(crc);
  w.u64(data_len);
  patch_length(out, 0, data_len);
  return out;
}

namespace {

// Shared by decode_stream and FrameDecoder. base_offset shifts reported
// offsets so they refer to the caller's byte numbering.
std::size_t decode_frames(std::span<const std::uint8_t> buffer, std::uint64_t base_offset,
                          std::vector<Message>& out) {
  std::size_t pos = 0;
  while (buffer.size() - pos >= kLengthPrefixSize) {
    const std::uint8_t* p = buffer.data() + pos;
    std::uint32_t len = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
                        (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
    auto offset = static_cast<std::size_t>(base_offset + pos);
    if (len == 0) throw ProtocolError(offset, "zero-length frame");
    if (len > kMaxFrameLength) throw ProtocolError(offset, "frame length " + std::to_string(len) + " out of range");
    // The kind byte is validated as soon as it is available so a garbage
    // stream fails fast instead of waiting for a huge bogus frame.
    if (buffer.size() - pos > kLengthPrefixSize && !known_kind(p[4])) {
      throw ProtocolError(offset, "unknown message kind " + std::to_string(p[4]));
    }
    if (buffer.size() - pos - kLengthPrefixSize < len) break;
    auto kind = static_cast<Kind>(p[4]);
    Reader r(buffer.subspan(pos + kLengthPrefixSize + 1, len - 1), offset);
    out.push_back(decode_payload(kind, r));
    r.finish();
    pos += kLengthPrefixSize + len;
  }
  return pos;
}

}  // namespace

DecodeResult decode_stream(std::span<const std::uint8_t> buffer) {
  DecodeResult result;
  std::size_t consumed = decode_frames(buffer, 0, result.messages);
  result.remainder = buffer.subspan(consumed);
  return result;
}

void FrameDecoder::feed(std::span<const std::uint8_t> chunk) {
  if (start_ > 0 && start_ >= buffer_.size() / 2) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(start_));
    start_ = 0;
  }
  buffer_.insert(buffer_.end(), chunk.begin(), chunk.end());
}

std::vector<Message> FrameDecoder::drain() {
  std::vector<Message> out;
  std::span<const std::uint8_t> pending(buffer_.data() + start_, buffer_.size() - start_);
  std::size_t used = decode_frames(pending, consumed_total_, out);
  start_ += used;
  consumed_total_ += used;
  if (start_ == buffer_.size()) {
    buffer_.clear();
    start_ = 0;
  }
  return out;
}

std::string describe(const Message& m) {
  std::ostringstream os;
  std::visit(
      [&os](const auto& msg) {
        using T = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<T, Handshake>) {
          os << "HANDSHAKE client=" << msg.client_id << " file=" << msg.file_id;
        } else if constexpr (std::is_same_v<T, Put>) {
          os << "PUT seq=" << msg.seq << " rank=" << int{msg.rank} << " name=" << msg.name
             << " len=" << msg.data.size();
        } else if constexpr (std::is_same_v<T, PutAck>) {
          os << "PUT_ACK seq=" << msg.seq << " status=" << int{msg.status};
        } else if constexpr (std::is_same_v<T, Get>) {
          os << "GET seq=" << msg.seq << " name=" << msg.name;
        } else if constexpr (std::is_same_v<T, Piece>) {
          os << "PIECE seq=" << msg.seq << " len=" << msg.data.size();
        } else if constexpr (std::is_same_v<T, Delete>) {
          os << "DELETE seq=" << msg.seq << " name=" << msg.name;
        } else if constexpr (std::is_same_v<T, DeleteAck>) {
          os << "DELETE_ACK seq=" << msg.seq << " status=" << int{msg.status};
        } else if constexpr (std::is_same_v<T, GetLocal>) {
          os << "GET_LOCAL seq=" << msg.seq << " peers=" << msg.peers.size();
        } else if constexpr (std::is_same_v<T, LocalList>) {
          os << "LOCAL_LIST seq=" << msg.seq << " entries=" << msg.entries.size();
        } else if constexpr (std::is_same_v<T, ErrorMsg>) {
          os << "ERROR seq=" << msg.seq << " code=" << int{msg.code} << " " << msg.detail;
        } else if constexpr (std::is_same_v<T, IndexRing>) {
          os << "INDEX_RING file=" << msg.file_id << " round=" << msg.round
             << " origin=" << msg.origin_peer << " entries=" << msg.entries.size();
        }
      },
      m);
  return os.str();
}

}  // namespace storetorrent::wire
