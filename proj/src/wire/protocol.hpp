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

// Length-prefixed binary messages spoken on client<->peer and peer<->peer
// TCP connections.
//
//   frame := len:u32 | kind:u8 | payload        (len covers kind + payload)
//
// All integers are big-endian. Strings carry a u16 length prefix, the
// certificate a u16 length prefix, and record data a u64 length prefix.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "common/error.hpp"

namespace storetorrent::wire {

using Bytes = std::vector<std::uint8_t>;

enum class Kind : std::uint8_t {
  handshake = 0x01,
  put = 0x02,
  put_ack = 0x03,
  get = 0x04,
  piece = 0x05,
  del = 0x06,
  delete_ack = 0x07,
  get_local = 0x08,
  local_list = 0x09,
  error = 0x0A,
  index_ring = 0x0B,
};

inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::size_t kMaxStringLength = 0xFFFF;
inline constexpr std::uint64_t kMaxRecordSize = 0x7FFFFFFFull;
// Largest accepted value of the length prefix. Leaves room for the largest
// record plus its header, and for index/list frames of realistic size.
inline constexpr std::uint32_t kMaxFrameLength = 0x7FFFFFFFu + (1u << 24);
inline constexpr std::size_t kLengthPrefixSize = 4;

// Sequence number 0 in ERROR denotes a connection-scoped failure.
inline constexpr std::uint32_t kConnectionScope = 0;

// ERROR codes carried on the wire.
enum class ErrorCode : std::uint8_t {
  auth = 1,
  not_found = 2,
  io = 3,
  protocol = 4,
  peer_failed = 5,
  duplicate_rank = 6,
  invalid = 7,
};

struct Handshake {
  std::uint8_t version = kProtocolVersion;
  std::string client_id;
  std::string file_id;
  Bytes cert;
  bool operator==(const Handshake&) const = default;
};

struct Put {
  std::uint32_t seq = 0;
  std::uint8_t rank = 0;
  std::string name;
  std::uint32_t crc = 0;
  Bytes data;
  bool operator==(const Put&) const = default;
};

struct PutAck {
  std::uint32_t seq = 0;
  std::uint8_t status = 0;
  bool operator==(const PutAck&) const = default;
};

struct Get {
  std::uint32_t seq = 0;
  std::string name;
  bool operator==(const Get&) const = default;
};

struct Piece {
  std::uint32_t seq = 0;
  std::uint32_t crc = 0;
  Bytes data;
  bool operator==(const Piece&) const = default;
};

struct Delete {
  std::uint32_t seq = 0;
  std::string name;
  bool operator==(const Delete&) const = default;
};

struct DeleteAck {
  std::uint32_t seq = 0;
  std::uint8_t status = 0;
  bool operator==(const DeleteAck&) const = default;
};

struct RingPeer {
  std::uint16_t peer_id = 0;
  std::string addr;
  std::uint16_t port = 0;
  bool operator==(const RingPeer&) const = default;
};

struct GetLocal {
  std::uint32_t seq = 0;
  std::vector<RingPeer> peers;
  bool operator==(const GetLocal&) const = default;
};

struct LocalEntry {
  std::string name;
  std::string path;
  bool operator==(const LocalEntry&) const = default;
};

struct LocalList {
  std::uint32_t seq = 0;
  std::vector<LocalEntry> entries;
  bool operator==(const LocalList&) const = default;
};

struct ErrorMsg {
  std::uint32_t seq = kConnectionScope;
  std::uint8_t code = 0;
  std::string detail;
  bool operator==(const ErrorMsg&) const = default;
};

struct IndexEntry {
  std::string name;
  std::uint8_t rank = 0;
  bool operator==(const IndexEntry&) const = default;
};

struct IndexRing {
  std::string file_id;
  std::uint16_t round = 0;
  std::uint16_t origin_peer = 0;
  std::vector<IndexEntry> entries;
  bool operator==(const IndexRing&) const = default;
};

using Message = std::variant<Handshake, Put, PutAck, Get, Piece, Delete, DeleteAck,
                             GetLocal, LocalList, ErrorMsg, IndexRing>;

Kind kind_of(const Message& m) noexcept;

// Throws Error(invalid_argument) when a field does not fit its wire width.
Bytes encode_message(const Message& m);
void append_message(Bytes& out, const Message& m);

// Frame header for a PUT or PIECE whose data is sent separately, so callers
// can scatter-write a shared payload without copying it into every frame.
Bytes encode_put_header(std::uint32_t seq, std::uint8_t rank, const std::string& name,
                        std::uint32_t crc, std::uint64_t data_len);
Bytes encode_piece_header(std::uint32_t seq, std::uint32_t crc, std::uint64_t data_len);

struct DecodeResult {
  std::vector<Message> messages;
  std::span<const std::uint8_t> remainder;
};

// Decodes every complete frame in buffer. A trailing partial frame is left in
// remainder untouched. Throws ProtocolError on an unknown kind, a length out
// of range, or a payload that disagrees with its length prefix.
DecodeResult decode_stream(std::span<const std::uint8_t> buffer);

// Incremental decoder for a socket: feed() arbitrary chunks, pop frames.
class FrameDecoder {
 public:
  void feed(std::span<const std::uint8_t> chunk);
  // Returns messages completed so far. Throws ProtocolError, with offsets
  // counted from the first byte ever fed.
  std::vector<Message> drain();
  std::size_t buffered() const noexcept { return buffer_.size() - start_; }
  std::uint64_t consumed_total() const noexcept { return consumed_total_; }

 private:
  Bytes buffer_;
  std::size_t start_ = 0;
  std::uint64_t consumed_total_ = 0;
};

std::string describe(const Message& m);

}  // namespace storetorrent::wire
