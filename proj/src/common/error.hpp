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

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace storetorrent {

// Error categories shared by every layer. The C API maps these one-to-one
// onto st_status values, so keep the numbering stable.
enum class Errc : int {
  invalid_argument = 1,
  not_found = 2,
  already_exists = 3,
  unavailable = 4,
  integrity = 5,
  auth = 6,
  quota = 7,
  capacity = 8,
  io = 9,
  protocol = 10,
  tracker = 11,
  timeout = 12,
  duplicate_rank = 13,
  peer_failed = 14,
  internal = 15,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// Malformed wire data. offset is the byte position, relative to the start of
// the buffer handed to the decoder, of the frame that failed to parse.
class ProtocolError : public Error {
 public:
  ProtocolError(std::size_t offset, const std::string& what)
      : Error(Errc::protocol, what + " at byte offset " + std::to_string(offset)),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace storetorrent
