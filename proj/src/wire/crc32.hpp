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
#include <span>
#include <string_view>

namespace storetorrent::wire {

// CRC-32/ISO-HDLC: reflected polynomial 0xEDB88320, init and final xor
// 0xFFFFFFFF. crc32("123456789") == 0xCBF43926.
std::uint32_t crc32(std::span<const std::uint8_t> data) noexcept;

// Continues a running checksum; crc32_update(0, data) == crc32(data).
std::uint32_t crc32_update(std::uint32_t crc, std::span<const std::uint8_t> data) noexcept;

inline std::uint32_t crc32(std::string_view text) noexcept {
  return crc32(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace storetorrent::wire
