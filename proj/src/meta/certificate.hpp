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

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace storetorrent::meta {

// Per-file write certificate issued by the tracker:
//   expiry (u64 BE unix seconds) | HMAC-SHA-256(key, file_id, client_id, expiry)
// Peers sharing the key verify it before accepting PUT or DELETE.
inline constexpr std::chrono::hours kDefaultCertificateLifetime{24};

std::vector<std::uint8_t> issue_certificate(std::span<const std::uint8_t> key,
                                            const std::string& file_id,
                                            const std::string& client_id,
                                            std::uint64_t expiry_unix);

bool verify_certificate(std::span<const std::uint8_t> key, const std::string& file_id,
                        const std::string& client_id, std::span<const std::uint8_t> cert,
                        std::uint64_t now_unix);

std::uint64_t unix_now();

}  // namespace storetorrent::meta
