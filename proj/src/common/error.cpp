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

#include "common/error.hpp"

namespace storetorrent {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::not_found: return "not_found";
    case Errc::already_exists: return "already_exists";
    case Errc::unavailable: return "unavailable";
    case Errc::integrity: return "integrity";
    case Errc::auth: return "auth";
    case Errc::quota: return "quota";
    case Errc::capacity: return "capacity";
    case Errc::io: return "io";
    case Errc::protocol: return "protocol";
    case Errc::tracker: return "tracker";
    case Errc::timeout: return "timeout";
    case Errc::duplicate_rank: return "duplicate_rank";
    case Errc::peer_failed: return "peer_failed";
    case Errc::internal: return "internal";
  }
  return "unknown";
}

}  // namespace storetorrent
