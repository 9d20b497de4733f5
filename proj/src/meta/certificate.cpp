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

#include "meta/certificate.hpp"

#include "common/crypto.hpp"

namespace storetorrent::meta {
namespace {

std::string signed_text(const std::string& file_id, const std::string& client_id, std::uint64_t expiry) {
  std::string text = "st-cert";
  text.push_back('\0');
  text += file_id;
  text.push_back('\0');
  text += client_id;
  text.push_back('\0');
  text += std::to_string(expiry);
  return text;
}

}  // namespace

std::uint64_t unix_now() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
          .count());
}

std::vector<std::uint8_t> issue_certificate(std::span<const std::uint8_t> key, const std::string& file_id,
                                            const std::string& client_id, std::uint64_t expiry_unix) {
  std::vector<std::uint8_t> cert;
  cert.reserve(8 + 32);
  for (int shift = 56; shift >= 0; shift -= 8) cert.push_back(static_cast<std::uint8_t>(expiry_unix >> shift));
  auto mac = hmac_sha256(key, signed_text(file_id, client_id, expiry_unix));
  cert.insert(cert.end(), mac.begin(), mac.end());
  return cert;
}

bool verify_certificate(std::span<const std::uint8_t> key, const std::string& file_id,
                        const std::string& client_id, std::span<const std::uint8_t> cert,
                        std::uint64_t now_unix) {
  if (cert.size() != 8 + 32) return false;
  std::uint64_t expiry = 0;
  for (int i = 0; i < 8; ++i) expiry = (expiry << 8) | cert[i];
  if (expiry < now_unix) return false;
  auto mac = hmac_sha256(key, signed_text(file_id, client_id, expiry));
  return constant_time_equal(mac, cert.subspan(8));
}

}  // namespace storetorrent::meta
