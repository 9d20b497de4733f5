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
#include <memory>
#include <string>

#include "json.hpp"

#include "common/error.hpp"

namespace storetorrent::http {

using nlohmann::json;

struct Url {
  std::string host;
  int port = 80;
  std::string prefix;  // path prefix without trailing slash, may be empty

  static Url parse(const std::string& text);
  std::string str() const;
};

// Error bodies use {"error": <errc name>, "message": ...}.
json error_body(Errc code, const std::string& message);
int http_status_for(Errc code);
Errc errc_from_name(const std::string& name);

// JSON-over-HTTP client bound to one server. Throws Error(tracker) when the
// server is unreachable and the decoded Error for error responses.
class JsonClient {
 public:
  explicit JsonClient(const std::string& base_url,
                      std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));
  ~JsonClient();
  JsonClient(JsonClient&&) noexcept;
  JsonClient& operator=(JsonClient&&) noexcept;

  json get(const std::string& path);
  json post(const std::string& path, const json& body);
  const Url& url() const noexcept { return url_; }

 private:
  struct Impl;
  Url url_;
  std::unique_ptr<Impl> impl_;
};

std::string url_encode(const std::string& s);

}  // namespace storetorrent::http
