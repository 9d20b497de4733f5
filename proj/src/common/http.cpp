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

#include "common/http.hpp"

#include "httplib.h"

namespace storetorrent::http {

Url Url::parse(const std::string& text) {
  std::string rest = text;
  if (rest.rfind("http://", 0) == 0) {
    rest = rest.substr(7);
  } else if (rest.find("://") != std::string::npos) {
    throw Error(Errc::invalid_argument, "only http:// tracker URLs are supported: " + text);
  }
  Url u;
  auto slash = rest.find('/');
  std::string hostport = rest.substr(0, slash);
  if (slash != std::string::npos) u.prefix = rest.substr(slash);
  while (!u.prefix.empty() && u.prefix.back() == '/') u.prefix.pop_back();
  auto colon = hostport.rfind(':');
  if (colon == std::string::npos) {
    u.host = hostport;
  } else {
    u.host = hostport.substr(0, colon);
    try {
      u.port = std::stoi(hostport.substr(colon + 1));
    } catch (const std::exception&) {
      throw Error(Errc::invalid_argument, "bad port in URL " + text);
    }
  }
  if (u.host.empty()) throw Error(Errc::invalid_argument, "URL has no host: " + text);
  return u;
}

std::string Url::str() const { return "http://" + host + ":" + std::to_string(port) + prefix; }

json error_body(Errc code, const std::string& message) {
  return json{{"error", std::string(errc_name(code))}, {"message", message}};
}

int http_status_for(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return 400;
    case Errc::auth: return 403;
    case Errc::not_found: return 404;
    case Errc::already_exists: return 409;
    case Errc::quota: return 413;
    case Errc::capacity: return 503;
    default: return 500;
  }
}

Errc errc_from_name(const std::string& name) {
  for (int i = 1; i <= static_cast<int>(Errc::internal); ++i) {
    auto code = static_cast<Errc>(i);
    if (errc_name(code) == name) return code;
  }
  return Errc::tracker;
}

struct JsonClient::Impl {
  httplib::Client client;
  Impl(const Url& u, std::chrono::milliseconds timeout) : client(u.host, u.port) {
    auto secs = timeout.count() / 1000;
    auto usecs = (timeout.count() % 1000) * 1000;
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    client.set_keep_alive(true);
  }
};

JsonClient::JsonClient(const std::string& base_url, std::chrono::milliseconds timeout)
    : url_(Url::parse(base_url)), impl_(std::make_unique<Impl>(url_, timeout)) {}
JsonClient::~JsonClient() = default;
JsonClient::JsonClient(JsonClient&&) noexcept = default;
JsonClient& JsonClient::operator=(JsonClient&&) noexcept = default;

namespace {

json decode(const httplib::Result& res, const Url& url, const std::string& path) {
  if (!res) {
    throw Error(Errc::tracker, "tracker " + url.str() + path + " unreachable: " + httplib::to_string(res.error()));
  }
  json body;
  try {
    body = res->body.empty() ? json::object() : json::parse(res->body);
  } catch (const json::exception&) {
    throw Error(Errc::tracker, "tracker returned non-JSON body for " + path);
  }
  if (res->status >= 200 && res->status < 300) return body;
  std::string message = body.value("message", "HTTP " + std::to_string(res->status));
  throw Error(errc_from_name(body.value("error", std::string("tracker"))), message);
}

}  // namespace

json JsonClient::get(const std::string& path) {
  auto res = impl_->client.Get(url_.prefix + path);
  return decode(res, url_, path);
}

json JsonClient::post(const std::string& path, const json& body) {
  auto res = impl_->client.Post(url_.prefix + path, body.dump(), "application/json");
  return decode(res, url_, path);
}

std::string url_encode(const std::string& s) {
  static constexpr char hex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~' || c == '/') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 0xF]);
    }
  }
  return out;
}

}  // namespace storetorrent::http
