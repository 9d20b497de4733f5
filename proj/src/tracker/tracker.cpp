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

#include "tracker/tracker.hpp"

#include <spdlog/spdlog.h>

#include "httplib.h"

#include "common/crypto.hpp"
#include "common/error.hpp"
#include "common/http.hpp"
#include "common/net.hpp"
#include "meta/certificate.hpp"

namespace storetorrent::tracker {
namespace {

json peerlist_json(const std::vector<meta::PeerInfo>& peers) {
  json arr = json::array();
  for (const auto& p : peers) arr.push_back({{"peer_id", p.peer_id}, {"addr", p.addr}, {"port", p.port}});
  return arr;
}

json file_json(const meta::FileInfo& info) {
  return json{{"path", info.path},
              {"file_id", info.file_id},
              {"ft_class", info.ft.name()},
              {"est_size", info.est_size},
              {"quota_bytes", info.quota_bytes},
              {"quota_used", info.quota_used},
              {"peerlist", peerlist_json(info.peerlist)},
              {"tracker", "/files/" + http::url_encode(info.file_id)}};
}

std::vector<meta::RecordMeta> parse_entries(const json& entries) {
  std::vector<meta::RecordMeta> batch;
  for (const auto& e : entries) {
    meta::RecordMeta r;
    r.name = e.at("name").get<std::string>();
    r.size = e.at("size").get<std::uint64_t>();
    r.crc = e.at("crc").get<std::uint32_t>();
    r.locations = e.at("locations").get<std::vector<std::uint16_t>>();
    batch.push_back(std::move(r));
  }
  return batch;
}

template <typename F>
void guarded(httplib::Response& res, F&& body) {
  try {
    res.set_content(body().dump(), "application/json");
  } catch (const Error& e) {
    res.status = http::http_status_for(e.code());
    res.set_content(http::error_body(e.code(), e.what()).dump(), "application/json");
  } catch (const json::exception& e) {
    res.status = 400;
    res.set_content(http::error_body(Errc::invalid_argument, e.what()).dump(), "application/json");
  } catch (const std::exception& e) {
    res.status = 500;
    res.set_content(http::error_body(Errc::internal, e.what()).dump(), "application/json");
  }
}

std::uint64_t count_infofiles(const fs::path& root) {
  std::uint64_t n = 0;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) return 0;
  for (auto it = fs::recursive_directory_iterator(root, ec); it != fs::recursive_directory_iterator(); ++it) {
    if (it->is_regular_file() && it->path().filename().string().find(".creating.") == std::string::npos &&
        it->path().filename().string().find("-journal") == std::string::npos) {
      ++n;
    }
  }
  return n;
}

}  // namespace

Tracker::Tracker(TrackerConfig config)
    : config_(std::move(config)), peers_(config_.announce_interval, config_.k_missed), rng_(config_.seed) {
  std::error_code ec;
  fs::create_directories(config_.root, ec);
  if (ec) throw Error(Errc::io, "cannot create infofile root " + config_.root.string() + ": " + ec.message());
  if (config_.shared_key.empty()) throw Error(Errc::invalid_argument, "tracker needs a shared key");
  files_created_ = count_infofiles(config_.root);
}

Tracker::~Tracker() { stop(); }

fs::path Tracker::infofile_path(const std::string& path) const { return config_.root / meta::normalize_path(path); }

std::shared_ptr<std::mutex> Tracker::path_lock(const std::string& normalized) {
  std::lock_guard lock(locks_mutex_);
  auto& slot = path_locks_[normalized];
  if (!slot) slot = std::make_shared<std::mutex>();
  return slot;
}

std::vector<Candidate> Tracker::alive_candidates() const {
  std::vector<Candidate> out;
  for (const auto& v : peers_.snapshot()) {
    if (v.status != PeerStatus::alive) continue;
    out.push_back(Candidate{v.endpoint, v.last.addr, v.last.port, v.last.bytes_available});
  }
  // snapshot() iterates a std::map, so the order is already deterministic.
  return out;
}

std::function<bool(std::uint16_t)> Tracker::liveness_for(const meta::FileInfo& info) const {
  std::map<std::uint16_t, bool> alive;
  for (const auto& p : info.peerlist) {
    alive[p.peer_id] = peers_.status(net::endpoint(p.addr, p.port)) == PeerStatus::alive;
  }
  return [alive = std::move(alive)](std::uint16_t id) {
    auto it = alive.find(id);
    return it != alive.end() && it->second;
  };
}

std::vector<std::uint16_t> Tracker::failed_peers(const meta::FileInfo& info) const {
  std::vector<std::uint16_t> failed;
  for (const auto& p : info.peerlist) {
    if (peers_.status(net::endpoint(p.addr, p.port)) == PeerStatus::failed) failed.push_back(p.peer_id);
  }
  return failed;
}

std::vector<std::uint8_t> Tracker::issue_cert(const std::string& file_id, const std::string& client_id) const {
  return meta::issue_certificate(config_.shared_key, file_id, client_id,
                                 meta::unix_now() + static_cast<std::uint64_t>(config_.cert_lifetime.count()));
}

void Tracker::verify_client(const json& body, const std::string& file_id) const {
  auto client_id = body.value("client_id", std::string());
  auto cert = from_hex(body.value("cert", std::string()));
  if (!meta::verify_certificate(config_.shared_key, file_id, client_id, cert, meta::unix_now())) {
    throw Error(Errc::auth, "invalid certificate for file " + file_id);
  }
}

CreateResult Tracker::create_file(const std::string& path, const meta::FtClass& ft, std::uint64_t est_size,
                                  const std::string& client_id, std::uint64_t quota_bytes) {
  std::string normalized = meta::normalize_path(path);
  auto lock = path_lock(normalized);
  std::lock_guard guard(*lock);

  fs::path location = config_.root / normalized;
  std::error_code ec;
  if (fs::exists(location, ec)) throw Error(Errc::already_exists, "file " + normalized + " already exists");

  std::vector<Candidate> chosen;
  {
    std::lock_guard rng_guard(rng_mutex_);
    chosen = schedule_peers(est_size, alive_candidates(), ft.copies, config_.target_bytes_per_peer, rng_);
  }
  meta::FileInfo info;
  info.path = normalized;
  info.file_id = meta::file_id_for(normalized);
  info.ft = ft;
  info.est_size = est_size;
  info.quota_bytes = quota_bytes;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    info.peerlist.push_back(meta::PeerInfo{static_cast<std::uint16_t>(i), chosen[i].addr, chosen[i].port});
  }
  meta::Infofile::create(location, info);
  ++files_created_;
  spdlog::info("created {} class {} on {} peers", normalized, ft.name(), info.peerlist.size());
  return CreateResult{info, issue_cert(info.file_id, client_id)};
}

OpenResult Tracker::open_file(const std::string& path, const std::string& client_id) {
  auto db = meta::Infofile::open(infofile_path(path), meta::Infofile::Mode::read_only);
  OpenResult r;
  r.info = db.info();
  r.failed = failed_peers(r.info);
  r.cert = issue_cert(r.info.file_id, client_id);
  return r;
}

std::size_t Tracker::commit_records(const std::string& path, const std::vector<meta::RecordMeta>& batch) {
  if (batch.empty()) return 0;
  std::string normalized = meta::normalize_path(path);
  auto lock = path_lock(normalized);
  std::lock_guard guard(*lock);
  auto db = meta::Infofile::open(config_.root / normalized, meta::Infofile::Mode::read_write);
  auto info = db.info();
  std::size_t n = db.commit(batch, liveness_for(info));
  ++commit_transactions_;
  return n;
}

std::size_t Tracker::delete_records(const std::string& path, const std::vector<std::string>& names) {
  if (names.empty()) return 0;
  std::string normalized = meta::normalize_path(path);
  auto lock = path_lock(normalized);
  std::lock_guard guard(*lock);
  auto db = meta::Infofile::open(config_.root / normalized, meta::Infofile::Mode::read_write);
  return db.remove(names);
}

void Tracker::handle_announce(const json& body) {
  const json& payload = body.at("payload");
  auto mac = from_hex(body.at("hmac").get<std::string>());
  auto expected = hmac_sha256(config_.shared_key, payload.dump());
  if (!constant_time_equal(mac, expected)) throw Error(Errc::auth, "announce signature rejected");
  peers_.announce(AnnouncePayload::from_json(payload));
}

bool Tracker::report_failure(const std::string& path, std::uint16_t peer_id) {
  auto db = meta::Infofile::open(infofile_path(path), meta::Infofile::Mode::read_only);
  for (const auto& p : db.info().peerlist) {
    if (p.peer_id == peer_id) {
      spdlog::warn("client reported peer {} ({}) failed", peer_id, net::endpoint(p.addr, p.port));
      return peers_.report_failure(net::endpoint(p.addr, p.port));
    }
  }
  throw Error(Errc::not_found, "peer " + std::to_string(peer_id) + " not in peerlist of " + path);
}

json Tracker::status() const {
  std::uint64_t alive = 0;
  std::uint64_t failed = 0;
  std::uint64_t total = 0;
  std::uint64_t available = 0;
  json peers = json::array();
  for (const auto& v : peers_.snapshot()) {
    bool ok = v.status == PeerStatus::alive;
    if (ok) {
      ++alive;
      total += v.last.bytes_used + v.last.bytes_available;
      available += v.last.bytes_available;
    } else {
      ++failed;
    }
    json p = v.last.to_json();
    p["endpoint"] = v.endpoint;
    p["status"] = ok ? "alive" : "failed";
    p["seconds_since_announce"] = v.seconds_since_announce;
    peers.push_back(std::move(p));
  }
  return json{{"alive_peers", alive},
              {"failed_peers", failed},
              {"files_created", files_created_.load()},
              {"total_bytes", total},
              {"available_bytes", available},
              {"commit_transactions", commit_transactions_.load()},
              {"peers", std::move(peers)}};
}

void Tracker::install_routes() {
  auto& s = *server_;
  s.Get("/", [this](const httplib::Request&, httplib::Response& res) { guarded(res, [&] { return status(); }); });

  s.Post("/create", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto body = json::parse(req.body);
      auto result = create_file(body.at("path").get<std::string>(),
                                meta::FtClass::parse(body.value("ft_class", std::string("x2"))),
                                body.value("est_size", std::uint64_t{0}), body.value("client_id", std::string()),
                                body.value("quota_bytes", std::uint64_t{0}));
      json out = file_json(result.info);
      out["cert"] = to_hex(result.cert);
      out["failed"] = json::array();
      return out;
    });
  });

  s.Get("/open", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto result = open_file(req.get_param_value("path"), req.get_param_value("client_id"));
      json out = file_json(result.info);
      out["cert"] = to_hex(result.cert);
      out["failed"] = result.failed;
      return out;
    });
  });

  auto commit_handler = [this](const std::string& path, const json& body) {
    auto db = meta::Infofile::open(infofile_path(path), meta::Infofile::Mode::read_only);
    verify_client(body, db.info().file_id);
    return json{{"committed", commit_records(path, parse_entries(body.at("entries")))}};
  };
  auto delete_handler = [this](const std::string& path, const json& body) {
    auto db = meta::Infofile::open(infofile_path(path), meta::Infofile::Mode::read_only);
    verify_client(body, db.info().file_id);
    return json{{"deleted", delete_records(path, body.at("names").get<std::vector<std::string>>())}};
  };

  s.Post("/commit", [commit_handler](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto body = json::parse(req.body);
      return commit_handler(body.at("path").get<std::string>(), body);
    });
  });
  s.Post("/delete", [delete_handler](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto body = json::parse(req.body);
      return delete_handler(body.at("path").get<std::string>(), body);
    });
  });
  // Per-file tracker endpoints handed out by open/create.
  s.Post(R"(/files/([^/]+)/commit)", [commit_handler](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      return commit_handler(meta::path_for_file_id(req.matches[1]), json::parse(req.body));
    });
  });
  s.Post(R"(/files/([^/]+)/delete)", [delete_handler](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      return delete_handler(meta::path_for_file_id(req.matches[1]), json::parse(req.body));
    });
  });

  s.Post("/announce", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      handle_announce(json::parse(req.body));
      return json{{"ok", true}};
    });
  });
  s.Post("/report_failure", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto body = json::parse(req.body);
      bool known = report_failure(body.at("path").get<std::string>(), body.at("peer_id").get<std::uint16_t>());
      return json{{"ok", known}};
    });
  });
}

std::uint16_t Tracker::start() {
  server_ = std::make_unique<httplib::Server>();
  // Each keep-alive connection pins a worker thread; the default pool of
  // eight lets a handful of idle clients starve peer announces.
  server_->new_task_queue = [] { return new httplib::ThreadPool(256); };
  server_->set_keep_alive_timeout(2);
  install_routes();
  int port = config_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(config_.bind_addr);
  } else if (!server_->bind_to_port(config_.bind_addr, port)) {
    port = -1;
  }
  if (port <= 0) throw Error(Errc::io, "tracker cannot bind " + net::endpoint(config_.bind_addr, config_.port));
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  spdlog::info("tracker listening on {}:{}, root {}", config_.bind_addr, port, config_.root.string());
  return static_cast<std::uint16_t>(port);
}

void Tracker::stop() {
  if (server_) server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
}

}  // namespace storetorrent::tracker
