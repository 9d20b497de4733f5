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

#include "storetorrent/storetorrent.h"

#include <signal.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include <spdlog/spdlog.h>

#include "availability/availability.hpp"
#include "client/client.hpp"
#include "common/crypto.hpp"
#include "common/error.hpp"
#include "common/http.hpp"
#include "harness/bench.hpp"
#include "harness/cluster.hpp"
#include "peer/peer_daemon.hpp"
#include "store/peer_store.hpp"
#include "tracker/tracker.hpp"

using namespace storetorrent;
using nlohmann::json;
namespace fs = std::filesystem;

struct st_config {
  client::ClientConfig c;
};

struct st_file {
  client::FileHandle h;
};

struct st_cluster {
  harness::Cluster c;
};

namespace {

thread_local std::string last_error;

st_status fail(st_status s, const std::string& msg) {
  last_error = msg;
  return s;
}

// Runs fn, translating exceptions into a status and the thread's last error.
template <typename Fn>
st_status guarded(Fn&& fn) {
  try {
    last_error.clear();
    fn();
    return ST_OK;
  } catch (const Error& e) {
    return fail(static_cast<st_status>(e.code()), e.what());
  } catch (const json::exception& e) {
    return fail(ST_ERR_INVALID_ARGUMENT, std::string("bad JSON: ") + e.what());
  } catch (const std::bad_alloc&) {
    return fail(ST_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(ST_ERR_INTERNAL, e.what());
  }
}

char* dup_string(const std::string& s) {
  auto* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.data(), s.size());
  p[s.size()] = '\0';
  return p;
}

void require(const void* p, const char* what) {
  if (!p) throw Error(Errc::invalid_argument, std::string(what) + " must not be null");
}

std::uint64_t parse_u64(const char* key, const std::string& v) {
  try {
    std::size_t used = 0;
    auto n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw Error(Errc::invalid_argument, std::string(key) + ": not a number: " + v);
  }
}

json meta_json(const meta::RecordMeta& r) {
  return json{{"name", r.name}, {"size", r.size}, {"crc", r.crc}, {"locations", r.locations}};
}

json peer_json(const meta::PeerInfo& p) { return json{{"peer_id", p.peer_id}, {"addr", p.addr}, {"port", p.port}}; }

std::chrono::milliseconds ms(const json& j, const char* key, std::chrono::milliseconds def) {
  return j.contains(key) ? std::chrono::milliseconds(j.at(key).get<long>()) : def;
}

void wait_for_stop_signal() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGTERM);
  sigaddset(&set, SIGINT);
  int sig = 0;
  while (sigwait(&set, &sig) == 0) {
    if (sig == SIGTERM || sig == SIGINT) return;
  }
}

harness::ClusterSpec cluster_spec(const json& j) {
  harness::ClusterSpec s;
  s.peers = j.value("peers", s.peers);
  s.base = j.at("base").get<std::string>();
  s.port_base = j.value("port_base", s.port_base);
  s.port_span = j.value("port_span", s.port_span);
  s.announce_interval = ms(j, "announce_ms", s.announce_interval);
  s.k_missed = j.value("k_missed", s.k_missed);
  s.durable_write = j.value("durable", s.durable_write);
  s.key_seed = j.value("key_seed", s.key_seed);
  s.seed = j.value("seed", s.seed);
  s.peer_capacity = j.value("peer_capacity", s.peer_capacity);
  s.target_bytes_per_peer = j.value("target_bytes_per_peer", s.target_bytes_per_peer);
  s.scrub_interval = ms(j, "scrub_interval_ms", s.scrub_interval);
  s.scrub_min_age = ms(j, "scrub_min_age_ms", s.scrub_min_age);
  if (j.contains("st_binary")) s.st_binary = j.at("st_binary").get<std::string>();
  s.startup_timeout = ms(j, "startup_timeout_ms", s.startup_timeout);
  return s;
}

}  // namespace

extern "C" {

const char* st_last_error(void) { return last_error.c_str(); }

const char* st_status_name(st_status status) {
  if (status == ST_OK) return "ok";
  static thread_local std::string name;
  name = std::string(errc_name(static_cast<Errc>(status)));
  return name.c_str();
}

void st_free(void* p) { std::free(p); }

st_status st_set_log_level(const char* level) {
  return guarded([&] {
    require(level, "level");
    auto l = spdlog::level::from_str(level);
    if (l == spdlog::level::off && std::strcmp(level, "off") != 0) {
      throw Error(Errc::invalid_argument, std::string("unknown log level ") + level);
    }
    spdlog::set_level(l);
  });
}

st_status st_config_new(const char* tracker_url, const char* meta_root, st_config** out) {
  return guarded([&] {
    require(out, "out");
    auto c = std::make_unique<st_config>();
    if (tracker_url) c->c.tracker_url = tracker_url;
    if (meta_root) c->c.meta_root = meta_root;
    *out = c.release();
  });
}

st_status st_config_set(st_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    std::string k = key;
    std::string v = value;
    auto& c = config->c;
    if (k == "client_id") {
      c.client_id = v;
    } else if (k == "op_timeout_ms") {
      c.op_timeout = std::chrono::milliseconds(parse_u64(key, v));
    } else if (k == "tracker_timeout_ms") {
      c.tracker_timeout = std::chrono::milliseconds(parse_u64(key, v));
    } else if (k == "pipeline_depth") {
      c.pipeline_depth = parse_u64(key, v);
    } else if (k == "group_commit_size") {
      c.group_commit_size = parse_u64(key, v);
    } else if (k == "blocksize") {
      c.blocksize = parse_u64(key, v);
    } else if (k == "commit_linger_ms") {
      c.commit_linger = std::chrono::milliseconds(parse_u64(key, v));
    } else if (k == "retry_budget") {
      c.retry_budget = static_cast<int>(parse_u64(key, v));
    } else if (k == "seed") {
      c.seed = parse_u64(key, v);
    } else if (k == "local_peer") {
      auto colon = v.rfind(':');
      if (colon == std::string::npos) throw Error(Errc::invalid_argument, "local_peer must be host:port");
      c.local_peer_addr = v.substr(0, colon);
      c.local_peer_port = static_cast<std::uint16_t>(parse_u64(key, v.substr(colon + 1)));
    } else if (k == "tracker") {
      c.tracker_url = v;
    } else if (k == "meta_root") {
      c.meta_root = v;
    } else {
      throw Error(Errc::invalid_argument, "unknown client setting " + k);
    }
  });
}

void st_config_free(st_config* config) { delete config; }

st_status st_file_create(const st_config* config, const char* path, const char* ft, uint64_t est_size,
                         uint64_t quota_bytes, st_file** out) {
  return guarded([&] {
    require(config, "config");
    require(path, "path");
    require(out, "out");
    auto h = client::FileHandle::create(config->c, path, meta::FtClass::parse(ft ? ft : "x2"), est_size, quota_bytes);
    *out = new st_file{std::move(h)};
  });
}

st_status st_file_open(const st_config* config, const char* path, st_file** out) {
  return guarded([&] {
    require(config, "config");
    require(path, "path");
    require(out, "out");
    *out = new st_file{client::FileHandle::open(config->c, path)};
  });
}

st_status st_file_close(st_file* file) {
  if (!file) return ST_OK;
  std::unique_ptr<st_file> owned(file);
  return guarded([&] { owned->h.close(); });
}

st_status st_file_put(st_file* file, const char* name, const void* data, size_t len) {
  return guarded([&] {
    require(file, "file");
    require(name, "name");
    if (len) require(data, "data");
    const auto* p = static_cast<const std::uint8_t*>(data);
    file->h.put(client::Bytes(p, p + len), name);
  });
}

st_status st_file_queue_put(st_file* file, const char* name, const void* data, size_t len, int* accepted) {
  return guarded([&] {
    require(file, "file");
    require(name, "name");
    require(accepted, "accepted");
    if (len) require(data, "data");
    const auto* p = static_cast<const std::uint8_t*>(data);
    *accepted = file->h.queue_put(client::Bytes(p, p + len), name) ? 1 : 0;
  });
}

st_status st_file_poll(st_file* file, int wait_ms, char** events_json) {
  return guarded([&] {
    require(file, "file");
    require(events_json, "events_json");
    auto events = file->h.poll(std::chrono::milliseconds(std::max(0, wait_ms)));
    json out = json::array();
    for (const auto& e : events) {
      bool ok = e.type == client::Event::Type::committed;
      out.push_back(json{{"name", e.name},
                         {"committed", ok},
                         {"code", ok ? 0 : static_cast<int>(e.code)},
                         {"message", e.message}});
    }
    *events_json = dup_string(out.dump());
  });
}

st_status st_file_flush(st_file* file) {
  return guarded([&] {
    require(file, "file");
    file->h.flush();
  });
}

st_status st_file_get(st_file* file, const char* name, void** data, size_t* len) {
  return guarded([&] {
    require(file, "file");
    require(name, "name");
    require(data, "data");
    require(len, "len");
    auto bytes = file->h.get(name);
    auto* p = std::malloc(bytes.empty() ? 1 : bytes.size());
    if (!p) throw std::bad_alloc();
    if (!bytes.empty()) std::memcpy(p, bytes.data(), bytes.size());
    *data = p;
    *len = bytes.size();
  });
}

st_status st_file_get_local(st_file* file, size_t local_rank, size_t local_size, char** entries_json) {
  return guarded([&] {
    require(file, "file");
    require(entries_json, "entries_json");
    json out = json::array();
    for (const auto& e : file->h.get_local(local_rank, local_size)) {
      out.push_back(json{{"name", e.name}, {"path", e.path}});
    }
    *entries_json = dup_string(out.dump());
  });
}

st_status st_file_remove(st_file* file, const char* name, int* deferred) {
  return guarded([&] {
    require(file, "file");
    require(name, "name");
    auto s = file->h.remove(name);
    if (deferred) *deferred = s == client::DeleteStatus::deferred ? 1 : 0;
  });
}

st_status st_file_rebalance(st_file* file, size_t* rewritten) {
  return guarded([&] {
    require(file, "file");
    auto n = file->h.rebalance();
    if (rewritten) *rewritten = n;
  });
}

st_status st_file_info(st_file* file, char** info_json) {
  return guarded([&] {
    require(file, "file");
    require(info_json, "info_json");
    const auto& info = file->h.info();
    json peers = json::array();
    for (const auto& p : info.peerlist) peers.push_back(peer_json(p));
    json out{{"path", info.path},
             {"file_id", info.file_id},
             {"ft", info.ft.name()},
             {"est_size", info.est_size},
             {"quota_bytes", info.quota_bytes},
             {"quota_used", info.quota_used},
             {"peerlist", peers},
             {"failed", file->h.failed_peers()},
             {"writable", file->h.writable()},
             {"records", file->h.records().size()}};
    *info_json = dup_string(out.dump());
  });
}

st_status st_file_records(st_file* file, char** records_json) {
  return guarded([&] {
    require(file, "file");
    require(records_json, "records_json");
    json out = json::array();
    for (const auto& r : file->h.records()) out.push_back(meta_json(r));
    *records_json = dup_string(out.dump());
  });
}

st_status st_file_stat(st_file* file, const char* name, char** record_json) {
  return guarded([&] {
    require(file, "file");
    require(name, "name");
    require(record_json, "record_json");
    auto r = file->h.lookup(name);
    if (!r) throw Error(Errc::not_found, std::string("no committed record named '") + name + "'");
    *record_json = dup_string(meta_json(*r).dump());
  });
}

st_status st_tracker_status(const char* tracker_url, char** status_json) {
  return guarded([&] {
    require(tracker_url, "tracker_url");
    require(status_json, "status_json");
    http::JsonClient c(tracker_url, std::chrono::milliseconds(5000));
    *status_json = dup_string(c.get("/").dump());
  });
}

st_status st_run_tracker(const char* config_json) {
  return guarded([&] {
    require(config_json, "config_json");
    auto j = json::parse(config_json);
    tracker::TrackerConfig c;
    c.root = j.at("root").get<std::string>();
    c.bind_addr = j.value("bind", c.bind_addr);
    c.port = j.value("port", c.port);
    if (j.contains("key_file")) c.shared_key = load_shared_key(j.at("key_file").get<std::string>());
    c.announce_interval = ms(j, "announce_ms", c.announce_interval);
    c.k_missed = j.value("k_missed", c.k_missed);
    c.seed = j.value("seed", c.seed);
    c.target_bytes_per_peer = j.value("target_bytes", c.target_bytes_per_peer);
    fs::create_directories(c.root);
    peer::block_daemon_signals();
    tracker::Tracker t(c);
    auto port = t.start();
    spdlog::info("tracker listening on {}:{}", c.bind_addr, port);
    wait_for_stop_signal();
    t.stop();
  });
}

st_status st_run_peer(const char* config_json) {
  return guarded([&] {
    require(config_json, "config_json");
    auto j = json::parse(config_json);
    peer::PeerConfig c;
    c.base = j.at("base").get<std::string>();
    c.bind_addr = j.value("bind", c.bind_addr);
    c.advertise_addr = j.value("advertise", c.advertise_addr);
    c.port = j.value("port", c.port);
    c.tracker_url = j.value("tracker", std::string());
    if (j.contains("key_file")) c.shared_key = load_shared_key(j.at("key_file").get<std::string>());
    if (j.contains("meta_root")) c.meta_root = j.at("meta_root").get<std::string>();
    c.announce_interval = ms(j, "announce_ms", c.announce_interval);
    c.capacity = j.value("capacity", c.capacity);
    c.node_id = j.value("node_id", std::string());
    c.scrub_interval = ms(j, "scrub_interval_ms", c.scrub_interval);
    c.scrub_min_age = ms(j, "scrub_min_age_ms", c.scrub_min_age);
    c.durable_write = j.value("durable", true);
    peer::block_daemon_signals();
    peer::PeerDaemon d(c);
    auto port = d.start();
    spdlog::info("peer {} listening on {}:{}", c.node_id, c.bind_addr, port);
    peer::run_until_signal(d);
  });
}

st_status st_scrub_store(const char* peer_base, const char* meta_root, const char* path, int64_t min_age_ms,
                         size_t* removed) {
  return guarded([&] {
    require(peer_base, "peer_base");
    require(meta_root, "meta_root");
    store::PeerStore store(store::StoreOptions{peer_base, false, {}});
    std::vector<std::string> ids;
    if (path) {
      ids.push_back(meta::file_id_for(meta::normalize_path(path)));
    } else {
      ids = store.file_ids();
    }
    std::size_t n = 0;
    for (const auto& id : ids) {
      auto location = fs::path(meta_root) / meta::path_for_file_id(id);
      if (!fs::exists(location)) throw Error(Errc::not_found, "no infofile at " + location.string());
      auto db = meta::Infofile::open(location, meta::Infofile::Mode::read_only);
      n += store
               .scrub(
                   id, [&](const std::string& name) { return db.lookup(name).has_value(); },
                   std::chrono::milliseconds(min_age_ms))
               .size();
    }
    if (removed) *removed = n;
  });
}

st_status st_availability_paper(int n, int copies, int g, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = availability::unavailable_fraction_paper(n, copies, g);
  });
}

st_status st_availability_worked_case(int n, int copies, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = availability::paper_worked_case(n, copies);
  });
}

st_status st_availability_exact(int n, int copies, int c, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = availability::unavailable_fraction_exact(n, copies, c);
  });
}

st_status st_availability_raid1(int n, int stripe, int c, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = availability::raid1_stripe_unavailable(n, stripe, c);
  });
}

st_status st_availability_simulate(const char* model_json, char** result_json) {
  return guarded([&] {
    require(model_json, "model_json");
    require(result_json, "result_json");
    auto j = json::parse(model_json);
    availability::PlacementModel m;
    m.n = j.value("n", m.n);
    m.copies = j.value("copies", m.copies);
    m.c = j.value("c", m.c);
    m.records = j.value("records", m.records);
    m.seed = j.value("seed", m.seed);
    m.workers = j.value("workers", m.workers);
    m.failed = j.value("failed", std::vector<int>{});
    auto r = availability::simulate_unavailability(m);
    *result_json = dup_string(json{{"fraction", r.fraction},
                                   {"half_width", r.half_width},
                                   {"unavailable", r.unavailable},
                                   {"records", r.records}}
                                  .dump());
  });
}

st_status st_availability_csv(const char* rows_json, uint64_t records, uint64_t seed, unsigned workers, char** csv) {
  return guarded([&] {
    require(rows_json, "rows_json");
    require(csv, "csv");
    std::vector<availability::CsvRow> rows;
    for (const auto& r : json::parse(rows_json)) {
      rows.push_back({r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>()});
    }
    *csv = dup_string(availability::availability_csv(rows, records, seed, workers));
  });
}

st_status st_cluster_spawn(const char* spec_json, st_cluster** out) {
  return guarded([&] {
    require(spec_json, "spec_json");
    require(out, "out");
    *out = new st_cluster{harness::Cluster::spawn(cluster_spec(json::parse(spec_json)))};
  });
}

st_status st_cluster_attach(const char* base, st_cluster** out) {
  return guarded([&] {
    require(base, "base");
    require(out, "out");
    *out = new st_cluster{harness::Cluster::attach(base)};
  });
}

void st_cluster_free(st_cluster* cluster) {
  try {
    delete cluster;
  } catch (...) {
  }
}

st_status st_cluster_detach(st_cluster* cluster) {
  return guarded([&] {
    require(cluster, "cluster");
    cluster->c.detach();
  });
}

st_status st_cluster_shutdown(st_cluster* cluster) {
  return guarded([&] {
    require(cluster, "cluster");
    cluster->c.shutdown();
  });
}

st_status st_cluster_info(st_cluster* cluster, char** info_json) {
  return guarded([&] {
    require(cluster, "cluster");
    require(info_json, "info_json");
    const auto& c = cluster->c;
    json peers = json::array();
    for (std::size_t i = 0; i < c.peers().size(); ++i) {
      const auto& p = c.peers()[i];
      peers.push_back(json{{"index", i},
                           {"node_id", p.node_id},
                           {"pid", p.pid},
                           {"port", p.port},
                           {"base", p.base.string()},
                           {"running", p.running},
                           {"stopped", p.stopped}});
    }
    json out{{"base", c.spec().base.string()},
             {"tracker", c.tracker_url()},
             {"tracker_pid", c.tracker().pid},
             {"meta_root", c.meta_root().string()},
             {"key_file", c.key_file().string()},
             {"peers", peers}};
    *info_json = dup_string(out.dump());
  });
}

st_status st_cluster_status(st_cluster* cluster, char** status_json) {
  return guarded([&] {
    require(cluster, "cluster");
    require(status_json, "status_json");
    *status_json = dup_string(cluster->c.status().dump());
  });
}

st_status st_cluster_fault(st_cluster* cluster, const char* action_json) {
  return guarded([&] {
    require(cluster, "cluster");
    require(action_json, "action_json");
    auto j = json::parse(action_json);
    harness::FaultAction a;
    a.peer = j.at("peer").get<std::size_t>();
    a.kind = harness::parse_fault_kind(j.at("kind").get<std::string>());
    a.path = j.value("path", std::string());
    a.name = j.value("name", std::string());
    cluster->c.inject(a);
  });
}

st_status st_cluster_expand(st_cluster* cluster, size_t n, char** added_json) {
  return guarded([&] {
    require(cluster, "cluster");
    auto added = cluster->c.expand(n);
    if (added_json) *added_json = dup_string(json(added).dump());
  });
}

st_status st_cluster_scrub(st_cluster* cluster, size_t* signalled) {
  return guarded([&] {
    require(cluster, "cluster");
    auto n = cluster->c.trigger_scrub();
    if (signalled) *signalled = n;
  });
}

st_status st_cluster_bench(st_cluster* cluster, const char* kind, const char* spec_json, char** report_json) {
  return guarded([&] {
    require(cluster, "cluster");
    require(kind, "kind");
    require(report_json, "report_json");
    auto j = json::parse(spec_json ? spec_json : "{}");
    std::string k = kind;
    json report;
    if (k == "write") {
      harness::WriteBenchSpec s;
      s.path = j.value("path", s.path);
      s.clients = j.value("clients", s.clients);
      s.record_size = j.value("record_size", s.record_size);
      s.total_bytes = j.value("total_bytes", s.total_bytes);
      s.pipeline_depth = j.value("pipeline_depth", s.pipeline_depth);
      s.group_commit_size = j.value("group_commit_size", s.group_commit_size);
      s.ft = j.value("ft", s.ft);
      s.seed = j.value("seed", s.seed);
      s.blocking = j.value("blocking", s.blocking);
      s.verify = j.value("verify", s.verify);
      report = harness::bench_write(cluster->c, s);
    } else if (k == "read") {
      harness::ReadBenchSpec s;
      s.path = j.value("path", s.path);
      s.clients = j.value("clients", s.clients);
      report = harness::bench_read(cluster->c, s);
    } else if (k == "get_local") {
      harness::LocalBenchSpec s;
      s.path = j.value("path", s.path);
      s.clients_per_node = j.value("clients_per_node", s.clients_per_node);
      report = harness::bench_get_local(cluster->c, s);
    } else {
      throw Error(Errc::invalid_argument, "unknown benchmark " + k);
    }
    *report_json = dup_string(report.dump());
  });
}

st_status st_cluster_config(st_cluster* cluster, long local_peer, st_config** out) {
  return guarded([&] {
    require(cluster, "cluster");
    require(out, "out");
    std::optional<std::size_t> local;
    if (local_peer >= 0) local = static_cast<std::size_t>(local_peer);
    *out = new st_config{cluster->c.client_config(local)};
  });
}

int st_bench_worker_main(int in_fd, int out_fd) { return harness::bench_worker_main(in_fd, out_fd); }

}  // extern "C"
