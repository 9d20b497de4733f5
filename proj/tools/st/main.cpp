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

// st: command-line front end for StoreTorrent. Everything goes through the C
// API in storetorrent.h.

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "storetorrent/storetorrent.h"

using nlohmann::json;

namespace {

struct Failure {
  st_status status;
  std::string message;
};

void check(st_status s) {
  if (s != ST_OK) throw Failure{s, st_last_error()};
}

// Takes ownership of a string returned by the C API.
std::string take(char* p) {
  std::string s = p ? p : "";
  st_free(p);
  return s;
}

json take_json(char* p) { return json::parse(take(p)); }

struct ConfigHandle {
  st_config* p = nullptr;
  ~ConfigHandle() { st_config_free(p); }
};

struct FileHandle {
  st_file* p = nullptr;
  ~FileHandle() {
    if (p) st_file_close(p);
  }
  st_status close() {
    auto s = st_file_close(p);
    p = nullptr;
    return s;
  }
};

struct ClusterHandle {
  st_cluster* p = nullptr;
  ~ClusterHandle() { st_cluster_free(p); }
};

// Settings resolved from the config file, then the environment, then flags.
struct Settings {
  std::string config_file;
  std::string tracker;
  std::string meta_root;
  std::string key_file;
  std::string cluster;
  std::map<std::string, std::string> client;  // passed to st_config_set
  bool json_out = false;
  std::string log_level = "warn";
};

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Failure{ST_ERR_NOT_FOUND, "cannot read config file " + path};
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Failure{ST_ERR_INVALID_ARGUMENT, path + ":" + std::to_string(lineno) + ": expected key = value"};
    }
    auto value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    out[trim(line.substr(0, eq))] = value;
  }
  return out;
}

void resolve(Settings& s, const Settings& flags) {
  std::string file = flags.config_file;
  if (file.empty()) {
    if (const char* env = std::getenv("ST_CONFIG")) file = env;
  }
  if (!file.empty()) {
    for (auto& [k, v] : read_config_file(file)) {
      if (k == "tracker") {
        s.tracker = v;
      } else if (k == "meta_root") {
        s.meta_root = v;
      } else if (k == "key_file") {
        s.key_file = v;
      } else if (k == "cluster") {
        s.cluster = v;
      } else {
        s.client[k] = v;
      }
    }
  }
  if (const char* env = std::getenv("ST_TRACKER_URL")) s.tracker = env;
  if (const char* env = std::getenv("ST_KEY_FILE")) s.key_file = env;
  if (const char* env = std::getenv("ST_META_ROOT")) s.meta_root = env;
  if (!flags.tracker.empty()) s.tracker = flags.tracker;
  if (!flags.meta_root.empty()) s.meta_root = flags.meta_root;
  if (!flags.key_file.empty()) s.key_file = flags.key_file;
  if (!flags.cluster.empty()) s.cluster = flags.cluster;
  s.json_out = flags.json_out;
  s.log_level = flags.log_level;
  if (!s.cluster.empty() && (s.tracker.empty() || s.meta_root.empty())) {
    ClusterHandle c;
    check(st_cluster_attach(s.cluster.c_str(), &c.p));
    char* info = nullptr;
    check(st_cluster_info(c.p, &info));
    auto j = take_json(info);
    if (s.tracker.empty()) s.tracker = j.at("tracker").get<std::string>();
    if (s.meta_root.empty()) s.meta_root = j.at("meta_root").get<std::string>();
  }
}

void client_config(const Settings& s, ConfigHandle& out) {
  if (s.tracker.empty()) throw Failure{ST_ERR_INVALID_ARGUMENT, "no tracker URL (use --tracker or ST_TRACKER_URL)"};
  check(st_config_new(s.tracker.c_str(), s.meta_root.c_str(), &out.p));
  for (const auto& [k, v] : s.client) check(st_config_set(out.p, k.c_str(), v.c_str()));
}

std::string read_all(std::istream& in) { return std::string(std::istreambuf_iterator<char>(in), {}); }

void print(const Settings& s, const json& j, const std::string& text) {
  if (s.json_out) {
    std::cout << j.dump() << "\n";
  } else if (!text.empty()) {
    std::cout << text << (text.back() == '\n' ? "" : "\n");
  }
}

std::string pretty(const json& j) { return j.dump(2); }

std::string locations_text(const json& locs) {
  std::string out;
  for (const auto& l : locs) out += (out.empty() ? "" : ",") + std::to_string(l.get<int>());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"StoreTorrent: a filesystem for many small records"};
  app.require_subcommand(1);
  app.fallthrough();
  Settings flags;
  app.add_option("--config", flags.config_file, "key = value settings file (also ST_CONFIG)");
  app.add_option("--tracker", flags.tracker, "tracker URL (also ST_TRACKER_URL)");
  app.add_option("--meta-root", flags.meta_root, "shared infofile directory (also ST_META_ROOT)");
  app.add_option("--key-file", flags.key_file, "shared key file (also ST_KEY_FILE)");
  app.add_option("--cluster", flags.cluster, "local cluster base directory; supplies tracker and meta root");
  app.add_flag("--json", flags.json_out, "machine-readable output");
  app.add_option("--log-level", flags.log_level, "trace, debug, info, warn, error or off");

  // Daemons.
  auto* tracker = app.add_subcommand("tracker", "run the metadata tracker");
  std::string t_root, t_bind = "127.0.0.1";
  int t_port = 0, t_k = 3;
  long t_announce = 10000;
  std::uint64_t t_seed = 0, t_target = 8ull << 30;
  tracker->add_option("--root", t_root, "infofile directory")->required();
  tracker->add_option("--port", t_port);
  tracker->add_option("--bind", t_bind);
  tracker->add_option("--announce-ms", t_announce, "expected peer announce interval");
  tracker->add_option("--k-missed", t_k, "missed announces before a peer is failed");
  tracker->add_option("--seed", t_seed, "scheduling seed (0 = random)");
  tracker->add_option("--target-bytes", t_target, "bytes per scheduled peer when sizing peerlists");

  auto* peer = app.add_subcommand("peer", "run a storage peer");
  std::string p_base, p_bind = "127.0.0.1", p_adv = "127.0.0.1", p_node;
  int p_port = 0;
  long p_announce = 10000, p_scrub_interval = 24 * 3600 * 1000L, p_scrub_age = 3600 * 1000L;
  std::uint64_t p_capacity = 0;
  bool p_no_durable = false;
  peer->add_option("--base", p_base, "local store directory")->required();
  peer->add_option("--port", p_port);
  peer->add_option("--bind", p_bind);
  peer->add_option("--advertise", p_adv, "address announced to the tracker");
  peer->add_option("--announce-ms", p_announce);
  peer->add_option("--capacity", p_capacity, "reported capacity in bytes (0 = filesystem size)");
  peer->add_option("--node-id", p_node);
  peer->add_option("--scrub-interval-ms", p_scrub_interval);
  peer->add_option("--scrub-min-age-ms", p_scrub_age);
  peer->add_flag("--no-durable", p_no_durable, "skip fsync and cache drop before acknowledging");

  // File operations.
  std::string path, name, file_arg;
  auto* create = app.add_subcommand("create", "create a file");
  std::string ft = "x2";
  std::uint64_t size = 0, quota = 0;
  create->add_option("path", path)->required();
  create->add_option("--ft", ft, "fault tolerant class, x1..x8");
  create->add_option("--size", size, "estimated size in bytes")->required();
  create->add_option("--quota", quota, "quota in bytes (0 = none)");

  auto* put = app.add_subcommand("put", "store a record (contents from FILE or stdin)");
  put->add_option("path", path)->required();
  put->add_option("name", name)->required();
  put->add_option("file", file_arg);

  auto* get = app.add_subcommand("get", "read a record (to FILE or stdout)");
  get->add_option("path", path)->required();
  get->add_option("name", name)->required();
  get->add_option("file", file_arg);

  auto* rm = app.add_subcommand("rm", "delete a record");
  rm->add_option("path", path)->required();
  rm->add_option("name", name)->required();

  auto* ls = app.add_subcommand("ls", "list committed records");
  ls->add_option("path", path)->required();
  bool ls_long = false;
  ls->add_flag("-l,--long", ls_long, "show size, crc and holders");

  auto* stat = app.add_subcommand("stat", "describe a file or one record");
  stat->add_option("path", path)->required();
  stat->add_option("name", name);

  auto* status = app.add_subcommand("status", "tracker and peer status");
  std::string status_url;
  status->add_option("url", status_url);

  auto* scrub = app.add_subcommand("scrub", "remove uncommitted record copies");
  scrub->add_option("path", path);
  std::string scrub_store;
  long scrub_age = 3600 * 1000L;
  scrub->add_option("--store", scrub_store, "scrub this stopped peer's store directly");
  scrub->add_option("--min-age-ms", scrub_age, "with --store: skip copies younger than this");

  auto* rebalance = app.add_subcommand("rebalance", "restore full replication after peer loss");
  rebalance->add_option("path", path)->required();

  auto* get_local = app.add_subcommand("get-local", "list records served by the local peer");
  get_local->add_option("path", path)->required();
  std::string local_peer;
  std::size_t local_rank = 0, local_size = 1;
  get_local->add_option("--peer", local_peer, "local peer host:port")->required();
  get_local->add_option("--rank", local_rank);
  get_local->add_option("--size", local_size);

  auto* avail = app.add_subcommand("availability", "record unavailability under node failures");
  int a_n = 100, a_f = 2, a_c = 2, a_stripe = 0;
  std::uint64_t a_records = 1'000'000, a_seed = 1;
  unsigned a_workers = 1;
  bool a_table = false;
  avail->add_option("-n,--nodes", a_n);
  avail->add_option("-f,--copies", a_f);
  avail->add_option("-c,--failed", a_c);
  avail->add_option("--records", a_records, "Monte Carlo trials (0 skips simulation)");
  avail->add_option("--seed", a_seed);
  avail->add_option("--workers", a_workers);
  avail->add_option("--stripe", a_stripe, "also report raid1-style striping with this stripe width");
  avail->add_flag("--table", a_table, "CSV over a grid of N, F and c");

  // Local cluster harness.
  auto* cluster = app.add_subcommand("cluster", "local test cluster");
  cluster->require_subcommand(1);
  std::string c_base;
  auto* c_spawn = cluster->add_subcommand("spawn", "start a tracker and peers");
  std::size_t c_peers = 4;
  int c_port_base = 0, c_k = 3;
  long c_announce = 500, c_scrub_interval = 24 * 3600 * 1000L, c_scrub_age = 3600 * 1000L;
  std::uint64_t c_seed = 1, c_key_seed = 1, c_target = 1ull << 20;
  bool c_no_durable = false;
  c_spawn->add_option("--base", c_base)->required();
  c_spawn->add_option("--peers", c_peers);
  c_spawn->add_option("--port-base", c_port_base);
  c_spawn->add_option("--announce-ms", c_announce);
  c_spawn->add_option("--k-missed", c_k);
  c_spawn->add_option("--seed", c_seed);
  c_spawn->add_option("--key-seed", c_key_seed);
  c_spawn->add_option("--target-bytes", c_target);
  c_spawn->add_option("--scrub-interval-ms", c_scrub_interval);
  c_spawn->add_option("--scrub-min-age-ms", c_scrub_age);
  c_spawn->add_flag("--no-durable", c_no_durable);

  auto* c_stop = cluster->add_subcommand("stop", "stop every process of a cluster");
  c_stop->add_option("--base", c_base)->required();
  auto* c_status = cluster->add_subcommand("status", "processes and tracker view");
  c_status->add_option("--base", c_base)->required();

  auto* c_fault = cluster->add_subcommand("fault", "inject a fault into one peer");
  std::size_t f_peer = 0;
  std::string f_kind, f_path, f_name;
  c_fault->add_option("--base", c_base)->required();
  c_fault->add_option("--peer", f_peer)->required();
  c_fault->add_option("--kind", f_kind, "kill, hang, resume, drop_connections, disk_corrupt, rejoin_wiped, restart")
      ->required();
  c_fault->add_option("--path", f_path, "disk_corrupt: file path");
  c_fault->add_option("--name", f_name, "disk_corrupt: record name");

  auto* c_expand = cluster->add_subcommand("expand", "add peers");
  std::size_t e_count = 1;
  c_expand->add_option("--base", c_base)->required();
  c_expand->add_option("count", e_count);

  auto* c_scrub = cluster->add_subcommand("scrub", "ask every peer to scrub now");
  c_scrub->add_option("--base", c_base)->required();

  auto* c_bench = cluster->add_subcommand("bench", "run a benchmark");
  std::string b_kind;
  std::string b_path = "bench/write", b_ft = "x2";
  std::size_t b_clients = 1, b_record = 2u << 20, b_depth = 10, b_group = 40;
  std::uint64_t b_total = 64ull << 20, b_seed = 1;
  bool b_blocking = false, b_no_verify = false;
  c_bench->add_option("kind", b_kind, "write, read or get-local")
      ->required()
      ->check(CLI::IsMember({"write", "read", "get-local"}));
  c_bench->add_option("--base", c_base)->required();
  c_bench->add_option("--path", b_path);
  c_bench->add_option("--clients", b_clients, "clients (per node for get-local)");
  c_bench->add_option("--record-size", b_record);
  c_bench->add_option("--total-bytes", b_total);
  c_bench->add_option("--depth", b_depth, "pipeline depth");
  c_bench->add_option("--group-commit", b_group);
  c_bench->add_option("--ft", b_ft);
  c_bench->add_option("--seed", b_seed);
  c_bench->add_flag("--blocking", b_blocking, "use blocking put");
  c_bench->add_flag("--no-verify", b_no_verify, "skip the integrity sweep");

  auto* worker = app.add_subcommand("bench-worker", "benchmark client process (internal)");
  worker->group("");

  CLI11_PARSE(app, argc, argv);

  Settings s;
  try {
    if (worker->parsed()) return st_bench_worker_main(STDIN_FILENO, STDOUT_FILENO);
    check(st_set_log_level(flags.log_level.c_str()));
    resolve(s, flags);

    if (tracker->parsed()) {
      check(st_set_log_level(flags.log_level == "warn" ? "info" : flags.log_level.c_str()));
      json cfg{{"root", t_root},           {"bind", t_bind}, {"port", t_port},
               {"announce_ms", t_announce}, {"k_missed", t_k}, {"seed", t_seed},
               {"target_bytes", t_target}};
      if (!s.key_file.empty()) cfg["key_file"] = s.key_file;
      check(st_run_tracker(cfg.dump().c_str()));
    } else if (peer->parsed()) {
      check(st_set_log_level(flags.log_level == "warn" ? "info" : flags.log_level.c_str()));
      json cfg{{"base", p_base},
               {"bind", p_bind},
               {"advertise", p_adv},
               {"port", p_port},
               {"tracker", s.tracker},
               {"announce_ms", p_announce},
               {"capacity", p_capacity},
               {"node_id", p_node},
               {"scrub_interval_ms", p_scrub_interval},
               {"scrub_min_age_ms", p_scrub_age},
               {"durable", !p_no_durable}};
      if (!s.key_file.empty()) cfg["key_file"] = s.key_file;
      if (!s.meta_root.empty()) cfg["meta_root"] = s.meta_root;
      check(st_run_peer(cfg.dump().c_str()));
    } else if (create->parsed()) {
      ConfigHandle cfg;
      client_config(s, cfg);
      FileHandle f;
      check(st_file_create(cfg.p, path.c_str(), ft.c_str(), size, quota, &f.p));
      char* info = nullptr;
      check(st_file_info(f.p, &info));
      auto j = take_json(info);
      print(s, j, "created " + j.at("path").get<std::string>() + " on " + std::to_string(j.at("peerlist").size()) +
                      " peers");
    } else if (put->parsed()) {
      ConfigHandle cfg;
      client_config(s, cfg);
      std::string data;
      if (file_arg.empty() || file_arg == "-") {
        data = read_all(std::cin);
      } else {
        std::ifstream in(file_arg, std::ios::binary);
        if (!in) throw Failure{ST_ERR_NOT_FOUND, "cannot read " + file_arg};
        data = read_all(in);
      }
      FileHandle f;
      check(st_file_open(cfg.p, path.c_str(), &f.p));
      check(st_file_put(f.p, name.c_str(), data.data(), data.size()));
      check(f.close());
      print(s, json{{"name", name}, {"size", data.size()}}, "");
    } else if (get->parsed()) {
      ConfigHandle cfg;
      client_config(s, cfg);
      FileHandle f;
      check(st_file_open(cfg.p, path.c_str(), &f.p));
      void* data = nullptr;
      std::size_t len = 0;
      check(st_file_get(f.p, name.c_str(), &data, &len));
      std::string bytes(static_cast<char*>(data), len);
      st_free(data);
      if (file_arg.empty() || file_arg == "-") {
        std::cout.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      } else {
        std::ofstream out(file_arg, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Failure{ST_ERR_IO, "cannot write " + file_arg};
      }
    } else if (rm->parsed()) {
      ConfigHandle cfg;
      client_config(s, cfg);
      FileHandle f;
      check(st_file_open(cfg.p, path.c_str(), &f.p));
      int deferred = 0;
      check(st_file_remove(f.p, name.c_str(), &deferred));
      print(s, json{{"name", name}, {"deferred", deferred != 0}},
            deferred ? "removed copies; metadata delete deferred (tracker unreachable)" : "");
    } else if (ls->parsed()) {
      ConfigHandle cfg;
      client_config(s, cfg);
      FileHandle f;
      check(st_file_open(cfg.p, path.c_str(), &f.p));
      char* out = nullptr;
      check(st_file_records(f.p, &out));
      auto records = take_json(out);
      std::ostringstream text;
      for (const auto& r : records) {
        if (ls_long) {
          char crc[16];
          std::snprintf(crc, sizeof(crc), "%08x", r.at("crc").get<unsigned>());
          text << r.at("size").get<std::uint64_t>() << "\t" << crc << "\t" << locations_text(r.at("locations"))
               << "\t";
        }
        text << r.at("name").get<std::string>() << "\n";
      }
      print(s, records, text.str());
    } else if (stat->parsed()) {
      ConfigHandle cfg;
      client_config(s, cfg);
      FileHandle f;
      check(st_file_open(cfg.p, path.c_str(), &f.p));
      char* out = nullptr;
      if (name.empty()) {
        check(st_file_info(f.p, &out));
      } else {
        check(st_file_stat(f.p, name.c_str(), &out));
      }
      auto j = take_json(out);
      print(s, j, pretty(j));
    } else if (status->parsed()) {
      std::string url = status_url.empty() ? s.tracker : status_url;
      if (url.empty()) throw Failure{ST_ERR_INVALID_ARGUMENT, "no tracker URL"};
      char* out = nullptr;
      check(st_tracker_status(url.c_str(), &out));
      auto j = take_json(out);
      std::ostringstream text;
      text << "alive " << j.value("alive_peers", 0) << ", failed " << j.value("failed_peers", 0) << ", files "
           << j.value("files_created", 0) << ", commit transactions " << j.value("commit_transactions", 0) << "\n";
      for (const auto& p : j.value("peers", json::array())) {
        text << "  " << p.value("node_id", std::string()) << "\t" << p.value("endpoint", std::string()) << "\t"
             << p.value("status", std::string()) << "\n";
      }
      print(s, j, text.str());
    } else if (scrub->parsed()) {
      if (!scrub_store.empty()) {
        if (s.meta_root.empty()) throw Failure{ST_ERR_INVALID_ARGUMENT, "--store needs --meta-root"};
        std::size_t removed = 0;
        check(st_scrub_store(scrub_store.c_str(), s.meta_root.c_str(), path.empty() ? nullptr : path.c_str(),
                             scrub_age, &removed));
        print(s, json{{"removed", removed}}, "removed " + std::to_string(removed) + " uncommitted copies");
      } else {
        if (s.cluster.empty()) {
          throw Failure{ST_ERR_INVALID_ARGUMENT, "scrub needs --cluster (running peers) or --store (stopped peer)"};
        }
        ClusterHandle c;
        check(st_cluster_attach(s.cluster.c_str(), &c.p));
        std::size_t n = 0;
        check(st_cluster_scrub(c.p, &n));
        print(s, json{{"signalled", n}}, "scrub requested on " + std::to_string(n) + " peers");
      }
    } else if (rebalance->parsed()) {
      ConfigHandle cfg;
      client_config(s, cfg);
      FileHandle f;
      check(st_file_open(cfg.p, path.c_str(), &f.p));
      std::size_t n = 0;
      check(st_file_rebalance(f.p, &n));
      check(f.close());
      print(s, json{{"rewritten", n}}, "rewrote " + std::to_string(n) + " records");
    } else if (get_local->parsed()) {
      ConfigHandle cfg;
      client_config(s, cfg);
      check(st_config_set(cfg.p, "local_peer", local_peer.c_str()));
      FileHandle f;
      check(st_file_open(cfg.p, path.c_str(), &f.p));
      char* out = nullptr;
      check(st_file_get_local(f.p, local_rank, local_size, &out));
      auto j = take_json(out);
      std::ostringstream text;
      for (const auto& e : j) text << e.at("name").get<std::string>() << "\t" << e.at("path").get<std::string>() << "\n";
      print(s, j, text.str());
    } else if (avail->parsed()) {
      if (a_table) {
        json rows = json::array();
        for (int n : {10, 20, 50, 100}) {
          for (int f : {1, 2, 3}) {
            for (int c : {1, 2, 3, 5}) {
              if (c <= n && f < n) rows.push_back({n, f, c});
            }
          }
        }
        char* csv = nullptr;
        check(st_availability_csv(rows.dump().c_str(), a_records, a_seed, a_workers, &csv));
        std::cout << take(csv);
      } else {
        double exact = 0;
        check(st_availability_exact(a_n, a_f, a_c, &exact));
        json j{{"n", a_n}, {"copies", a_f}, {"c", a_c}, {"exact", exact}};
        double paper = 0;
        if (st_availability_paper(a_n, a_f, a_c, &paper) == ST_OK) j["paper_formula"] = paper;
        if (st_availability_worked_case(a_n, a_f, &paper) == ST_OK) j["worked_case"] = paper;
        if (a_stripe > 0) {
          double r = 0;
          check(st_availability_raid1(a_n, a_stripe, a_c, &r));
          j["raid1_stripe"] = r;
        }
        if (a_records > 0) {
          json model{{"n", a_n}, {"copies", a_f}, {"c", a_c}, {"records", a_records}, {"seed", a_seed},
                     {"workers", a_workers}};
          char* out = nullptr;
          check(st_availability_simulate(model.dump().c_str(), &out));
          j["simulation"] = take_json(out);
        }
        print(s, j, pretty(j));
      }
    } else if (cluster->parsed()) {
      if (c_spawn->parsed()) {
        json spec{{"base", c_base},
                  {"peers", c_peers},
                  {"port_base", c_port_base},
                  {"announce_ms", c_announce},
                  {"k_missed", c_k},
                  {"seed", c_seed},
                  {"key_seed", c_key_seed},
                  {"target_bytes_per_peer", c_target},
                  {"scrub_interval_ms", c_scrub_interval},
                  {"scrub_min_age_ms", c_scrub_age},
                  {"durable", !c_no_durable}};
        ClusterHandle c;
        check(st_cluster_spawn(spec.dump().c_str(), &c.p));
        check(st_cluster_detach(c.p));
        char* out = nullptr;
        check(st_cluster_info(c.p, &out));
        auto j = take_json(out);
        print(s, j, "cluster up: tracker " + j.at("tracker").get<std::string>() + ", " +
                        std::to_string(j.at("peers").size()) + " peers, base " + c_base);
      } else {
        ClusterHandle c;
        check(st_cluster_attach(c_base.c_str(), &c.p));
        if (c_stop->parsed()) {
          check(st_cluster_shutdown(c.p));
          print(s, json{{"stopped", true}}, "cluster stopped");
        } else if (c_status->parsed()) {
          char* info = nullptr;
          char* st = nullptr;
          check(st_cluster_info(c.p, &info));
          check(st_cluster_status(c.p, &st));
          json j{{"cluster", take_json(info)}, {"tracker", take_json(st)}};
          print(s, j, pretty(j));
        } else if (c_fault->parsed()) {
          json action{{"peer", f_peer}, {"kind", f_kind}, {"path", f_path}, {"name", f_name}};
          check(st_cluster_fault(c.p, action.dump().c_str()));
          print(s, action, f_kind + " applied to peer " + std::to_string(f_peer));
        } else if (c_expand->parsed()) {
          char* out = nullptr;
          check(st_cluster_expand(c.p, e_count, &out));
          auto j = take_json(out);
          print(s, j, "added peers " + j.dump());
        } else if (c_scrub->parsed()) {
          std::size_t n = 0;
          check(st_cluster_scrub(c.p, &n));
          print(s, json{{"signalled", n}}, "scrub requested on " + std::to_string(n) + " peers");
        } else if (c_bench->parsed()) {
          json spec{{"path", b_path}};
          std::string kind = b_kind == "get-local" ? "get_local" : b_kind;
          if (kind == "write") {
            spec.update(json{{"clients", b_clients},
                             {"record_size", b_record},
                             {"total_bytes", b_total},
                             {"pipeline_depth", b_depth},
                             {"group_commit_size", b_group},
                             {"ft", b_ft},
                             {"seed", b_seed},
                             {"blocking", b_blocking},
                             {"verify", !b_no_verify}});
          } else if (kind == "read") {
            spec["clients"] = b_clients;
          } else {
            spec["clients_per_node"] = b_clients;
          }
          char* out = nullptr;
          check(st_cluster_bench(c.p, kind.c_str(), spec.dump().c_str(), &out));
          auto j = take_json(out);
          print(s, j, pretty(j));
          if (!j.value("ok", false)) return 1;
        }
      }
    }
  } catch (const Failure& f) {
    if (s.json_out) {
      std::cout << json{{"error", st_status_name(f.status)}, {"message", f.message}}.dump() << "\n";
    }
    std::cerr << "st: " << st_status_name(f.status) << ": " << f.message << "\n";
    return static_cast<int>(f.status);
  } catch (const std::exception& e) {
    std::cerr << "st: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
