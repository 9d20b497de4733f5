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

#include "harness/cluster.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fstream>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "common/crypto.hpp"
#include "common/error.hpp"
#include "common/http.hpp"
#include "common/net.hpp"
#include "store/peer_store.hpp"

extern char** environ;

namespace storetorrent::harness {

using Clock = std::chrono::steady_clock;

namespace {

bool port_free(std::uint16_t port) {
  try {
    net::tcp_listen("127.0.0.1", port);
    return true;
  } catch (const Error&) {
    return false;
  }
}

std::uint16_t pick_port_base(std::uint16_t span, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ static_cast<std::uint64_t>(::getpid()) ^
                      static_cast<std::uint64_t>(Clock::now().time_since_epoch().count()));
  // Stay below the ephemeral range: a connect to a dead peer's port inside it
  // can self-connect or take the port as its source, and the peer then
  // cannot rebind on restart.
  int ephemeral_low = 32768;
  if (std::ifstream range("/proc/sys/net/ipv4/ip_local_port_range"); range) range >> ephemeral_low;
  int low = std::min(10000, ephemeral_low / 2);
  if (ephemeral_low - span <= low) throw Error(Errc::io, "ephemeral port range leaves no room for the cluster");
  std::uniform_int_distribution<int> pick(low, ephemeral_low - span - 1);
  for (int attempt = 0; attempt < 200; ++attempt) {
    auto base = static_cast<std::uint16_t>(pick(rng));
    bool ok = true;
    for (std::uint16_t p = base; p < base + span && ok; ++p) ok = port_free(p);
    if (ok) return base;
  }
  throw Error(Errc::io, "no free port range of " + std::to_string(span) + " ports");
}

json proc_json(const ProcInfo& p) {
  return json{{"pid", p.pid}, {"port", p.port},         {"base", p.base.string()},
              {"node_id", p.node_id}, {"running", p.running}, {"stopped", p.stopped}};
}

ProcInfo proc_from(const json& j) {
  ProcInfo p;
  p.pid = j.at("pid").get<pid_t>();
  p.port = j.at("port").get<std::uint16_t>();
  p.base = j.at("base").get<std::string>();
  p.node_id = j.at("node_id").get<std::string>();
  p.running = j.at("running").get<bool>();
  p.stopped = j.value("stopped", false);
  return p;
}

void stop_process(ProcInfo& p, std::chrono::milliseconds grace) {
  if (p.pid <= 0 || !p.running) return;
  ::kill(p.pid, SIGTERM);
  if (p.stopped) ::kill(p.pid, SIGCONT);
  if (!wait_exit(p.pid, grace)) {
    ::kill(p.pid, SIGKILL);
    wait_exit(p.pid, 2s);
  }
  p.running = false;
  p.stopped = false;
}

}  // namespace

FaultKind parse_fault_kind(const std::string& s) {
  if (s == "kill") return FaultKind::kill;
  if (s == "hang") return FaultKind::hang;
  if (s == "resume") return FaultKind::resume;
  if (s == "drop_connections") return FaultKind::drop_connections;
  if (s == "disk_corrupt") return FaultKind::disk_corrupt;
  if (s == "rejoin_wiped") return FaultKind::rejoin_wiped;
  if (s == "restart") return FaultKind::restart;
  throw Error(Errc::invalid_argument, "unknown fault kind '" + s + "'");
}

std::string fault_kind_name(FaultKind k) {
  switch (k) {
    case FaultKind::kill:
      return "kill";
    case FaultKind::hang:
      return "hang";
    case FaultKind::resume:
      return "resume";
    case FaultKind::drop_connections:
      return "drop_connections";
    case FaultKind::disk_corrupt:
      return "disk_corrupt";
    case FaultKind::rejoin_wiped:
      return "rejoin_wiped";
    case FaultKind::restart:
      return "restart";
  }
  return "?";
}

fs::path self_executable() { return fs::read_symlink("/proc/self/exe"); }

Child spawn_child(const std::vector<std::string>& argv, const fs::path& log, bool pipes, bool new_session) {
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  int in_pipe[2] = {-1, -1};
  int out_pipe[2] = {-1, -1};
  if (pipes) {
    if (::pipe2(in_pipe, O_CLOEXEC) != 0 || ::pipe2(out_pipe, O_CLOEXEC) != 0) {
      throw Error(Errc::io, "pipe failed");
    }
    posix_spawn_file_actions_adddup2(&actions, in_pipe[0], 0);
    posix_spawn_file_actions_adddup2(&actions, out_pipe[1], 1);
  } else {
    posix_spawn_file_actions_addopen(&actions, 0, "/dev/null", O_RDONLY, 0);
    posix_spawn_file_actions_addopen(&actions, 1, log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  }
  posix_spawn_file_actions_addopen(&actions, 2, log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);

  posix_spawnattr_t attr;
  posix_spawnattr_init(&attr);
  sigset_t none;
  sigemptyset(&none);
  sigset_t defaults;
  sigemptyset(&defaults);
  for (int s : {SIGPIPE, SIGTERM, SIGINT, SIGUSR1, SIGUSR2}) sigaddset(&defaults, s);
  posix_spawnattr_setsigmask(&attr, &none);
  posix_spawnattr_setsigdefault(&attr, &defaults);
  short flags = POSIX_SPAWN_SETSIGMASK | POSIX_SPAWN_SETSIGDEF;
  if (new_session) flags |= POSIX_SPAWN_SETSID;
  posix_spawnattr_setflags(&attr, flags);

  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  pid_t pid = -1;
  int rc = ::posix_spawn(&pid, args[0], &actions, &attr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  posix_spawnattr_destroy(&attr);
  Child c;
  if (pipes) {
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    c.in = in_pipe[1];
    c.out = out_pipe[0];
  }
  if (rc != 0) {
    if (pipes) {
      ::close(c.in);
      ::close(c.out);
    }
    throw Error(Errc::io, "cannot start " + argv[0] + ": " + std::strerror(rc));
  }
  c.pid = pid;
  return c;
}

bool process_alive(pid_t pid) {
  if (pid <= 0) return false;
  int status = 0;
  pid_t r = ::waitpid(pid, &status, WNOHANG);
  if (r == pid) return false;
  if (r == 0) return true;
  return ::kill(pid, 0) == 0;  // not our child
}

bool wait_exit(pid_t pid, std::chrono::milliseconds timeout) {
  auto deadline = Clock::now() + timeout;
  while (process_alive(pid)) {
    if (Clock::now() >= deadline) return false;
    std::this_thread::sleep_for(5ms);
  }
  return true;
}

Cluster::Cluster(Cluster&& o) noexcept
    : spec_(std::move(o.spec_)), tracker_(std::move(o.tracker_)), peers_(std::move(o.peers_)), owning_(o.owning_) {
  o.owning_ = false;
}

Cluster& Cluster::operator=(Cluster&& o) noexcept {
  if (this != &o) {
    if (owning_) shutdown();
    spec_ = std::move(o.spec_);
    tracker_ = std::move(o.tracker_);
    peers_ = std::move(o.peers_);
    owning_ = std::exchange(o.owning_, false);
  }
  return *this;
}

Cluster::~Cluster() {
  if (owning_) shutdown();
}

Cluster Cluster::spawn(const ClusterSpec& spec) {
  Cluster c;
  c.spec_ = spec;
  if (c.spec_.base.empty()) throw Error(Errc::invalid_argument, "cluster base directory required");
  if (c.spec_.st_binary.empty()) c.spec_.st_binary = self_executable();
  if (c.spec_.port_span < c.spec_.peers + 1) c.spec_.port_span = static_cast<std::uint16_t>(c.spec_.peers + 1);
  fs::create_directories(c.spec_.base / "logs");
  fs::create_directories(c.meta_root());
  fs::create_directories(c.spec_.base / "peers");
  write_shared_key(c.key_file(), c.spec_.key_seed);
  if (c.spec_.port_base == 0) c.spec_.port_base = pick_port_base(c.spec_.port_span, c.spec_.seed);
  c.owning_ = true;

  c.start_tracker();
  for (std::size_t i = 0; i < c.spec_.peers; ++i) {
    c.peers_.push_back(ProcInfo{});
    c.start_peer(i);
  }
  c.save();
  if (!c.wait_for_alive(c.spec_.peers, c.spec_.startup_timeout)) {
    throw Error(Errc::timeout, "cluster did not come up within " + std::to_string(c.spec_.startup_timeout.count()) +
                                   " ms; see " + (c.spec_.base / "logs").string());
  }
  return c;
}

Cluster Cluster::attach(const fs::path& base) {
  std::ifstream in(base / "cluster.json");
  if (!in) throw Error(Errc::not_found, "no cluster at " + base.string());
  json j = json::parse(in);
  Cluster c;
  auto& s = c.spec_;
  const auto& js = j.at("spec");
  s.peers = js.at("peers").get<std::size_t>();
  s.base = base;
  s.port_base = js.at("port_base").get<std::uint16_t>();
  s.port_span = js.at("port_span").get<std::uint16_t>();
  s.announce_interval = std::chrono::milliseconds(js.at("announce_ms").get<long>());
  s.k_missed = js.at("k_missed").get<int>();
  s.durable_write = js.at("durable_write").get<bool>();
  s.key_seed = js.at("key_seed").get<std::uint64_t>();
  s.seed = js.at("seed").get<std::uint64_t>();
  s.peer_capacity = js.at("peer_capacity").get<std::uint64_t>();
  s.target_bytes_per_peer = js.at("target_bytes_per_peer").get<std::uint64_t>();
  s.scrub_interval = std::chrono::milliseconds(js.at("scrub_interval_ms").get<long>());
  s.scrub_min_age = std::chrono::milliseconds(js.at("scrub_min_age_ms").get<long>());
  s.st_binary = js.at("st_binary").get<std::string>();
  c.tracker_ = proc_from(j.at("tracker"));
  for (const auto& p : j.at("peers")) c.peers_.push_back(proc_from(p));
  c.owning_ = false;
  return c;
}

void Cluster::save() const {
  json peers = json::array();
  for (const auto& p : peers_) peers.push_back(proc_json(p));
  json j{{"spec",
          {{"peers", spec_.peers},
           {"port_base", spec_.port_base},
           {"port_span", spec_.port_span},
           {"announce_ms", spec_.announce_interval.count()},
           {"k_missed", spec_.k_missed},
           {"durable_write", spec_.durable_write},
           {"key_seed", spec_.key_seed},
           {"seed", spec_.seed},
           {"peer_capacity", spec_.peer_capacity},
           {"target_bytes_per_peer", spec_.target_bytes_per_peer},
           {"scrub_interval_ms", spec_.scrub_interval.count()},
           {"scrub_min_age_ms", spec_.scrub_min_age.count()},
           {"st_binary", spec_.st_binary.string()}}},
         {"tracker_url", tracker_url()},
         {"tracker", proc_json(tracker_)},
         {"peers", peers}};
  auto tmp = spec_.base / "cluster.json.tmp";
  {
    std::ofstream out(tmp);
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, spec_.base / "cluster.json");
}

std::string Cluster::tracker_url() const { return "http://127.0.0.1:" + std::to_string(tracker_.port); }

std::string Cluster::peer_endpoint(std::size_t i) const { return net::endpoint("127.0.0.1", peers_.at(i).port); }

std::optional<std::size_t> Cluster::peer_index(const meta::PeerInfo& p) const {
  for (std::size_t i = 0; i < peers_.size(); ++i) {
    if (peers_[i].port == p.port && p.addr == "127.0.0.1") return i;
  }
  return std::nullopt;
}

void Cluster::start_tracker() {
  tracker_.port = spec_.port_base;
  tracker_.node_id = "tracker";
  tracker_.base = meta_root();
  std::vector<std::string> argv{spec_.st_binary.string(),
                                "tracker",
                                "--root",
                                meta_root().string(),
                                "--port",
                                std::to_string(tracker_.port),
                                "--key-file",
                                key_file().string(),
                                "--announce-ms",
                                std::to_string(spec_.announce_interval.count()),
                                "--k-missed",
                                std::to_string(spec_.k_missed),
                                "--seed",
                                std::to_string(spec_.seed),
                                "--target-bytes",
                                std::to_string(spec_.target_bytes_per_peer)};
  auto child = spawn_child(argv, spec_.base / "logs" / "tracker.log", false, true);
  tracker_.pid = child.pid;
  tracker_.running = true;
  auto deadline = Clock::now() + spec_.startup_timeout;
  for (;;) {
    try {
      http::JsonClient(tracker_url(), 500ms).get("/");
      return;
    } catch (const Error&) {
      if (!process_alive(tracker_.pid)) throw Error(Errc::io, "tracker exited during startup; see logs");
      if (Clock::now() >= deadline) throw Error(Errc::timeout, "tracker did not start");
      std::this_thread::sleep_for(20ms);
    }
  }
}

std::vector<std::string> Cluster::peer_argv(std::size_t i) const {
  const auto& p = peers_.at(i);
  std::vector<std::string> argv{spec_.st_binary.string(),
                                "peer",
                                "--base",
                                p.base.string(),
                                "--port",
                                std::to_string(p.port),
                                "--tracker",
                                tracker_url(),
                                "--key-file",
                                key_file().string(),
                                "--meta-root",
                                meta_root().string(),
                                "--announce-ms",
                                std::to_string(spec_.announce_interval.count()),
                                "--capacity",
                                std::to_string(spec_.peer_capacity),
                                "--node-id",
                                p.node_id,
                                "--scrub-interval-ms",
                                std::to_string(spec_.scrub_interval.count()),
                                "--scrub-min-age-ms",
                                std::to_string(spec_.scrub_min_age.count())};
  if (!spec_.durable_write) argv.push_back("--no-durable");
  return argv;
}

void Cluster::start_peer(std::size_t i) {
  auto& p = peers_.at(i);
  if (p.port == 0) {
    auto port = spec_.port_base + 1 + i;
    if (port >= static_cast<std::size_t>(spec_.port_base) + spec_.port_span) {
      throw Error(Errc::capacity, "port range exhausted; raise port_span");
    }
    p.port = static_cast<std::uint16_t>(port);
    p.node_id = "peer" + std::to_string(i);
    p.base = spec_.base / "peers" / p.node_id;
  }
  fs::create_directories(p.base);
  auto child = spawn_child(peer_argv(i), spec_.base / "logs" / (p.node_id + ".log"), false, true);
  p.pid = child.pid;
  p.running = true;
  p.stopped = false;
  // Ready once the port accepts connections.
  auto deadline = Clock::now() + spec_.startup_timeout;
  for (;;) {
    try {
      net::tcp_connect("127.0.0.1", p.port, 200ms);
      return;
    } catch (const Error&) {
      if (!process_alive(p.pid)) throw Error(Errc::io, p.node_id + " exited during startup; see logs");
      if (Clock::now() >= deadline) throw Error(Errc::timeout, p.node_id + " did not start");
      std::this_thread::sleep_for(10ms);
    }
  }
}

void Cluster::shutdown(std::chrono::milliseconds grace) {
  for (auto& p : peers_) {
    if (p.running) {
      ::kill(p.pid, SIGTERM);
      if (p.stopped) ::kill(p.pid, SIGCONT);
    }
  }
  if (tracker_.running) ::kill(tracker_.pid, SIGTERM);
  for (auto& p : peers_) stop_process(p, grace);
  stop_process(tracker_, grace);
  owning_ = false;
  if (fs::exists(spec_.base)) save();
}

void Cluster::inject(const FaultAction& a) {
  if (a.peer >= peers_.size()) throw Error(Errc::invalid_argument, "unknown peer " + std::to_string(a.peer));
  auto& p = peers_[a.peer];
  auto require_running = [&] {
    if (!p.running || !process_alive(p.pid)) {
      p.running = false;
      throw Error(Errc::invalid_argument, p.node_id + " is not running");
    }
  };
  switch (a.kind) {
    case FaultKind::kill:
      require_running();
      ::kill(p.pid, SIGKILL);
      wait_exit(p.pid, 5s);
      p.running = false;
      p.stopped = false;
      break;
    case FaultKind::hang:
      require_running();
      ::kill(p.pid, SIGSTOP);
      p.stopped = true;
      break;
    case FaultKind::resume:
      require_running();
      ::kill(p.pid, SIGCONT);
      p.stopped = false;
      break;
    case FaultKind::drop_connections:
      require_running();
      ::kill(p.pid, SIGUSR2);
      break;
    case FaultKind::disk_corrupt: {
      auto file_id = meta::file_id_for(meta::normalize_path(a.path));
      auto target = store::record_path(p.base, file_id, a.name);
      std::fstream f(target, std::ios::in | std::ios::out | std::ios::binary);
      if (!f) throw Error(Errc::not_found, "no copy of '" + a.name + "' on " + p.node_id);
      char c = 0;
      f.seekg(0);
      f.get(c);
      if (!f) throw Error(Errc::io, "record '" + a.name + "' on " + p.node_id + " is empty");
      f.seekp(0);
      f.put(static_cast<char>(c ^ 0x5A));
      break;
    }
    case FaultKind::rejoin_wiped:
      if (p.running) stop_process(p, 200ms);
      fs::remove_all(p.base);
      start_peer(a.peer);
      break;
    case FaultKind::restart:
      if (p.running) stop_process(p, 2s);
      start_peer(a.peer);
      break;
  }
  save();
  spdlog::info("fault {} applied to {}", fault_kind_name(a.kind), p.node_id);
}

std::size_t Cluster::trigger_scrub() {
  std::size_t n = 0;
  for (auto& p : peers_) {
    if (p.running && process_alive(p.pid) && ::kill(p.pid, SIGUSR1) == 0) ++n;
  }
  return n;
}

std::vector<std::size_t> Cluster::expand(std::size_t n) {
  std::vector<std::size_t> added;
  for (std::size_t k = 0; k < n; ++k) {
    peers_.push_back(ProcInfo{});
    start_peer(peers_.size() - 1);
    added.push_back(peers_.size() - 1);
  }
  spec_.peers = peers_.size();
  save();
  std::size_t running = 0;
  for (const auto& p : peers_) running += p.running && !p.stopped;
  auto deadline = Clock::now() + spec_.startup_timeout;
  for (;;) {
    auto s = status();
    std::size_t seen = 0;
    for (const auto& entry : s.at("peers")) {
      for (auto i : added) {
        if (entry.value("node_id", std::string()) == peers_[i].node_id && entry.value("status", "") == "alive") ++seen;
      }
    }
    if (seen == added.size()) break;
    if (Clock::now() >= deadline) throw Error(Errc::timeout, "new peers did not announce");
    std::this_thread::sleep_for(20ms);
  }
  return added;
}

json Cluster::status() const { return http::JsonClient(tracker_url(), 2s).get("/"); }

bool Cluster::wait_for_alive(std::size_t count, std::chrono::milliseconds timeout) const {
  auto deadline = Clock::now() + timeout;
  for (;;) {
    try {
      if (status().at("alive_peers").get<std::size_t>() >= count) return true;
    } catch (const Error&) {
    }
    if (Clock::now() >= deadline) return false;
    std::this_thread::sleep_for(20ms);
  }
}

std::optional<std::chrono::milliseconds> Cluster::wait_for_failed(std::size_t peer,
                                                                  std::chrono::milliseconds timeout) const {
  auto start = Clock::now();
  const auto endpoint = peer_endpoint(peer);
  for (;;) {
    auto st = status();
    for (const auto& entry : st.at("peers")) {
      if (entry.value("endpoint", "") == endpoint && entry.value("status", "") == "failed") {
        return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start);
      }
    }
    if (Clock::now() - start >= timeout) return std::nullopt;
    std::this_thread::sleep_for(10ms);
  }
}

std::uint64_t Cluster::peer_counter(const std::string& key) const {
  std::uint64_t total = 0;
  auto st = status();
  for (const auto& entry : st.at("peers")) total += entry.value(key, std::uint64_t{0});
  return total;
}

void Cluster::wait_for_announces() const {
  // Two rounds: the first announce seen after the call may have been built
  // before it; the next one from the same peer cannot have been.
  auto deadline = Clock::now() + spec_.announce_interval * 8 + 2s;
  for (int round = 0; round < 2; ++round) {
    auto since = Clock::now();
    for (;;) {
      std::this_thread::sleep_for(20ms);
      double elapsed = std::chrono::duration<double>(Clock::now() - since).count();
      bool fresh = true;
      try {
        auto st = status();
        for (const auto& p : st.at("peers")) {
          if (p.at("status").get<std::string>() == "alive" && p.at("seconds_since_announce").get<double>() >= elapsed) fresh = false;
        }
      } catch (const Error&) {
        fresh = false;
      }
      if (fresh) break;
      if (Clock::now() >= deadline) return;
    }
  }
}

client::ClientConfig Cluster::client_config(std::optional<std::size_t> local_peer) const {
  client::ClientConfig c;
  c.tracker_url = tracker_url();
  c.meta_root = meta_root();
  if (local_peer) {
    c.local_peer_addr = "127.0.0.1";
    c.local_peer_port = peers_.at(*local_peer).port;
  }
  return c;
}

}  // namespace storetorrent::harness
