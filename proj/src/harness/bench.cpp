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

#include "harness/bench.hpp"

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "common/error.hpp"
#include "wire/crc32.hpp"

namespace storetorrent::harness {

using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void write_line(int fd, const std::string& line) {
  std::string s = line + "\n";
  std::size_t off = 0;
  while (off < s.size()) {
    ssize_t n = ::write(fd, s.data() + off, s.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::io, "pipe write failed");
    }
    off += static_cast<std::size_t>(n);
  }
}

// Reads one line; throws when the stream ends first.
std::string read_line(int fd) {
  std::string s;
  char c;
  for (;;) {
    ssize_t n = ::read(fd, &c, 1);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(Errc::io, "benchmark client exited before reporting");
    if (c == '\n') return s;
    s.push_back(c);
  }
}

client::ClientConfig config_from(const json& job) {
  client::ClientConfig c;
  c.tracker_url = job.at("tracker").get<std::string>();
  c.meta_root = job.at("meta_root").get<std::string>();
  c.pipeline_depth = job.value("depth", std::size_t{10});
  c.group_commit_size = job.value("group_commit", std::size_t{40});
  c.seed = job.value("client_seed", std::uint64_t{0});
  c.local_peer_addr = job.value("local_addr", std::string());
  c.local_peer_port = job.value("local_port", std::uint16_t{0});
  return c;
}

json run_write(const json& job, int in_fd, int out_fd) {
  auto config = config_from(job);
  auto handle = client::FileHandle::open(config, job.at("path").get<std::string>());
  const auto first = job.at("first").get<std::uint64_t>();
  const auto count = job.at("count").get<std::uint64_t>();
  const auto size = job.at("record_size").get<std::size_t>();
  const auto seed = job.at("seed").get<std::uint64_t>();
  const bool blocking = job.value("blocking", false);
  // Generated before timing starts.
  std::vector<std::shared_ptr<const client::Bytes>> data;
  for (std::uint64_t i = 0; i < count; ++i) {
    data.push_back(std::make_shared<const client::Bytes>(record_payload(seed, first + i, size)));
  }
  write_line(out_fd, "ready");
  read_line(in_fd);

  std::uint64_t committed = 0;
  std::vector<std::string> errors;
  auto collect = [&](const std::vector<client::Event>& events) {
    for (const auto& e : events) {
      if (e.type == client::Event::Type::committed) {
        ++committed;
      } else if (errors.size() < 20) {
        errors.push_back(e.name + ": " + e.message);
      } else {
        errors.push_back("...");
      }
    }
  };
  auto t0 = Clock::now();
  try {
    if (blocking) {
      for (std::uint64_t i = 0; i < count; ++i) {
        handle.put(*data[i], record_name(first + i));
        ++committed;
      }
    } else {
      std::uint64_t i = 0;
      while (i < count) {
        if (handle.queue_put(data[i], record_name(first + i))) {
          ++i;
        } else {
          collect(handle.poll(100ms));
        }
      }
      handle.flush();
      collect(handle.poll(0ms));
    }
  } catch (const Error& e) {
    errors.push_back(e.what());
  }
  double secs = seconds_since(t0);
  return json{{"records", count},
              {"committed", committed},
              {"bytes", committed * size},
              {"seconds", secs},
              {"errors", errors},
              {"commit_transactions", handle.commit_transactions()}};
}

json run_read(const json& job, int in_fd, int out_fd) {
  auto config = config_from(job);
  auto handle = client::FileHandle::open(config, job.at("path").get<std::string>());
  auto names = job.at("names").get<std::vector<std::string>>();
  write_line(out_fd, "ready");
  read_line(in_fd);
  auto t0 = Clock::now();
  std::uint64_t bytes = 0;
  std::vector<std::string> read;
  std::vector<std::string> errors;
  for (const auto& name : names) {
    try {
      bytes += handle.get(name).size();
      read.push_back(name);
    } catch (const Error& e) {
      errors.push_back(name + ": " + e.what());
    }
  }
  return json{{"names", read}, {"bytes", bytes}, {"seconds", seconds_since(t0)}, {"errors", errors}};
}

json run_get_local(const json& job, int in_fd, int out_fd) {
  auto config = config_from(job);
  auto handle = client::FileHandle::open(config, job.at("path").get<std::string>());
  std::map<std::string, std::uint32_t> crcs;
  for (const auto& r : handle.records()) crcs[r.name] = r.crc;
  const auto rank = job.at("local_rank").get<std::size_t>();
  const auto size = job.at("local_size").get<std::size_t>();
  write_line(out_fd, "ready");
  read_line(in_fd);

  auto t0 = Clock::now();
  std::vector<std::string> names;
  std::vector<std::string> errors;
  std::uint64_t bytes = 0;
  double collective = 0;
  try {
    auto entries = handle.get_local(rank, size);
    collective = seconds_since(t0);
    std::vector<char> buf;
    for (const auto& e : entries) {
      std::ifstream in(e.path, std::ios::binary);
      buf.assign(std::istreambuf_iterator<char>(in), {});
      if (!in.good() && !in.eof()) {
        errors.push_back(e.name + ": unreadable");
        continue;
      }
      auto crc = wire::crc32(std::span(reinterpret_cast<const std::uint8_t*>(buf.data()), buf.size()));
      auto it = crcs.find(e.name);
      if (it == crcs.end() || it->second != crc) errors.push_back(e.name + ": checksum mismatch");
      bytes += buf.size();
      names.push_back(e.name);
    }
  } catch (const Error& e) {
    errors.push_back(e.what());
  }
  return json{{"names", names},
              {"bytes", bytes},
              {"collective_seconds", collective},
              {"seconds", seconds_since(t0)},
              {"errors", errors}};
}

std::vector<std::string> sweep(const Cluster& cluster, const std::string& path, std::uint64_t seed,
                               std::size_t record_size, std::uint64_t expected) {
  std::vector<std::string> problems;
  auto handle = client::FileHandle::open(cluster.client_config(), path);
  auto records = handle.records();
  if (records.size() != expected) {
    problems.push_back("committed " + std::to_string(records.size()) + " of " + std::to_string(expected));
  }
  for (const auto& r : records) {
    try {
      auto data = handle.get(r.name);
      auto index = std::stoull(r.name.substr(1));
      if (data != record_payload(seed, index, record_size)) problems.push_back(r.name + ": contents differ");
    } catch (const Error& e) {
      problems.push_back(r.name + ": " + e.what());
    }
    if (problems.size() > 20) break;
  }
  return problems;
}

}  // namespace

std::string record_name(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "r%010llu", static_cast<unsigned long long>(index));
  return buf;
}

std::vector<std::uint8_t> record_payload(std::uint64_t seed, std::uint64_t index, std::size_t size) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + index);
  std::vector<std::uint8_t> out(size);
  std::size_t i = 0;
  for (; i + 8 <= size; i += 8) {
    auto v = rng();
    std::memcpy(out.data() + i, &v, 8);
  }
  if (i < size) {
    auto v = rng();
    std::memcpy(out.data() + i, &v, size - i);
  }
  return out;
}

BenchRun::BenchRun(BenchRun&& o) noexcept
    : children_(std::exchange(o.children_, {})), summarize_(std::move(o.summarize_)) {}

BenchRun& BenchRun::operator=(BenchRun&& o) noexcept {
  children_ = std::exchange(o.children_, {});
  summarize_ = std::move(o.summarize_);
  return *this;
}

BenchRun::~BenchRun() {
  for (auto& c : children_) {
    if (c.in >= 0) ::close(c.in);
    if (c.out >= 0) ::close(c.out);
    if (c.pid > 0 && process_alive(c.pid)) {
      ::kill(c.pid, SIGKILL);
      wait_exit(c.pid, 2s);
    }
  }
}

void BenchRun::launch(const Cluster& cluster, const std::vector<json>& jobs) {
  auto log = cluster.spec().base / "logs" / "bench.log";
  for (const auto& job : jobs) {
    auto child = spawn_child({cluster.spec().st_binary.string(), "bench-worker"}, log, true, false);
    children_.push_back(child);
    write_line(child.in, job.dump());
  }
  for (auto& c : children_) {
    auto line = read_line(c.out);
    if (line != "ready") throw Error(Errc::internal, "benchmark client failed to start: " + line);
  }
  for (auto& c : children_) write_line(c.in, "go");
}

std::vector<json> BenchRun::collect() {
  std::vector<json> out;
  for (auto& c : children_) {
    auto line = read_line(c.out);
    out.push_back(json::parse(line));
    wait_exit(c.pid, 10s);
    ::close(c.in);
    ::close(c.out);
    c = Child{};
  }
  children_.clear();
  return out;
}

json BenchRun::finish() {
  auto reports = collect();
  return summarize_ ? summarize_(std::move(reports)) : json(reports);
}

BenchRun start_bench_write(Cluster& cluster, const WriteBenchSpec& spec) {
  BenchRun run;
  const std::uint64_t records = spec.record_size ? (spec.total_bytes + spec.record_size - 1) / spec.record_size : 0;
  if (records == 0) {
    run.summarize_ = [](std::vector<json>) {
      return json{{"records", 0}, {"bytes", 0}, {"seconds", 0.0}, {"aggregate_mb_s", 0.0},
                  {"per_client_mb_s", json::array()}, {"errors", json::array()}, {"ok", true}};
    };
    return run;
  }
  {
    auto h = client::FileHandle::create(cluster.client_config(), spec.path, meta::FtClass::parse(spec.ft),
                                        spec.total_bytes);
    h.close();
  }
  const std::size_t clients = std::max<std::size_t>(1, std::min<std::uint64_t>(spec.clients, records));
  std::vector<json> jobs;
  std::uint64_t first = 0;
  for (std::size_t k = 0; k < clients; ++k) {
    std::uint64_t count = records / clients + (k < records % clients ? 1 : 0);
    jobs.push_back(json{{"mode", "write"},
                        {"tracker", cluster.tracker_url()},
                        {"meta_root", cluster.meta_root().string()},
                        {"path", spec.path},
                        {"first", first},
                        {"count", count},
                        {"record_size", spec.record_size},
                        {"depth", spec.pipeline_depth},
                        {"group_commit", spec.group_commit_size},
                        {"seed", spec.seed},
                        {"client_seed", spec.seed * 1000 + k + 1},
                        {"blocking", spec.blocking}});
    first += count;
  }
  run.launch(cluster, jobs);
  const Cluster* c = &cluster;
  run.summarize_ = [spec, records, c](std::vector<json> reports) {
    double slowest = 0;
    std::uint64_t bytes = 0;
    std::uint64_t committed = 0;
    std::uint64_t transactions = 0;
    json per_client = json::array();
    json errors = json::array();
    for (const auto& r : reports) {
      double secs = r.at("seconds").get<double>();
      slowest = std::max(slowest, secs);
      bytes += r.at("bytes").get<std::uint64_t>();
      committed += r.at("committed").get<std::uint64_t>();
      transactions += r.at("commit_transactions").get<std::uint64_t>();
      per_client.push_back(secs > 0 ? r.at("bytes").get<double>() / secs / 1e6 : 0.0);
      for (const auto& e : r.at("errors")) errors.push_back(e);
    }
    json report{{"records", records},
                {"committed", committed},
                {"bytes", bytes},
                {"seconds", slowest},
                {"aggregate_mb_s", slowest > 0 ? static_cast<double>(bytes) / slowest / 1e6 : 0.0},
                {"per_client_mb_s", per_client},
                {"commit_transactions", transactions},
                {"errors", errors}};
    bool ok = errors.empty() && committed == records;
    if (spec.verify) {
      auto problems = sweep(*c, spec.path, spec.seed, spec.record_size, records);
      report["integrity_problems"] = problems;
      ok = ok && problems.empty();
    }
    report["ok"] = ok;
    return report;
  };
  return run;
}

json bench_write(Cluster& cluster, const WriteBenchSpec& spec) { return start_bench_write(cluster, spec).finish(); }

json bench_read(Cluster& cluster, const ReadBenchSpec& spec) {
  auto handle = client::FileHandle::open(cluster.client_config(), spec.path);
  std::vector<std::string> names;
  std::uint64_t file_bytes = 0;
  for (const auto& r : handle.records()) {
    names.push_back(r.name);
    file_bytes += r.size;
  }
  std::sort(names.begin(), names.end());
  const std::size_t clients = std::max<std::size_t>(1, spec.clients);
  std::vector<json> jobs;
  // Contiguous slices by record rank.
  for (std::size_t k = 0; k < clients; ++k) {
    std::size_t lo = names.size() * k / clients;
    std::size_t hi = names.size() * (k + 1) / clients;
    jobs.push_back(json{{"mode", "read"},
                        {"tracker", cluster.tracker_url()},
                        {"meta_root", cluster.meta_root().string()},
                        {"path", spec.path},
                        {"names", std::vector<std::string>(names.begin() + static_cast<std::ptrdiff_t>(lo),
                                                           names.begin() + static_cast<std::ptrdiff_t>(hi))}});
  }
  BenchRun run;
  run.launch(cluster, jobs);
  auto reports = run.collect();
  std::map<std::string, int> reads;
  double slowest = 0;
  std::uint64_t bytes = 0;
  json errors = json::array();
  for (const auto& r : reports) {
    for (const auto& n : r.at("names")) ++reads[n.get<std::string>()];
    bytes += r.at("bytes").get<std::uint64_t>();
    slowest = std::max(slowest, r.at("seconds").get<double>());
    for (const auto& e : r.at("errors")) errors.push_back(e);
  }
  bool once = reads.size() == names.size() &&
              std::all_of(reads.begin(), reads.end(), [](const auto& kv) { return kv.second == 1; });
  return json{{"clients", clients},
              {"records", names.size()},
              {"bytes", bytes},
              {"file_bytes", file_bytes},
              {"seconds", slowest},
              {"aggregate_mb_s", slowest > 0 ? static_cast<double>(bytes) / slowest / 1e6 : 0.0},
              {"each_read_once", once},
              {"errors", errors},
              {"ok", errors.empty() && once && bytes == file_bytes}};
}

json bench_get_local(Cluster& cluster, const LocalBenchSpec& spec) {
  auto handle = client::FileHandle::open(cluster.client_config(), spec.path);
  std::set<std::size_t> alive_nodes;
  std::set<std::uint16_t> alive_ids;
  for (const auto& p : handle.info().peerlist) {
    auto idx = cluster.peer_index(p);
    if (idx && cluster.peers()[*idx].running && !cluster.peers()[*idx].stopped) {
      alive_nodes.insert(*idx);
      alive_ids.insert(p.peer_id);
    }
  }
  std::set<std::string> expected;
  for (const auto& r : handle.records()) {
    if (std::any_of(r.locations.begin(), r.locations.end(), [&](auto id) { return alive_ids.count(id) > 0; })) {
      expected.insert(r.name);
    }
  }
  const std::size_t k = std::max<std::size_t>(1, spec.clients_per_node);
  std::vector<json> jobs;
  for (auto node : alive_nodes) {
    for (std::size_t r = 0; r < k; ++r) {
      jobs.push_back(json{{"mode", "get_local"},
                          {"tracker", cluster.tracker_url()},
                          {"meta_root", cluster.meta_root().string()},
                          {"path", spec.path},
                          {"local_addr", "127.0.0.1"},
                          {"local_port", cluster.peers()[node].port},
                          {"local_rank", r},
                          {"local_size", k}});
    }
  }
  cluster.wait_for_announces();
  const auto piece_before = cluster.peer_counter("piece_bytes_sent");
  const auto ring_before = cluster.peer_counter("index_ring_bytes_sent");
  BenchRun run;
  run.launch(cluster, jobs);
  auto reports = run.collect();
  cluster.wait_for_announces();
  const auto piece_after = cluster.peer_counter("piece_bytes_sent");
  const auto ring_after = cluster.peer_counter("index_ring_bytes_sent");

  std::map<std::string, int> seen;
  double collective = 0;
  double total = 0;
  double slowest = 0;
  std::uint64_t bytes = 0;
  json errors = json::array();
  for (const auto& r : reports) {
    for (const auto& n : r.at("names")) ++seen[n.get<std::string>()];
    collective += r.at("collective_seconds").get<double>();
    total += r.at("seconds").get<double>();
    slowest = std::max(slowest, r.at("seconds").get<double>());
    bytes += r.at("bytes").get<std::uint64_t>();
    for (const auto& e : r.at("errors")) errors.push_back(e);
  }
  json missing = json::array();
  for (const auto& n : expected) {
    if (!seen.count(n) && missing.size() < 50) missing.push_back(n);
  }
  json duplicates = json::array();
  json unexpected = json::array();
  for (const auto& [n, count] : seen) {
    if (count > 1 && duplicates.size() < 50) duplicates.push_back(n);
    if (!expected.count(n) && unexpected.size() < 50) unexpected.push_back(n);
  }
  bool coverage = missing.empty() && unexpected.empty();
  bool disjoint = duplicates.empty();
  double share = total > 0 ? collective / total : 0.0;
  return json{{"clients", jobs.size()},
              {"nodes", alive_nodes.size()},
              {"records", expected.size()},
              {"revealed", seen.size()},
              {"bytes", bytes},
              {"seconds", slowest},
              {"aggregate_mb_s", slowest > 0 ? static_cast<double>(bytes) / slowest / 1e6 : 0.0},
              {"collective_share", share},
              {"network_piece_bytes", piece_after - piece_before},
              {"index_ring_bytes", ring_after - ring_before},
              {"coverage_complete", coverage},
              {"disjoint", disjoint},
              {"missing", missing},
              {"duplicates", duplicates},
              {"errors", errors},
              {"ok", coverage && disjoint && errors.empty()}};
}

int bench_worker_main(int in_fd, int out_fd) {
  try {
    auto job = json::parse(read_line(in_fd));
    auto mode = job.at("mode").get<std::string>();
    json result;
    if (mode == "write") {
      result = run_write(job, in_fd, out_fd);
    } else if (mode == "read") {
      result = run_read(job, in_fd, out_fd);
    } else if (mode == "get_local") {
      result = run_get_local(job, in_fd, out_fd);
    } else {
      throw Error(Errc::invalid_argument, "unknown benchmark mode " + mode);
    }
    write_line(out_fd, result.dump());
    return 0;
  } catch (const std::exception& e) {
    spdlog::error("benchmark client: {}", e.what());
    try {
      write_line(out_fd, json{{"error", e.what()}}.dump());
    } catch (...) {
    }
    return 1;
  }
}

}  // namespace storetorrent::harness
