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

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "harness/cluster.hpp"

namespace storetorrent::harness {

struct WriteBenchSpec {
  std::string path = "bench/write";
  std::size_t clients = 1;
  std::size_t record_size = 2u << 20;
  std::uint64_t total_bytes = 64ull << 20;
  std::size_t pipeline_depth = 10;
  std::size_t group_commit_size = 40;
  std::string ft = "x2";
  std::uint64_t seed = 1;
  bool blocking = false;  // use put() instead of queue_put/poll
  bool verify = true;     // integrity sweep after the run
};

struct ReadBenchSpec {
  std::string path = "bench/write";
  std::size_t clients = 1;
};

struct LocalBenchSpec {
  std::string path = "bench/write";
  std::size_t clients_per_node = 1;
};

std::string record_name(std::uint64_t index);
// Deterministic contents of record `index` for a given seed.
std::vector<std::uint8_t> record_payload(std::uint64_t seed, std::uint64_t index, std::size_t size);

// Benchmark clients started and released together; finish() gathers their
// reports.
class BenchRun {
 public:
  BenchRun(BenchRun&&) noexcept;
  BenchRun& operator=(BenchRun&&) noexcept;
  ~BenchRun();
  json finish();

 private:
  friend BenchRun start_bench_write(Cluster&, const WriteBenchSpec&);
  friend json bench_read(Cluster&, const ReadBenchSpec&);
  friend json bench_get_local(Cluster&, const LocalBenchSpec&);
  BenchRun() = default;
  void launch(const Cluster& cluster, const std::vector<json>& jobs);
  std::vector<json> collect();

  std::vector<Child> children_;
  std::function<json(std::vector<json>)> summarize_;
};

BenchRun start_bench_write(Cluster& cluster, const WriteBenchSpec& spec);
json bench_write(Cluster& cluster, const WriteBenchSpec& spec);
json bench_read(Cluster& cluster, const ReadBenchSpec& spec);
json bench_get_local(Cluster& cluster, const LocalBenchSpec& spec);

// Body of a benchmark client process: reads its job from in_fd, reports
// "ready", waits for "go", runs, writes one JSON line to out_fd.
int bench_worker_main(int in_fd, int out_fd);

}  // namespace storetorrent::harness
