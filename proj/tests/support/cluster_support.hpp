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

// Helpers shared by the integration and acceptance tests: cluster setup,
// deterministic datasets, and independent read-back checks.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "client/client.hpp"
#include "harness/bench.hpp"
#include "harness/cluster.hpp"
#include "wire/protocol.hpp"

namespace storetorrent::test {

namespace fs = std::filesystem;
using namespace std::chrono_literals;

fs::path st_binary();

// Fresh directory under the system temp dir, removed with the object.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag);
  ~ScratchDir();
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

harness::ClusterSpec small_cluster(const fs::path& base, std::size_t peers);

struct Dataset {
  std::string path;
  std::uint64_t seed = 1;
  std::size_t count = 100;
  std::size_t size = 64 << 10;

  std::string name(std::size_t i) const { return harness::record_name(i); }
  client::Bytes payload(std::size_t i) const { return harness::record_payload(seed, i, size); }
  std::set<std::string> names() const;
};

// queue_put/poll driver loop. Returns names of records reported failed.
std::vector<std::string> write_dataset(client::FileHandle& f, const Dataset& d,
                                       const std::function<void(std::size_t)>& after_queue = {});

// Reads every record of the dataset through a fresh handle and compares it
// byte for byte with the regenerated payload. Returns one line per problem.
std::vector<std::string> verify_dataset(const client::ClientConfig& cfg, const Dataset& d);

// Infofile scan: names whose locations are not F distinct peers, or (when
// `alive` is given) not all alive.
std::vector<std::string> holder_problems(const harness::Cluster& c, const std::string& path,
                                         const std::set<std::size_t>* alive = nullptr);

// Cluster peer index for each peer_id of a file's peerlist.
std::map<std::uint16_t, std::size_t> peer_indices(const harness::Cluster& c, const std::string& path);

std::set<std::size_t> running_peers(const harness::Cluster& c);

// Runs the st CLI with the given arguments; returns exit status and output.
struct CliResult {
  int status = -1;
  std::string out;
};
CliResult run_cli(const std::vector<std::string>& args);

// Minimal blocking wire client for talking to a peer directly.
class RawPeer {
 public:
  RawPeer(const std::string& host, std::uint16_t port);
  ~RawPeer();
  void send(const wire::Message& m);
  void send_raw(const std::vector<std::uint8_t>& bytes);
  std::vector<wire::Message> receive(std::size_t count, std::chrono::milliseconds timeout = 5s);
  // True when the peer closed the connection within the timeout.
  bool closed(std::chrono::milliseconds timeout = 2s);

 private:
  int fd_ = -1;
  wire::FrameDecoder decoder_;
  std::vector<wire::Message> ready_;
};

}  // namespace storetorrent::test
