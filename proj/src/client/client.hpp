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
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "client/placement.hpp"
#include "common/error.hpp"
#include "meta/infofile.hpp"
#include "wire/protocol.hpp"

namespace storetorrent::client {

namespace fs = std::filesystem;
using namespace std::chrono_literals;
using Bytes = std::vector<std::uint8_t>;

// Points in the PUT path where a test hook may simulate the client dying.
enum class PutStep {
  queued,          // frames built, nothing sent
  partially_sent,  // half of one copy's data written to its socket
  acked,           // every copy acknowledged, metadata not yet sent
  committing,      // about to send a commit batch to the tracker
  committed,       // a commit batch was acknowledged
};

struct ClientConfig {
  std::string tracker_url;
  fs::path meta_root;     // shared infofile directory
  std::string client_id;  // generated when empty
  std::chrono::milliseconds op_timeout = 5s;
  std::chrono::milliseconds tracker_timeout = 5s;
  std::size_t pipeline_depth = 10;
  std::size_t group_commit_size = 40;
  std::size_t blocksize = 1;
  // Flush a partial batch after this long without new acks (capped at ten
  // lingers from its first record).
  std::chrono::milliseconds commit_linger = 100ms;
  int retry_budget = 3;
  std::uint64_t seed = 0;  // 0 draws from std::random_device
  // Peer serving GET_LOCAL for this node.
  std::string local_peer_addr;
  std::uint16_t local_peer_port = 0;
  // Test hook, given the record (or, for commit steps, the whole batch) the
  // step applies to. When set, PUT frames are also split at their midpoint
  // so the partially_sent step is always reached.
  std::function<void(PutStep, const std::vector<std::string>& names)> fault_hook;
};

struct Event {
  enum class Type { committed, failed };
  Type type = Type::committed;
  std::string name;
  Errc code = Errc::internal;
  std::string message;
};

enum class DeleteStatus { done, deferred };

using GetCallback = std::function<void(const std::string& name, std::optional<Bytes> data, const Error* error)>;

// Open StoreTorrent file. Confined to one thread; all socket progress
// happens inside poll() or the blocking wrappers built on it.
class FileHandle {
 public:
  static FileHandle create(const ClientConfig& config, const std::string& path, const meta::FtClass& ft,
                           std::uint64_t est_size, std::uint64_t quota_bytes = 0);
  // Falls back to a read-only handle built from the infofile when the
  // tracker is unreachable.
  static FileHandle open(const ClientConfig& config, const std::string& path);

  FileHandle(FileHandle&&) noexcept;
  FileHandle& operator=(FileHandle&&) noexcept;
  ~FileHandle();

  // Enqueues one PUT per copy. Returns false when pipeline_depth records
  // are already awaiting acks.
  bool queue_put(std::shared_ptr<const Bytes> contents, const std::string& name);
  bool queue_put(Bytes contents, const std::string& name) {
    return queue_put(std::make_shared<const Bytes>(std::move(contents)), name);
  }
  // Advances socket I/O, waiting at most `wait` for activity, and returns
  // records committed or failed since the last call.
  std::vector<Event> poll(std::chrono::milliseconds wait = 100ms);
  std::vector<std::string> get_inflight() const;

  // Blocking put: returns once the record is committed.
  void put(Bytes contents, const std::string& name);
  // Waits for every queued record and commits the pending batch.
  void flush();
  void close();

  Bytes get(const std::string& name);
  void queue_get(const std::string& name, GetCallback on_done);

  // Records this node's peer reveals, split among local_size co-located
  // clients. Retries around failed peers.
  std::vector<wire::LocalEntry> get_local(std::size_t local_rank = 0, std::size_t local_size = 1);

  DeleteStatus remove(const std::string& name);
  // Retries metadata deletes deferred while the tracker was unreachable.
  std::size_t retry_deferred_deletes();

  // Replaces failed holders of one record; nullopt when none failed.
  std::optional<PutPlacement> rebalance_record(const std::string& name);
  // Rebalances every record; returns the number rewritten.
  std::size_t rebalance();

  const meta::FileInfo& info() const;
  bool writable() const;
  const std::set<std::uint16_t>& failed_peers() const;
  // Marks peers that refuse TCP connections as failed.
  std::set<std::uint16_t> probe_peers();
  std::optional<meta::RecordMeta> lookup(const std::string& name);
  std::vector<meta::RecordMeta> records();
  std::uint64_t commit_transactions() const;

 private:
  struct Impl;
  explicit FileHandle(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

std::string default_client_id();

}  // namespace storetorrent::client
