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

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace storetorrent::store {

namespace fs = std::filesystem;
using Bytes = std::vector<std::uint8_t>;

// Longest accepted record name. Leaves room for the ".crc.tmp.<conn>" and
// ".tmp.<conn>" suffixes within the 255-byte filename limit.
inline constexpr std::size_t kMaxNameLength = 230;

struct StoredRecord {
  std::string file_id;
  std::string name;
  std::uint8_t rank = 0;
  std::uint64_t size = 0;
  std::uint32_t crc = 0;
  fs::path path;
};

struct IndexEntry {
  std::string name;
  std::uint8_t rank = 0;
  std::uint64_t size = 0;
  std::uint32_t crc = 0;
  bool operator==(const IndexEntry&) const = default;
};

// I/O step boundaries inside store_record, in order. A fault hook may throw
// SimulatedCrash at any of them to emulate the process dying there.
enum class WriteStep {
  temp_opened,
  half_written,
  data_written,
  data_synced,
  sidecar_written,
  renamed,
};

struct SimulatedCrash : std::exception {
  const char* what() const noexcept override { return "simulated crash"; }
};

struct StoreOptions {
  fs::path base;
  // fsync data, sidecar and directory, then drop the page cache for the
  // record, before acknowledging.
  bool durable_write = true;
  std::function<void(WriteStep)> fault_hook;
};

void validate_record_name(const std::string& name);
void validate_file_id(const std::string& file_id);

// <base>/<file_id>/<hh>/<name>, hh = top byte of crc32(name) in lowercase hex.
fs::path record_path(const fs::path& base, const std::string& file_id, const std::string& name);

// Lists completed records by walking the directory tree; independent of any
// in-memory index.
std::vector<IndexEntry> walk_records(const fs::path& base, const std::string& file_id);

class PeerStore;

// Streams one record into its temp file. finish() publishes it; destroying
// an unfinished writer removes the temp file.
class RecordWriter {
 public:
  RecordWriter(RecordWriter&& other) noexcept;
  RecordWriter& operator=(RecordWriter&&) = delete;
  ~RecordWriter();

  void write(std::span<const std::uint8_t> chunk);
  StoredRecord finish();
  void abort() noexcept;

 private:
  friend class PeerStore;
  RecordWriter(PeerStore& store, StoredRecord rec, std::uint32_t conn_id);

  PeerStore* store_;
  StoredRecord rec_;
  fs::path temp_;
  int fd_ = -1;
  std::uint64_t written_ = 0;
  std::uint32_t conn_id_;
  bool half_reported_ = false;
};

class PeerStore {
 public:
  explicit PeerStore(StoreOptions options);
  PeerStore(const PeerStore&) = delete;
  PeerStore& operator=(const PeerStore&) = delete;

  const fs::path& base() const noexcept { return options_.base; }
  fs::path path_for(const std::string& file_id, const std::string& name) const {
    return record_path(options_.base, file_id, name);
  }

  RecordWriter begin_record(const std::string& file_id, const std::string& name, std::uint8_t rank,
                            std::uint64_t size, std::uint32_t crc, std::uint32_t conn_id);
  StoredRecord store_record(const std::string& file_id, const std::string& name, std::uint8_t rank,
                            std::span<const std::uint8_t> data, std::uint32_t crc,
                            std::uint32_t conn_id = 0);

  // Returns the stored bytes and the sidecar CRC verbatim.
  std::pair<Bytes, std::uint32_t> read_record(const std::string& file_id, const std::string& name);
  std::optional<IndexEntry> lookup(const std::string& file_id, const std::string& name);
  bool delete_record(const std::string& file_id, const std::string& name);
  std::vector<IndexEntry> list_records(const std::string& file_id);

  std::vector<std::string> scrub(const std::string& file_id, const std::set<std::string>& committed,
                                 std::chrono::milliseconds min_age);
  // The predicate is re-evaluated right before each unlink.
  std::vector<std::string> scrub(const std::string& file_id,
                                 const std::function<bool(const std::string&)>& is_committed,
                                 std::chrono::milliseconds min_age);

  std::vector<std::string> file_ids();
  std::uint64_t bytes_used() const noexcept { return bytes_used_.load(); }
  // Re-reads the directory tree, discarding the in-memory index.
  void reload();

 private:
  friend class RecordWriter;
  using FileIndex = std::map<std::string, IndexEntry>;

  std::mutex& name_lock(const std::string& file_id, const std::string& name);
  FileIndex& index_locked(const std::string& file_id);
  void index_put(const std::string& file_id, const IndexEntry& e);
  void index_erase(const std::string& file_id, const std::string& name);
  void hook(WriteStep step) const {
    if (options_.fault_hook) options_.fault_hook(step);
  }
  void publish(RecordWriter& w);

  StoreOptions options_;
  std::array<std::mutex, 64> name_locks_;
  std::mutex index_mutex_;
  std::map<std::string, FileIndex> index_;
  std::atomic<std::uint64_t> bytes_used_{0};
};

}  // namespace storetorrent::store
