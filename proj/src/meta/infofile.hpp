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

// Per-file metadata database ("infofile"). One SQLite database per
// StoreTorrent file, stored at <root>/<path>. The tracker is the only
// writer; clients and peers open it read-only, possibly over a shared
// filesystem, and always see either the pre- or post-commit record set.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

struct sqlite3;

namespace storetorrent::meta {

namespace fs = std::filesystem;

struct PeerInfo {
  std::uint16_t peer_id = 0;
  std::string addr;
  std::uint16_t port = 0;
  bool operator==(const PeerInfo&) const = default;
};

// Fault-tolerant class "x<F>": F whole copies on F distinct peers.
struct FtClass {
  int copies = 2;

  static FtClass parse(const std::string& name);
  std::string name() const { return "x" + std::to_string(copies); }
  bool operator==(const FtClass&) const = default;
};

struct RecordMeta {
  std::string name;
  std::uint64_t size = 0;
  std::uint32_t crc = 0;
  // locations[rank] = peer_id
  std::vector<std::uint16_t> locations;
  bool operator==(const RecordMeta&) const = default;
};

struct FileInfo {
  std::string path;     // normalized StoreTorrent path, e.g. "foo/bar/baz"
  std::string file_id;  // directory-safe encoding of path, used by peers
  FtClass ft;
  std::uint64_t est_size = 0;
  std::uint64_t quota_bytes = 0;  // 0 = unlimited
  std::uint64_t quota_used = 0;
  std::vector<PeerInfo> peerlist;
};

// "/foo/bar" and "foo/bar" both normalize to "foo/bar". Rejects empty
// paths and "." / ".." components.
std::string normalize_path(const std::string& path);
// Reversible, '/'-free encoding of a normalized path.
std::string file_id_for(const std::string& normalized_path);
std::string path_for_file_id(const std::string& file_id);

std::string encode_locations(const std::vector<std::uint16_t>& locations);
std::vector<std::uint16_t> decode_locations(const std::string& text);

class Infofile {
 public:
  enum class Mode { read_only, read_write };

  // Creates the database atomically: built under a temporary name, then
  // hard-linked into place so a concurrent create of the same path fails
  // with already_exists.
  static Infofile create(const fs::path& location, const FileInfo& info);
  static Infofile open(const fs::path& location, Mode mode);

  Infofile(Infofile&& other) noexcept;
  Infofile& operator=(Infofile&& other) noexcept;
  Infofile(const Infofile&) = delete;
  Infofile& operator=(const Infofile&) = delete;
  ~Infofile();

  FileInfo info();
  std::optional<RecordMeta> lookup(const std::string& name);
  std::vector<RecordMeta> records();
  std::vector<std::string> names();
  std::set<std::string> name_set();
  std::size_t record_count();

  // All-or-nothing batch commit. Throws Error(quota) when the batch would
  // exceed the file's quota, Error(invalid_argument) when a location set is
  // malformed or a recommit drops a holder that is_alive() reports alive.
  // Returns the number of records written.
  std::size_t commit(const std::vector<RecordMeta>& batch,
                     const std::function<bool(std::uint16_t)>& is_alive);
  std::size_t remove(const std::vector<std::string>& names);

  const fs::path& location() const noexcept { return location_; }

 private:
  Infofile(sqlite3* db, fs::path location, Mode mode) : db_(db), location_(std::move(location)), mode_(mode) {}
  void exec(const char* sql);
  void require_writable() const;

  sqlite3* db_ = nullptr;
  fs::path location_;
  Mode mode_ = Mode::read_only;
};

}  // namespace storetorrent::meta
