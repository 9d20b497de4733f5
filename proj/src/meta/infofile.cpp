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

#include "meta/infofile.hpp"

#include <sqlite3.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <map>
#include <sstream>

#include "common/error.hpp"

namespace storetorrent::meta {
namespace {

constexpr const char* kSchema = R"sql(
CREATE TABLE meta(key TEXT PRIMARY KEY, value TEXT NOT NULL) WITHOUT ROWID;
CREATE TABLE peers(peer_id INTEGER PRIMARY KEY, addr TEXT NOT NULL, port INTEGER NOT NULL);
CREATE TABLE records(
  name TEXT PRIMARY KEY,
  size INTEGER NOT NULL,
  crc INTEGER NOT NULL,
  locations TEXT NOT NULL
) WITHOUT ROWID;
)sql";

[[noreturn]] void throw_sqlite(sqlite3* db, const std::string& what) {
  int rc = db ? sqlite3_errcode(db) : SQLITE_ERROR;
  std::string msg = what + ": " + (db ? sqlite3_errmsg(db) : "sqlite error");
  if (rc == SQLITE_CANTOPEN) throw Error(Errc::not_found, msg);
  throw Error(Errc::io, msg);
}

class Statement {
 public:
  Statement(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK) throw_sqlite(db, "prepare");
  }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;
  ~Statement() { sqlite3_finalize(stmt_); }

  Statement& bind(int idx, const std::string& v) {
    sqlite3_bind_text(stmt_, idx, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
    return *this;
  }
  Statement& bind(int idx, std::int64_t v) {
    sqlite3_bind_int64(stmt_, idx, v);
    return *this;
  }
  // True while a row is available.
  bool step() {
    int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw_sqlite(db_, "step");
  }
  void reset() {
    sqlite3_reset(stmt_);
    sqlite3_clear_bindings(stmt_);
  }
  std::string text(int col) {
    auto* p = sqlite3_column_text(stmt_, col);
    return p ? std::string(reinterpret_cast<const char*>(p), static_cast<std::size_t>(sqlite3_column_bytes(stmt_, col)))
             : std::string();
  }
  std::int64_t integer(int col) { return sqlite3_column_int64(stmt_, col); }

 private:
  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

// Rolls back unless commit() was reached.
class Transaction {
 public:
  Transaction(sqlite3* db, const char* begin) : db_(db) {
    if (sqlite3_exec(db_, begin, nullptr, nullptr, nullptr) != SQLITE_OK) throw_sqlite(db_, begin);
  }
  ~Transaction() {
    if (!done_) sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
  }
  void commit() {
    if (sqlite3_exec(db_, "COMMIT", nullptr, nullptr, nullptr) != SQLITE_OK) throw_sqlite(db_, "COMMIT");
    done_ = true;
  }

 private:
  sqlite3* db_;
  bool done_ = false;
};

sqlite3* open_db(const fs::path& location, int flags) {
  sqlite3* db = nullptr;
  int rc = sqlite3_open_v2(location.c_str(), &db, flags | SQLITE_OPEN_NOMUTEX, nullptr);
  if (rc != SQLITE_OK) {
    std::string msg = std::string("open infofile ") + location.string() + ": " +
                      (db ? sqlite3_errmsg(db) : sqlite3_errstr(rc));
    sqlite3_close(db);
    throw Error(rc == SQLITE_CANTOPEN ? Errc::not_found : Errc::io, msg);
  }
  sqlite3_busy_timeout(db, 10000);
  return db;
}

std::map<std::string, std::string> read_meta(sqlite3* db) {
  std::map<std::string, std::string> kv;
  Statement st(db, "SELECT key, value FROM meta");
  while (st.step()) kv[st.text(0)] = st.text(1);
  return kv;
}

void write_meta(sqlite3* db, const std::string& key, const std::string& value) {
  Statement st(db, "INSERT OR REPLACE INTO meta(key, value) VALUES(?1, ?2)");
  st.bind(1, key).bind(2, value);
  st.step();
}

RecordMeta row_to_record(Statement& st) {
  RecordMeta r;
  r.name = st.text(0);
  r.size = static_cast<std::uint64_t>(st.integer(1));
  r.crc = static_cast<std::uint32_t>(st.integer(2));
  r.locations = decode_locations(st.text(3));
  return r;
}

std::atomic<std::uint64_t> g_create_counter{0};

}  // namespace

FtClass FtClass::parse(const std::string& name) {
  if (name.size() < 2 || (name[0] != 'x' && name[0] != 'X')) {
    throw Error(Errc::invalid_argument, "unknown fault-tolerant class '" + name + "' (expected x<F>)");
  }
  int copies = 0;
  for (std::size_t i = 1; i < name.size(); ++i) {
    if (name[i] < '0' || name[i] > '9' || copies > 255) {
      throw Error(Errc::invalid_argument, "unknown fault-tolerant class '" + name + "'");
    }
    copies = copies * 10 + (name[i] - '0');
  }
  if (copies < 1 || copies > 255) throw Error(Errc::invalid_argument, "copy count must be in [1, 255]");
  return FtClass{copies};
}

std::string normalize_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    if (cur == "." || cur == "..") throw Error(Errc::invalid_argument, "path component '" + cur + "' not allowed");
    parts.push_back(cur);
    cur.clear();
  };
  for (char c : path) {
    if (c == '/') {
      flush();
    } else if (c == '\0') {
      throw Error(Errc::invalid_argument, "path contains NUL");
    } else {
      cur.push_back(c);
    }
  }
  flush();
  if (parts.empty()) throw Error(Errc::invalid_argument, "empty path");
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out.push_back('/');
    out += p;
  }
  return out;
}

std::string file_id_for(const std::string& normalized_path) {
  std::string out;
  for (char c : normalized_path) {
    if (c == '%') {
      out += "%25";
    } else if (c == '/') {
      out += "%2F";
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::string path_for_file_id(const std::string& file_id) {
  std::string out;
  for (std::size_t i = 0; i < file_id.size(); ++i) {
    if (file_id[i] == '%' && i + 2 < file_id.size()) {
      std::string code = file_id.substr(i + 1, 2);
      if (code == "25") {
        out.push_back('%');
        i += 2;
        continue;
      }
      if (code == "2F" || code == "2f") {
        out.push_back('/');
        i += 2;
        continue;
      }
    }
    out.push_back(file_id[i]);
  }
  return out;
}

std::string encode_locations(const std::vector<std::uint16_t>& locations) {
  std::string out;
  for (std::size_t i = 0; i < locations.size(); ++i) {
    if (i) out.push_back(',');
    out += std::to_string(locations[i]);
  }
  return out;
}

std::vector<std::uint16_t> decode_locations(const std::string& text) {
  std::vector<std::uint16_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(static_cast<std::uint16_t>(std::stoul(item)));
  }
  return out;
}

Infofile Infofile::create(const fs::path& location, const FileInfo& info) {
  std::error_code ec;
  fs::create_directories(location.parent_path(), ec);
  if (fs::exists(location, ec)) throw Error(Errc::already_exists, "file " + info.path + " already exists");

  fs::path temp = location;
  temp += ".creating." + std::to_string(::getpid()) + "." + std::to_string(g_create_counter++);
  {
    sqlite3* raw = open_db(temp, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE);
    Infofile db(raw, temp, Mode::read_write);
    try {
      db.exec(kSchema);
      Transaction tx(raw, "BEGIN IMMEDIATE");
      write_meta(raw, "path", info.path);
      write_meta(raw, "file_id", info.file_id);
      write_meta(raw, "ft_class", info.ft.name());
      write_meta(raw, "est_size", std::to_string(info.est_size));
      write_meta(raw, "quota_bytes", std::to_string(info.quota_bytes));
      write_meta(raw, "quota_used", "0");
      Statement st(raw, "INSERT INTO peers(peer_id, addr, port) VALUES(?1, ?2, ?3)");
      for (const auto& p : info.peerlist) {
        st.bind(1, std::int64_t{p.peer_id}).bind(2, p.addr).bind(3, std::int64_t{p.port});
        st.step();
        st.reset();
      }
      tx.commit();
    } catch (...) {
      fs::remove(temp, ec);
      throw;
    }
  }
  if (::link(temp.c_str(), location.c_str()) != 0) {
    int err = errno;
    fs::remove(temp, ec);
    if (err == EEXIST) throw Error(Errc::already_exists, "file " + info.path + " already exists");
    throw Error(Errc::io, "link infofile " + location.string() + ": " + std::strerror(err));
  }
  fs::remove(temp, ec);
  return open(location, Mode::read_write);
}

Infofile Infofile::open(const fs::path& location, Mode mode) {
  std::error_code ec;
  if (!fs::is_regular_file(location, ec)) throw Error(Errc::not_found, "no infofile at " + location.string());
  int flags = mode == Mode::read_only ? SQLITE_OPEN_READONLY : SQLITE_OPEN_READWRITE;
  return Infofile(open_db(location, flags), location, mode);
}

Infofile::Infofile(Infofile&& other) noexcept
    : db_(std::exchange(other.db_, nullptr)), location_(std::move(other.location_)), mode_(other.mode_) {}

Infofile& Infofile::operator=(Infofile&& other) noexcept {
  if (this != &other) {
    sqlite3_close(db_);
    db_ = std::exchange(other.db_, nullptr);
    location_ = std::move(other.location_);
    mode_ = other.mode_;
  }
  return *this;
}

Infofile::~Infofile() { sqlite3_close(db_); }

void Infofile::exec(const char* sql) {
  char* err = nullptr;
  if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "exec failed";
    sqlite3_free(err);
    throw Error(Errc::io, msg);
  }
}

void Infofile::require_writable() const {
  if (mode_ != Mode::read_write) throw Error(Errc::internal, "infofile opened read-only");
}

FileInfo Infofile::info() {
  Transaction tx(db_, "BEGIN");
  auto kv = read_meta(db_);
  FileInfo fi;
  fi.path = kv["path"];
  fi.file_id = kv["file_id"];
  fi.ft = FtClass::parse(kv["ft_class"]);
  fi.est_size = std::stoull(kv["est_size"]);
  fi.quota_bytes = std::stoull(kv["quota_bytes"]);
  fi.quota_used = std::stoull(kv["quota_used"]);
  Statement st(db_, "SELECT peer_id, addr, port FROM peers ORDER BY peer_id");
  while (st.step()) {
    fi.peerlist.push_back(PeerInfo{static_cast<std::uint16_t>(st.integer(0)), st.text(1),
                                   static_cast<std::uint16_t>(st.integer(2))});
  }
  tx.commit();
  return fi;
}

std::optional<RecordMeta> Infofile::lookup(const std::string& name) {
  Statement st(db_, "SELECT name, size, crc, locations FROM records WHERE name = ?1");
  st.bind(1, name);
  if (!st.step()) return std::nullopt;
  return row_to_record(st);
}

std::vector<RecordMeta> Infofile::records() {
  std::vector<RecordMeta> out;
  Statement st(db_, "SELECT name, size, crc, locations FROM records ORDER BY name");
  while (st.step()) out.push_back(row_to_record(st));
  return out;
}

std::vector<std::string> Infofile::names() {
  std::vector<std::string> out;
  Statement st(db_, "SELECT name FROM records ORDER BY name");
  while (st.step()) out.push_back(st.text(0));
  return out;
}

std::set<std::string> Infofile::name_set() {
  auto v = names();
  return std::set<std::string>(v.begin(), v.end());
}

std::size_t Infofile::record_count() {
  Statement st(db_, "SELECT COUNT(*) FROM records");
  st.step();
  return static_cast<std::size_t>(st.integer(0));
}

std::size_t Infofile::commit(const std::vector<RecordMeta>& batch,
                             const std::function<bool(std::uint16_t)>& is_alive) {
  require_writable();
  if (batch.empty()) return 0;
  Transaction tx(db_, "BEGIN IMMEDIATE");
  auto kv = read_meta(db_);
  auto ft = FtClass::parse(kv["ft_class"]);
  std::uint64_t quota_bytes = std::stoull(kv["quota_bytes"]);
  std::uint64_t used = std::stoull(kv["quota_used"]);

  std::set<std::uint16_t> peer_ids;
  {
    Statement st(db_, "SELECT peer_id FROM peers");
    while (st.step()) peer_ids.insert(static_cast<std::uint16_t>(st.integer(0)));
  }

  Statement find(db_, "SELECT name, size, crc, locations FROM records WHERE name = ?1");
  Statement upsert(db_, "INSERT OR REPLACE INTO records(name, size, crc, locations) VALUES(?1, ?2, ?3, ?4)");
  std::set<std::string> seen;
  for (const auto& rec : batch) {
    if (!seen.insert(rec.name).second) {
      throw Error(Errc::invalid_argument, "record '" + rec.name + "' appears twice in one commit batch");
    }
    if (rec.locations.size() != static_cast<std::size_t>(ft.copies)) {
      throw Error(Errc::invalid_argument, "record '" + rec.name + "' has " + std::to_string(rec.locations.size()) +
                                              " locations, class " + ft.name() + " needs " +
                                              std::to_string(ft.copies));
    }
    std::set<std::uint16_t> distinct(rec.locations.begin(), rec.locations.end());
    if (distinct.size() != rec.locations.size()) {
      throw Error(Errc::invalid_argument, "record '" + rec.name + "' locations are not distinct peers");
    }
    for (auto id : rec.locations) {
      if (!peer_ids.count(id)) {
        throw Error(Errc::invalid_argument, "record '" + rec.name + "' names peer " + std::to_string(id) +
                                                " outside the peerlist");
      }
    }
    std::uint64_t old_bytes = 0;
    find.bind(1, rec.name);
    if (find.step()) {
      RecordMeta prior = row_to_record(find);
      old_bytes = prior.size * prior.locations.size();
      // A rewrite may only replace failed holders; alive holders keep their rank.
      for (std::size_t rank = 0; rank < prior.locations.size(); ++rank) {
        std::uint16_t holder = prior.locations[rank];
        if (!is_alive(holder)) continue;
        if (rank >= rec.locations.size() || rec.locations[rank] != holder) {
          throw Error(Errc::invalid_argument, "recommit of '" + rec.name + "' drops alive holder peer " +
                                                  std::to_string(holder) + " at rank " + std::to_string(rank));
        }
      }
    }
    find.reset();
    std::uint64_t new_bytes = rec.size * rec.locations.size();
    used = used - std::min(used, old_bytes) + new_bytes;
    if (quota_bytes > 0 && used > quota_bytes) {
      throw Error(Errc::quota, "commit would use " + std::to_string(used) + " bytes, quota is " +
                                   std::to_string(quota_bytes));
    }
    upsert.bind(1, rec.name)
        .bind(2, static_cast<std::int64_t>(rec.size))
        .bind(3, static_cast<std::int64_t>(rec.crc))
        .bind(4, encode_locations(rec.locations));
    upsert.step();
    upsert.reset();
  }
  write_meta(db_, "quota_used", std::to_string(used));
  tx.commit();
  return batch.size();
}

std::size_t Infofile::remove(const std::vector<std::string>& names) {
  require_writable();
  if (names.empty()) return 0;
  Transaction tx(db_, "BEGIN IMMEDIATE");
  auto kv = read_meta(db_);
  std::uint64_t used = std::stoull(kv["quota_used"]);
  std::size_t removed = 0;
  Statement find(db_, "SELECT name, size, crc, locations FROM records WHERE name = ?1");
  Statement del(db_, "DELETE FROM records WHERE name = ?1");
  for (const auto& name : names) {
    find.bind(1, name);
    if (find.step()) {
      RecordMeta prior = row_to_record(find);
      used -= std::min<std::uint64_t>(used, prior.size * prior.locations.size());
      del.bind(1, name);
      del.step();
      del.reset();
      ++removed;
    }
    find.reset();
  }
  write_meta(db_, "quota_used", std::to_string(used));
  tx.commit();
  return removed;
}

}  // namespace storetorrent::meta
