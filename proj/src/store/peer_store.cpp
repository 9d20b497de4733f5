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

#include "store/peer_store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "common/error.hpp"
#include "wire/crc32.hpp"

namespace storetorrent::store {
namespace {

constexpr std::string_view kSidecarSuffix = ".crc";
constexpr std::string_view kTempMarker = ".tmp.";

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

[[noreturn]] void throw_io(const std::string& what, int err) {
  throw Error(Errc::io, what + ": " + std::strerror(err));
}

void write_fully(int fd, const std::uint8_t* data, std::size_t n, const fs::path& path) {
  while (n > 0) {
    ssize_t w = ::write(fd, data, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw_io("write " + path.string(), errno);
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

void fsync_dir(const fs::path& dir) {
  int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

std::string sidecar_text(std::uint32_t crc, std::uint8_t rank) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%08x\nrank=%u\n", crc, static_cast<unsigned>(rank));
  return buf;
}

struct Sidecar {
  std::uint32_t crc = 0;
  std::uint8_t rank = 0;
};

std::optional<Sidecar> read_sidecar(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::string crc_line;
  std::string rank_line;
  std::getline(in, crc_line);
  std::getline(in, rank_line);
  if (crc_line.size() != 8) return std::nullopt;
  Sidecar s;
  char* end = nullptr;
  s.crc = static_cast<std::uint32_t>(std::strtoul(crc_line.c_str(), &end, 16));
  if (end != crc_line.c_str() + 8) return std::nullopt;
  if (rank_line.rfind("rank=", 0) == 0) {
    s.rank = static_cast<std::uint8_t>(std::strtoul(rank_line.c_str() + 5, nullptr, 10));
  }
  return s;
}

bool is_temp(const std::string& filename) { return filename.find(kTempMarker) != std::string::npos; }

fs::path sidecar_of(const fs::path& record) {
  fs::path p = record;
  p += kSidecarSuffix;
  return p;
}

std::chrono::milliseconds age_of(const fs::path& p) {
  std::error_code ec;
  auto mtime = fs::last_write_time(p, ec);
  if (ec) return std::chrono::milliseconds::zero();
  return std::chrono::duration_cast<std::chrono::milliseconds>(fs::file_time_type::clock::now() - mtime);
}

}  // namespace

void validate_record_name(const std::string& name) {
  if (name.empty()) throw Error(Errc::invalid_argument, "record name is empty");
  if (name.size() > kMaxNameLength) {
    throw Error(Errc::invalid_argument, "record name longer than " + std::to_string(kMaxNameLength) + " bytes");
  }
  if (name.find('/') != std::string::npos || name.find('\0') != std::string::npos) {
    throw Error(Errc::invalid_argument, "record name contains a path separator or NUL");
  }
  if (name == "." || name == ".." || ends_with(name, kSidecarSuffix) || is_temp(name)) {
    throw Error(Errc::invalid_argument, "record name '" + name + "' is reserved");
  }
}

void validate_file_id(const std::string& file_id) {
  if (file_id.empty() || file_id.size() > 255 || file_id == "." || file_id == ".." ||
      file_id.find('/') != std::string::npos || file_id.find('\0') != std::string::npos) {
    throw Error(Errc::invalid_argument, "invalid file id '" + file_id + "'");
  }
}

fs::path record_path(const fs::path& base, const std::string& file_id, const std::string& name) {
  validate_file_id(file_id);
  validate_record_name(name);
  char bucket[3];
  std::snprintf(bucket, sizeof(bucket), "%02x", wire::crc32(name) >> 24);
  return base / file_id / bucket / name;
}

std::vector<IndexEntry> walk_records(const fs::path& base, const std::string& file_id) {
  std::vector<IndexEntry> out;
  std::error_code ec;
  fs::path root = base / file_id;
  if (!fs::is_directory(root, ec)) return out;
  // Records may be deleted (scrub, DELETE) while we walk; vanished entries
  // are skipped rather than reported.
  for (const auto& bucket : fs::directory_iterator(root, ec)) {
    if (!bucket.is_directory(ec)) continue;
    for (const auto& entry : fs::directory_iterator(bucket.path(), ec)) {
      if (!entry.is_regular_file(ec)) continue;
      std::string filename = entry.path().filename().string();
      if (is_temp(filename) || ends_with(filename, kSidecarSuffix)) continue;
      auto side = read_sidecar(sidecar_of(entry.path()));
      if (!side) continue;
      std::error_code size_ec;
      auto size = fs::file_size(entry.path(), size_ec);
      if (size_ec) continue;
      out.push_back(IndexEntry{filename, side->rank, size, side->crc});
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return out;
}

// --- RecordWriter ---------------------------------------------------------

RecordWriter::RecordWriter(PeerStore& store, StoredRecord rec, std::uint32_t conn_id)
    : store_(&store), rec_(std::move(rec)), conn_id_(conn_id) {
  std::error_code ec;
  fs::create_directories(rec_.path.parent_path(), ec);
  temp_ = rec_.path;
  temp_ += std::string(kTempMarker) + std::to_string(conn_id_);
  fd_ = ::open(temp_.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd_ < 0) throw_io("open " + temp_.string(), errno);
  try {
    store_->hook(WriteStep::temp_opened);
  } catch (const SimulatedCrash&) {
    ::close(fd_);
    fd_ = -1;
    store_ = nullptr;
    throw;
  }
}

RecordWriter::RecordWriter(RecordWriter&& other) noexcept
    : store_(std::exchange(other.store_, nullptr)),
      rec_(std::move(other.rec_)),
      temp_(std::move(other.temp_)),
      fd_(std::exchange(other.fd_, -1)),
      written_(other.written_),
      conn_id_(other.conn_id_),
      half_reported_(other.half_reported_) {}

RecordWriter::~RecordWriter() { abort(); }

void RecordWriter::abort() noexcept {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
  if (store_ != nullptr) {
    std::error_code ec;
    fs::remove(temp_, ec);
    store_ = nullptr;
  }
}

void RecordWriter::write(std::span<const std::uint8_t> chunk) {
  if (store_ == nullptr) throw Error(Errc::internal, "write on a closed record writer");
  if (written_ + chunk.size() > rec_.size) {
    abort();
    throw Error(Errc::protocol, "record '" + rec_.name + "' longer than declared length");
  }
  try {
    std::uint64_t half = rec_.size / 2;
    if (!half_reported_ && rec_.size > 0 && written_ + chunk.size() > half) {
      // Split the write at the midpoint so a crash hook sees a half-written temp file.
      std::size_t first = static_cast<std::size_t>(half - written_);
      write_fully(fd_, chunk.data(), first, temp_);
      written_ += first;
      half_reported_ = true;
      store_->hook(WriteStep::half_written);
      chunk = chunk.subspan(first);
    }
    write_fully(fd_, chunk.data(), chunk.size(), temp_);
    written_ += chunk.size();
  } catch (const SimulatedCrash&) {
    ::close(fd_);
    fd_ = -1;
    store_ = nullptr;
    throw;
  } catch (...) {
    abort();
    throw;
  }
}

StoredRecord RecordWriter::finish() {
  if (store_ == nullptr) throw Error(Errc::internal, "finish on a closed record writer");
  if (written_ != rec_.size) {
    std::string msg = "short delivery for record '" + rec_.name + "': " + std::to_string(written_) + " of " +
                      std::to_string(rec_.size) + " bytes";
    abort();
    throw Error(Errc::io, msg);
  }
  try {
    store_->publish(*this);
  } catch (const SimulatedCrash&) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
    store_ = nullptr;
    throw;
  } catch (...) {
    abort();
    throw;
  }
  store_ = nullptr;
  return rec_;
}

// --- PeerStore ------------------------------------------------------------

PeerStore::PeerStore(StoreOptions options) : options_(std::move(options)) {
  std::error_code ec;
  fs::create_directories(options_.base, ec);
  if (ec) throw Error(Errc::io, "cannot create store base " + options_.base.string() + ": " + ec.message());
  reload();
}

void PeerStore::reload() {
  std::map<std::string, FileIndex> fresh;
  std::uint64_t used = 0;
  std::error_code ec;
  for (const auto& dir : fs::directory_iterator(options_.base, ec)) {
    if (!dir.is_directory()) continue;
    std::string file_id = dir.path().filename().string();
    auto& fi = fresh[file_id];
    for (auto& e : walk_records(options_.base, file_id)) {
      used += e.size;
      fi.emplace(e.name, std::move(e));
    }
  }
  std::lock_guard lock(index_mutex_);
  index_ = std::move(fresh);
  bytes_used_ = used;
}

std::mutex& PeerStore::name_lock(const std::string& file_id, const std::string& name) {
  std::size_t h = std::hash<std::string>{}(file_id) * 31 + std::hash<std::string>{}(name);
  return name_locks_[h % name_locks_.size()];
}

PeerStore::FileIndex& PeerStore::index_locked(const std::string& file_id) { return index_[file_id]; }

void PeerStore::index_put(const std::string& file_id, const IndexEntry& e) {
  std::lock_guard lock(index_mutex_);
  auto& fi = index_locked(file_id);
  auto it = fi.find(e.name);
  if (it != fi.end()) {
    bytes_used_ -= it->second.size;
    it->second = e;
  } else {
    fi.emplace(e.name, e);
  }
  bytes_used_ += e.size;
}

void PeerStore::index_erase(const std::string& file_id, const std::string& name) {
  std::lock_guard lock(index_mutex_);
  auto fit = index_.find(file_id);
  if (fit == index_.end()) return;
  auto it = fit->second.find(name);
  if (it == fit->second.end()) return;
  bytes_used_ -= it->second.size;
  fit->second.erase(it);
}

RecordWriter PeerStore::begin_record(const std::string& file_id, const std::string& name, std::uint8_t rank,
                                     std::uint64_t size, std::uint32_t crc, std::uint32_t conn_id) {
  StoredRecord rec{file_id, name, rank, size, crc, path_for(file_id, name)};
  return RecordWriter(*this, std::move(rec), conn_id);
}

void PeerStore::publish(RecordWriter& w) {
  const StoredRecord& rec = w.rec_;
  hook(WriteStep::data_written);
  if (options_.durable_write) {
    if (::fsync(w.fd_) != 0) throw_io("fsync " + w.temp_.string(), errno);
    ::posix_fadvise(w.fd_, 0, 0, POSIX_FADV_DONTNEED);
  }
  hook(WriteStep::data_synced);
  ::close(w.fd_);
  w.fd_ = -1;

  std::lock_guard lock(name_lock(rec.file_id, rec.name));
  fs::path sidecar = sidecar_of(rec.path);
  fs::path sidecar_tmp = sidecar;
  sidecar_tmp += std::string(kTempMarker) + std::to_string(w.conn_id_);
  {
    int fd = ::open(sidecar_tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw_io("open " + sidecar_tmp.string(), errno);
    std::string text = sidecar_text(rec.crc, rec.rank);
    try {
      write_fully(fd, reinterpret_cast<const std::uint8_t*>(text.data()), text.size(), sidecar_tmp);
      if (options_.durable_write && ::fsync(fd) != 0) throw_io("fsync " + sidecar_tmp.string(), errno);
    } catch (...) {
      ::close(fd);
      std::error_code ec;
      fs::remove(sidecar_tmp, ec);
      throw;
    }
    ::close(fd);
  }
  // Replacing a record with different content: hide the old one first so no
  // crash point can pair old bytes with the new checksum.
  if (auto old = read_sidecar(sidecar); old && old->crc != rec.crc) {
    if (::unlink(rec.path.c_str()) == 0) {
      index_erase(rec.file_id, rec.name);
      if (options_.durable_write) fsync_dir(rec.path.parent_path());
    }
  }
  if (::rename(sidecar_tmp.c_str(), sidecar.c_str()) != 0) {
    int err = errno;
    std::error_code ec;
    fs::remove(sidecar_tmp, ec);
    throw_io("rename " + sidecar_tmp.string(), err);
  }
  hook(WriteStep::sidecar_written);
  if (::rename(w.temp_.c_str(), rec.path.c_str()) != 0) throw_io("rename " + w.temp_.string(), errno);
  if (options_.durable_write) fsync_dir(rec.path.parent_path());
  index_put(rec.file_id, IndexEntry{rec.name, rec.rank, rec.size, rec.crc});
  hook(WriteStep::renamed);
}

StoredRecord PeerStore::store_record(const std::string& file_id, const std::string& name, std::uint8_t rank,
                                     std::span<const std::uint8_t> data, std::uint32_t crc,
                                     std::uint32_t conn_id) {
  auto writer = begin_record(file_id, name, rank, data.size(), crc, conn_id);
  writer.write(data);
  return writer.finish();
}

std::pair<Bytes, std::uint32_t> PeerStore::read_record(const std::string& file_id, const std::string& name) {
  fs::path path = path_for(file_id, name);
  std::lock_guard lock(name_lock(file_id, name));
  int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) {
    if (errno == ENOENT) throw Error(Errc::not_found, "record '" + name + "' not found");
    throw_io("open " + path.string(), errno);
  }
  Bytes data;
  struct stat st {};
  if (::fstat(fd, &st) == 0) data.reserve(static_cast<std::size_t>(st.st_size));
  std::uint8_t buf[1 << 16];
  while (true) {
    ssize_t n = ::read(fd, buf, sizeof(buf));
    if (n < 0) {
      if (errno == EINTR) continue;
      int err = errno;
      ::close(fd);
      throw_io("read " + path.string(), err);
    }
    if (n == 0) break;
    data.insert(data.end(), buf, buf + n);
  }
  ::close(fd);
  auto side = read_sidecar(sidecar_of(path));
  if (!side) throw Error(Errc::integrity, "record '" + name + "' has no readable checksum sidecar");
  return {std::move(data), side->crc};
}

std::optional<IndexEntry> PeerStore::lookup(const std::string& file_id, const std::string& name) {
  std::lock_guard lock(index_mutex_);
  auto fit = index_.find(file_id);
  if (fit == index_.end()) return std::nullopt;
  auto it = fit->second.find(name);
  if (it == fit->second.end()) return std::nullopt;
  return it->second;
}

bool PeerStore::delete_record(const std::string& file_id, const std::string& name) {
  fs::path path = path_for(file_id, name);
  std::lock_guard lock(name_lock(file_id, name));
  bool existed = true;
  if (::unlink(path.c_str()) != 0) {
    if (errno != ENOENT) throw_io("unlink " + path.string(), errno);
    existed = false;
  }
  fs::path sidecar = sidecar_of(path);
  if (::unlink(sidecar.c_str()) != 0 && errno != ENOENT) {
    spdlog::warn("cannot remove sidecar {}: {}", sidecar.string(), std::strerror(errno));
  }
  index_erase(file_id, name);
  return existed;
}

std::vector<IndexEntry> PeerStore::list_records(const std::string& file_id) {
  std::lock_guard lock(index_mutex_);
  std::vector<IndexEntry> out;
  auto fit = index_.find(file_id);
  if (fit == index_.end()) return out;
  out.reserve(fit->second.size());
  for (const auto& [_, e] : fit->second) out.push_back(e);
  return out;
}

std::vector<std::string> PeerStore::file_ids() {
  std::lock_guard lock(index_mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : index_) out.push_back(id);
  return out;
}

std::vector<std::string> PeerStore::scrub(const std::string& file_id, const std::set<std::string>& committed,
                                          std::chrono::milliseconds min_age) {
  return scrub(
      file_id, [&committed](const std::string& n) { return committed.count(n) > 0; }, min_age);
}

std::vector<std::string> PeerStore::scrub(const std::string& file_id,
                                          const std::function<bool(const std::string&)>& is_committed,
                                          std::chrono::milliseconds min_age) {
  validate_file_id(file_id);
  std::vector<std::string> removed;
  std::error_code ec;
  fs::path root = options_.base / file_id;
  if (!fs::is_directory(root, ec)) return removed;

  std::vector<fs::path> files;
  for (const auto& bucket : fs::directory_iterator(root, ec)) {
    if (!bucket.is_directory()) continue;
    for (const auto& entry : fs::directory_iterator(bucket.path(), ec)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());

  for (const auto& path : files) {
    std::string filename = path.filename().string();
    try {
      if (age_of(path) < min_age) continue;
      if (is_temp(filename)) {
        if (fs::remove(path, ec)) removed.push_back(filename);
        continue;
      }
      if (ends_with(filename, kSidecarSuffix)) {
        // Orphaned sidecar of a record that never got renamed into place.
        fs::path record = path;
        record.replace_extension();
        if (!fs::exists(record, ec) && fs::remove(path, ec)) removed.push_back(filename);
        continue;
      }
      if (is_committed(filename)) continue;
      std::lock_guard lock(name_lock(file_id, filename));
      if (is_committed(filename)) continue;
      if (::unlink(path.c_str()) != 0) {
        if (errno != ENOENT) spdlog::warn("scrub: cannot remove {}: {}", path.string(), std::strerror(errno));
        continue;
      }
      ::unlink(sidecar_of(path).c_str());
      index_erase(file_id, filename);
      removed.push_back(filename);
    } catch (const std::exception& e) {
      spdlog::warn("scrub: skipping {}: {}", path.string(), e.what());
    }
  }
  return removed;
}

}  // namespace storetorrent::store
