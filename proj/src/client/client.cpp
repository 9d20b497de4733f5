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

#include "client/client.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/uio.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstring>
#include <deque>
#include <map>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "common/crypto.hpp"
#include "common/http.hpp"
#include "common/net.hpp"
#include "store/peer_store.hpp"
#include "wire/crc32.hpp"

namespace storetorrent::client {

using Clock = std::chrono::steady_clock;
using http::json;

namespace {

constexpr std::size_t kRecvChunk = 1 << 20;
constexpr int kMaxIov = 64;

enum class OpKind { put, get, del };

struct SeqRef {
  OpKind kind = OpKind::put;
  std::string name;
  std::uint8_t rank = 0;
  std::uint64_t op = 0;
};

struct OutFrame {
  Bytes head;
  std::shared_ptr<const Bytes> data;
  std::size_t sent = 0;
  std::string put_name;  // set for PUT frames, for the fault hook
  bool half_reported = false;
  std::size_t size() const { return head.size() + (data ? data->size() : 0); }
};

struct PeerConn {
  meta::PeerInfo peer;
  net::Fd fd;
  bool connecting = false;
  bool dead = false;
  int connect_error = 0;
  wire::FrameDecoder decoder;
  std::deque<OutFrame> out;
  std::map<std::uint32_t, SeqRef> inflight;
  Clock::time_point last_progress = Clock::now();
};

struct PendingRecord {
  std::string name;
  std::shared_ptr<const Bytes> data;
  std::uint32_t crc = 0;
  std::vector<std::uint16_t> locations;
  std::vector<bool> acked;
  std::set<std::uint16_t> excluded;
  int retries = 0;
};

struct GetOp {
  std::string name;
  std::vector<std::uint16_t> holders;
  std::size_t next = 0;
  GetCallback cb;
  bool crc_mismatch = false;
  std::string last_error;
};

struct DelOp {
  std::set<std::uint16_t> waiting;
};

meta::FileInfo parse_info(const json& j) {
  meta::FileInfo info;
  info.path = j.at("path").get<std::string>();
  info.file_id = j.at("file_id").get<std::string>();
  info.ft = meta::FtClass::parse(j.at("ft_class").get<std::string>());
  info.est_size = j.value("est_size", std::uint64_t{0});
  info.quota_bytes = j.value("quota_bytes", std::uint64_t{0});
  info.quota_used = j.value("quota_used", std::uint64_t{0});
  for (const auto& p : j.at("peerlist")) {
    info.peerlist.push_back(
        meta::PeerInfo{p.at("peer_id").get<std::uint16_t>(), p.at("addr").get<std::string>(), p.at("port").get<std::uint16_t>()});
  }
  return info;
}

// Starts a non-blocking connect. Returns the socket and the immediate error,
// if any.
std::pair<net::Fd, int> start_connect(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res) {
    return {net::Fd(), EHOSTUNREACH};
  }
  net::Fd fd(::socket(res->ai_family, SOCK_STREAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0));
  int err = 0;
  if (!fd.valid()) {
    err = errno;
  } else {
    net::set_nodelay(fd.get());
    if (::connect(fd.get(), res->ai_addr, res->ai_addrlen) != 0 && errno != EINPROGRESS) err = errno;
  }
  ::freeaddrinfo(res);
  return {std::move(fd), err};
}

bool is_id_list(const std::string& s) {
  return !s.empty() && s.find_first_not_of("0123456789,") == std::string::npos;
}

}  // namespace

std::string default_client_id() {
  static std::atomic<unsigned> counter{0};
  char host[256] = {0};
  ::gethostname(host, sizeof(host) - 1);
  return std::string(host) + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
}

struct FileHandle::Impl {
  ClientConfig config;
  meta::FileInfo info;
  Bytes cert;
  bool writable = false;
  std::string tracker_prefix;
  std::unique_ptr<http::JsonClient> tracker;
  std::optional<meta::Infofile> db;

  std::set<std::uint16_t> failed;
  std::set<std::uint16_t> reported;
  std::map<std::uint16_t, std::unique_ptr<PeerConn>> conns;
  std::unique_ptr<Placer> placer;

  std::map<std::string, PendingRecord> records;  // awaiting acks
  std::vector<PendingRecord> batch;              // acked, awaiting commit
  Clock::time_point batch_started;
  Clock::time_point batch_grew;
  Clock::time_point commit_retry_at;
  std::map<std::uint64_t, GetOp> gets;
  std::map<std::uint64_t, DelOp> dels;
  std::uint64_t next_op = 1;
  std::uint32_t next_seq = 1;
  std::vector<Event> events;
  std::vector<std::string> deferred_deletes;
  std::uint64_t commit_tx = 0;
  std::uint64_t quota_pending = 0;
  Bytes recv_buf = Bytes(kRecvChunk);

  const meta::PeerInfo* peer(std::uint16_t id) const {
    for (const auto& p : info.peerlist) {
      if (p.peer_id == id) return &p;
    }
    return nullptr;
  }

  meta::Infofile& infofile() {
    if (!db) db = meta::Infofile::open(config.meta_root / info.path, meta::Infofile::Mode::read_only);
    return *db;
  }

  std::uint32_t seq() {
    std::uint32_t s = next_seq++;
    if (next_seq == wire::kConnectionScope) next_seq = 1;
    return s;
  }

  PeerConn& conn(std::uint16_t id) {
    auto& slot = conns[id];
    if (slot && !slot->dead) return *slot;
    const auto* p = peer(id);
    if (!p) throw Error(Errc::invalid_argument, "peer " + std::to_string(id) + " is not in the peerlist");
    slot = std::make_unique<PeerConn>();
    slot->peer = *p;
    auto [fd, err] = start_connect(p->addr, p->port);
    slot->fd = std::move(fd);
    slot->connecting = true;
    slot->connect_error = err;
    slot->last_progress = Clock::now();
    OutFrame hello;
    hello.head = wire::encode_message(wire::Handshake{wire::kProtocolVersion, config.client_id, info.file_id, cert});
    slot->out.push_back(std::move(hello));
    return *slot;
  }

  void hook(PutStep step, const std::string& name) const {
    if (config.fault_hook) config.fault_hook(step, {name});
  }
  void hook(PutStep step, const std::vector<PendingRecord>& batch) const {
    if (!config.fault_hook) return;
    std::vector<std::string> names;
    for (const auto& r : batch) names.push_back(r.name);
    config.fault_hook(step, names);
  }

  std::uint32_t enqueue(PeerConn& c, Bytes head, std::shared_ptr<const Bytes> data, SeqRef ref, std::uint32_t s) {
    if (c.inflight.empty()) c.last_progress = Clock::now();
    OutFrame f;
    f.head = std::move(head);
    f.data = std::move(data);
    if (ref.kind == OpKind::put) f.put_name = ref.name;
    c.out.push_back(std::move(f));
    c.inflight.emplace(s, std::move(ref));
    return s;
  }

  void send_put(PendingRecord& r, std::uint8_t rank) {
    auto& c = conn(r.locations[rank]);
    auto s = seq();
    enqueue(c, wire::encode_put_header(s, rank, r.name, r.crc, r.data->size()), r.data,
            SeqRef{OpKind::put, r.name, rank, 0}, s);
  }

  void mark_failed(std::uint16_t id, const std::string& why) {
    if (!failed.insert(id).second) return;
    spdlog::warn("client: peer {} failed: {}", id, why);
    if (!tracker || reported.count(id)) return;
    reported.insert(id);
    try {
      http::JsonClient quick(config.tracker_url, std::chrono::milliseconds(1000));
      quick.post("/report_failure", json{{"path", info.path}, {"peer_id", id}});
    } catch (const Error& e) {
      spdlog::debug("client: failure report for peer {} not delivered: {}", id, e.what());
    }
  }

  void fail_record(const std::string& name, Errc code, const std::string& message) {
    auto it = records.find(name);
    if (it == records.end()) return;
    quota_pending -= std::min<std::uint64_t>(quota_pending, it->second.data->size() * it->second.locations.size());
    records.erase(it);
    events.push_back(Event{Event::Type::failed, name, code, message});
  }

  // Moves one copy of a record away from `bad`.
  void reassign(const std::string& name, std::uint8_t rank, std::uint16_t bad, const std::string& why) {
    auto it = records.find(name);
    if (it == records.end()) return;
    auto& r = it->second;
    if (rank >= r.locations.size() || r.locations[rank] != bad) return;
    r.excluded.insert(bad);
    if (++r.retries > config.retry_budget) {
      fail_record(name, Errc::peer_failed, "retry budget exhausted for '" + name + "': " + why);
      return;
    }
    std::set<std::uint16_t> exclude = failed;
    exclude.insert(r.excluded.begin(), r.excluded.end());
    exclude.insert(r.locations.begin(), r.locations.end());
    auto q = placer->replacement(exclude);
    if (!q) {
      fail_record(name, Errc::capacity, "no replacement peer for '" + name + "' rank " + std::to_string(rank));
      return;
    }
    r.locations[rank] = *q;
    r.acked[rank] = false;
    send_put(r, rank);
  }

  void fail_conn(PeerConn& c, const std::string& why) {
    if (c.dead) return;
    c.dead = true;
    c.fd.reset();
    c.out.clear();
    auto refs = std::move(c.inflight);
    c.inflight.clear();
    const auto id = c.peer.peer_id;
    if (refs.empty()) return;  // idle connection closed; nothing lost
    mark_failed(id, why);
    for (auto& [s, ref] : refs) {
      switch (ref.kind) {
        case OpKind::put:
          reassign(ref.name, ref.rank, id, why);
          break;
        case OpKind::get:
          advance_get(ref.op, "peer " + std::to_string(id) + ": " + why);
          break;
        case OpKind::del:
          if (auto d = dels.find(ref.op); d != dels.end()) d->second.waiting.erase(id);
          break;
      }
    }
  }

  void advance_get(std::uint64_t op_id, const std::string& why) {
    auto it = gets.find(op_id);
    if (it == gets.end()) return;
    auto& op = it->second;
    if (!why.empty()) op.last_error = why;
    while (op.next < op.holders.size()) {
      auto holder = op.holders[op.next++];
      try {
        auto& c = conn(holder);
        auto s = seq();
        enqueue(c, wire::encode_message(wire::Get{s, op.name}), nullptr, SeqRef{OpKind::get, op.name, 0, op_id}, s);
        return;
      } catch (const Error& e) {
        op.last_error = e.what();
      }
    }
    auto cb = std::move(op.cb);
    auto name = op.name;
    Error err = op.crc_mismatch
                    ? Error(Errc::integrity, "record '" + name + "': checksum mismatch on every holder")
                    : Error(Errc::unavailable, "record '" + name + "' unavailable: " + op.last_error);
    gets.erase(it);
    cb(name, std::nullopt, &err);
  }

  void on_piece(std::uint64_t op_id, std::uint16_t from, wire::Piece& piece) {
    auto it = gets.find(op_id);
    if (it == gets.end()) return;
    if (wire::crc32(piece.data) != piece.crc) {
      it->second.crc_mismatch = true;
      advance_get(op_id, "checksum mismatch from peer " + std::to_string(from));
      return;
    }
    auto cb = std::move(it->second.cb);
    auto name = it->second.name;
    gets.erase(it);
    cb(name, std::move(piece.data), nullptr);
  }

  void on_put_ack(std::uint16_t from, const SeqRef& ref) {
    auto it = records.find(ref.name);
    if (it == records.end()) return;
    auto& r = it->second;
    if (ref.rank >= r.locations.size() || r.locations[ref.rank] != from) return;
    r.acked[ref.rank] = true;
    if (std::find(r.acked.begin(), r.acked.end(), false) != r.acked.end()) return;
    if (batch.empty()) batch_started = Clock::now();
    batch_grew = Clock::now();
    batch.push_back(std::move(r));
    records.erase(it);
    hook(PutStep::acked, ref.name);
  }

  void handle(PeerConn& c, wire::Message& m) {
    c.last_progress = Clock::now();
    auto take = [&](std::uint32_t s) -> std::optional<SeqRef> {
      auto it = c.inflight.find(s);
      if (it == c.inflight.end()) return std::nullopt;
      auto ref = std::move(it->second);
      c.inflight.erase(it);
      return ref;
    };
    const auto id = c.peer.peer_id;
    if (auto* ack = std::get_if<wire::PutAck>(&m)) {
      auto ref = take(ack->seq);
      if (!ref) return;
      if (ack->status == 0) {
        on_put_ack(id, *ref);
      } else {
        reassign(ref->name, ref->rank, id, "negative PUT_ACK");
      }
    } else if (auto* piece = std::get_if<wire::Piece>(&m)) {
      auto ref = take(piece->seq);
      if (ref) on_piece(ref->op, id, *piece);
    } else if (auto* dack = std::get_if<wire::DeleteAck>(&m)) {
      auto ref = take(dack->seq);
      if (ref) {
        if (auto d = dels.find(ref->op); d != dels.end()) d->second.waiting.erase(id);
      }
    } else if (auto* err = std::get_if<wire::ErrorMsg>(&m)) {
      if (err->seq == wire::kConnectionScope) {
        fail_conn(c, "peer error: " + err->detail);
        return;
      }
      auto ref = take(err->seq);
      if (!ref) return;
      std::string why = "peer " + std::to_string(id) + ": " + err->detail;
      switch (ref->kind) {
        case OpKind::put:
          reassign(ref->name, ref->rank, id, why);
          break;
        case OpKind::get:
          advance_get(ref->op, why);
          break;
        case OpKind::del:
          if (auto d = dels.find(ref->op); d != dels.end()) d->second.waiting.erase(id);
          break;
      }
    } else {
      fail_conn(c, "unexpected " + wire::describe(m));
    }
  }

  void read_conn(PeerConn& c) {
    for (;;) {
      ssize_t n = ::recv(c.fd.get(), recv_buf.data(), recv_buf.size(), 0);
      if (n > 0) {
        std::vector<wire::Message> msgs;
        try {
          c.decoder.feed(std::span<const std::uint8_t>(recv_buf.data(), static_cast<std::size_t>(n)));
          msgs = c.decoder.drain();
        } catch (const ProtocolError& e) {
          fail_conn(c, e.what());
          return;
        }
        for (auto& m : msgs) {
          if (c.dead) return;
          handle(c, m);
        }
        if (c.dead) return;
        continue;
      }
      if (n == 0) {
        fail_conn(c, "connection closed");
        return;
      }
      if (errno == EINTR) continue;
      if (errno != EAGAIN && errno != EWOULDBLOCK) fail_conn(c, std::strerror(errno));
      return;
    }
  }

  void write_conn(PeerConn& c) {
    while (!c.out.empty()) {
      iovec iov[kMaxIov];
      int n = 0;
      for (auto it = c.out.begin(); it != c.out.end() && n + 2 <= kMaxIov; ++it) {
        std::size_t off = it->sent;
        if (off < it->head.size()) {
          iov[n++] = iovec{const_cast<std::uint8_t*>(it->head.data()) + off, it->head.size() - off};
          off = 0;
        } else {
          off -= it->head.size();
        }
        if (it->data && off < it->data->size()) {
          iov[n++] = iovec{const_cast<std::uint8_t*>(it->data->data()) + off, it->data->size() - off};
        }
      }
      // With a fault hook installed, stop the write at the midpoint of the
      // first PUT's data so the hook observes a half-sent frame.
      OutFrame* split = nullptr;
      if (config.fault_hook) {
        auto& f = c.out.front();
        std::size_t half = f.head.size() + (f.data ? f.data->size() / 2 : 0);
        if (!f.put_name.empty() && !f.half_reported && f.data && !f.data->empty() && f.sent < half) {
          split = &f;
          std::size_t want = half - f.sent;
          n = 0;
          std::size_t off = f.sent;
          if (off < f.head.size()) {
            iov[n++] = iovec{const_cast<std::uint8_t*>(f.head.data()) + off, f.head.size() - off};
            want -= f.head.size() - off;
            off = 0;
          } else {
            off -= f.head.size();
          }
          if (want > 0) iov[n++] = iovec{const_cast<std::uint8_t*>(f.data->data()) + off, want};
        }
      }
      ssize_t w = ::writev(c.fd.get(), iov, n);
      if (w < 0) {
        if (errno == EINTR) continue;
        if (errno != EAGAIN && errno != EWOULDBLOCK) fail_conn(c, std::strerror(errno));
        return;
      }
      auto left = static_cast<std::size_t>(w);
      while (left > 0 && !c.out.empty()) {
        auto& f = c.out.front();
        std::size_t rest = f.size() - f.sent;
        if (left >= rest) {
          left -= rest;
          c.out.pop_front();
        } else {
          f.sent += left;
          left = 0;
        }
      }
      if (split && split->sent == split->head.size() + split->data->size() / 2) {
        split->half_reported = true;
        hook(PutStep::partially_sent, split->put_name);
      }
    }
  }

  // A partial batch is flushed once acks stop arriving for commit_linger, and
  // in any case ten lingers after its first record.
  Clock::time_point linger_deadline() const {
    return std::min(batch_grew + config.commit_linger, batch_started + 10 * config.commit_linger);
  }

  std::chrono::milliseconds io_wait(std::chrono::milliseconds wait) const {
    auto now = Clock::now();
    auto limit = wait;
    if (!batch.empty()) {
      auto linger_left = std::chrono::duration_cast<std::chrono::milliseconds>(linger_deadline() - now);
      limit = std::min(limit, std::max(linger_left, std::chrono::milliseconds(0)));
    }
    return limit;
  }

  void poll_io(std::chrono::milliseconds wait) {
    std::vector<pollfd> pfds;
    std::vector<PeerConn*> order;
    for (auto& [id, c] : conns) {
      if (!c || c->dead) continue;
      if (c->connect_error || !c->fd.valid()) {
        fail_conn(*c, std::string("connect failed: ") + std::strerror(c->connect_error ? c->connect_error : EBADF));
        continue;
      }
      short ev = POLLIN;
      if (c->connecting || !c->out.empty()) ev |= POLLOUT;
      pfds.push_back(pollfd{c->fd.get(), ev, 0});
      order.push_back(c.get());
    }
    auto timeout = io_wait(wait);
    if (pfds.empty()) {
      if (timeout.count() > 0) std::this_thread::sleep_for(timeout);
      return;
    }
    int n = ::poll(pfds.data(), pfds.size(), static_cast<int>(timeout.count()));
    if (n <= 0) return;
    for (std::size_t i = 0; i < pfds.size(); ++i) {
      auto* c = order[i];
      auto rev = pfds[i].revents;
      if (!rev || c->dead) continue;
      if (c->connecting) {
        int err = 0;
        socklen_t len = sizeof(err);
        ::getsockopt(c->fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) {
          fail_conn(*c, std::string("connect failed: ") + std::strerror(err));
          continue;
        }
        if (!(rev & (POLLOUT | POLLIN))) continue;
        c->connecting = false;
      }
      if (rev & (POLLIN | POLLHUP | POLLERR)) read_conn(*c);
      if (!c->dead && (rev & POLLOUT)) write_conn(*c);
    }
  }

  void check_timeouts() {
    auto now = Clock::now();
    std::vector<PeerConn*> expired;
    for (auto& [id, c] : conns) {
      if (c && !c->dead && !c->inflight.empty() && now - c->last_progress > config.op_timeout) expired.push_back(c.get());
    }
    for (auto* c : expired) fail_conn(*c, "timed out");
  }

  // Commits the pending batch when it is full, lingered long enough, or
  // `force` is set. Entries whose holders failed since their acks are sent
  // back for re-placement first.
  void maybe_commit(bool force) {
    // Acks arrive in bursts, so the batch may hold more than one group; each
    // transaction carries at most group_commit_size records.
    const std::size_t group = std::max<std::size_t>(1, config.group_commit_size);
    while (!batch.empty()) {
      auto now = Clock::now();
      if (!force && batch.size() < group && now < linger_deadline()) return;
      if (!force && now < commit_retry_at) return;
      auto first = batch.size() > group ? batch.begin() + static_cast<std::ptrdiff_t>(group) : batch.end();
      std::vector<PendingRecord> group_records(std::make_move_iterator(batch.begin()), std::make_move_iterator(first));
      batch.erase(batch.begin(), first);
      batch_started = batch_grew = now;
      if (!commit_group(std::move(group_records), force)) return;
    }
  }

  // Returns false when the tracker was unreachable and the records went
  // back to the front of the batch.
  bool commit_group(std::vector<PendingRecord> group_records, bool force) {
    auto now = Clock::now();
    std::vector<PendingRecord> ready;
    for (auto& r : group_records) {
      std::vector<std::uint8_t> bad;
      for (std::size_t k = 0; k < r.locations.size(); ++k) {
        if (failed.count(r.locations[k])) bad.push_back(static_cast<std::uint8_t>(k));
      }
      if (bad.empty()) {
        ready.push_back(std::move(r));
        continue;
      }
      auto name = r.name;
      auto locs = r.locations;
      records.emplace(name, std::move(r));
      for (auto k : bad) reassign(name, k, locs[k], "holder failed before commit");
    }
    if (ready.empty()) return true;

    json entries = json::array();
    for (const auto& r : ready) {
      entries.push_back(
          {{"name", r.name}, {"size", r.data->size()}, {"crc", r.crc}, {"locations", r.locations}});
    }
    json body{{"path", info.path}, {"client_id", config.client_id}, {"cert", to_hex(cert)}, {"entries", entries}};
    try {
      hook(PutStep::committing, ready);
      ++commit_tx;
      tracker->post(tracker_prefix + "/commit", body);
      for (const auto& r : ready) events.push_back(Event{Event::Type::committed, r.name, Errc::internal, ""});
      hook(PutStep::committed, ready);
    } catch (const Error& e) {
      if (e.code() == Errc::tracker) {
        spdlog::warn("client: commit deferred, tracker unreachable: {}", e.what());
        batch.insert(batch.begin(), std::make_move_iterator(ready.begin()), std::make_move_iterator(ready.end()));
        batch_started = batch_grew = now;
        commit_retry_at = now + std::chrono::milliseconds(500);
        if (force) throw;
        return false;
      }
      for (const auto& r : ready) {
        quota_pending -= std::min<std::uint64_t>(quota_pending, r.data->size() * r.locations.size());
        events.push_back(Event{Event::Type::failed, r.name, e.code(), e.what()});
      }
    }
    return true;
  }

  void step(std::chrono::milliseconds wait) {
    poll_io(wait);
    check_timeouts();
    maybe_commit(false);
  }

  bool in_batch(const std::string& name) const {
    return std::any_of(batch.begin(), batch.end(), [&](const auto& r) { return r.name == name; });
  }

  std::optional<Event> take_event(const std::string& name) {
    for (auto it = events.begin(); it != events.end(); ++it) {
      if (it->name == name) {
        Event e = std::move(*it);
        events.erase(it);
        return e;
      }
    }
    return std::nullopt;
  }

  void require_writable() const {
    if (!writable) throw Error(Errc::auth, "file '" + info.path + "' is open read-only");
  }

  void load_from_tracker(const json& j) {
    info = parse_info(j);
    cert = from_hex(j.value("cert", std::string()));
    tracker_prefix = j.value("tracker", std::string());
    for (auto id : j.value("failed", std::vector<std::uint16_t>{})) failed.insert(id);
    writable = true;
  }

  static std::unique_ptr<Impl> make(const ClientConfig& config) {
    auto impl = std::make_unique<Impl>();
    impl->config = config;
    if (impl->config.client_id.empty()) impl->config.client_id = default_client_id();
    if (!config.tracker_url.empty()) {
      impl->tracker = std::make_unique<http::JsonClient>(config.tracker_url, config.tracker_timeout);
    }
    return impl;
  }

  void init_placer() {
    std::vector<std::uint16_t> ids;
    for (const auto& p : info.peerlist) ids.push_back(p.peer_id);
    std::uint64_t seed = config.seed ? config.seed : std::random_device{}();
    placer = std::make_unique<Placer>(ids, info.ft.copies, config.blocksize, seed);
  }
};

FileHandle::FileHandle(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
FileHandle::FileHandle(FileHandle&&) noexcept = default;
FileHandle& FileHandle::operator=(FileHandle&&) noexcept = default;
FileHandle::~FileHandle() {
  if (!impl_) return;
  try {
    if (impl_->writable && (!impl_->records.empty() || !impl_->batch.empty())) close();
  } catch (const std::exception& e) {
    spdlog::warn("client: close of {} failed: {}", impl_->info.path, e.what());
  }
}

FileHandle FileHandle::create(const ClientConfig& config, const std::string& path, const meta::FtClass& ft,
                              std::uint64_t est_size, std::uint64_t quota_bytes) {
  auto impl = Impl::make(config);
  if (!impl->tracker) throw Error(Errc::tracker, "no tracker configured");
  auto j = impl->tracker->post("/create", json{{"path", path},
                                              {"ft_class", ft.name()},
                                              {"est_size", est_size},
                                              {"client_id", impl->config.client_id},
                                              {"quota_bytes", quota_bytes}});
  impl->load_from_tracker(j);
  impl->init_placer();
  return FileHandle(std::move(impl));
}

FileHandle FileHandle::open(const ClientConfig& config, const std::string& path) {
  auto impl = Impl::make(config);
  const std::string normalized = meta::normalize_path(path);
  bool loaded = false;
  if (impl->tracker) {
    try {
      impl->load_from_tracker(impl->tracker->get("/open?path=" + http::url_encode(normalized) +
                                                 "&client_id=" + http::url_encode(impl->config.client_id)));
      loaded = true;
    } catch (const Error& e) {
      if (e.code() != Errc::tracker) throw;
      spdlog::warn("client: tracker unreachable, opening {} read-only", normalized);
    }
  }
  if (!loaded) {
    auto location = impl->config.meta_root / normalized;
    if (!fs::exists(location)) throw Error(Errc::not_found, "file '" + normalized + "' not found");
    impl->db = meta::Infofile::open(location, meta::Infofile::Mode::read_only);
    impl->info = impl->db->info();
    impl->writable = false;
  }
  impl->init_placer();
  return FileHandle(std::move(impl));
}

bool FileHandle::queue_put(std::shared_ptr<const Bytes> contents, const std::string& name) {
  auto& m = *impl_;
  m.require_writable();
  store::validate_record_name(name);
  if (!contents) throw Error(Errc::invalid_argument, "null record contents");
  if (contents->size() > wire::kMaxRecordSize) throw Error(Errc::invalid_argument, "record '" + name + "' too large");
  if (m.records.count(name) || m.in_batch(name)) {
    throw Error(Errc::invalid_argument, "record '" + name + "' is already being written by this handle");
  }
  if (m.records.size() >= m.config.pipeline_depth) return false;
  const std::uint64_t charge = contents->size() * static_cast<std::uint64_t>(m.info.ft.copies);
  if (m.info.quota_bytes > 0 && m.info.quota_used + m.quota_pending + charge > m.info.quota_bytes) {
    throw Error(Errc::quota, "record '" + name + "' would exceed the quota of '" + m.info.path + "'");
  }
  auto placement = m.placer->place(name, m.failed);
  PendingRecord r;
  r.name = name;
  r.crc = wire::crc32(*contents);
  r.data = std::move(contents);
  r.locations = placement.locations;
  r.acked.assign(r.locations.size(), false);
  auto& slot = m.records.emplace(name, std::move(r)).first->second;
  m.quota_pending += charge;
  for (std::size_t k = 0; k < slot.locations.size(); ++k) m.send_put(slot, static_cast<std::uint8_t>(k));
  m.hook(PutStep::queued, name);
  return true;
}

std::vector<Event> FileHandle::poll(std::chrono::milliseconds wait) {
  auto& m = *impl_;
  if (m.events.empty()) m.step(wait);
  return std::exchange(m.events, {});
}

std::vector<std::string> FileHandle::get_inflight() const {
  std::vector<std::string> out;
  for (const auto& [name, r] : impl_->records) out.push_back(name);
  return out;
}

void FileHandle::put(Bytes contents, const std::string& name) {
  auto& m = *impl_;
  auto data = std::make_shared<const Bytes>(std::move(contents));
  while (!queue_put(data, name)) m.step(std::chrono::milliseconds(100));
  for (;;) {
    if (auto e = m.take_event(name)) {
      if (e->type == Event::Type::failed) throw Error(e->code, e->message);
      return;
    }
    if (m.in_batch(name)) {
      m.maybe_commit(true);
      continue;
    }
    m.step(std::chrono::milliseconds(100));
  }
}

void FileHandle::flush() {
  auto& m = *impl_;
  while (!m.records.empty()) m.step(std::chrono::milliseconds(100));
  while (!m.batch.empty()) {
    m.maybe_commit(true);
    while (!m.records.empty()) m.step(std::chrono::milliseconds(100));
  }
}

void FileHandle::close() {
  auto& m = *impl_;
  if (m.writable) {
    flush();
    retry_deferred_deletes();
  }
  m.conns.clear();
}

Bytes FileHandle::get(const std::string& name) {
  auto& m = *impl_;
  std::optional<Bytes> result;
  std::optional<Error> failure;
  bool done = false;
  queue_get(name, [&](const std::string&, std::optional<Bytes> data, const Error* err) {
    done = true;
    if (err) {
      failure = *err;
    } else {
      result = std::move(data);
    }
  });
  while (!done) m.step(std::chrono::milliseconds(100));
  if (failure) throw *failure;
  return std::move(*result);
}

void FileHandle::queue_get(const std::string& name, GetCallback on_done) {
  auto& m = *impl_;
  auto meta = m.infofile().lookup(name);
  if (!meta) throw Error(Errc::not_found, "record '" + name + "' not found in '" + m.info.path + "'");
  GetOp op;
  op.name = name;
  op.cb = std::move(on_done);
  // Rank order, trying peers not known to be failed first.
  for (auto id : meta->locations) {
    if (!m.failed.count(id)) op.holders.push_back(id);
  }
  for (auto id : meta->locations) {
    if (m.failed.count(id)) op.holders.push_back(id);
  }
  auto id = m.next_op++;
  m.gets.emplace(id, std::move(op));
  m.advance_get(id, "");
}

std::vector<wire::LocalEntry> FileHandle::get_local(std::size_t local_rank, std::size_t local_size) {
  auto& m = *impl_;
  if (local_size == 0 || local_rank >= local_size) throw Error(Errc::invalid_argument, "bad local rank/size");
  if (m.config.local_peer_addr.empty()) throw Error(Errc::invalid_argument, "no local peer configured");
  const meta::PeerInfo* local = nullptr;
  for (const auto& p : m.info.peerlist) {
    if (p.addr == m.config.local_peer_addr && p.port == m.config.local_peer_port) local = &p;
  }
  if (!local) throw Error(Errc::not_found, "no peer of '" + m.info.path + "' runs on this node");

  std::set<std::uint16_t> removed;
  for (const auto& p : m.info.peerlist) {
    if (m.failed.count(p.peer_id)) removed.insert(p.peer_id);
  }
  const std::size_t tolerance = static_cast<std::size_t>(m.info.ft.copies - 1);
  for (;;) {
    if (removed.count(local->peer_id)) {
      throw Error(Errc::unavailable, "local peer " + std::to_string(local->peer_id) + " has failed");
    }
    if (removed.size() > tolerance) {
      std::size_t missing = 0;
      std::string sample;
      for (const auto& r : m.infofile().records()) {
        bool covered = std::any_of(r.locations.begin(), r.locations.end(),
                                   [&](std::uint16_t id) { return !removed.count(id); });
        if (covered) continue;
        if (missing++ < 10) sample += (sample.empty() ? "" : ", ") + r.name;
      }
      std::string ids;
      for (auto id : removed) ids += (ids.empty() ? "" : ",") + std::to_string(id);
      throw Error(Errc::unavailable, "failed peers " + ids + " exceed tolerance " + std::to_string(tolerance) + "; " +
                                         std::to_string(missing) + " records have no live copy" +
                                         (sample.empty() ? "" : ": " + sample));
    }
    std::vector<wire::RingPeer> ring;
    for (const auto& p : m.info.peerlist) {
      if (!removed.count(p.peer_id)) ring.push_back(wire::RingPeer{p.peer_id, p.addr, p.port});
    }
    auto wait = m.config.op_timeout + std::chrono::milliseconds(4000 + 50 * static_cast<long>(ring.size()));
    std::optional<wire::Message> reply;
    try {
      auto c = net::FrameConnection::connect(local->addr, local->port, m.config.op_timeout);
      wire::Bytes req;
      wire::append_message(req, wire::Handshake{wire::kProtocolVersion, m.config.client_id, m.info.file_id, {}});
      wire::append_message(req, wire::GetLocal{1, ring});
      c.send_bytes(req, m.config.op_timeout);
      auto deadline = Clock::now() + wait;
      while (!reply && Clock::now() < deadline) {
        reply = c.receive(std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()));
      }
    } catch (const Error& e) {
      m.mark_failed(local->peer_id, e.what());
      removed.insert(local->peer_id);
      continue;
    }
    if (!reply) throw Error(Errc::timeout, "GET_LOCAL on peer " + std::to_string(local->peer_id) + " timed out");
    if (auto* list = std::get_if<wire::LocalList>(&*reply)) {
      auto entries = std::move(list->entries);
      std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
      std::vector<wire::LocalEntry> mine;
      for (std::size_t i = local_rank; i < entries.size(); i += local_size) mine.push_back(std::move(entries[i]));
      return mine;
    }
    auto* err = std::get_if<wire::ErrorMsg>(&*reply);
    if (!err) throw Error(Errc::protocol, "unexpected reply to GET_LOCAL: " + wire::describe(*reply));
    if (err->code == static_cast<std::uint8_t>(wire::ErrorCode::duplicate_rank)) {
      throw Error(Errc::duplicate_rank, err->detail);
    }
    if (err->code != static_cast<std::uint8_t>(wire::ErrorCode::peer_failed) || !is_id_list(err->detail)) {
      throw Error(Errc::peer_failed, "GET_LOCAL failed: " + err->detail);
    }
    std::size_t start = 0;
    while (start < err->detail.size()) {
      auto end = err->detail.find(',', start);
      if (end == std::string::npos) end = err->detail.size();
      if (end > start) {
        auto id = static_cast<std::uint16_t>(std::stoul(err->detail.substr(start, end - start)));
        removed.insert(id);
        m.mark_failed(id, "reported by GET_LOCAL collective");
      }
      start = end + 1;
    }
  }
}

DeleteStatus FileHandle::remove(const std::string& name) {
  auto& m = *impl_;
  m.require_writable();
  auto meta = m.infofile().lookup(name);
  if (!meta) return DeleteStatus::done;
  auto op_id = m.next_op++;
  auto& op = m.dels[op_id];
  for (auto id : meta->locations) {
    if (m.failed.count(id)) continue;
    auto& c = m.conn(id);
    auto s = m.seq();
    m.enqueue(c, wire::encode_message(wire::Delete{s, name}), nullptr, SeqRef{OpKind::del, name, 0, op_id}, s);
    op.waiting.insert(id);
  }
  while (!m.dels[op_id].waiting.empty()) m.step(std::chrono::milliseconds(100));
  m.dels.erase(op_id);
  try {
    m.tracker->post(m.tracker_prefix + "/delete", json{{"path", m.info.path},
                                                       {"client_id", m.config.client_id},
                                                       {"cert", to_hex(m.cert)},
                                                       {"names", json::array({name})}});
  } catch (const Error& e) {
    if (e.code() != Errc::tracker) throw;
    m.deferred_deletes.push_back(name);
    return DeleteStatus::deferred;
  }
  return DeleteStatus::done;
}

std::size_t FileHandle::retry_deferred_deletes() {
  auto& m = *impl_;
  if (m.deferred_deletes.empty()) return 0;
  m.tracker->post(m.tracker_prefix + "/delete", json{{"path", m.info.path},
                                                     {"client_id", m.config.client_id},
                                                     {"cert", to_hex(m.cert)},
                                                     {"names", m.deferred_deletes}});
  return std::exchange(m.deferred_deletes, {}).size();
}

std::optional<PutPlacement> FileHandle::rebalance_record(const std::string& name) {
  auto& m = *impl_;
  m.require_writable();
  auto meta = m.infofile().lookup(name);
  if (!meta) throw Error(Errc::not_found, "record '" + name + "' not found");
  std::vector<std::uint8_t> bad;
  for (std::size_t k = 0; k < meta->locations.size(); ++k) {
    if (m.failed.count(meta->locations[k])) bad.push_back(static_cast<std::uint8_t>(k));
  }
  if (bad.empty()) return std::nullopt;
  auto data = std::make_shared<const Bytes>(get(name));
  while (m.records.size() >= m.config.pipeline_depth) m.step(std::chrono::milliseconds(100));
  PendingRecord r;
  r.name = name;
  r.crc = meta->crc;
  r.data = data;
  r.locations = meta->locations;
  r.acked.assign(r.locations.size(), true);
  auto& slot = m.records.emplace(name, std::move(r)).first->second;
  for (auto k : bad) {
    slot.acked[k] = false;
    // Counts against the retry budget like any other re-placement.
    m.reassign(name, k, slot.locations[k], "holder failed");
    if (!m.records.count(name)) break;
  }
  auto it = m.records.find(name);
  if (it == m.records.end()) {
    auto e = m.take_event(name);
    throw Error(e ? e->code : Errc::peer_failed, e ? e->message : "rebalance of '" + name + "' failed");
  }
  --it->second.retries;
  return PutPlacement{name, it->second.locations};
}

std::size_t FileHandle::rebalance() {
  auto& m = *impl_;
  m.require_writable();
  probe_peers();
  std::size_t n = 0;
  for (const auto& r : records()) {
    if (rebalance_record(r.name)) ++n;
  }
  flush();
  std::size_t failures = 0;
  std::string first;
  for (const auto& e : std::exchange(m.events, {})) {
    if (e.type == Event::Type::failed && failures++ == 0) first = e.name + ": " + e.message;
  }
  if (failures) throw Error(Errc::unavailable, std::to_string(failures) + " records could not be rebalanced (" + first + ")");
  return n;
}

const meta::FileInfo& FileHandle::info() const { return impl_->info; }
bool FileHandle::writable() const { return impl_->writable; }
const std::set<std::uint16_t>& FileHandle::failed_peers() const { return impl_->failed; }
std::uint64_t FileHandle::commit_transactions() const { return impl_->commit_tx; }

std::set<std::uint16_t> FileHandle::probe_peers() {
  auto& m = *impl_;
  for (const auto& p : m.info.peerlist) {
    if (m.failed.count(p.peer_id)) continue;
    try {
      net::tcp_connect(p.addr, p.port, std::chrono::milliseconds(1000));
    } catch (const Error& e) {
      m.mark_failed(p.peer_id, e.what());
    }
  }
  return m.failed;
}

std::optional<meta::RecordMeta> FileHandle::lookup(const std::string& name) { return impl_->infofile().lookup(name); }
std::vector<meta::RecordMeta> FileHandle::records() { return impl_->infofile().records(); }

}  // namespace storetorrent::client
