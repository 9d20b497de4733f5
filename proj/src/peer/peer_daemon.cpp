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

#include "peer/peer_daemon.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/statvfs.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <future>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "common/crypto.hpp"
#include "common/error.hpp"
#include "common/http.hpp"
#include "meta/certificate.hpp"
#include "meta/infofile.hpp"
#include "tracker/peer_table.hpp"

namespace storetorrent::peer {

using Clock = std::chrono::steady_clock;

namespace {

constexpr std::size_t kReadChunk = 1 << 20;
constexpr auto kPollSlice = std::chrono::milliseconds(100);
constexpr auto kSendTimeout = std::chrono::seconds(30);
constexpr auto kProbeTimeout = std::chrono::milliseconds(1000);
const std::string kPeerPrefix = "peer:";

wire::ErrorCode wire_code(Errc c) {
  switch (c) {
    case Errc::auth:
      return wire::ErrorCode::auth;
    case Errc::not_found:
      return wire::ErrorCode::not_found;
    case Errc::io:
    case Errc::capacity:
      return wire::ErrorCode::io;
    case Errc::protocol:
      return wire::ErrorCode::protocol;
    case Errc::peer_failed:
    case Errc::timeout:
      return wire::ErrorCode::peer_failed;
    case Errc::duplicate_rank:
      return wire::ErrorCode::duplicate_rank;
    default:
      return wire::ErrorCode::invalid;
  }
}

std::string ring_key(const std::vector<wire::RingPeer>& ring) {
  std::ostringstream out;
  for (const auto& p : ring) out << p.peer_id << '@' << p.addr << ':' << p.port << ';';
  return out.str();
}

std::string join_ids(const std::set<std::uint16_t>& ids) {
  std::string out;
  for (auto id : ids) {
    if (!out.empty()) out += ',';
    out += std::to_string(id);
  }
  return out;
}

// True when host:port answers a request within the probe timeout.
bool probe(const wire::RingPeer& p) {
  try {
    auto conn = net::FrameConnection::connect(p.addr, p.port, kProbeTimeout);
    conn.send(wire::Handshake{wire::kProtocolVersion, "probe", "", {}}, kProbeTimeout);
    conn.send(wire::Get{1, ""}, kProbeTimeout);
    return conn.receive(kProbeTimeout).has_value();
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

struct Connection {
  std::uint32_t id = 0;
  net::Fd fd;
  std::mutex send_mutex;
  std::atomic<bool> closed{false};

  void send(std::span<const std::uint8_t> bytes) {
    std::lock_guard lock(send_mutex);
    net::send_all(fd.get(), bytes, Clock::now() + kSendTimeout);
  }
  void shutdown() noexcept {
    closed = true;
    ::shutdown(fd.get(), SHUT_RDWR);
  }
};

// One ring all-gather of local replica indexes. Every participant sends its
// own block to its successor in round 0 and forwards every other block it
// receives with the round incremented, so each block visits all N peers and
// returns to its origin after N hops.
class RingSession : public std::enable_shared_from_this<RingSession> {
 public:
  RingSession(PeerDaemon& d, std::string file_id, std::uint32_t nonce, std::vector<wire::RingPeer> ring,
              std::size_t self, std::vector<wire::IndexEntry> own)
      : daemon_(d),
        file_id_(std::move(file_id)),
        nonce_(nonce),
        ring_(std::move(ring)),
        self_(self),
        own_(std::move(own)),
        deadline_(Clock::now() + d.ring_timeout(ring_.size())) {}

  const std::string& file_id() const noexcept { return file_id_; }
  std::uint32_t nonce() const noexcept { return nonce_; }
  const std::vector<wire::RingPeer>& ring() const noexcept { return ring_; }
  std::uint16_t self_id() const noexcept { return ring_[self_].peer_id; }

  // Valid once the session completed successfully.
  const ReplicaMap& result() const noexcept { return result_; }

  bool finished() {
    std::lock_guard lock(mutex_);
    return done_ || failure_.has_value();
  }

  void start() {
    {
      std::lock_guard lock(mutex_);
      blocks_[self_id()] = own_;
    }
    if (ring_.size() == 1) {
      complete_if_ready(true);
      return;
    }
    auto self = shared_from_this();
    daemon_.spawn([self] { self->participate(); });
  }

  void attach_incoming(std::shared_ptr<Connection> conn) {
    std::optional<std::pair<Errc, std::string>> pending;
    {
      std::lock_guard lock(mutex_);
      incoming_ = std::move(conn);
      pending = failure_;
    }
    if (pending) send_backward(pending->first, pending->second);
  }

  void deliver(const wire::IndexRing& m) {
    const std::size_t n = ring_.size();
    if (m.round >= n) throw ProtocolError(0, "ring round " + std::to_string(m.round) + " out of range");
    bool known = std::any_of(ring_.begin(), ring_.end(), [&](const auto& p) { return p.peer_id == m.origin_peer; });
    if (!known) throw ProtocolError(0, "ring block from peer outside the ring");
    if (m.origin_peer == self_id()) {
      std::lock_guard lock(mutex_);
      own_returned_ = true;
    } else {
      if (static_cast<std::size_t>(m.round) + 1 < n) {
        wire::IndexRing fwd = m;
        fwd.round = static_cast<std::uint16_t>(m.round + 1);
        forward(wire::encode_message(fwd));
      }
      std::lock_guard lock(mutex_);
      blocks_.emplace(m.origin_peer, m.entries);
    }
    complete_if_ready(false);
  }

  // Marks the session failed; optionally notifies the predecessor so the
  // failure travels back to the initiator.
  void fail(Errc code, const std::string& detail) {
    {
      std::lock_guard lock(mutex_);
      if (done_ || failure_) return;
      failure_ = std::make_pair(code, detail);
    }
    cv_.notify_all();
    send_backward(code, detail);
    daemon_.session_finished(*this);
  }

  ReplicaMap wait() {
    std::unique_lock lock(mutex_);
    while (!done_ && !failure_) {
      if (daemon_.stopping_) {
        lock.unlock();
        fail(Errc::peer_failed, "");
        lock.lock();
        break;
      }
      if (Clock::now() >= deadline_) {
        lock.unlock();
        fail(Errc::timeout, "");
        lock.lock();
        break;
      }
      cv_.wait_for(lock, kPollSlice);
    }
    if (done_) return result_;
    auto [code, detail] = *failure_;
    if (code == Errc::duplicate_rank) throw Error(code, detail);
    std::set<std::uint16_t> dead;
    if (code == Errc::timeout) {
      lock.unlock();
      dead = probe_dead();
    } else {
      std::stringstream in(detail);
      std::string id;
      while (std::getline(in, id, ',')) {
        if (!id.empty()) dead.insert(static_cast<std::uint16_t>(std::stoul(id)));
      }
    }
    if (dead.empty()) throw Error(Errc::peer_failed, "ring collective did not complete");
    throw Error(Errc::peer_failed, join_ids(dead));
  }

 private:
  void participate() {
    const auto& succ = ring_[(self_ + 1) % ring_.size()];
    try {
      auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline_ - Clock::now());
      auto conn = net::FrameConnection::connect(succ.addr, succ.port, 
                                                std::clamp(remaining, std::chrono::milliseconds(1),
                                                           std::chrono::milliseconds(1000)));
      wire::Bytes hello;
      wire::append_message(hello, wire::Handshake{wire::kProtocolVersion,
                                                  kPeerPrefix + std::to_string(self_id()), file_id_, {}});
      wire::append_message(hello, wire::GetLocal{nonce_, ring_});
      wire::append_message(hello, wire::IndexRing{file_id_, 0, self_id(), own_});
      {
        std::lock_guard lock(send_mutex_);
        outgoing_ = std::move(conn);
        send_locked(hello);
        for (auto& bytes : pending_) send_locked(bytes);
        pending_.clear();
      }
      while (!finished() && !daemon_.stopping_ && Clock::now() < deadline_) {
        auto msg = outgoing_.receive(kPollSlice);
        if (!msg) continue;
        if (auto* err = std::get_if<wire::ErrorMsg>(&*msg)) {
          auto code = err->code == static_cast<std::uint8_t>(wire::ErrorCode::duplicate_rank) ? Errc::duplicate_rank
                                                                                             : Errc::peer_failed;
          fail(code, err->detail);
        }
      }
    } catch (const Error& e) {
      if (!finished()) {
        spdlog::warn("ring {}/{}: successor {} unreachable: {}", file_id_, nonce_, succ.peer_id, e.what());
        fail(Errc::peer_failed, std::to_string(succ.peer_id));
      }
    } catch (const std::exception& e) {
      fail(Errc::peer_failed, std::to_string(succ.peer_id));
    }
    std::lock_guard lock(send_mutex_);
    outgoing_.close();
  }

  void forward(wire::Bytes bytes) {
    std::lock_guard lock(send_mutex_);
    if (!outgoing_.valid()) {
      pending_.push_back(std::move(bytes));
      return;
    }
    send_locked(bytes);
  }

  void send_locked(const wire::Bytes& bytes) {
    outgoing_.send_bytes(bytes, std::chrono::duration_cast<std::chrono::milliseconds>(kSendTimeout));
    daemon_.ring_bytes_sent_ += bytes.size();
  }

  void send_backward(Errc code, const std::string& detail) {
    std::shared_ptr<Connection> in;
    {
      std::lock_guard lock(mutex_);
      in = incoming_;
    }
    if (!in || code == Errc::timeout) return;
    try {
      in->send(wire::encode_message(
          wire::ErrorMsg{nonce_, static_cast<std::uint8_t>(wire_code(code)), detail}));
    } catch (const std::exception&) {
    }
  }

  void complete_if_ready(bool force_return) {
    {
      std::lock_guard lock(mutex_);
      if (force_return) own_returned_ = true;
      if (done_ || failure_ || !own_returned_ || blocks_.size() != ring_.size()) return;
      try {
        result_ = build_replica_map(file_id_, blocks_);
        done_ = true;
      } catch (const Error& e) {
        failure_ = std::make_pair(Errc::duplicate_rank, std::string(e.what()));
      }
    }
    cv_.notify_all();
    daemon_.session_finished(*this);
  }

  std::set<std::uint16_t> probe_dead() {
    std::vector<std::future<bool>> checks;
    for (std::size_t i = 0; i < ring_.size(); ++i) {
      if (i == self_) {
        checks.push_back(std::async(std::launch::deferred, [] { return true; }));
      } else {
        checks.push_back(std::async(std::launch::async, probe, ring_[i]));
      }
    }
    std::set<std::uint16_t> dead;
    for (std::size_t i = 0; i < ring_.size(); ++i) {
      if (!checks[i].get()) dead.insert(ring_[i].peer_id);
    }
    return dead;
  }

  PeerDaemon& daemon_;
  std::string file_id_;
  std::uint32_t nonce_;
  std::vector<wire::RingPeer> ring_;
  std::size_t self_;
  std::vector<wire::IndexEntry> own_;
  Clock::time_point deadline_;

  std::mutex mutex_;
  std::condition_variable cv_;
  std::map<std::uint16_t, std::vector<wire::IndexEntry>> blocks_;
  bool own_returned_ = false;
  bool done_ = false;
  std::optional<std::pair<Errc, std::string>> failure_;
  ReplicaMap result_;
  std::shared_ptr<Connection> incoming_;

  std::mutex send_mutex_;
  net::FrameConnection outgoing_;
  std::vector<wire::Bytes> pending_;
};

PeerDaemon::PeerDaemon(PeerConfig config) : config_(std::move(config)) {
  if (config_.node_id.empty()) config_.node_id = "peer-" + std::to_string(::getpid());
  store_ = std::make_unique<store::PeerStore>(store::StoreOptions{config_.base, config_.durable_write, {}});
}

PeerDaemon::~PeerDaemon() { stop(); }

std::uint16_t PeerDaemon::start() {
  listener_ = net::tcp_listen(config_.bind_addr, config_.port);
  port_ = net::local_port(listener_.get());
  stopping_ = false;
  spawn([this] { accept_loop(); });
  if (!config_.tracker_url.empty()) spawn([this] { announce_loop(); });
  if (!config_.meta_root.empty()) spawn([this] { scrub_loop(); });
  spdlog::info("peer {} listening on {}:{} (base {})", config_.node_id, config_.bind_addr, port_,
               config_.base.string());
  return port_;
}

void PeerDaemon::stop() {
  if (stopping_.exchange(true)) {
    std::unique_lock lock(threads_mutex_);
    threads_cv_.wait(lock, [&] { return active_threads_ == 0; });
    return;
  }
  if (listener_.valid()) ::shutdown(listener_.get(), SHUT_RDWR);
  wake_cv_.notify_all();
  drop_connections();
  {
    std::unique_lock lock(threads_mutex_);
    threads_cv_.wait(lock, [&] { return active_threads_ == 0; });
  }
  listener_.reset();
}

void PeerDaemon::spawn(std::function<void()> fn) {
  {
    std::lock_guard lock(threads_mutex_);
    ++active_threads_;
  }
  std::thread([this, fn = std::move(fn)] {
    try {
      fn();
    } catch (const std::exception& e) {
      spdlog::error("peer worker failed: {}", e.what());
    }
    std::lock_guard lock(threads_mutex_);
    if (--active_threads_ == 0) threads_cv_.notify_all();
  }).detach();
}

void PeerDaemon::drop_connections() {
  std::lock_guard lock(conns_mutex_);
  for (auto& [id, c] : conns_) c->shutdown();
}

PeerStats PeerDaemon::stats() const {
  return PeerStats{piece_bytes_sent_.load(), ring_bytes_sent_.load(), collectives_.load(), records_stored_.load(),
                   connections_.load()};
}

void PeerDaemon::accept_loop() {
  while (!stopping_) {
    pollfd p{listener_.get(), POLLIN, 0};
    int r = ::poll(&p, 1, static_cast<int>(kPollSlice.count()));
    if (r <= 0 || stopping_) continue;
    int fd = ::accept(listener_.get(), nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR || errno == EAGAIN || errno == ECONNABORTED) continue;
      if (stopping_) break;
      spdlog::warn("accept failed: {}", std::strerror(errno));
      continue;
    }
    net::set_nodelay(fd);
    auto conn = std::make_shared<Connection>();
    conn->id = next_conn_id_++;
    conn->fd = net::Fd(fd);
    ++connections_;
    {
      std::lock_guard lock(conns_mutex_);
      conns_[conn->id] = conn;
    }
    spawn([this, conn] { serve(conn); });
  }
}

void PeerDaemon::serve(std::shared_ptr<Connection> conn) {
  wire::FrameDecoder decoder;
  std::vector<std::uint8_t> buf(kReadChunk);
  std::optional<wire::Handshake> hello;
  bool authorized = false;
  bool peer_link = false;
  std::shared_ptr<RingSession> session;

  auto reply_error = [&](wire::Bytes& out, std::uint32_t seq, wire::ErrorCode code, const std::string& detail) {
    wire::append_message(out, wire::ErrorMsg{seq, static_cast<std::uint8_t>(code), detail});
  };

  bool open = true;
  while (open && !stopping_ && !conn->closed) {
    pollfd p{conn->fd.get(), POLLIN, 0};
    int r = ::poll(&p, 1, static_cast<int>(kPollSlice.count()));
    if (r == 0) continue;
    if (r < 0) {
      if (errno == EINTR) continue;
      break;
    }
    ssize_t n = ::recv(conn->fd.get(), buf.data(), buf.size(), 0);
    if (n == 0) break;
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      break;
    }
    wire::Bytes out;
    std::vector<wire::Message> msgs;
    try {
      decoder.feed(std::span<const std::uint8_t>(buf.data(), static_cast<std::size_t>(n)));
      msgs = decoder.drain();
    } catch (const ProtocolError& e) {
      spdlog::warn("conn {}: {}", conn->id, e.what());
      reply_error(out, wire::kConnectionScope, wire::ErrorCode::protocol, e.what());
      open = false;
    }
    for (auto& m : msgs) {
      if (!open) break;
      try {
        if (auto* h = std::get_if<wire::Handshake>(&m)) {
          hello = *h;
          peer_link = h->client_id.rfind(kPeerPrefix, 0) == 0;
          authorized = !config_.shared_key.empty() && !h->cert.empty() &&
                       meta::verify_certificate(config_.shared_key, h->file_id, h->client_id, h->cert,
                                                meta::unix_now());
          if (config_.shared_key.empty()) authorized = true;
          continue;
        }
        if (!hello) {
          reply_error(out, wire::kConnectionScope, wire::ErrorCode::protocol, "expected HANDSHAKE first");
          open = false;
          break;
        }
        const std::string& file_id = hello->file_id;
        if (auto* put = std::get_if<wire::Put>(&m)) {
          if (!authorized) {
            reply_error(out, put->seq, wire::ErrorCode::auth, "certificate rejected");
            continue;
          }
          try {
            store_->store_record(file_id, put->name, put->rank, put->data, put->crc, conn->id);
            ++records_stored_;
            wire::append_message(out, wire::PutAck{put->seq, 0});
          } catch (const Error& e) {
            spdlog::warn("conn {}: PUT {} failed: {}", conn->id, put->name, e.what());
            reply_error(out, put->seq, wire_code(e.code()), e.what());
          }
        } else if (auto* get = std::get_if<wire::Get>(&m)) {
          try {
            auto [data, crc] = store_->read_record(file_id, get->name);
            auto header = wire::encode_piece_header(get->seq, crc, data.size());
            out.insert(out.end(), header.begin(), header.end());
            out.insert(out.end(), data.begin(), data.end());
            piece_bytes_sent_ += data.size();
          } catch (const Error& e) {
            reply_error(out, get->seq, wire_code(e.code()), e.what());
          }
        } else if (auto* del = std::get_if<wire::Delete>(&m)) {
          if (!authorized) {
            reply_error(out, del->seq, wire::ErrorCode::auth, "certificate rejected");
            continue;
          }
          try {
            bool existed = store_->delete_record(file_id, del->name);
            wire::append_message(out, wire::DeleteAck{del->seq, static_cast<std::uint8_t>(existed ? 0 : 1)});
          } catch (const Error& e) {
            reply_error(out, del->seq, wire_code(e.code()), e.what());
          }
        } else if (auto* gl = std::get_if<wire::GetLocal>(&m)) {
          if (peer_link) {
            session = join_session(file_id, gl->seq, gl->peers, conn);
            continue;
          }
          // Flush earlier replies first: the collective may take a while.
          if (!out.empty()) {
            conn->send(out);
            out.clear();
          }
          try {
            auto idx = self_index(gl->peers);
            if (!idx) throw Error(Errc::invalid_argument, "this peer is not in the supplied peerlist");
            auto map = allreduce_replica_index(file_id, gl->peers);
            std::set<std::uint16_t> alive;
            for (const auto& p : gl->peers) alive.insert(p.peer_id);
            auto entries = compute_reveal_set(map, gl->peers[*idx].peer_id, alive, [&](const std::string& name) {
              return store_->path_for(file_id, name).string();
            });
            wire::append_message(out, wire::LocalList{gl->seq, std::move(entries)});
          } catch (const Error& e) {
            reply_error(out, gl->seq, wire_code(e.code()), e.what());
          }
        } else if (auto* ring = std::get_if<wire::IndexRing>(&m)) {
          if (!session) {
            reply_error(out, wire::kConnectionScope, wire::ErrorCode::protocol, "INDEX_RING without a session");
            open = false;
            break;
          }
          session->deliver(*ring);
        } else {
          reply_error(out, wire::kConnectionScope, wire::ErrorCode::protocol,
                      "unexpected " + wire::describe(m) + " from client");
          open = false;
        }
      } catch (const ProtocolError& e) {
        reply_error(out, wire::kConnectionScope, wire::ErrorCode::protocol, e.what());
        open = false;
      } catch (const Error& e) {
        reply_error(out, wire::kConnectionScope, wire_code(e.code()), e.what());
      }
    }
    if (!out.empty()) {
      try {
        conn->send(out);
      } catch (const std::exception& e) {
        spdlog::warn("conn {}: reply failed: {}", conn->id, e.what());
        break;
      }
    }
  }
  if (decoder.buffered() > 0) {
    spdlog::warn("conn {}: closed mid-frame, discarding {} buffered bytes", conn->id, decoder.buffered());
  }
  if (session && !session->finished() && !stopping_) {
    // The predecessor went away before the ring finished.
    const auto& ring = session->ring();
    for (std::size_t i = 0; i < ring.size(); ++i) {
      if (ring[(i + 1) % ring.size()].peer_id == session->self_id()) {
        session->fail(Errc::peer_failed, std::to_string(ring[i].peer_id));
        break;
      }
    }
  }
  std::lock_guard lock(conns_mutex_);
  conns_.erase(conn->id);
}

std::optional<std::size_t> PeerDaemon::self_index(const std::vector<wire::RingPeer>& ring) const {
  for (std::size_t i = 0; i < ring.size(); ++i) {
    if (ring[i].port == port_ && ring[i].addr == config_.advertise_addr) return i;
  }
  return std::nullopt;
}

std::vector<wire::IndexEntry> PeerDaemon::local_index(const std::string& file_id) {
  std::vector<wire::IndexEntry> out;
  for (const auto& e : store_->list_records(file_id)) out.push_back(wire::IndexEntry{e.name, e.rank});
  return out;
}

std::shared_ptr<RingSession> PeerDaemon::find_session(const std::string& file_id, std::uint32_t nonce) {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find({file_id, nonce});
  return it == sessions_.end() ? nullptr : it->second;
}

std::shared_ptr<RingSession> PeerDaemon::join_session(const std::string& file_id, std::uint32_t nonce,
                                                      const std::vector<wire::RingPeer>& ring,
                                                      std::shared_ptr<Connection> incoming) {
  auto idx = self_index(ring);
  if (!idx) throw Error(Errc::invalid_argument, "this peer is not in the ring");
  std::shared_ptr<RingSession> session;
  bool fresh = false;
  {
    std::lock_guard lock(sessions_mutex_);
    auto& slot = sessions_[{file_id, nonce}];
    if (!slot) {
      slot = std::make_shared<RingSession>(*this, file_id, nonce, ring, *idx, local_index(file_id));
      fresh = true;
    }
    session = slot;
  }
  session->attach_incoming(std::move(incoming));
  if (fresh) {
    ++collectives_;
    session->start();
  }
  return session;
}

void PeerDaemon::session_finished(const RingSession& s) {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find({s.file_id(), s.nonce()});
  if (it == sessions_.end() || it->second.get() != &s) return;
  sessions_.erase(it);
}

ReplicaMap PeerDaemon::allreduce_replica_index(const std::string& file_id, const std::vector<wire::RingPeer>& ring) {
  if (ring.empty()) throw Error(Errc::invalid_argument, "empty ring");
  auto idx = self_index(ring);
  if (!idx) throw Error(Errc::invalid_argument, "this peer is not in the ring");
  const auto key = ring_key(ring);
  std::shared_ptr<RingSession> session;
  {
    std::lock_guard lock(sessions_mutex_);
    // No result is reused across calls: a finished collective says nothing
    // about peers that died or records committed since. Clients arriving
    // while one is running share it.
    for (auto& [k, s] : sessions_) {
      if (k.first == file_id && ring_key(s->ring()) == key && !s->finished()) {
        session = s;
        break;
      }
    }
    if (!session) {
      std::uint32_t nonce;
      do {
        nonce = nonce_rng_();
      } while (nonce == wire::kConnectionScope || sessions_.count({file_id, nonce}));
      session = std::make_shared<RingSession>(*this, file_id, nonce, ring, *idx, local_index(file_id));
      sessions_[{file_id, nonce}] = session;
      ++collectives_;
      session->start();
    }
  }
  return session->wait();
}

bool PeerDaemon::announce_once() {
  if (config_.tracker_url.empty()) return false;
  tracker::AnnouncePayload a;
  a.node_id = config_.node_id;
  a.addr = config_.advertise_addr;
  a.port = port_;
  a.bytes_used = store_->bytes_used();
  if (config_.capacity > 0) {
    a.bytes_available = config_.capacity > a.bytes_used ? config_.capacity - a.bytes_used : 0;
  } else {
    struct statvfs sv {};
    if (::statvfs(config_.base.c_str(), &sv) == 0) a.bytes_available = static_cast<std::uint64_t>(sv.f_bavail) * sv.f_frsize;
  }
  a.files_held = store_->file_ids().size();
  a.timestamp = meta::unix_now();
  a.piece_bytes_sent = piece_bytes_sent_.load();
  a.index_ring_bytes_sent = ring_bytes_sent_.load();
  a.collectives = collectives_.load();
  auto payload = a.to_json();
  auto text = payload.dump();
  http::json body{{"payload", payload},
            {"hmac", to_hex(hmac_sha256(config_.shared_key, text))}};
  try {
    http::JsonClient client(config_.tracker_url, std::chrono::milliseconds(2000));
    client.post("/announce", body);
    return true;
  } catch (const Error& e) {
    spdlog::warn("announce to {} failed: {}", config_.tracker_url, e.what());
    return false;
  }
}

void PeerDaemon::announce_loop() {
  while (!stopping_) {
    announce_once();
    std::unique_lock lock(wake_mutex_);
    wake_cv_.wait_for(lock, config_.announce_interval, [&] { return stopping_.load(); });
  }
}

void PeerDaemon::trigger_scrub() {
  {
    std::lock_guard lock(wake_mutex_);
    scrub_requested_ = true;
  }
  wake_cv_.notify_all();
}

std::size_t PeerDaemon::scrub_now(std::chrono::milliseconds min_age) {
  if (config_.meta_root.empty()) return 0;
  std::size_t removed = 0;
  for (const auto& file_id : store_->file_ids()) {
    auto location = config_.meta_root / meta::path_for_file_id(file_id);
    if (!fs::exists(location)) {
      spdlog::warn("scrub: no infofile for {} under {}, skipping", file_id, config_.meta_root.string());
      continue;
    }
    try {
      auto db = meta::Infofile::open(location, meta::Infofile::Mode::read_only);
      auto gone = store_->scrub(
          file_id, [&](const std::string& name) { return db.lookup(name).has_value(); }, min_age);
      removed += gone.size();
      if (!gone.empty()) spdlog::info("scrub: removed {} entries from {}", gone.size(), file_id);
    } catch (const Error& e) {
      spdlog::warn("scrub of {} failed: {}", file_id, e.what());
    }
  }
  return removed;
}

void PeerDaemon::scrub_loop() {
  auto next = Clock::now() + config_.scrub_interval;
  while (!stopping_) {
    bool requested = false;
    {
      std::unique_lock lock(wake_mutex_);
      wake_cv_.wait_until(lock, next, [&] { return stopping_.load() || scrub_requested_; });
      requested = std::exchange(scrub_requested_, false);
    }
    if (stopping_) break;
    if (requested || Clock::now() >= next) {
      scrub_now(config_.scrub_min_age);
      next = Clock::now() + config_.scrub_interval;
    }
  }
}

void block_daemon_signals() {
  sigset_t set;
  sigemptyset(&set);
  for (int s : {SIGTERM, SIGINT, SIGUSR1, SIGUSR2}) sigaddset(&set, s);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  ::signal(SIGPIPE, SIG_IGN);
}

void run_until_signal(PeerDaemon& daemon) {
  sigset_t set;
  sigemptyset(&set);
  for (int s : {SIGTERM, SIGINT, SIGUSR1, SIGUSR2}) sigaddset(&set, s);
  for (;;) {
    int sig = 0;
    if (sigwait(&set, &sig) != 0) continue;
    if (sig == SIGUSR1) {
      spdlog::info("scrub requested by signal");
      daemon.trigger_scrub();
    } else if (sig == SIGUSR2) {
      spdlog::info("dropping all connections");
      daemon.drop_connections();
    } else {
      spdlog::info("shutting down");
      daemon.stop();
      return;
    }
  }
}

}  // namespace storetorrent::peer
