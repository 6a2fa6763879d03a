#pragma once

// Round-synchronous message exchange between agents: the wire format, an
// in-process bus for single-binary runs, and a TCP star (one coordinator,
// one socket per agent) that spreads the same protocol across processes.
//
// A round at step k is three barrier phases, in order: every agent sends a
// state broadcast, then a plan broadcast, then a commit (its log row). No
// phase delivers anything until all agents of that phase have sent, and
// delivery follows the communication graph's edges only.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "platoon/common.hpp"
#include "platoon/topology.hpp"

namespace platoon {

// ---------------------------------------------------------------------------
// Wire format
//
// Each frame is a 4-byte big-endian payload length followed by that many
// bytes of UTF-8 text: `kind|agent_id|k|v1,v2,...` with every float printed
// as the shortest decimal that round-trips to the identical double. Keeping
// the format textual makes a tcpdump of a run directly readable, and the
// round-trip guarantee is what lets the TCP runtime reproduce the in-process
// run bit for bit.
// ---------------------------------------------------------------------------

enum class MsgKind { kState, kPlan, kCommit };

inline std::string_view kind_name(MsgKind kind) {
  switch (kind) {
    case MsgKind::kState: return "state-broadcast";
    case MsgKind::kPlan: return "plan-broadcast";
    case MsgKind::kCommit: return "round-commit";
  }
  return "?";
}

struct RoundMessage {
  MsgKind kind = MsgKind::kState;
  int agent_id = 0;
  int k = 0;
  std::vector<double> payload;

  bool operator==(const RoundMessage&) const = default;
};

/// state-broadcast payload: [d, v, beta].
inline constexpr int kStatePayloadSize = 3;

/// round-commit payload: one log row, [d, v, y, u, psi, kappa, beta, coop].
inline constexpr int kCommitPayloadSize = 8;
enum CommitField : int {
  kCommitD = 0,
  kCommitV,
  kCommitY,
  kCommitU,
  kCommitPsi,
  kCommitKappa,
  kCommitBeta,
  kCommitCoop,
};

/// Frames above this are rejected outright; the largest legitimate frame is
/// a plan broadcast, a few hundred bytes.
inline constexpr uint32_t kMaxFrameBytes = 1u << 20;

inline void check_payload_size(const RoundMessage& m) {
  const auto n = m.payload.size();
  const bool ok = (m.kind == MsgKind::kState && n == kStatePayloadSize) ||
                  (m.kind == MsgKind::kCommit && n == kCommitPayloadSize) ||
                  (m.kind == MsgKind::kPlan && n >= 1);
  if (!ok)
    throw Error(std::string(kind_name(m.kind)) + " payload has " +
                std::to_string(n) + " values");
}

inline std::string encode_message(const RoundMessage& m) {
  check_payload_size(m);
  std::string body;
  body += kind_name(m.kind);
  body += '|';
  body += std::to_string(m.agent_id);
  body += '|';
  body += std::to_string(m.k);
  body += '|';
  for (size_t i = 0; i < m.payload.size(); ++i) {
    if (i) body += ',';
    body += format_double(m.payload[i]);
  }
  if (body.size() > kMaxFrameBytes) throw Error("frame body too large");

  std::string frame(4, '\0');
  const uint32_t be = htonl(static_cast<uint32_t>(body.size()));
  std::memcpy(frame.data(), &be, 4);
  frame += body;
  return frame;
}

namespace wire_detail {

[[noreturn]] inline void fail(size_t offset, const std::string& what) {
  throw DecodeError("frame byte " + std::to_string(offset) + ": " + what);
}

inline int parse_nonneg_int(std::string_view s, size_t offset,
                            const char* what) {
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || v < 0)
    fail(offset, std::string("bad ") + what + " '" + std::string(s) + "'");
  return v;
}

}  // namespace wire_detail

/// Parses one frame body (the text after the length prefix). `base` is the
/// byte offset of the body within whatever the caller is reading, so error
/// offsets point into the original stream.
inline RoundMessage decode_body(std::string_view body, size_t base) {
  using wire_detail::fail;
  std::array<std::string_view, 4> field;
  std::array<size_t, 4> at{};
  size_t start = 0;
  for (int i = 0; i < 3; ++i) {
    const size_t bar = body.find('|', start);
    if (bar == std::string_view::npos)
      fail(base + body.size(), "expected '|' separator (3 required)");
    field[i] = body.substr(start, bar - start);
    at[i] = start;
    start = bar + 1;
  }
  field[3] = body.substr(start);
  at[3] = start;

  RoundMessage m;
  if (field[0] == kind_name(MsgKind::kState)) {
    m.kind = MsgKind::kState;
  } else if (field[0] == kind_name(MsgKind::kPlan)) {
    m.kind = MsgKind::kPlan;
  } else if (field[0] == kind_name(MsgKind::kCommit)) {
    m.kind = MsgKind::kCommit;
  } else {
    fail(base + at[0], "unknown kind '" + std::string(field[0]) + "'");
  }
  m.agent_id = wire_detail::parse_nonneg_int(field[1], base + at[1], "agent id");
  m.k = wire_detail::parse_nonneg_int(field[2], base + at[2], "step");

  size_t pos = 0;
  const std::string_view csv = field[3];
  while (true) {
    const size_t comma = csv.find(',', pos);
    const std::string_view tok =
        csv.substr(pos, comma == std::string_view::npos ? comma : comma - pos);
    double v = 0.0;
    if (!parse_double(tok, v))
      fail(base + at[3] + pos, "bad float '" + std::string(tok) + "'");
    m.payload.push_back(v);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }

  try {
    check_payload_size(m);
  } catch (const Error& e) {
    fail(base + at[3], e.what());
  }
  return m;
}

/// Decodes exactly one length-prefixed frame; trailing bytes are an error.
inline RoundMessage decode_message(std::string_view frame) {
  using wire_detail::fail;
  if (frame.size() < 4) fail(frame.size(), "truncated length prefix");
  uint32_t be = 0;
  std::memcpy(&be, frame.data(), 4);
  const uint32_t len = ntohl(be);
  if (len > kMaxFrameBytes)
    fail(0, "implausible frame length " + std::to_string(len));
  if (frame.size() < 4 + static_cast<size_t>(len))
    fail(frame.size(), "truncated body (" + std::to_string(len) +
                           " bytes declared, " +
                           std::to_string(frame.size() - 4) + " present)");
  if (frame.size() > 4 + static_cast<size_t>(len))
    fail(4 + static_cast<size_t>(len), "trailing bytes after frame");
  return decode_body(frame.substr(4, len), 4);
}

// ---------------------------------------------------------------------------
// In-process bus
// ---------------------------------------------------------------------------

/// Per-agent outboxes in, per-agent inboxes out, in one call — the barrier
/// is implicit because the caller only has a complete outbox set once every
/// agent has produced its messages. Delivery is restricted to graph edges
/// and inboxes are ordered by sender id.
///
/// With delay_rounds = 1 every delivery hands out the previous exchange of
/// the same kind instead (the first one is delivered fresh, there being no
/// history), emulating links that lag a full synchronization interval.
class InProcTransport {
 public:
  explicit InProcTransport(Topology topo, int delay_rounds = 0)
      : topo_(std::move(topo)), delay_rounds_(delay_rounds) {}

  std::vector<std::vector<RoundMessage>> exchange(
      const std::vector<std::vector<RoundMessage>>& outbox, int k) {
    const int n = topo_.n_agents;
    if (static_cast<int>(outbox.size()) != n)
      throw TransportError("exchange expects one outbox per agent");
    for (int s = 0; s < n; ++s)
      for (const auto& m : outbox[s]) {
        if (m.agent_id != s)
          throw TransportError("agent " + std::to_string(s) +
                               " sent a message labeled " +
                               std::to_string(m.agent_id));
        if (m.k != k)
          throw TransportError("message step " + std::to_string(m.k) +
                               " in exchange for step " + std::to_string(k));
      }
    if (k < last_k_)
      throw TransportError("exchange step went backwards: " +
                           std::to_string(k) + " after " +
                           std::to_string(last_k_));
    last_k_ = k;

    const std::vector<std::vector<RoundMessage>>* deliver = &outbox;
    if (delay_rounds_ > 0) {
      auto& held = held_[slot_of(outbox)];
      if (!held.empty()) {
        stash_ = std::move(held);
        deliver = &stash_;
      }
      // else: first exchange of this kind, nothing older to hand out.
      held = outbox;
    }

    std::vector<std::vector<RoundMessage>> inbox(n);
    for (int s = 0; s < n; ++s)
      for (const auto& m : (*deliver)[s])
        for (const auto& [from, to] : topo_.edges)
          if (from == s) inbox[to].push_back(m);
    for (auto& box : inbox)
      std::stable_sort(box.begin(), box.end(),
                       [](const RoundMessage& a, const RoundMessage& b) {
                         return a.agent_id < b.agent_id;
                       });
    return inbox;
  }

 private:
  // Delay buffers are kept per message kind so the state and plan phases of
  // one round do not bleed into each other.
  size_t slot_of(const std::vector<std::vector<RoundMessage>>& outbox) const {
    for (const auto& msgs : outbox)
      if (!msgs.empty()) return static_cast<size_t>(msgs.front().kind);
    return 0;
  }

  Topology topo_;
  int delay_rounds_ = 0;
  int last_k_ = -1;
  std::array<std::vector<std::vector<RoundMessage>>, 3> held_;
  std::vector<std::vector<RoundMessage>> stash_;
};

// ---------------------------------------------------------------------------
// TCP star
// ---------------------------------------------------------------------------

struct TcpOptions {
  double timeout_s = 2.0;  // per barrier phase
  int delay_rounds = 0;
};

namespace net_detail {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close_fd();
      fd_ = o.fd_;
      o.fd_ = -1;
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close_fd(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

 private:
  void close_fd() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  int fd_ = -1;
};

using Clock = std::chrono::steady_clock;

inline Clock::time_point deadline_in(double seconds) {
  return Clock::now() + std::chrono::duration_cast<Clock::duration>(
                            std::chrono::duration<double>(seconds));
}

/// Waits until fd is readable or the deadline passes. False on timeout.
inline bool wait_readable(int fd, Clock::time_point deadline) {
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - Clock::now());
    if (left.count() <= 0) return false;
    pollfd p{fd, POLLIN, 0};
    const int r = ::poll(&p, 1, static_cast<int>(left.count()) + 1);
    if (r > 0) return true;
    if (r == 0) return false;
    if (errno != EINTR)
      throw TransportError(std::string("poll: ") + std::strerror(errno));
  }
}

/// Reads exactly n bytes. False on timeout before the first byte; a timeout
/// or EOF mid-object is a hard error (the peer died between fields).
inline bool recv_exact(int fd, char* buf, size_t n, Clock::time_point deadline,
                       bool started = false) {
  size_t got = 0;
  while (got < n) {
    if (!wait_readable(fd, deadline)) {
      if (got == 0 && !started) return false;
      throw TransportError("connection stalled mid-frame");
    }
    const ssize_t r = ::recv(fd, buf + got, n - got, 0);
    if (r == 0) throw TransportError("peer closed the connection");
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("recv: ") + std::strerror(errno));
    }
    got += static_cast<size_t>(r);
  }
  return true;
}

inline void send_all(int fd, std::string_view bytes) {
  size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t r =
        ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("send: ") + std::strerror(errno));
    }
    sent += static_cast<size_t>(r);
  }
}

/// Reads one frame. Returns false if the deadline passes before the frame
/// starts arriving.
inline bool read_frame(int fd, Clock::time_point deadline, RoundMessage& out) {
  char prefix[4];
  if (!recv_exact(fd, prefix, 4, deadline)) return false;
  uint32_t be = 0;
  std::memcpy(&be, prefix, 4);
  const uint32_t len = ntohl(be);
  if (len > kMaxFrameBytes)
    throw DecodeError("frame byte 0: implausible frame length " +
                      std::to_string(len));
  std::string body(len, '\0');
  if (!recv_exact(fd, body.data(), len, deadline, /*started=*/true))
    return false;
  out = decode_body(body, 4);
  return true;
}

inline void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace net_detail

/// Coordinator end of the star: binds, waits for one connection per agent,
/// then runs barrier phases. Connections identify themselves implicitly by
/// the agent_id of the first frame they send — there are no control frames.
class TcpCoordinator {
 public:
  TcpCoordinator(Topology topo, uint16_t port, TcpOptions opt = {})
      : topo_(std::move(topo)), opt_(opt) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0)
      throw TransportError(std::string("socket: ") + std::strerror(errno));
    listener_ = net_detail::Socket(fd);
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0)
      throw TransportError(std::string("bind: ") + std::strerror(errno));
    if (::listen(fd, topo_.n_agents) < 0)
      throw TransportError(std::string("listen: ") + std::strerror(errno));
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  /// The bound port; useful when constructed with port 0.
  uint16_t port() const { return port_; }

  /// Blocks until every agent has connected. Identities are still unknown
  /// at this point (they arrive with the first frames).
  void accept_agents(double timeout_s = 30.0) {
    const auto deadline = net_detail::deadline_in(timeout_s);
    conns_.clear();
    conn_agent_.clear();
    while (static_cast<int>(conns_.size()) < topo_.n_agents) {
      if (!net_detail::wait_readable(listener_.fd(), deadline))
        throw TransportError(
            "timed out waiting for agent connections (" +
            std::to_string(conns_.size()) + " of " +
            std::to_string(topo_.n_agents) + " connected)");
      const int fd = ::accept(listener_.fd(), nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("accept: ") + std::strerror(errno));
      }
      net_detail::set_nodelay(fd);
      conns_.emplace_back(fd);
      conn_agent_.push_back(-1);
    }
  }

  /// One barrier phase: receive a frame of the given kind from every agent,
  /// then fan the batch out along graph edges (oldest batch first when delay
  /// injection is on). Commit frames are collected but never forwarded.
  /// Returns the collected batch ordered by agent id.
  std::vector<RoundMessage> run_phase(MsgKind kind, int k) {
    auto batch = collect(kind, k);
    if (kind != MsgKind::kCommit) forward(kind, batch);
    return batch;
  }

 private:
  std::vector<RoundMessage> collect(MsgKind kind, int k) {
    const int n = topo_.n_agents;
    std::vector<RoundMessage> batch(n);
    std::vector<char> have(n, 0);
    const auto deadline = net_detail::deadline_in(opt_.timeout_s);
    for (int received = 0; received < n;) {
      // Poll every connection that still owes us a frame.
      bool progress = false;
      for (size_t c = 0; c < conns_.size(); ++c) {
        const int id = conn_agent_[c];
        if (id >= 0 && have[id]) continue;
        pollfd p{conns_[c].fd(), POLLIN, 0};
        if (::poll(&p, 1, 0) <= 0) continue;
        RoundMessage m;
        if (!net_detail::read_frame(conns_[c].fd(), deadline, m)) continue;
        bind_connection(c, m.agent_id);
        if (m.kind != kind)
          throw TransportError("agent " + std::to_string(m.agent_id) +
                               " sent " + std::string(kind_name(m.kind)) +
                               " during the " + std::string(kind_name(kind)) +
                               " phase of step " + std::to_string(k));
        if (m.k != k)
          throw TransportError("agent " + std::to_string(m.agent_id) +
                               " is at step " + std::to_string(m.k) +
                               ", coordinator at " + std::to_string(k));
        if (have[m.agent_id])
          throw TransportError("duplicate " + std::string(kind_name(kind)) +
                               " from agent " + std::to_string(m.agent_id));
        have[m.agent_id] = 1;
        batch[m.agent_id] = std::move(m);
        ++received;
        progress = true;
      }
      if (received >= n) break;
      if (progress) continue;
      if (net_detail::Clock::now() >= deadline) {
        std::string missing;
        for (int id = 0; id < n; ++id)
          if (!have[id]) missing += (missing.empty() ? "" : ", ") +
                                    std::to_string(id);
        throw TransportError("step " + std::to_string(k) + " " +
                             std::string(kind_name(kind)) +
                             " phase timed out; missing agents: " + missing);
      }
      // Nothing ready: sleep on the whole set until someone speaks up.
      std::vector<pollfd> ps;
      for (size_t c = 0; c < conns_.size(); ++c) {
        const int id = conn_agent_[c];
        if (id >= 0 && have[id]) continue;
        ps.push_back({conns_[c].fd(), POLLIN, 0});
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - net_detail::Clock::now());
      if (left.count() > 0)
        ::poll(ps.data(), ps.size(), static_cast<int>(left.count()) + 1);
    }
    return batch;
  }

  void bind_connection(size_t conn, int agent_id) {
    if (agent_id >= topo_.n_agents)
      throw TransportError("frame from unknown agent " +
                           std::to_string(agent_id));
    if (conn_agent_[conn] == agent_id) return;
    if (conn_agent_[conn] != -1)
      throw TransportError("connection changed identity from " +
                           std::to_string(conn_agent_[conn]) + " to " +
                           std::to_string(agent_id));
    for (size_t c = 0; c < conn_agent_.size(); ++c)
      if (conn_agent_[c] == agent_id)
        throw TransportError("two connections claim agent " +
                             std::to_string(agent_id));
    conn_agent_[conn] = agent_id;
  }

  void forward(MsgKind kind, const std::vector<RoundMessage>& batch) {
    const auto& slot = held_[static_cast<size_t>(kind)];
    const std::vector<RoundMessage>* deliver = &batch;
    std::vector<RoundMessage> stale;
    if (opt_.delay_rounds > 0) {
      if (!slot.empty()) {
        stale = slot;
        deliver = &stale;
      }
      held_[static_cast<size_t>(kind)] = batch;
    }
    // Senders ascending, so every inbox arrives ordered by agent id.
    for (int s = 0; s < topo_.n_agents; ++s) {
      const std::string frame = encode_message((*deliver)[s]);
      for (const auto& [from, to] : topo_.edges)
        if (from == s) net_detail::send_all(fd_of(to), frame);
    }
  }

  int fd_of(int agent_id) const {
    for (size_t c = 0; c < conn_agent_.size(); ++c)
      if (conn_agent_[c] == agent_id) return conns_[c].fd();
    throw TransportError("no connection bound to agent " +
                         std::to_string(agent_id));
  }

  Topology topo_;
  TcpOptions opt_;
  net_detail::Socket listener_;
  uint16_t port_ = 0;
  std::vector<net_detail::Socket> conns_;
  std::vector<int> conn_agent_;  // -1 until the first frame identifies it
  std::array<std::vector<RoundMessage>, 3> held_;
};

/// Agent end of the star: one blocking send-then-receive per phase.
class TcpAgentChannel {
 public:
  TcpAgentChannel(const std::string& host, uint16_t port, int agent_id,
                  int expected_in, TcpOptions opt = {})
      : agent_id_(agent_id), expected_in_(expected_in), opt_(opt) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0)
      throw TransportError(std::string("socket: ") + std::strerror(errno));
    sock_ = net_detail::Socket(fd);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
      throw TransportError("bad coordinator address '" + host + "'");
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0)
      throw TransportError("connect to " + host + ":" + std::to_string(port) +
                           ": " + std::strerror(errno));
    net_detail::set_nodelay(fd);
  }

  /// Sends this agent's phase message and blocks for the fanout from its
  /// in-neighbors. Commit messages expect no reply.
  std::vector<RoundMessage> exchange(const RoundMessage& m) {
    net_detail::send_all(sock_.fd(), encode_message(m));
    if (m.kind == MsgKind::kCommit) return {};
    std::vector<RoundMessage> inbox;
    inbox.reserve(expected_in_);
    const auto deadline = net_detail::deadline_in(opt_.timeout_s);
    while (static_cast<int>(inbox.size()) < expected_in_) {
      RoundMessage in;
      if (!net_detail::read_frame(sock_.fd(), deadline, in))
        throw TransportError(
            "agent " + std::to_string(agent_id_) + " timed out awaiting " +
            std::string(kind_name(m.kind)) + " fanout at step " +
            std::to_string(m.k) + " (" + std::to_string(inbox.size()) +
            " of " + std::to_string(expected_in_) + " received)");
      inbox.push_back(std::move(in));
    }
    return inbox;
  }

 private:
  int agent_id_ = 0;
  int expected_in_ = 0;
  TcpOptions opt_;
  net_detail::Socket sock_;
};

}  // namespace platoon
