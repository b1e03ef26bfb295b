#pragma once

#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <exception>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "radmm/admm.hpp"
#include "radmm/wire.hpp"

namespace radmm {

/// Anything that breaks a distributed run below the algorithm level:
/// sockets, timeouts, malformed frames.
struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A well-formed message arriving at the wrong time or with impossible
/// content - round mismatches, duplicate contributions, growing active sets.
struct ProtocolError : TransportError {
  using TransportError::TransportError;
};

struct NodeTraffic {
  std::uint32_t messages = 0;
  std::uint64_t bytes = 0;
};

struct RoundTraffic {
  std::vector<NodeTraffic> sensors;  // sensor-to-fusion, indexed q-1
  NodeTraffic fusion;                // fusion-to-sensor, all links summed
};

struct CommStats {
  std::vector<RoundTraffic> rounds;

  std::uint64_t sensor_to_fusion_bytes() const {
    std::uint64_t total = 0;
    for (const RoundTraffic& r : rounds)
      for (const NodeTraffic& t : r.sensors) total += t.bytes;
    return total;
  }

  std::uint64_t fusion_to_sensor_bytes() const {
    std::uint64_t total = 0;
    for (const RoundTraffic& r : rounds) total += r.fusion.bytes;
    return total;
  }

  std::uint64_t total_bytes() const {
    return sensor_to_fusion_bytes() + fusion_to_sensor_bytes();
  }
};

/// Sensor-side state machine. Wraps the same SensorCore the single-process
/// engine drives, so a distributed run re-stages identical arithmetic; this
/// class only adds round bookkeeping and message (de)construction.
class SensorNode {
 public:
  void init(const ForwardOperator* op, const CVector* y,
            const Hyperparams* hyper, int sensor_id, Mode mode) {
    if (sensor_id < 1)
      throw std::invalid_argument("SensorNode: sensor id must be >= 1");
    core_.init(op, y, hyper);
    id_ = sensor_id;
    mode_ = mode;
    round_ = 0;
    gap_buf_ = CVector::Zero(op->cols());
    sigma_buf_ = CVector::Zero(op->cols());
  }

  /// Round 1 runs before any broadcast exists: the consensus image, the
  /// aggregate, and the dual all start at zero.
  wire::Contribution first_contribution() {
    if (round_ != 0)
      throw ProtocolError("SensorNode: first contribution already sent");
    round_ = 1;
    core_.local_update(gap_buf_, sigma_buf_);
    return contribution();
  }

  struct Step {
    std::optional<wire::ScreeningNotice> notice;
    wire::Contribution contribution;
  };

  /// Consume the broadcast closing round k and produce the round-(k+1)
  /// messages. Screening staged by the trigger flag runs first, so frozen
  /// pixels drop out before the next solve, exactly as in the engine.
  Step consume(const wire::GlobalBroadcast& b) {
    if (round_ == 0)
      throw ProtocolError("SensorNode: broadcast before first contribution");
    if (b.iteration != round_)
      throw ProtocolError("SensorNode: broadcast for round " +
                          std::to_string(b.iteration) + " while at round " +
                          std::to_string(round_));
    if (b.converged)
      throw ProtocolError("SensorNode: step after a converged broadcast");
    if (b.indices.size() != static_cast<std::size_t>(b.gap.size()) ||
        b.gap.size() != b.sigma.size())
      throw ProtocolError("SensorNode: broadcast field sizes disagree");
    ++round_;

    Step out;
    if (mode_ == Mode::kAsadmm && b.screening_trigger) {
      const std::vector<int> removed = core_.screen();
      if (!removed.empty()) {
        wire::ScreeningNotice notice;
        notice.sensor_id = static_cast<std::uint32_t>(id_);
        notice.iteration = round_;
        notice.removed.reserve(removed.size());
        notice.frozen.reserve(removed.size());
        for (int j : removed) {
          notice.removed.push_back(static_cast<std::uint32_t>(j));
          notice.frozen.push_back(core_.x_full()[j]);
        }
        out.notice = std::move(notice);
      }
    }

    // The update only reads the gap and the dual on this sensor's active
    // set, which the broadcast's union of active sets always covers.
    gap_buf_.setZero();
    sigma_buf_.setZero();
    for (std::size_t i = 0; i < b.indices.size(); ++i) {
      const std::uint32_t j = b.indices[i];
      if (j >= static_cast<std::uint32_t>(gap_buf_.size()))
        throw ProtocolError("SensorNode: broadcast index out of range");
      gap_buf_[j] = b.gap[static_cast<Eigen::Index>(i)];
      sigma_buf_[j] = b.sigma[static_cast<Eigen::Index>(i)];
    }
    core_.local_update(gap_buf_, sigma_buf_);
    out.contribution = contribution();
    return out;
  }

  std::uint64_t round() const { return round_; }
  const SensorCore& core() const { return core_; }

 private:
  wire::Contribution contribution() const {
    wire::Contribution c;
    c.sensor_id = static_cast<std::uint32_t>(id_);
    c.iteration = round_;
    c.indices.reserve(core_.active_indices().size());
    for (int j : core_.active_indices())
      c.indices.push_back(static_cast<std::uint32_t>(j));
    c.values.resize(core_.x_hat().size());
    for (Eigen::Index i = 0; i < core_.x_hat().size(); ++i)
      c.values[static_cast<std::size_t>(i)] = core_.x_hat()[i];
    return c;
  }

  SensorCore core_;
  int id_ = 0;
  Mode mode_ = Mode::kSadmm;
  std::uint64_t round_ = 0;
  CVector gap_buf_, sigma_buf_;
};

/// Fusion-side state machine around FusionCore: collects exactly one
/// contribution per sensor per round, enforces round discipline, and builds
/// the broadcast restricted to the union of the active sets.
class FusionNode {
 public:
  void init(int pixel_count, int sensor_count, const Hyperparams* hyper) {
    core_.init(pixel_count, sensor_count, hyper);
    n_ = pixel_count;
    round_ = 1;
    seen_.assign(static_cast<std::size_t>(sensor_count), false);
    active_.resize(static_cast<std::size_t>(sensor_count));
    std::vector<int> all(static_cast<std::size_t>(pixel_count));
    std::iota(all.begin(), all.end(), 0);
    for (std::vector<int>& a : active_) a = all;
  }

  /// Screening notices precede the same round's contribution; the fusion
  /// node narrows its view of the sensor's active set and checks the claim
  /// is a genuine shrink. Mirror entries for removed pixels keep the value
  /// the sensor last sent, which is exactly the frozen value.
  void accept_notice(const wire::ScreeningNotice& notice) {
    const std::size_t q = check_sensor(notice.sensor_id);
    if (notice.iteration != round_)
      throw ProtocolError("FusionNode: notice for round " +
                          std::to_string(notice.iteration) + " during round " +
                          std::to_string(round_));
    if (seen_[q])
      throw ProtocolError("FusionNode: notice after this round's contribution");
    if (notice.removed.size() != notice.frozen.size())
      throw ProtocolError("FusionNode: notice field sizes disagree");
    std::vector<int>& act = active_[q];
    for (std::uint32_t j : notice.removed) {
      auto it = std::find(act.begin(), act.end(), static_cast<int>(j));
      if (it == act.end())
        throw ProtocolError("FusionNode: notice removes a pixel not active");
      act.erase(it);
    }
    if (act.empty())
      throw ProtocolError("FusionNode: notice empties an active set");
  }

  void accept(const wire::Contribution& c) {
    const std::size_t q = check_sensor(c.sensor_id);
    if (c.iteration != round_)
      throw ProtocolError("FusionNode: contribution for round " +
                          std::to_string(c.iteration) + " during round " +
                          std::to_string(round_));
    if (seen_[q])
      throw ProtocolError("FusionNode: duplicate contribution from sensor " +
                          std::to_string(c.sensor_id));
    if (c.indices.size() != active_[q].size())
      throw ProtocolError("FusionNode: contribution does not match sensor " +
                          std::to_string(c.sensor_id) + "'s active set");
    std::vector<int> indices(c.indices.size());
    for (std::size_t i = 0; i < c.indices.size(); ++i) {
      indices[i] = static_cast<int>(c.indices[i]);
      if (indices[i] != active_[q][i])
        throw ProtocolError("FusionNode: contribution does not match sensor " +
                            std::to_string(c.sensor_id) + "'s active set");
    }
    CVector values(static_cast<Eigen::Index>(c.values.size()));
    for (std::size_t i = 0; i < c.values.size(); ++i)
      values[static_cast<Eigen::Index>(i)] = c.values[i];
    core_.set_contribution(static_cast<int>(c.sensor_id), indices, values);
    seen_[q] = true;
  }

  bool round_complete() const {
    return std::all_of(seen_.begin(), seen_.end(), [](bool b) { return b; });
  }

  /// Run the aggregate/threshold/dual/stopping arithmetic and emit the
  /// broadcast for this round.
  wire::GlobalBroadcast finish_round() {
    if (!round_complete())
      throw ProtocolError("FusionNode: round " + std::to_string(round_) +
                          " is missing contributions");
    core_.round();

    std::set<int> union_set;
    for (const std::vector<int>& a : active_) union_set.insert(a.begin(), a.end());

    wire::GlobalBroadcast b;
    b.iteration = round_;
    b.converged = core_.converged();
    b.screening_trigger = core_.screening_trigger();
    b.indices.reserve(union_set.size());
    b.gap.resize(static_cast<Eigen::Index>(union_set.size()));
    b.sigma.resize(static_cast<Eigen::Index>(union_set.size()));
    Eigen::Index i = 0;
    for (int j : union_set) {
      b.indices.push_back(static_cast<std::uint32_t>(j));
      b.gap[i] = core_.gap()[j];
      b.sigma[i] = core_.sigma()[j];
      ++i;
    }

    ++round_;
    seen_.assign(seen_.size(), false);
    return b;
  }

  std::uint64_t round() const { return round_; }
  int active_count(int sensor_id) const {
    return static_cast<int>(active_[static_cast<std::size_t>(sensor_id - 1)].size());
  }
  const FusionCore& core() const { return core_; }

 private:
  std::size_t check_sensor(std::uint32_t sensor_id) const {
    if (sensor_id < 1 || sensor_id > seen_.size())
      throw ProtocolError("FusionNode: sensor id " + std::to_string(sensor_id) +
                          " out of range");
    return static_cast<std::size_t>(sensor_id - 1);
  }

  FusionCore core_;
  int n_ = 0;
  std::uint64_t round_ = 1;
  std::vector<bool> seen_;
  std::vector<std::vector<int>> active_;
};

enum class Transport { kInproc, kTcp };

inline const char* transport_name(Transport t) {
  return t == Transport::kInproc ? "inproc" : "tcp";
}

struct DistributedRun {
  RunResult result;
  CommStats stats;
};

namespace detail {

struct RoundLog {
  RoundTraffic traffic;
  std::vector<int> active_sizes;
  std::vector<std::uint64_t> contribution_bytes;
  std::uint64_t notice_bytes = 0;
};

/// Fold one completed round's fusion state + measured traffic into the same
/// report shape the engine produces.
inline void append_record(ConvergenceReport& report, const FusionCore& core,
                          int iteration, const RoundLog& log, double ms) {
  IterationRecord rec;
  rec.iteration = iteration;
  rec.pri_res = core.pri_res();
  rec.dual_res = core.dual_res();
  rec.eps_pri = core.eps_pri();
  rec.eps_dual = core.eps_dual();
  rec.active_sizes = log.active_sizes;
  rec.sensor_bytes = log.contribution_bytes;
  rec.bytes_sent = log.notice_bytes;
  int max_active = 0;
  for (std::size_t q = 0; q < log.active_sizes.size(); ++q) {
    rec.bytes_sent += log.contribution_bytes[q];
    max_active = std::max(max_active, log.active_sizes[q]);
    report.total_active_solves +=
        static_cast<std::uint64_t>(log.active_sizes[q]);
  }
  rec.active_fraction =
      static_cast<double>(max_active) / static_cast<double>(core.s().size());
  rec.ms_elapsed = ms;
  report.total_bytes += rec.bytes_sent;
  report.iterations.push_back(std::move(rec));
}

inline void finalize_result(RunResult& result, const FusionCore& fusion,
                            std::vector<SensorCore>&& cores) {
  result.image = fusion.x_global().cwiseAbs();
  result.x_global = fusion.x_global();
  result.s = fusion.s();
  result.sigma = fusion.sigma();
  result.sigma_pre_global = fusion.sigma_pre_global();
  for (SensorCore& core : cores) {
    result.screening_stalled = result.screening_stalled || core.stalled();
    result.sensor_images.push_back(core.x_full());
  }
}

}  // namespace detail

/// Deterministic single-threaded staging: every message still round-trips
/// through the wire codec so the byte accounting is the measured truth, but
/// delivery is a function call.
inline DistributedRun run_inproc(const Problem& problem,
                                 const Hyperparams& hyper, Mode mode) {
  problem.validate();
  hyper.validate();
  const int q_count = problem.sensor_count();
  const int n = problem.pixel_count();

  std::vector<SensorNode> sensors(static_cast<std::size_t>(q_count));
  for (int q = 0; q < q_count; ++q)
    sensors[static_cast<std::size_t>(q)].init(
        &problem.operators[static_cast<std::size_t>(q)],
        &problem.measurements[static_cast<std::size_t>(q)], &hyper, q + 1,
        mode);
  FusionNode fusion;
  fusion.init(n, q_count, &hyper);

  DistributedRun out;
  const auto t0 = std::chrono::steady_clock::now();
  std::optional<wire::GlobalBroadcast> last;

  for (int k = 1; k <= hyper.max_iter; ++k) {
    detail::RoundLog log;
    log.traffic.sensors.resize(static_cast<std::size_t>(q_count));
    for (int q = 0; q < q_count; ++q) {
      SensorNode& node = sensors[static_cast<std::size_t>(q)];
      NodeTraffic& traffic = log.traffic.sensors[static_cast<std::size_t>(q)];
      wire::Contribution c;
      if (k == 1) {
        c = node.first_contribution();
      } else {
        SensorNode::Step step = node.consume(*last);
        if (step.notice) {
          const std::vector<std::uint8_t> frame = wire::encode(*step.notice);
          traffic.messages += 1;
          traffic.bytes += frame.size();
          log.notice_bytes += frame.size();
          fusion.accept_notice(wire::decode_notice(frame));
        }
        c = std::move(step.contribution);
      }
      const std::vector<std::uint8_t> frame = wire::encode(c);
      traffic.messages += 1;
      traffic.bytes += frame.size();
      log.contribution_bytes.push_back(frame.size());
      log.active_sizes.push_back(static_cast<int>(c.indices.size()));
      fusion.accept(wire::decode_contribution(frame));
    }

    const wire::GlobalBroadcast b = fusion.finish_round();
    const std::vector<std::uint8_t> bframe = wire::encode(b);
    log.traffic.fusion.messages += static_cast<std::uint32_t>(q_count);
    log.traffic.fusion.bytes +=
        static_cast<std::uint64_t>(q_count) * bframe.size();

    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    detail::append_record(out.result.report, fusion.core(), k, log, ms);
    out.result.iterations = k;

    const bool stop = b.converged || k == hyper.max_iter;
    if (stop) {
      const std::vector<std::uint8_t> tframe =
          wire::encode(wire::Terminate{static_cast<std::uint64_t>(k)});
      log.traffic.fusion.messages += static_cast<std::uint32_t>(q_count);
      log.traffic.fusion.bytes +=
          static_cast<std::uint64_t>(q_count) * tframe.size();
    }
    out.stats.rounds.push_back(std::move(log.traffic));
    if (b.converged) {
      out.result.converged = true;
      break;
    }
    if (stop) break;
    last = wire::decode_broadcast(bframe);
  }

  std::vector<SensorCore> cores;
  for (SensorNode& node : sensors) cores.push_back(node.core());
  detail::finalize_result(out.result, fusion.core(), std::move(cores));
  return out;
}

namespace detail {

/// Minimal RAII socket. Closing twice is harmless; moved-from objects hold
/// the sentinel.
struct Socket {
  int fd = -1;
  Socket() = default;
  explicit Socket(int f) : fd(f) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& other) noexcept : fd(other.fd) { other.fd = -1; }
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      close_now();
      fd = other.fd;
      other.fd = -1;
    }
    return *this;
  }
  ~Socket() { close_now(); }
  void close_now() {
    if (fd >= 0) {
      ::close(fd);
      fd = -1;
    }
  }
  void shutdown_now() {
    if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
  }
};

inline void send_all(int fd, const std::uint8_t* data, std::size_t len,
                     std::uint64_t round) {
  while (len > 0) {
    const ssize_t n = ::send(fd, data, len, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError("tcp send failed at round " + std::to_string(round) +
                           ": " + std::strerror(errno));
    }
    data += n;
    len -= static_cast<std::size_t>(n);
  }
}

inline void recv_exact(int fd, std::uint8_t* data, std::size_t len,
                       std::uint64_t round) {
  while (len > 0) {
    const ssize_t n = ::recv(fd, data, len, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK)
        throw TransportError("tcp receive timed out at round " +
                             std::to_string(round));
      throw TransportError("tcp receive failed at round " +
                           std::to_string(round) + ": " +
                           std::strerror(errno));
    }
    if (n == 0)
      throw TransportError("tcp peer closed at round " + std::to_string(round));
    data += n;
    len -= static_cast<std::size_t>(n);
  }
}

constexpr std::uint32_t kMaxFrameBytes = 1u << 26;

inline void send_frame(int fd, const std::vector<std::uint8_t>& payload,
                       std::uint64_t round) {
  std::uint8_t header[4];
  const std::uint32_t len = static_cast<std::uint32_t>(payload.size());
  header[0] = static_cast<std::uint8_t>(len);
  header[1] = static_cast<std::uint8_t>(len >> 8);
  header[2] = static_cast<std::uint8_t>(len >> 16);
  header[3] = static_cast<std::uint8_t>(len >> 24);
  send_all(fd, header, 4, round);
  send_all(fd, payload.data(), payload.size(), round);
}

inline std::vector<std::uint8_t> recv_frame(int fd, std::uint64_t round) {
  std::uint8_t header[4];
  recv_exact(fd, header, 4, round);
  const std::uint32_t len =
      static_cast<std::uint32_t>(header[0]) |
      (static_cast<std::uint32_t>(header[1]) << 8) |
      (static_cast<std::uint32_t>(header[2]) << 16) |
      (static_cast<std::uint32_t>(header[3]) << 24);
  if (len > kMaxFrameBytes)
    throw ProtocolError("tcp frame length " + std::to_string(len) +
                        " exceeds the limit");
  std::vector<std::uint8_t> payload(len);
  if (len > 0) recv_exact(fd, payload.data(), len, round);
  return payload;
}

inline void set_recv_timeout(int fd, int timeout_ms) {
  timeval tv{};
  tv.tv_sec = timeout_ms / 1000;
  tv.tv_usec = (timeout_ms % 1000) * 1000;
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
}

/// One sensor's whole life on the wire: connect, identify, then alternate
/// broadcast-in / contribution-out until the fusion node says stop.
inline void tcp_sensor_main(std::uint16_t port, SensorNode& node,
                            const Hyperparams& hyper, int timeout_ms) {
  Socket sock(::socket(AF_INET, SOCK_STREAM, 0));
  if (sock.fd < 0) throw TransportError("tcp sensor socket failed");
  set_recv_timeout(sock.fd, timeout_ms);
  int one = 1;
  ::setsockopt(sock.fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  if (::connect(sock.fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0)
    throw TransportError("tcp connect failed: " +
                         std::string(std::strerror(errno)));

  // 4-byte little-endian sensor id handshake, so the fusion node can map
  // connections to sensors regardless of accept order.
  wire::Contribution first = node.first_contribution();
  std::uint8_t hello[4];
  hello[0] = static_cast<std::uint8_t>(first.sensor_id);
  hello[1] = static_cast<std::uint8_t>(first.sensor_id >> 8);
  hello[2] = static_cast<std::uint8_t>(first.sensor_id >> 16);
  hello[3] = static_cast<std::uint8_t>(first.sensor_id >> 24);
  send_all(sock.fd, hello, 4, 0);
  send_frame(sock.fd, wire::encode(first), 1);

  for (;;) {
    const std::uint64_t round = node.round();
    const std::vector<std::uint8_t> frame = recv_frame(sock.fd, round);
    if (wire::peek_kind(frame) != wire::Kind::kGlobalBroadcast)
      throw ProtocolError("sensor expected a broadcast at round " +
                          std::to_string(round));
    const wire::GlobalBroadcast b = wire::decode_broadcast(frame);
    if (b.converged ||
        b.iteration >= static_cast<std::uint64_t>(hyper.max_iter)) {
      const std::vector<std::uint8_t> last = recv_frame(sock.fd, b.iteration);
      if (wire::peek_kind(last) != wire::Kind::kTerminate ||
          wire::decode_terminate(last).iteration != b.iteration)
        throw ProtocolError("sensor expected terminate after round " +
                            std::to_string(b.iteration));
      return;
    }
    SensorNode::Step step = node.consume(b);
    if (step.notice)
      send_frame(sock.fd, wire::encode(*step.notice), node.round());
    send_frame(sock.fd, wire::encode(step.contribution), node.round());
  }
}

}  // namespace detail

/// Loopback TCP staging: the fusion node runs on the calling thread, each
/// sensor on its own thread, length-prefixed frames carry the same wire
/// messages the in-process driver uses. Results are bitwise identical to the
/// engine; only the traffic is real.
inline DistributedRun run_tcp(const Problem& problem, const Hyperparams& hyper,
                              Mode mode, int timeout_ms = 10000) {
  problem.validate();
  hyper.validate();
  const int q_count = problem.sensor_count();
  const int n = problem.pixel_count();

  std::vector<SensorNode> nodes(static_cast<std::size_t>(q_count));
  for (int q = 0; q < q_count; ++q)
    nodes[static_cast<std::size_t>(q)].init(
        &problem.operators[static_cast<std::size_t>(q)],
        &problem.measurements[static_cast<std::size_t>(q)], &hyper, q + 1,
        mode);
  FusionNode fusion;
  fusion.init(n, q_count, &hyper);

  detail::Socket listener(::socket(AF_INET, SOCK_STREAM, 0));
  if (listener.fd < 0) throw TransportError("tcp listener socket failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = 0;  // ephemeral
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  if (::bind(listener.fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0)
    throw TransportError("tcp bind failed: " +
                         std::string(std::strerror(errno)));
  if (::listen(listener.fd, q_count) < 0)
    throw TransportError("tcp listen failed");
  socklen_t addr_len = sizeof(addr);
  ::getsockname(listener.fd, reinterpret_cast<sockaddr*>(&addr), &addr_len);
  const std::uint16_t port = ntohs(addr.sin_port);
  detail::set_recv_timeout(listener.fd, timeout_ms);

  std::vector<std::exception_ptr> sensor_errors(
      static_cast<std::size_t>(q_count));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(q_count));
  for (int q = 0; q < q_count; ++q)
    threads.emplace_back([&, q] {
      try {
        detail::tcp_sensor_main(port, nodes[static_cast<std::size_t>(q)],
                                hyper, timeout_ms);
      } catch (...) {
        sensor_errors[static_cast<std::size_t>(q)] = std::current_exception();
      }
    });

  DistributedRun out;
  std::vector<detail::Socket> links(static_cast<std::size_t>(q_count));
  std::exception_ptr fusion_error;
  try {
    for (int i = 0; i < q_count; ++i) {
      detail::Socket conn(::accept(listener.fd, nullptr, nullptr));
      if (conn.fd < 0)
        throw TransportError(errno == EAGAIN || errno == EWOULDBLOCK
                                 ? "tcp accept timed out"
                                 : "tcp accept failed: " +
                                       std::string(std::strerror(errno)));
      detail::set_recv_timeout(conn.fd, timeout_ms);
      int one = 1;
      ::setsockopt(conn.fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      std::uint8_t hello[4];
      detail::recv_exact(conn.fd, hello, 4, 0);
      const std::uint32_t id = static_cast<std::uint32_t>(hello[0]) |
                               (static_cast<std::uint32_t>(hello[1]) << 8) |
                               (static_cast<std::uint32_t>(hello[2]) << 16) |
                               (static_cast<std::uint32_t>(hello[3]) << 24);
      if (id < 1 || id > static_cast<std::uint32_t>(q_count))
        throw ProtocolError("tcp handshake with unknown sensor id " +
                            std::to_string(id));
      detail::Socket& slot = links[static_cast<std::size_t>(id - 1)];
      if (slot.fd >= 0)
        throw ProtocolError("tcp handshake repeated for sensor " +
                            std::to_string(id));
      slot = std::move(conn);
    }

    const auto t0 = std::chrono::steady_clock::now();
    for (int k = 1; k <= hyper.max_iter; ++k) {
      detail::RoundLog log;
      log.traffic.sensors.resize(static_cast<std::size_t>(q_count));
      for (int q = 0; q < q_count; ++q) {
        const int fd = links[static_cast<std::size_t>(q)].fd;
        NodeTraffic& traffic =
            log.traffic.sensors[static_cast<std::size_t>(q)];
        std::vector<std::uint8_t> frame =
            detail::recv_frame(fd, static_cast<std::uint64_t>(k));
        if (wire::peek_kind(frame) == wire::Kind::kScreeningNotice) {
          traffic.messages += 1;
          traffic.bytes += frame.size();
          log.notice_bytes += frame.size();
          fusion.accept_notice(wire::decode_notice(frame));
          frame = detail::recv_frame(fd, static_cast<std::uint64_t>(k));
        }
        if (wire::peek_kind(frame) != wire::Kind::kContribution)
          throw ProtocolError("fusion expected a contribution at round " +
                              std::to_string(k));
        traffic.messages += 1;
        traffic.bytes += frame.size();
        log.contribution_bytes.push_back(frame.size());
        const wire::Contribution c = wire::decode_contribution(frame);
        log.active_sizes.push_back(static_cast<int>(c.indices.size()));
        fusion.accept(c);
      }

      const wire::GlobalBroadcast b = fusion.finish_round();
      const std::vector<std::uint8_t> bframe = wire::encode(b);
      for (int q = 0; q < q_count; ++q) {
        detail::send_frame(links[static_cast<std::size_t>(q)].fd, bframe,
                           static_cast<std::uint64_t>(k));
        log.traffic.fusion.messages += 1;
        log.traffic.fusion.bytes += bframe.size();
      }

      const double ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
      detail::append_record(out.result.report, fusion.core(), k, log, ms);
      out.result.iterations = k;

      const bool stop = b.converged || k == hyper.max_iter;
      if (stop) {
        const std::vector<std::uint8_t> tframe =
            wire::encode(wire::Terminate{static_cast<std::uint64_t>(k)});
        for (int q = 0; q < q_count; ++q) {
          detail::send_frame(links[static_cast<std::size_t>(q)].fd, tframe,
                             static_cast<std::uint64_t>(k));
          log.traffic.fusion.messages += 1;
          log.traffic.fusion.bytes += tframe.size();
        }
      }
      out.stats.rounds.push_back(std::move(log.traffic));
      out.result.converged = b.converged;
      if (stop) break;
    }
  } catch (...) {
    fusion_error = std::current_exception();
    for (detail::Socket& s : links) s.shutdown_now();
    listener.shutdown_now();
  }

  for (std::thread& t : threads) t.join();
  // A protocol violation anywhere is the root cause; transport errors on
  // other nodes are usually the collateral shutdown.
  std::vector<std::exception_ptr> errors;
  if (fusion_error) errors.push_back(fusion_error);
  for (const std::exception_ptr& e : sensor_errors)
    if (e) errors.push_back(e);
  for (const std::exception_ptr& e : errors) {
    try {
      std::rethrow_exception(e);
    } catch (const ProtocolError&) {
      throw;
    } catch (...) {
    }
  }
  if (!errors.empty()) std::rethrow_exception(errors.front());

  std::vector<SensorCore> cores;
  for (SensorNode& node : nodes) cores.push_back(node.core());
  detail::finalize_result(out.result, fusion.core(), std::move(cores));
  return out;
}

inline DistributedRun run_distributed(const Problem& problem,
                                      const Hyperparams& hyper, Mode mode,
                                      Transport transport,
                                      int tcp_timeout_ms = 10000) {
  return transport == Transport::kInproc
             ? run_inproc(problem, hyper, mode)
             : run_tcp(problem, hyper, mode, tcp_timeout_ms);
}

}  // namespace radmm
