#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "radmm/forward_model.hpp"

// Fixed-width little-endian message encoding shared by every transport.
// Frames are self-describing: one kind byte, then kind-specific fields.
// Indices are 32-bit unsigned, complex values two 64-bit floats.
namespace radmm::wire {

enum class Kind : std::uint8_t {
  kContribution = 1,
  kGlobalBroadcast = 2,
  kScreeningNotice = 3,
  kTerminate = 4,
};

// Broadcast flag bits.
inline constexpr std::uint8_t kFlagConverged = 1u << 0;
inline constexpr std::uint8_t kFlagScreeningTrigger = 1u << 1;

struct Contribution {
  std::uint32_t sensor_id = 0;
  std::uint64_t iteration = 0;
  std::vector<std::uint32_t> indices;
  std::vector<Complex> values;
};

struct GlobalBroadcast {
  std::uint64_t iteration = 0;
  bool converged = false;
  bool screening_trigger = false;
  std::vector<std::uint32_t> indices;  // union of active sets
  std::vector<Complex> gap;            // x_G - s at those indices
  std::vector<Complex> sigma;
};

struct ScreeningNotice {
  std::uint32_t sensor_id = 0;
  std::uint64_t iteration = 0;
  std::vector<std::uint32_t> removed;
  std::vector<Complex> frozen;
};

struct Terminate {
  std::uint64_t iteration = 0;
};

inline std::size_t contribution_size(std::size_t count) {
  return 1 + 4 + 8 + 4 + count * (4 + 16);
}
inline std::size_t broadcast_size(std::size_t count) {
  return 1 + 8 + 1 + 4 + count * (4 + 16 + 16);
}
inline std::size_t notice_size(std::size_t count) {
  return 1 + 4 + 8 + 4 + count * (4 + 16);
}
inline constexpr std::size_t terminate_size() { return 1 + 8; }

namespace detail {

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) {
  out.push_back(v);
}
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : p_(data), end_(data + size) {}

  std::uint8_t u8() { return *take(1); }
  std::uint32_t u32() {
    const std::uint8_t* b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const std::uint8_t* b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  bool exhausted() const { return p_ == end_; }

 private:
  const std::uint8_t* take(std::size_t n) {
    if (static_cast<std::size_t>(end_ - p_) < n)
      throw std::invalid_argument("wire: truncated frame");
    const std::uint8_t* at = p_;
    p_ += n;
    return at;
  }
  const std::uint8_t* p_;
  const std::uint8_t* end_;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode(const Contribution& m) {
  if (m.indices.size() != m.values.size())
    throw std::invalid_argument("wire: contribution index/value count mismatch");
  std::vector<std::uint8_t> out;
  out.reserve(contribution_size(m.indices.size()));
  detail::put_u8(out, static_cast<std::uint8_t>(Kind::kContribution));
  detail::put_u32(out, m.sensor_id);
  detail::put_u64(out, m.iteration);
  detail::put_u32(out, static_cast<std::uint32_t>(m.indices.size()));
  for (std::uint32_t idx : m.indices) detail::put_u32(out, idx);
  for (const Complex& v : m.values) {
    detail::put_f64(out, v.real());
    detail::put_f64(out, v.imag());
  }
  return out;
}

inline std::vector<std::uint8_t> encode(const GlobalBroadcast& m) {
  if (m.indices.size() != m.gap.size() || m.indices.size() != m.sigma.size())
    throw std::invalid_argument("wire: broadcast field count mismatch");
  std::vector<std::uint8_t> out;
  out.reserve(broadcast_size(m.indices.size()));
  detail::put_u8(out, static_cast<std::uint8_t>(Kind::kGlobalBroadcast));
  detail::put_u64(out, m.iteration);
  std::uint8_t flags = 0;
  if (m.converged) flags |= kFlagConverged;
  if (m.screening_trigger) flags |= kFlagScreeningTrigger;
  detail::put_u8(out, flags);
  detail::put_u32(out, static_cast<std::uint32_t>(m.indices.size()));
  for (std::uint32_t idx : m.indices) detail::put_u32(out, idx);
  for (const Complex& v : m.gap) {
    detail::put_f64(out, v.real());
    detail::put_f64(out, v.imag());
  }
  for (const Complex& v : m.sigma) {
    detail::put_f64(out, v.real());
    detail::put_f64(out, v.imag());
  }
  return out;
}

inline std::vector<std::uint8_t> encode(const ScreeningNotice& m) {
  if (m.removed.size() != m.frozen.size())
    throw std::invalid_argument("wire: notice index/value count mismatch");
  std::vector<std::uint8_t> out;
  out.reserve(notice_size(m.removed.size()));
  detail::put_u8(out, static_cast<std::uint8_t>(Kind::kScreeningNotice));
  detail::put_u32(out, m.sensor_id);
  detail::put_u64(out, m.iteration);
  detail::put_u32(out, static_cast<std::uint32_t>(m.removed.size()));
  for (std::uint32_t idx : m.removed) detail::put_u32(out, idx);
  for (const Complex& v : m.frozen) {
    detail::put_f64(out, v.real());
    detail::put_f64(out, v.imag());
  }
  return out;
}

inline std::vector<std::uint8_t> encode(const Terminate& m) {
  std::vector<std::uint8_t> out;
  out.reserve(terminate_size());
  detail::put_u8(out, static_cast<std::uint8_t>(Kind::kTerminate));
  detail::put_u64(out, m.iteration);
  return out;
}

inline Kind peek_kind(const std::vector<std::uint8_t>& frame) {
  if (frame.empty()) throw std::invalid_argument("wire: empty frame");
  const std::uint8_t k = frame[0];
  if (k < 1 || k > 4)
    throw std::invalid_argument("wire: unknown frame kind " + std::to_string(k));
  return static_cast<Kind>(k);
}

inline Contribution decode_contribution(const std::vector<std::uint8_t>& frame) {
  detail::Reader r(frame.data(), frame.size());
  if (r.u8() != static_cast<std::uint8_t>(Kind::kContribution))
    throw std::invalid_argument("wire: not a contribution frame");
  Contribution m;
  m.sensor_id = r.u32();
  m.iteration = r.u64();
  const std::uint32_t count = r.u32();
  m.indices.resize(count);
  m.values.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) m.indices[i] = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const double re = r.f64();
    const double im = r.f64();
    m.values[i] = {re, im};
  }
  if (!r.exhausted()) throw std::invalid_argument("wire: trailing bytes");
  return m;
}

inline GlobalBroadcast decode_broadcast(const std::vector<std::uint8_t>& frame) {
  detail::Reader r(frame.data(), frame.size());
  if (r.u8() != static_cast<std::uint8_t>(Kind::kGlobalBroadcast))
    throw std::invalid_argument("wire: not a broadcast frame");
  GlobalBroadcast m;
  m.iteration = r.u64();
  const std::uint8_t flags = r.u8();
  m.converged = (flags & kFlagConverged) != 0;
  m.screening_trigger = (flags & kFlagScreeningTrigger) != 0;
  const std::uint32_t count = r.u32();
  m.indices.resize(count);
  m.gap.resize(count);
  m.sigma.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) m.indices[i] = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const double re = r.f64();
    const double im = r.f64();
    m.gap[i] = {re, im};
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const double re = r.f64();
    const double im = r.f64();
    m.sigma[i] = {re, im};
  }
  if (!r.exhausted()) throw std::invalid_argument("wire: trailing bytes");
  return m;
}

inline ScreeningNotice decode_notice(const std::vector<std::uint8_t>& frame) {
  detail::Reader r(frame.data(), frame.size());
  if (r.u8() != static_cast<std::uint8_t>(Kind::kScreeningNotice))
    throw std::invalid_argument("wire: not a screening notice frame");
  ScreeningNotice m;
  m.sensor_id = r.u32();
  m.iteration = r.u64();
  const std::uint32_t count = r.u32();
  m.removed.resize(count);
  m.frozen.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) m.removed[i] = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const double re = r.f64();
    const double im = r.f64();
    m.frozen[i] = {re, im};
  }
  if (!r.exhausted()) throw std::invalid_argument("wire: trailing bytes");
  return m;
}

inline Terminate decode_terminate(const std::vector<std::uint8_t>& frame) {
  detail::Reader r(frame.data(), frame.size());
  if (r.u8() != static_cast<std::uint8_t>(Kind::kTerminate))
    throw std::invalid_argument("wire: not a terminate frame");
  Terminate m;
  m.iteration = r.u64();
  if (!r.exhausted()) throw std::invalid_argument("wire: trailing bytes");
  return m;
}

}  // namespace radmm::wire
