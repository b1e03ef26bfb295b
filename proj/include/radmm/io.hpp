#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "radmm/forward_model.hpp"

// On-disk artifacts. Everything is fixed-width little-endian so runs on
// different machines produce byte-identical files from the same seed.
namespace radmm::io {

namespace detail {

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
  explicit Reader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }

  std::uint64_t u64() {
    const std::uint8_t* p = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  bool exhausted() const { return at_ == bytes_.size(); }

 private:
  const std::uint8_t* take(std::size_t n) {
    if (bytes_.size() - at_ < n)
      throw std::runtime_error("file truncated");
    const std::uint8_t* p = bytes_.data() + at_;
    at_ += n;
    return p;
  }

  std::vector<std::uint8_t> bytes_;
  std::size_t at_ = 0;
};

inline void write_bytes(const std::string& path,
                        const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open " + path);
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw std::runtime_error("read from " + path + " failed");
  return bytes;
}

}  // namespace detail

/// Raw image grid: little-endian float64, pixel order matching
/// SceneGrid::index_of (x varies fastest).
inline void write_f64(const std::string& path, const Eigen::VectorXd& image) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(static_cast<std::size_t>(image.size()) * 8);
  for (Eigen::Index i = 0; i < image.size(); ++i)
    detail::put_f64(bytes, image[i]);
  detail::write_bytes(path, bytes);
}

inline Eigen::VectorXd read_f64(const std::string& path) {
  const std::vector<std::uint8_t> bytes = detail::read_bytes(path);
  if (bytes.size() % 8 != 0)
    throw std::runtime_error(path + " is not a float64 grid");
  detail::Reader reader(bytes);
  Eigen::VectorXd image(static_cast<Eigen::Index>(bytes.size() / 8));
  for (Eigen::Index i = 0; i < image.size(); ++i) image[i] = reader.f64();
  return image;
}

/// Gray level for one pixel of the dB render: 20*log10(|v|/peak) clipped to
/// [-30, 0] and mapped linearly onto [0, 65535]. The peak lands exactly on
/// 65535; anything at or below peak - 30 dB lands on 0.
inline std::uint16_t pgm_level(double value, double peak) {
  const double mag = std::abs(value);
  if (!(peak > 0.0) || mag <= 0.0) return 0;
  double db = 20.0 * std::log10(mag / peak);
  if (db < -30.0) db = -30.0;
  if (db > 0.0) db = 0.0;
  return static_cast<std::uint16_t>(std::lround((db + 30.0) / 30.0 * 65535.0));
}

/// 16-bit binary PGM of a magnitude image on a 30 dB scale. Sample bytes are
/// most-significant first (the convention for maxval > 255); rows are written
/// top-down with +y up, so viewers show the scene in scene orientation.
inline void write_pgm(const std::string& path, const Eigen::VectorXd& image,
                      int nx, int ny) {
  if (nx < 1 || ny < 1) throw std::invalid_argument("write_pgm: empty grid");
  if (image.size() != static_cast<Eigen::Index>(nx) * ny)
    throw std::invalid_argument("write_pgm: image does not match grid");
  const double peak = image.cwiseAbs().maxCoeff();

  const std::string header =
      "P5\n" + std::to_string(nx) + " " + std::to_string(ny) + "\n65535\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + static_cast<std::size_t>(nx) * ny * 2);
  for (int iy = ny - 1; iy >= 0; --iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const std::uint16_t level =
          pgm_level(image[static_cast<Eigen::Index>(iy) * nx + ix], peak);
      bytes.push_back(static_cast<std::uint8_t>(level >> 8));
      bytes.push_back(static_cast<std::uint8_t>(level & 0xff));
    }
  }
  detail::write_bytes(path, bytes);
}

constexpr std::uint32_t kMeasurementMagic = 0x4D4D4452;  // "RDMM" on disk
constexpr std::uint32_t kMeasurementVersion = 1;

/// One sensor's simulated measurement vector plus the metadata needed to
/// reproduce it.
struct MeasurementFile {
  std::uint64_t sensor_id = 0;
  std::uint64_t samples_per_receiver = 0;
  std::uint64_t receiver_count = 0;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
  CVector y;
};

inline void write_measurement(const std::string& path,
                              const MeasurementFile& m) {
  if (m.y.size() != static_cast<Eigen::Index>(m.samples_per_receiver *
                                              m.receiver_count))
    throw std::invalid_argument(
        "write_measurement: sample count does not match header");
  std::vector<std::uint8_t> bytes;
  bytes.reserve(44 + static_cast<std::size_t>(m.y.size()) * 16);
  detail::put_u32(bytes, kMeasurementMagic);
  detail::put_u32(bytes, kMeasurementVersion);
  detail::put_u64(bytes, m.sensor_id);
  detail::put_u64(bytes, m.samples_per_receiver);
  detail::put_u64(bytes, m.receiver_count);
  detail::put_f64(bytes, m.snr_db);
  detail::put_u64(bytes, m.seed);
  for (Eigen::Index i = 0; i < m.y.size(); ++i) {
    detail::put_f64(bytes, m.y[i].real());
    detail::put_f64(bytes, m.y[i].imag());
  }
  detail::write_bytes(path, bytes);
}

inline MeasurementFile read_measurement(const std::string& path) {
  detail::Reader reader(detail::read_bytes(path));
  if (reader.u32() != kMeasurementMagic)
    throw std::runtime_error(path + " is not a measurement file");
  const std::uint32_t version = reader.u32();
  if (version != kMeasurementVersion)
    throw std::runtime_error(path + ": unsupported measurement version " +
                             std::to_string(version));
  MeasurementFile m;
  m.sensor_id = reader.u64();
  m.samples_per_receiver = reader.u64();
  m.receiver_count = reader.u64();
  m.snr_db = reader.f64();
  m.seed = reader.u64();
  const std::uint64_t count = m.samples_per_receiver * m.receiver_count;
  m.y.resize(static_cast<Eigen::Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    const double re = reader.f64();
    const double im = reader.f64();
    m.y[static_cast<Eigen::Index>(i)] = Complex(re, im);
  }
  if (!reader.exhausted())
    throw std::runtime_error(path + ": trailing bytes after measurement data");
  return m;
}

}  // namespace radmm::io
