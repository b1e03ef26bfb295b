#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace radmm {

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s, exact
inline constexpr double kPi = 3.141592653589793238462643383279502884;

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

/// Uniform pixel grid on the z = 0 plane. Pixel n = iy*nx + ix has its
/// center at origin + (ix*cell_size, iy*cell_size).
struct SceneGrid {
  int nx = 0;
  int ny = 0;
  double cell_size = 0.0;
  Vec2 origin = Vec2::Zero();

  int pixel_count() const { return nx * ny; }

  int index_of(int ix, int iy) const { return iy * nx + ix; }

  Vec3 pixel_center(int n) const {
    const int ix = n % nx;
    const int iy = n / nx;
    return {origin.x() + ix * cell_size, origin.y() + iy * cell_size, 0.0};
  }

  void validate() const {
    if (nx < 1 || ny < 1)
      throw std::invalid_argument("SceneGrid: nx and ny must be >= 1");
    if (!(cell_size > 0.0))
      throw std::invalid_argument("SceneGrid: cell_size must be > 0");
    if (!origin.allFinite())
      throw std::invalid_argument("SceneGrid: origin must be finite");
  }
};

/// One radar sensor: a single transmitter plus M receive antennas.
struct SensorArray {
  int id = 0;  // q, 1-based
  Vec3 tx_position = Vec3::Zero();
  std::vector<Vec3> rx_positions;

  int receiver_count() const { return static_cast<int>(rx_positions.size()); }

  void validate() const {
    if (id < 1) throw std::invalid_argument("SensorArray: id must be >= 1");
    if (rx_positions.empty())
      throw std::invalid_argument("SensorArray: needs at least one receiver");
    for (std::size_t i = 0; i < rx_positions.size(); ++i)
      for (std::size_t j = i + 1; j < rx_positions.size(); ++j)
        if (rx_positions[i] == rx_positions[j])
          throw std::invalid_argument(
              "SensorArray: receiver positions must be pairwise distinct");
    if (!tx_position.allFinite())
      throw std::invalid_argument("SensorArray: tx position must be finite");
  }
};

/// LFM chirp parameters. The fast-time sample count is derived at operator
/// build time from the pulse length plus the scene's maximum round-trip
/// delay, unless pinned explicitly here.
struct Waveform {
  double fc = 0.0;              // center frequency, Hz
  double bw = 0.0;              // sweep bandwidth, Hz
  double pulse_duration = 0.0;  // seconds
  double sample_rate = 0.0;     // Hz, complex baseband
  int fast_time_samples = 0;    // K; 0 = derive at build time

  double chirp_rate() const { return bw / pulse_duration; }

  void validate() const {
    if (!(fc > 0.0)) throw std::invalid_argument("Waveform: fc must be > 0");
    if (!(bw > 0.0)) throw std::invalid_argument("Waveform: bw must be > 0");
    if (!(pulse_duration > 0.0))
      throw std::invalid_argument("Waveform: pulse_duration must be > 0");
    if (!(sample_rate > 0.0))
      throw std::invalid_argument("Waveform: sample_rate must be > 0");
    // complex Nyquist
    if (sample_rate < bw)
      throw std::invalid_argument("Waveform: sample_rate must be >= bw");
    if (fast_time_samples < 0)
      throw std::invalid_argument("Waveform: fast_time_samples must be >= 0");
  }
};

}  // namespace radmm
