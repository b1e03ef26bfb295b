#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <vector>

#include "radmm/forward_model.hpp"
#include "radmm/geometry.hpp"

namespace radmm {

/// A target occupies a set of pixels and reflects with a per-sensor scale,
/// so different sensors can see the same object at different strengths (or
/// not at all).
struct TargetSpec {
  std::vector<int> shape;                // pixel indices into the grid
  double base_amplitude = 0.0;
  std::map<int, double> aspect_profile;  // sensor id -> scale in [0, 1]

  double scale_for(int sensor_id) const {
    const auto it = aspect_profile.find(sensor_id);
    return it == aspect_profile.end() ? 0.0 : it->second;
  }

  void validate(int pixel_count) const {
    if (shape.empty())
      throw std::invalid_argument("TargetSpec: shape must be nonempty");
    for (int n : shape)
      if (n < 0 || n >= pixel_count)
        throw std::invalid_argument("TargetSpec: pixel index out of grid");
    if (!(base_amplitude >= 0.0))
      throw std::invalid_argument("TargetSpec: base_amplitude must be >= 0");
    double peak = 0.0;
    for (const auto& [q, scale] : aspect_profile) {
      if (q < 1) throw std::invalid_argument("TargetSpec: sensor ids are 1-based");
      if (!(scale >= 0.0 && scale <= 1.0))
        throw std::invalid_argument("TargetSpec: aspect scale must be in [0, 1]");
      peak = std::max(peak, scale);
    }
    if (base_amplitude * peak <= 0.0)
      throw std::invalid_argument(
          "TargetSpec: no sensor sees a nonzero amplitude");
  }
};

struct GroundTruth {
  std::vector<Eigen::VectorXd> per_sensor;  // x_q, index q-1
  Eigen::VectorXd composite;                // sum over sensors, exact
};

/// Rasterize targets into per-sensor reflectivity images. Contributions to
/// each pixel are sorted before accumulation so the result does not depend
/// on the order of the target list.
inline GroundTruth generate_scene(const SceneGrid& grid,
                                  const std::vector<TargetSpec>& targets,
                                  int sensor_count) {
  grid.validate();
  if (sensor_count < 1)
    throw std::invalid_argument("generate_scene: sensor_count must be >= 1");
  const int n_pixels = grid.pixel_count();
  for (const TargetSpec& t : targets) t.validate(n_pixels);

  GroundTruth gt;
  gt.per_sensor.assign(sensor_count, Eigen::VectorXd::Zero(n_pixels));
  std::vector<std::vector<double>> contributions(n_pixels);
  for (int q = 1; q <= sensor_count; ++q) {
    for (auto& c : contributions) c.clear();
    for (const TargetSpec& t : targets) {
      const double value = t.base_amplitude * t.scale_for(q);
      if (value == 0.0) continue;
      for (int n : t.shape) contributions[n].push_back(value);
    }
    Eigen::VectorXd& img = gt.per_sensor[q - 1];
    for (int n = 0; n < n_pixels; ++n) {
      std::sort(contributions[n].begin(), contributions[n].end());
      double acc = 0.0;
      for (double v : contributions[n]) acc += v;
      img[n] = acc;
    }
  }
  gt.composite = Eigen::VectorXd::Zero(n_pixels);
  for (const auto& img : gt.per_sensor) gt.composite += img;
  return gt;
}

/// splitmix64 finalizer; derives decorrelated per-stream seeds from one base.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + stream * 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Unit-variance circularly symmetric complex Gaussian stream. Box-Muller
/// is done by hand on top of mt19937_64 so the byte-exact sequence is the
/// same on every platform; std::normal_distribution makes no such promise.
class ComplexGaussian {
 public:
  explicit ComplexGaussian(std::uint64_t seed) : rng_(seed) {}

  Complex operator()() {
    constexpr double kScale = 0x1p-53;
    const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * kScale;
    const double u2 = static_cast<double>(rng_() >> 11) * kScale;
    return std::polar(std::sqrt(-std::log(u1)), 2.0 * kPi * u2);
  }

 private:
  std::mt19937_64 rng_;
};

struct Measurement {
  int sensor_id = 0;
  CVector y;
  double snr_db = 0.0;
  std::uint64_t seed = 0;     // per-sensor stream seed
  double noise_sigma = 0.0;   // per-sample std deviation actually applied
};

/// y = A x + w. Noise power is set so 10*log10(|A x|^2 / E|w|^2) equals
/// snr_db for this sensor; snr_db = +inf means exactly noiseless.
inline Measurement simulate_measurement(const ForwardOperator& op,
                                        const Eigen::VectorXd& x_gt,
                                        double snr_db, std::uint64_t seed,
                                        int sensor_id = 1) {
  if (x_gt.size() != op.cols())
    throw std::invalid_argument("simulate_measurement: image size mismatch");
  if (x_gt.minCoeff() < 0.0)
    throw std::invalid_argument(
        "simulate_measurement: reflectivities must be nonnegative");
  if (std::isnan(snr_db) || (std::isinf(snr_db) && snr_db < 0.0))
    throw std::invalid_argument("simulate_measurement: snr_db must be finite or +inf");

  Measurement m;
  m.sensor_id = sensor_id;
  m.snr_db = snr_db;
  m.seed = seed;
  m.y = op.apply(x_gt.cast<Complex>());
  if (std::isinf(snr_db)) return m;

  const double signal_power = m.y.squaredNorm();
  if (signal_power == 0.0)
    throw std::invalid_argument(
        "simulate_measurement: zero scene has no defined SNR");
  const double sample_count = static_cast<double>(op.rows());
  m.noise_sigma =
      std::sqrt(signal_power / (sample_count * std::pow(10.0, snr_db / 10.0)));
  ComplexGaussian noise(seed);
  for (Eigen::Index i = 0; i < m.y.size(); ++i) m.y[i] += m.noise_sigma * noise();
  return m;
}

struct MeasurementSet {
  std::vector<Measurement> entries;  // index q-1
  double snr_db = 0.0;
  std::uint64_t noise_seed = 0;      // base seed the per-sensor seeds derive from
};

inline MeasurementSet simulate_measurements(
    const std::vector<ForwardOperator>& operators, const GroundTruth& gt,
    double snr_db, std::uint64_t base_seed) {
  if (operators.size() != gt.per_sensor.size())
    throw std::invalid_argument(
        "simulate_measurements: need one operator per sensor image");
  MeasurementSet set;
  set.snr_db = snr_db;
  set.noise_seed = base_seed;
  for (std::size_t i = 0; i < operators.size(); ++i) {
    const int q = static_cast<int>(i) + 1;
    set.entries.push_back(simulate_measurement(
        operators[i], gt.per_sensor[i], snr_db,
        mix_seed(base_seed, static_cast<std::uint64_t>(q)), q));
  }
  return set;
}

}  // namespace radmm
