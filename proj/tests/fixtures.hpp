#pragma once

#include <random>
#include <vector>

#include "radmm/forward_model.hpp"
#include "radmm/geometry.hpp"

// Small shared setup: an 8x8 grid at ~1.4 m standoff and two 2-receiver
// sensors, sized so dense operators stay under 100x64.
namespace fixtures {

inline radmm::SceneGrid tiny_grid() {
  radmm::SceneGrid g;
  g.nx = 8;
  g.ny = 8;
  g.cell_size = 0.05;
  g.origin = {-0.175, 1.2};
  return g;
}

inline radmm::SensorArray tiny_sensor(int id, double x_offset) {
  radmm::SensorArray s;
  s.id = id;
  s.tx_position = {x_offset, -0.3, 0.0};
  s.rx_positions = {{x_offset - 0.3, -0.3, 0.0}, {x_offset + 0.3, -0.3, 0.0}};
  return s;
}

// Bandwidth chosen so the range resolution c/(2 bw) matches the 5 cm cell;
// coarser pulses leave the grid columns nearly collinear and the sweeps
// crawl.
inline radmm::Waveform tiny_waveform() {
  radmm::Waveform w;
  w.fc = 5e9;
  w.bw = 3e9;
  w.pulse_duration = 30e-9;
  w.sample_rate = 3e9;
  return w;
}

inline radmm::CVector random_cvector(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  radmm::CVector v(n);
  for (int i = 0; i < n; ++i) v[i] = {dist(rng), dist(rng)};
  return v;
}

}  // namespace fixtures

#include "radmm/admm.hpp"
#include "radmm/scene.hpp"

namespace fixtures {

struct TinyScenario {
  radmm::Problem problem;
  radmm::GroundTruth gt;
};

/// Two sensors looking at an 8x8 scene with three small targets, one of
/// them invisible to sensor 1. Infinite snr_db gives a deterministic
/// noiseless instance.
inline TinyScenario tiny_scenario(double snr_db, std::uint64_t seed) {
  const radmm::SceneGrid grid = tiny_grid();
  // Amplitudes sit well above the lambda/beta threshold once the sub-image
  // average reaches the fusion step, so the l1 term trims clutter instead
  // of blanking the scene.
  radmm::TargetSpec square;
  square.shape = {9, 10, 17, 18};
  square.base_amplitude = 4.0;
  square.aspect_profile = {{1, 1.0}, {2, 0.6}};
  radmm::TargetSpec bar;
  bar.shape = {44, 45, 46};
  bar.base_amplitude = 3.2;
  bar.aspect_profile = {{2, 1.0}};
  radmm::TargetSpec point;
  point.shape = {29};
  point.base_amplitude = 4.8;
  point.aspect_profile = {{1, 0.9}, {2, 0.9}};

  TinyScenario sc;
  sc.gt = radmm::generate_scene(grid, {square, bar, point}, 2);
  int id = 1;
  for (double offset : {-0.4, 0.4})
    sc.problem.operators.push_back(radmm::ForwardOperator::dense(
        radmm::EchoKernel(grid, tiny_sensor(id++, offset), tiny_waveform())));
  radmm::MeasurementSet meas =
      radmm::simulate_measurements(sc.problem.operators, sc.gt, snr_db, seed);
  for (const radmm::Measurement& m : meas.entries)
    sc.problem.measurements.push_back(m.y);
  return sc;
}

}  // namespace fixtures
