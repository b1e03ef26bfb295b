#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "radmm/scene.hpp"

using namespace radmm;

namespace {

TargetSpec square_target() {
  TargetSpec t;
  t.shape = {9, 10, 17, 18};
  t.base_amplitude = 1.0;
  t.aspect_profile = {{1, 1.0}, {2, 0.5}};
  return t;
}

}  // namespace

TEST_CASE("a target hidden from one sensor leaves that image empty") {
  TargetSpec t = square_target();
  t.aspect_profile = {{1, 0.8}};
  GroundTruth gt = generate_scene(fixtures::tiny_grid(), {t}, 2);
  REQUIRE(gt.per_sensor[0][9] == 0.8);
  REQUIRE(gt.per_sensor[1].norm() == 0.0);
}

TEST_CASE("an isotropic profile gives every sensor the same image") {
  TargetSpec t = square_target();
  t.aspect_profile = {{1, 1.0}, {2, 1.0}, {3, 1.0}};
  GroundTruth gt = generate_scene(fixtures::tiny_grid(), {t}, 3);
  REQUIRE(gt.per_sensor[0] == gt.per_sensor[1]);
  REQUIRE(gt.per_sensor[1] == gt.per_sensor[2]);
}

TEST_CASE("composite is the exact elementwise sum over sensors") {
  TargetSpec a = square_target();
  TargetSpec b;
  b.shape = {18, 19, 20};
  b.base_amplitude = 0.7;
  b.aspect_profile = {{2, 1.0}};
  GroundTruth gt = generate_scene(fixtures::tiny_grid(), {a, b}, 2);
  Eigen::VectorXd manual = gt.per_sensor[0] + gt.per_sensor[1];
  REQUIRE(gt.composite == manual);
  // Overlap at pixel 18 adds.
  REQUIRE(gt.per_sensor[1][18] == 0.5 + 0.7);
}

TEST_CASE("scene generation ignores target list order") {
  std::vector<TargetSpec> targets;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> amp(0.1, 2.0);
  for (int i = 0; i < 6; ++i) {
    TargetSpec t;
    t.shape = {i, i + 8, i + 9, 30, 31};
    t.base_amplitude = amp(rng);
    t.aspect_profile = {{1, 0.3}, {2, amp(rng) / 2.0}};
    targets.push_back(t);
  }
  GroundTruth forward = generate_scene(fixtures::tiny_grid(), targets, 2);
  std::reverse(targets.begin(), targets.end());
  GroundTruth reversed = generate_scene(fixtures::tiny_grid(), targets, 2);
  std::shuffle(targets.begin(), targets.end(), rng);
  GroundTruth shuffled = generate_scene(fixtures::tiny_grid(), targets, 2);
  for (int q = 0; q < 2; ++q) {
    REQUIRE(forward.per_sensor[q] == reversed.per_sensor[q]);
    REQUIRE(forward.per_sensor[q] == shuffled.per_sensor[q]);
  }
}

TEST_CASE("malformed targets are rejected") {
  TargetSpec t = square_target();
  t.shape = {64};  // one past the 8x8 grid
  REQUIRE_THROWS_AS(generate_scene(fixtures::tiny_grid(), {t}, 2),
                    std::invalid_argument);
  t = square_target();
  t.shape.clear();
  REQUIRE_THROWS_AS(t.validate(64), std::invalid_argument);
  t = square_target();
  t.aspect_profile = {{1, 0.0}, {2, 0.0}};
  REQUIRE_THROWS_AS(t.validate(64), std::invalid_argument);
  t = square_target();
  t.aspect_profile = {{1, 1.5}};
  REQUIRE_THROWS_AS(t.validate(64), std::invalid_argument);
}

TEST_CASE("infinite snr reproduces the clean echo exactly") {
  ForwardOperator op = ForwardOperator::dense(EchoKernel(
      fixtures::tiny_grid(), fixtures::tiny_sensor(1, 0.0),
      fixtures::tiny_waveform()));
  Eigen::VectorXd x = Eigen::VectorXd::Zero(64);
  x[20] = 1.0;
  x[21] = 0.5;
  Measurement m = simulate_measurement(
      op, x, std::numeric_limits<double>::infinity(), 42);
  REQUIRE(m.y == op.apply(x.cast<Complex>()));
  REQUIRE(m.noise_sigma == 0.0);
}

TEST_CASE("the same seed reproduces the measurement bitwise") {
  ForwardOperator op = ForwardOperator::dense(EchoKernel(
      fixtures::tiny_grid(), fixtures::tiny_sensor(1, 0.0),
      fixtures::tiny_waveform()));
  Eigen::VectorXd x = Eigen::VectorXd::Zero(64);
  x[12] = 1.0;
  Measurement a = simulate_measurement(op, x, 3.0, 99);
  Measurement b = simulate_measurement(op, x, 3.0, 99);
  Measurement c = simulate_measurement(op, x, 3.0, 100);
  REQUIRE(a.y == b.y);
  REQUIRE(a.y != c.y);
}

TEST_CASE("an empty scene has no defined snr") {
  ForwardOperator op = ForwardOperator::dense(EchoKernel(
      fixtures::tiny_grid(), fixtures::tiny_sensor(1, 0.0),
      fixtures::tiny_waveform()));
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(64);
  REQUIRE_THROWS_AS(simulate_measurement(op, zero, 3.0, 1),
                    std::invalid_argument);
  // Noiseless zero scene is fine: the echo is exactly zero.
  Measurement m = simulate_measurement(
      op, zero, std::numeric_limits<double>::infinity(), 1);
  REQUIRE(m.y.norm() == 0.0);
  REQUIRE_THROWS_AS(simulate_measurement(op, zero, std::nan(""), 1),
                    std::invalid_argument);
  Eigen::VectorXd neg = zero;
  neg[0] = -1.0;
  REQUIRE_THROWS_AS(simulate_measurement(op, neg, 3.0, 1),
                    std::invalid_argument);
}

TEST_CASE("noise scaling hits the requested snr in aggregate") {
  ForwardOperator op = ForwardOperator::dense(EchoKernel(
      fixtures::tiny_grid(), fixtures::tiny_sensor(1, 0.0),
      fixtures::tiny_waveform()));
  Eigen::VectorXd x = Eigen::VectorXd::Zero(64);
  x[20] = 1.0;
  x[29] = 0.8;
  const CVector clean = op.apply(x.cast<Complex>());
  double signal = 0.0, noise = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Measurement m = simulate_measurement(op, x, 3.0, mix_seed(7, seed));
    signal += clean.squaredNorm();
    noise += (m.y - clean).squaredNorm();
  }
  const double empirical_db = 10.0 * std::log10(signal / noise);
  REQUIRE(empirical_db == Catch::Approx(3.0).margin(0.5));
}

TEST_CASE("noise sigma follows the per-sensor power formula") {
  ForwardOperator op = ForwardOperator::dense(EchoKernel(
      fixtures::tiny_grid(), fixtures::tiny_sensor(1, 0.0),
      fixtures::tiny_waveform()));
  Eigen::VectorXd x = Eigen::VectorXd::Zero(64);
  x[35] = 1.3;
  Measurement m = simulate_measurement(op, x, 7.0, 5);
  const double expected = std::sqrt(op.apply(x.cast<Complex>()).squaredNorm() /
                                    (op.rows() * std::pow(10.0, 0.7)));
  REQUIRE(m.noise_sigma == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("unit gaussian stream has the right moments") {
  ComplexGaussian g(2024);
  const int n = 200000;
  Complex mean{0.0, 0.0};
  double power = 0.0;
  for (int i = 0; i < n; ++i) {
    const Complex w = g();
    mean += w;
    power += std::norm(w);
  }
  mean /= static_cast<double>(n);
  power /= static_cast<double>(n);
  REQUIRE(std::abs(mean) < 0.01);
  REQUIRE(power == Catch::Approx(1.0).epsilon(0.02));
}

TEST_CASE("per-sensor noise streams are uncorrelated") {
  ComplexGaussian a(mix_seed(123, 1));
  ComplexGaussian b(mix_seed(123, 2));
  const int n = 10000;
  Complex cross{0.0, 0.0};
  for (int i = 0; i < n; ++i) cross += a() * std::conj(b());
  REQUIRE(std::abs(cross) / n < 0.05);
}

TEST_CASE("seed mixing separates streams deterministically") {
  REQUIRE(mix_seed(42, 1) == mix_seed(42, 1));
  REQUIRE(mix_seed(42, 1) != mix_seed(42, 2));
  REQUIRE(mix_seed(42, 1) != mix_seed(43, 1));
}

TEST_CASE("a measurement set derives one stream per sensor") {
  std::vector<ForwardOperator> ops;
  for (double offset : {-0.4, 0.4})
    ops.push_back(ForwardOperator::dense(EchoKernel(
        fixtures::tiny_grid(), fixtures::tiny_sensor(1, offset),
        fixtures::tiny_waveform())));
  TargetSpec t = square_target();
  GroundTruth gt = generate_scene(fixtures::tiny_grid(), {t}, 2);
  MeasurementSet set = simulate_measurements(ops, gt, 3.0, 77);
  REQUIRE(set.entries.size() == 2);
  REQUIRE(set.entries[0].sensor_id == 1);
  REQUIRE(set.entries[1].sensor_id == 2);
  REQUIRE(set.entries[0].seed == mix_seed(77, 1));
  REQUIRE(set.entries[1].seed == mix_seed(77, 2));
  MeasurementSet again = simulate_measurements(ops, gt, 3.0, 77);
  REQUIRE(set.entries[0].y == again.entries[0].y);
  REQUIRE(set.entries[1].y == again.entries[1].y);
}
