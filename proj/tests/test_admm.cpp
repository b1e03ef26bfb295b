#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <random>
#include <sstream>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "radmm/admm.hpp"

using namespace radmm;

namespace {

Hyperparams defaults() { return Hyperparams{}; }

Problem from_matrices(const std::vector<CMatrix>& as,
                      const std::vector<CVector>& ys) {
  Problem p;
  for (const CMatrix& a : as) p.operators.push_back(ForwardOperator::from_matrix(a));
  p.measurements = ys;
  return p;
}

}  // namespace

TEST_CASE("hyperparameter validation") {
  Hyperparams h = defaults();
  REQUIRE_NOTHROW(h.validate());
  h.lambda = 0.0;  // an unregularized run is legal
  REQUIRE_NOTHROW(h.validate());
  h = defaults();
  h.mu = 0.0;
  REQUIRE_THROWS_AS(h.validate(), std::invalid_argument);
  h = defaults();
  h.beta = -1.0;
  REQUIRE_THROWS_AS(h.validate(), std::invalid_argument);
  h = defaults();
  h.screening_window = 1;
  REQUIRE_THROWS_AS(h.validate(), std::invalid_argument);
  h = defaults();
  h.max_iter = 0;
  REQUIRE_THROWS_AS(h.validate(), std::invalid_argument);
  h = defaults();
  h.lambda = -0.1;
  REQUIRE_THROWS_AS(h.validate(), std::invalid_argument);
}

TEST_CASE("problem validation") {
  std::mt19937_64 rng(1);
  CMatrix a = CMatrix::Zero(4, 3);
  Problem p = from_matrices({a}, {fixtures::random_cvector(4, rng)});
  REQUIRE_NOTHROW(p.validate());
  p.measurements[0] = fixtures::random_cvector(5, rng);
  REQUIRE_THROWS_AS(p.validate(), std::invalid_argument);
  Problem empty;
  REQUIRE_THROWS_AS(empty.validate(), std::invalid_argument);
  Problem mixed = from_matrices({CMatrix::Zero(4, 3), CMatrix::Zero(4, 2)},
                                {CVector::Zero(4), CVector::Zero(4)});
  REQUIRE_THROWS_AS(mixed.validate(), std::invalid_argument);
}

TEST_CASE("fusion update with zero regularizer is a pure pass-through") {
  Hyperparams h = defaults();
  h.lambda = 0.0;
  FusionCore fusion;
  fusion.init(3, 1, &h);
  CVector c(3);
  c << Complex{0.4, 0.1}, Complex{-0.2, 0.0}, Complex{0.0, 0.05};
  fusion.set_contribution(1, {0, 1, 2}, c);
  fusion.round();
  REQUIRE(fusion.x_global() == fusion.s());
  REQUIRE(fusion.s() == c);
  // Feasible point: the dual stays put.
  REQUIRE(fusion.sigma().norm() == 0.0);
  REQUIRE(fusion.pri_res() == 0.0);
  // First iteration never terminates, a second identical one does.
  REQUIRE_FALSE(fusion.converged());
  fusion.round();
  REQUIRE(fusion.converged());
  REQUIRE(fusion.dual_res() == 0.0);
}

TEST_CASE("fusion threshold zeroes everything under lambda over beta") {
  Hyperparams h = defaults();  // lambda/beta = 0.2
  FusionCore fusion;
  fusion.init(2, 1, &h);
  CVector c(2);
  c << Complex{0.19, 0.0}, Complex{0.0, -0.21};
  fusion.set_contribution(1, {0, 1}, c);
  fusion.round();
  REQUIRE(fusion.x_global()[0] == Complex{0.0, 0.0});
  REQUIRE(std::abs(fusion.x_global()[1] - Complex{0.0, -0.01}) < 1e-15);
  REQUIRE(fusion.gap() == fusion.x_global() - fusion.s());
}

TEST_CASE("a zero system matrix turns the local step into consensus chasing") {
  // With no data term the minimizer is x_hat + gap - sigma/beta; starting
  // from zero with s = x_hat this is x_G - sigma/beta.
  Hyperparams h = defaults();
  ForwardOperator op = ForwardOperator::from_matrix(CMatrix::Zero(3, 1));
  CVector y = CVector::Zero(3);
  SensorCore sensor;
  sensor.init(&op, &y, &h);
  CVector x_g(1), sigma(1);
  x_g[0] = {0.7, 0.2};
  sigma[0] = {0.3, -0.1};
  const CVector gap = x_g;  // s is still zero
  sensor.local_update(gap, sigma);
  const Complex expected = x_g[0] - sigma[0] / h.beta;
  REQUIRE(std::abs(sensor.x_hat()[0] - expected) < 1e-15);
}

TEST_CASE("the engine solves the scalar lasso to its closed form") {
  std::mt19937_64 rng(9);
  CMatrix a(3, 1);
  a << Complex{0.9, 0.3}, Complex{-0.4, 0.7}, Complex{0.2, -0.5};
  CVector y = fixtures::random_cvector(3, rng);
  Hyperparams h = defaults();
  h.mu = 3.0;
  h.lambda = 0.8;
  h.beta = 2.0;
  h.eps_abs = 1e-10;
  h.eps_rel = 1e-8;
  h.max_iter = 20000;
  RunResult r = run(from_matrices({a}, {y}), h, Mode::kSadmm);
  REQUIRE(r.converged);
  const Complex corr = h.mu * (a.adjoint() * y)(0, 0);
  const double mag = std::abs(corr);
  const Complex closed_form =
      mag > h.lambda
          ? corr * ((mag - h.lambda) / mag) / (h.mu * a.squaredNorm())
          : Complex{0.0, 0.0};
  REQUIRE(std::abs(r.x_global[0] - closed_form) < 1e-6);
}

TEST_CASE("zero measurements collapse to a zero image in two iterations") {
  fixtures::TinyScenario sc = fixtures::tiny_scenario(
      std::numeric_limits<double>::infinity(), 0);
  for (CVector& y : sc.problem.measurements) y.setZero();
  RunResult r = run(sc.problem, defaults(), Mode::kSadmm);
  REQUIRE(r.converged);
  REQUIRE(r.iterations <= 2);
  REQUIRE(r.image.norm() == 0.0);
}

TEST_CASE("screening rule drops exactly-constant pixels and keeps live ones") {
  Hyperparams h = defaults();
  h.mu = 3.0;
  h.beta = 1.0;
  h.screening_window = 2;
  h.screening_tol = 1e-9;
  ForwardOperator op = ForwardOperator::from_matrix(CMatrix::Identity(2, 2));
  CVector y(2);
  y << Complex{1.0, 0.0}, Complex{0.0, 0.0};
  SensorCore sensor;
  sensor.init(&op, &y, &h);
  const CVector zero2 = CVector::Zero(2);
  // Too little history: screening is a no-op.
  sensor.local_update(zero2, zero2);
  REQUIRE(sensor.screen().empty());
  REQUIRE(sensor.active_count() == 2);
  sensor.local_update(zero2, zero2);
  // Pixel 0 keeps moving toward y0; pixel 1 is identically zero.
  std::vector<int> removed = sensor.screen();
  REQUIRE(removed == std::vector<int>{1});
  REQUIRE(sensor.active_indices() == std::vector<int>{0});
  REQUIRE_FALSE(sensor.stalled());
  REQUIRE(sensor.x_full()[1] == Complex{0.0, 0.0});
  // The frozen entry never changes again.
  sensor.local_update(zero2, zero2);
  REQUIRE(sensor.x_full()[1] == Complex{0.0, 0.0});
  REQUIRE(sensor.active_count() == 1);
}

TEST_CASE("screening never empties the active set") {
  Hyperparams h = defaults();
  h.beta = 1.0;
  h.screening_window = 2;
  h.screening_tol = 1e9;  // would remove everything
  ForwardOperator op = ForwardOperator::from_matrix(CMatrix::Identity(2, 2));
  CVector y(2);
  y << Complex{1.0, 0.0}, Complex{0.5, 0.0};
  SensorCore sensor;
  sensor.init(&op, &y, &h);
  const CVector zero2 = CVector::Zero(2);
  sensor.local_update(zero2, zero2);
  sensor.local_update(zero2, zero2);
  REQUIRE(sensor.screen().empty());
  REQUIRE(sensor.stalled());
  REQUIRE(sensor.active_count() == 2);
}

TEST_CASE("no pixels are dropped while everything still moves") {
  Hyperparams h = defaults();
  h.beta = 1.0;
  h.screening_window = 2;
  h.screening_tol = 1e-9;
  ForwardOperator op = ForwardOperator::from_matrix(CMatrix::Identity(2, 2));
  CVector y(2);
  y << Complex{1.0, 0.0}, Complex{0.5, 0.0};
  SensorCore sensor;
  sensor.init(&op, &y, &h);
  const CVector zero2 = CVector::Zero(2);
  sensor.local_update(zero2, zero2);
  sensor.local_update(zero2, zero2);
  REQUIRE(sensor.screen().empty());
  REQUIRE_FALSE(sensor.stalled());
  REQUIRE(sensor.active_count() == 2);
}

TEST_CASE("after freezing, the data term subtracts the frozen echo") {
  Hyperparams h = defaults();
  h.mu = 2.0;
  h.beta = 1.5;
  h.screening_window = 2;
  h.screening_tol = 1e-9;
  CMatrix a(2, 2);
  a << Complex{1.0, 0.0}, Complex{0.5, 0.2},
       Complex{0.3, 0.0}, Complex{1.0, 0.0};
  ForwardOperator op = ForwardOperator::from_matrix(a);
  CVector y(2);
  y << Complex{1.0, 0.0}, Complex{-0.4, 0.3};
  SensorCore sensor;
  sensor.init(&op, &y, &h);

  // Steer the iterates by choosing sigma so each update lands on a chosen
  // target: pixel 1 is held at a fixed nonzero value while pixel 0 moves,
  // which makes the screening rule freeze pixel 1 at that value.
  CMatrix system = h.mu * (a.adjoint() * a);
  system.diagonal().array() += h.beta;
  const CVector data = h.mu * (a.adjoint() * y);
  const CVector zero2 = CVector::Zero(2);
  const Complex held{0.6, -0.2};
  for (Complex moving : {Complex{0.3, 0.0}, Complex{0.8, 0.1}, Complex{0.1, -0.3}}) {
    CVector target(2);
    target << moving, held;
    const CVector sigma = data + h.beta * sensor.x_hat() - system * target;
    sensor.local_update(zero2, sigma);
    REQUIRE(std::abs(sensor.x_hat()[1] - held) < 1e-12);
  }
  REQUIRE(sensor.screen() == std::vector<int>{1});
  const Complex frozen_value = sensor.x_full()[1];
  REQUIRE(std::abs(frozen_value - held) < 1e-12);

  // Independent prediction of the next active update from the formula,
  // with the frozen pixel's echo moved to the measurement side.
  std::mt19937_64 rng(4);
  CVector gap = fixtures::random_cvector(2, rng);
  CVector sigma = fixtures::random_cvector(2, rng);
  CVector frozen(2);
  frozen << Complex{0.0, 0.0}, frozen_value;
  const CMatrix a_hat = a.col(0);
  const CVector y_eff = y - a * frozen;
  const Complex rhs = (h.mu * (a_hat.adjoint() * y_eff))(0, 0) +
                      h.beta * gap[0] + h.beta * sensor.x_hat()[0] - sigma[0];
  const Complex denom =
      (h.mu * (a_hat.adjoint() * a_hat))(0, 0) + Complex{h.beta, 0.0};
  sensor.local_update(gap, sigma);
  REQUIRE(std::abs(sensor.x_hat()[0] - rhs / denom) < 1e-12);
  REQUIRE(sensor.x_full()[1] == frozen_value);
}

TEST_CASE("accelerated mode with screening disabled matches plain mode bitwise") {
  fixtures::TinyScenario sc = fixtures::tiny_scenario(3.0, 11);
  Hyperparams h = defaults();
  std::vector<CVector> plain_iterates, accel_iterates;
  RunResult plain = run(sc.problem, h, Mode::kSadmm, [&](const IterationView& v) {
    plain_iterates.push_back(v.x_global);
    plain_iterates.push_back(v.s);
    plain_iterates.push_back(v.sigma);
  });
  RunResult accel = run(
      sc.problem, h, Mode::kAsadmm,
      [&](const IterationView& v) {
        accel_iterates.push_back(v.x_global);
        accel_iterates.push_back(v.s);
        accel_iterates.push_back(v.sigma);
      },
      /*disable_screening=*/true);
  REQUIRE(plain.iterations == accel.iterations);
  REQUIRE(plain_iterates.size() == accel_iterates.size());
  for (std::size_t i = 0; i < plain_iterates.size(); ++i)
    REQUIRE(plain_iterates[i] == accel_iterates[i]);
  REQUIRE(plain.image == accel.image);
}

TEST_CASE("termination matches a straight-line reference within two iterations") {
  fixtures::TinyScenario sc = fixtures::tiny_scenario(3.0, 21);
  Hyperparams h = defaults();
  RunResult r = run(sc.problem, h, Mode::kSadmm);
  REQUIRE(r.converged);
  std::vector<CMatrix> as;
  for (const ForwardOperator& op : sc.problem.operators) as.push_back(op.matrix());
  oracles::ReferenceRun ref = oracles::reference_sharing_solver(
      as, sc.problem.measurements, h.mu, h.lambda, h.beta, h.eps_abs,
      h.eps_rel, h.max_iter);
  REQUIRE(ref.converged);
  REQUIRE(std::abs(ref.iterations - r.iterations) <= 2);
  REQUIRE((ref.x_global - r.x_global).norm() <=
          1e-3 * std::max(1.0, r.x_global.norm()));
}

TEST_CASE("a converged state satisfies the stopping and fixed-point contracts") {
  fixtures::TinyScenario sc = fixtures::tiny_scenario(3.0, 31);
  Hyperparams h = defaults();
  for (Mode mode : {Mode::kSadmm, Mode::kAsadmm}) {
    RunResult r = run(sc.problem, h, mode);
    REQUIRE(r.converged);
    const IterationRecord& last = r.report.iterations.back();
    REQUIRE((r.s - r.x_global).norm() <= last.eps_pri);
    REQUIRE(last.pri_res <= last.eps_pri);
    REQUIRE(last.dual_res <= last.eps_dual);
    // The final consensus image is exactly the threshold of what it saw.
    const CVector recomputed = soft_threshold(
        r.s + r.sigma_pre_global / h.beta, h.lambda / h.beta);
    REQUIRE(recomputed == r.x_global);
    // The aggregate really is the average of the per-sensor images.
    CVector total = CVector::Zero(r.s.size());
    for (const CVector& xq : r.sensor_images) total += xq;
    total /= static_cast<double>(r.sensor_images.size());
    REQUIRE(total == r.s);
  }
}

TEST_CASE("accelerated runs shrink the active set monotonically") {
  fixtures::TinyScenario sc = fixtures::tiny_scenario(3.0, 41);
  Hyperparams h = defaults();
  h.screening_tol = 1e-3;  // screen aggressively so the machinery is exercised
  RunResult accel = run(sc.problem, h, Mode::kAsadmm);
  RunResult plain = run(sc.problem, h, Mode::kSadmm);
  REQUIRE(accel.converged);
  REQUIRE(plain.converged);

  const int q_count = sc.problem.sensor_count();
  bool shrank = false;
  for (int q = 0; q < q_count; ++q) {
    for (std::size_t k = 1; k < accel.report.iterations.size(); ++k) {
      REQUIRE(accel.report.iterations[k].active_sizes[q] <=
              accel.report.iterations[k - 1].active_sizes[q]);
      REQUIRE(accel.report.iterations[k].sensor_bytes[q] <=
              accel.report.iterations[k - 1].sensor_bytes[q]);
    }
    if (accel.report.iterations.back().active_sizes[q] <
        accel.report.iterations.front().active_sizes[q])
      shrank = true;
  }
  REQUIRE(shrank);
  for (std::size_t k = 1; k < accel.report.iterations.size(); ++k)
    REQUIRE(accel.report.iterations[k].active_fraction <=
            accel.report.iterations[k - 1].active_fraction);

  // Plain mode always solves and ships the full grid.
  const std::uint64_t full_bytes = wire::contribution_size(64);
  for (const IterationRecord& rec : plain.report.iterations) {
    REQUIRE(rec.active_fraction == 1.0);
    for (std::uint64_t b : rec.sensor_bytes) REQUIRE(b == full_bytes);
  }
  REQUIRE(accel.report.total_active_solves < plain.report.total_active_solves);
  // The two reconstructions still agree closely.
  REQUIRE(relative_l2_diff(accel.image, plain.image) < 0.15);
}

TEST_CASE("hitting the iteration cap reports non-convergence") {
  fixtures::TinyScenario sc = fixtures::tiny_scenario(3.0, 51);
  Hyperparams h = defaults();
  h.max_iter = 3;
  RunResult r = run(sc.problem, h, Mode::kSadmm);
  REQUIRE_FALSE(r.converged);
  REQUIRE(r.iterations == 3);
  REQUIRE(r.report.iterations.size() == 3);
}

TEST_CASE("the engine objective agrees with a proximal-gradient reference") {
  std::mt19937_64 rng(61);
  std::normal_distribution<double> dist(0.0, 1.0);
  const int n = 9, rows = 8;
  std::vector<CMatrix> as;
  std::vector<CVector> ys;
  for (int q = 0; q < 2; ++q) {
    CMatrix a(rows, n);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < n; ++c)
        a(r, c) = Complex{dist(rng), dist(rng)} / std::sqrt(2.0 * rows);
    as.push_back(a);
    ys.push_back(fixtures::random_cvector(rows, rng));
  }
  const double mu = 2.0, lambda = 0.05;
  Hyperparams h = defaults();
  h.mu = mu;
  h.lambda = lambda;
  h.beta = 1.0;
  h.eps_abs = 1e-9;
  h.eps_rel = 1e-7;
  h.max_iter = 50000;
  Problem p = from_matrices(as, ys);
  RunResult r = run(p, h, Mode::kSadmm);
  REQUIRE(r.converged);
  const double engine_obj =
      objective_value(p, r.sensor_images, mu, lambda);
  const double oracle_obj =
      oracles::prox_gradient_objective(as, ys, mu, lambda, 20000);
  REQUIRE(std::abs(engine_obj - oracle_obj) / oracle_obj < 5e-3);
}

TEST_CASE("convergence reports serialize to csv") {
  fixtures::TinyScenario sc = fixtures::tiny_scenario(3.0, 71);
  RunResult r = run(sc.problem, defaults(), Mode::kSadmm);
  std::ostringstream out;
  r.report.write_csv(out);
  std::istringstream in(out.str());
  std::string line;
  REQUIRE(std::getline(in, line));
  REQUIRE(line ==
          "iter,pri_res,dual_res,eps_pri,eps_dual,active_frac,ms_elapsed,"
          "bytes_sent");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    REQUIRE(std::count(line.begin(), line.end(), ',') == 7);
  }
  REQUIRE(rows == r.iterations);
}

TEST_CASE("image quality metrics behave") {
  Eigen::VectorXd gt(4);
  gt << 1.0, 0.0, 2.0, 0.0;
  REQUIRE(nmse_db(gt, gt) < -300.0);  // essentially exact
  // Scale invariance: the optimal rescaling absorbs a global factor.
  REQUIRE(nmse_db(0.37 * gt, gt) < -300.0);
  Eigen::VectorXd off = gt;
  off[1] = 0.5;
  REQUIRE(nmse_db(off, gt) > -20.0);
  REQUIRE(relative_l2_diff(gt, gt) == 0.0);
  REQUIRE(relative_l2_diff(gt, Eigen::VectorXd::Zero(4)) == 1.0);
  REQUIRE_THROWS_AS(nmse_db(gt, Eigen::VectorXd::Zero(4)),
                    std::invalid_argument);
}
