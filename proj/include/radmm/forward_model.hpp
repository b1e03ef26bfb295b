#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "radmm/geometry.hpp"

namespace radmm {

using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

/// Point-target echo model for one sensor. Row r = m*K + k of the operator
/// holds, for pixel n, the value of the delayed chirp at receiver m and
/// fast-time sample k:
///
///   tau    = (|tx - p_n| + |rx_m - p_n|) / c
///   a(m,k,n) = exp(-j 2 pi fc tau) * p(t_k - tau),   t_k = k / fs
///
/// where p(t) = exp(j pi alpha t^2) for t in [0, T] and zero outside.
/// Free-space amplitude decay is ignored; the carrier phase and the chirp
/// envelope carry all the information used downstream.
class EchoKernel {
 public:
  EchoKernel(const SceneGrid& grid, const SensorArray& sensor,
             const Waveform& waveform)
      : grid_(grid), sensor_(sensor), wf_(waveform) {
    grid_.validate();
    sensor_.validate();
    wf_.validate();
  }

  double delay(int m, int n) const {
    const Vec3 p = grid_.pixel_center(n);
    const double d_tx = (sensor_.tx_position - p).norm();
    const double d_rx = (sensor_.rx_positions[m] - p).norm();
    return (d_tx + d_rx) / kSpeedOfLight;
  }

  double max_delay() const {
    double tau_max = 0.0;
    for (int m = 0; m < sensor_.receiver_count(); ++m)
      for (int n = 0; n < grid_.pixel_count(); ++n)
        tau_max = std::max(tau_max, delay(m, n));
    return tau_max;
  }

  /// K = ceil((T + tau_max) * fs): long enough that the latest echo from any
  /// pixel has fully swept past the sampling window.
  int derive_sample_count() const {
    return static_cast<int>(
        std::ceil((wf_.pulse_duration + max_delay()) * wf_.sample_rate));
  }

  Complex entry(int m, int k, int n) const {
    const double tau = delay(m, n);
    const double t = static_cast<double>(k) / wf_.sample_rate - tau;
    if (t < 0.0 || t > wf_.pulse_duration) return {0.0, 0.0};
    const double carrier = -2.0 * kPi * wf_.fc * tau;
    const double chirp = kPi * wf_.chirp_rate() * t * t;
    return std::polar(1.0, carrier + chirp);
  }

  const SceneGrid& grid() const { return grid_; }
  const SensorArray& sensor() const { return sensor_; }
  const Waveform& waveform() const { return wf_; }

 private:
  SceneGrid grid_;
  SensorArray sensor_;
  Waveform wf_;
};

/// Linear measurement operator for one sensor: (M*K) x N, acting on the
/// full scene vector. Either materialized as a dense matrix or applied
/// entry-by-entry from the kernel.
class ForwardOperator {
 public:
  // ~0.5 GiB of complex doubles; beyond this, dense assembly is refused.
  static constexpr std::int64_t kDefaultDenseBudget = std::int64_t{1} << 25;

  static ForwardOperator dense(const EchoKernel& kernel,
                               std::int64_t entry_budget = kDefaultDenseBudget) {
    const int k_samples = resolve_samples(kernel);
    const int rows = kernel.sensor().receiver_count() * k_samples;
    const int cols = kernel.grid().pixel_count();
    const std::int64_t entries =
        static_cast<std::int64_t>(rows) * static_cast<std::int64_t>(cols);
    if (entries > entry_budget)
      throw std::length_error(
          "ForwardOperator::dense: " + std::to_string(entries) +
          " entries exceed the budget of " + std::to_string(entry_budget) +
          "; use ForwardOperator::matrix_free instead");
    CMatrix a(rows, cols);
    for (int n = 0; n < cols; ++n)
      for (int m = 0; m < kernel.sensor().receiver_count(); ++m)
        for (int k = 0; k < k_samples; ++k)
          a(m * k_samples + k, n) = kernel.entry(m, k, n);
    ForwardOperator op;
    op.rows_ = rows;
    op.cols_ = cols;
    op.fast_time_samples_ = k_samples;
    op.matrix_ = std::make_shared<CMatrix>(std::move(a));
    return op;
  }

  static ForwardOperator matrix_free(const EchoKernel& kernel) {
    const int k_samples = resolve_samples(kernel);
    ForwardOperator op;
    op.rows_ = kernel.sensor().receiver_count() * k_samples;
    op.cols_ = kernel.grid().pixel_count();
    op.fast_time_samples_ = k_samples;
    op.kernel_ = std::make_shared<EchoKernel>(kernel);
    return op;
  }

  static ForwardOperator from_matrix(CMatrix a) {
    ForwardOperator op;
    op.rows_ = static_cast<int>(a.rows());
    op.cols_ = static_cast<int>(a.cols());
    op.fast_time_samples_ = static_cast<int>(a.rows());
    op.matrix_ = std::make_shared<CMatrix>(std::move(a));
    return op;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int fast_time_samples() const { return fast_time_samples_; }
  bool is_dense() const { return matrix_ != nullptr; }

  const CMatrix& matrix() const {
    if (!matrix_)
      throw std::logic_error(
          "ForwardOperator::matrix: operator is matrix-free");
    return *matrix_;
  }

  CVector apply(const CVector& x) const {
    if (x.size() != cols_)
      throw std::invalid_argument("ForwardOperator::apply: size mismatch");
    if (matrix_) return *matrix_ * x;
    CVector y = CVector::Zero(rows_);
    const int mrx = kernel_->sensor().receiver_count();
    for (int n = 0; n < cols_; ++n) {
      if (x[n] == Complex{0.0, 0.0}) continue;
      for (int m = 0; m < mrx; ++m)
        for (int k = 0; k < fast_time_samples_; ++k)
          y[m * fast_time_samples_ + k] += kernel_->entry(m, k, n) * x[n];
    }
    return y;
  }

  CVector apply_adjoint(const CVector& y) const {
    if (y.size() != rows_)
      throw std::invalid_argument(
          "ForwardOperator::apply_adjoint: size mismatch");
    if (matrix_) return matrix_->adjoint() * y;
    CVector x = CVector::Zero(cols_);
    const int mrx = kernel_->sensor().receiver_count();
    for (int n = 0; n < cols_; ++n) {
      Complex acc{0.0, 0.0};
      for (int m = 0; m < mrx; ++m)
        for (int k = 0; k < fast_time_samples_; ++k)
          acc += std::conj(kernel_->entry(m, k, n)) * y[m * fast_time_samples_ + k];
      x[n] = acc;
    }
    return x;
  }

 private:
  static int resolve_samples(const EchoKernel& kernel) {
    const int k = kernel.waveform().fast_time_samples;
    return k > 0 ? k : kernel.derive_sample_count();
  }

  int rows_ = 0;
  int cols_ = 0;
  int fast_time_samples_ = 0;
  std::shared_ptr<CMatrix> matrix_;
  std::shared_ptr<EchoKernel> kernel_;
};

inline ForwardOperator build_operator(const SceneGrid& grid,
                                      const SensorArray& sensor,
                                      const Waveform& waveform,
                                      bool dense = true) {
  EchoKernel kernel(grid, sensor, waveform);
  return dense ? ForwardOperator::dense(kernel)
               : ForwardOperator::matrix_free(kernel);
}

/// Matched-filter image: |sum_q A_q^H y_q|, normalized to unit peak.
/// An all-zero result stays all-zero.
inline Eigen::VectorXd back_projection(
    const std::vector<ForwardOperator>& operators,
    const std::vector<CVector>& measurements) {
  if (operators.empty() || operators.size() != measurements.size())
    throw std::invalid_argument(
        "back_projection: need one measurement per operator");
  CVector acc = CVector::Zero(operators[0].cols());
  for (std::size_t q = 0; q < operators.size(); ++q) {
    if (operators[q].cols() != acc.size())
      throw std::invalid_argument(
          "back_projection: operators disagree on pixel count");
    acc += operators[q].apply_adjoint(measurements[q]);
  }
  Eigen::VectorXd img = acc.cwiseAbs();
  const double peak = img.maxCoeff();
  if (peak > 0.0) img /= peak;
  return img;
}

/// Binary operator dump: u64 q, K, M, N (little-endian) followed by the
/// dense matrix in row-major order as complex64 (float32 re, float32 im).
inline void dump_operator(const ForwardOperator& op, int sensor_id,
                          int receiver_count, const std::string& path) {
  const CMatrix& a = op.matrix();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("dump_operator: cannot open " + path);
  const std::uint64_t header[4] = {
      static_cast<std::uint64_t>(sensor_id),
      static_cast<std::uint64_t>(op.fast_time_samples()),
      static_cast<std::uint64_t>(receiver_count),
      static_cast<std::uint64_t>(op.cols())};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  std::vector<float> row(2 * static_cast<std::size_t>(a.cols()));
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      row[2 * c] = static_cast<float>(a(r, c).real());
      row[2 * c + 1] = static_cast<float>(a(r, c).imag());
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("dump_operator: write failed: " + path);
}

struct OperatorDump {
  std::uint64_t sensor_id = 0;
  std::uint64_t fast_time_samples = 0;
  std::uint64_t receiver_count = 0;
  std::uint64_t pixel_count = 0;
  Eigen::MatrixXcf matrix;
};

inline OperatorDump read_operator_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_operator_dump: cannot open " + path);
  OperatorDump d;
  std::uint64_t header[4];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) throw std::runtime_error("read_operator_dump: truncated header");
  d.sensor_id = header[0];
  d.fast_time_samples = header[1];
  d.receiver_count = header[2];
  d.pixel_count = header[3];
  const std::uint64_t rows = d.fast_time_samples * d.receiver_count;
  d.matrix.resize(static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(d.pixel_count));
  std::vector<float> row(2 * d.pixel_count);
  for (std::uint64_t r = 0; r < rows; ++r) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) throw std::runtime_error("read_operator_dump: truncated body");
    for (std::uint64_t c = 0; c < d.pixel_count; ++c)
      d.matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = {
          row[2 * c], row[2 * c + 1]};
  }
  return d;
}

}  // namespace radmm
