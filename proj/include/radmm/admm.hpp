#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "radmm/forward_model.hpp"
#include "radmm/solver_core.hpp"
#include "radmm/wire.hpp"

namespace radmm {

enum class Mode { kSadmm, kAsadmm };

inline const char* mode_name(Mode m) {
  return m == Mode::kSadmm ? "sadmm" : "asadmm";
}

struct Hyperparams {
  double mu = 3.0;
  double lambda = 20.0;
  double beta = 100.0;
  double eps_abs = 1e-4;
  double eps_rel = 1e-2;
  int screening_window = 5;     // iterations averaged by the screening rule
  double screening_tol = 1e-5;  // mean-change level below which a pixel freezes
  int max_iter = 1000;

  void validate() const {
    if (!(mu > 0.0)) throw std::invalid_argument("Hyperparams: mu must be > 0");
    if (!(lambda >= 0.0))
      throw std::invalid_argument("Hyperparams: lambda must be >= 0");
    if (!(beta > 0.0)) throw std::invalid_argument("Hyperparams: beta must be > 0");
    if (!(eps_abs > 0.0))
      throw std::invalid_argument("Hyperparams: eps_abs must be > 0");
    if (!(eps_rel > 0.0))
      throw std::invalid_argument("Hyperparams: eps_rel must be > 0");
    if (screening_window < 2)
      throw std::invalid_argument(
          "Hyperparams: screening_window needs at least one successive pair");
    if (!(screening_tol >= 0.0))
      throw std::invalid_argument("Hyperparams: screening_tol must be >= 0");
    if (max_iter < 1)
      throw std::invalid_argument("Hyperparams: max_iter must be >= 1");
  }
};

struct Problem {
  std::vector<ForwardOperator> operators;   // one per sensor
  std::vector<CVector> measurements;        // y_q, matching rows

  int sensor_count() const { return static_cast<int>(operators.size()); }
  int pixel_count() const {
    return operators.empty() ? 0 : operators.front().cols();
  }

  void validate() const {
    if (operators.empty())
      throw std::invalid_argument("Problem: needs at least one sensor");
    if (operators.size() != measurements.size())
      throw std::invalid_argument("Problem: one measurement per operator");
    for (std::size_t q = 0; q < operators.size(); ++q) {
      if (operators[q].cols() != operators.front().cols())
        throw std::invalid_argument("Problem: operators disagree on pixel count");
      if (measurements[q].size() != operators[q].rows())
        throw std::invalid_argument("Problem: measurement length mismatch");
    }
  }
};

/// Per-sensor solver state. Owns the active pixel set J_q, the full-length
/// image (frozen entries stay at their last value), the iterate history the
/// screening rule looks at, and the cached factorization for the current
/// active set. Both the single-process engine and the distributed sensor
/// node drive this class, so their arithmetic is the same code.
class SensorCore {
 public:
  void init(const ForwardOperator* op, const CVector* y,
            const Hyperparams* hyper) {
    op_ = op;
    y_ = y;
    hyper_ = hyper;
    if (!op_->is_dense())
      throw std::invalid_argument(
          "SensorCore: the solver needs a dense operator");
    n_ = op_->cols();
    active_.resize(n_);
    std::iota(active_.begin(), active_.end(), 0);
    x_full_ = CVector::Zero(n_);
    x_hat_ = CVector::Zero(n_);
    history_.clear();
    history_.push_back(x_full_);
    stalled_ = false;
    rebuild();
  }

  /// One Jacobi step on the active sub-image. gap_full = x_G - s and
  /// sigma_full only need to be correct at this sensor's active indices.
  void local_update(const CVector& gap_full, const CVector& sigma_full) {
    const double beta = hyper_->beta;
    const Eigen::Index nq = static_cast<Eigen::Index>(active_.size());
    CVector rhs(nq);
    for (Eigen::Index i = 0; i < nq; ++i) {
      const int j = active_[static_cast<std::size_t>(i)];
      rhs[i] = data_term_[i] + beta * gap_full[j] + beta * x_hat_[i] -
               sigma_full[j];
    }
    x_hat_ = cache_.solve(rhs);
    for (Eigen::Index i = 0; i < nq; ++i)
      x_full_[active_[static_cast<std::size_t>(i)]] = x_hat_[i];
    history_.push_back(x_full_);
    if (history_.size() > static_cast<std::size_t>(hyper_->screening_window) + 1)
      history_.pop_front();
  }

  /// Screening pass: drop active pixels whose mean absolute change over the
  /// last screening_window steps fell below screening_tol. The caller is
  /// responsible for the primal-residual trigger. Dropped pixels keep their
  /// last value; returns their indices (empty when nothing changed). If the
  /// rule would empty the active set entirely, nothing is dropped and the
  /// sensor is flagged stalled.
  std::vector<int> screen() {
    const std::size_t window =
        static_cast<std::size_t>(hyper_->screening_window);
    if (history_.size() < window + 1) return {};
    std::vector<int> keep, removed;
    keep.reserve(active_.size());
    for (int j : active_) {
      double zeta = 0.0;
      for (std::size_t h = history_.size() - window; h < history_.size(); ++h)
        zeta += std::abs(history_[h][j] - history_[h - 1][j]);
      zeta /= static_cast<double>(window);
      (zeta >= hyper_->screening_tol ? keep : removed).push_back(j);
    }
    if (removed.empty()) return {};
    if (keep.empty()) {
      stalled_ = true;
      return {};
    }
    active_ = std::move(keep);
    CVector gathered(static_cast<Eigen::Index>(active_.size()));
    for (std::size_t i = 0; i < active_.size(); ++i)
      gathered[static_cast<Eigen::Index>(i)] = x_full_[active_[i]];
    x_hat_ = std::move(gathered);
    rebuild();
    return removed;
  }

  const std::vector<int>& active_indices() const { return active_; }
  int active_count() const { return static_cast<int>(active_.size()); }
  const CVector& x_hat() const { return x_hat_; }
  const CVector& x_full() const { return x_full_; }
  bool stalled() const { return stalled_; }

 private:
  /// Recompute everything tied to the active set: the gathered columns
  /// A_hat = A(:, J), the factorization, and the data term with the frozen
  /// pixels' echo moved over to the measurement side.
  void rebuild() {
    const CMatrix& a = op_->matrix();
    const CMatrix a_hat = a(Eigen::all, active_);
    CVector frozen = x_full_;
    for (int j : active_) frozen[j] = Complex{0.0, 0.0};
    const CVector y_eff = *y_ - op_->apply(frozen);
    data_term_ = hyper_->mu * (a_hat.adjoint() * y_eff);
    cache_ = LocalSolveCache(a_hat, hyper_->mu, hyper_->beta);
  }

  const ForwardOperator* op_ = nullptr;
  const CVector* y_ = nullptr;
  const Hyperparams* hyper_ = nullptr;
  int n_ = 0;
  std::vector<int> active_;
  CVector x_full_;
  CVector x_hat_;
  CVector data_term_;
  LocalSolveCache cache_;
  std::deque<CVector> history_;
  bool stalled_ = false;
};

/// Aggregation-side state: per-sensor contribution mirrors, the aggregate s,
/// the thresholded consensus image x_G, and the dual. Shared verbatim by the
/// engine and the distributed fusion node.
class FusionCore {
 public:
  void init(int pixel_count, int sensor_count, const Hyperparams* hyper) {
    hyper_ = hyper;
    n_ = pixel_count;
    contrib_.assign(static_cast<std::size_t>(sensor_count),
                    CVector::Zero(n_));
    s_ = CVector::Zero(n_);
    x_g_ = CVector::Zero(n_);
    x_g_prev_ = CVector::Zero(n_);
    sigma_ = CVector::Zero(n_);
    sigma_pre_global_ = CVector::Zero(n_);
    gap_ = CVector::Zero(n_);
    iteration_ = 0;
    has_prev_ = false;
    pri_res_ = dual_res_ = eps_pri_ = eps_dual_ = 0.0;
    converged_ = trigger_ = false;
  }

  void set_contribution(int sensor_id, const std::vector<int>& indices,
                        const CVector& values) {
    if (sensor_id < 1 || sensor_id > static_cast<int>(contrib_.size()))
      throw std::invalid_argument("FusionCore: sensor id out of range");
    if (static_cast<Eigen::Index>(indices.size()) != values.size())
      throw std::invalid_argument("FusionCore: index/value count mismatch");
    CVector& mirror = contrib_[static_cast<std::size_t>(sensor_id - 1)];
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] < 0 || indices[i] >= n_)
        throw std::invalid_argument("FusionCore: pixel index out of range");
      mirror[indices[i]] = values[static_cast<Eigen::Index>(i)];
    }
  }

  /// Aggregate, threshold, update the dual, evaluate the stopping rule.
  /// The aggregate is the average of the per-sensor images; averaging is
  /// what makes the synchronous per-sensor minimizations an exact splitting
  /// of the joint step, so the overall scheme inherits plain two-block
  /// convergence. (With the raw sum the frozen-threshold regime has a
  /// growing mode and the iteration limit-cycles.)
  void round() {
    ++iteration_;
    s_.setZero();
    for (const CVector& c : contrib_) s_ += c;  // fixed sensor order
    s_ /= static_cast<double>(contrib_.size());
    x_g_prev_ = x_g_;
    sigma_pre_global_ = sigma_;
    x_g_ = soft_threshold(s_ + sigma_ / hyper_->beta, hyper_->lambda / hyper_->beta);
    const CVector eta_pri = s_ - x_g_;
    pri_res_ = eta_pri.norm();
    dual_res_ = hyper_->beta * (x_g_ - x_g_prev_).norm();
    sigma_ += hyper_->beta * eta_pri;
    const double root_n = std::sqrt(static_cast<double>(n_));
    eps_pri_ = root_n * hyper_->eps_abs +
               hyper_->eps_rel * std::max(s_.norm(), x_g_.norm());
    eps_dual_ = root_n * hyper_->eps_abs + hyper_->eps_rel * sigma_.norm();
    trigger_ = pri_res_ <= eps_pri_;
    // The very first iteration has no previous consensus image, so the dual
    // residual is not yet meaningful for termination.
    converged_ = has_prev_ && trigger_ && dual_res_ <= eps_dual_;
    has_prev_ = true;
    gap_ = x_g_ - s_;
  }

  int iteration() const { return iteration_; }
  const CVector& s() const { return s_; }
  const CVector& x_global() const { return x_g_; }
  const CVector& sigma() const { return sigma_; }
  const CVector& sigma_pre_global() const { return sigma_pre_global_; }
  const CVector& gap() const { return gap_; }
  double pri_res() const { return pri_res_; }
  double dual_res() const { return dual_res_; }
  double eps_pri() const { return eps_pri_; }
  double eps_dual() const { return eps_dual_; }
  bool converged() const { return converged_; }
  bool screening_trigger() const { return trigger_; }

 private:
  const Hyperparams* hyper_ = nullptr;
  int n_ = 0;
  std::vector<CVector> contrib_;
  CVector s_, x_g_, x_g_prev_, sigma_, sigma_pre_global_, gap_;
  int iteration_ = 0;
  bool has_prev_ = false;
  double pri_res_ = 0.0, dual_res_ = 0.0, eps_pri_ = 0.0, eps_dual_ = 0.0;
  bool converged_ = false, trigger_ = false;
};

struct IterationRecord {
  int iteration = 0;
  double pri_res = 0.0;
  double dual_res = 0.0;
  double eps_pri = 0.0;
  double eps_dual = 0.0;
  double active_fraction = 0.0;  // max over sensors of N_q / N
  double ms_elapsed = 0.0;       // cumulative wall time
  std::uint64_t bytes_sent = 0;  // sensor-to-fusion payload this round
  std::vector<int> active_sizes;
  std::vector<std::uint64_t> sensor_bytes;  // contribution payload per sensor
};

struct ConvergenceReport {
  std::vector<IterationRecord> iterations;
  std::uint64_t total_active_solves = 0;  // sum over rounds and sensors of N_q
  std::uint64_t total_bytes = 0;

  void write_csv(std::ostream& out) const {
    out << "iter,pri_res,dual_res,eps_pri,eps_dual,active_frac,ms_elapsed,"
           "bytes_sent\n";
    char line[256];
    for (const IterationRecord& r : iterations) {
      std::snprintf(line, sizeof(line),
                    "%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.3f,%llu\n",
                    r.iteration, r.pri_res, r.dual_res, r.eps_pri, r.eps_dual,
                    r.active_fraction, r.ms_elapsed,
                    static_cast<unsigned long long>(r.bytes_sent));
      out << line;
    }
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out)
      throw std::runtime_error("ConvergenceReport: cannot open " + path);
    write_csv(out);
  }
};

struct RunResult {
  Eigen::VectorXd image;     // magnitude of the final consensus image
  CVector x_global;
  CVector s;
  CVector sigma;             // dual after the final update
  CVector sigma_pre_global;  // dual the final thresholding actually used
  std::vector<CVector> sensor_images;  // full-length x_q
  bool converged = false;
  bool screening_stalled = false;
  int iterations = 0;
  ConvergenceReport report;
};

/// Snapshot handed to the per-iteration observer; references stay valid only
/// during the callback.
struct IterationView {
  int iteration;
  const CVector& x_global;
  const CVector& s;
  const CVector& sigma;
  const std::vector<SensorCore>& sensors;
  bool converged;
  bool screening_trigger;
};

using IterationObserver = std::function<void(const IterationView&)>;

/// Full solver run. Each iteration: screening staged from the previous
/// round (accelerated mode only), a synchronous Jacobi sweep of local
/// updates against the iteration-k aggregate, then the thresholded global
/// update, the dual step, and the stopping rule. disable_screening is a
/// diagnostic switch that runs the accelerated path with the trigger forced
/// off; it must then match the plain mode step for step.
inline RunResult run(const Problem& problem, const Hyperparams& hyper,
                     Mode mode, const IterationObserver& observer = {},
                     bool disable_screening = false) {
  problem.validate();
  hyper.validate();
  const int q_count = problem.sensor_count();
  const int n = problem.pixel_count();

  std::vector<SensorCore> sensors(static_cast<std::size_t>(q_count));
  for (int q = 0; q < q_count; ++q)
    sensors[static_cast<std::size_t>(q)].init(
        &problem.operators[static_cast<std::size_t>(q)],
        &problem.measurements[static_cast<std::size_t>(q)], &hyper);
  FusionCore fusion;
  fusion.init(n, q_count, &hyper);

  RunResult result;
  const auto t0 = std::chrono::steady_clock::now();
  bool staged_trigger = false;
  std::uint64_t staged_notice_bytes = 0;

  for (int k = 1; k <= hyper.max_iter; ++k) {
    std::uint64_t notice_bytes = 0;
    if (mode == Mode::kAsadmm && !disable_screening && staged_trigger) {
      for (SensorCore& sensor : sensors) {
        const std::vector<int> removed = sensor.screen();
        if (!removed.empty())
          notice_bytes += wire::notice_size(removed.size());
      }
    }
    staged_notice_bytes = notice_bytes;

    for (SensorCore& sensor : sensors)
      sensor.local_update(fusion.gap(), fusion.sigma());
    for (int q = 0; q < q_count; ++q) {
      const SensorCore& sensor = sensors[static_cast<std::size_t>(q)];
      fusion.set_contribution(q + 1, sensor.active_indices(), sensor.x_hat());
    }
    fusion.round();

    IterationRecord rec;
    rec.iteration = k;
    rec.pri_res = fusion.pri_res();
    rec.dual_res = fusion.dual_res();
    rec.eps_pri = fusion.eps_pri();
    rec.eps_dual = fusion.eps_dual();
    rec.bytes_sent = staged_notice_bytes;
    int max_active = 0;
    for (const SensorCore& sensor : sensors) {
      rec.active_sizes.push_back(sensor.active_count());
      rec.sensor_bytes.push_back(wire::contribution_size(
          static_cast<std::size_t>(sensor.active_count())));
      rec.bytes_sent += rec.sensor_bytes.back();
      max_active = std::max(max_active, sensor.active_count());
      result.report.total_active_solves +=
          static_cast<std::uint64_t>(sensor.active_count());
    }
    rec.active_fraction = static_cast<double>(max_active) / n;
    rec.ms_elapsed =
        std::chrono::duration<double, std::milli>(
            std::chrono::steady_clock::now() - t0)
            .count();
    result.report.total_bytes += rec.bytes_sent;
    result.report.iterations.push_back(std::move(rec));

    if (observer)
      observer(IterationView{k, fusion.x_global(), fusion.s(), fusion.sigma(),
                             sensors, fusion.converged(),
                             fusion.screening_trigger()});

    result.iterations = k;
    if (fusion.converged()) {
      result.converged = true;
      break;
    }
    staged_trigger = fusion.screening_trigger();
  }

  result.image = fusion.x_global().cwiseAbs();
  result.x_global = fusion.x_global();
  result.s = fusion.s();
  result.sigma = fusion.sigma();
  result.sigma_pre_global = fusion.sigma_pre_global();
  for (const SensorCore& sensor : sensors)
    result.sensor_images.push_back(sensor.x_full());
  for (const SensorCore& sensor : sensors)
    result.screening_stalled = result.screening_stalled || sensor.stalled();
  return result;
}

/// Data-fit plus l1 objective the solver minimizes, evaluated at explicit
/// per-sensor images. The l1 term acts on the summed image, which is what
/// the consensus variable represents up to the 1/Q averaging factor.
inline double objective_value(const Problem& problem,
                              const std::vector<CVector>& sensor_images,
                              double mu, double lambda) {
  if (sensor_images.size() != problem.operators.size())
    throw std::invalid_argument("objective_value: one image per sensor");
  double f = 0.0;
  CVector total = CVector::Zero(problem.pixel_count());
  for (std::size_t q = 0; q < sensor_images.size(); ++q) {
    f += 0.5 * mu *
         (problem.measurements[q] - problem.operators[q].apply(sensor_images[q]))
             .squaredNorm();
    total += sensor_images[q];
  }
  f += lambda * total.cwiseAbs().sum();
  return f;
}

/// Normalized error in dB against a reference image, after the estimate is
/// rescaled by the least-squares optimal factor. More negative is better.
inline double nmse_db(const Eigen::VectorXd& estimate,
                      const Eigen::VectorXd& truth) {
  const double den = truth.squaredNorm();
  if (den == 0.0)
    throw std::invalid_argument("nmse_db: reference image is all zero");
  const double e2 = estimate.squaredNorm();
  const double alpha = e2 > 0.0 ? estimate.dot(truth) / e2 : 0.0;
  return 10.0 * std::log10((alpha * estimate - truth).squaredNorm() / den);
}

inline double relative_l2_diff(const Eigen::VectorXd& a,
                               const Eigen::VectorXd& b) {
  const double denom = std::max(a.norm(), b.norm());
  return denom == 0.0 ? 0.0 : (a - b).norm() / denom;
}

}  // namespace radmm
