#include <chrono>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "radmm/io.hpp"
#include "radmm/runtime.hpp"
#include "radmm/scenario.hpp"

namespace fs = std::filesystem;
using namespace radmm;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitTransport = 3;

struct Options {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool out_given = false;
};

ScenarioConfig load(const Options& opt) {
  ScenarioConfig c = load_scenario(opt.config_path);
  if (opt.seed_given) c.seed = opt.seed;
  return c;
}

class Stopwatch {
 public:
  double ms() const {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_ =
      std::chrono::steady_clock::now();
};

void write_image_files(const fs::path& dir, const std::string& stem,
                       const Eigen::VectorXd& image, const SceneGrid& grid) {
  io::write_f64((dir / (stem + ".f64")).string(), image);
  io::write_pgm((dir / (stem + ".pgm")).string(), image, grid.nx, grid.ny);
}

int cmd_simulate(const Options& opt) {
  const ScenarioConfig c = load(opt);
  const Simulation sim = build_simulation(c);
  fs::create_directories(opt.out_dir);
  const fs::path dir(opt.out_dir);

  for (std::size_t i = 0; i < sim.measurements.entries.size(); ++i) {
    const Measurement& m = sim.measurements.entries[i];
    io::MeasurementFile f;
    f.sensor_id = static_cast<std::uint64_t>(m.sensor_id);
    f.receiver_count = c.sensors[i].rx_positions.size();
    f.samples_per_receiver =
        static_cast<std::uint64_t>(sim.problem.operators[i].rows()) /
        f.receiver_count;
    f.snr_db = m.snr_db;
    f.seed = m.seed;
    f.y = m.y;
    const std::string name = "sensor_" + std::to_string(m.sensor_id) + ".bin";
    io::write_measurement((dir / name).string(), f);
    std::printf("wrote %s (%lld samples, %llu receivers)\n",
                (dir / name).string().c_str(),
                static_cast<long long>(m.y.size()),
                static_cast<unsigned long long>(f.receiver_count));
  }
  io::write_f64((dir / "ground_truth.f64").string(), sim.truth.composite);
  for (std::size_t q = 0; q < sim.truth.per_sensor.size(); ++q) {
    const std::string name =
        "ground_truth_sensor_" + std::to_string(q + 1) + ".f64";
    io::write_f64((dir / name).string(), sim.truth.per_sensor[q]);
  }
  std::printf("wrote ground truth for %d sensors on a %dx%d grid\n",
              c.sensor_count(), c.grid.nx, c.grid.ny);
  return 0;
}

int report_solver_failure(const RunResult& r, const Hyperparams& hyper) {
  if (!r.converged) {
    std::fprintf(stderr,
                 "radmm: solver did not converge within %d iterations\n",
                 hyper.max_iter);
    return kExitNumerical;
  }
  if (!r.image.allFinite()) {
    std::fprintf(stderr, "radmm: reconstruction produced non-finite pixels\n");
    return kExitNumerical;
  }
  return 0;
}

int cmd_reconstruct(const Options& opt, const std::string& method) {
  const ScenarioConfig c = load(opt);
  const Simulation sim = build_simulation(c);
  fs::create_directories(opt.out_dir);
  const fs::path dir(opt.out_dir);

  if (method == "bp") {
    const Stopwatch watch;
    const Eigen::VectorXd image =
        back_projection(sim.problem.operators, sim.problem.measurements);
    const double ms = watch.ms();
    if (!image.allFinite()) {
      std::fprintf(stderr, "radmm: back projection produced non-finite pixels\n");
      return kExitNumerical;
    }
    write_image_files(dir, "bp", image, c.grid);
    std::printf("bp: %.1f ms, nmse %.2f dB, wrote %s/bp.{f64,pgm}\n", ms,
                nmse_db(image, sim.truth.composite), dir.string().c_str());
    return 0;
  }

  const Mode mode = mode_from_name(method);
  const Stopwatch watch;
  const RunResult r = run(sim.problem, c.hyper, mode);
  const double ms = watch.ms();
  if (const int code = report_solver_failure(r, c.hyper)) return code;

  write_image_files(dir, method, r.image, c.grid);
  r.report.write_csv((dir / (method + "_convergence.csv")).string());
  std::printf(
      "%s: %d iterations, %.1f ms, %llu active-pixel solves, %llu bytes, "
      "nmse %.2f dB\n",
      method.c_str(), r.iterations, ms,
      static_cast<unsigned long long>(r.report.total_active_solves),
      static_cast<unsigned long long>(r.report.total_bytes),
      nmse_db(r.image, sim.truth.composite));
  std::printf("wrote %s/%s.{f64,pgm} and %s_convergence.csv\n",
              dir.string().c_str(), method.c_str(), method.c_str());
  return 0;
}

int cmd_compare(const Options& opt) {
  const ScenarioConfig c = load(opt);
  const Simulation sim = build_simulation(c);

  const Stopwatch bp_watch;
  const Eigen::VectorXd bp =
      back_projection(sim.problem.operators, sim.problem.measurements);
  const double bp_ms = bp_watch.ms();

  const Stopwatch plain_watch;
  const RunResult plain = run(sim.problem, c.hyper, Mode::kSadmm);
  const double plain_ms = plain_watch.ms();
  if (const int code = report_solver_failure(plain, c.hyper)) return code;

  const Stopwatch accel_watch;
  const RunResult accel = run(sim.problem, c.hyper, Mode::kAsadmm);
  const double accel_ms = accel_watch.ms();
  if (const int code = report_solver_failure(accel, c.hyper)) return code;

  std::printf("%8s %10s %9s %10s %14s %12s %9s\n", "method", "iterations",
              "converged", "wall_ms", "active_solves", "bytes", "nmse_db");
  std::printf("%8s %10s %9s %10.1f %14s %12s %9.2f\n", "bp", "-", "-", bp_ms,
              "-", "-", nmse_db(bp, sim.truth.composite));
  const auto row = [&](const char* name, const RunResult& r, double ms) {
    std::printf("%8s %10d %9s %10.1f %14llu %12llu %9.2f\n", name,
                r.iterations, r.converged ? "yes" : "no", ms,
                static_cast<unsigned long long>(r.report.total_active_solves),
                static_cast<unsigned long long>(r.report.total_bytes),
                nmse_db(r.image, sim.truth.composite));
  };
  row("sadmm", plain, plain_ms);
  row("asadmm", accel, accel_ms);
  std::printf("relative l2 difference (sadmm vs asadmm): %.3e\n",
              relative_l2_diff(plain.image, accel.image));

  if (opt.out_given) {
    fs::create_directories(opt.out_dir);
    const fs::path dir(opt.out_dir);
    write_image_files(dir, "bp", bp, c.grid);
    write_image_files(dir, "sadmm", plain.image, c.grid);
    write_image_files(dir, "asadmm", accel.image, c.grid);
    plain.report.write_csv((dir / "sadmm_convergence.csv").string());
    accel.report.write_csv((dir / "asadmm_convergence.csv").string());
    io::write_f64((dir / "ground_truth.f64").string(), sim.truth.composite);
    std::printf("wrote images and convergence logs under %s\n",
                dir.string().c_str());
  }
  return 0;
}

int cmd_run_distributed(const Options& opt, const std::string& transport) {
  const ScenarioConfig c = load(opt);
  const Simulation sim = build_simulation(c);
  const Transport t = transport_from_name(transport);

  const Stopwatch watch;
  const DistributedRun d = run_distributed(sim.problem, c.hyper, c.mode, t);
  const double ms = watch.ms();
  if (const int code = report_solver_failure(d.result, c.hyper)) return code;

  std::printf(
      "%s over %s: %d rounds, %.1f ms, sensor->fusion %llu bytes, "
      "fusion->sensor %llu bytes\n",
      mode_name(c.mode), transport.c_str(), d.result.iterations, ms,
      static_cast<unsigned long long>(d.stats.sensor_to_fusion_bytes()),
      static_cast<unsigned long long>(d.stats.fusion_to_sensor_bytes()));
  std::printf("nmse vs composite ground truth: %.2f dB\n",
              nmse_db(d.result.image, sim.truth.composite));

  if (opt.out_given) {
    fs::create_directories(opt.out_dir);
    const fs::path dir(opt.out_dir);
    const std::string stem = std::string("distributed_") + mode_name(c.mode);
    write_image_files(dir, stem, d.result.image, c.grid);
    d.result.report.write_csv((dir / (stem + "_convergence.csv")).string());
    std::printf("wrote %s/%s.{f64,pgm} and %s_convergence.csv\n",
                dir.string().c_str(), stem.c_str(), stem.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distributed sparse radar imaging"};
  app.require_subcommand(1);

  Options opt;
  std::string method;
  std::string transport = "inproc";

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opt.config_path, "scenario config file (json)")
        ->required();
    cmd->add_option("--out", opt.out_dir, "output directory (default: out)");
    cmd->add_option("--seed", opt.seed, "override the config's base seed");
  };

  CLI::App* simulate =
      app.add_subcommand("simulate", "synthesize measurements and ground truth");
  add_common(simulate);

  CLI::App* reconstruct =
      app.add_subcommand("reconstruct", "image the scene with one method");
  add_common(reconstruct);
  reconstruct->add_option("--method", method, "bp, sadmm, or asadmm")
      ->required()
      ->check(CLI::IsMember({"bp", "sadmm", "asadmm"}));

  CLI::App* compare = app.add_subcommand(
      "compare", "run bp, sadmm, and asadmm on the same measurements");
  add_common(compare);

  CLI::App* distributed = app.add_subcommand(
      "run-distributed", "run the solver as message-passing nodes");
  add_common(distributed);
  distributed->add_option("--transport", transport, "inproc or tcp")
      ->check(CLI::IsMember({"inproc", "tcp"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  CLI::App* active = app.get_subcommands().front();
  opt.seed_given = active->count("--seed") > 0;
  opt.out_given = active->count("--out") > 0;

  try {
    if (active == simulate) return cmd_simulate(opt);
    if (active == reconstruct) return cmd_reconstruct(opt, method);
    if (active == compare) return cmd_compare(opt);
    return cmd_run_distributed(opt, transport);
  } catch (const TransportError& e) {
    std::fprintf(stderr, "radmm: transport failure: %s\n", e.what());
    return kExitTransport;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "radmm: %s\n", e.what());
    return kExitUsage;
  }
}
