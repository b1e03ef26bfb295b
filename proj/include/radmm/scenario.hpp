#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "radmm/admm.hpp"
#include "radmm/forward_model.hpp"
#include "radmm/geometry.hpp"
#include "radmm/runtime.hpp"
#include "radmm/scene.hpp"

// A scenario bundles everything a run needs: geometry, waveform, targets,
// noise level, seed, and solver settings. Configs are JSON with a versioned
// schema so files stay readable as the format evolves, and every numeric
// field round-trips bit-exactly.
namespace radmm {

constexpr int kScenarioSchemaVersion = 1;

inline Mode mode_from_name(const std::string& name) {
  if (name == "sadmm") return Mode::kSadmm;
  if (name == "asadmm") return Mode::kAsadmm;
  throw std::runtime_error("unknown mode '" + name +
                           "' (expected sadmm or asadmm)");
}

inline Transport transport_from_name(const std::string& name) {
  if (name == "inproc") return Transport::kInproc;
  if (name == "tcp") return Transport::kTcp;
  throw std::runtime_error("unknown transport '" + name +
                           "' (expected inproc or tcp)");
}

struct ScenarioConfig {
  std::string name = "scenario";
  SceneGrid grid;
  Waveform waveform;
  std::vector<SensorArray> sensors;
  std::vector<TargetSpec> targets;
  double snr_db = 3.0;
  std::uint64_t seed = 1;
  Hyperparams hyper;
  Mode mode = Mode::kAsadmm;            // default reconstruction method
  Transport transport = Transport::kInproc;

  int sensor_count() const { return static_cast<int>(sensors.size()); }

  void validate() const {
    grid.validate();
    waveform.validate();
    if (sensors.empty())
      throw std::invalid_argument("ScenarioConfig: needs at least one sensor");
    for (std::size_t i = 0; i < sensors.size(); ++i) {
      sensors[i].validate();
      if (sensors[i].id != static_cast<int>(i) + 1)
        throw std::invalid_argument(
            "ScenarioConfig: sensor ids must be 1..Q in order");
    }
    if (targets.empty())
      throw std::invalid_argument("ScenarioConfig: needs at least one target");
    for (const TargetSpec& t : targets) {
      t.validate(grid.pixel_count());
      for (const auto& [q, scale] : t.aspect_profile) {
        (void)scale;
        if (q > sensor_count())
          throw std::invalid_argument(
              "ScenarioConfig: aspect profile references sensor " +
              std::to_string(q) + " but only " +
              std::to_string(sensor_count()) + " sensors exist");
      }
    }
    if (std::isnan(snr_db) || (std::isinf(snr_db) && snr_db < 0.0))
      throw std::invalid_argument(
          "ScenarioConfig: snr_db must be finite or +inf");
    hyper.validate();
  }
};

namespace detail {

inline const nlohmann::json& field(const nlohmann::json& j,
                                   const std::string& key) {
  const auto it = j.find(key);
  if (it == j.end())
    throw std::runtime_error("config is missing required field '" + key + "'");
  return *it;
}

inline nlohmann::json vec3_to_json(const Vec3& v) {
  return nlohmann::json::array({v.x(), v.y(), v.z()});
}

inline Vec3 vec3_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3)
    throw std::runtime_error(what + " must be an [x, y, z] array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace detail

inline nlohmann::json to_json(const ScenarioConfig& c) {
  nlohmann::json j;
  j["schema_version"] = kScenarioSchemaVersion;
  j["name"] = c.name;
  j["grid"] = {{"nx", c.grid.nx},
               {"ny", c.grid.ny},
               {"cell_size", c.grid.cell_size},
               {"origin", {c.grid.origin.x(), c.grid.origin.y()}}};
  j["waveform"] = {{"fc", c.waveform.fc},
                   {"bw", c.waveform.bw},
                   {"pulse_duration", c.waveform.pulse_duration},
                   {"sample_rate", c.waveform.sample_rate},
                   {"fast_time_samples", c.waveform.fast_time_samples}};
  j["sensors"] = nlohmann::json::array();
  for (const SensorArray& s : c.sensors) {
    nlohmann::json rx = nlohmann::json::array();
    for (const Vec3& r : s.rx_positions) rx.push_back(detail::vec3_to_json(r));
    j["sensors"].push_back({{"id", s.id},
                            {"tx", detail::vec3_to_json(s.tx_position)},
                            {"rx", std::move(rx)}});
  }
  j["targets"] = nlohmann::json::array();
  for (const TargetSpec& t : c.targets) {
    nlohmann::json aspect = nlohmann::json::object();
    for (const auto& [q, scale] : t.aspect_profile)
      aspect[std::to_string(q)] = scale;
    j["targets"].push_back({{"shape", t.shape},
                            {"amplitude", t.base_amplitude},
                            {"aspect", std::move(aspect)}});
  }
  // JSON has no literal for infinity, so noiseless is spelled "inf".
  if (std::isinf(c.snr_db))
    j["snr_db"] = "inf";
  else
    j["snr_db"] = c.snr_db;
  j["seed"] = c.seed;
  j["solver"] = {{"mu", c.hyper.mu},
                 {"lambda", c.hyper.lambda},
                 {"beta", c.hyper.beta},
                 {"eps_abs", c.hyper.eps_abs},
                 {"eps_rel", c.hyper.eps_rel},
                 {"screening_window", c.hyper.screening_window},
                 {"screening_tol", c.hyper.screening_tol},
                 {"max_iter", c.hyper.max_iter}};
  j["mode"] = mode_name(c.mode);
  j["transport"] = transport_name(c.transport);
  return j;
}

inline ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  const int version = detail::field(j, "schema_version").get<int>();
  if (version != kScenarioSchemaVersion)
    throw std::runtime_error("unsupported schema_version " +
                             std::to_string(version) + " (this build reads " +
                             std::to_string(kScenarioSchemaVersion) + ")");
  ScenarioConfig c;
  c.name = detail::field(j, "name").get<std::string>();

  const nlohmann::json& grid = detail::field(j, "grid");
  c.grid.nx = detail::field(grid, "nx").get<int>();
  c.grid.ny = detail::field(grid, "ny").get<int>();
  c.grid.cell_size = detail::field(grid, "cell_size").get<double>();
  const nlohmann::json& origin = detail::field(grid, "origin");
  if (!origin.is_array() || origin.size() != 2)
    throw std::runtime_error("grid.origin must be an [x, y] array");
  c.grid.origin = Vec2(origin[0].get<double>(), origin[1].get<double>());

  const nlohmann::json& wf = detail::field(j, "waveform");
  c.waveform.fc = detail::field(wf, "fc").get<double>();
  c.waveform.bw = detail::field(wf, "bw").get<double>();
  c.waveform.pulse_duration = detail::field(wf, "pulse_duration").get<double>();
  c.waveform.sample_rate = detail::field(wf, "sample_rate").get<double>();
  c.waveform.fast_time_samples =
      detail::field(wf, "fast_time_samples").get<int>();

  for (const nlohmann::json& js : detail::field(j, "sensors")) {
    SensorArray s;
    s.id = detail::field(js, "id").get<int>();
    s.tx_position = detail::vec3_from_json(detail::field(js, "tx"), "sensor tx");
    for (const nlohmann::json& jr : detail::field(js, "rx"))
      s.rx_positions.push_back(detail::vec3_from_json(jr, "sensor rx entry"));
    c.sensors.push_back(std::move(s));
  }

  for (const nlohmann::json& jt : detail::field(j, "targets")) {
    TargetSpec t;
    t.shape = detail::field(jt, "shape").get<std::vector<int>>();
    t.base_amplitude = detail::field(jt, "amplitude").get<double>();
    for (const auto& [key, value] : detail::field(jt, "aspect").items())
      t.aspect_profile[std::stoi(key)] = value.get<double>();
    c.targets.push_back(std::move(t));
  }

  const nlohmann::json& snr = detail::field(j, "snr_db");
  if (snr.is_string()) {
    if (snr.get<std::string>() != "inf")
      throw std::runtime_error("snr_db must be a number or \"inf\"");
    c.snr_db = std::numeric_limits<double>::infinity();
  } else {
    c.snr_db = snr.get<double>();
  }
  c.seed = detail::field(j, "seed").get<std::uint64_t>();

  const nlohmann::json& solver = detail::field(j, "solver");
  c.hyper.mu = detail::field(solver, "mu").get<double>();
  c.hyper.lambda = detail::field(solver, "lambda").get<double>();
  c.hyper.beta = detail::field(solver, "beta").get<double>();
  c.hyper.eps_abs = detail::field(solver, "eps_abs").get<double>();
  c.hyper.eps_rel = detail::field(solver, "eps_rel").get<double>();
  c.hyper.screening_window =
      detail::field(solver, "screening_window").get<int>();
  c.hyper.screening_tol = detail::field(solver, "screening_tol").get<double>();
  c.hyper.max_iter = detail::field(solver, "max_iter").get<int>();

  c.mode = mode_from_name(detail::field(j, "mode").get<std::string>());
  c.transport =
      transport_from_name(detail::field(j, "transport").get<std::string>());
  return c;
}

inline void save_scenario(const std::string& path, const ScenarioConfig& c) {
  c.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << to_json(c).dump(2) << "\n";
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  ScenarioConfig c = scenario_from_json(j);
  c.validate();
  return c;
}

namespace detail {

/// Pixel indices of an axis-aligned rectangle, inclusive on both ends.
inline std::vector<int> rect(const SceneGrid& grid, int ix0, int ix1, int iy0,
                             int iy1) {
  std::vector<int> out;
  for (int iy = iy0; iy <= iy1; ++iy)
    for (int ix = ix0; ix <= ix1; ++ix) out.push_back(grid.index_of(ix, iy));
  return out;
}

inline SensorArray linear_array(int id, double tx_x, double half_span,
                                int receivers) {
  SensorArray s;
  s.id = id;
  s.tx_position = Vec3(tx_x, -0.05, 0.0);
  for (int m = 0; m < receivers; ++m) {
    const double frac =
        receivers == 1 ? 0.0
                       : 2.0 * m / static_cast<double>(receivers - 1) - 1.0;
    s.rx_positions.push_back(Vec3(tx_x + frac * half_span, 0.0, 0.0));
  }
  return s;
}

}  // namespace detail

/// Small default problem: 16x16 grid at 20 cm resolution, four sensors with
/// four receivers each, 3 GHz sweep. The sensor line sits wide of the scene
/// (+-4 m for a 3.2 m scene) and barely above its plane, which stretches the
/// echo delay spread enough that every per-sensor operator has full column
/// rank; with complex-valued unknowns anything less lets sub-images cancel
/// pairwise inside the shared sum and the reconstruction collapses. The
/// 2 us pulse integrates the 3 dB-SNR noise down so the fixed l1 weight
/// stays effective. Targets mix an extended block, a 5:1 weaker bar, a
/// two-cell pair below the matched-filter resolution limit, and a lone
/// point scatterer. A full comparison run finishes in a few seconds.
inline ScenarioConfig make_desk_scenario() {
  ScenarioConfig c;
  c.name = "desk";
  c.grid = {16, 16, 0.20, Vec2(-1.5, 1.0)};
  c.waveform = {10e9, 3e9, 2.0e-6, 3e9, 0};
  const double xs[4] = {-4.0, -1.5, 1.5, 4.0};
  for (int q = 0; q < 4; ++q)
    c.sensors.push_back(detail::linear_array(q + 1, xs[q], 0.6, 4));

  TargetSpec square;
  square.shape = detail::rect(c.grid, 3, 5, 10, 12);
  square.base_amplitude = 2.7;
  square.aspect_profile = {{1, 1.0}, {2, 0.7}, {3, 0.4}};

  TargetSpec bar;  // five cells, five times weaker than the square
  bar.shape = detail::rect(c.grid, 6, 10, 5, 5);
  bar.base_amplitude = 0.54;
  bar.aspect_profile = {{1, 0.6}, {2, 1.0}, {3, 0.5}, {4, 1.0}};

  TargetSpec pair;  // two cells apart: unresolved by back-projection
  pair.shape = {c.grid.index_of(12, 3), c.grid.index_of(14, 3)};
  pair.base_amplitude = 1.5;
  pair.aspect_profile = {{2, 0.8}, {4, 0.9}};

  TargetSpec point;
  point.shape = {c.grid.index_of(13, 13)};
  point.base_amplitude = 1.8;
  point.aspect_profile = {{1, 0.5}, {3, 1.0}, {4, 0.6}};

  c.targets = {square, bar, pair, point};
  c.snr_db = 3.0;
  c.seed = 1;
  c.hyper = Hyperparams{};
  return c;
}

/// Full-sized scene: 64x64 grid, four sensors with eight receivers each,
/// 4 GHz sweep. Per-sensor rows fall well short of the pixel count here, so
/// recovery leans on sparsity rather than operator rank — reconstruction
/// quality depends on stopping at the configured tolerances instead of
/// polishing to the degenerate optimum. Roughly two orders of magnitude
/// more work per iteration than the desk setup, so it is opt-in.
inline ScenarioConfig make_full_scenario() {
  ScenarioConfig c;
  c.name = "full";
  c.grid = {64, 64, 0.05, Vec2(-1.575, 1.0)};
  c.waveform = {10e9, 4e9, 40e-9, 4e9, 0};
  const double xs[4] = {-4.0, -1.5, 1.5, 4.0};
  for (int q = 0; q < 4; ++q)
    c.sensors.push_back(detail::linear_array(q + 1, xs[q], 1.05, 8));

  TargetSpec square;
  square.shape = detail::rect(c.grid, 12, 16, 40, 44);
  square.base_amplitude = 4.0;
  square.aspect_profile = {{1, 1.0}, {2, 0.7}, {3, 0.4}};

  TargetSpec ell;
  ell.shape = detail::rect(c.grid, 42, 43, 36, 43);
  for (int n : detail::rect(c.grid, 44, 49, 42, 43)) ell.shape.push_back(n);
  ell.base_amplitude = 3.5;
  ell.aspect_profile = {{2, 0.9}, {3, 1.0}};

  TargetSpec bar;
  bar.shape = detail::rect(c.grid, 24, 40, 20, 21);
  bar.base_amplitude = 3.0;
  bar.aspect_profile = {{1, 0.6}, {3, 0.5}, {4, 1.0}};

  TargetSpec cluster;
  cluster.shape = detail::rect(c.grid, 52, 53, 10, 11);
  cluster.base_amplitude = 4.5;
  cluster.aspect_profile = {{2, 0.8}, {4, 0.9}};

  c.targets = {square, ell, bar, cluster};
  c.snr_db = 3.0;
  c.seed = 1;
  c.hyper = Hyperparams{};
  return c;
}

/// Everything simulate produces: the measurement operators and vectors ready
/// for the solver, plus the ground truth they came from.
struct Simulation {
  Problem problem;
  GroundTruth truth;
  MeasurementSet measurements;
};

inline Simulation build_simulation(const ScenarioConfig& c, bool dense = true) {
  c.validate();
  Simulation sim;
  sim.truth = generate_scene(c.grid, c.targets, c.sensor_count());
  for (const SensorArray& s : c.sensors)
    sim.problem.operators.push_back(
        build_operator(c.grid, s, c.waveform, dense));
  sim.measurements = simulate_measurements(sim.problem.operators, sim.truth,
                                           c.snr_db, c.seed);
  for (const Measurement& m : sim.measurements.entries)
    sim.problem.measurements.push_back(m.y);
  return sim;
}

}  // namespace radmm
