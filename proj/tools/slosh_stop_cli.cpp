// slosh-stop: command-line driver for the stop experiments.
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slosh_stop/experiments.hpp"

namespace fs = std::filesystem;
using namespace slosh_stop;

namespace {

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::string> mode;
  std::optional<bool> deterministic;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<double> rod_lengths_mm;
  std::vector<double> limits_deg;
  std::vector<double> errors;
  std::optional<double> rod_length_mm;
  std::optional<double> limit_deg;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.config, "scenario config file (JSON)");
  app->add_option("-o,--out", o.out, "output directory");
  app->add_option("--mode", o.mode, "task_space or joint_space");
  app->add_flag("--deterministic,!--threaded", o.deterministic,
                "single-threaded interleaving (default) or a separate planner thread");
  app->add_option("--seed", o.seed, "seed recorded with the outputs");
  app->add_option("--threads", o.threads, "sweep cells run in parallel");
}

ExperimentConfig resolve(Scenario scenario, const CommonOptions& o) {
  ExperimentConfig cfg;
  if (!o.config.empty()) cfg = load_experiment_config(o.config);
  cfg.scenario = scenario;
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.mode) cfg.mode = mode_from_string(*o.mode);
  if (o.deterministic) cfg.deterministic = *o.deterministic;
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (!o.rod_lengths_mm.empty()) {
    cfg.rod_lengths.clear();
    for (double mm : o.rod_lengths_mm) cfg.rod_lengths.push_back(mm * 1e-3);
  }
  if (!o.limits_deg.empty()) cfg.slosh_limits_deg = o.limits_deg;
  if (!o.errors.empty()) cfg.error_fractions = o.errors;
  if (o.rod_length_mm) {
    if (scenario == Scenario::kRobustness) {
      cfg.true_rod_length = *o.rod_length_mm * 1e-3;
    } else {
      cfg.rod_length = *o.rod_length_mm * 1e-3;
    }
  }
  if (o.limit_deg) {
    cfg.slosh_limit_deg = *o.limit_deg;
    cfg.robustness_limit_deg = *o.limit_deg;
  }
  cfg.validate();
  return cfg;
}

fs::path prepare_dir(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_traces(const fs::path& path, const RunMetrics& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_trace_csv(out, m.trace);
}

void print_run(const char* label, const RunMetrics& m) {
  std::cout << label << ": stop " << m.stopping_time << " s" << (m.stopped ? "" : " (not stopped)")
            << ", max tilt " << m.max_tilt_deg << " deg, max violation " << m.max_violation_deg
            << " deg, solver failures " << m.solver_failures << '\n';
}

int cmd_rod_length(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const double l = estimate_rod_length(cfg.container, cfg.gravity);
  const double us =
      std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "rod length " << l * 1e3 << " mm (" << us << " us)\n";
  const fs::path dir = prepare_dir(cfg);
  nlohmann::json j = config_json(cfg);
  j["rod_length_m"] = l;
  j["natural_frequency_hz"] = std::sqrt(cfg.gravity / l) / (2.0 * std::numbers::pi);
  write_json(dir / "metrics.json", j);
  return 0;
}

int cmd_stop(const ExperimentConfig& cfg) {
  const RunMetrics m = run_trigger_stop(cfg);
  print_run("proposed", m);
  const fs::path dir = prepare_dir(cfg);
  write_traces(dir / "traces.csv", m);
  nlohmann::json j = config_json(cfg);
  j["run"] = metrics_json(m);
  write_json(dir / "metrics.json", j);
  return 0;
}

int cmd_baseline(const ExperimentConfig& cfg) {
  const RunMetrics ours = run_trigger_stop(cfg, false);
  const RunMetrics base = run_trigger_stop(cfg, true);
  print_run("proposed", ours);
  print_run("baseline", base);
  const fs::path dir = prepare_dir(cfg);
  write_traces(dir / "traces.csv", base);
  write_traces(dir / "traces_proposed.csv", ours);
  nlohmann::json j = config_json(cfg);
  j["run"] = metrics_json(base);
  j["proposed"] = metrics_json(ours);
  write_json(dir / "metrics.json", j);
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg) {
  const SweepResult r = cfg.scenario == Scenario::kHeatmap ? run_heatmap_sweep(cfg)
                                                            : run_robustness_sweep(cfg);
  const fs::path dir = prepare_dir(cfg);
  {
    std::ofstream out(dir / "sweep.csv");
    if (!out) throw Error("cannot write sweep.csv");
    write_sweep_csv(out, r);
  }
  nlohmann::json j = config_json(cfg);
  j["sweep"] = sweep_json(r);
  write_json(dir / "metrics.json", j);
  const auto s = j["sweep"];
  std::cout << s["cells"] << " cells, " << s["failed_cells"] << " failed, mean max violation "
            << s["mean_max_violation_deg"] << " deg, peak " << s["peak_max_violation_deg"]
            << " deg\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emergency stop with slosh constraints"};
  app.require_subcommand(1);

  CommonOptions rod_o, stop_o, base_o, heat_o, rob_o;
  auto* rod = app.add_subcommand("rod-length", "pendulum rod length of a filled cylinder");
  add_common(rod, rod_o);
  auto* stop = app.add_subcommand("stop", "single stop from the trigger velocity");
  add_common(stop, stop_o);
  auto* base = app.add_subcommand("baseline", "stop with and without slosh constraints");
  add_common(base, base_o);
  auto* heat = app.add_subcommand("heatmap", "rod length x slosh limit sweep");
  add_common(heat, heat_o);
  auto* rob = app.add_subcommand("robustness", "rod length error sweep");
  add_common(rob, rob_o);

  for (auto [cmd, o] : {std::pair{stop, &stop_o}, std::pair{base, &base_o}}) {
    cmd->add_option("--rod-length-mm", o->rod_length_mm, "rod length (default: estimated)");
    cmd->add_option("--limit-deg", o->limit_deg, "slosh limit");
  }
  heat->add_option("--rod-lengths-mm", heat_o.rod_lengths_mm, "rod length grid")->delimiter(',');
  heat->add_option("--limits-deg", heat_o.limits_deg, "slosh limit grid")->delimiter(',');
  rob->add_option("--errors", rob_o.errors, "rod length error fractions")->delimiter(',');
  rob->add_option("--rod-length-mm", rob_o.rod_length_mm, "true rod length");
  rob->add_option("--limit-deg", rob_o.limit_deg, "slosh limit");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*rod) return cmd_rod_length(resolve(Scenario::kRodLength, rod_o));
    if (*stop) return cmd_stop(resolve(Scenario::kTriggerStop, stop_o));
    if (*base) return cmd_baseline(resolve(Scenario::kBaseline, base_o));
    if (*heat) return cmd_sweep(resolve(Scenario::kHeatmap, heat_o));
    if (*rob) return cmd_sweep(resolve(Scenario::kRobustness, rob_o));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
