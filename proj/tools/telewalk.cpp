// telewalk command line: serve, run, calibrate, replay, export-svg.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "telewalk/calibration.hpp"
#include "telewalk/net.hpp"
#include "telewalk/scenario_io.hpp"
#include "telewalk/service.hpp"
#include "telewalk/svg.hpp"

namespace {

using namespace telewalk;
using Json = nlohmann::json;

// Exit codes: 0 ok, 1 verification failed, 2 bad input, 3 runtime failure.
int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << Json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return code;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string part; std::getline(in, part, sep);) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

double parse_number(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used != s.size() || !std::isfinite(v)) throw geometry::InvalidInput("bad number '" + s + "' for " + what);
  return v;
}

// "goal=x,y speed=v [heading_noise_deg=d] [speed_noise=s] [seed=n]"
service::ScriptPolicy parse_script(const std::vector<std::string>& items, std::uint64_t seed) {
  service::ScriptPolicy p;
  p.seed = seed;
  bool have_goal = false;
  for (const std::string& joined : items) {
    for (const std::string& item : split(joined, ' ')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw geometry::InvalidInput("scripted option '" + item + "' is not key=value");
      const std::string key = item.substr(0, eq);
      const std::string value = item.substr(eq + 1);
      if (key == "goal") {
        const auto xy = split(value, ',');
        if (xy.size() != 2) throw geometry::InvalidInput("goal is written goal=x,y");
        p.goal = {parse_number(xy[0], "goal x"), parse_number(xy[1], "goal y")};
        have_goal = true;
      } else if (key == "speed") {
        p.speed = parse_number(value, key);
      } else if (key == "heading_noise_deg") {
        p.heading_noise = parse_number(value, key) * std::numbers::pi / 180.0;
      } else if (key == "speed_noise") {
        p.speed_noise = parse_number(value, key);
      } else if (key == "seed") {
        p.seed = static_cast<std::uint64_t>(parse_number(value, key));
      } else {
        throw geometry::InvalidInput("unknown scripted option '" + key + "'");
      }
    }
  }
  if (!have_goal) throw geometry::InvalidInput("scripted run needs goal=x,y");
  if (p.speed < 0.0 || p.heading_noise < 0.0 || p.speed_noise < 0.0) {
    throw geometry::InvalidInput("scripted speed and noise must be non-negative");
  }
  return p;
}

service::SessionConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  return service::session_config_from_json(io::read_json(path));
}

std::vector<crowd::GateChoiceParams> parse_grid(const std::string& spec) {
  if (spec == "default") return calibration::default_grid();
  std::vector<crowd::GateChoiceParams> grid;
  for (const std::string& item : split(spec, ',')) {
    const auto lg = split(item, ':');
    if (lg.size() != 2) throw geometry::InvalidInput("grid points are written lambda:gamma");
    grid.push_back({parse_number(lg[0], "lambda"), parse_number(lg[1], "gamma")});
  }
  if (grid.empty()) throw geometry::InvalidInput("grid is empty");
  return grid;
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + crowd::format_double(v[i]);
  return out;
}

Json history_json(const std::vector<calibration::IterationRecord>& history) {
  Json out = Json::array();
  for (const auto& r : history) {
    out.push_back({{"iteration", r.iteration},
                   {"anticipated", r.anticipated},
                   {"measured", r.measured},
                   {"carried", r.carried},
                   {"distribution", r.distribution},
                   {"updated", r.updated},
                   {"gap", r.gap}});
  }
  return out;
}

// Subcommands ------------------------------------------------------------------

struct RunArgs {
  std::string scenario, out, config;
  int peds = -1;
  std::uint64_t seed = 7;
  std::vector<std::string> scripted;
};

int cmd_run(const RunArgs& a) {
  crowd::Scenario scenario = io::load_scenario(a.scenario);
  if (a.peds >= 0) scenario.spawn_count = a.peds;
  scenario.validate();
  if (a.scripted.empty()) {
    const crowd::TrialMetrics m = service::run_trial_logged(scenario, a.seed, a.out);
    std::cout << Json{{"mode", "trial"},
                      {"complete", m.complete},
                      {"duration", m.duration},
                      {"gate_counts", m.gate_counts},
                      {"out", a.out}}
                     .dump()
              << std::endl;
    return 0;
  }
  service::SessionConfig config = load_config(a.config);
  config.script = parse_script(a.scripted, a.seed);
  service::use_straight_route(config, scenario, config.script->goal);
  const service::RunResult r = service::run_scripted(scenario, config, a.seed, a.out);
  Json summary = service::to_json(r.summary);
  summary["mode"] = "session";
  summary["rejected"] = r.rejected;
  summary["participant_failed"] = r.participant_failed;
  summary["out"] = a.out;
  std::cout << summary.dump() << std::endl;
  if (r.participant_failed) return fail("participant_failed", r.failure, 3);
  return 0;
}

struct CalibrateArgs {
  std::string scenario, observed, scheme = "smooth", grid = "default", out;
  double w = 0.5, tol = 0.5;
  int max_iter = 50, peds = -1;
  std::uint64_t seed = 7;
};

int cmd_calibrate(const CalibrateArgs& a) {
  crowd::Scenario scenario = io::load_scenario(a.scenario);
  if (a.peds >= 0) scenario.spawn_count = a.peds;
  scenario.validate();
  const calibration::ObservedData observed = io::load_observed(a.observed);
  calibration::SchemeSpec scheme;
  if (a.scheme == "msa") {
    scheme.kind = calibration::Scheme::msa;
  } else if (a.scheme == "smooth") {
    scheme.kind = calibration::Scheme::smoothing;
  } else {
    throw geometry::InvalidInput("scheme must be msa or smooth");
  }
  scheme.weight = a.w;
  const auto grid = parse_grid(a.grid);
  const calibration::CalibrateOptions options{a.max_iter, a.tol};
  const calibration::FitResult fit = calibration::fit_params(scenario, observed, grid, scheme, a.seed, options);

  const calibration::GridPoint* best = nullptr;
  for (const auto& p : fit.grid) {
    if (p.params.lambda == fit.best.lambda && p.params.gamma == fit.best.gamma) best = &p;
  }
  std::cout << "grid: lambda gamma tv time_mad distance_mad iterations converged\n";
  for (const auto& p : fit.grid) {
    std::printf("  %g %g %.4f %.3f %.3f %d %s\n", p.params.lambda, p.params.gamma, p.report.tv_distance,
                p.report.time_mad, p.report.distance_mad, p.iterations, p.converged ? "yes" : "no");
  }
  std::printf("best: lambda=%g gamma=%g tv=%.4f\n", fit.best.lambda, fit.best.gamma, best->report.tv_distance);
  std::cout << "convergence (best point): iteration gap | anticipated | measured | distribution\n";
  for (const auto& r : best->history) {
    std::printf("  %d %.4f | %s | %s | %s\n", r.iteration, r.gap, join(r.anticipated).c_str(),
                join(r.measured).c_str(), join(r.distribution).c_str());
  }

  if (!a.out.empty()) {
    std::filesystem::create_directories(a.out);
    Json table = Json::array();
    std::ofstream csv(a.out + "/grid.csv");
    csv << "lambda,gamma,tv_distance,time_mad,distance_mad,matched,iterations,converged\n";
    for (const auto& p : fit.grid) {
      table.push_back({{"lambda", p.params.lambda},
                       {"gamma", p.params.gamma},
                       {"tv_distance", p.report.tv_distance},
                       {"time_mad", p.report.time_mad},
                       {"distance_mad", p.report.distance_mad},
                       {"matched", p.report.matched},
                       {"observed_share", p.report.observed_share},
                       {"simulated_share", p.report.simulated_share},
                       {"iterations", p.iterations},
                       {"converged", p.converged},
                       {"history", history_json(p.history)}});
      csv << crowd::format_double(p.params.lambda) << ',' << crowd::format_double(p.params.gamma) << ','
          << crowd::format_double(p.report.tv_distance) << ',' << crowd::format_double(p.report.time_mad) << ','
          << crowd::format_double(p.report.distance_mad) << ',' << p.report.matched << ',' << p.iterations << ','
          << (p.converged ? 1 : 0) << '\n';
    }
    std::ofstream hist(a.out + "/history.csv");
    hist << "iteration,gate,anticipated,measured,carried,share,updated,gap\n";
    for (const auto& r : best->history) {
      for (std::size_t g = 0; g < r.measured.size(); ++g) {
        hist << r.iteration << ',' << scenario.gates[g].id << ',' << crowd::format_double(r.anticipated[g]) << ','
             << crowd::format_double(r.measured[g]) << ',' << int(r.carried[g]) << ','
             << crowd::format_double(r.distribution[g]) << ',' << crowd::format_double(r.updated[g]) << ','
             << crowd::format_double(r.gap) << '\n';
      }
    }
    io::write_json(a.out + "/fit.json", {{"scheme", calibration::scheme_name(scheme.kind)},
                                         {"w", scheme.weight},
                                         {"max_iter", a.max_iter},
                                         {"tol", a.tol},
                                         {"seed", a.seed},
                                         {"spawn_count", scenario.spawn_count},
                                         {"best", {{"lambda", fit.best.lambda}, {"gamma", fit.best.gamma}}},
                                         {"grid", table}});
  }
  return 0;
}

int cmd_replay(const std::string& log) {
  const service::ReplayReport r = service::replay(log);
  std::cout << Json{{"ok", r.ok}, {"compared", r.compared}, {"mismatches", r.mismatches},
                    {"first_mismatch", r.first_mismatch}}
                   .dump()
            << std::endl;
  return r.ok ? 0 : 1;
}

int cmd_export_svg(const std::string& log, const std::string& out) {
  const std::string svg = io::render_log_svg(log);
  std::ofstream f(out);
  if (!f) throw geometry::InvalidInput("cannot write " + out);
  f << svg;
  return 0;
}

struct ServeArgs {
  int port = 8765;
  std::string scenario, config, log_dir = "sessions";
  std::uint64_t seed = 7;
  bool once = false;
};

volatile std::sig_atomic_t g_stop = 0;

int cmd_serve(const ServeArgs& a) {
  const crowd::Scenario scenario = io::load_scenario(a.scenario);
  service::ServerOptions options;
  options.seed = a.seed;
  options.log_root = a.log_dir;
  options.stop_after_session = a.once;
  service::Server server(scenario, load_config(a.config), options);
  const int port = server.start(a.port);
  std::cout << Json{{"listening", port}, {"log_dir", a.log_dir}}.dump() << std::endl;
  std::signal(SIGINT, [](int) { g_stop = 1; });
  std::signal(SIGTERM, [](int) { g_stop = 1; });
  std::size_t reported = 0;
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    const auto sessions = server.sessions();
    for (; reported < sessions.size(); ++reported) {
      Json j = service::to_json(sessions[reported].summary);
      j["log_dir"] = sessions[reported].log_dir;
      j["rejected"] = sessions[reported].rejected;
      std::cout << j.dump() << std::endl;
    }
    if (a.once && !sessions.empty()) break;
  }
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"telewalk: telepresence walking simulator and calibration workbench"};
  app.require_subcommand(1);

  ServeArgs serve;
  auto* s = app.add_subcommand("serve", "Run interactive sessions over the NDJSON wire protocol");
  s->add_option("--port", serve.port, "TCP port (0 picks a free one)");
  s->add_option("--scenario", serve.scenario, "Scenario JSON")->required();
  s->add_option("--config", serve.config, "Session config JSON");
  s->add_option("--seed", serve.seed, "Crowd seed");
  s->add_option("--log-dir", serve.log_dir, "Directory for session logs");
  s->add_flag("--once", serve.once, "Exit after the first session");

  RunArgs run;
  auto* r = app.add_subcommand("run", "Headless crowd trial or scripted-participant session");
  r->add_option("--scenario", run.scenario, "Scenario JSON")->required();
  r->add_option("--peds", run.peds, "Number of pedestrians (default: scenario spawn_count)");
  r->add_option("--seed", run.seed, "Seed");
  r->add_option("--out", run.out, "Output log directory")->required();
  r->add_option("--scripted", run.scripted, "Scripted participant: goal=x,y speed=v")->expected(1, 8);
  r->add_option("--config", run.config, "Session config JSON (scripted runs)");

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "Fit gate-choice parameters to observed participants");
  c->add_option("--scenario", cal.scenario, "Scenario JSON")->required();
  c->add_option("--observed", cal.observed, "Observed participants JSON")->required();
  c->add_option("--scheme", cal.scheme, "msa or smooth");
  c->add_option("--w", cal.w, "Smoothing weight");
  c->add_option("--max-iter", cal.max_iter, "Iteration cap per grid point");
  c->add_option("--tol", cal.tol, "Convergence tolerance (s)");
  c->add_option("--grid", cal.grid, "default, or lambda:gamma,lambda:gamma,...");
  c->add_option("--peds", cal.peds, "Pedestrians per trial (default: scenario spawn_count)");
  c->add_option("--seed", cal.seed, "Seed shared by all trials");
  c->add_option("--out", cal.out, "Report directory");

  std::string replay_log;
  auto* rp = app.add_subcommand("replay", "Re-feed a log through the pipeline and verify the broadcasts");
  rp->add_option("--log", replay_log, "Log directory")->required();

  std::string svg_log, svg_out;
  auto* sv = app.add_subcommand("export-svg", "Render a log's trajectories to SVG");
  sv->add_option("--log", svg_log, "Log directory")->required();
  sv->add_option("--out", svg_out, "SVG file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*s) return cmd_serve(serve);
    if (*r) return cmd_run(run);
    if (*c) return cmd_calibrate(cal);
    if (*rp) return cmd_replay(replay_log);
    if (*sv) return cmd_export_svg(svg_log, svg_out);
  } catch (const geometry::InvalidInput& e) {
    return fail("invalid_input", e.what(), 2);
  } catch (const compression::InfeasiblePath& e) {
    return fail("infeasible_path", e.what(), 3);
  } catch (const crowd::SimulationError& e) {
    return fail("simulation_error", e.what(), 3);
  } catch (const std::exception& e) {
    return fail("error", e.what(), 3);
  }
  return 0;
}
