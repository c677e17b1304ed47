#include "telewalk/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

namespace telewalk::calibration {

using geometry::InvalidInput;

namespace {

void check_measured(const CalibrationState& state, std::span<const double> measured) {
  if (measured.size() != state.costs.size()) throw InvalidInput("measured cost vector has the wrong size");
  for (double m : measured) {
    if (!std::isfinite(m)) throw InvalidInput("measured costs must be finite");
  }
}

}  // namespace

CalibrationState msa_update(CalibrationState state, std::span<const double> measured) {
  check_measured(state, measured);
  const double n = static_cast<double>(state.iteration);
  for (std::size_t g = 0; g < measured.size(); ++g) {
    state.costs[g] += (measured[g] - state.costs[g]) / (n + 1.0);
  }
  ++state.iteration;
  return state;
}

CalibrationState smooth_update(CalibrationState state, std::span<const double> measured) {
  check_measured(state, measured);
  const double w = state.scheme.weight;
  if (!(w > 0.0 && w <= 1.0)) throw InvalidInput("smoothing weight must lie in (0, 1]");
  for (std::size_t g = 0; g < measured.size(); ++g) {
    state.costs[g] = w * measured[g] + (1.0 - w) * state.costs[g];
  }
  ++state.iteration;
  return state;
}

CalibrationState apply_update(CalibrationState state, std::span<const double> measured) {
  return state.scheme.kind == Scheme::msa ? msa_update(std::move(state), measured)
                                          : smooth_update(std::move(state), measured);
}

CalibrationState calibrate(const TrialFunction& trial, std::size_t gates, const SchemeSpec& scheme,
                           const CalibrateOptions& options) {
  if (options.max_iter < 1) throw InvalidInput("max_iter must be at least 1");
  if (!(options.tol > 0.0)) throw InvalidInput("tol must be positive");
  if (gates == 0) throw InvalidInput("calibration needs at least one gate");
  if (scheme.kind == Scheme::smoothing && !(scheme.weight > 0.0 && scheme.weight <= 1.0)) {
    throw InvalidInput("smoothing weight must lie in (0, 1]");
  }

  CalibrationState state;
  state.scheme = scheme;
  state.costs.assign(gates, 0.0);

  auto run = [&](int iteration) {
    TrialOutcome out = trial(state.costs);
    if (out.measured.size() != gates) throw InvalidInput("trial returned the wrong number of gates");
    IterationRecord rec;
    rec.iteration = iteration;
    rec.anticipated = state.costs;
    rec.carried.assign(gates, 0);
    for (std::size_t g = 0; g < gates; ++g) {
      if (g < out.used.size() && out.used[g] == 0) {
        out.measured[g] = state.costs[g];
        rec.carried[g] = 1;
      }
      rec.gap = std::max(rec.gap, std::abs(out.measured[g] - state.costs[g]));
    }
    rec.measured = out.measured;
    rec.distribution = out.distribution;
    return rec;
  };

  // Initialization: the first measurement replaces the zero costs outright.
  IterationRecord init = run(0);
  state.costs = init.measured;
  state.iteration = 1;
  init.updated = state.costs;
  state.history.push_back(std::move(init));

  for (int it = 1; it <= options.max_iter; ++it) {
    IterationRecord rec = run(it);
    if (rec.gap < options.tol) {
      rec.updated = state.costs;
      state.history.push_back(std::move(rec));
      state.converged = true;
      break;
    }
    state = apply_update(std::move(state), rec.measured);
    rec.updated = state.costs;
    state.history.push_back(std::move(rec));
  }
  return state;
}

TrialOutcome outcome_from(const TrialMetrics& metrics) {
  TrialOutcome out;
  out.measured = metrics.gate_cost;
  out.used = metrics.gate_used;
  int total = 0;
  for (int c : metrics.gate_counts) total += c;
  for (int c : metrics.gate_counts) {
    out.distribution.push_back(total > 0 ? static_cast<double>(c) / total : 0.0);
  }
  return out;
}

CalibrationState calibrate(const Scenario& scenario, const GateChoiceParams& params,
                           const SchemeSpec& scheme, std::uint64_t seed, const CalibrateOptions& options,
                           TrialMetrics* last) {
  Scenario s = scenario;
  s.gate_choice = params;
  TrialMetrics final_trial;
  auto trial = [&](std::span<const double> anticipated) {
    final_trial = crowd::run_trial(s, anticipated, seed);
    return outcome_from(final_trial);
  };
  CalibrationState state = calibrate(trial, s.gates.size(), scheme, options);
  if (last != nullptr) *last = std::move(final_trial);
  return state;
}

std::vector<double> SyntheticTwoGate::shares(std::span<const double> anticipated) const {
  return crowd::gate_probabilities(anticipated, lambda);
}

TrialOutcome SyntheticTwoGate::operator()(std::span<const double> anticipated) const {
  TrialOutcome out;
  out.distribution = shares(anticipated);
  out.measured = {free[0] + beta * out.distribution[0], free[1] + beta * out.distribution[1]};
  out.used = {1, 1};
  return out;
}

// Comparison ----------------------------------------------------------------------

namespace {

int gate_index(const Scenario& scenario, int id) {
  for (std::size_t g = 0; g < scenario.gates.size(); ++g) {
    if (scenario.gates[g].id == id) return static_cast<int>(g);
  }
  throw InvalidInput("observed gate id " + std::to_string(id) + " is not in the scenario");
}

}  // namespace

std::vector<int> ObservedData::distribution(const Scenario& scenario) const {
  std::vector<int> counts(scenario.gates.size(), 0);
  for (const Participant& p : participants) ++counts[static_cast<std::size_t>(gate_index(scenario, p.gate))];
  return counts;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InvalidInput("distributions differ in length");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - q[i]);
  return 0.5 * sum;
}

DeviationReport compare_user(const ObservedData& observed, const TrialMetrics& trial,
                             const Scenario& scenario) {
  if (observed.participants.empty()) throw InvalidInput("observed data is empty");
  const std::size_t gates = scenario.gates.size();
  if (trial.gate_counts.size() != gates) throw InvalidInput("trial and scenario gate sets differ");

  DeviationReport r;
  const std::vector<int> counts = observed.distribution(scenario);
  const double n_obs = static_cast<double>(observed.participants.size());
  int n_sim = 0;
  for (int c : trial.gate_counts) n_sim += c;
  for (std::size_t g = 0; g < gates; ++g) {
    r.observed_share.push_back(counts[g] / n_obs);
    r.simulated_share.push_back(n_sim > 0 ? static_cast<double>(trial.gate_counts[g]) / n_sim : 0.0);
  }
  r.tv_distance = total_variation(r.observed_share, r.simulated_share);

  std::vector<double> time_sum(gates, 0.0);
  std::vector<double> dist_sum(gates, 0.0);
  std::vector<int> n(gates, 0);
  for (const crowd::PedestrianRecord& p : trial.pedestrians) {
    if (!p.exited || p.gate < 0) continue;
    const auto g = static_cast<std::size_t>(p.gate);
    time_sum[g] += p.completion_time;
    dist_sum[g] += p.distance;
    ++n[g];
  }
  for (const Participant& p : observed.participants) {
    const auto g = static_cast<std::size_t>(gate_index(scenario, p.gate));
    if (n[g] == 0) continue;
    r.time_mad += std::abs(p.completion_time - time_sum[g] / n[g]);
    r.distance_mad += std::abs(p.distance - dist_sum[g] / n[g]);
    ++r.matched;
  }
  if (r.matched > 0) {
    r.time_mad /= r.matched;
    r.distance_mad /= r.matched;
  }
  return r;
}

std::vector<GateChoiceParams> default_grid() {
  std::vector<GateChoiceParams> grid;
  for (double lambda : {0.1, 0.2, 0.5, 1.0, 2.0}) {
    for (double gamma : {0.0, 0.5, 1.0, 2.0}) grid.push_back({lambda, gamma});
  }
  return grid;
}

FitResult fit_params(const Scenario& scenario, const ObservedData& observed,
                     std::span<const GateChoiceParams> grid, const SchemeSpec& scheme, std::uint64_t seed,
                     const CalibrateOptions& options) {
  if (grid.empty()) throw InvalidInput("parameter grid is empty");
  if (observed.participants.empty()) throw InvalidInput("observed data is empty");
  observed.distribution(scenario);  // validates gate ids up front

  FitResult result;
  result.grid.resize(grid.size());
  const long count = static_cast<long>(grid.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < count; ++i) {
    try {
      const auto idx = static_cast<std::size_t>(i);
      TrialMetrics last;
      const CalibrationState state = calibrate(scenario, grid[idx], scheme, seed, options, &last);
      GridPoint& point = result.grid[idx];
      point.params = grid[idx];
      point.report = compare_user(observed, last, scenario);
      point.iterations = state.history.back().iteration;
      point.converged = state.converged;
      point.history = state.history;
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  const GridPoint* best = &result.grid.front();
  for (const GridPoint& p : result.grid) {
    const double a = p.report.tv_distance;
    const double b = best->report.tv_distance;
    const bool better =
        a < b - 1e-12 ||
        (std::abs(a - b) <= 1e-12 &&
         (p.params.lambda < best->params.lambda ||
          (p.params.lambda == best->params.lambda && p.params.gamma < best->params.gamma)));
    if (better) best = &p;
  }
  result.best = best->params;
  return result;
}

ObservedData observed_from_trial(const TrialMetrics& trial, const Scenario& scenario) {
  ObservedData data;
  for (const crowd::PedestrianRecord& p : trial.pedestrians) {
    if (p.gate < 0) continue;
    data.participants.push_back(
        {scenario.gates[static_cast<std::size_t>(p.gate)].id, p.completion_time, p.distance});
  }
  return data;
}

const char* scheme_name(Scheme s) { return s == Scheme::msa ? "msa" : "smooth"; }

}  // namespace telewalk::calibration
