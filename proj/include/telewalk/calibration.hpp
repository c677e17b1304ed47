#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "telewalk/crowd.hpp"

namespace telewalk::calibration {

using crowd::GateChoiceParams;
using crowd::Scenario;
using crowd::TrialMetrics;

enum class Scheme { msa, smoothing };

struct SchemeSpec {
  Scheme kind = Scheme::smoothing;
  double weight = 0.5;  // W, smoothing only
};

/// One pass of the assignment loop.
struct IterationRecord {
  int iteration = 0;
  std::vector<double> anticipated;    // costs fed to the trial
  std::vector<double> measured;       // costs the trial produced
  std::vector<std::uint8_t> carried;  // gate unused: measured copied from anticipated
  std::vector<double> distribution;   // gate shares
  std::vector<double> updated;        // costs after the scheme update
  double gap = 0.0;                   // max |measured - anticipated|
};

struct CalibrationState {
  int iteration = 0;  // N, number of measurements absorbed
  std::vector<double> costs;
  SchemeSpec scheme;
  std::vector<IterationRecord> history;
  bool converged = false;
};

/// costs += (measured - costs) / (N + 1); N += 1.
CalibrationState msa_update(CalibrationState state, std::span<const double> measured);
/// costs = W measured + (1 - W) costs; N += 1.
CalibrationState smooth_update(CalibrationState state, std::span<const double> measured);
CalibrationState apply_update(CalibrationState state, std::span<const double> measured);

/// What a trial reports back to the loop.
struct TrialOutcome {
  std::vector<double> measured;
  std::vector<std::uint8_t> used;
  std::vector<double> distribution;
};

using TrialFunction = std::function<TrialOutcome(std::span<const double> anticipated)>;

struct CalibrateOptions {
  int max_iter = 50;
  double tol = 0.5;
};

/// Dynamic assignment loop. An initialization trial with zero anticipated
/// costs seeds the costs (N = 1); each iteration then runs a trial with the
/// current costs and applies the scheme. Converged when every gate's measured
/// cost is within `tol` of the anticipated cost it was produced from.
CalibrationState calibrate(const TrialFunction& trial, std::size_t gates, const SchemeSpec& scheme,
                           const CalibrateOptions& options = {});

TrialOutcome outcome_from(const TrialMetrics& metrics);

/// Crowd-driven loop: every trial uses `seed` (common random numbers), so the
/// measured-cost map is stationary. `last` receives the final trial.
CalibrationState calibrate(const Scenario& scenario, const GateChoiceParams& params,
                           const SchemeSpec& scheme, std::uint64_t seed,
                           const CalibrateOptions& options = {}, TrialMetrics* last = nullptr);

/// Analytic two-gate congestion map for convergence tests: gate shares are
/// softmax(-lambda * anticipated) and measured = free + beta * share.
struct SyntheticTwoGate {
  double free[2] = {10.0, 50.0};
  double beta = 40.0;
  double lambda = 0.05;

  std::vector<double> shares(std::span<const double> anticipated) const;
  TrialOutcome operator()(std::span<const double> anticipated) const;
};

// Comparison with observed participants ------------------------------------------

struct Participant {
  int gate = 0;  // gate id
  double completion_time = 0.0;
  double distance = 0.0;
};

struct ObservedData {
  std::vector<Participant> participants;

  /// Counts per gate index of `scenario`.
  std::vector<int> distribution(const Scenario& scenario) const;
};

struct DeviationReport {
  double tv_distance = 0.0;
  double time_mad = 0.0;      // s
  double distance_mad = 0.0;  // m
  int matched = 0;            // participants whose gate was also used in the trial
  std::vector<double> observed_share;
  std::vector<double> simulated_share;
};

double total_variation(std::span<const double> p, std::span<const double> q);

/// Throws InvalidInput for an empty observation set or unknown gate ids.
DeviationReport compare_user(const ObservedData& observed, const TrialMetrics& trial,
                             const Scenario& scenario);

struct GridPoint {
  GateChoiceParams params;
  DeviationReport report;
  int iterations = 0;
  bool converged = false;
  std::vector<IterationRecord> history;
};

struct FitResult {
  GateChoiceParams best;
  std::vector<GridPoint> grid;
};

std::vector<GateChoiceParams> default_grid();

/// Calibrates every grid point (in parallel) and picks the smallest TV
/// distance; ties go to smaller lambda, then smaller gamma.
FitResult fit_params(const Scenario& scenario, const ObservedData& observed,
                     std::span<const GateChoiceParams> grid, const SchemeSpec& scheme, std::uint64_t seed,
                     const CalibrateOptions& options = {});

/// All pedestrians of a trial as observed participants.
ObservedData observed_from_trial(const TrialMetrics& trial, const Scenario& scenario);

const char* scheme_name(Scheme s);

}  // namespace telewalk::calibration
