#pragma once

#include <string>

#include "telewalk/crowd.hpp"

namespace telewalk::io {

/// Top-down trajectory figure: scenario geometry, pedestrian tracks as thin
/// grey lines, the avatar (participant) track as a thick red line.
/// `trajectory_csv` is TrajectoryWriter output; empty input draws geometry only.
std::string render_svg(const crowd::Scenario& scenario, const std::string& trajectory_csv);

/// Renders a run or session log directory (config.json + trajectory.csv).
std::string render_log_svg(const std::string& log_dir);

}  // namespace telewalk::io
