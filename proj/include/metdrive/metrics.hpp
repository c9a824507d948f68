#pragma once

// Open-loop trajectory errors, leaderboard-style closed-loop scores and the
// speed-smoothness analysis.

#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metdrive/domain.hpp"
#include "metdrive/model.hpp"
#include "metdrive/synthworld.hpp"

namespace metdrive::metrics {

struct AdeFde {
  double ade = 0.0;
  double fde = 0.0;
};

/// Mean per-waypoint Euclidean distance and the distance at the last waypoint.
AdeFde ade_fde(const Trajectory& pred, const Trajectory& gt);

/// 100 * monotone projected progress / route length, or 100 for a log that
/// reached the route end. Throws ValidationError for a zero-length route.
double route_completion(const EpisodeLog& log);

struct PenaltyTable {
  std::map<InfractionType, double> penalty;
};

/// collision 0.60, red_light 0.70, route_deviation 0.75.
PenaltyTable default_penalties();
void validate_penalties(const PenaltyTable& t);

/// Product of the per-event penalties; 1 with no events. Throws ConfigError
/// for an infraction type missing from the table.
double infraction_score(const EpisodeLog& log, const PenaltyTable& table);

/// Mean over routes of RC_i * IS_i. Throws ValidationError for an empty list.
double driving_score(std::span<const std::pair<double, double>> per_route);

struct Smoothness {
  double speed_min_kmh = 0.0;
  double speed_max_kmh = 0.0;
  double jerk_rms = 0.0;        // m/s^3
  int oscillation_count = 0;    // sign changes of acceleration outside the dead-band
};

/// Speed-based smoothness of a log with uniform time steps. Throws
/// ValidationError for fewer than 3 steps.
Smoothness smoothness(const EpisodeLog& log, double dead_band = 0.5);
Smoothness smoothness(std::span<const double> speeds, double dt, double dead_band = 0.5);

struct TrackerConfig {
  double min_aim_distance = 3.0;   // m; aim at the first waypoint at least this far out
  double min_path_length = 1.5;    // m; below this the target point direction is used
  double speed_gain = 1.5;         // 1/s
};

/// Pure-pursuit tracking of predicted waypoints: steer toward the aim point,
/// regulate speed toward |wp[K-1] - wp[0]| / ((K - 1) dt).
world::Controls track_waypoints(const Trajectory& waypoints, const Vec2& target_point,
                                double speed, const world::WorldConfig& cfg,
                                const TrackerConfig& tracker = {});

/// Closed-loop agent: renders its own observations, builds the ego-state
/// history (repeating the first state before the episode start) and tracks
/// the model's waypoints.
world::Driver make_model_driver(const MetDriveModel& model, const TrackerConfig& tracker = {});

struct RouteResult {
  std::uint64_t seed = 0;
  int difficulty = 0;
  double rc = 0.0;
  double is = 1.0;
  Smoothness smooth;
  bool completed = false;
  bool diverged = false;
  std::size_t steps = 0;
  std::map<std::string, int> infractions;
};

struct ClosedLoopReport {
  std::vector<RouteResult> routes;
  double driving_score = 0.0;
  double mean_rc = 0.0;
  double mean_is = 0.0;
};

using DriverFactory = std::function<world::Driver(const world::Scenario&)>;

ClosedLoopReport evaluate_driver(const DriverFactory& factory,
                                 std::span<const world::Scenario> scenarios,
                                 const world::WorldConfig& cfg,
                                 const PenaltyTable& penalties = default_penalties());

ClosedLoopReport closed_loop_eval(const MetDriveModel& model,
                                  std::span<const world::Scenario> scenarios,
                                  const world::WorldConfig& cfg,
                                  const PenaltyTable& penalties = default_penalties());

/// Mean ADE/FDE of the model over samples.
AdeFde open_loop_eval(const MetDriveModel& model, std::span<const Sample> samples,
                      ad::Index batch_size = 64);

std::string closed_loop_record(const ClosedLoopReport& report, const std::string& label);
std::string open_loop_record(const AdeFde& errors, std::size_t samples, const std::string& label);

}  // namespace metdrive::metrics
