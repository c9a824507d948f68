#pragma once

// Planar driving world: kinematic bicycle vehicle, procedural routes with
// static obstacles and timed signals, a scripted expert, control smoothing and
// raster observations.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "metdrive/domain.hpp"
#include "metdrive/perception.hpp"

namespace metdrive::world {

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double v = 0.0;

  Pose pose() const { return {x, y, theta}; }
  bool operator==(const VehicleState&) const = default;
};

struct Obstacle {
  Vec2 center;
  double radius = 0.0;
  bool operator==(const Obstacle&) const = default;
};

enum class SignalPhase { green, yellow, red };

/// A stop line across the route at arc length `s`, cycling green -> yellow -> red.
struct Signal {
  double s = 0.0;
  Vec2 position;
  double heading = 0.0;  // route direction at the line
  double green = 6.0;    // seconds
  double yellow = 2.0;
  double red = 4.0;
  double offset = 0.0;   // seconds into the cycle at t = 0

  SignalPhase phase(double t) const;
  /// Seconds until the next red phase starts (0 while red).
  double until_red(double t) const;
  bool operator==(const Signal&) const = default;
};

/// A route together with its static obstacles and signals.
struct Scenario {
  RouteSpec route;
  std::vector<Obstacle> obstacles;
  std::vector<Signal> signals;
  int difficulty = 0;
  std::uint64_t seed = 0;
  bool operator==(const Scenario&) const = default;
};

struct WorldConfig {
  double wheelbase = 2.7;        // m
  double dt = 0.1;               // s
  double max_speed = 12.0;       // m/s
  double max_steer_angle = 0.5;  // rad
  double max_accel = 3.0;        // m/s^2 at full throttle
  double max_brake = 6.0;        // m/s^2 at full brake
  double vehicle_radius = 1.0;   // collision disc
  double deviation_threshold = 4.0;  // m from the route centreline
  double target_min_distance = 4.0;  // target point: first route vertex at least this far ahead

  // expert actuation noise
  double steer_noise = 0.06;
  double throttle_noise = 0.08;
  double spike_probability = 0.03;
  double spike_magnitude = 0.4;

  // rendering
  perception::PerceptionConfig raster;
  double bev_resolution = 2.0;   // m per cell
  double bev_behind = 8.0;       // m of window behind the ego
  double camera_fov = 1.6;       // rad
  double camera_range = 30.0;    // m
};

/// Kinematic bicycle update with explicit Euler integration.
VehicleState step(const VehicleState& s, double steer, double throttle, double brake,
                  const WorldConfig& cfg);

/// Maximum |turn angle| / adjacent segment length allowed at any route vertex, 1/m.
inline constexpr double kMaxRouteCurvature = 0.08;

/// Turn angle at each interior vertex divided by the shorter adjacent segment.
std::vector<double> vertex_curvatures(const RouteSpec& route);

RouteSpec generate_route(std::uint64_t seed, int difficulty);
Scenario generate_scenario(std::uint64_t seed, int difficulty, const WorldConfig& cfg);

/// First route vertex at least `min_distance` of arc length ahead of s, else the route end.
Vec2 target_point(const RouteSpec& route, double s, double min_distance);

/// Everything a driver may look at when choosing controls.
struct DriveContext {
  const Scenario& scenario;
  const WorldConfig& cfg;
  const std::vector<StepRecord>& history;  // completed steps, excluding the current state
  VehicleState state;
  double t;
  double progress;  // route arc length of the current projection
};

struct Controls {
  double steer = 0.0;
  double throttle = 0.0;
  double brake = 0.0;
};

using Driver = std::function<Controls(const DriveContext&)>;

/// Closed-loop rollout from the route start until the end, a route deviation,
/// a non-finite state or the timeout. Infractions detected on a transition are
/// attached to the record of the state it lands in.
EpisodeLog rollout(const Scenario& scenario, const Driver& driver, const WorldConfig& cfg);

/// Pure-pursuit steering with speed control toward `target_speed`.
Controls pure_pursuit(const DriveContext& ctx, double target_speed);

/// Speed the expert aims for: speed limits ahead and signals it can stop for.
double expert_target_speed(const DriveContext& ctx);

/// Scripted expert with seeded actuation noise (noise disabled if `noisy` is false).
Driver make_expert(std::uint64_t seed, bool noisy = true);
EpisodeLog expert_drive(const Scenario& scenario, const WorldConfig& cfg, std::uint64_t seed,
                        bool noisy = true);

/// Full throttle below the expert target speed, full brake above it.
Driver make_bang_bang();

/// Centred moving average of steer and throttle. First, a value more than 3
/// standard deviations from the mean of its window neighbours (the window
/// without the value itself) is replaced by that mean. Windows are truncated
/// at the log ends. Poses are untouched.
EpisodeLog smooth_controls(const EpisodeLog& log, int window);

perception::ObservationFrame render_observation(const VehicleState& s, const Scenario& world,
                                                double t, const WorldConfig& cfg);

/// BEV cell containing an ego-frame point, if it lies in the window.
std::optional<std::pair<int, int>> bev_cell(const Vec2& ego_point, const WorldConfig& cfg);

}  // namespace metdrive::world
