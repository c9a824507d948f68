#pragma once

// Shared value types, coordinate conventions and validation.
//
// Ego frame: x forward, y left, right-handed, origin at the ego position.
// Per-step sequences are ordered oldest-first; index L-1 is the current step.

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "metdrive/autodiff.hpp"

namespace metdrive {

using Vec2 = Eigen::Vector2d;
using ad::Mat;

/// A violated data invariant (bad sequence, mismatched lengths, ...).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An inconsistent or unsupported configuration value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File-system or format failure, with the offending path in the message.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

/// Past ego states forming the temporal-branch input.
///
/// `theta` is a heading angle in the frame chosen by the producer (samples use
/// the heading relative to the current pose); `delta` components are the unit
/// vector from the ego position toward the active target point.
struct EgoStateSequence {
  std::vector<double> theta;
  std::vector<double> steer;
  std::vector<double> throttle;
  std::vector<double> dx;
  std::vector<double> dy;
  std::vector<double> timestamps;

  std::size_t length() const { return theta.size(); }
  bool operator==(const EgoStateSequence&) const = default;
};

/// K future waypoints in the ego frame at the current time, meters.
struct Trajectory {
  std::vector<Vec2> points;

  std::size_t size() const { return points.size(); }
  bool operator==(const Trajectory&) const = default;
};

enum class FeatureRole { geometric, time_series, fused };

/// Dense (time x channel) feature tensor.
struct FeatureBlock {
  Mat data;
  FeatureRole role = FeatureRole::fused;

  ad::Index time() const { return data.rows(); }
  ad::Index channels() const { return data.cols(); }
};

struct RouteSpec {
  std::vector<Vec2> targets;
  std::vector<double> speed_limit;  // one per segment
  double total_length = 0.0;

  std::size_t segments() const { return targets.empty() ? 0 : targets.size() - 1; }
  bool operator==(const RouteSpec&) const = default;
};

/// Builds a route, computing the cached arc length. Throws ValidationError if the
/// polyline has fewer than two points, repeated consecutive points, or a
/// speed-limit count different from the segment count.
RouteSpec make_route(std::vector<Vec2> targets, std::vector<double> speed_limit);

/// Point on the polyline at arc length s (clamped to [0, total_length]).
struct RoutePoint {
  Vec2 position;
  double heading;
  std::size_t segment;
};
RoutePoint route_point_at(const RouteSpec& route, double s);

/// Closest point on the route, searched only within [s_min, s_max] of arc length.
struct RouteProjection {
  double s;
  double distance;
};
RouteProjection project_onto_route(const RouteSpec& route, const Vec2& p, double s_min,
                                   double s_max);

/// Monotone progress along a route: each update searches only a short window
/// around the previous projection, so self-approaching routes cannot jump ahead.
class RouteTracker {
 public:
  explicit RouteTracker(const RouteSpec& route, double back_window = 2.0,
                        double forward_window = 12.0)
      : route_(&route), back_(back_window), forward_(forward_window) {}

  /// Projects p and returns the projection; progress() is the running maximum of s.
  RouteProjection update(const Vec2& p);
  double progress() const { return progress_; }
  double last_s() const { return last_s_; }

 private:
  const RouteSpec* route_;
  double back_;
  double forward_;
  double last_s_ = 0.0;
  double progress_ = 0.0;
};

enum class InfractionType { collision, red_light, route_deviation };

std::string to_string(InfractionType type);
InfractionType infraction_from_string(const std::string& name);

struct Infraction {
  InfractionType type;
  std::string detail;
  bool operator==(const Infraction&) const = default;
};

struct StepRecord {
  double t = 0.0;
  Pose pose;
  double speed = 0.0;
  double steer = 0.0;
  double throttle = 0.0;
  double brake = 0.0;
  std::vector<Infraction> infractions;

  bool operator==(const StepRecord& o) const {
    return t == o.t && pose.x == o.pose.x && pose.y == o.pose.y && pose.theta == o.pose.theta &&
           speed == o.speed && steer == o.steer && throttle == o.throttle && brake == o.brake &&
           infractions == o.infractions;
  }
};

struct EpisodeLog {
  std::vector<StepRecord> steps;
  RouteSpec route;
  double completed_length = 0.0;
  bool completed = false;  // reached the route end
  bool diverged = false;   // aborted on a non-finite state

  bool operator==(const EpisodeLog&) const = default;
};

/// Rigid transform of world points into the frame of `pose`.
std::vector<Vec2> ego_frame_transform(std::span<const Vec2> world_points, const Pose& pose);
/// Inverse of ego_frame_transform.
std::vector<Vec2> world_frame_transform(std::span<const Vec2> ego_points, const Pose& pose);

/// Returns `seq` unchanged if every invariant holds; otherwise throws
/// ValidationError naming the field and index (e.g. "steer[3]").
const EgoStateSequence& validate_sequence(const EgoStateSequence& seq);

void validate_trajectory(const Trajectory& traj);
void validate_feature_block(const FeatureBlock& block);
void validate_episode_log(const EpisodeLog& log);

double wrap_angle(double a);

}  // namespace metdrive
