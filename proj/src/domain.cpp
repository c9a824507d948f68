#include "metdrive/domain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace metdrive {

namespace {

std::string indexed(const char* field, std::size_t i) {
  return std::string(field) + "[" + std::to_string(i) + "]";
}

bool finite(const Vec2& p) { return std::isfinite(p.x()) && std::isfinite(p.y()); }

}  // namespace

double wrap_angle(double a) {
  a = std::fmod(a + std::numbers::pi, 2.0 * std::numbers::pi);
  if (a < 0.0) a += 2.0 * std::numbers::pi;
  return a - std::numbers::pi;
}

RouteSpec make_route(std::vector<Vec2> targets, std::vector<double> speed_limit) {
  if (targets.size() < 2) throw ValidationError("route: fewer than 2 targets");
  if (speed_limit.size() != targets.size() - 1) {
    throw ValidationError("route: speed_limit count must equal segment count");
  }
  RouteSpec route;
  double length = 0.0;
  for (std::size_t i = 0; i + 1 < targets.size(); ++i) {
    if (!finite(targets[i]) || !finite(targets[i + 1])) {
      throw ValidationError(indexed("targets", i) + " not finite");
    }
    const double seg = (targets[i + 1] - targets[i]).norm();
    if (seg <= 0.0) throw ValidationError(indexed("targets", i + 1) + " repeats previous target");
    if (!(speed_limit[i] > 0.0)) throw ValidationError(indexed("speed_limit", i) + " not positive");
    length += seg;
  }
  route.targets = std::move(targets);
  route.speed_limit = std::move(speed_limit);
  route.total_length = length;
  return route;
}

RoutePoint route_point_at(const RouteSpec& route, double s) {
  s = std::clamp(s, 0.0, route.total_length);
  double acc = 0.0;
  const std::size_t n = route.segments();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 d = route.targets[i + 1] - route.targets[i];
    const double len = d.norm();
    if (s <= acc + len || i + 1 == n) {
      const double u = std::clamp((s - acc) / len, 0.0, 1.0);
      return {route.targets[i] + u * d, std::atan2(d.y(), d.x()), i};
    }
    acc += len;
  }
  return {route.targets.back(), 0.0, n - 1};
}

RouteProjection project_onto_route(const RouteSpec& route, const Vec2& p, double s_min,
                                   double s_max) {
  s_min = std::max(0.0, s_min);
  s_max = std::min(route.total_length, s_max);
  RouteProjection best{s_min, std::numeric_limits<double>::infinity()};
  double acc = 0.0;
  for (std::size_t i = 0; i < route.segments(); ++i) {
    const Vec2 a = route.targets[i];
    const Vec2 d = route.targets[i + 1] - a;
    const double len = d.norm();
    const double lo = std::max(0.0, s_min - acc);
    const double hi = std::min(len, s_max - acc);
    if (lo <= hi) {
      const double u = std::clamp((p - a).dot(d) / len, lo, hi);
      const double dist = (a + d * (u / len) - p).norm();
      if (dist < best.distance) best = {acc + u, dist};
    }
    acc += len;
  }
  return best;
}

RouteProjection RouteTracker::update(const Vec2& p) {
  const RouteProjection proj = project_onto_route(*route_, p, last_s_ - back_, last_s_ + forward_);
  last_s_ = proj.s;
  progress_ = std::max(progress_, proj.s);
  return proj;
}

std::string to_string(InfractionType type) {
  switch (type) {
    case InfractionType::collision:
      return "collision";
    case InfractionType::red_light:
      return "red_light";
    case InfractionType::route_deviation:
      return "route_deviation";
  }
  return "unknown";
}

InfractionType infraction_from_string(const std::string& name) {
  if (name == "collision") return InfractionType::collision;
  if (name == "red_light") return InfractionType::red_light;
  if (name == "route_deviation") return InfractionType::route_deviation;
  throw ConfigError("unknown infraction type: " + name);
}

std::vector<Vec2> ego_frame_transform(std::span<const Vec2> world_points, const Pose& pose) {
  if (!std::isfinite(pose.x) || !std::isfinite(pose.y) || !std::isfinite(pose.theta)) {
    throw ValidationError("ego_frame_transform: pose not finite");
  }
  const double c = std::cos(pose.theta);
  const double s = std::sin(pose.theta);
  std::vector<Vec2> out;
  out.reserve(world_points.size());
  for (std::size_t i = 0; i < world_points.size(); ++i) {
    const Vec2& w = world_points[i];
    if (!finite(w)) throw ValidationError(indexed("world_points", i) + " not finite");
    const double tx = w.x() - pose.x;
    const double ty = w.y() - pose.y;
    out.emplace_back(c * tx + s * ty, -s * tx + c * ty);
  }
  return out;
}

std::vector<Vec2> world_frame_transform(std::span<const Vec2> ego_points, const Pose& pose) {
  if (!std::isfinite(pose.x) || !std::isfinite(pose.y) || !std::isfinite(pose.theta)) {
    throw ValidationError("world_frame_transform: pose not finite");
  }
  const double c = std::cos(pose.theta);
  const double s = std::sin(pose.theta);
  std::vector<Vec2> out;
  out.reserve(ego_points.size());
  for (std::size_t i = 0; i < ego_points.size(); ++i) {
    const Vec2& e = ego_points[i];
    if (!finite(e)) throw ValidationError(indexed("ego_points", i) + " not finite");
    out.emplace_back(pose.x + c * e.x() - s * e.y(), pose.y + s * e.x() + c * e.y());
  }
  return out;
}

const EgoStateSequence& validate_sequence(const EgoStateSequence& seq) {
  const std::size_t n = seq.theta.size();
  const auto check_len = [n](const std::vector<double>& v, const char* name) {
    if (v.size() != n) {
      throw ValidationError(std::string("length mismatch: ") + name + " has " +
                            std::to_string(v.size()) + " steps, theta has " + std::to_string(n));
    }
  };
  check_len(seq.steer, "steer");
  check_len(seq.throttle, "throttle");
  check_len(seq.dx, "dx");
  check_len(seq.dy, "dy");
  check_len(seq.timestamps, "timestamps");
  if (n < 2) throw ValidationError("length: sequence needs at least 2 steps");
  if (n % 2 != 0) throw ValidationError("length parity: L=" + std::to_string(n) + " is odd");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(seq.theta[i])) throw ValidationError(indexed("theta", i) + " not finite");
    if (!(seq.steer[i] >= -1.0 && seq.steer[i] <= 1.0)) {
      throw ValidationError(indexed("steer", i) + " outside [-1, 1]");
    }
    if (!(seq.throttle[i] >= 0.0 && seq.throttle[i] <= 1.0)) {
      throw ValidationError(indexed("throttle", i) + " outside [0, 1]");
    }
    const double norm = std::hypot(seq.dx[i], seq.dy[i]);
    if (!(std::abs(norm - 1.0) <= 1e-6 || norm <= 1e-6)) {
      throw ValidationError(indexed("delta", i) + " is neither unit nor zero");
    }
    if (!std::isfinite(seq.timestamps[i])) {
      throw ValidationError(indexed("timestamps", i) + " not finite");
    }
    if (i > 0 && !(seq.timestamps[i] > seq.timestamps[i - 1])) {
      throw ValidationError(indexed("timestamps", i) + " not strictly increasing");
    }
  }
  return seq;
}

void validate_trajectory(const Trajectory& traj) {
  const std::size_t k = traj.size();
  if (k < 2) throw ValidationError("trajectory: fewer than 2 waypoints");
  if (k % 2 != 0) throw ValidationError("trajectory length parity: K=" + std::to_string(k) + " is odd");
  for (std::size_t i = 0; i < k; ++i) {
    if (!finite(traj.points[i])) throw ValidationError(indexed("points", i) + " not finite");
  }
}

void validate_feature_block(const FeatureBlock& block) {
  if (block.time() <= 0 || block.channels() <= 0) {
    throw ValidationError("feature block: empty axis");
  }
  if (!block.data.allFinite()) throw ValidationError("feature block: non-finite data");
}

void validate_episode_log(const EpisodeLog& log) {
  for (std::size_t i = 0; i < log.steps.size(); ++i) {
    if (i > 0 && !(log.steps[i].t > log.steps[i - 1].t)) {
      throw ValidationError(indexed("steps", i) + ".t not strictly increasing");
    }
    if (!(log.steps[i].speed >= 0.0)) throw ValidationError(indexed("steps", i) + ".speed negative");
  }
  if (log.completed_length > log.route.total_length + 1e-9) {
    throw ValidationError("completed_length exceeds route length");
  }
}

}  // namespace metdrive
