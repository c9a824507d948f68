#include "metdrive/synthworld.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <string>

namespace metdrive::world {

using ad::Index;

namespace {

std::seed_seq make_seed(std::uint64_t seed, int a, int b = 0) {
  return std::seed_seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                       static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(a),
                       static_cast<std::uint32_t>(b)};
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec2 rotate_into(const Vec2& v, double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return {c * v.x() + s * v.y(), -s * v.x() + c * v.y()};
}

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  const double len2 = d.squaredNorm();
  const double u = len2 > 0.0 ? std::clamp((p - a).dot(d) / len2, 0.0, 1.0) : 0.0;
  return (a + u * d - p).norm();
}

double distance_to_route(const RouteSpec& route, const Vec2& p) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < route.segments(); ++i) {
    best = std::min(best, point_segment_distance(p, route.targets[i], route.targets[i + 1]));
  }
  return best;
}

Controls clamp_controls(Controls c) {
  const auto fix = [](double v, double lo, double hi) {
    return std::isfinite(v) ? std::clamp(v, lo, hi) : 0.0;
  };
  return {fix(c.steer, -1.0, 1.0), fix(c.throttle, 0.0, 1.0), fix(c.brake, 0.0, 1.0)};
}

constexpr double kComfortDecel = 3.0;  // m/s^2, expert planning deceleration
constexpr double kStopDecel = 2.0;     // m/s^2, profile used to approach a stop line
constexpr double kFirmDecel = 4.5;     // m/s^2, still acceptable when deciding to stop on yellow
constexpr double kStopMargin = 2.0;    // m before a stop line
constexpr double kSpeedGain = 1.5;     // 1/s, proportional speed control

}  // namespace

SignalPhase Signal::phase(double t) const {
  const double period = green + yellow + red;
  double u = std::fmod(t + offset, period);
  if (u < 0.0) u += period;
  if (u < green) return SignalPhase::green;
  if (u < green + yellow) return SignalPhase::yellow;
  return SignalPhase::red;
}

double Signal::until_red(double t) const {
  const double period = green + yellow + red;
  double u = std::fmod(t + offset, period);
  if (u < 0.0) u += period;
  return std::max(0.0, green + yellow - u);
}

VehicleState step(const VehicleState& s, double steer, double throttle, double brake,
                  const WorldConfig& cfg) {
  const double a = cfg.max_accel * throttle - cfg.max_brake * brake;
  const double delta = steer * cfg.max_steer_angle;
  VehicleState n;
  n.v = std::clamp(s.v + a * cfg.dt, 0.0, cfg.max_speed);
  n.theta = s.theta + (s.v / cfg.wheelbase) * std::tan(delta) * cfg.dt;
  n.x = s.x + s.v * std::cos(s.theta) * cfg.dt;
  n.y = s.y + s.v * std::sin(s.theta) * cfg.dt;
  return n;
}

std::vector<double> vertex_curvatures(const RouteSpec& route) {
  std::vector<double> out;
  for (std::size_t i = 1; i + 1 < route.targets.size(); ++i) {
    const Vec2 a = route.targets[i] - route.targets[i - 1];
    const Vec2 b = route.targets[i + 1] - route.targets[i];
    const double turn = std::abs(wrap_angle(std::atan2(b.y(), b.x()) - std::atan2(a.y(), a.x())));
    out.push_back(turn / std::min(a.norm(), b.norm()));
  }
  return out;
}

RouteSpec generate_route(std::uint64_t seed, int difficulty) {
  if (difficulty < 0 || difficulty > 3) {
    throw ConfigError("difficulty must be in [0, 3], got " + std::to_string(difficulty));
  }
  auto sseq = make_seed(seed, difficulty, 1);
  std::mt19937_64 rng(sseq);
  constexpr std::array<double, 4> kMaxTurnDeg{0.0, 15.0, 30.0, 45.0};
  constexpr int kSegments = 8;
  const double max_turn = kMaxTurnDeg[static_cast<std::size_t>(difficulty)] * std::numbers::pi / 180.0;

  std::vector<double> lengths(kSegments);
  for (auto& l : lengths) l = uniform(rng, 12.0, 20.0);
  std::vector<double> turns(kSegments + 1, 0.0);  // turn at vertex i (interior only)
  double heading = uniform(rng, -std::numbers::pi, std::numbers::pi);
  std::vector<Vec2> pts{Vec2::Zero()};
  for (int i = 0; i < kSegments; ++i) {
    if (i > 0 && max_turn > 0.0) {
      const double bound = kMaxRouteCurvature * std::min(lengths[i - 1], lengths[i]);
      const double turn = std::clamp(uniform(rng, -max_turn, max_turn), -bound, bound);
      turns[static_cast<std::size_t>(i)] = turn;
      heading += turn;
    }
    pts.push_back(pts.back() + lengths[static_cast<std::size_t>(i)] *
                                   Vec2(std::cos(heading), std::sin(heading)));
  }
  std::vector<double> limits(kSegments);
  for (int i = 0; i < kSegments; ++i) {
    const double sharp = std::max(std::abs(turns[static_cast<std::size_t>(i)]),
                                  std::abs(turns[static_cast<std::size_t>(i + 1)]));
    limits[static_cast<std::size_t>(i)] = sharp > 0.44 ? 6.0 : 8.0;
  }
  return make_route(std::move(pts), std::move(limits));
}

Scenario generate_scenario(std::uint64_t seed, int difficulty, const WorldConfig& cfg) {
  Scenario sc;
  sc.route = generate_route(seed, difficulty);
  sc.difficulty = difficulty;
  sc.seed = seed;
  auto sseq = make_seed(seed, difficulty, 2);
  std::mt19937_64 rng(sseq);
  constexpr std::array<int, 4> kObstacles{0, 2, 3, 5};
  constexpr std::array<int, 4> kSignals{0, 1, 1, 2};
  const double total = sc.route.total_length;

  for (int i = 0; i < kObstacles[static_cast<std::size_t>(difficulty)]; ++i) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const double s = uniform(rng, 15.0, total - 10.0);
      const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
      const double offset = uniform(rng, 3.2, 5.0);
      const double radius = uniform(rng, 0.5, 1.0);
      const RoutePoint rp = route_point_at(sc.route, s);
      const Vec2 normal(-std::sin(rp.heading), std::cos(rp.heading));
      const Vec2 c = rp.position + side * offset * normal;
      if (distance_to_route(sc.route, c) >= radius + cfg.vehicle_radius + 1.2) {
        sc.obstacles.push_back({c, radius});
        break;
      }
    }
  }
  for (int i = 0; i < kSignals[static_cast<std::size_t>(difficulty)]; ++i) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const double s = uniform(rng, 35.0, total - 25.0);
      const bool spaced = std::all_of(sc.signals.begin(), sc.signals.end(),
                                      [s](const Signal& o) { return std::abs(o.s - s) >= 30.0; });
      if (!spaced) continue;
      Signal sig;
      const RoutePoint rp = route_point_at(sc.route, s);
      sig.s = s;
      sig.position = rp.position;
      sig.heading = rp.heading;
      sig.green = uniform(rng, 5.0, 8.0);
      sig.yellow = 2.0;
      sig.red = uniform(rng, 3.0, 5.0);
      sig.offset = uniform(rng, 0.0, sig.green + sig.yellow + sig.red);
      sc.signals.push_back(sig);
      break;
    }
  }
  return sc;
}

Vec2 target_point(const RouteSpec& route, double s, double min_distance) {
  double acc = 0.0;
  for (std::size_t i = 1; i < route.targets.size(); ++i) {
    acc += (route.targets[i] - route.targets[i - 1]).norm();
    if (acc >= s + min_distance) return route.targets[i];
  }
  return route.targets.back();
}

Controls pure_pursuit(const DriveContext& ctx, double target_speed) {
  const VehicleState& st = ctx.state;
  const double lookahead = std::clamp(2.5 + 0.5 * st.v, 3.0, 8.0);
  const RoutePoint aim = route_point_at(ctx.scenario.route, ctx.progress + lookahead);
  const Vec2 local = rotate_into(aim.position - Vec2(st.x, st.y), st.theta);
  Controls c;
  const double dist = local.norm();
  if (dist > 1e-6) {
    const double alpha = std::atan2(local.y(), local.x());
    const double delta = std::atan2(2.0 * ctx.cfg.wheelbase * std::sin(alpha), dist);
    c.steer = delta / ctx.cfg.max_steer_angle;
  }
  const double accel = std::clamp(kSpeedGain * (target_speed - st.v), -ctx.cfg.max_brake, ctx.cfg.max_accel);
  if (accel >= 0.0) {
    c.throttle = accel / ctx.cfg.max_accel;
  } else {
    c.brake = -accel / ctx.cfg.max_brake;
  }
  return clamp_controls(c);
}

double expert_target_speed(const DriveContext& ctx) {
  const RouteSpec& route = ctx.scenario.route;
  const double s = ctx.progress;
  double target = std::numeric_limits<double>::infinity();
  double seg_start = 0.0;
  for (std::size_t i = 0; i < route.segments(); ++i) {
    const double len = (route.targets[i + 1] - route.targets[i]).norm();
    const double ahead = std::max(0.0, seg_start - s);
    if (seg_start + len > s && ahead < 30.0) {
      target = std::min(target, std::sqrt(route.speed_limit[i] * route.speed_limit[i] +
                                          2.0 * kComfortDecel * ahead));
    }
    seg_start += len;
  }
  if (!std::isfinite(target)) target = route.speed_limit.back();
  const double remaining = route.total_length - s;
  target = std::min(target, std::sqrt(2.0 * kComfortDecel * std::max(0.0, remaining)) + 1.0);

  const double v = ctx.state.v;
  for (const Signal& sig : ctx.scenario.signals) {
    const double to_line = sig.s - s;
    if (to_line < -0.5 || to_line > 40.0) continue;
    const SignalPhase phase = sig.phase(ctx.t);
    if (phase == SignalPhase::green) continue;
    const double d = to_line - kStopMargin;
    if (phase == SignalPhase::yellow) {
      const bool clears = to_line + 1.0 < v * sig.until_red(ctx.t);
      const bool can_stop = v * v / (2.0 * kFirmDecel) <= d;
      if (clears || !can_stop) continue;
    }
    const double preview = d - v / kSpeedGain;  // the speed loop lags by 1/gain seconds
    target = std::min(target, std::sqrt(2.0 * kStopDecel * std::max(0.0, preview)));
  }
  return std::min(target, ctx.cfg.max_speed);
}

Driver make_expert(std::uint64_t seed, bool noisy) {
  auto sseq = make_seed(seed, 0, 3);
  std::mt19937_64 rng(sseq);
  return [rng, noisy](const DriveContext& ctx) mutable {
    Controls c = pure_pursuit(ctx, expert_target_speed(ctx));
    if (noisy) {
      std::normal_distribution<double> steer_noise(0.0, ctx.cfg.steer_noise);
      std::normal_distribution<double> throttle_noise(0.0, ctx.cfg.throttle_noise);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      c.steer += steer_noise(rng);
      if (unit(rng) < ctx.cfg.spike_probability) {
        c.steer += (unit(rng) < 0.5 ? -1.0 : 1.0) * ctx.cfg.spike_magnitude;
      }
      const double dthrottle = throttle_noise(rng);
      if (c.throttle > 0.0) c.throttle += dthrottle;
    }
    return clamp_controls(c);
  };
}

Driver make_bang_bang() {
  return [](const DriveContext& ctx) {
    Controls c = pure_pursuit(ctx, 0.0);
    const double target = expert_target_speed(ctx);
    c.throttle = ctx.state.v < target ? 1.0 : 0.0;
    c.brake = ctx.state.v < target ? 0.0 : 1.0;
    return c;
  };
}

EpisodeLog rollout(const Scenario& scenario, const Driver& driver, const WorldConfig& cfg) {
  EpisodeLog log;
  log.route = scenario.route;
  const RouteSpec& route = scenario.route;
  const Vec2 d0 = route.targets[1] - route.targets[0];
  VehicleState state{route.targets[0].x(), route.targets[0].y(), std::atan2(d0.y(), d0.x()), 0.0};
  RouteTracker tracker(route);
  const double min_limit = *std::min_element(route.speed_limit.begin(), route.speed_limit.end());
  const double time_limit = 30.0 + 2.5 * route.total_length / min_limit;
  std::vector<Infraction> pending;
  std::set<std::size_t> in_contact;

  for (long k = 0;; ++k) {
    const double t = static_cast<double>(k) * cfg.dt;
    const RouteProjection proj = tracker.update({state.x, state.y});
    StepRecord rec;
    rec.t = t;
    rec.pose = state.pose();
    rec.speed = state.v;
    rec.infractions = std::move(pending);
    pending.clear();
    const bool deviated = std::any_of(rec.infractions.begin(), rec.infractions.end(), [](const Infraction& i) {
      return i.type == InfractionType::route_deviation;
    });
    if (tracker.progress() >= route.total_length - 0.5) log.completed = true;
    if (log.completed || deviated || t > time_limit) {
      log.steps.push_back(std::move(rec));
      break;
    }
    const DriveContext ctx{scenario, cfg, log.steps, state, t, proj.s};
    const Controls c = clamp_controls(driver(ctx));
    rec.steer = c.steer;
    rec.throttle = c.throttle;
    rec.brake = c.brake;
    log.steps.push_back(std::move(rec));

    const VehicleState next = step(state, c.steer, c.throttle, c.brake, cfg);
    if (!std::isfinite(next.x) || !std::isfinite(next.y) || !std::isfinite(next.theta) ||
        !std::isfinite(next.v)) {
      log.diverged = true;
      break;
    }
    const Vec2 p(next.x, next.y);
    for (std::size_t i = 0; i < scenario.obstacles.size(); ++i) {
      const Obstacle& o = scenario.obstacles[i];
      const bool touching = (p - o.center).norm() < o.radius + cfg.vehicle_radius;
      if (touching && in_contact.insert(i).second) {
        pending.push_back({InfractionType::collision, "obstacle " + std::to_string(i)});
      } else if (!touching) {
        in_contact.erase(i);
      }
    }
    const RouteProjection next_proj =
        project_onto_route(route, p, tracker.last_s() - 2.0, tracker.last_s() + 12.0);
    for (std::size_t i = 0; i < scenario.signals.size(); ++i) {
      const Signal& sig = scenario.signals[i];
      if (proj.s < sig.s && next_proj.s >= sig.s &&
          sig.phase(t + cfg.dt) == SignalPhase::red) {
        pending.push_back({InfractionType::red_light, "signal " + std::to_string(i)});
      }
    }
    if (next_proj.distance > cfg.deviation_threshold) {
      pending.push_back({InfractionType::route_deviation,
                         "lateral " + std::to_string(next_proj.distance) + " m"});
    }
    state = next;
  }
  log.completed_length = std::min(tracker.progress(), route.total_length);
  return log;
}

EpisodeLog expert_drive(const Scenario& scenario, const WorldConfig& cfg, std::uint64_t seed,
                        bool noisy) {
  return rollout(scenario, make_expert(seed, noisy), cfg);
}

EpisodeLog smooth_controls(const EpisodeLog& log, int window) {
  if (window < 1 || window % 2 == 0) {
    throw ValidationError("smooth_controls: window must be odd and >= 1, got " +
                          std::to_string(window));
  }
  const auto n = static_cast<long>(log.steps.size());
  if (window > n) {
    throw ValidationError("smooth_controls: window " + std::to_string(window) +
                          " larger than log of " + std::to_string(n) + " steps");
  }
  const long half = window / 2;
  const auto filter = [&](auto get) {
    std::vector<double> raw(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) raw[static_cast<std::size_t>(i)] = get(log.steps[static_cast<std::size_t>(i)]);
    // Mean and standard deviation over the window around i, optionally leaving i out.
    const auto window_stats = [&](const std::vector<double>& x, long i, bool leave_out) {
      const long lo = std::max(0L, i - half);
      const long hi = std::min(n - 1, i + half);
      double mean = 0.0;
      long count = 0;
      for (long j = lo; j <= hi; ++j) {
        if (leave_out && j == i) continue;
        mean += x[static_cast<std::size_t>(j)];
        ++count;
      }
      mean /= static_cast<double>(count);
      double var = 0.0;
      for (long j = lo; j <= hi; ++j) {
        if (leave_out && j == i) continue;
        const double d = x[static_cast<std::size_t>(j)] - mean;
        var += d * d;
      }
      var /= static_cast<double>(count);
      return std::pair{mean, std::sqrt(var)};
    };
    std::vector<double> cleaned = raw;
    for (long i = 0; i < n; ++i) {
      const auto [mean, sd] = window_stats(raw, i, true);
      if (std::abs(raw[static_cast<std::size_t>(i)] - mean) > 3.0 * sd) {
        cleaned[static_cast<std::size_t>(i)] = mean;
      }
    }
    std::vector<double> out(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = window_stats(cleaned, i, false).first;
    return out;
  };
  EpisodeLog smoothed = log;
  if (window == 1) return smoothed;
  const auto steer = filter([](const StepRecord& r) { return r.steer; });
  const auto throttle = filter([](const StepRecord& r) { return r.throttle; });
  for (std::size_t i = 0; i < smoothed.steps.size(); ++i) {
    smoothed.steps[i].steer = std::clamp(steer[i], -1.0, 1.0);
    smoothed.steps[i].throttle = std::clamp(throttle[i], 0.0, 1.0);
  }
  return smoothed;
}

std::optional<std::pair<int, int>> bev_cell(const Vec2& ego_point, const WorldConfig& cfg) {
  const auto& r = cfg.raster;
  const double res = cfg.bev_resolution;
  const double x_max = static_cast<double>(r.bev_height) * res - cfg.bev_behind;
  const double y_max = static_cast<double>(r.bev_width) * res / 2.0;
  const double row = std::floor((x_max - ego_point.x()) / res);
  const double col = std::floor((y_max - ego_point.y()) / res);
  if (row < 0.0 || col < 0.0 || row >= static_cast<double>(r.bev_height) ||
      col >= static_cast<double>(r.bev_width)) {
    return std::nullopt;
  }
  return std::pair{static_cast<int>(row), static_cast<int>(col)};
}

perception::ObservationFrame render_observation(const VehicleState& s, const Scenario& world,
                                                double t, const WorldConfig& cfg) {
  const auto& rc = cfg.raster;
  perception::ObservationFrame frame;
  frame.t = t;
  frame.bev = Mat::Zero(rc.bev_height, rc.bev_width);
  frame.camera = Mat::Zero(rc.camera_height, rc.camera_width);
  const Pose pose = s.pose();
  const Vec2 origin(s.x, s.y);

  // Scene primitives in the ego frame.
  std::vector<Vec2> route_pts = ego_frame_transform(world.route.targets, pose);
  std::vector<std::pair<Vec2, double>> discs;
  for (const auto& o : world.obstacles) {
    discs.emplace_back(rotate_into(o.center - origin, s.theta), o.radius);
  }
  struct Line {
    Vec2 a, b;
    double value;
  };
  std::vector<Line> lines;
  for (const auto& sig : world.signals) {
    const SignalPhase phase = sig.phase(t);
    if (phase == SignalPhase::green) continue;
    const Vec2 normal(-std::sin(sig.heading), std::cos(sig.heading));
    lines.push_back({rotate_into(sig.position + 3.0 * normal - origin, s.theta),
                     rotate_into(sig.position - 3.0 * normal - origin, s.theta),
                     phase == SignalPhase::red ? 0.8 : 0.6});
  }

  const double res = cfg.bev_resolution;
  const double x_max = static_cast<double>(rc.bev_height) * res - cfg.bev_behind;
  const double y_max = static_cast<double>(rc.bev_width) * res / 2.0;
  for (Index r = 0; r < rc.bev_height; ++r) {
    for (Index c = 0; c < rc.bev_width; ++c) {
      const double x_hi = x_max - static_cast<double>(r) * res;
      const double y_hi = y_max - static_cast<double>(c) * res;
      const Vec2 centre(x_hi - 0.5 * res, y_hi - 0.5 * res);
      double v = 0.0;
      for (std::size_t i = 0; i + 1 < route_pts.size(); ++i) {
        if (point_segment_distance(centre, route_pts[i], route_pts[i + 1]) <= 0.5 * res) {
          v = 0.3;
          break;
        }
      }
      for (const auto& line : lines) {
        if (point_segment_distance(centre, line.a, line.b) <= 0.5 * res) v = std::max(v, line.value);
      }
      for (const auto& [centre_o, radius] : discs) {
        const Vec2 closest(std::clamp(centre_o.x(), x_hi - res, x_hi),
                           std::clamp(centre_o.y(), y_hi - res, y_hi));
        if ((closest - centre_o).norm() <= radius) v = 1.0;
      }
      frame.bev(r, c) = v;
    }
  }

  const double range = cfg.camera_range;
  for (Index c = 0; c < rc.camera_width; ++c) {
    const double angle = cfg.camera_fov / 2.0 -
                         (static_cast<double>(c) + 0.5) * cfg.camera_fov / static_cast<double>(rc.camera_width);
    const Vec2 dir(std::cos(angle), std::sin(angle));
    double hit = range;
    double value = 0.0;
    for (const auto& [centre_o, radius] : discs) {
      const double along = dir.dot(centre_o);
      const double perp2 = centre_o.squaredNorm() - along * along;
      if (perp2 > radius * radius) continue;
      const double tt = along - std::sqrt(radius * radius - perp2);
      if (tt > 0.0 && tt < hit) {
        hit = tt;
        value = 1.0;
      }
    }
    for (const auto& line : lines) {
      const Vec2 e = line.b - line.a;
      const double denom = dir.x() * e.y() - dir.y() * e.x();
      if (std::abs(denom) < 1e-12) continue;
      const double tt = (line.a.x() * e.y() - line.a.y() * e.x()) / denom;
      const double u = (line.a.x() * dir.y() - line.a.y() * dir.x()) / denom;
      if (tt > 0.0 && tt < hit && u >= 0.0 && u <= 1.0) {
        hit = tt;
        value = line.value;
      }
    }
    if (value == 0.0) continue;
    const double half = (1.0 - hit / range) * static_cast<double>(rc.camera_height) / 2.0;
    const double mid = static_cast<double>(rc.camera_height) / 2.0;
    for (Index r = 0; r < rc.camera_height; ++r) {
      if (std::abs(static_cast<double>(r) + 0.5 - mid) < half) frame.camera(r, c) = value;
    }
  }
  return frame;
}

}  // namespace metdrive::world
