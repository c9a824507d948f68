#include "metdrive/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "metdrive/dataset.hpp"
#include "metdrive/losses.hpp"
#include "metdrive/record_io.hpp"

namespace metdrive::metrics {

using io::json;

AdeFde ade_fde(const Trajectory& pred, const Trajectory& gt) {
  if (pred.size() != gt.size()) {
    throw ValidationError("ade_fde: length mismatch (" + std::to_string(pred.size()) + " vs " +
                          std::to_string(gt.size()) + ")");
  }
  if (gt.size() == 0) throw ValidationError("ade_fde: empty trajectory");
  double sum = 0.0;
  for (std::size_t k = 0; k < gt.size(); ++k) sum += (pred.points[k] - gt.points[k]).norm();
  return {sum / static_cast<double>(gt.size()), (pred.points.back() - gt.points.back()).norm()};
}

double route_completion(const EpisodeLog& log) {
  if (!(log.route.total_length > 0.0)) throw ValidationError("route_completion: zero-length route");
  if (log.completed) return 100.0;
  RouteTracker tracker(log.route);
  for (const auto& r : log.steps) tracker.update({r.pose.x, r.pose.y});
  return std::clamp(100.0 * tracker.progress() / log.route.total_length, 0.0, 100.0);
}

PenaltyTable default_penalties() {
  return {{{InfractionType::collision, 0.60},
           {InfractionType::red_light, 0.70},
           {InfractionType::route_deviation, 0.75}}};
}

void validate_penalties(const PenaltyTable& t) {
  for (const auto& [type, p] : t.penalty) {
    if (!(p > 0.0 && p <= 1.0)) {
      throw ConfigError("penalty for " + to_string(type) + " must lie in (0, 1]");
    }
  }
}

double infraction_score(const EpisodeLog& log, const PenaltyTable& table) {
  validate_penalties(table);
  double score = 1.0;
  for (const auto& r : log.steps) {
    for (const auto& i : r.infractions) {
      const auto it = table.penalty.find(i.type);
      if (it == table.penalty.end()) {
        throw ConfigError("no penalty configured for infraction " + to_string(i.type));
      }
      score *= it->second;
    }
  }
  return score;
}

double driving_score(std::span<const std::pair<double, double>> per_route) {
  if (per_route.empty()) throw ValidationError("driving_score: no routes");
  std::vector<double> products;
  products.reserve(per_route.size());
  for (const auto& [rc, is] : per_route) products.push_back(rc * is);
  return losses::compensated_mean(products);
}

Smoothness smoothness(std::span<const double> speeds, double dt, double dead_band) {
  if (speeds.size() < 3) throw ValidationError("smoothness: need at least 3 steps");
  if (!(dt > 0.0)) throw ValidationError("smoothness: dt must be positive");
  Smoothness s;
  const auto [lo, hi] = std::minmax_element(speeds.begin(), speeds.end());
  s.speed_min_kmh = *lo * 3.6;
  s.speed_max_kmh = *hi * 3.6;
  double sq = 0.0;
  for (std::size_t i = 0; i + 2 < speeds.size(); ++i) {
    const double j = (speeds[i + 2] - 2.0 * speeds[i + 1] + speeds[i]) / (dt * dt);
    sq += j * j;
  }
  s.jerk_rms = std::sqrt(sq / static_cast<double>(speeds.size() - 2));
  int last_sign = 0;
  for (std::size_t i = 0; i + 1 < speeds.size(); ++i) {
    const double a = (speeds[i + 1] - speeds[i]) / dt;
    if (std::abs(a) <= dead_band) continue;
    const int sign = a > 0.0 ? 1 : -1;
    if (last_sign != 0 && sign != last_sign) ++s.oscillation_count;
    last_sign = sign;
  }
  return s;
}

Smoothness smoothness(const EpisodeLog& log, double dead_band) {
  if (log.steps.size() < 3) throw ValidationError("smoothness: need at least 3 steps");
  std::vector<double> speeds;
  speeds.reserve(log.steps.size());
  for (const auto& r : log.steps) speeds.push_back(r.speed);
  return smoothness(speeds, log.steps[1].t - log.steps[0].t, dead_band);
}

world::Controls track_waypoints(const Trajectory& wp, const Vec2& target_point, double speed,
                                const world::WorldConfig& cfg, const TrackerConfig& tracker) {
  if (wp.size() < 2) throw ValidationError("track_waypoints: need at least 2 waypoints");
  Vec2 aim = wp.points.back();
  for (const auto& p : wp.points) {
    if (p.norm() >= tracker.min_aim_distance) {
      aim = p;
      break;
    }
  }
  if (wp.points.back().norm() < tracker.min_path_length) aim = target_point;
  world::Controls c;
  const double dist = aim.norm();
  if (dist > 1e-6 && aim.allFinite()) {
    const double alpha = std::atan2(aim.y(), aim.x());
    const double delta = std::atan2(2.0 * cfg.wheelbase * std::sin(alpha), dist);
    c.steer = std::clamp(delta / cfg.max_steer_angle, -1.0, 1.0);
  }
  const double horizon = static_cast<double>(wp.size() - 1) * cfg.dt;
  const double desired = (wp.points.back() - wp.points.front()).norm() / horizon;
  const double accel = std::clamp(tracker.speed_gain * (desired - speed), -cfg.max_brake, cfg.max_accel);
  if (!std::isfinite(accel)) return c;
  if (accel >= 0.0) {
    c.throttle = accel / cfg.max_accel;
  } else {
    c.brake = -accel / cfg.max_brake;
  }
  return c;
}

world::Driver make_model_driver(const MetDriveModel& model, const TrackerConfig& tracker) {
  struct Memory {
    std::vector<perception::ObservationFrame> frames;
    std::vector<double> progress;
  };
  auto memory = std::make_shared<Memory>();
  return [&model, tracker, memory](const world::DriveContext& ctx) {
    const auto length = static_cast<std::ptrdiff_t>(model.config().length());
    const auto now = static_cast<std::ptrdiff_t>(ctx.history.size());
    if (static_cast<std::ptrdiff_t>(memory->frames.size()) != now) {
      throw ValidationError("model driver: called out of step order");
    }
    memory->frames.push_back(world::render_observation(ctx.state, ctx.scenario, ctx.t, ctx.cfg));
    memory->progress.push_back(ctx.progress);

    StepRecord current;
    current.t = ctx.t;
    current.pose = ctx.state.pose();
    current.speed = ctx.state.v;
    std::vector<StepRecord> records;
    std::vector<double> progress;
    Sample sample;
    for (std::ptrdiff_t i = 0; i < length; ++i) {
      const std::ptrdiff_t g = now - length + 1 + i;
      const auto src = static_cast<std::size_t>(std::max<std::ptrdiff_t>(g, 0));
      StepRecord r = g == now ? current : (g > 0 ? ctx.history[src] : (now == 0 ? current : ctx.history[0]));
      if (g < 0) {
        r.t = ctx.history.empty() ? ctx.t + static_cast<double>(g) * ctx.cfg.dt
                                  : ctx.history[0].t + static_cast<double>(g) * ctx.cfg.dt;
        r.steer = 0.0;
        r.throttle = 0.0;
        r.brake = 0.0;
      }
      records.push_back(r);
      progress.push_back(memory->progress[src]);
      sample.frames.push_back(memory->frames[src]);
    }
    sample.ego = data::ego_history(records, ctx.scenario.route, progress, 0, model.config().length(),
                                   ctx.cfg.target_min_distance);
    sample.gt.points.assign(static_cast<std::size_t>(model.config().waypoints), Vec2::Zero());
    const Vec2 target = world::target_point(ctx.scenario.route, ctx.progress, ctx.cfg.target_min_distance);
    const Pose pose = ctx.state.pose();
    sample.target_point = ego_frame_transform(std::span(&target, 1), pose).front();
    const Trajectory wp = model.predict(sample);
    return track_waypoints(wp, sample.target_point, ctx.state.v, ctx.cfg, tracker);
  };
}

ClosedLoopReport evaluate_driver(const DriverFactory& factory,
                                 std::span<const world::Scenario> scenarios,
                                 const world::WorldConfig& cfg, const PenaltyTable& penalties) {
  if (scenarios.empty()) throw ValidationError("closed-loop evaluation: no routes");
  ClosedLoopReport report;
  std::vector<std::pair<double, double>> scores;
  std::vector<double> rcs, iss;
  for (const auto& sc : scenarios) {
    const EpisodeLog log = world::rollout(sc, factory(sc), cfg);
    RouteResult r;
    r.seed = sc.seed;
    r.difficulty = sc.difficulty;
    r.rc = route_completion(log);
    r.is = infraction_score(log, penalties);
    r.completed = log.completed;
    r.diverged = log.diverged;
    r.steps = log.steps.size();
    if (log.steps.size() >= 3) r.smooth = smoothness(log);
    for (const auto& step : log.steps) {
      for (const auto& i : step.infractions) ++r.infractions[to_string(i.type)];
    }
    scores.emplace_back(r.rc, r.is);
    rcs.push_back(r.rc);
    iss.push_back(r.is);
    report.routes.push_back(std::move(r));
  }
  report.driving_score = driving_score(scores);
  report.mean_rc = losses::compensated_mean(rcs);
  report.mean_is = losses::compensated_mean(iss);
  return report;
}

ClosedLoopReport closed_loop_eval(const MetDriveModel& model,
                                  std::span<const world::Scenario> scenarios,
                                  const world::WorldConfig& cfg, const PenaltyTable& penalties) {
  return evaluate_driver([&model](const world::Scenario&) { return make_model_driver(model); },
                         scenarios, cfg, penalties);
}

AdeFde open_loop_eval(const MetDriveModel& model, std::span<const Sample> samples,
                      ad::Index batch_size) {
  if (samples.empty()) throw ValidationError("open-loop evaluation: no samples");
  std::vector<double> ades, fdes;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<const Sample*> batch;
    for (std::size_t i = start; i < std::min(samples.size(), start + static_cast<std::size_t>(batch_size)); ++i) {
      batch.push_back(&samples[i]);
    }
    ad::Tape tape(false);
    const auto preds = to_trajectories(model.forward(tape, batch, false).full);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const AdeFde e = ade_fde(preds[b], batch[b]->gt);
      ades.push_back(e.ade);
      fdes.push_back(e.fde);
    }
  }
  return {losses::compensated_mean(ades), losses::compensated_mean(fdes)};
}

std::string closed_loop_record(const ClosedLoopReport& report, const std::string& label) {
  json routes = json::array();
  for (const auto& r : report.routes) {
    routes.push_back({{"seed", r.seed},
                      {"difficulty", r.difficulty},
                      {"rc", r.rc},
                      {"is", r.is},
                      {"completed", r.completed},
                      {"diverged", r.diverged},
                      {"steps", r.steps},
                      {"infractions", r.infractions},
                      {"speed_min_kmh", r.smooth.speed_min_kmh},
                      {"speed_max_kmh", r.smooth.speed_max_kmh},
                      {"jerk_rms", r.smooth.jerk_rms},
                      {"oscillation_count", r.smooth.oscillation_count}});
  }
  return io::record_line({{"kind", "closed_loop"},
                          {"label", label},
                          {"driving_score", report.driving_score},
                          {"mean_rc", report.mean_rc},
                          {"mean_is", report.mean_is},
                          {"routes", std::move(routes)}});
}

std::string open_loop_record(const AdeFde& errors, std::size_t samples, const std::string& label) {
  return io::record_line({{"kind", "open_loop"},
                          {"label", label},
                          {"samples", samples},
                          {"ade", errors.ade},
                          {"fde", errors.fde}});
}

}  // namespace metdrive::metrics
