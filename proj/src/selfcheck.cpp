#include "metdrive/selfcheck.hpp"

#include <array>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "metdrive/metrics.hpp"
#include "metdrive/training.hpp"

namespace metdrive::checks {

using ad::Index;

ModelConfig tiny_model_config() {
  ModelConfig m;
  m.waypoints = 4;
  m.temporal.length = 4;
  m.temporal.embed_dim = 8;
  m.temporal.output_dim = 8;
  m.temporal.heads = 2;
  m.perception.camera_height = m.perception.camera_width = 8;
  m.perception.bev_height = m.perception.bev_width = 8;
  m.perception.channels = {3, 4, 6};
  m.perception.output_dim = 8;
  m.hidden = 8;
  return m;
}

std::vector<Sample> random_samples(const ModelConfig& config, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  const auto raster = [&](Index h, Index w) { return Mat(Mat::NullaryExpr(h, w, [&] { return unit(rng); })); };
  std::vector<Sample> out;
  for (int n = 0; n < count; ++n) {
    Sample s;
    for (Index t = 0; t < config.length(); ++t) {
      s.frames.push_back({raster(config.perception.camera_height, config.perception.camera_width),
                          raster(config.perception.bev_height, config.perception.bev_width),
                          0.1 * static_cast<double>(t)});
      const double a = sym(rng) * 3.0;
      s.ego.theta.push_back(sym(rng));
      s.ego.steer.push_back(sym(rng));
      s.ego.throttle.push_back(unit(rng));
      s.ego.dx.push_back(std::cos(a));
      s.ego.dy.push_back(std::sin(a));
      s.ego.timestamps.push_back(0.1 * static_cast<double>(t));
    }
    for (Index k = 0; k < config.waypoints; ++k) {
      s.gt.points.emplace_back(0.8 * static_cast<double>(k) + 0.3 * sym(rng), 0.3 * sym(rng));
    }
    s.target_point = {10.0 + 5.0 * unit(rng), 4.0 * sym(rng)};
    s.route = static_cast<std::uint64_t>(n);
    out.push_back(std::move(s));
  }
  return out;
}

losses::Objective full_model_objective(MetDriveModel& model, const std::vector<Sample>& batch,
                                       const losses::LossWeights& w) {
  return [&model, &batch, w](const Eigen::VectorXd& params, Eigen::VectorXd* gradient) {
    model.parameters().assign_values(params);
    std::vector<const Sample*> ptrs;
    for (const auto& s : batch) ptrs.push_back(&s);
    ad::Tape tape(gradient != nullptr);
    const auto loss = training::batch_loss(tape, model, ptrs, w, true);
    if (gradient != nullptr) {
      model.parameters().zero_grad();
      tape.backward(loss.total);
      *gradient = model.parameters().flatten_grads();
    }
    return loss.total.scalar();
  };
}

CheckResult check_full_model_gradient(double tolerance, double eps) {
  // 16x16 rasters leave a 2x2 token grid after the strided convs, so the
  // cross-attention query/key weights receive nonzero gradients.
  ModelConfig config = tiny_model_config();
  config.perception.camera_height = config.perception.camera_width = 16;
  config.perception.bev_height = config.perception.bev_width = 16;
  MetDriveModel model(config, 11);
  const auto batch = random_samples(config, 2, 12);
  const Eigen::VectorXd params = model.parameters().flatten_values();
  const auto report = losses::gradcheck_report(full_model_objective(model, batch, {}), params, eps);
  model.parameters().assign_values(params);
  return {"full-model gradcheck", report.max_relative_error < tolerance,
          fmt::format("max relative error {:.3e} over {} parameters (worst #{}: analytic {:.6e}, numeric {:.6e})",
                      report.max_relative_error, params.size(), report.worst_coordinate,
                      report.analytic_at_worst, report.numeric_at_worst)};
}

CheckResult check_positional_embedding() {
  const Index length = 64, dim = 32;
  const Mat pe = temporal::positional_embedding(length, dim);
  double worst = 0.0;
  for (Index p = 0; p < length; ++p) {
    for (Index i = 0; 2 * i < dim; ++i) {
      const double angle = static_cast<double>(p) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      worst = std::max(worst, std::abs(pe(p, 2 * i) - std::sin(angle)));
      worst = std::max(worst, std::abs(pe(p, 2 * i + 1) - std::cos(angle)));
    }
  }
  return {"positional embedding", worst <= 1e-12, fmt::format("max deviation {:.3e}", worst)};
}

CheckResult check_temporal_guidance() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  const auto random_traj = [&] {
    Trajectory t;
    for (int k = 0; k < 8; ++k) t.points.emplace_back(g(rng), g(rng));
    return t;
  };
  const losses::LossWeights w{0.4, 0.6, 0.5};
  const Trajectory full = random_traj();
  Trajectory first = random_traj(), second = random_traj();
  for (int k = 0; k < 4; ++k) first.points[static_cast<std::size_t>(k)] = full.points[static_cast<std::size_t>(k)];
  for (int k = 4; k < 8; ++k) second.points[static_cast<std::size_t>(k)] = full.points[static_cast<std::size_t>(k)];
  const double zero = losses::temporal_guidance_loss(first, second, full, w);

  const Trajectory a = random_traj(), b = random_traj();
  const double base = losses::temporal_guidance_loss(a, b, full, w);
  const double scaled = losses::temporal_guidance_loss(a, b, full, {w.alpha * 3.0, w.beta * 3.0, w.lambda_tg});
  Trajectory a2 = a, b2 = b;
  for (int k = 4; k < 8; ++k) a2.points[static_cast<std::size_t>(k)] = {g(rng), g(rng)};
  for (int k = 0; k < 4; ++k) b2.points[static_cast<std::size_t>(k)] = {g(rng), g(rng)};
  const double swapped = losses::temporal_guidance_loss(a2, b2, full, w);
  const bool ok = std::abs(zero) <= 1e-12 && std::abs(scaled - 3.0 * base) <= 1e-12 * std::max(1.0, base) &&
                  std::abs(swapped - base) <= 1e-12;
  return {"temporal guidance properties", ok,
          fmt::format("matching halves {:.3e}, linearity gap {:.3e}, index insensitivity gap {:.3e}", zero,
                      std::abs(scaled - 3.0 * base), std::abs(swapped - base))};
}

CheckResult check_metric_oracles() {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::vector<std::pair<double, double>> routes{{100.0, 1.0}, {50.0, 0.8}};
  const double ds = metrics::driving_score(routes);

  // Random events against a brute-force product.
  const std::array<InfractionType, 3> types{InfractionType::collision, InfractionType::red_light,
                                            InfractionType::route_deviation};
  const auto table = metrics::default_penalties();
  EpisodeLog log;
  log.route = make_route({{0.0, 0.0}, {20.0, 0.0}, {20.0, 20.0}}, {5.0, 5.0});
  double expected_is = 1.0;
  double x = 0.0, y = 0.0;
  for (int i = 0; i < 100; ++i) {
    StepRecord r;
    r.t = 0.1 * i;
    x += 0.4 * unit(rng) - 0.05;
    y += 0.2 * (unit(rng) - 0.5);
    r.pose = {x, y, 0.0};
    if (unit(rng) < 0.05) {
      const auto type = types[static_cast<std::size_t>(rng() % types.size())];
      r.infractions.push_back({type, ""});
      expected_is *= table.penalty.at(type);
    }
    log.steps.push_back(r);
  }
  const double is = metrics::infraction_score(log, table);

  bool monotone = true;
  double previous = 0.0;
  for (std::size_t n = 1; n <= log.steps.size(); ++n) {
    EpisodeLog prefix;
    prefix.route = log.route;
    prefix.steps.assign(log.steps.begin(), log.steps.begin() + static_cast<std::ptrdiff_t>(n));
    const double rc = metrics::route_completion(prefix);
    if (rc < previous || rc < 0.0 || rc > 100.0) monotone = false;
    previous = rc;
  }
  const bool ok = ds == 70.0 && std::abs(is - expected_is) <= 1e-15 && monotone;
  return {"metric oracles", ok,
          fmt::format("DS {} (expect 70), IS {} (expect {}), RC monotone over 100 prefixes: {}", ds, is,
                      expected_is, monotone ? "yes" : "no")};
}

std::vector<CheckResult> run_all() {
  return {check_positional_embedding(), check_temporal_guidance(), check_metric_oracles(),
          check_full_model_gradient()};
}

}  // namespace metdrive::checks
