#include "metdrive/dataset.hpp"

#include <cmath>
#include <filesystem>

#include <fmt/format.h>

#include "metdrive/record_io.hpp"

namespace metdrive::data {

namespace fs = std::filesystem;
using io::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

world::VehicleState state_of(const StepRecord& r) {
  return {r.pose.x, r.pose.y, r.pose.theta, r.speed};
}

}  // namespace

std::size_t window_count(std::size_t steps, const WindowConfig& w) {
  const auto need = static_cast<std::size_t>(w.length + w.waypoints);
  if (steps < need) return 0;
  return (steps - need) / static_cast<std::size_t>(w.stride) + 1;
}

std::vector<double> log_progress(const EpisodeLog& log) {
  RouteTracker tracker(log.route);
  std::vector<double> out;
  out.reserve(log.steps.size());
  for (const auto& r : log.steps) out.push_back(tracker.update({r.pose.x, r.pose.y}).s);
  return out;
}

EgoStateSequence ego_history(std::span<const StepRecord> steps, const RouteSpec& route,
                             std::span<const double> progress, std::size_t first,
                             ad::Index length, double target_min_distance) {
  const auto n = static_cast<std::size_t>(length);
  if (first + n > steps.size() || progress.size() != steps.size()) {
    throw ValidationError("ego_history: window exceeds the log");
  }
  const Pose current = steps[first + n - 1].pose;
  const double c = std::cos(current.theta);
  const double s = std::sin(current.theta);
  EgoStateSequence seq;
  for (std::size_t i = first; i < first + n; ++i) {
    const StepRecord& r = steps[i];
    seq.theta.push_back(wrap_angle(r.pose.theta - current.theta));
    seq.steer.push_back(i > 0 ? steps[i - 1].steer : 0.0);
    seq.throttle.push_back(i > 0 ? steps[i - 1].throttle : 0.0);
    const Vec2 d = world::target_point(route, progress[i], target_min_distance) - Vec2(r.pose.x, r.pose.y);
    const double norm = d.norm();
    if (norm > 1e-9) {
      const Vec2 u = d / norm;
      seq.dx.push_back(c * u.x() + s * u.y());
      seq.dy.push_back(-s * u.x() + c * u.y());
    } else {
      seq.dx.push_back(0.0);
      seq.dy.push_back(0.0);
    }
    seq.timestamps.push_back(r.t);
  }
  return seq;
}

std::vector<Sample> samples_from_log(const EpisodeLog& log, const world::Scenario& scenario,
                                     const world::WorldConfig& cfg, const WindowConfig& w,
                                     std::uint64_t route_index) {
  const std::size_t count = window_count(log.steps.size(), w);
  std::vector<Sample> out;
  if (count == 0) return out;
  const auto length = static_cast<std::size_t>(w.length);
  const auto waypoints = static_cast<std::size_t>(w.waypoints);
  const std::vector<double> progress = log_progress(log);
  std::vector<perception::ObservationFrame> frames;
  frames.reserve(log.steps.size());
  for (const auto& r : log.steps) {
    frames.push_back(world::render_observation(state_of(r), scenario, r.t, cfg));
  }
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t first = k * static_cast<std::size_t>(w.stride);
    const std::size_t cur = first + length - 1;
    const Pose pose = log.steps[cur].pose;
    Sample s;
    s.route = route_index;
    s.step = static_cast<std::int64_t>(cur);
    s.frames.assign(frames.begin() + static_cast<std::ptrdiff_t>(first),
                    frames.begin() + static_cast<std::ptrdiff_t>(first + length));
    s.ego = ego_history(log.steps, log.route, progress, first, w.length, cfg.target_min_distance);
    std::vector<Vec2> future;
    for (std::size_t i = cur; i < cur + waypoints; ++i) {
      future.emplace_back(log.steps[i].pose.x, log.steps[i].pose.y);
    }
    s.gt.points = ego_frame_transform(future, pose);
    const Vec2 target = world::target_point(log.route, progress[cur], cfg.target_min_distance);
    s.target_point = ego_frame_transform(std::span(&target, 1), pose).front();
    out.push_back(std::move(s));
  }
  return out;
}

std::uint64_t route_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index);
}

world::Scenario training_scenario(const ExperimentConfig& c, int index,
                                  const world::WorldConfig& wcfg) {
  return world::generate_scenario(route_seed(c.seed, kTrainStream, static_cast<std::uint64_t>(index)),
                                  index % (c.max_difficulty + 1), wcfg);
}

world::Scenario evaluation_scenario(std::uint64_t eval_seed, int index, int max_difficulty,
                                    const world::WorldConfig& wcfg) {
  return world::generate_scenario(route_seed(eval_seed, kEvalStream, static_cast<std::uint64_t>(index)),
                                  index % (max_difficulty + 1), wcfg);
}

Dataset make_dataset(int routes, std::uint64_t seed, const ExperimentConfig& c,
                     const world::WorldConfig& wcfg) {
  ExperimentConfig cfg = c;
  cfg.seed = seed;
  cfg.data_routes = routes;
  validate_config(cfg);
  const WindowConfig w{cfg.length, cfg.waypoints, cfg.stride};
  Dataset d;
  d.config = snapshot(cfg);
  d.routes = routes;
  for (int i = 0; i < routes; ++i) {
    const world::Scenario sc = training_scenario(cfg, i, wcfg);
    const EpisodeLog raw = world::expert_drive(sc, wcfg, splitmix64(sc.seed), true);
    if (raw.steps.size() < static_cast<std::size_t>(cfg.smoothing_window)) continue;
    const EpisodeLog smooth = world::smooth_controls(raw, cfg.smoothing_window);
    auto samples = samples_from_log(smooth, sc, wcfg, w, static_cast<std::uint64_t>(i));
    for (auto& s : samples) d.samples.push_back(std::move(s));
  }
  return d;
}

std::vector<Sample> heldout_samples(const ExperimentConfig& c, const world::WorldConfig& wcfg) {
  validate_config(c);
  const WindowConfig w{c.length, c.waypoints, c.stride};
  std::vector<Sample> out;
  for (int i = 0; i < c.eval_routes; ++i) {
    const world::Scenario sc = evaluation_scenario(c.eval_seed, i, c.eval_max_difficulty, wcfg);
    const EpisodeLog raw = world::expert_drive(sc, wcfg, splitmix64(sc.seed), true);
    if (raw.steps.size() < static_cast<std::size_t>(c.smoothing_window)) continue;
    auto samples = samples_from_log(world::smooth_controls(raw, c.smoothing_window), sc, wcfg, w,
                                    static_cast<std::uint64_t>(i));
    for (auto& s : samples) out.push_back(std::move(s));
  }
  return out;
}

void write_dataset(const std::string& dir, const Dataset& d) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir + ": " + ec.message());
  const std::size_t shards = (d.samples.size() + kShardSize - 1) / kShardSize;
  json config = json::array();
  for (const auto& [k, v] : d.config) config.push_back({k, v});
  const json meta{{"kind", "meta"},
                  {"config", std::move(config)},
                  {"samples", d.samples.size()},
                  {"routes", d.routes},
                  {"shards", shards},
                  {"shard_size", kShardSize}};
  io::write_jsonl((fs::path(dir) / "meta.jsonl").string(), {meta});
  for (std::size_t k = 0; k < shards; ++k) {
    std::vector<json> records;
    for (std::size_t i = k * kShardSize; i < std::min(d.samples.size(), (k + 1) * kShardSize); ++i) {
      records.push_back(io::to_json(d.samples[i]));
    }
    io::write_jsonl((fs::path(dir) / fmt::format("shard-{:05d}.jsonl", k)).string(), records);
  }
}

Dataset read_dataset(const std::string& dir) {
  const std::string meta_path = (fs::path(dir) / "meta.jsonl").string();
  const auto meta_records = io::read_jsonl(meta_path);
  if (meta_records.size() != 1 || meta_records[0].value("kind", "") != "meta") {
    throw IoError(meta_path + ": expected a single meta record");
  }
  const json& meta = meta_records[0];
  Dataset d;
  try {
    for (const auto& kv : meta.at("config")) {
      d.config.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
    }
    d.routes = meta.at("routes").get<int>();
    const auto shards = meta.at("shards").get<std::size_t>();
    const auto expected = meta.at("samples").get<std::size_t>();
    for (std::size_t k = 0; k < shards; ++k) {
      const std::string path = (fs::path(dir) / fmt::format("shard-{:05d}.jsonl", k)).string();
      for (const auto& r : io::read_jsonl(path)) {
        try {
          d.samples.push_back(io::sample_from_json(r));
        } catch (const std::exception& e) {
          throw IoError(path + ": malformed sample: " + e.what());
        }
      }
    }
    if (d.samples.size() != expected) {
      throw IoError(dir + ": meta announces " + std::to_string(expected) + " samples, found " +
                    std::to_string(d.samples.size()));
    }
  } catch (const json::exception& e) {
    throw IoError(meta_path + ": " + e.what());
  }
  return d;
}

}  // namespace metdrive::data
