#pragma once

// Expert demonstrations turned into training samples, and their on-disk form:
// a directory holding meta.jsonl plus shard-NNNNN.jsonl files.

#include <cstdint>
#include <string>
#include <vector>

#include "metdrive/config.hpp"
#include "metdrive/model.hpp"
#include "metdrive/synthworld.hpp"

namespace metdrive::data {

struct WindowConfig {
  ad::Index length = 8;     // L
  ad::Index waypoints = 8;  // K
  int stride = 4;
};

/// floor((steps - L - K) / stride) + 1, or 0 for logs that are too short.
std::size_t window_count(std::size_t steps, const WindowConfig& w);

/// Ego-state history of the steps [first, first + L). Headings are relative
/// to the pose at the last step; target directions are rotated into that
/// pose's frame. Control entries hold the command issued on the previous step.
EgoStateSequence ego_history(std::span<const StepRecord> steps, const RouteSpec& route,
                             std::span<const double> progress, std::size_t first,
                             ad::Index length, double target_min_distance);

/// Route arc length of every logged pose, each projection searched near the previous one.
std::vector<double> log_progress(const EpisodeLog& log);

/// Windows of a (smoothed) expert log. The observation history reuses the same L steps.
std::vector<Sample> samples_from_log(const EpisodeLog& log, const world::Scenario& scenario,
                                     const world::WorldConfig& cfg, const WindowConfig& w,
                                     std::uint64_t route_index);

/// Seed of the i-th route in a stream; different `stream` values never share routes.
std::uint64_t route_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);
inline constexpr std::uint64_t kTrainStream = 0x7261696eu;
inline constexpr std::uint64_t kEvalStream = 0x6576616cu;

/// Training route i: difficulty i mod (max_difficulty + 1).
world::Scenario training_scenario(const ExperimentConfig& c, int index,
                                  const world::WorldConfig& wcfg);
/// Held-out evaluation route i: difficulty i mod (max_difficulty + 1).
world::Scenario evaluation_scenario(std::uint64_t eval_seed, int index, int max_difficulty,
                                    const world::WorldConfig& wcfg);

/// Smoothed-expert windows on the held-out evaluation routes (open-loop test set).
std::vector<Sample> heldout_samples(const ExperimentConfig& c, const world::WorldConfig& wcfg = {});

struct Dataset {
  std::vector<std::pair<std::string, std::string>> config;  // snapshot of the generating config
  std::vector<Sample> samples;
  int routes = 0;
};

/// Drives the noisy expert on `routes` training routes, smooths the controls and
/// cuts windows. Deterministic per (routes, seed, config).
Dataset make_dataset(int routes, std::uint64_t seed, const ExperimentConfig& c,
                     const world::WorldConfig& wcfg = {});

inline constexpr std::size_t kShardSize = 256;

/// Writes meta.jsonl and the shards; throws IoError with the path on failure.
void write_dataset(const std::string& dir, const Dataset& d);
Dataset read_dataset(const std::string& dir);

}  // namespace metdrive::data
