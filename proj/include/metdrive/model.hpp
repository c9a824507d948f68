#pragma once

// The full driving model: perception and temporal branches, channel
// concatenation, and the shared GRU waypoint decoder.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "metdrive/decoder.hpp"
#include "metdrive/ego_temporal.hpp"
#include "metdrive/perception.hpp"

namespace metdrive {

/// One training example. Everything is expressed in the ego frame of the
/// current (last) step.
struct Sample {
  std::vector<perception::ObservationFrame> frames;  // L, oldest first
  EgoStateSequence ego;                               // L, oldest first
  Trajectory gt;                                      // K future positions, gt[0] = origin
  Vec2 target_point = Vec2::Zero();
  std::uint64_t route = 0;  // index of the source route within its dataset
  std::int64_t step = 0;    // log index of the current step

  bool operator==(const Sample&) const = default;
};

void validate_sample(const Sample& s, ad::Index length, ad::Index waypoints);

struct ModelConfig {
  ad::Index waypoints = 8;  // K
  temporal::TemporalConfig temporal;
  perception::PerceptionConfig perception;
  ad::Index hidden = 64;  // GRU state

  ad::Index length() const { return temporal.length; }
};

void validate_model_config(const ModelConfig& config);

class MetDriveModel {
 public:
  MetDriveModel(const ModelConfig& config, std::uint64_t seed);
  MetDriveModel(const MetDriveModel&) = delete;
  MetDriveModel& operator=(const MetDriveModel&) = delete;

  const ModelConfig& config() const { return config_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }

  const perception::PerceptionEncoder& perception() const { return perception_; }
  const temporal::TemporalEncoder& temporal() const { return temporal_; }
  const decoder::WaypointDecoder& decoder() const { return decoder_; }

  /// Each prediction is K Vars of shape (B x 2). `first` and `second` are
  /// decoded from the half-masked features and are empty unless requested.
  struct Outputs {
    std::vector<ad::Var> full;
    std::vector<ad::Var> first;
    std::vector<ad::Var> second;
  };
  Outputs forward(ad::Tape& tape, std::span<const Sample* const> batch, bool with_halves) const;

  /// (B*L x D_g + D_t) fused features, row b*L + t.
  ad::Var features(ad::Tape& tape, std::span<const Sample* const> batch) const;

  /// Value-only path for one sample.
  decoder::FusedFeatures fused_features(const Sample& sample) const;
  Trajectory predict(const Sample& sample) const;

 private:
  ModelConfig config_;
  std::mt19937_64 init_rng_;  // consumed by the member initialisers below, in declaration order
  nn::ParameterStore store_;
  perception::PerceptionEncoder perception_;
  temporal::TemporalEncoder temporal_;
  decoder::WaypointDecoder decoder_;
};

/// Converts K (B x 2) Vars into per-sample trajectories.
std::vector<Trajectory> to_trajectories(std::span<const ad::Var> waypoints);

}  // namespace metdrive
