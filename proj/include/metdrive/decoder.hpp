#pragma once

// GRU waypoint decoder over concatenated geometric + time-series features.

#include <random>
#include <span>
#include <vector>

#include "metdrive/domain.hpp"
#include "metdrive/nn.hpp"

namespace metdrive::decoder {

using ad::Index;
using ad::Tape;
using ad::Var;

/// Fused (L x D_g + D_t) features with per-step keep flags.
struct FusedFeatures {
  FeatureBlock data;
  std::vector<bool> mask;
};

void validate_fused(const FusedFeatures& f);

/// Channel concatenation [F_g, F_t]; mask all-true.
FusedFeatures concat_features(const FeatureBlock& geometric, const FeatureBlock& time_series);

enum class Half { first, second };

/// Keep-flags for steps [0, L/2) (first) or [L/2, L) (second). Throws ConfigError for odd L.
std::vector<bool> half_mask(Index length, Half half);
FusedFeatures mask_half(const FusedFeatures& f, Half half);

struct DecoderConfig {
  Index context_dim = 128;  // D_g + D_t
  Index hidden = 64;
};

class WaypointDecoder {
 public:
  WaypointDecoder(nn::ParameterStore& store, const DecoderConfig& config, std::mt19937_64& rng);

  const DecoderConfig& config() const { return config_; }
  /// Hidden -> 2-D delta head.
  const nn::Linear& delta_head() const { return delta_; }

  Trajectory decode(const FusedFeatures& f, const Vec2& target_point, Index waypoints) const;

  /// decode() plus the per-step emitted deltas.
  struct Trace {
    Trajectory trajectory;
    std::vector<Vec2> deltas;
  };
  Trace decode_traced(const FusedFeatures& f, const Vec2& target_point, Index waypoints) const;

  /// Mask-aware mean over each sample's kept steps: fused (B*L x C) -> (B x C).
  static Var pool(Tape& tape, const Var& fused, Index batch, Index length,
                  const std::vector<bool>& mask);

  /// Unrolls the GRU from pooled context (B x C) and target points (B x 2).
  /// Returns K cumulative waypoints, each (B x 2); the optional `deltas`
  /// receives the per-step increments.
  std::vector<Var> unroll(Tape& tape, const Var& context, const Mat& targets, Index waypoints,
                          std::vector<Var>* deltas = nullptr) const;

 private:
  DecoderConfig config_;
  nn::Linear init_;
  nn::GRUCell cell_;
  nn::Linear delta_;
};

}  // namespace metdrive::decoder
