#pragma once

// Perception branch at toy scale: camera and BEV rasters pass through small
// strided convolutional backbones; their token maps are fused by cross-attention
// into one geometric descriptor per frame.

#include <array>
#include <random>
#include <span>

#include "metdrive/domain.hpp"
#include "metdrive/nn.hpp"

namespace metdrive::perception {

using ad::Index;
using ad::Tape;
using ad::Var;

struct ObservationFrame {
  Mat camera;  // H_c x W_c, values in [0, 1]
  Mat bev;     // H_b x W_b, values in [0, 1]
  double t = 0.0;

  bool operator==(const ObservationFrame& o) const {
    return t == o.t && camera.rows() == o.camera.rows() && camera.cols() == o.camera.cols() &&
           bev.rows() == o.bev.rows() && bev.cols() == o.bev.cols() && camera == o.camera &&
           bev == o.bev;
  }
};

struct PerceptionConfig {
  Index camera_height = 16;
  Index camera_width = 16;
  Index bev_height = 16;
  Index bev_width = 16;
  std::array<Index, 3> channels{8, 16, 32};
  Index output_dim = 64;  // D_g
};

/// Throws ConfigError on a resolution mismatch, ValidationError on values outside [0, 1].
void validate_frame(const ObservationFrame& frame, const PerceptionConfig& config);

class PerceptionEncoder {
 public:
  PerceptionEncoder(nn::ParameterStore& store, const PerceptionConfig& config,
                    std::mt19937_64& rng);

  const PerceptionConfig& config() const { return config_; }

  /// (1 x D_g) geometric features for one frame.
  FeatureBlock encode_frame(const ObservationFrame& frame) const;
  /// (L x D_g), one row per frame, oldest first.
  FeatureBlock encode_sequence(std::span<const ObservationFrame> frames, Index expected_length) const;

  /// Differentiable batch path over frames: (n x D_g).
  Var forward(Tape& tape, std::span<const ObservationFrame* const> frames) const;

  struct Diagnostics {
    Mat camera_tokens;      // backbone output entering fusion
    Mat bev_tokens;
    Mat camera_to_bev;      // attention weights, one row per camera token
    Mat bev_to_camera;
  };
  Diagnostics inspect(const ObservationFrame& frame) const;

 private:
  struct Backbone {
    std::array<nn::Conv2d, 3> stages;
  };
  struct Tokens {
    Var data;
    Index per_image;
  };
  Tokens run_backbone(Tape& tape, const Backbone& net, const Var& images, Index n, Index height,
                      Index width) const;
  Var fuse(Tape& tape, const Tokens& camera, const Tokens& bev, Index n,
           Diagnostics* diagnostics) const;
  Var forward_impl(Tape& tape, std::span<const ObservationFrame* const> frames,
                   Diagnostics* diagnostics) const;

  PerceptionConfig config_;
  Backbone camera_net_;
  Backbone bev_net_;
  nn::Linear cam_query_, cam_key_, cam_value_;
  nn::Linear bev_query_, bev_key_, bev_value_;
  nn::Linear output_;
};

}  // namespace metdrive::perception
