#include "metdrive/perception.hpp"

#include <string>

namespace metdrive::perception {

namespace {

void check_raster(const Mat& raster, Index height, Index width, const char* name) {
  if (raster.rows() != height || raster.cols() != width) {
    throw ConfigError(std::string(name) + " raster is " + std::to_string(raster.rows()) + "x" +
                      std::to_string(raster.cols()) + ", configured " + std::to_string(height) +
                      "x" + std::to_string(width));
  }
  if (!raster.allFinite() || raster.minCoeff() < 0.0 || raster.maxCoeff() > 1.0) {
    throw ValidationError(std::string(name) + " raster values outside [0, 1]");
  }
}

}  // namespace

void validate_frame(const ObservationFrame& frame, const PerceptionConfig& config) {
  check_raster(frame.camera, config.camera_height, config.camera_width, "camera");
  check_raster(frame.bev, config.bev_height, config.bev_width, "bev");
}

PerceptionEncoder::PerceptionEncoder(nn::ParameterStore& store, const PerceptionConfig& config,
                                     std::mt19937_64& rng)
    : config_(config) {
  const auto make = [&](Backbone& net, const std::string& name) {
    Index in = 1;
    for (std::size_t i = 0; i < 3; ++i) {
      net.stages[i] = nn::Conv2d(store, name + ".conv" + std::to_string(i), in,
                                 config.channels[i], 3, 2, 1, rng);
      in = config.channels[i];
    }
  };
  make(camera_net_, "perception.camera");
  make(bev_net_, "perception.bev");
  const Index c = config.channels[2];
  cam_query_ = nn::Linear(store, "perception.fusion.cam_query", c, c, rng, false);
  cam_key_ = nn::Linear(store, "perception.fusion.cam_key", c, c, rng, false);
  cam_value_ = nn::Linear(store, "perception.fusion.cam_value", c, c, rng, false);
  bev_query_ = nn::Linear(store, "perception.fusion.bev_query", c, c, rng, false);
  bev_key_ = nn::Linear(store, "perception.fusion.bev_key", c, c, rng, false);
  bev_value_ = nn::Linear(store, "perception.fusion.bev_value", c, c, rng, false);
  output_ = nn::Linear(store, "perception.fusion.out", 2 * c, config.output_dim, rng);
}

PerceptionEncoder::Tokens PerceptionEncoder::run_backbone(Tape& tape, const Backbone& net,
                                                          const Var& images, Index n, Index height,
                                                          Index width) const {
  Var x = images;
  Index h = height;
  Index w = width;
  for (const auto& stage : net.stages) {
    auto out = stage(tape, x, n, h, w);
    x = ad::silu(out.data);
    h = out.height;
    w = out.width;
  }
  return {x, h * w};
}

Var PerceptionEncoder::fuse(Tape& tape, const Tokens& camera, const Tokens& bev, Index n,
                            Diagnostics* diagnostics) const {
  Mat* cb = diagnostics ? &diagnostics->camera_to_bev : nullptr;
  Mat* bc = diagnostics ? &diagnostics->bev_to_camera : nullptr;
  const Var cam_attn = ad::grouped_attention(cam_query_(tape, camera.data),
                                             bev_key_(tape, bev.data),
                                             bev_value_(tape, bev.data), n, cb);
  const Var bev_attn = ad::grouped_attention(bev_query_(tape, bev.data),
                                             cam_key_(tape, camera.data),
                                             cam_value_(tape, camera.data), n, bc);
  const Var cam_fused = ad::group_mean_rows(ad::add(camera.data, cam_attn), camera.per_image);
  const Var bev_fused = ad::group_mean_rows(ad::add(bev.data, bev_attn), bev.per_image);
  const std::array<Var, 2> parts{cam_fused, bev_fused};
  return output_(tape, ad::hconcat(parts));
}

Var PerceptionEncoder::forward_impl(Tape& tape, std::span<const ObservationFrame* const> frames,
                                    Diagnostics* diagnostics) const {
  const auto n = static_cast<Index>(frames.size());
  const Index ch = config_.camera_height, cw = config_.camera_width;
  const Index bh = config_.bev_height, bw = config_.bev_width;
  Mat cam(n * ch * cw, 1);
  Mat bev(n * bh * bw, 1);
  for (Index i = 0; i < n; ++i) {
    const ObservationFrame& f = *frames[static_cast<std::size_t>(i)];
    validate_frame(f, config_);
    cam.middleRows(i * ch * cw, ch * cw) = f.camera.reshaped<Eigen::RowMajor>();
    bev.middleRows(i * bh * bw, bh * bw) = f.bev.reshaped<Eigen::RowMajor>();
  }
  const Tokens cam_tokens = run_backbone(tape, camera_net_, tape.constant(std::move(cam)), n, ch, cw);
  const Tokens bev_tokens = run_backbone(tape, bev_net_, tape.constant(std::move(bev)), n, bh, bw);
  if (diagnostics != nullptr) {
    diagnostics->camera_tokens = cam_tokens.data.value();
    diagnostics->bev_tokens = bev_tokens.data.value();
  }
  return fuse(tape, cam_tokens, bev_tokens, n, diagnostics);
}

Var PerceptionEncoder::forward(Tape& tape, std::span<const ObservationFrame* const> frames) const {
  return forward_impl(tape, frames, nullptr);
}

FeatureBlock PerceptionEncoder::encode_frame(const ObservationFrame& frame) const {
  Tape tape(false);
  const ObservationFrame* ptr = &frame;
  return {forward(tape, std::span(&ptr, 1)).value(), FeatureRole::geometric};
}

FeatureBlock PerceptionEncoder::encode_sequence(std::span<const ObservationFrame> frames,
                                                Index expected_length) const {
  if (static_cast<Index>(frames.size()) != expected_length) {
    throw ValidationError("encode_sequence: expected " + std::to_string(expected_length) +
                          " frames, got " + std::to_string(frames.size()));
  }
  std::vector<const ObservationFrame*> ptrs;
  for (const auto& f : frames) ptrs.push_back(&f);
  Tape tape(false);
  return {forward(tape, ptrs).value(), FeatureRole::geometric};
}

PerceptionEncoder::Diagnostics PerceptionEncoder::inspect(const ObservationFrame& frame) const {
  Diagnostics d;
  Tape tape(false);
  const ObservationFrame* ptr = &frame;
  forward_impl(tape, std::span(&ptr, 1), &d);
  return d;
}

}  // namespace metdrive::perception
