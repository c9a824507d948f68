#include "metdrive/decoder.hpp"

#include <algorithm>
#include <array>
#include <string>

namespace metdrive::decoder {

namespace {

// Waypoints and target points enter the GRU in units of 10 m.
constexpr double kInputScale = 0.1;

}  // namespace

void validate_fused(const FusedFeatures& f) {
  validate_feature_block(f.data);
  if (static_cast<Index>(f.mask.size()) != f.data.time()) {
    throw ValidationError("fused features: mask length " + std::to_string(f.mask.size()) +
                          " != time axis " + std::to_string(f.data.time()));
  }
  if (std::none_of(f.mask.begin(), f.mask.end(), [](bool b) { return b; })) {
    throw ValidationError("fused features: every step is masked");
  }
}

FusedFeatures concat_features(const FeatureBlock& geometric, const FeatureBlock& time_series) {
  if (geometric.role != FeatureRole::geometric || time_series.role != FeatureRole::time_series) {
    throw ValidationError("concat_features: expected (geometric, time_series) roles");
  }
  if (geometric.time() != time_series.time()) {
    throw ValidationError("concat_features: time length " + std::to_string(geometric.time()) +
                          " vs " + std::to_string(time_series.time()));
  }
  FusedFeatures out;
  out.data.role = FeatureRole::fused;
  out.data.data.resize(geometric.time(), geometric.channels() + time_series.channels());
  out.data.data << geometric.data, time_series.data;
  out.mask.assign(static_cast<std::size_t>(geometric.time()), true);
  return out;
}

std::vector<bool> half_mask(Index length, Half half) {
  if (length < 2 || length % 2 != 0) {
    throw ConfigError("mask_half: L=" + std::to_string(length) + " must be even");
  }
  std::vector<bool> mask(static_cast<std::size_t>(length), false);
  const Index begin = half == Half::first ? 0 : length / 2;
  for (Index t = begin; t < begin + length / 2; ++t) mask[static_cast<std::size_t>(t)] = true;
  return mask;
}

FusedFeatures mask_half(const FusedFeatures& f, Half half) {
  FusedFeatures out = f;
  const std::vector<bool> keep = half_mask(f.data.time(), half);
  for (std::size_t t = 0; t < keep.size(); ++t) {
    out.mask[t] = keep[t];
    if (!keep[t]) out.data.data.row(static_cast<Index>(t)).setZero();
  }
  return out;
}

WaypointDecoder::WaypointDecoder(nn::ParameterStore& store, const DecoderConfig& config,
                                 std::mt19937_64& rng)
    : config_(config),
      init_(store, "decoder.init", config.context_dim, config.hidden, rng),
      cell_(store, "decoder.gru", 4, config.hidden, rng),
      delta_(store, "decoder.delta", config.hidden, 2, rng) {}

Var WaypointDecoder::pool(Tape& tape, const Var& fused, Index batch, Index length,
                          const std::vector<bool>& mask) {
  if (static_cast<Index>(mask.size()) != length) {
    throw ValidationError("pool: mask length does not match L");
  }
  const auto kept = static_cast<Index>(std::count(mask.begin(), mask.end(), true));
  if (kept == 0) throw ValidationError("pool: every step is masked");
  Mat weights = Mat::Zero(batch, batch * length);
  for (Index b = 0; b < batch; ++b) {
    for (Index t = 0; t < length; ++t) {
      if (mask[static_cast<std::size_t>(t)]) weights(b, b * length + t) = 1.0 / static_cast<double>(kept);
    }
  }
  return ad::matmul(tape.constant(std::move(weights)), fused);
}

std::vector<Var> WaypointDecoder::unroll(Tape& tape, const Var& context, const Mat& targets,
                                         Index waypoints, std::vector<Var>* deltas) const {
  if (waypoints < 2 || waypoints % 2 != 0) {
    throw ConfigError("decode: K=" + std::to_string(waypoints) + " must be even and >= 2");
  }
  const Index batch = context.rows();
  if (targets.rows() != batch || targets.cols() != 2) {
    throw ValidationError("decode: target points must be (B x 2)");
  }
  const Var target = tape.constant(targets * kInputScale);
  Var h = ad::tanh(init_(tape, context));
  Var wp = tape.constant(Mat::Zero(batch, 2));
  std::vector<Var> out;
  out.reserve(static_cast<std::size_t>(waypoints));
  for (Index k = 0; k < waypoints; ++k) {
    const std::array<Var, 2> in{ad::scale(wp, kInputScale), target};
    h = cell_(tape, ad::hconcat(in), h);
    const Var d = delta_(tape, h);
    if (deltas != nullptr) deltas->push_back(d);
    wp = ad::add(wp, d);
    out.push_back(wp);
  }
  return out;
}

WaypointDecoder::Trace WaypointDecoder::decode_traced(const FusedFeatures& f,
                                                      const Vec2& target_point,
                                                      Index waypoints) const {
  validate_fused(f);
  if (f.data.channels() != config_.context_dim) {
    throw ConfigError("decode: fused channels " + std::to_string(f.data.channels()) +
                      " != configured context " + std::to_string(config_.context_dim));
  }
  Tape tape(false);
  const Var fused = tape.constant(f.data.data);
  const Var ctx = pool(tape, fused, 1, f.data.time(), f.mask);
  Mat target(1, 2);
  target << target_point.x(), target_point.y();
  std::vector<Var> deltas;
  const auto wps = unroll(tape, ctx, target, waypoints, &deltas);
  Trace trace;
  for (std::size_t k = 0; k < wps.size(); ++k) {
    trace.trajectory.points.emplace_back(wps[k].value()(0, 0), wps[k].value()(0, 1));
    trace.deltas.emplace_back(deltas[k].value()(0, 0), deltas[k].value()(0, 1));
  }
  return trace;
}

Trajectory WaypointDecoder::decode(const FusedFeatures& f, const Vec2& target_point,
                                   Index waypoints) const {
  return decode_traced(f, target_point, waypoints).trajectory;
}

}  // namespace metdrive::decoder
