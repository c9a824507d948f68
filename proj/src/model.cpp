#include "metdrive/model.hpp"

#include <array>
#include <string>

namespace metdrive {

using ad::Index;
using ad::Tape;
using ad::Var;

void validate_sample(const Sample& s, Index length, Index waypoints) {
  validate_sequence(s.ego);
  if (static_cast<Index>(s.ego.length()) != length) {
    throw ValidationError("sample: ego sequence length " + std::to_string(s.ego.length()) +
                          " != L " + std::to_string(length));
  }
  if (static_cast<Index>(s.frames.size()) != length) {
    throw ValidationError("sample: " + std::to_string(s.frames.size()) + " frames != L " +
                          std::to_string(length));
  }
  validate_trajectory(s.gt);
  if (static_cast<Index>(s.gt.size()) != waypoints) {
    throw ValidationError("sample: ground truth has " + std::to_string(s.gt.size()) +
                          " waypoints, expected " + std::to_string(waypoints));
  }
  if (!s.target_point.allFinite()) throw ValidationError("sample: target point not finite");
}

void validate_model_config(const ModelConfig& c) {
  const auto positive = [](Index v, const char* name) {
    if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(c.temporal.length, "L");
  positive(c.waypoints, "K");
  positive(c.temporal.embed_dim, "D");
  positive(c.temporal.output_dim, "D_t");
  positive(c.perception.output_dim, "D_g");
  positive(c.hidden, "hidden");
  positive(c.temporal.heads, "heads");
  if (c.temporal.length % 2 != 0) throw ConfigError("L must be even");
  if (c.waypoints % 2 != 0) throw ConfigError("K must be even");
  if (c.temporal.embed_dim % 2 != 0) throw ConfigError("D must be even");
  if (c.temporal.embed_dim % c.temporal.heads != 0) throw ConfigError("D must be divisible by heads");
}

namespace {

const ModelConfig& checked(const ModelConfig& c) {
  validate_model_config(c);
  return c;
}

}  // namespace

MetDriveModel::MetDriveModel(const ModelConfig& config, std::uint64_t seed)
    : config_(checked(config)),
      init_rng_(seed),
      perception_(store_, config.perception, init_rng_),
      temporal_(store_, config.temporal, init_rng_),
      decoder_(store_,
               decoder::DecoderConfig{config.perception.output_dim + config.temporal.output_dim,
                                      config.hidden},
               init_rng_) {}

Var MetDriveModel::features(Tape& tape, std::span<const Sample* const> batch) const {
  const Index length = config_.length();
  std::vector<const perception::ObservationFrame*> frames;
  std::vector<const EgoStateSequence*> egos;
  frames.reserve(batch.size() * static_cast<std::size_t>(length));
  for (const Sample* s : batch) {
    validate_sample(*s, length, config_.waypoints);
    for (const auto& f : s->frames) frames.push_back(&f);
    egos.push_back(&s->ego);
  }
  const std::array<Var, 2> parts{perception_.forward(tape, frames), temporal_.forward(tape, egos)};
  return ad::hconcat(parts);
}

MetDriveModel::Outputs MetDriveModel::forward(Tape& tape, std::span<const Sample* const> batch,
                                              bool with_halves) const {
  const auto n = static_cast<Index>(batch.size());
  if (n == 0) throw ValidationError("forward: empty batch");
  const Index length = config_.length();
  const Var fused = features(tape, batch);
  Mat targets(n, 2);
  for (Index b = 0; b < n; ++b) targets.row(b) = batch[static_cast<std::size_t>(b)]->target_point.transpose();

  const auto decode = [&](const std::vector<bool>& mask) {
    const Var ctx = decoder::WaypointDecoder::pool(tape, fused, n, length, mask);
    return decoder_.unroll(tape, ctx, targets, config_.waypoints);
  };
  Outputs out;
  out.full = decode(std::vector<bool>(static_cast<std::size_t>(length), true));
  if (with_halves) {
    out.first = decode(decoder::half_mask(length, decoder::Half::first));
    out.second = decode(decoder::half_mask(length, decoder::Half::second));
  }
  return out;
}

decoder::FusedFeatures MetDriveModel::fused_features(const Sample& sample) const {
  validate_sample(sample, config_.length(), config_.waypoints);
  const FeatureBlock geometric = perception_.encode_sequence(sample.frames, config_.length());
  Tape tape(false);
  const EgoStateSequence* ego = &sample.ego;
  const FeatureBlock series{temporal_.forward(tape, std::span(&ego, 1)).value(),
                            FeatureRole::time_series};
  return decoder::concat_features(geometric, series);
}

Trajectory MetDriveModel::predict(const Sample& sample) const {
  Tape tape(false);
  const Sample* ptr = &sample;
  return to_trajectories(forward(tape, std::span(&ptr, 1), false).full).front();
}

std::vector<Trajectory> to_trajectories(std::span<const Var> waypoints) {
  if (waypoints.empty()) return {};
  const Index n = waypoints.front().rows();
  std::vector<Trajectory> out(static_cast<std::size_t>(n));
  for (const Var& wp : waypoints) {
    for (Index b = 0; b < n; ++b) {
      out[static_cast<std::size_t>(b)].points.emplace_back(wp.value()(b, 0), wp.value()(b, 1));
    }
  }
  return out;
}

}  // namespace metdrive
