#pragma once

// Experiment configuration as a flat `key = value` text file with dotted keys.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "metdrive/ego_temporal.hpp"
#include "metdrive/losses.hpp"
#include "metdrive/model.hpp"
#include "metdrive/synthworld.hpp"

namespace metdrive {

struct ExperimentConfig {
  // model
  ad::Index length = 8;          // model.L
  ad::Index waypoints = 8;       // model.K
  ad::Index embed_dim = 32;      // model.embed_dim (D)
  ad::Index temporal_dim = 64;   // model.temporal_dim (D_t)
  ad::Index geometric_dim = 64;  // model.geometric_dim (D_g)
  ad::Index hidden = 64;         // model.hidden
  ad::Index heads = 4;           // model.heads
  ad::Index kernel = 3;          // model.kernel

  losses::LossWeights loss;  // loss.alpha, loss.beta, loss.lambda_tg

  double learning_rate = 1e-3;  // train.lr
  ad::Index batch_size = 16;    // train.batch_size
  int epochs = 12;              // train.epochs

  std::uint64_t seed = 1;  // seed

  std::string data_path = "data";  // data.path
  int data_routes = 44;            // data.routes
  int stride = 4;                  // data.stride
  int smoothing_window = 5;        // data.smoothing_window
  int max_difficulty = 3;          // data.max_difficulty; route i has difficulty i mod (max + 1)

  std::string checkpoint_path = "model.metd";  // checkpoint.path
  std::string report_path = "report.jsonl";    // report.path

  bool temporal_loss_on = true;                                   // ablation.temporal_loss_on
  temporal::InputMode input_mode = temporal::InputMode::decomposed;  // ablation.input_mode

  int eval_routes = 20;          // eval.routes
  int eval_max_difficulty = 3;   // eval.max_difficulty
  std::uint64_t eval_seed = 7;   // eval.seed

  /// Model dimensions derived from the fields above.
  ModelConfig model() const;
  /// Loss weights with lambda forced to 0 when the temporal loss is switched off.
  losses::LossWeights effective_loss() const;
};

/// Every key with its current value, in documentation order.
std::vector<std::pair<std::string, std::string>> snapshot(const ExperimentConfig& c);
std::vector<std::string> config_keys();

/// Sets one key; throws ConfigError for unknown keys or unparsable values.
void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value);
/// Parses "key=value".
void apply_override(ExperimentConfig& c, const std::string& assignment);

/// Reads `key = value` lines; '#' starts a comment. Throws IoError / ConfigError.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<text>");
std::string to_text(const ExperimentConfig& c);

/// Throws ConfigError on inconsistent values (non-positive dims, odd L/K, ...).
void validate_config(const ExperimentConfig& c);

}  // namespace metdrive
