#pragma once

// Fast verification suites shared by `metdrive selftest`: a finite-difference
// gradient check through the whole model and a handful of closed-form oracles.

#include <cstdint>
#include <string>
#include <vector>

#include "metdrive/losses.hpp"
#include "metdrive/model.hpp"

namespace metdrive::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// L = K = 4, D = 8, 8x8 rasters, small channel counts.
ModelConfig tiny_model_config();

/// Random but valid samples (rasters in [0, 1], unit target directions).
std::vector<Sample> random_samples(const ModelConfig& config, int count, std::uint64_t seed);

/// total_loss (guidance on) of `model` over `batch` as a function of all
/// flattened parameters. The model's parameters are overwritten on each call.
losses::Objective full_model_objective(MetDriveModel& model, const std::vector<Sample>& batch,
                                       const losses::LossWeights& w);

CheckResult check_full_model_gradient(double tolerance = 1e-4, double eps = 1e-3);
CheckResult check_positional_embedding();
CheckResult check_temporal_guidance();
CheckResult check_metric_oracles();

std::vector<CheckResult> run_all();

}  // namespace metdrive::checks
