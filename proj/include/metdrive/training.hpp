#pragma once

// One-stage training of the whole model with Adam, and the binary checkpoint format.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "metdrive/config.hpp"
#include "metdrive/model.hpp"

namespace metdrive::training {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(const std::vector<ad::Parameter*>& params);
  std::int64_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Mat> m_, v_;
};

struct EpochLoss {
  int epoch = 0;
  double total = 0.0;
  double imitation = 0.0;
  double temporal_guidance = 0.0;  // 0 when the guidance loss is off
};

/// Loss terms of one batch.
struct BatchLoss {
  ad::Var total;
  double imitation = 0.0;
  double temporal_guidance = 0.0;
};
BatchLoss batch_loss(ad::Tape& tape, const MetDriveModel& model,
                     std::span<const Sample* const> batch, const losses::LossWeights& w,
                     bool temporal_loss_on);

/// Model plus everything needed to continue or reproduce it.
struct TrainState {
  ExperimentConfig config;
  std::unique_ptr<MetDriveModel> model;
  std::mt19937_64 rng;  // shuffling stream
  int epoch = 0;
  std::vector<EpochLoss> curve;
};

/// Fresh model initialised from config.seed.
TrainState init_state(const ExperimentConfig& config);

/// Runs config.epochs epochs of seeded shuffled minibatch Adam over `samples`.
/// Throws TrainingError naming the batch if a loss is not finite.
using EpochCallback = std::function<void(const EpochLoss&)>;
TrainState train(const ExperimentConfig& config, const std::vector<Sample>& samples,
                 const EpochCallback& on_epoch = {});

/// One Adam step on a single batch; returns the loss before the step.
double train_step(MetDriveModel& model, Adam& opt, std::span<const Sample* const> batch,
                  const losses::LossWeights& w, bool temporal_loss_on);

inline constexpr char kCheckpointMagic[] = "METD1";

void save_checkpoint(const std::string& path, const TrainState& state);
/// Rebuilds the model from the stored config and overwrites every parameter.
/// Throws IoError on a bad header, truncation or a parameter mismatch.
TrainState load_checkpoint(const std::string& path);

/// Loss curve as one metrics record.
std::string loss_curve_record(const std::vector<EpochLoss>& curve, const std::string& label = "");

}  // namespace metdrive::training
