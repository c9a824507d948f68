#pragma once

// Imitation loss, temporal guidance loss, their combination, and the
// central-difference gradient oracle.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "metdrive/autodiff.hpp"
#include "metdrive/domain.hpp"

namespace metdrive::losses {

using ad::Var;

struct LossWeights {
  double alpha = 0.4;      // first (older) half
  double beta = 0.6;       // second (more recent) half
  double lambda_tg = 0.5;  // temporal guidance vs imitation
};

/// Throws ConfigError for negative weights, or alpha + beta == 0 when guidance is on.
void validate_weights(const LossWeights& w, bool temporal_guidance_enabled);

/// alpha * sum_{k<K/2} |y_first[k] - y_full[k]|^2 + beta * sum_{k>=K/2} |y_second[k] - y_full[k]|^2
double temporal_guidance_loss(const Trajectory& y_first, const Trajectory& y_second,
                              const Trajectory& y_full, const LossWeights& w);

/// (1/K) * sum_k |pred[k] - gt[k]|_1
double imitation_loss(const Trajectory& pred, const Trajectory& gt);

double total_loss(const Trajectory& pred_full, const Trajectory& pred_first,
                  const Trajectory& pred_second, const Trajectory& gt, const LossWeights& w);

// Differentiable batch forms. Each trajectory is K Vars of shape (B x 2); the
// result is the batch mean of the per-sample loss, as a 1x1 Var.
Var temporal_guidance_loss(std::span<const Var> y_first, std::span<const Var> y_second,
                           std::span<const Var> y_full, const LossWeights& w);
Var imitation_loss(std::span<const Var> pred, std::span<const Mat> gt);

/// Number of temporal_guidance_loss evaluations (either form) since process start.
std::uint64_t temporal_guidance_invocations();

/// Order-robust mean (Neumaier compensated summation).
double compensated_mean(std::span<const double> values);

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Returns f(params) and, if `gradient` is non-null, writes the analytic gradient.
using Objective = std::function<double(const Eigen::VectorXd& params, Eigen::VectorXd* gradient)>;

struct GradcheckReport {
  double max_relative_error = 0.0;
  Eigen::Index worst_coordinate = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// Central differences per coordinate; error = |a - n| / max(1e-8, |a| + |n|).
/// Throws OracleError if any evaluation is non-finite.
GradcheckReport gradcheck_report(const Objective& f, const Eigen::VectorXd& params, double eps);
double gradcheck(const Objective& f, const Eigen::VectorXd& params, double eps);

}  // namespace metdrive::losses
