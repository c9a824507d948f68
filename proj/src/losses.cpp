#include "metdrive/losses.hpp"

#include <atomic>
#include <cmath>
#include <string>

namespace metdrive::losses {

namespace {

std::atomic<std::uint64_t> g_tg_calls{0};

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ValidationError(std::string(what) + ": trajectory length mismatch (" + std::to_string(a) +
                          " vs " + std::to_string(b) + ")");
  }
}

}  // namespace

void validate_weights(const LossWeights& w, bool temporal_guidance_enabled) {
  if (w.alpha < 0.0 || w.beta < 0.0 || w.lambda_tg < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (temporal_guidance_enabled && !(w.alpha + w.beta > 0.0)) {
    throw ConfigError("alpha + beta must be positive when temporal guidance is enabled");
  }
}

double temporal_guidance_loss(const Trajectory& y_first, const Trajectory& y_second,
                              const Trajectory& y_full, const LossWeights& w) {
  ++g_tg_calls;
  check_lengths(y_first.size(), y_full.size(), "temporal_guidance_loss");
  check_lengths(y_second.size(), y_full.size(), "temporal_guidance_loss");
  const std::size_t k = y_full.size();
  if (k % 2 != 0) throw ValidationError("temporal_guidance_loss: K must be even");
  double first = 0.0;
  double second = 0.0;
  for (std::size_t i = 0; i < k / 2; ++i) first += (y_first.points[i] - y_full.points[i]).squaredNorm();
  for (std::size_t i = k / 2; i < k; ++i) second += (y_second.points[i] - y_full.points[i]).squaredNorm();
  return w.alpha * first + w.beta * second;
}

double imitation_loss(const Trajectory& pred, const Trajectory& gt) {
  check_lengths(pred.size(), gt.size(), "imitation_loss");
  if (gt.size() == 0) throw ValidationError("imitation_loss: empty trajectory");
  double acc = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) acc += (pred.points[i] - gt.points[i]).lpNorm<1>();
  return acc / static_cast<double>(gt.size());
}

double total_loss(const Trajectory& pred_full, const Trajectory& pred_first,
                  const Trajectory& pred_second, const Trajectory& gt, const LossWeights& w) {
  const double il = imitation_loss(pred_full, gt);
  if (w.lambda_tg == 0.0) return il;
  return il + w.lambda_tg * temporal_guidance_loss(pred_first, pred_second, pred_full, w);
}

Var temporal_guidance_loss(std::span<const Var> y_first, std::span<const Var> y_second,
                           std::span<const Var> y_full, const LossWeights& w) {
  ++g_tg_calls;
  check_lengths(y_first.size(), y_full.size(), "temporal_guidance_loss");
  check_lengths(y_second.size(), y_full.size(), "temporal_guidance_loss");
  const std::size_t k = y_full.size();
  if (k == 0 || k % 2 != 0) throw ValidationError("temporal_guidance_loss: K must be even");
  const double batch = static_cast<double>(y_full.front().rows());
  std::vector<Var> terms;
  terms.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const Var& other = i < k / 2 ? y_first[i] : y_second[i];
    const double weight = (i < k / 2 ? w.alpha : w.beta) / batch;
    const Var d = ad::sub(other, y_full[i]);
    terms.push_back(ad::scale(ad::sum(ad::hadamard(d, d)), weight));
  }
  return ad::sum(ad::vconcat(terms));
}

Var imitation_loss(std::span<const Var> pred, std::span<const Mat> gt) {
  check_lengths(pred.size(), gt.size(), "imitation_loss");
  if (pred.empty()) throw ValidationError("imitation_loss: empty trajectory");
  ad::Tape& tape = *pred.front().tape();
  const double norm = static_cast<double>(pred.size()) * static_cast<double>(pred.front().rows());
  std::vector<Var> terms;
  terms.reserve(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    terms.push_back(ad::sum(ad::abs(ad::sub(pred[i], tape.constant(gt[i])))));
  }
  return ad::scale(ad::sum(ad::vconcat(terms)), 1.0 / norm);
}

std::uint64_t temporal_guidance_invocations() { return g_tg_calls.load(); }

double compensated_mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  double comp = 0.0;
  for (double v : values) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }
  return (sum + comp) / static_cast<double>(values.size());
}

GradcheckReport gradcheck_report(const Objective& f, const Eigen::VectorXd& params, double eps) {
  Eigen::VectorXd analytic(params.size());
  const double f0 = f(params, &analytic);
  if (!std::isfinite(f0) || !analytic.allFinite()) {
    throw OracleError("gradcheck: objective or analytic gradient is not finite");
  }
  GradcheckReport report;
  Eigen::VectorXd probe = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    // Five-point central stencil: truncation error O(eps^4), so eps can stay
    // large enough that roundoff does not swamp near-zero partials.
    const auto at = [&](double offset) {
      probe(i) = params(i) + offset;
      const double v = f(probe, nullptr);
      if (!std::isfinite(v)) {
        throw OracleError("gradcheck: objective not finite at coordinate " + std::to_string(i));
      }
      return v;
    };
    const double d1 = at(eps) - at(-eps);
    const double d2 = at(2.0 * eps) - at(-2.0 * eps);
    probe(i) = params(i);
    const double numeric = (8.0 * d1 - d2) / (12.0 * eps);
    const double err = std::abs(analytic(i) - numeric) /
                       std::max(1e-8, std::abs(analytic(i)) + std::abs(numeric));
    if (err > report.max_relative_error || report.worst_coordinate < 0) {
      report.max_relative_error = err;
      report.worst_coordinate = i;
      report.analytic_at_worst = analytic(i);
      report.numeric_at_worst = numeric;
    }
  }
  return report;
}

double gradcheck(const Objective& f, const Eigen::VectorXd& params, double eps) {
  return gradcheck_report(f, params, eps).max_relative_error;
}

}  // namespace metdrive::losses
