#pragma once

#include <functional>
#include <random>
#include <vector>

#include "metdrive/autodiff.hpp"
#include "metdrive/losses.hpp"
#include "metdrive/nn.hpp"

namespace testing_support {

using metdrive::ad::Index;
using metdrive::ad::Mat;
using metdrive::ad::Tape;
using metdrive::ad::Var;

inline Mat random_mat(Index rows, Index cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  return Mat(Mat::NullaryExpr(rows, cols, [&] { return u(rng); }));
}

/// Max relative gradcheck error of a scalar loss built from every parameter in `store`.
inline double store_gradcheck(metdrive::nn::ParameterStore& store,
                              const std::function<Var(Tape&)>& loss, double eps = 1e-3) {
  const Eigen::VectorXd start = store.flatten_values();
  const metdrive::losses::Objective f = [&](const Eigen::VectorXd& p, Eigen::VectorXd* g) {
    store.assign_values(p);
    Tape tape(g != nullptr);
    const Var l = loss(tape);
    if (g != nullptr) {
      store.zero_grad();
      tape.backward(l);
      *g = store.flatten_grads();
    }
    return l.scalar();
  };
  const double err = metdrive::losses::gradcheck(f, start, eps);
  store.assign_values(start);
  return err;
}

/// Gradcheck of an op with respect to all of its inputs. The op output is
/// contracted with a fixed random matrix so that every output entry matters.
inline double op_gradcheck(const std::vector<Mat>& inputs,
                           const std::function<Var(Tape&, const std::vector<Var>&)>& op,
                           std::uint64_t seed = 3) {
  metdrive::nn::ParameterStore store;
  std::vector<metdrive::ad::Parameter*> params;
  for (std::size_t i = 0; i < inputs.size(); ++i) params.push_back(&store.add("in" + std::to_string(i), inputs[i]));
  std::mt19937_64 rng(seed);
  Mat weights;
  {
    Tape probe(false);
    std::vector<Var> vars;
    for (auto* p : params) vars.push_back(probe.param(*p));
    const Var out = op(probe, vars);
    weights = random_mat(out.rows(), out.cols(), rng);
  }
  return store_gradcheck(store, [&](Tape& tape) {
    std::vector<Var> vars;
    for (auto* p : params) vars.push_back(tape.param(*p));
    return metdrive::ad::sum(metdrive::ad::hadamard(op(tape, vars), tape.constant(weights)));
  });
}

}  // namespace testing_support
