#include <gtest/gtest.h>

#include <cmath>

#include "metdrive/autodiff.hpp"
#include "metdrive/nn.hpp"
#include "support.hpp"

namespace ad = metdrive::ad;
using testing_support::op_gradcheck;
using testing_support::random_mat;
using ad::Index;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

constexpr double kTol = 1e-6;

class OpGradient : public ::testing::Test {
 protected:
  std::mt19937_64 rng{42};
};

TEST_F(OpGradient, MatmulVariants) {
  EXPECT_LT(op_gradcheck({random_mat(3, 4, rng), random_mat(4, 5, rng)},
                         [](Tape&, const std::vector<Var>& v) { return ad::matmul(v[0], v[1]); }),
            kTol);
  EXPECT_LT(op_gradcheck({random_mat(3, 4, rng), random_mat(5, 4, rng)},
                         [](Tape&, const std::vector<Var>& v) { return ad::matmul_nt(v[0], v[1]); }),
            kTol);
}

TEST_F(OpGradient, ElementwiseArithmetic) {
  const Mat a = random_mat(3, 4, rng), b = random_mat(3, 4, rng), row = random_mat(1, 4, rng);
  EXPECT_LT(op_gradcheck({a, b}, [](Tape&, const std::vector<Var>& v) { return ad::add(v[0], v[1]); }), kTol);
  EXPECT_LT(op_gradcheck({a, b}, [](Tape&, const std::vector<Var>& v) { return ad::sub(v[0], v[1]); }), kTol);
  EXPECT_LT(op_gradcheck({a, b}, [](Tape&, const std::vector<Var>& v) { return ad::hadamard(v[0], v[1]); }), kTol);
  EXPECT_LT(op_gradcheck({a, row}, [](Tape&, const std::vector<Var>& v) { return ad::add_rowvec(v[0], v[1]); }),
            kTol);
  EXPECT_LT(op_gradcheck({a}, [](Tape&, const std::vector<Var>& v) { return ad::scale(v[0], -2.5); }), kTol);
  EXPECT_LT(op_gradcheck({a}, [](Tape&, const std::vector<Var>& v) { return ad::one_minus(v[0]); }), kTol);
  EXPECT_LT(op_gradcheck({a}, [](Tape&, const std::vector<Var>& v) { return ad::sum(v[0]); }), kTol);
}

TEST_F(OpGradient, Nonlinearities) {
  const Mat a = random_mat(4, 3, rng, -2.0, 2.0);
  EXPECT_LT(op_gradcheck({a}, [](Tape&, const std::vector<Var>& v) { return ad::silu(v[0]); }), kTol);
  EXPECT_LT(op_gradcheck({a}, [](Tape&, const std::vector<Var>& v) { return ad::sigmoid(v[0]); }), kTol);
  EXPECT_LT(op_gradcheck({a}, [](Tape&, const std::vector<Var>& v) { return ad::tanh(v[0]); }), kTol);
  // keep away from the kink of |x|
  Mat b = random_mat(4, 3, rng, 0.2, 1.0);
  for (Index i = 0; i < b.size(); i += 2) b.data()[i] = -b.data()[i];
  EXPECT_LT(op_gradcheck({b}, [](Tape&, const std::vector<Var>& v) { return ad::abs(v[0]); }), kTol);
}

TEST_F(OpGradient, LayerNorm) {
  EXPECT_LT(op_gradcheck({random_mat(5, 6, rng), random_mat(1, 6, rng), random_mat(1, 6, rng)},
                         [](Tape&, const std::vector<Var>& v) { return ad::layer_norm(v[0], v[1], v[2]); }),
            kTol);
}

TEST_F(OpGradient, Reshaping) {
  const Mat a = random_mat(6, 4, rng), b = random_mat(6, 2, rng), c = random_mat(3, 4, rng);
  EXPECT_LT(op_gradcheck({a}, [](Tape&, const std::vector<Var>& v) { return ad::gather_rows(v[0], {5, 0, 0, 3}); }),
            kTol);
  EXPECT_LT(op_gradcheck({a}, [](Tape&, const std::vector<Var>& v) { return ad::slice_rows(v[0], 2, 3); }), kTol);
  EXPECT_LT(op_gradcheck({a}, [](Tape&, const std::vector<Var>& v) { return ad::slice_cols(v[0], 1, 2); }), kTol);
  EXPECT_LT(op_gradcheck({a, b}, [](Tape&, const std::vector<Var>& v) { return ad::hconcat(v); }), kTol);
  EXPECT_LT(op_gradcheck({a, c}, [](Tape&, const std::vector<Var>& v) { return ad::vconcat(v); }), kTol);
  EXPECT_LT(op_gradcheck({a}, [](Tape&, const std::vector<Var>& v) { return ad::group_mean_rows(v[0], 3); }), kTol);
}

TEST_F(OpGradient, Im2colAndAttention) {
  EXPECT_LT(op_gradcheck({random_mat(2 * 5 * 4, 3, rng)},
                         [](Tape&, const std::vector<Var>& v) { return ad::im2col(v[0], 2, 5, 4, 3, 3, 2, 1); }),
            kTol);
  EXPECT_LT(op_gradcheck({random_mat(2 * 6, 2, rng)},
                         [](Tape&, const std::vector<Var>& v) { return ad::im2col_1d(v[0], 2, 6, 2, 3); }),
            kTol);
  EXPECT_LT(op_gradcheck({random_mat(2 * 3, 4, rng), random_mat(2 * 5, 4, rng), random_mat(2 * 5, 3, rng)},
                         [](Tape&, const std::vector<Var>& v) {
                           return ad::grouped_attention(v[0], v[1], v[2], 2);
                         }),
            kTol);
}

TEST(Autodiff, Im2colMatchesDirectConvolution) {
  std::mt19937_64 rng(7);
  const Index n = 2, h = 5, w = 6, c = 2, k = 3, stride = 2, pad = 1, out_c = 3;
  const Mat x = random_mat(n * h * w, c, rng);
  const Mat kernel = random_mat(k * k * c, out_c, rng);
  Tape tape(false);
  const Mat y = ad::matmul(ad::im2col(tape.constant(x), n, h, w, c, k, stride, pad), tape.constant(kernel)).value();
  const Index ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
  ASSERT_EQ(y.rows(), n * ho * wo);
  for (Index img = 0; img < n; ++img) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        for (Index o = 0; o < out_c; ++o) {
          double acc = 0.0;
          for (Index ky = 0; ky < k; ++ky) {
            for (Index kx = 0; kx < k; ++kx) {
              const Index iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              for (Index ch = 0; ch < c; ++ch) {
                acc += x(img * h * w + iy * w + ix, ch) * kernel((ky * k + kx) * c + ch, o);
              }
            }
          }
          EXPECT_NEAR(y(img * ho * wo + oy * wo + ox, o), acc, 1e-12);
        }
      }
    }
  }
}

TEST(Autodiff, GroupedAttentionMatchesPerGroupSoftmax) {
  std::mt19937_64 rng(8);
  const Mat q = random_mat(4, 3, rng), k = random_mat(6, 3, rng), v = random_mat(6, 2, rng);
  Tape tape(false);
  Mat weights;
  const Mat out = ad::grouped_attention(tape.constant(q), tape.constant(k), tape.constant(v), 2, &weights).value();
  for (Index g = 0; g < 2; ++g) {
    for (Index i = 0; i < 2; ++i) {
      std::vector<double> s(3);
      double mx = -1e300;
      for (Index j = 0; j < 3; ++j) {
        s[static_cast<std::size_t>(j)] = q.row(g * 2 + i).dot(k.row(g * 3 + j)) / std::sqrt(3.0);
        mx = std::max(mx, s[static_cast<std::size_t>(j)]);
      }
      double z = 0.0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      Eigen::RowVectorXd expect = Eigen::RowVectorXd::Zero(2);
      for (Index j = 0; j < 3; ++j) expect += (s[static_cast<std::size_t>(j)] / z) * v.row(g * 3 + j);
      EXPECT_NEAR((out.row(g * 2 + i) - expect).norm(), 0.0, 1e-12);
      EXPECT_NEAR(weights.row(g * 2 + i).sum(), 1.0, 1e-12);
    }
  }
}

TEST(Autodiff, SoftmaxIsStableForLargeScores) {
  Mat s(1, 3);
  s << 1000.0, 1001.0, 999.0;
  const Mat p = ad::softmax_rows(s);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_GT(p(0, 1), p(0, 0));
}

TEST(Autodiff, LayerNormMatchesScalarFormula) {
  std::mt19937_64 rng(9);
  const Mat x = random_mat(3, 5, rng), g = random_mat(1, 5, rng), b = random_mat(1, 5, rng);
  Tape tape(false);
  const Mat y = ad::layer_norm(tape.constant(x), tape.constant(g), tape.constant(b)).value();
  for (Index r = 0; r < 3; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    for (Index c = 0; c < 5; ++c) {
      EXPECT_NEAR(y(r, c), (x(r, c) - mean) / std::sqrt(var + 1e-5) * g(0, c) + b(0, c), 1e-12);
    }
  }
}

TEST(Autodiff, GradientsAccumulateAcrossUses) {
  metdrive::nn::ParameterStore store;
  auto& p = store.add("p", Mat::Constant(1, 1, 3.0));
  Tape tape;
  const Var x = tape.param(p);
  const Var y = ad::add(ad::hadamard(x, x), x);  // x^2 + x
  tape.backward(y);
  EXPECT_DOUBLE_EQ(p.grad()(0, 0), 7.0);
  Tape again;
  again.backward(ad::scale(again.param(p), 2.0));
  EXPECT_DOUBLE_EQ(p.grad()(0, 0), 9.0);
  store.zero_grad();
  EXPECT_DOUBLE_EQ(p.grad()(0, 0), 0.0);
}

TEST(Autodiff, ValueOnlyTapeKeepsNoHistory) {
  metdrive::nn::ParameterStore store;
  auto& p = store.add("p", Mat::Ones(2, 2));
  Tape tape(false);
  const Var y = ad::sum(ad::matmul(tape.param(p), tape.param(p)));
  EXPECT_DOUBLE_EQ(y.scalar(), 8.0);
  EXPECT_FALSE(tape.recording());
}

TEST(Autodiff, ShapeMismatchThrows) {
  Tape tape;
  EXPECT_THROW(ad::matmul(tape.constant(Mat::Ones(2, 3)), tape.constant(Mat::Ones(2, 3))), std::invalid_argument);
  EXPECT_THROW(ad::add(tape.constant(Mat::Ones(2, 3)), tape.constant(Mat::Ones(3, 2))), std::invalid_argument);
}

TEST(ParameterStore, FlattenAssignRoundTrip) {
  metdrive::nn::ParameterStore store;
  std::mt19937_64 rng(1);
  store.add("a", random_mat(2, 3, rng));
  store.add("b", random_mat(1, 4, rng));
  EXPECT_EQ(store.scalar_count(), 10);
  Eigen::VectorXd v = store.flatten_values();
  v *= 2.0;
  store.assign_values(v);
  EXPECT_EQ(store.flatten_values(), v);
  EXPECT_THROW(store.assign_values(Eigen::VectorXd::Zero(3)), std::invalid_argument);
  EXPECT_NE(store.find("b"), nullptr);
  EXPECT_EQ(store.find("missing"), nullptr);
}

}  // namespace
