#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "metdrive/ego_temporal.hpp"
#include "support.hpp"

using namespace metdrive;
using namespace metdrive::temporal;
using testing_support::random_mat;
using testing_support::store_gradcheck;

namespace {

EgoStateSequence constant_sequence(std::size_t n, double theta, double steer, double throttle, Vec2 delta) {
  EgoStateSequence s;
  for (std::size_t i = 0; i < n; ++i) {
    s.theta.push_back(theta);
    s.steer.push_back(steer);
    s.throttle.push_back(throttle);
    s.dx.push_back(delta.x());
    s.dy.push_back(delta.y());
    s.timestamps.push_back(0.1 * static_cast<double>(i));
  }
  return s;
}

EgoStateSequence random_sequence(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  EgoStateSequence s;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 3.0 * u(rng);
    s.theta.push_back(u(rng));
    s.steer.push_back(u(rng));
    s.throttle.push_back(0.5 + 0.5 * u(rng));
    s.dx.push_back(std::cos(a));
    s.dy.push_back(std::sin(a));
    s.timestamps.push_back(0.1 * static_cast<double>(i));
  }
  return s;
}

TemporalConfig small_config() {
  TemporalConfig c;
  c.length = 4;
  c.embed_dim = 8;
  c.output_dim = 8;
  c.heads = 2;
  return c;
}

TEST(Decompose, ConstantHeadingZero) {
  const auto d = decompose(constant_sequence(8, 0.0, 0.5, 0.2, {1.0, 0.0}));
  for (std::size_t t = 0; t < 8; ++t) {
    EXPECT_EQ(d.horizontal[0][t], 1.0);
    EXPECT_EQ(d.horizontal[1][t], 0.5);
    EXPECT_EQ(d.horizontal[2][t], 1.0);
    EXPECT_EQ(d.vertical[0][t], 0.0);
    EXPECT_EQ(d.vertical[1][t], 0.2);
    EXPECT_EQ(d.vertical[2][t], 0.0);
  }
}

TEST(Decompose, QuarterAndEighthTurns) {
  const auto q = decompose(constant_sequence(2, std::numbers::pi / 2, 0.0, 0.0, {0.0, 1.0}));
  EXPECT_NEAR(q.horizontal[0][0], 0.0, 1e-15);
  EXPECT_NEAR(q.vertical[0][0], 1.0, 1e-15);
  const auto e = decompose(constant_sequence(2, std::numbers::pi / 4, 0.0, 0.0, {0.0, 1.0}));
  EXPECT_NEAR(e.horizontal[0][1], 0.70711, 1e-5);
  EXPECT_NEAR(e.vertical[0][1], 0.70711, 1e-5);
}

TEST(Decompose, PythagoreanIdentityAndLengths) {
  std::mt19937_64 rng(2);
  const auto seq = random_sequence(10, rng);
  const auto d = decompose(seq);
  for (const auto& s : d.horizontal) EXPECT_EQ(s.size(), 10u);
  for (const auto& s : d.vertical) EXPECT_EQ(s.size(), 10u);
  for (std::size_t t = 0; t < 10; ++t) {
    EXPECT_NEAR(d.horizontal[0][t] * d.horizontal[0][t] + d.vertical[0][t] * d.vertical[0][t], 1.0, 1e-12);
  }
}

TEST(PositionalEmbedding, FirstRowAndScalarOracle) {
  const Mat pe = positional_embedding(64, 32);
  for (Index c = 0; c < 32; ++c) EXPECT_EQ(pe(0, c), c % 2 == 0 ? 0.0 : 1.0);
  for (Index p = 0; p < 64; ++p) {
    for (Index i = 0; i < 16; ++i) {
      const double angle = static_cast<double>(p) / std::pow(10000.0, 2.0 * static_cast<double>(i) / 32.0);
      EXPECT_NEAR(pe(p, 2 * i), std::sin(angle), 1e-12);
      EXPECT_NEAR(pe(p, 2 * i + 1), std::cos(angle), 1e-12);
    }
  }
}

TEST(PositionalEmbedding, ReferenceValuesAtD64) {
  const Mat pe = positional_embedding(2, 64);
  EXPECT_NEAR(pe(1, 0), 0.8414710, 1e-7);
  EXPECT_NEAR(pe(1, 2), std::sin(0.7498942), 1e-7);
}

TEST(PositionalEmbedding, RowsAreUnique) {
  const Index n = 10000;
  const Mat pe = positional_embedding(n, 64);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return pe(a, 0) < pe(b, 0); });
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (std::size_t j = i + 1; j < order.size() && pe(order[j], 0) - pe(order[i], 0) <= 1e-9; ++j) {
      EXPECT_GT((pe.row(order[i]) - pe.row(order[j])).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(PositionalEmbedding, RejectsOddDimension) {
  EXPECT_THROW(positional_embedding(8, 7), ConfigError);
  EXPECT_THROW(positional_embedding(0, 8), ConfigError);
}

TEST(TokenEmbedding, ZeroStreamZeroBiasGivesZero) {
  std::mt19937_64 rng(1);
  nn::ParameterStore store;
  TokenEmbedding emb(store, "tok", 3, 8, rng);
  const std::vector<double> zeros(8, 0.0);
  EXPECT_EQ(token_embedding(zeros, emb).cwiseAbs().maxCoeff(), 0.0);
}

TEST(TokenEmbedding, OneByOneKernelWithBasisWeightsCopiesStream) {
  std::mt19937_64 rng(1);
  nn::ParameterStore store;
  TokenEmbedding emb(store, "tok", 1, 4, rng);
  const std::vector<double> s{0.3, -1.0, 2.0, 0.5, 0.25};
  for (Index c = 0; c < 4; ++c) {
    emb.weight().value().setZero();
    emb.weight().value()(0, c) = 1.0;
    const Mat out = token_embedding(s, emb);
    for (Index t = 0; t < 5; ++t) EXPECT_EQ(out(t, c), s[static_cast<std::size_t>(t)]);
  }
}

TEST(TokenEmbedding, MatchesSlidingDotProduct) {
  std::mt19937_64 rng(4);
  nn::ParameterStore store;
  TokenEmbedding emb(store, "tok", 3, 6, rng);
  emb.bias().value() = random_mat(1, 6, rng);
  std::vector<double> s(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : s) v = u(rng);
  const Mat out = token_embedding(s, emb);
  ASSERT_EQ(out.rows(), 9);
  for (int t = 0; t < 9; ++t) {
    for (Index c = 0; c < 6; ++c) {
      double acc = emb.bias().value()(0, c);
      for (int j = 0; j < 3; ++j) {
        const int src = t + j - 1;
        if (src >= 0 && src < 9) acc += emb.weight().value()(j, c) * s[static_cast<std::size_t>(src)];
      }
      EXPECT_NEAR(out(t, c), acc, 1e-10);
    }
  }
}

TEST(TokenEmbedding, RejectsStreamShorterThanKernel) {
  std::mt19937_64 rng(1);
  nn::ParameterStore store;
  TokenEmbedding emb(store, "tok", 5, 4, rng);
  const std::vector<double> s(3, 1.0);
  EXPECT_THROW(token_embedding(s, emb), ConfigError);
}

class TemporalEncoderTest : public ::testing::Test {
 protected:
  std::mt19937_64 rng{11};
  nn::ParameterStore store;
};

TEST_F(TemporalEncoderTest, EmbedOfZeroStreamWithZeroWeightsIsPositional) {
  TemporalConfig c;
  TemporalEncoder enc(store, c, rng);
  for (auto* p : store.all()) {
    if (p->name().find("token") != std::string::npos) p->value().setZero();
  }
  const std::vector<Stream> zeros(3, Stream(8, 0.0));
  const TokenBlock block = enc.embed(zeros, 0, Orientation::horizontal);
  ASSERT_EQ(block.streams.size(), 3u);
  for (const auto& s : block.streams) {
    EXPECT_EQ(s.rows(), 8);
    EXPECT_EQ(s.cols(), 32);
    EXPECT_EQ(s, positional_embedding(8, 32));
  }
}

TEST_F(TemporalEncoderTest, EmbedIsPositionalPlusTokenAndLinearInWeights) {
  TemporalConfig c;
  TemporalEncoder enc(store, c, rng);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Stream> streams(3, Stream(8));
  for (auto& s : streams) {
    for (auto& v : s) v = u(rng);
  }
  const std::vector<Stream> zeros(3, Stream(8, 0.0));
  const TokenBlock a = enc.embed(streams, 1, Orientation::vertical);
  const TokenBlock z = enc.embed(zeros, 1, Orientation::vertical);
  std::vector<Mat> first;
  for (int s = 0; s < 3; ++s) {
    auto* w = store.find("temporal.block1.token" + std::to_string(s) + ".weight");
    ASSERT_NE(w, nullptr);
    Mat manual = Mat::Zero(8, 32);
    for (int t = 0; t < 8; ++t) {
      for (int j = 0; j < 3; ++j) {
        const int src = t + j - 1;
        if (src >= 0 && src < 8) manual.row(t) += streams[static_cast<std::size_t>(s)][static_cast<std::size_t>(src)] * w->value().row(j);
      }
    }
    EXPECT_LT((a.streams[static_cast<std::size_t>(s)] - z.streams[static_cast<std::size_t>(s)] - manual).cwiseAbs().maxCoeff(),
              1e-12);
    first.push_back(a.streams[static_cast<std::size_t>(s)] - positional_embedding(8, 32));
    w->value() *= 2.0;
  }
  const TokenBlock doubled = enc.embed(streams, 1, Orientation::vertical);
  for (int s = 0; s < 3; ++s) {
    EXPECT_LT((doubled.streams[static_cast<std::size_t>(s)] - positional_embedding(8, 32) -
               2.0 * first[static_cast<std::size_t>(s)]).cwiseAbs().maxCoeff(),
              1e-12);
  }
}

TEST_F(TemporalEncoderTest, EncodeShapeAndFiniteness) {
  TemporalConfig c;
  TemporalEncoder enc(store, c, rng);
  const auto seq = random_sequence(8, rng);
  const auto d = decompose(seq);
  const FeatureBlock f = enc.encode(enc.embed(d.horizontal, 0, Orientation::horizontal),
                                    enc.embed(d.vertical, 1, Orientation::vertical));
  EXPECT_EQ(f.time(), 8);
  EXPECT_EQ(f.channels(), 64);
  EXPECT_EQ(f.role, FeatureRole::time_series);
  EXPECT_TRUE(f.data.allFinite());

  EgoStateSequence big = seq;
  for (auto& v : big.theta) v *= 1e6;
  const EgoStateSequence* ptr = &big;
  Tape tape(false);
  EXPECT_TRUE(enc.forward(tape, std::span(&ptr, 1)).value().allFinite());
}

TEST_F(TemporalEncoderTest, BatchPathMatchesBlockPath) {
  TemporalConfig c;
  TemporalEncoder enc(store, c, rng);
  const auto seq = random_sequence(8, rng);
  const auto d = decompose(seq);
  const FeatureBlock f = enc.encode(enc.embed(d.horizontal, 0, Orientation::horizontal),
                                    enc.embed(d.vertical, 1, Orientation::vertical));
  const auto other = random_sequence(8, rng);
  const std::vector<const EgoStateSequence*> batch{&other, &seq};
  Tape tape(false);
  const Mat out = enc.forward(tape, batch).value();
  EXPECT_LT((out.bottomRows(8) - f.data).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(TemporalEncoderTest, PermutingTimeChangesOutput) {
  TemporalConfig c;
  TemporalEncoder enc(store, c, rng);
  const auto seq = random_sequence(8, rng);
  auto d = decompose(seq);
  const auto encode = [&](const Decomposition& x) {
    return enc.encode(enc.embed(x.horizontal, 0, Orientation::horizontal),
                      enc.embed(x.vertical, 1, Orientation::vertical)).data;
  };
  const Mat base = encode(d);
  const std::vector<std::size_t> perm{1, 0, 3, 2, 5, 4, 7, 6};
  Decomposition p = d;
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t t = 0; t < 8; ++t) {
      p.horizontal[s][t] = d.horizontal[s][perm[t]];
      p.vertical[s][t] = d.vertical[s][perm[t]];
    }
  }
  const Mat permuted = encode(p);
  Mat unpermuted(8, base.cols());
  for (std::size_t t = 0; t < 8; ++t) unpermuted.row(static_cast<Index>(perm[t])) = permuted.row(static_cast<Index>(t));
  EXPECT_GT((unpermuted - base).cwiseAbs().maxCoeff(), 1e-6);
}

TEST_F(TemporalEncoderTest, ShapeMismatchIsConfigError) {
  TemporalConfig c;
  TemporalEncoder enc(store, c, rng);
  TokenBlock h{{Mat::Zero(8, 32), Mat::Zero(8, 32), Mat::Zero(8, 32)}, Orientation::horizontal};
  TokenBlock v{{Mat::Zero(6, 32), Mat::Zero(6, 32), Mat::Zero(6, 32)}, Orientation::vertical};
  EXPECT_THROW(enc.encode(h, v), ConfigError);
}

TEST_F(TemporalEncoderTest, GradcheckSmallInstance) {
  TemporalEncoder enc(store, small_config(), rng);
  const auto a = random_sequence(4, rng), b = random_sequence(4, rng);
  const std::vector<const EgoStateSequence*> batch{&a, &b};
  const Mat w = random_mat(8, 8, rng);
  const double err = store_gradcheck(store, [&](Tape& t) {
    return ad::sum(ad::hadamard(enc.forward(t, batch), t.constant(w)));
  });
  EXPECT_LT(err, 1e-4);
}

TEST(AblationInputs, Layouts) {
  std::mt19937_64 rng(5);
  const auto seq = random_sequence(8, rng);
  const auto dec = ablation_inputs(InputMode::decomposed, seq);
  ASSERT_EQ(dec.size(), 2u);
  const auto d = decompose(seq);
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_EQ(dec[0].streams[s], d.horizontal[s]);
    EXPECT_EQ(dec[1].streams[s], d.vertical[s]);
  }

  const auto paired = ablation_inputs(InputMode::paired_undecomposed, seq);
  ASSERT_EQ(paired.size(), 1u);
  ASSERT_EQ(paired[0].streams.size(), 5u);
  EXPECT_EQ(paired[0].streams[0], seq.theta);
  EXPECT_EQ(paired[0].streams[1], seq.throttle);
  EXPECT_EQ(paired[0].streams[2], seq.steer);
  EXPECT_EQ(paired[0].streams[3], seq.dx);
  EXPECT_EQ(paired[0].streams[4], seq.dy);

  const auto raw = ablation_inputs(InputMode::raw_theta_u_psi, seq);
  ASSERT_EQ(raw.size(), 1u);
  ASSERT_EQ(raw[0].streams.size(), 3u);
  for (const auto& s : raw[0].streams) EXPECT_NE(s, d.horizontal[0]);
  EXPECT_EQ(stream_layout(InputMode::raw_theta_u_psi), std::vector<Index>{3});
}

TEST(AblationInputs, ModeNames) {
  for (auto m : {InputMode::decomposed, InputMode::paired_undecomposed, InputMode::raw_theta_u_psi}) {
    EXPECT_EQ(input_mode_from_string(to_string(m)), m);
  }
  EXPECT_THROW(input_mode_from_string("fourier"), ConfigError);
}

TEST(AblationInputs, EveryModeTrainsThroughTheEncoder) {
  for (auto m : {InputMode::paired_undecomposed, InputMode::raw_theta_u_psi}) {
    std::mt19937_64 rng(6);
    nn::ParameterStore store;
    TemporalConfig c = small_config();
    c.mode = m;
    TemporalEncoder enc(store, c, rng);
    const auto a = random_sequence(4, rng);
    const std::vector<const EgoStateSequence*> batch{&a};
    const Mat w = random_mat(4, 8, rng);
    EXPECT_LT(store_gradcheck(store, [&](Tape& t) { return ad::sum(ad::hadamard(enc.forward(t, batch), t.constant(w))); }),
              1e-4)
        << to_string(m);
  }
}

}  // namespace
