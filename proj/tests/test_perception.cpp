#include <gtest/gtest.h>

#include "metdrive/perception.hpp"
#include "support.hpp"

using namespace metdrive;
using namespace metdrive::perception;
using testing_support::random_mat;
using testing_support::store_gradcheck;

namespace {

ObservationFrame random_frame(const PerceptionConfig& c, std::mt19937_64& rng, double t = 0.0) {
  return {random_mat(c.camera_height, c.camera_width, rng, 0.0, 1.0),
          random_mat(c.bev_height, c.bev_width, rng, 0.0, 1.0), t};
}

PerceptionConfig tiny() {
  PerceptionConfig c;
  c.camera_height = c.camera_width = c.bev_height = c.bev_width = 8;
  c.channels = {3, 4, 6};
  c.output_dim = 8;
  return c;
}

class PerceptionTest : public ::testing::Test {
 protected:
  std::mt19937_64 rng{21};
  nn::ParameterStore store;
  PerceptionConfig config;
};

TEST_F(PerceptionTest, FrameShapeAndRole) {
  PerceptionEncoder enc(store, config, rng);
  const FeatureBlock f = enc.encode_frame(random_frame(config, rng));
  EXPECT_EQ(f.time(), 1);
  EXPECT_EQ(f.channels(), 64);
  EXPECT_EQ(f.role, FeatureRole::geometric);
  EXPECT_TRUE(f.data.allFinite());
}

TEST_F(PerceptionTest, ZeroFrameGivesZeroDescriptors) {
  PerceptionEncoder enc(store, config, rng);
  for (auto* p : store.all()) {
    if (p->name().ends_with(".bias")) p->value().setZero();
  }
  const ObservationFrame zero{Mat::Zero(16, 16), Mat::Zero(16, 16), 0.0};
  const auto d = enc.inspect(zero);
  EXPECT_EQ(d.camera_tokens.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(d.bev_tokens.cwiseAbs().maxCoeff(), 0.0);
}

TEST_F(PerceptionTest, FusionAttentionRowsSumToOne) {
  PerceptionEncoder enc(store, config, rng);
  const auto d = enc.inspect(random_frame(config, rng));
  ASSERT_GT(d.camera_to_bev.rows(), 1);
  for (Index r = 0; r < d.camera_to_bev.rows(); ++r) EXPECT_NEAR(d.camera_to_bev.row(r).sum(), 1.0, 1e-6);
  for (Index r = 0; r < d.bev_to_camera.rows(); ++r) EXPECT_NEAR(d.bev_to_camera.row(r).sum(), 1.0, 1e-6);
}

TEST_F(PerceptionTest, SequenceStacksPerFrameEncodings) {
  PerceptionEncoder enc(store, config, rng);
  std::vector<ObservationFrame> frames;
  for (int t = 0; t < 8; ++t) frames.push_back(random_frame(config, rng, 0.1 * t));
  const FeatureBlock seq = enc.encode_sequence(frames, 8);
  EXPECT_EQ(seq.time(), 8);
  EXPECT_EQ(seq.channels(), 64);
  for (Index t = 0; t < 8; ++t) {
    const FeatureBlock single = enc.encode_frame(frames[static_cast<std::size_t>(t)]);
    EXPECT_LT((seq.data.row(t) - single.data.row(0)).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_THROW(enc.encode_sequence(std::span(frames).first(7), 8), ValidationError);
}

TEST_F(PerceptionTest, DuplicatedFramesGiveIdenticalRows) {
  PerceptionEncoder enc(store, config, rng);
  const std::vector<ObservationFrame> frames(8, random_frame(config, rng));
  const FeatureBlock seq = enc.encode_sequence(frames, 8);
  for (Index t = 1; t < 8; ++t) EXPECT_EQ(seq.data.row(t), seq.data.row(0));
  EXPECT_EQ(enc.encode_frame(frames[0]).data, enc.encode_frame(frames[0]).data);
}

TEST_F(PerceptionTest, RejectsWrongResolutionAndRange) {
  PerceptionEncoder enc(store, config, rng);
  ObservationFrame f = random_frame(config, rng);
  f.camera = Mat::Zero(8, 16);
  EXPECT_THROW(enc.encode_frame(f), ConfigError);
  f = random_frame(config, rng);
  f.bev(2, 2) = 1.5;
  EXPECT_THROW(enc.encode_frame(f), ValidationError);
}

TEST_F(PerceptionTest, GradcheckOnEightByEightRasters) {
  const PerceptionConfig c = tiny();
  PerceptionEncoder enc(store, c, rng);
  const std::vector<ObservationFrame> frames{random_frame(c, rng), random_frame(c, rng)};
  const std::vector<const ObservationFrame*> ptrs{&frames[0], &frames[1]};
  const Mat w = random_mat(2, 8, rng);
  EXPECT_LT(store_gradcheck(store, [&](Tape& t) { return ad::sum(ad::hadamard(enc.forward(t, ptrs), t.constant(w))); }),
            1e-4);
}

TEST_F(PerceptionTest, GradcheckWithMultipleTokens) {
  PerceptionConfig c = tiny();
  c.camera_height = c.camera_width = c.bev_height = c.bev_width = 16;
  PerceptionEncoder enc(store, c, rng);
  const ObservationFrame frame = random_frame(c, rng);
  const ObservationFrame* ptr = &frame;
  const Mat w = random_mat(1, 8, rng);
  EXPECT_LT(store_gradcheck(store, [&](Tape& t) {
              return ad::sum(ad::hadamard(enc.forward(t, std::span(&ptr, 1)), t.constant(w)));
            }),
            1e-4);
}

}  // namespace
