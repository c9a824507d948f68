#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "metdrive/dataset.hpp"
#include "metdrive/record_io.hpp"
#include "support.hpp"

using namespace metdrive;
using namespace metdrive::data;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("metdrive_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.max_difficulty = 3;
  return c;
}

}  // namespace

TEST(Windows, CountFormula) {
  const WindowConfig w{8, 8, 4};
  EXPECT_EQ(window_count(15, w), 0u);
  EXPECT_EQ(window_count(16, w), 1u);
  EXPECT_EQ(window_count(19, w), 1u);
  EXPECT_EQ(window_count(20, w), 2u);
  for (std::size_t steps = 0; steps < 80; ++steps) {
    for (int stride : {1, 3, 4}) {
      const WindowConfig ws{8, 6, stride};
      std::size_t brute = 0;
      for (std::size_t first = 0; first + 14 <= steps; first += static_cast<std::size_t>(stride)) ++brute;
      EXPECT_EQ(window_count(steps, ws), brute) << steps << " " << stride;
    }
  }
}

TEST(Windows, StraightRouteSamples) {
  const world::WorldConfig cfg;
  world::Scenario sc;
  sc.route = make_route({Vec2(0, 0), Vec2(40, 0), Vec2(80, 0)}, {8.0, 8.0});
  const EpisodeLog log = world::expert_drive(sc, cfg, 1, false);
  const WindowConfig w{8, 8, 4};
  const auto samples = samples_from_log(log, sc, cfg, w, 3);
  ASSERT_EQ(samples.size(), window_count(log.steps.size(), w));
  ASSERT_FALSE(samples.empty());
  for (const auto& s : samples) {
    EXPECT_EQ(s.route, 3u);
    ASSERT_EQ(s.gt.size(), 8u);
    EXPECT_LT(s.gt.points[0].norm(), 1e-9);
    for (std::size_t k = 1; k < 8; ++k) {
      EXPECT_GE(s.gt.points[k].x(), s.gt.points[k - 1].x());
      EXPECT_LT(std::abs(s.gt.points[k].y()), 0.1);
    }
    EXPECT_GT(s.target_point.x(), 0.0);
    EXPECT_NEAR(s.target_point.y(), 0.0, 1e-9);
    EXPECT_EQ(s.ego.length(), 8u);
    EXPECT_EQ(s.ego.theta.back(), 0.0);
    EXPECT_EQ(s.frames.size(), 8u);
    validate_sample(s, 8, 8);
  }
  // Controls in the history are those issued one step earlier.
  const auto& s1 = samples[1];
  const auto first = static_cast<std::size_t>(s1.step) - 7;
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(s1.ego.steer[i], log.steps[first + i - 1].steer);
    EXPECT_EQ(s1.ego.throttle[i], log.steps[first + i - 1].throttle);
    EXPECT_EQ(s1.ego.timestamps[i], log.steps[first + i].t);
  }
}

TEST(Windows, GroundTruthIsEgoFrameFuture) {
  const world::WorldConfig cfg;
  const world::Scenario sc = world::generate_scenario(21, 2, cfg);
  const EpisodeLog log = world::expert_drive(sc, cfg, 21);
  const auto samples = samples_from_log(log, sc, cfg, {8, 8, 4}, 0);
  ASSERT_GT(samples.size(), 2u);
  const Sample& s = samples[2];
  const auto cur = static_cast<std::size_t>(s.step);
  const Pose p = log.steps[cur].pose;
  for (std::size_t k = 0; k < 8; ++k) {
    const Pose q = log.steps[cur + k].pose;
    const double dx = q.x - p.x;
    const double dy = q.y - p.y;
    EXPECT_NEAR(s.gt.points[k].x(), std::cos(p.theta) * dx + std::sin(p.theta) * dy, 1e-9);
    EXPECT_NEAR(s.gt.points[k].y(), -std::sin(p.theta) * dx + std::cos(p.theta) * dy, 1e-9);
  }
}

TEST(Dataset, SampleCountAndDeterminism) {
  const ExperimentConfig c = small_config();
  const world::WorldConfig wcfg;
  const Dataset a = make_dataset(6, 5, c, wcfg);
  const Dataset b = make_dataset(6, 5, c, wcfg);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.routes, 6);

  ExperimentConfig seeded = c;
  seeded.seed = 5;
  std::size_t expected = 0;
  for (int i = 0; i < 6; ++i) {
    const world::Scenario sc = training_scenario(seeded, i, wcfg);
    EXPECT_EQ(sc.difficulty, i % 4);
    std::size_t steps = 0;
    for (const auto& s : a.samples) {
      if (s.route == static_cast<std::uint64_t>(i)) ++steps;
    }
    EXPECT_GT(steps, 0u);
    expected += steps;
  }
  EXPECT_EQ(expected, a.samples.size());
  EXPECT_NE(make_dataset(6, 6, c, wcfg).samples, a.samples);
}

TEST(Dataset, StreamsDoNotShareRoutes) {
  for (std::uint64_t i = 0; i < 100; ++i) {
    for (std::uint64_t j = 0; j < 100; ++j) {
      ASSERT_NE(route_seed(1, kTrainStream, i), route_seed(1, kEvalStream, j));
    }
  }
}

TEST(Dataset, WriteReadRoundTripAndByteStability) {
  const Dataset d = make_dataset(3, 2, small_config());
  const fs::path a = fresh_dir("ds_a");
  const fs::path b = fresh_dir("ds_b");
  write_dataset(a.string(), d);
  write_dataset(b.string(), d);
  const Dataset back = read_dataset(a.string());
  EXPECT_EQ(back.samples, d.samples);
  EXPECT_EQ(back.config, d.config);
  EXPECT_EQ(back.routes, d.routes);
  for (const auto& entry : fs::directory_iterator(a)) {
    EXPECT_EQ(slurp(entry.path()), slurp(b / entry.path().filename())) << entry.path();
  }
  // Overwriting in place leaves identical bytes.
  const std::string before = slurp(a / "shard-00000.jsonl");
  write_dataset(a.string(), d);
  EXPECT_EQ(slurp(a / "shard-00000.jsonl"), before);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, ReadErrorsNameThePath) {
  const fs::path dir = fresh_dir("ds_missing");
  try {
    read_dataset(dir.string());
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("meta.jsonl"), std::string::npos);
  }
  const Dataset d = make_dataset(1, 2, small_config());
  write_dataset(dir.string(), d);
  fs::remove(dir / "shard-00000.jsonl");
  EXPECT_THROW(read_dataset(dir.string()), IoError);
  fs::remove_all(dir);
}

TEST(Base64, KnownVectors) {
  const auto enc = [](const std::string& s) { return io::base64_encode({s.begin(), s.end()}); };
  EXPECT_EQ(enc(""), "");
  EXPECT_EQ(enc("f"), "Zg==");
  EXPECT_EQ(enc("fo"), "Zm8=");
  EXPECT_EQ(enc("foo"), "Zm9v");
  EXPECT_EQ(enc("foobar"), "Zm9vYmFy");
  const auto dec = io::base64_decode("Zm9vYg==");
  EXPECT_EQ(std::string(dec.begin(), dec.end()), "foob");
}

TEST(Base64, RoundTripAndErrors) {
  std::mt19937_64 rng(3);
  for (std::size_t n = 0; n < 40; ++n) {
    std::vector<unsigned char> bytes(n);
    for (auto& b : bytes) b = static_cast<unsigned char>(rng() & 0xff);
    EXPECT_EQ(io::base64_decode(io::base64_encode(bytes)), bytes);
  }
  EXPECT_THROW(io::base64_decode("Zm9"), ValidationError);
  EXPECT_THROW(io::base64_decode("Zm!v"), ValidationError);
}

TEST(RecordIo, MatrixRoundTripIsExact) {
  std::mt19937_64 rng(4);
  Mat m = testing_support::random_mat(3, 5, rng, -1e6, 1e6);
  m(0, 0) = -0.0;
  m(1, 1) = std::numeric_limits<double>::denorm_min();
  m(2, 2) = 1.0 / 3.0;
  const Mat back = io::decode_matrix(io::encode_matrix(m));
  ASSERT_EQ(back.rows(), 3);
  ASSERT_EQ(back.cols(), 5);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    EXPECT_EQ(std::memcmp(&m.data()[i], &back.data()[i], sizeof(double)), 0);
  }
  io::json bad = io::encode_matrix(m);
  bad["rows"] = 4;
  EXPECT_THROW(io::decode_matrix(bad), ValidationError);
}

TEST(RecordIo, DomainTypesRoundTrip) {
  const world::WorldConfig cfg;
  const world::Scenario sc = world::generate_scenario(8, 3, cfg);
  const EpisodeLog log = world::expert_drive(sc, cfg, 8);
  EXPECT_EQ(io::episode_from_json(io::to_json(log)), log);
  EXPECT_EQ(io::route_from_json(io::to_json(sc.route)), sc.route);
  const auto samples = samples_from_log(log, sc, cfg, {8, 8, 4}, 0);
  ASSERT_FALSE(samples.empty());
  EXPECT_EQ(io::sample_from_json(io::to_json(samples[0])), samples[0]);
  EXPECT_EQ(io::ego_from_json(io::to_json(samples[0].ego)), samples[0].ego);
  EXPECT_EQ(io::trajectory_from_json(io::to_json(samples[0].gt)), samples[0].gt);
  EXPECT_EQ(io::frame_from_json(io::to_json(samples[0].frames[3])), samples[0].frames[3]);

  // Text round trip through a record line.
  const std::string line = io::record_line(io::to_json(log));
  EXPECT_EQ(line.find('\n'), std::string::npos);
  EXPECT_EQ(io::episode_from_json(io::json::parse(line)), log);
}

TEST(RecordIo, JsonlVersionAndMalformedLines) {
  const fs::path dir = fresh_dir("jsonl");
  fs::create_directories(dir);
  const std::string path = (dir / "r.jsonl").string();
  io::write_jsonl(path, {{{"kind", "x"}, {"a", 1}}, {{"kind", "y"}}});
  const auto recs = io::read_jsonl(path);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0]["v"], 1);
  EXPECT_EQ(recs[1]["kind"], "y");

  {
    std::ofstream out(path);
    out << "{\"v\":1,\"kind\":\"x\"}\n{\"v\":2,\"kind\":\"x\"}\n";
  }
  try {
    io::read_jsonl(path);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(path), std::string::npos);
    EXPECT_NE(std::string(e.what()).find('2'), std::string::npos);
  }
  {
    std::ofstream out(path);
    out << "{\"v\":1}\nnot json\n";
  }
  EXPECT_THROW(io::read_jsonl(path), IoError);
  EXPECT_THROW(io::read_jsonl((dir / "absent.jsonl").string()), IoError);
  fs::remove_all(dir);
}
