#include "metdrive/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "metdrive/losses.hpp"
#include "metdrive/record_io.hpp"

namespace metdrive::training {

using ad::Index;
using ad::Tape;
using ad::Var;

void Adam::step(const std::vector<ad::Parameter*>& params) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(Mat::Zero(p->value().rows(), p->value().cols()));
      v_.push_back(Mat::Zero(p->value().rows(), p->value().cols()));
    }
  }
  if (m_.size() != params.size()) throw TrainingError("Adam: parameter set changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = *params[i];
    const Mat& g = p.grad();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    p.value().array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

BatchLoss batch_loss(Tape& tape, const MetDriveModel& model, std::span<const Sample* const> batch,
                     const losses::LossWeights& w, bool temporal_loss_on) {
  const bool guided = temporal_loss_on && w.lambda_tg != 0.0;
  const auto out = model.forward(tape, batch, guided);
  const auto n = static_cast<Index>(batch.size());
  std::vector<Mat> gt;
  for (Index k = 0; k < model.config().waypoints; ++k) {
    Mat g(n, 2);
    for (Index b = 0; b < n; ++b) {
      g.row(b) = batch[static_cast<std::size_t>(b)]->gt.points[static_cast<std::size_t>(k)].transpose();
    }
    gt.push_back(std::move(g));
  }
  BatchLoss loss;
  const Var il = losses::imitation_loss(out.full, gt);
  loss.imitation = il.scalar();
  loss.total = il;
  if (guided) {
    const Var tg = losses::temporal_guidance_loss(out.first, out.second, out.full, w);
    loss.temporal_guidance = tg.scalar();
    loss.total = ad::add(il, ad::scale(tg, w.lambda_tg));
  }
  return loss;
}

double train_step(MetDriveModel& model, Adam& opt, std::span<const Sample* const> batch,
                  const losses::LossWeights& w, bool temporal_loss_on) {
  Tape tape;
  const BatchLoss loss = batch_loss(tape, model, batch, w, temporal_loss_on);
  const double value = loss.total.scalar();
  if (!std::isfinite(value)) throw TrainingError("non-finite loss");
  model.parameters().zero_grad();
  tape.backward(loss.total);
  opt.step(model.parameters().all());
  return value;
}

TrainState init_state(const ExperimentConfig& config) {
  validate_config(config);
  TrainState state;
  state.config = config;
  state.model = std::make_unique<MetDriveModel>(config.model(), config.seed);
  state.rng.seed(config.seed ^ 0x5348554646u);
  return state;
}

TrainState train(const ExperimentConfig& config, const std::vector<Sample>& samples,
                 const EpochCallback& on_epoch) {
  TrainState state = init_state(config);
  if (samples.empty()) throw TrainingError("train: empty dataset");
  for (const auto& s : samples) validate_sample(s, config.length, config.waypoints);
  const losses::LossWeights w = config.effective_loss();
  Adam opt(config.learning_rate);
  std::vector<std::size_t> order(samples.size());
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  std::size_t batch_index = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.rng);
    std::vector<double> totals, ils, tgs;
    for (std::size_t start = 0; start < order.size(); start += batch_size, ++batch_index) {
      std::vector<const Sample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
        batch.push_back(&samples[order[i]]);
      }
      Tape tape;
      const BatchLoss loss = batch_loss(tape, *state.model, batch, w, config.temporal_loss_on);
      if (!std::isfinite(loss.total.scalar())) {
        throw TrainingError("non-finite loss at batch " + std::to_string(batch_index) +
                            " (epoch " + std::to_string(epoch) + ")");
      }
      state.model->parameters().zero_grad();
      tape.backward(loss.total);
      opt.step(state.model->parameters().all());
      totals.push_back(loss.total.scalar());
      ils.push_back(loss.imitation);
      tgs.push_back(loss.temporal_guidance);
    }
    state.epoch = epoch + 1;
    const EpochLoss e{epoch + 1, losses::compensated_mean(totals), losses::compensated_mean(ils),
                      losses::compensated_mean(tgs)};
    state.curve.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return state;
}

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  std::uint64_t u64() {
    unsigned char b[8];
    read(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  std::string string() {
    const std::uint64_t n = u64();
    if (n > (1ull << 32)) throw IoError(path_ + ": implausible string length in checkpoint");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  void read(void* dst, std::uint64_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::uint64_t>(in_.gcount()) != n) throw IoError(path_ + ": truncated checkpoint");
  }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kCheckpointMagic, 5);
  put_string(out, to_text(state.config));
  put_u64(out, static_cast<std::uint64_t>(state.epoch));
  std::ostringstream rng;
  rng << state.rng;
  put_string(out, rng.str());
  put_u64(out, state.curve.size());
  for (const auto& e : state.curve) {
    const std::array<double, 3> v{e.total, e.imitation, e.temporal_guidance};
    out.write(reinterpret_cast<const char*>(v.data()), sizeof(v));
  }
  const auto params = state.model->parameters().all();
  put_u64(out, params.size());
  for (const auto* p : params) {
    put_string(out, p->name());
    put_u64(out, static_cast<std::uint64_t>(p->value().rows()));
    put_u64(out, static_cast<std::uint64_t>(p->value().cols()));
    out.write(reinterpret_cast<const char*>(p->value().data()),
              static_cast<std::streamsize>(p->value().size() * sizeof(double)));
  }
  out.flush();
  if (!out) throw IoError("write failed for " + path);
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  Reader r(in, path);
  char magic[5];
  r.read(magic, 5);
  if (std::memcmp(magic, kCheckpointMagic, 5) != 0) throw IoError(path + ": not a METD1 checkpoint");
  TrainState state;
  try {
    state.config = parse_config(r.string(), path);
  } catch (const ConfigError& e) {
    throw IoError(path + ": bad config snapshot: " + e.what());
  }
  state.model = std::make_unique<MetDriveModel>(state.config.model(), state.config.seed);
  state.epoch = static_cast<int>(r.u64());
  std::istringstream rng(r.string());
  rng >> state.rng;
  if (!rng) throw IoError(path + ": bad RNG state");
  const std::uint64_t epochs = r.u64();
  if (epochs > (1u << 20)) throw IoError(path + ": implausible loss curve length");
  for (std::uint64_t i = 0; i < epochs; ++i) {
    std::array<double, 3> v{};
    r.read(v.data(), sizeof(v));
    state.curve.push_back({static_cast<int>(i + 1), v[0], v[1], v[2]});
  }
  const auto params = state.model->parameters().all();
  if (r.u64() != params.size()) throw IoError(path + ": parameter count mismatch");
  for (auto* p : params) {
    const std::string name = r.string();
    const auto rows = static_cast<Index>(r.u64());
    const auto cols = static_cast<Index>(r.u64());
    if (name != p->name() || rows != p->value().rows() || cols != p->value().cols()) {
      throw IoError(path + ": parameter " + name + " does not match the model layout");
    }
    r.read(p->value().data(), static_cast<std::uint64_t>(p->value().size()) * sizeof(double));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(path + ": trailing bytes");
  return state;
}

std::string loss_curve_record(const std::vector<EpochLoss>& curve, const std::string& label) {
  io::json epochs = io::json::array();
  for (const auto& e : curve) {
    epochs.push_back({{"epoch", e.epoch},
                      {"total", e.total},
                      {"imitation", e.imitation},
                      {"temporal_guidance", e.temporal_guidance}});
  }
  return io::record_line({{"kind", "loss_curve"}, {"label", label}, {"epochs", std::move(epochs)}});
}

}  // namespace metdrive::training
