#include "metdrive/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace metdrive::nn {

Parameter& ParameterStore::add(const std::string& name, Mat init) {
  if (find(name) != nullptr) {
    throw std::logic_error("duplicate parameter name: " + name);
  }
  params_.push_back(std::make_unique<Parameter>(name, std::move(init)));
  return *params_.back();
}

std::vector<Parameter*> ParameterStore::all() const {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name() == name) return p.get();
  }
  return nullptr;
}

Index ParameterStore::scalar_count() const {
  Index n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

Eigen::VectorXd ParameterStore::flatten_values() const {
  Eigen::VectorXd flat(scalar_count());
  Index off = 0;
  for (const auto& p : params_) {
    flat.segment(off, p->size()) = p->value().reshaped<Eigen::RowMajor>();
    off += p->size();
  }
  return flat;
}

Eigen::VectorXd ParameterStore::flatten_grads() const {
  Eigen::VectorXd flat = Eigen::VectorXd::Zero(scalar_count());
  Index off = 0;
  for (const auto& p : params_) {
    const Mat& g = p->node()->grad;
    if (g.size() != 0) flat.segment(off, p->size()) = g.reshaped<Eigen::RowMajor>();
    off += p->size();
  }
  return flat;
}

void ParameterStore::assign_values(const Eigen::VectorXd& flat) {
  if (flat.size() != scalar_count()) {
    throw std::invalid_argument("assign_values: size mismatch");
  }
  Index off = 0;
  for (auto& p : params_) {
    p->value().reshaped<Eigen::RowMajor>() = flat.segment(off, p->size());
    off += p->size();
  }
}

Mat glorot(Index rows, Index cols, Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Mat m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  }
  return m;
}

Linear::Linear(ParameterStore& store, const std::string& name, Index in, Index out,
               std::mt19937_64& rng, bool bias)
    : in_(in), out_(out) {
  w_ = &store.add(name + ".weight", glorot(in, out, in, out, rng));
  if (bias) b_ = &store.add(name + ".bias", Mat::Zero(1, out));
}

Var Linear::operator()(Tape& tape, const Var& x) const {
  Var y = ad::matmul(x, tape.param(*w_));
  if (b_ != nullptr) y = ad::add_rowvec(y, tape.param(*b_));
  return y;
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, Index in_channels,
               Index out_channels, Index kernel, Index stride, Index pad, std::mt19937_64& rng)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad) {
  const Index fan_in = kernel * kernel * in_channels;
  w_ = &store.add(name + ".weight",
                  glorot(fan_in, out_channels, fan_in, kernel * kernel * out_channels, rng));
  b_ = &store.add(name + ".bias", Mat::Zero(1, out_channels));
}

Conv2d::Output Conv2d::operator()(Tape& tape, const Var& x, Index n_images, Index height,
                                  Index width) const {
  Var cols = ad::im2col(x, n_images, height, width, in_channels_, kernel_, stride_, pad_);
  Var y = ad::add_rowvec(ad::matmul(cols, tape.param(*w_)), tape.param(*b_));
  return {y, (height + 2 * pad_ - kernel_) / stride_ + 1,
          (width + 2 * pad_ - kernel_) / stride_ + 1};
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, Index dim) {
  gain_ = &store.add(name + ".gain", Mat::Ones(1, dim));
  bias_ = &store.add(name + ".bias", Mat::Zero(1, dim));
}

Var LayerNorm::operator()(Tape& tape, const Var& x) const {
  return ad::layer_norm(x, tape.param(*gain_), tape.param(*bias_));
}

MultiHeadSelfAttention::MultiHeadSelfAttention(ParameterStore& store, const std::string& name,
                                               Index dim, Index heads, std::mt19937_64& rng)
    : q_(store, name + ".q", dim, dim, rng, false),
      k_(store, name + ".k", dim, dim, rng, false),
      v_(store, name + ".v", dim, dim, rng),
      o_(store, name + ".o", dim, dim, rng),
      dim_(dim),
      heads_(heads) {
  if (heads <= 0 || dim % heads != 0) {
    throw std::invalid_argument("attention: embed dim must be divisible by head count");
  }
}

Var MultiHeadSelfAttention::operator()(Tape& tape, const Var& x, Index groups) const {
  const Var q = q_(tape, x);
  const Var k = k_(tape, x);
  const Var v = v_(tape, x);
  const Index hd = dim_ / heads_;
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(heads_));
  for (Index h = 0; h < heads_; ++h) {
    heads.push_back(ad::grouped_attention(ad::slice_cols(q, h * hd, hd),
                                          ad::slice_cols(k, h * hd, hd),
                                          ad::slice_cols(v, h * hd, hd), groups));
  }
  return o_(tape, heads_ == 1 ? heads.front() : ad::hconcat(heads));
}

EncoderLayer::EncoderLayer(ParameterStore& store, const std::string& name, Index dim,
                           Index heads, Index ffn_ratio, std::mt19937_64& rng)
    : attn_(store, name + ".attn", dim, heads, rng),
      norm1_(store, name + ".norm1", dim),
      norm2_(store, name + ".norm2", dim),
      ffn_in_(store, name + ".ffn_in", dim, dim * ffn_ratio, rng),
      ffn_out_(store, name + ".ffn_out", dim * ffn_ratio, dim, rng) {}

Var EncoderLayer::operator()(Tape& tape, const Var& x, Index groups) const {
  Var h = norm1_(tape, ad::add(x, attn_(tape, x, groups)));
  Var f = ffn_out_(tape, ad::silu(ffn_in_(tape, h)));
  return norm2_(tape, ad::add(h, f));
}

GRUCell::GRUCell(ParameterStore& store, const std::string& name, Index input, Index hidden,
                 std::mt19937_64& rng)
    : x_gates_(store, name + ".x_gates", input, 3 * hidden, rng),
      h_gates_(store, name + ".h_gates", hidden, 3 * hidden, rng),
      hidden_(hidden) {}

Var GRUCell::operator()(Tape& tape, const Var& x, const Var& h) const {
  const Var gx = x_gates_(tape, x);
  const Var gh = h_gates_(tape, h);
  const Var r = ad::sigmoid(ad::add(ad::slice_cols(gx, 0, hidden_), ad::slice_cols(gh, 0, hidden_)));
  const Var z = ad::sigmoid(
      ad::add(ad::slice_cols(gx, hidden_, hidden_), ad::slice_cols(gh, hidden_, hidden_)));
  const Var n = ad::tanh(ad::add(ad::slice_cols(gx, 2 * hidden_, hidden_),
                                 ad::hadamard(r, ad::slice_cols(gh, 2 * hidden_, hidden_))));
  // h' = (1 - z) * n + z * h
  return ad::add(ad::hadamard(ad::one_minus(z), n), ad::hadamard(z, h));
}

}  // namespace metdrive::nn
