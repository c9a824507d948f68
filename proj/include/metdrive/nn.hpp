#pragma once

// Small trainable building blocks on top of the autodiff tape.

#include "metdrive/autodiff.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace metdrive::nn {

using ad::Index;
using ad::Mat;
using ad::Parameter;
using ad::Tape;
using ad::Var;

/// Owns parameters in registration order. Pointers stay valid for the store's lifetime.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Mat init);

  std::vector<Parameter*> all() const;
  Parameter* find(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  /// Total number of scalar parameters.
  Index scalar_count() const;
  void zero_grad();

  /// Concatenates all parameter values (or gradients) in registration order.
  Eigen::VectorXd flatten_values() const;
  Eigen::VectorXd flatten_grads() const;
  void assign_values(const Eigen::VectorXd& flat);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

/// Glorot-uniform initialisation drawn from `rng`.
Mat glorot(Index rows, Index cols, Index fan_in, Index fan_out, std::mt19937_64& rng);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, Index in, Index out,
         std::mt19937_64& rng, bool bias = true);
  Var operator()(Tape& tape, const Var& x) const;
  Index in() const { return in_; }
  Index out() const { return out_; }
  Parameter* weight() const { return w_; }
  Parameter* bias() const { return b_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  Index in_ = 0;
  Index out_ = 0;
};

/// 2-D convolution over channel-last images stored row-wise (n*H*W x C).
class Conv2d {
 public:
  struct Output {
    Var data;
    Index height;
    Index width;
  };

  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, Index in_channels,
         Index out_channels, Index kernel, Index stride, Index pad, std::mt19937_64& rng);
  Output operator()(Tape& tape, const Var& x, Index n_images, Index height, Index width) const;
  Index out_channels() const { return out_channels_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  Index in_channels_ = 0;
  Index out_channels_ = 0;
  Index kernel_ = 0;
  Index stride_ = 1;
  Index pad_ = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, Index dim);
  Var operator()(Tape& tape, const Var& x) const;

 private:
  Parameter* gain_ = nullptr;
  Parameter* bias_ = nullptr;
};

/// Multi-head self-attention within equal-sized row groups (one group per sample).
/// Query/key projections carry no bias: softmax is invariant to it.
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParameterStore& store, const std::string& name, Index dim,
                         Index heads, std::mt19937_64& rng);
  Var operator()(Tape& tape, const Var& x, Index groups) const;

 private:
  Linear q_, k_, v_, o_;
  Index dim_ = 0;
  Index heads_ = 1;
};

/// Post-norm transformer encoder layer: x = LN(x + MHA(x)); x = LN(x + FFN(x)).
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(ParameterStore& store, const std::string& name, Index dim, Index heads,
               Index ffn_ratio, std::mt19937_64& rng);
  Var operator()(Tape& tape, const Var& x, Index groups) const;

 private:
  MultiHeadSelfAttention attn_;
  LayerNorm norm1_, norm2_;
  Linear ffn_in_, ffn_out_;
};

class GRUCell {
 public:
  GRUCell() = default;
  GRUCell(ParameterStore& store, const std::string& name, Index input, Index hidden,
          std::mt19937_64& rng);
  Var operator()(Tape& tape, const Var& x, const Var& h) const;
  Index hidden() const { return hidden_; }

 private:
  Linear x_gates_;  // input -> [reset, update, candidate]
  Linear h_gates_;  // hidden -> [reset, update, candidate]
  Index hidden_ = 0;
};

}  // namespace metdrive::nn
