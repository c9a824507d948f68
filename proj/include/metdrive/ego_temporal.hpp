#pragma once

// Temporal branch: ego-state streams -> positional + token embeddings ->
// self-attention encoders -> fully connected fusion into time-series features.

#include <array>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "metdrive/domain.hpp"
#include "metdrive/nn.hpp"

namespace metdrive::temporal {

using ad::Index;
using ad::Tape;
using ad::Var;

using Stream = std::vector<double>;

/// Horizontal streams (cos theta, steer, dx) and vertical streams (sin theta, throttle, dy).
struct Decomposition {
  std::array<Stream, 3> horizontal;
  std::array<Stream, 3> vertical;
};

Decomposition decompose(const EgoStateSequence& seq);

/// Sinusoidal table: (p, 2i) = sin(p / 10000^(2i/D)), (p, 2i+1) = cos(same).
/// Throws ConfigError for odd D or empty shapes.
Mat positional_embedding(Index length, Index dim);

/// How the ego-state fields are grouped into tokenizer streams.
enum class InputMode { decomposed, paired_undecomposed, raw_theta_u_psi };

std::string to_string(InputMode mode);
InputMode input_mode_from_string(const std::string& name);

enum class Orientation { horizontal, vertical, undecomposed };

/// Tokenizer input streams, grouped per encoder block.
/// decomposed: {horizontal: cos theta, steer, dx}, {vertical: sin theta, throttle, dy}
/// paired_undecomposed: {theta, throttle, steer, dx, dy}
/// raw_theta_u_psi: {theta, throttle, steer}
struct StreamBlock {
  Orientation orientation;
  std::vector<Stream> streams;
};
std::vector<StreamBlock> ablation_inputs(InputMode mode, const EgoStateSequence& seq);

/// Number of streams per block for a mode, without needing data.
std::vector<Index> stream_layout(InputMode mode);

/// Embedded token streams of one orientation, each (L x D).
struct TokenBlock {
  std::vector<Mat> streams;
  Orientation orientation = Orientation::horizontal;

  Index length() const { return streams.empty() ? 0 : streams.front().rows(); }
  Index dim() const { return streams.empty() ? 0 : streams.front().cols(); }
};

void validate_token_block(const TokenBlock& block);

/// 1-D convolution from one input channel to D output channels over time,
/// stride 1, symmetric zero padding, odd kernel.
class TokenEmbedding {
 public:
  TokenEmbedding() = default;
  TokenEmbedding(nn::ParameterStore& store, const std::string& name, Index kernel, Index dim,
                 std::mt19937_64& rng);

  /// streams: (n_seq*L x 1) -> (n_seq*L x D)
  Var operator()(Tape& tape, const Var& streams, Index n_seq, Index length) const;

  Index kernel() const { return kernel_; }
  Index dim() const { return dim_; }
  ad::Parameter& weight() const { return *w_; }  // (kernel x D)
  ad::Parameter& bias() const { return *b_; }    // (1 x D)

 private:
  ad::Parameter* w_ = nullptr;
  ad::Parameter* b_ = nullptr;
  Index kernel_ = 0;
  Index dim_ = 0;
};

/// Single-stream convenience over TokenEmbedding. Throws ConfigError if L < kernel.
Mat token_embedding(std::span<const double> stream, const TokenEmbedding& params);

struct TemporalConfig {
  Index length = 8;       // L
  Index embed_dim = 32;   // D
  Index output_dim = 64;  // D_t
  Index heads = 4;
  Index depth = 1;
  Index kernel = 3;
  Index ffn_ratio = 2;
  InputMode mode = InputMode::decomposed;
};

class TemporalEncoder {
 public:
  TemporalEncoder(nn::ParameterStore& store, const TemporalConfig& config, std::mt19937_64& rng);

  const TemporalConfig& config() const { return config_; }

  /// Positional + token embedding of the streams of encoder block `block`.
  TokenBlock embed(std::span<const Stream> streams, std::size_t block,
                   Orientation orientation) const;

  /// Encodes the horizontal and vertical token blocks of the decomposed layout
  /// into a (L x D_t) time-series feature block.
  FeatureBlock encode(const TokenBlock& horizontal, const TokenBlock& vertical) const;
  FeatureBlock encode_blocks(std::span<const TokenBlock> blocks) const;

  /// Differentiable batch path: sequences -> (B*L x D_t), row b*L + t.
  Var forward(Tape& tape, std::span<const EgoStateSequence* const> batch) const;

  /// Differentiable encoder over already-embedded tokens; block_tokens[j] is
  /// (B*S_j*L x D) with row b*S_j*L + s*L + t.
  Var encode_tokens(Tape& tape, std::span<const Var> block_tokens, Index batch) const;

 private:
  Var embed_block(Tape& tape, std::span<const Var> stream_columns, std::size_t block,
                  Index batch) const;

  TemporalConfig config_;
  std::vector<Index> layout_;
  Mat positional_;
  std::vector<std::vector<TokenEmbedding>> token_;  // [block][stream]
  std::vector<std::vector<nn::EncoderLayer>> encoders_;  // [block][layer]
  nn::Linear fusion_hidden_;
  nn::Linear fusion_out_;
};

}  // namespace metdrive::temporal
