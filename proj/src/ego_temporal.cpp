#include "metdrive/ego_temporal.hpp"

#include <cmath>

namespace metdrive::temporal {

Decomposition decompose(const EgoStateSequence& seq) {
  validate_sequence(seq);
  const std::size_t n = seq.length();
  Decomposition d;
  for (auto& s : d.horizontal) s.resize(n);
  for (auto& s : d.vertical) s.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    d.horizontal[0][t] = std::cos(seq.theta[t]);
    d.horizontal[1][t] = seq.steer[t];
    d.horizontal[2][t] = seq.dx[t];
    d.vertical[0][t] = std::sin(seq.theta[t]);
    d.vertical[1][t] = seq.throttle[t];
    d.vertical[2][t] = seq.dy[t];
  }
  return d;
}

Mat positional_embedding(Index length, Index dim) {
  if (length < 1) throw ConfigError("positional_embedding: length must be >= 1");
  if (dim < 2 || dim % 2 != 0) {
    throw ConfigError("positional_embedding: dimension must be even and >= 2, got " +
                      std::to_string(dim));
  }
  Mat pe(length, dim);
  for (Index p = 0; p < length; ++p) {
    for (Index i = 0; 2 * i < dim; ++i) {
      const double angle = static_cast<double>(p) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      pe(p, 2 * i) = std::sin(angle);
      pe(p, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

std::string to_string(InputMode mode) {
  switch (mode) {
    case InputMode::decomposed:
      return "decomposed";
    case InputMode::paired_undecomposed:
      return "paired_undecomposed";
    case InputMode::raw_theta_u_psi:
      return "raw_theta_u_psi";
  }
  return "unknown";
}

InputMode input_mode_from_string(const std::string& name) {
  if (name == "decomposed") return InputMode::decomposed;
  if (name == "paired_undecomposed") return InputMode::paired_undecomposed;
  if (name == "raw_theta_u_psi") return InputMode::raw_theta_u_psi;
  throw ConfigError("unknown input mode: " + name);
}

std::vector<StreamBlock> ablation_inputs(InputMode mode, const EgoStateSequence& seq) {
  switch (mode) {
    case InputMode::decomposed: {
      Decomposition d = decompose(seq);
      return {
          {Orientation::horizontal, {d.horizontal.begin(), d.horizontal.end()}},
          {Orientation::vertical, {d.vertical.begin(), d.vertical.end()}},
      };
    }
    case InputMode::paired_undecomposed:
      validate_sequence(seq);
      return {{Orientation::undecomposed, {seq.theta, seq.throttle, seq.steer, seq.dx, seq.dy}}};
    case InputMode::raw_theta_u_psi:
      validate_sequence(seq);
      return {{Orientation::undecomposed, {seq.theta, seq.throttle, seq.steer}}};
  }
  throw ConfigError("unknown input mode");
}

std::vector<Index> stream_layout(InputMode mode) {
  switch (mode) {
    case InputMode::decomposed:
      return {3, 3};
    case InputMode::paired_undecomposed:
      return {5};
    case InputMode::raw_theta_u_psi:
      return {3};
  }
  throw ConfigError("unknown input mode");
}

void validate_token_block(const TokenBlock& block) {
  if (block.streams.empty()) throw ValidationError("token block: no streams");
  if (block.orientation != Orientation::undecomposed && block.streams.size() != 3) {
    throw ValidationError("token block: oriented blocks carry exactly 3 streams");
  }
  for (std::size_t s = 0; s < block.streams.size(); ++s) {
    const Mat& m = block.streams[s];
    if (m.rows() != block.length() || m.cols() != block.dim() || m.size() == 0) {
      throw ValidationError("token block: streams[" + std::to_string(s) + "] shape mismatch");
    }
    if (!m.allFinite()) {
      throw ValidationError("token block: streams[" + std::to_string(s) + "] not finite");
    }
  }
}

TokenEmbedding::TokenEmbedding(nn::ParameterStore& store, const std::string& name, Index kernel,
                               Index dim, std::mt19937_64& rng)
    : kernel_(kernel), dim_(dim) {
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("token embedding kernel must be odd");
  w_ = &store.add(name + ".weight", nn::glorot(kernel, dim, kernel, dim, rng));
  b_ = &store.add(name + ".bias", Mat::Zero(1, dim));
}

Var TokenEmbedding::operator()(Tape& tape, const Var& streams, Index n_seq, Index length) const {
  if (length < kernel_) {
    throw ConfigError("token embedding: sequence length " + std::to_string(length) +
                      " shorter than kernel " + std::to_string(kernel_));
  }
  Var patches = ad::im2col_1d(streams, n_seq, length, 1, kernel_);
  return ad::add_rowvec(ad::matmul(patches, tape.param(*w_)), tape.param(*b_));
}

Mat token_embedding(std::span<const double> stream, const TokenEmbedding& params) {
  const auto length = static_cast<Index>(stream.size());
  Tape tape(false);
  Mat column(length, 1);
  for (Index t = 0; t < length; ++t) column(t, 0) = stream[static_cast<std::size_t>(t)];
  return params(tape, tape.constant(std::move(column)), 1, length).value();
}

TemporalEncoder::TemporalEncoder(nn::ParameterStore& store, const TemporalConfig& config,
                                 std::mt19937_64& rng)
    : config_(config), layout_(stream_layout(config.mode)) {
  if (config.length < 2) throw ConfigError("temporal: L must be >= 2");
  positional_ = positional_embedding(config.length, config.embed_dim);
  Index total_streams = 0;
  for (std::size_t b = 0; b < layout_.size(); ++b) {
    const std::string prefix = "temporal.block" + std::to_string(b);
    std::vector<TokenEmbedding> tokens;
    for (Index s = 0; s < layout_[b]; ++s) {
      tokens.emplace_back(store, prefix + ".token" + std::to_string(s), config.kernel,
                          config.embed_dim, rng);
    }
    token_.push_back(std::move(tokens));
    std::vector<nn::EncoderLayer> layers;
    for (Index l = 0; l < config.depth; ++l) {
      layers.emplace_back(store, prefix + ".encoder" + std::to_string(l), config.embed_dim,
                          config.heads, config.ffn_ratio, rng);
    }
    encoders_.push_back(std::move(layers));
    total_streams += layout_[b];
  }
  fusion_hidden_ = nn::Linear(store, "temporal.fusion.hidden", total_streams * config.embed_dim,
                              config.output_dim, rng);
  fusion_out_ = nn::Linear(store, "temporal.fusion.out", config.output_dim, config.output_dim, rng);
}

Var TemporalEncoder::embed_block(Tape& tape, std::span<const Var> stream_columns,
                                 std::size_t block, Index batch) const {
  const Index length = config_.length;
  const auto streams = static_cast<Index>(stream_columns.size());
  Mat tiled(batch * length, config_.embed_dim);
  for (Index b = 0; b < batch; ++b) tiled.middleRows(b * length, length) = positional_;
  const Var pe = tape.constant(std::move(tiled));
  std::vector<Var> embedded;
  embedded.reserve(stream_columns.size());
  for (Index s = 0; s < streams; ++s) {
    const Var tok = token_[block][static_cast<std::size_t>(s)](
        tape, stream_columns[static_cast<std::size_t>(s)], batch, length);
    embedded.push_back(ad::add(pe, tok));
  }
  Var stacked = ad::vconcat(embedded);  // row s*B*L + b*L + t
  if (batch == 1) return stacked;
  std::vector<Index> order;
  order.reserve(static_cast<std::size_t>(batch * streams * length));
  for (Index b = 0; b < batch; ++b) {
    for (Index s = 0; s < streams; ++s) {
      for (Index t = 0; t < length; ++t) order.push_back((s * batch + b) * length + t);
    }
  }
  return ad::gather_rows(stacked, std::move(order));  // row b*S*L + s*L + t
}

Var TemporalEncoder::encode_tokens(Tape& tape, std::span<const Var> block_tokens,
                                   Index batch) const {
  if (block_tokens.size() != layout_.size()) {
    throw ConfigError("temporal encode: expected " + std::to_string(layout_.size()) +
                      " token blocks, got " + std::to_string(block_tokens.size()));
  }
  const Index length = config_.length;
  std::vector<Var> per_stream;
  for (std::size_t j = 0; j < layout_.size(); ++j) {
    const Index streams = layout_[j];
    Var x = block_tokens[j];
    if (x.rows() != batch * streams * length || x.cols() != config_.embed_dim) {
      throw ConfigError("temporal encode: token block " + std::to_string(j) + " has shape " +
                        std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
    }
    for (const auto& layer : encoders_[j]) x = layer(tape, x, batch);
    for (Index s = 0; s < streams; ++s) {
      std::vector<Index> rows;
      rows.reserve(static_cast<std::size_t>(batch * length));
      for (Index b = 0; b < batch; ++b) {
        for (Index t = 0; t < length; ++t) rows.push_back((b * streams + s) * length + t);
      }
      per_stream.push_back(ad::gather_rows(x, std::move(rows)));
    }
  }
  const Var joined = ad::hconcat(per_stream);
  return fusion_out_(tape, ad::silu(fusion_hidden_(tape, joined)));
}

TokenBlock TemporalEncoder::embed(std::span<const Stream> streams, std::size_t block,
                                  Orientation orientation) const {
  if (block >= layout_.size() || static_cast<Index>(streams.size()) != layout_[block]) {
    throw ConfigError("temporal embed: stream count does not match block layout");
  }
  Tape tape(false);
  TokenBlock out;
  out.orientation = orientation;
  for (std::size_t s = 0; s < streams.size(); ++s) {
    if (static_cast<Index>(streams[s].size()) != config_.length) {
      throw ValidationError("temporal embed: streams[" + std::to_string(s) + "] length " +
                            std::to_string(streams[s].size()) + " != L");
    }
    out.streams.push_back(positional_ + token_embedding(streams[s], token_[block][s]));
  }
  return out;
}

FeatureBlock TemporalEncoder::encode(const TokenBlock& horizontal, const TokenBlock& vertical) const {
  if (horizontal.length() != vertical.length() || horizontal.dim() != vertical.dim()) {
    throw ConfigError("temporal encode: horizontal and vertical blocks differ in shape");
  }
  const std::array<TokenBlock, 2> blocks{horizontal, vertical};
  return encode_blocks(blocks);
}

FeatureBlock TemporalEncoder::encode_blocks(std::span<const TokenBlock> blocks) const {
  Tape tape(false);
  std::vector<Var> tokens;
  for (const auto& block : blocks) {
    validate_token_block(block);
    if (block.length() != config_.length || block.dim() != config_.embed_dim) {
      throw ConfigError("temporal encode: token block shape does not match configuration");
    }
    std::vector<Var> parts;
    for (const auto& s : block.streams) parts.push_back(tape.constant(s));
    tokens.push_back(ad::vconcat(parts));
  }
  return {encode_tokens(tape, tokens, 1).value(), FeatureRole::time_series};
}

Var TemporalEncoder::forward(Tape& tape, std::span<const EgoStateSequence* const> batch) const {
  const auto n = static_cast<Index>(batch.size());
  const Index length = config_.length;
  std::vector<std::vector<Mat>> columns(layout_.size());
  for (std::size_t j = 0; j < layout_.size(); ++j) {
    columns[j].assign(static_cast<std::size_t>(layout_[j]), Mat(n * length, 1));
  }
  for (Index b = 0; b < n; ++b) {
    const EgoStateSequence& seq = *batch[static_cast<std::size_t>(b)];
    if (static_cast<Index>(seq.length()) != length) {
      throw ValidationError("temporal forward: sequence length " + std::to_string(seq.length()) +
                            " != configured L " + std::to_string(length));
    }
    const auto blocks = ablation_inputs(config_.mode, seq);
    for (std::size_t j = 0; j < blocks.size(); ++j) {
      for (std::size_t s = 0; s < blocks[j].streams.size(); ++s) {
        for (Index t = 0; t < length; ++t) {
          columns[j][s](b * length + t, 0) = blocks[j].streams[s][static_cast<std::size_t>(t)];
        }
      }
    }
  }
  std::vector<Var> block_tokens;
  for (std::size_t j = 0; j < layout_.size(); ++j) {
    std::vector<Var> cols;
    for (auto& c : columns[j]) cols.push_back(tape.constant(std::move(c)));
    block_tokens.push_back(embed_block(tape, cols, j, n));
  }
  return encode_tokens(tape, block_tokens, n);
}

}  // namespace metdrive::temporal
