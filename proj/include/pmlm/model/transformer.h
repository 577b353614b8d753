#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pmlm/core/optimizer.h"
#include "pmlm/core/rng.h"
#include "pmlm/core/tensor.h"
#include "pmlm/core/tokens.h"

namespace pmlm {

enum class AttentionMode { kBidirectional, kCausal };
enum class PositionalKind { kAbsolute, kRelative };

std::string to_string(AttentionMode mode);
std::string to_string(PositionalKind kind);
AttentionMode parse_attention_mode(const std::string& text);
PositionalKind parse_positional_kind(const std::string& text);

struct TransformerConfig {
  std::size_t vocab_size = 32;
  std::size_t max_len = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t hidden_size = 64;
  std::size_t intermediate_size = 256;
  double dropout_rate = 0.1;
  AttentionMode attention_mode = AttentionMode::kBidirectional;
  PositionalKind positional_kind = PositionalKind::kAbsolute;
  std::size_t relative_window = 16;

  // Throws std::invalid_argument describing the first violated invariant.
  void validate() const;

  std::size_t head_size() const { return hidden_size / heads; }

  bool operator==(const TransformerConfig&) const = default;
};

// Named parameter set whose names and shapes are fully determined by the
// config. Layout (pre-LN blocks):
//   tok_emb [V,H]; pos_emb [max_len,H] (absolute only)
//   layer{l}.rel_bias [heads, 2w+1] (relative only)
//   layer{l}.ln1.{gamma,beta}, layer{l}.attn.{wq,bq,wk,bk,wv,bv,wo,bo}
//   layer{l}.ln2.{gamma,beta}, layer{l}.ffn.{w1,b1,w2,b2}
//   ln_f.{gamma,beta}; head.w [H,V]; head.b [V]
std::vector<std::pair<std::string, Shape>> parameter_layout(const TransformerConfig& config);

struct ForwardOptions {
  bool training = false;  // enables dropout
  Rng* rng = nullptr;     // required when training with dropout
};

// Cached per-layer keys and values for causal incremental decoding.
struct KvCache {
  std::vector<std::vector<double>> keys;    // per layer, length x hidden
  std::vector<std::vector<double>> values;  // per layer, length x hidden
  std::size_t length = 0;
};

class Transformer {
 public:
  Transformer(TransformerConfig config, ParameterMap params);

  // Weights ~ normal(0, init_std), biases and LN betas zero, LN gammas one.
  static Transformer random(const TransformerConfig& config, std::uint64_t seed,
                            double init_std = 0.02);

  const TransformerConfig& config() const { return config_; }
  ParameterMap& params() { return params_; }
  const ParameterMap& params() const { return params_; }
  const Tensor& param(const std::string& name) const;

  void set_requires_grad(bool flag);

  // Logits [N, vocab]. Positions holding [PAD] are never attended to. In
  // causal mode row n depends only on tokens 0..n.
  Tensor forward(std::span<const TokenId> tokens, const ForwardOptions& options = {}) const;

  // Causal mode only: consumes the tokens of `prefix` not yet in `cache` and
  // returns the logits of the last prefix position.
  std::vector<double> forward_incremental(std::span<const TokenId> prefix, KvCache& cache) const;

  // Per-head [n, n] additive attention bias of one layer (relative kind only).
  std::vector<Tensor> relative_attention_bias(std::size_t layer, std::size_t n) const;

 private:
  void check_tokens(std::span<const TokenId> tokens) const;

  TransformerConfig config_;
  ParameterMap params_;
};

}  // namespace pmlm
