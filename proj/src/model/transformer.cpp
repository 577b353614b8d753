#include "pmlm/model/transformer.h"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "pmlm/core/ops.h"

namespace pmlm {

std::string to_string(AttentionMode mode) {
  return mode == AttentionMode::kCausal ? "causal" : "bidirectional";
}

std::string to_string(PositionalKind kind) {
  return kind == PositionalKind::kRelative ? "relative" : "absolute";
}

AttentionMode parse_attention_mode(const std::string& text) {
  if (text == "causal") return AttentionMode::kCausal;
  if (text == "bidirectional") return AttentionMode::kBidirectional;
  throw std::invalid_argument("unknown attention_mode '" + text +
                              "' (expected bidirectional or causal)");
}

PositionalKind parse_positional_kind(const std::string& text) {
  if (text == "absolute") return PositionalKind::kAbsolute;
  if (text == "relative") return PositionalKind::kRelative;
  throw std::invalid_argument("unknown positional_kind '" + text +
                              "' (expected absolute or relative)");
}

void TransformerConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("transformer config: " + what); };
  if (vocab_size < 4) fail("vocab_size must be at least 4, got " + std::to_string(vocab_size));
  if (max_len == 0) fail("max_len must be positive");
  if (layers == 0) fail("layers must be positive");
  if (heads == 0) fail("heads must be positive");
  if (hidden_size == 0 || hidden_size % heads != 0) {
    fail("hidden_size " + std::to_string(hidden_size) + " not divisible by heads " +
         std::to_string(heads));
  }
  if (intermediate_size == 0) fail("intermediate_size must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0, 1)");
  if (positional_kind == PositionalKind::kRelative && relative_window < 1) {
    fail("relative_window must be at least 1");
  }
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const TransformerConfig& c) {
  std::vector<std::pair<std::string, Shape>> layout;
  const std::size_t h = c.hidden_size;
  layout.push_back({"tok_emb", {c.vocab_size, h}});
  if (c.positional_kind == PositionalKind::kAbsolute) layout.push_back({"pos_emb", {c.max_len, h}});
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    if (c.positional_kind == PositionalKind::kRelative) {
      layout.push_back({p + "rel_bias", {c.heads, 2 * c.relative_window + 1}});
    }
    layout.push_back({p + "ln1.gamma", {h}});
    layout.push_back({p + "ln1.beta", {h}});
    for (const char* proj : {"q", "k", "v", "o"}) {
      layout.push_back({p + "attn.w" + proj, {h, h}});
      layout.push_back({p + "attn.b" + proj, {h}});
    }
    layout.push_back({p + "ln2.gamma", {h}});
    layout.push_back({p + "ln2.beta", {h}});
    layout.push_back({p + "ffn.w1", {h, c.intermediate_size}});
    layout.push_back({p + "ffn.b1", {c.intermediate_size}});
    layout.push_back({p + "ffn.w2", {c.intermediate_size, h}});
    layout.push_back({p + "ffn.b2", {h}});
  }
  layout.push_back({"ln_f.gamma", {h}});
  layout.push_back({"ln_f.beta", {h}});
  layout.push_back({"head.w", {h, c.vocab_size}});
  layout.push_back({"head.b", {c.vocab_size}});
  return layout;
}

Transformer::Transformer(TransformerConfig config, ParameterMap params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto layout = parameter_layout(config_);
  if (layout.size() != params_.size()) {
    throw std::invalid_argument("transformer: expected " + std::to_string(layout.size()) +
                                " parameters, got " + std::to_string(params_.size()));
  }
  for (const auto& [name, shape] : layout) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("transformer: missing parameter " + name);
    if (it->second.shape() != shape) {
      throw ShapeError("transformer: parameter " + name + " has shape " +
                       shape_string(it->second.shape()) + ", expected " + shape_string(shape));
    }
    for (double v : it->second.data()) {
      if (!std::isfinite(v)) throw std::invalid_argument("transformer: parameter " + name + " is not finite");
    }
  }
}

Transformer Transformer::random(const TransformerConfig& config, std::uint64_t seed,
                                double init_std) {
  config.validate();
  Rng rng(seed);
  ParameterMap params;
  for (const auto& [name, shape] : parameter_layout(config)) {
    Tensor t = Tensor::zeros(shape);
    const bool is_gamma = name.ends_with(".gamma");
    if (is_gamma) {
      for (double& v : t.data()) v = 1.0;
    } else if (shape.size() == 2) {
      for (double& v : t.data()) v = rng.normal(0.0, init_std);
    }
    params.emplace(name, std::move(t));
  }
  return Transformer(config, std::move(params));
}

const Tensor& Transformer::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("transformer: no parameter named " + name);
  return it->second;
}

void Transformer::set_requires_grad(bool flag) {
  for (auto& [name, t] : params_) t.set_requires_grad(flag);
}

void Transformer::check_tokens(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw std::invalid_argument("transformer: empty token sequence");
  if (tokens.size() > config_.max_len) {
    throw std::invalid_argument("transformer: sequence length " + std::to_string(tokens.size()) +
                                " exceeds max_len " + std::to_string(config_.max_len));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= config_.vocab_size) {
      throw std::out_of_range("transformer: token id " + std::to_string(tokens[i]) +
                              " at position " + std::to_string(i) + " outside vocabulary of " +
                              std::to_string(config_.vocab_size));
    }
  }
}

namespace {

Tensor maybe_dropout(const Tensor& x, double rate, const ForwardOptions& options) {
  if (!options.training || rate == 0.0) return x;
  if (options.rng == nullptr) throw std::invalid_argument("transformer: training forward needs an rng");
  return ops::dropout(x, rate, *options.rng);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return ops::add_row(ops::matmul(x, w), b);
}

}  // namespace

Tensor Transformer::forward(std::span<const TokenId> tokens, const ForwardOptions& options) const {
  check_tokens(tokens);
  const auto& c = config_;
  const std::size_t n = tokens.size();
  const std::size_t dh = c.head_size();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool causal = c.attention_mode == AttentionMode::kCausal;

  Tensor x = ops::embedding(param("tok_emb"), tokens);
  if (c.positional_kind == PositionalKind::kAbsolute) {
    std::vector<TokenId> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<TokenId>(i);
    x = ops::add(x, ops::embedding(param("pos_emb"), positions));
  }
  x = maybe_dropout(x, c.dropout_rate, options);

  Tensor key_mask = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (tokens[j] == kPadId || (causal && j > i)) {
        key_mask.at(i, j) = -std::numeric_limits<double>::infinity();
      }
    }
  }

  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Tensor h = ops::layer_norm(x, param(p + "ln1.gamma"), param(p + "ln1.beta"));
    Tensor q = linear(h, param(p + "attn.wq"), param(p + "attn.bq"));
    Tensor k = linear(h, param(p + "attn.wk"), param(p + "attn.bk"));
    Tensor v = linear(h, param(p + "attn.wv"), param(p + "attn.bv"));
    std::vector<Tensor> head_out;
    head_out.reserve(c.heads);
    for (std::size_t hd = 0; hd < c.heads; ++hd) {
      Tensor qh = ops::slice_cols(q, hd * dh, dh);
      Tensor kh = ops::slice_cols(k, hd * dh, dh);
      Tensor vh = ops::slice_cols(v, hd * dh, dh);
      Tensor scores = ops::scale(ops::matmul(qh, kh, /*transpose_b=*/true), inv_sqrt_dh);
      if (c.positional_kind == PositionalKind::kRelative) {
        scores = ops::add(scores, ops::relative_bias(param(p + "rel_bias"), hd,
                                                     c.relative_window, 0, n, n));
      }
      scores = ops::add(scores, key_mask);
      head_out.push_back(ops::matmul(ops::softmax(scores), vh));
    }
    Tensor attn = linear(ops::concat_cols(head_out), param(p + "attn.wo"), param(p + "attn.bo"));
    x = ops::add(x, maybe_dropout(attn, c.dropout_rate, options));

    Tensor h2 = ops::layer_norm(x, param(p + "ln2.gamma"), param(p + "ln2.beta"));
    Tensor ff = linear(ops::gelu(linear(h2, param(p + "ffn.w1"), param(p + "ffn.b1"))),
                       param(p + "ffn.w2"), param(p + "ffn.b2"));
    x = ops::add(x, maybe_dropout(ff, c.dropout_rate, options));
  }

  x = ops::layer_norm(x, param("ln_f.gamma"), param("ln_f.beta"));
  return linear(x, param("head.w"), param("head.b"));
}

std::vector<double> Transformer::forward_incremental(std::span<const TokenId> prefix,
                                                     KvCache& cache) const {
  const auto& c = config_;
  if (c.attention_mode != AttentionMode::kCausal) {
    throw std::logic_error(
        "forward_incremental: bidirectional models must recompute every position after each "
        "new token; use forward()");
  }
  check_tokens(prefix);
  if (cache.length > prefix.size()) {
    throw std::invalid_argument("forward_incremental: cache holds " + std::to_string(cache.length) +
                                " positions but the prefix has only " +
                                std::to_string(prefix.size()));
  }
  if (cache.keys.size() != c.layers) {
    cache.keys.assign(c.layers, {});
    cache.values.assign(c.layers, {});
    cache.length = 0;
  }
  if (cache.length == prefix.size()) {
    throw std::invalid_argument("forward_incremental: no new tokens beyond the cached prefix");
  }

  NoGradGuard no_grad;
  const std::size_t hidden = c.hidden_size;
  const std::size_t dh = c.head_size();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor logits;

  for (std::size_t t = cache.length; t < prefix.size(); ++t) {
    const TokenId token = prefix[t];
    Tensor x = ops::embedding(param("tok_emb"), std::span<const TokenId>(&token, 1));
    if (c.positional_kind == PositionalKind::kAbsolute) {
      const TokenId pos = static_cast<TokenId>(t);
      x = ops::add(x, ops::embedding(param("pos_emb"), std::span<const TokenId>(&pos, 1)));
    }
    const std::size_t keys = t + 1;
    Tensor key_mask = Tensor::zeros({1, keys});
    for (std::size_t j = 0; j < keys; ++j) {
      if (prefix[j] == kPadId) key_mask.at(0, j) = -std::numeric_limits<double>::infinity();
    }

    for (std::size_t l = 0; l < c.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      Tensor h = ops::layer_norm(x, param(p + "ln1.gamma"), param(p + "ln1.beta"));
      Tensor q = linear(h, param(p + "attn.wq"), param(p + "attn.bq"));
      Tensor k = linear(h, param(p + "attn.wk"), param(p + "attn.bk"));
      Tensor v = linear(h, param(p + "attn.wv"), param(p + "attn.bv"));
      auto& kc = cache.keys[l];
      auto& vc = cache.values[l];
      kc.insert(kc.end(), k.data().begin(), k.data().end());
      vc.insert(vc.end(), v.data().begin(), v.data().end());
      Tensor all_k = Tensor::from({keys, hidden}, kc);
      Tensor all_v = Tensor::from({keys, hidden}, vc);

      std::vector<Tensor> head_out;
      head_out.reserve(c.heads);
      for (std::size_t hd = 0; hd < c.heads; ++hd) {
        Tensor qh = ops::slice_cols(q, hd * dh, dh);
        Tensor kh = ops::slice_cols(all_k, hd * dh, dh);
        Tensor vh = ops::slice_cols(all_v, hd * dh, dh);
        Tensor scores = ops::scale(ops::matmul(qh, kh, true), inv_sqrt_dh);
        if (c.positional_kind == PositionalKind::kRelative) {
          scores = ops::add(scores, ops::relative_bias(param(p + "rel_bias"), hd,
                                                       c.relative_window, t, 1, keys));
        }
        scores = ops::add(scores, key_mask);
        head_out.push_back(ops::matmul(ops::softmax(scores), vh));
      }
      Tensor attn = linear(ops::concat_cols(head_out), param(p + "attn.wo"), param(p + "attn.bo"));
      x = ops::add(x, attn);
      Tensor h2 = ops::layer_norm(x, param(p + "ln2.gamma"), param(p + "ln2.beta"));
      Tensor ff = linear(ops::gelu(linear(h2, param(p + "ffn.w1"), param(p + "ffn.b1"))),
                         param(p + "ffn.w2"), param(p + "ffn.b2"));
      x = ops::add(x, ff);
    }
    cache.length = t + 1;
    if (t + 1 == prefix.size()) {
      x = ops::layer_norm(x, param("ln_f.gamma"), param("ln_f.beta"));
      logits = linear(x, param("head.w"), param("head.b"));
    }
  }
  return {logits.data().begin(), logits.data().end()};
}

std::vector<Tensor> Transformer::relative_attention_bias(std::size_t layer, std::size_t n) const {
  if (config_.positional_kind != PositionalKind::kRelative) {
    throw std::logic_error("relative_attention_bias: model uses absolute positions");
  }
  NoGradGuard no_grad;
  const Tensor& table = param("layer" + std::to_string(layer) + ".rel_bias");
  std::vector<Tensor> out;
  for (std::size_t hd = 0; hd < config_.heads; ++hd) {
    out.push_back(ops::relative_bias(table, hd, config_.relative_window, 0, n, n));
  }
  return out;
}

}  // namespace pmlm
