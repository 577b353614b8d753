#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pmlm/core/ops.h"
#include "pmlm/core/rng.h"
#include "pmlm/core/tensor.h"
#include "pmlm/model/transformer.h"

namespace pmlm::testing {

// Relative error with a floor so near-zero gradients compare absolutely.
inline double relative_error(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
};

// Central differences on every element of every leaf against one backward pass.
inline GradCheckResult grad_check(const std::function<Tensor()>& loss_fn,
                                  const std::vector<std::pair<std::string, Tensor>>& leaves,
                                  double h = 1e-5) {
  for (const auto& [name, t] : leaves) {
    auto leaf = t;
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  loss_fn().backward();
  GradCheckResult result;
  for (const auto& [name, t] : leaves) {
    auto leaf = t;
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    for (std::size_t i = 0; i < leaf.numel(); ++i) {
      const double saved = leaf.data()[i];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard guard;
        leaf.data()[i] = saved + h;
        plus = loss_fn().item();
        leaf.data()[i] = saved - h;
        minus = loss_fn().item();
      }
      leaf.data()[i] = saved;
      const double numeric = (plus - minus) / (2 * h);
      const double err = relative_error(analytic[i], numeric);
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) +
                       " numeric " + std::to_string(numeric);
      }
    }
  }
  return result;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

inline TransformerConfig tiny_config(AttentionMode mode = AttentionMode::kBidirectional,
                                     PositionalKind pos = PositionalKind::kAbsolute) {
  TransformerConfig c;
  c.vocab_size = 12;
  c.max_len = 16;
  c.layers = 2;
  c.heads = 2;
  c.hidden_size = 16;
  c.intermediate_size = 32;
  c.dropout_rate = 0.0;
  c.attention_mode = mode;
  c.positional_kind = pos;
  c.relative_window = 3;
  return c;
}

inline TokenSequence random_tokens(std::size_t n, std::size_t vocab, Rng& rng) {
  TokenSequence seq(n);
  for (auto& t : seq) t = kFirstContentId + static_cast<TokenId>(rng.index(vocab - kFirstContentId));
  return seq;
}

// A model whose logits are identically zero: head weights and bias cleared.
inline Transformer uniform_output_model(TransformerConfig config, std::uint64_t seed = 1) {
  Transformer m = Transformer::random(config, seed, 0.5);
  for (auto& v : m.params().at("head.w").data()) v = 0.0;
  for (auto& v : m.params().at("head.b").data()) v = 0.0;
  return m;
}

inline std::vector<double> row(const Tensor& t, std::size_t r) {
  std::vector<double> out(t.cols());
  for (std::size_t c = 0; c < t.cols(); ++c) out[c] = t.at(r, c);
  return out;
}

}  // namespace pmlm::testing
