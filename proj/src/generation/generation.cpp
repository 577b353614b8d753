#include "pmlm/generation/generation.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace pmlm {

std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::kGreedy: return "greedy";
    case SamplerKind::kTemperature: return "temperature";
    case SamplerKind::kTopK: return "top_k";
  }
  return "unknown";
}

SamplerKind parse_sampler_kind(const std::string& text) {
  if (text == "greedy") return SamplerKind::kGreedy;
  if (text == "temperature") return SamplerKind::kTemperature;
  if (text == "top_k" || text == "top-k") return SamplerKind::kTopK;
  throw std::invalid_argument("unknown sampler '" + text + "' (expected greedy, temperature or top_k)");
}

void SamplerSpec::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("sampler: temperature must be positive, got " + std::to_string(temperature));
  }
  if (k < 1) throw std::invalid_argument("sampler: k must be at least 1");
}

void GenerationConstraints::validate() const {
  if (length == 0) throw std::invalid_argument("generation: target length must be positive");
  for (const auto& [pos, token] : anchors) {
    if (pos >= length) {
      throw std::invalid_argument("generation: anchor position " + std::to_string(pos + 1) +
                                  " outside 1.." + std::to_string(length));
    }
    if (token == kMaskId || token == kPadId) {
      throw std::invalid_argument("generation: anchor at position " + std::to_string(pos + 1) +
                                  " is [MASK] or [PAD]");
    }
  }
}

std::vector<std::size_t> GenerationConstraints::free_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < length; ++i) {
    if (!anchors.contains(i)) out.push_back(i);
  }
  return out;
}

GenerationOrder GenerationOrder::random(const GenerationConstraints& constraints, Rng& rng) {
  GenerationOrder order{constraints.free_positions(), OrderMode::kRandom};
  rng.shuffle(std::span<std::size_t>(order.sigma));
  return order;
}

GenerationOrder GenerationOrder::left_to_right(const GenerationConstraints& constraints) {
  return {constraints.free_positions(), OrderMode::kLeftToRight};
}

GenerationOrder GenerationOrder::explicit_order(std::vector<std::size_t> sigma) {
  return {std::move(sigma), OrderMode::kExplicit};
}

void exclude_special_tokens(std::span<double> logits) {
  for (std::size_t id = 0; id < logits.size() && is_special(static_cast<TokenId>(id)); ++id) {
    logits[id] = -std::numeric_limits<double>::infinity();
  }
}

TokenId sample_token(std::span<const double> logits, const SamplerSpec& sampler, Rng& rng) {
  sampler.validate();
  std::vector<std::size_t> candidates;
  for (std::size_t id = 0; id < logits.size(); ++id) {
    if (logits[id] == -std::numeric_limits<double>::infinity()) continue;  // excluded
    if (!std::isfinite(logits[id])) {
      throw std::invalid_argument("sample_token: logit for id " + std::to_string(id) + " is not finite");
    }
    candidates.push_back(id);
  }
  if (candidates.empty()) throw std::invalid_argument("sample_token: every candidate id is excluded");

  if (sampler.kind == SamplerKind::kGreedy) {
    std::size_t best = candidates.front();
    for (std::size_t id : candidates) {
      if (logits[id] > logits[best]) best = id;
    }
    return static_cast<TokenId>(best);
  }

  if (sampler.kind == SamplerKind::kTopK && sampler.k < candidates.size()) {
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    candidates.resize(sampler.k);
    std::sort(candidates.begin(), candidates.end());
  }

  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t id : candidates) peak = std::max(peak, logits[id]);
  std::vector<double> weights(candidates.size());
  double total = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    weights[i] = std::exp((logits[candidates[i]] - peak) / sampler.temperature);
    total += weights[i];
  }
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (u < weights[i]) return static_cast<TokenId>(candidates[i]);
    u -= weights[i];
  }
  return static_cast<TokenId>(candidates.back());
}

GenerationResult generate(const Transformer& model, const GenerationConstraints& constraints,
                          const GenerationOrder& order, const SamplerSpec& sampler, Rng& rng) {
  if (model.config().attention_mode != AttentionMode::kBidirectional) {
    throw std::invalid_argument("generate: arbitrary-order generation needs a bidirectional model");
  }
  constraints.validate();
  sampler.validate();
  for (const auto& [pos, token] : constraints.anchors) {
    if (static_cast<std::size_t>(token) >= model.config().vocab_size || token < 0) {
      throw std::invalid_argument("generate: anchor token id " + std::to_string(token) +
                                  " outside the model vocabulary");
    }
  }
  {
    std::vector<std::size_t> expected = constraints.free_positions();
    std::vector<std::size_t> got = order.sigma;
    std::sort(got.begin(), got.end());
    if (got != expected) {
      throw std::invalid_argument(
          "generate: order must visit every non-anchor position exactly once (order has " +
          std::to_string(order.sigma.size()) + " entries, " + std::to_string(expected.size()) +
          " free positions)");
    }
  }

  GenerationResult result;
  TokenSequence current(constraints.length, kMaskId);
  for (const auto& [pos, token] : constraints.anchors) current[pos] = token;
  result.trace.initial = current;

  const std::size_t vocab = model.config().vocab_size;
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < order.sigma.size(); ++t) {
    const std::size_t pos = order.sigma[t];
    const Tensor logits = model.forward(current);
    const auto row = logits.data().subspan(pos * vocab, vocab);
    std::vector<double> candidates(row.begin(), row.end());
    exclude_special_tokens(candidates);
    const TokenId token = sample_token(candidates, sampler, rng);
    current[pos] = token;
    result.trace.steps.push_back({t + 1, pos, token, current});
  }
  result.tokens = std::move(current);
  return result;
}

TokenSequence generate_left_to_right(const Transformer& model, const TokenSequence& prompt,
                                     std::size_t target_length, const SamplerSpec& sampler,
                                     Rng& rng) {
  if (prompt.size() >= target_length) {
    throw std::invalid_argument("generate_left_to_right: prompt length " + std::to_string(prompt.size()) +
                                " must be below the target length " + std::to_string(target_length));
  }
  GenerationConstraints constraints;
  constraints.length = target_length;
  for (std::size_t i = 0; i < prompt.size(); ++i) constraints.anchors[i] = prompt[i];
  return generate(model, constraints, GenerationOrder::left_to_right(constraints), sampler, rng).tokens;
}

TokenSequence generate_causal(const Transformer& model, const TokenSequence& prompt,
                              std::size_t length, const SamplerSpec& sampler, Rng& rng) {
  if (model.config().attention_mode != AttentionMode::kCausal) {
    throw std::invalid_argument("generate_causal: needs a causal model");
  }
  if (prompt.size() >= length) {
    throw std::invalid_argument("generate_causal: prompt must be shorter than the target length");
  }
  sampler.validate();
  TokenSequence out = prompt;
  TokenSequence input{kCausalStartId};
  input.insert(input.end(), prompt.begin(), prompt.end());
  KvCache cache;
  while (out.size() < length) {
    std::vector<double> logits = model.forward_incremental(input, cache);
    exclude_special_tokens(logits);
    const TokenId token = sample_token(logits, sampler, rng);
    out.push_back(token);
    input.push_back(token);
  }
  return out;
}

std::string render_ids(const TokenSequence& tokens) {
  std::ostringstream out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out << ' ';
    if (tokens[i] == kMaskId) {
      out << '_';
    } else {
      out << tokens[i];
    }
  }
  return out.str();
}

std::string trace_to_jsonl(const GenerationTrace& trace, const TokenRenderer& render) {
  std::string out;
  for (const auto& step : trace.steps) {
    nlohmann::json line{{"step", step.step},
                        {"position", step.position + 1},
                        {"token", step.token},
                        {"text", render(TokenSequence{step.token})},
                        {"snapshot", render(step.snapshot)}};
    out += line.dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace pmlm
