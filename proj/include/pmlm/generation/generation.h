#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pmlm/core/rng.h"
#include "pmlm/core/tokens.h"
#include "pmlm/model/transformer.h"

namespace pmlm {

enum class SamplerKind { kGreedy, kTemperature, kTopK };

struct SamplerSpec {
  SamplerKind kind = SamplerKind::kGreedy;
  double temperature = 1.0;
  std::size_t k = 40;

  static SamplerSpec greedy() { return {}; }
  static SamplerSpec with_temperature(double t) { return {SamplerKind::kTemperature, t, 40}; }
  static SamplerSpec top_k(std::size_t k, double t = 1.0) { return {SamplerKind::kTopK, t, k}; }

  void validate() const;
};

std::string to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(const std::string& text);

// Anchor tokens fixed at 0-based positions of a sequence of `length` tokens.
struct GenerationConstraints {
  std::size_t length = 0;
  std::map<std::size_t, TokenId> anchors;

  void validate() const;
  std::vector<std::size_t> free_positions() const;
};

enum class OrderMode { kRandom, kLeftToRight, kExplicit };

// Order in which the non-anchor positions are filled (0-based positions).
struct GenerationOrder {
  std::vector<std::size_t> sigma;
  OrderMode mode = OrderMode::kExplicit;

  static GenerationOrder random(const GenerationConstraints& constraints, Rng& rng);
  static GenerationOrder left_to_right(const GenerationConstraints& constraints);
  static GenerationOrder explicit_order(std::vector<std::size_t> sigma);
};

struct GenerationStep {
  std::size_t step = 0;      // 1-based
  std::size_t position = 0;  // 0-based
  TokenId token = kPadId;
  TokenSequence snapshot;    // sequence after this step
};

struct GenerationTrace {
  TokenSequence initial;  // anchors in place, [MASK] elsewhere
  std::vector<GenerationStep> steps;
};

struct GenerationResult {
  TokenSequence tokens;
  GenerationTrace trace;
};

// Sets the logits of [PAD], [MASK] and [UNK] to -inf.
void exclude_special_tokens(std::span<double> logits);

// Picks a token id from one logit row. Ids with a -inf logit are excluded;
// NaN or +inf is an error. Greedy ties go to the smallest id.
TokenId sample_token(std::span<const double> logits, const SamplerSpec& sampler, Rng& rng);

// Arbitrary-order generation with a bidirectional model: start from [MASK]
// everywhere except the anchors, then for each position of the order run a
// full forward over the current snapshot and fill that position.
GenerationResult generate(const Transformer& model, const GenerationConstraints& constraints,
                          const GenerationOrder& order, const SamplerSpec& sampler, Rng& rng);

// The prompt occupies positions 0..|prompt|-1; the rest is filled left to right.
TokenSequence generate_left_to_right(const Transformer& model, const TokenSequence& prompt,
                                     std::size_t target_length, const SamplerSpec& sampler,
                                     Rng& rng);

// Left-to-right generation with a causal model through the key/value cache.
// Returns `length` tokens continuing `prompt` (which is included).
TokenSequence generate_causal(const Transformer& model, const TokenSequence& prompt,
                              std::size_t length, const SamplerSpec& sampler, Rng& rng);

using TokenRenderer = std::function<std::string(const TokenSequence&)>;

// Space-separated ids with "_" standing for [MASK].
std::string render_ids(const TokenSequence& tokens);

// One JSON object per line: {"step","position" (1-based),"token","snapshot"}.
std::string trace_to_jsonl(const GenerationTrace& trace, const TokenRenderer& render = render_ids);

}  // namespace pmlm
