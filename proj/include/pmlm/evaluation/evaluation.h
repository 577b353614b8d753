#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pmlm/core/tokens.h"
#include "pmlm/generation/generation.h"
#include "pmlm/model/transformer.h"

namespace pmlm {

enum class PplMode { kSequential, kRandom };

std::string to_string(PplMode mode);
PplMode parse_ppl_mode(const std::string& text);

// Raised when a scoring mode does not apply to a model kind (random-order
// perplexity of a left-to-right model).
class UnsupportedMode : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SequencePpl {
  std::size_t index = 0;
  double nll_sum = 0.0;
  std::size_t token_count = 0;
  double ppl = 1.0;
};

struct PplReport {
  std::string model_kind;
  PplMode mode = PplMode::kSequential;
  double ppl = 1.0;
  double mean_nll = 0.0;
  std::size_t token_count = 0;
  std::uint64_t seed = 0;
  std::vector<SequencePpl> per_sequence;
};

// Teacher-forced perplexity of a bidirectional model. Each sequence gets an
// order (identity, or one uniform draw seeded by (seed, sequence index)); the
// token at step t is scored with the ground truth revealed at earlier steps
// and [MASK] at every other content position. [PAD] is never scored.
PplReport ppl_bidirectional(const Transformer& model, std::span<const TokenSequence> corpus,
                            PplMode mode, std::uint64_t seed);

// Left-to-right perplexity of a causal model; random mode throws UnsupportedMode.
PplReport ppl_causal(const Transformer& model, std::span<const TokenSequence> corpus,
                     PplMode mode = PplMode::kSequential);

struct LatencyReport {
  std::string model_kind;
  std::size_t sequence_count = 0;
  std::size_t sequence_length = 0;
  std::size_t forward_calls = 0;
  double wall_seconds = 0.0;
  double ratio_vs_baseline = 1.0;  // relative to the causal cached path
};

struct LatencyBenchmark {
  std::vector<LatencyReport> rows;  // causal first, then bidirectional
  std::string note;
};

// Generates `count` sequences of `length` tokens with each model: the causal
// model via cached incremental decoding, the bidirectional model via
// arbitrary-order generation with a full forward per step.
LatencyBenchmark bench_latency(const Transformer& causal, const Transformer& bidirectional,
                               std::size_t count, std::size_t length, const SamplerSpec& sampler,
                               std::uint64_t seed);

nlohmann::json to_json(const PplReport& report);
nlohmann::json to_json(const LatencyBenchmark& bench);

struct PplRow {
  std::string model;
  double sequential = 0.0;
  std::optional<double> random;  // absent prints as N/A
};

std::string format_ppl_table(std::span<const PplRow> rows);
std::string format_latency_table(const LatencyBenchmark& bench);

}  // namespace pmlm
