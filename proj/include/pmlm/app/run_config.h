#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"
#include "pmlm/app/corpus.h"
#include "pmlm/masking/masking.h"
#include "pmlm/model/transformer.h"
#include "pmlm/objectives/objectives.h"

namespace pmlm {

struct TrainingOptions {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  std::size_t warmup_steps = 100;  // linear warmup, then linear decay to 10%
  double weight_decay = 0.0;
  double init_std = 0.02;
  std::optional<std::uint64_t> seed;
  ZeroMaskPolicy zero_mask_policy = ZeroMaskPolicy::kResampleOnce;
  std::size_t checkpoint_every = 0;  // 0: only at the end
};

struct RunConfig {
  std::string preset;  // informational
  TransformerConfig model;
  std::optional<MaskingPrior> prior;  // required for bidirectional, forbidden for causal
  TrainingOptions training;
  TokenizerKind tokenizer = TokenizerKind::kChar;
  std::string train_corpus;
  std::string test_corpus;
  std::string checkpoint;
  std::string loss_log;

  // Throws std::invalid_argument naming the first inconsistency.
  void validate() const;
};

// "upmlm" (bidirectional, uniform prior), "bert-like" (bidirectional,
// point mass at 0.15) or "gpt-like" (causal).
RunConfig preset_config(const std::string& name);

nlohmann::json prior_to_json(const MaskingPrior& prior);
MaskingPrior prior_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RunConfig& config);
// Starts from the named "preset" when present. The training seed is required.
RunConfig run_config_from_json(const nlohmann::json& j);

std::string to_string(ZeroMaskPolicy policy);
ZeroMaskPolicy parse_zero_mask_policy(const std::string& text);

}  // namespace pmlm
