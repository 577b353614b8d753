#pragma once

#include <cstddef>
#include <optional>

#include "pmlm/core/rng.h"
#include "pmlm/core/tensor.h"
#include "pmlm/core/tokens.h"
#include "pmlm/masking/masking.h"
#include "pmlm/model/transformer.h"

namespace pmlm {

// Mean negative log-likelihood in nats over the contributing positions.
struct LossValue {
  double value = 0.0;
  std::size_t token_count = 0;
};

// What a sampled pattern with no masked position does during training.
enum class ZeroMaskPolicy {
  kZeroLoss,      // contributes zero loss; the estimator stays unbiased
  kResampleOnce,  // draw (r, M) once more; still zero loss if K stays 0
};

inline constexpr std::size_t kMaxExactPmlmLength = 8;
inline constexpr std::size_t kMaxExactAplmLength = 6;

// Input to a causal model for teacher-forced scoring of `seq`: the start
// token followed by all but the last content token.
TokenSequence causal_input(const TokenSequence& seq);

// `seq` with [MASK] written at every masked position.
TokenSequence apply_mask(const TokenSequence& seq, const MaskPattern& pattern);

// Teacher-forced left-to-right objective; requires a causal model.
Tensor ar_loss_graph(const Transformer& model, const TokenSequence& seq,
                     const ForwardOptions& options = {});
LossValue ar_loss(const Transformer& model, const TokenSequence& seq);

// Mean NLL of the masked tokens given the unmasked ones; requires a
// bidirectional model and at least one masked position.
Tensor mlm_loss_graph(const Transformer& model, const TokenSequence& seq,
                      const MaskPattern& pattern, const ForwardOptions& options = {});
LossValue mlm_loss(const Transformer& model, const TokenSequence& seq, const MaskPattern& pattern);

struct MaskedSample {
  double ratio = 0.0;
  MaskPattern pattern;
  std::optional<Tensor> loss;  // empty when no position ended up masked
};

// Draws r ~ prior and M ~ Bernoulli(r) per content position, then builds the
// masked-LM loss graph.
MaskedSample sample_pmlm_loss(const Transformer& model, const TokenSequence& seq,
                              const MaskingPrior& prior, Rng& rng, ZeroMaskPolicy policy,
                              const ForwardOptions& options = {});

// One sampled estimate of the probabilistic-masking objective, evaluated
// without dropout. With kZeroLoss its expectation is pmlm_exact_loss; with
// kResampleOnce it is (1 + P(K=0)) times that.
LossValue pmlm_training_step(const Transformer& model, const TokenSequence& seq,
                             const MaskingPrior& prior, Rng& rng,
                             ZeroMaskPolicy policy = ZeroMaskPolicy::kResampleOnce);

// -sum_M alpha_M (1/K) sum_k log p(x_k | unmasked), K = 0 term taken as 0.
// Enumerates all 2^N patterns over the content positions (N <= 8).
LossValue pmlm_exact_loss(const Transformer& model, const TokenSequence& seq,
                          const MaskingPrior& prior);

// -(1/(N * N!)) sum over all orders sigma and steps t of
// log p(x_sigma_t | x_sigma_1..x_sigma_{t-1}), each conditional read from the
// bidirectional model with the unrevealed positions masked (N <= 6).
LossValue aplm_exact_loss(const Transformer& model, const TokenSequence& seq);

}  // namespace pmlm
