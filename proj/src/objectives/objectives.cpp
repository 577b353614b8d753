#include "pmlm/objectives/objectives.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "pmlm/core/ops.h"

namespace pmlm {

namespace {

void require_mode(const Transformer& model, AttentionMode mode, const char* what) {
  if (model.config().attention_mode != mode) {
    throw std::invalid_argument(std::string(what) + " requires a " + to_string(mode) +
                                " model, got " + to_string(model.config().attention_mode));
  }
}

std::size_t checked_content_length(const TokenSequence& seq, const char* what) {
  const std::size_t n = content_length(seq);
  if (n == 0) throw std::invalid_argument(std::string(what) + ": sequence has no content tokens");
  for (std::size_t i = n; i < seq.size(); ++i) {
    if (seq[i] != kPadId) {
      throw std::invalid_argument(std::string(what) + ": [PAD] at position " + std::to_string(n) +
                                  " is followed by content");
    }
  }
  return n;
}

std::vector<std::uint8_t> pad_flags(const TokenSequence& seq) {
  std::vector<std::uint8_t> flags(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) flags[i] = seq[i] == kPadId;
  return flags;
}

// Sum of log p(seq[i] | input) over `positions`, one forward pass.
double sum_log_probs(const Transformer& model, const TokenSequence& input,
                     const TokenSequence& seq, std::span<const std::size_t> positions) {
  const Tensor logits = model.forward(std::span(input).first(content_length(seq)));
  const std::size_t vocab = logits.cols();
  double total = 0.0;
  for (std::size_t pos : positions) {
    const auto row = logits.data().subspan(pos * vocab, vocab);
    total += ops::log_softmax(row)[static_cast<std::size_t>(seq[pos])];
  }
  return total;
}

}  // namespace

TokenSequence causal_input(const TokenSequence& seq) {
  const std::size_t n = content_length(seq);
  TokenSequence input;
  input.reserve(n);
  if (n == 0) return input;
  input.push_back(kCausalStartId);
  input.insert(input.end(), seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(n - 1));
  return input;
}

TokenSequence apply_mask(const TokenSequence& seq, const MaskPattern& pattern) {
  if (pattern.length() != seq.size()) {
    throw std::invalid_argument("apply_mask: pattern covers " + std::to_string(pattern.length()) +
                                " positions, sequence has " + std::to_string(seq.size()));
  }
  TokenSequence out = seq;
  for (std::size_t pos : pattern.masked) {
    if (seq[pos] == kPadId) {
      throw std::invalid_argument("apply_mask: position " + std::to_string(pos) + " is [PAD]");
    }
    out[pos] = kMaskId;
  }
  return out;
}

Tensor ar_loss_graph(const Transformer& model, const TokenSequence& seq,
                     const ForwardOptions& options) {
  require_mode(model, AttentionMode::kCausal, "ar_loss");
  const std::size_t n = checked_content_length(seq, "ar_loss");
  const Tensor logits = model.forward(causal_input(seq), options);
  std::vector<std::int64_t> targets(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(n));
  return ops::cross_entropy(logits, targets);
}

LossValue ar_loss(const Transformer& model, const TokenSequence& seq) {
  NoGradGuard no_grad;
  return {ar_loss_graph(model, seq).item(), content_length(seq)};
}

Tensor mlm_loss_graph(const Transformer& model, const TokenSequence& seq,
                      const MaskPattern& pattern, const ForwardOptions& options) {
  require_mode(model, AttentionMode::kBidirectional, "mlm_loss");
  if (pattern.count() == 0) {
    throw std::invalid_argument("mlm_loss: pattern masks no position (K = 0)");
  }
  // Trailing [PAD] keys are invisible to content rows, so they are dropped from the forward.
  const std::size_t n = checked_content_length(seq, "mlm_loss");
  const TokenSequence input = apply_mask(seq, pattern);
  const Tensor logits = model.forward(std::span(input).first(n), options);
  std::vector<std::int64_t> targets(n, ops::kIgnoreTarget);
  for (std::size_t pos : pattern.masked) targets[pos] = seq[pos];
  return ops::cross_entropy(logits, targets);
}

LossValue mlm_loss(const Transformer& model, const TokenSequence& seq, const MaskPattern& pattern) {
  NoGradGuard no_grad;
  return {mlm_loss_graph(model, seq, pattern).item(), pattern.count()};
}

MaskedSample sample_pmlm_loss(const Transformer& model, const TokenSequence& seq,
                              const MaskingPrior& prior, Rng& rng, ZeroMaskPolicy policy,
                              const ForwardOptions& options) {
  require_mode(model, AttentionMode::kBidirectional, "pmlm loss");
  checked_content_length(seq, "pmlm loss");
  const auto flags = pad_flags(seq);
  MaskedSample sample;
  sample.ratio = sample_ratio(prior, rng);
  sample.pattern = sample_mask(seq.size(), sample.ratio, rng, flags);
  if (sample.pattern.count() == 0 && policy == ZeroMaskPolicy::kResampleOnce) {
    sample.ratio = sample_ratio(prior, rng);
    sample.pattern = sample_mask(seq.size(), sample.ratio, rng, flags);
  }
  if (sample.pattern.count() > 0) {
    sample.loss = mlm_loss_graph(model, seq, sample.pattern, options);
  }
  return sample;
}

LossValue pmlm_training_step(const Transformer& model, const TokenSequence& seq,
                             const MaskingPrior& prior, Rng& rng, ZeroMaskPolicy policy) {
  NoGradGuard no_grad;
  const MaskedSample sample = sample_pmlm_loss(model, seq, prior, rng, policy);
  if (!sample.loss) return {0.0, 0};
  return {sample.loss->item(), sample.pattern.count()};
}

LossValue pmlm_exact_loss(const Transformer& model, const TokenSequence& seq,
                          const MaskingPrior& prior) {
  require_mode(model, AttentionMode::kBidirectional, "pmlm_exact_loss");
  const std::size_t n = checked_content_length(seq, "pmlm_exact_loss");
  if (n > kMaxExactPmlmLength) {
    throw std::invalid_argument("pmlm_exact_loss: N = " + std::to_string(n) +
                                " exceeds the exact-enumeration limit of " +
                                std::to_string(kMaxExactPmlmLength));
  }
  NoGradGuard no_grad;
  double total = 0.0;
  for (const MaskPattern& content : enumerate_masks(n)) {
    if (content.count() == 0) continue;
    const double log_alpha = mask_probability(content, prior).log_alpha;
    if (log_alpha == -std::numeric_limits<double>::infinity()) continue;
    std::vector<std::uint8_t> mask = content.mask;
    mask.resize(seq.size(), 0);
    const MaskPattern pattern = MaskPattern::from_mask(std::move(mask));
    const double log_lik = sum_log_probs(model, apply_mask(seq, pattern), seq, pattern.masked);
    total += std::exp(log_alpha) * log_lik / static_cast<double>(content.count());
  }
  return {-total, n};
}

LossValue aplm_exact_loss(const Transformer& model, const TokenSequence& seq) {
  require_mode(model, AttentionMode::kBidirectional, "aplm_exact_loss");
  const std::size_t n = checked_content_length(seq, "aplm_exact_loss");
  if (n > kMaxExactAplmLength) {
    throw std::invalid_argument("aplm_exact_loss: N = " + std::to_string(n) +
                                " exceeds the permutation-enumeration limit of " +
                                std::to_string(kMaxExactAplmLength));
  }
  NoGradGuard no_grad;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  std::size_t orders = 0;
  do {
    TokenSequence input = seq;
    for (std::size_t i = 0; i < n; ++i) input[i] = kMaskId;
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t pos = order[t];
      total += sum_log_probs(model, input, seq, std::span<const std::size_t>(&pos, 1));
      input[pos] = seq[pos];
    }
    ++orders;
  } while (std::next_permutation(order.begin(), order.end()));
  return {-total / (static_cast<double>(n) * static_cast<double>(orders)), n};
}

}  // namespace pmlm
