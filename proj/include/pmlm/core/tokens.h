#pragma once

#include <cstdint>
#include <vector>

namespace pmlm {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

// Special ids are fixed so checkpoints stay portable across corpora.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kMaskId = 1;
inline constexpr TokenId kUnkId = 2;
inline constexpr TokenId kFirstContentId = 3;

// Causal models read a shifted input whose first slot holds [MASK], so the
// logit row at position n predicts token n from tokens 0..n-1.
inline constexpr TokenId kCausalStartId = kMaskId;

inline bool is_special(TokenId id) { return id < kFirstContentId; }

// Number of leading non-[PAD] tokens; padding only ever sits at the tail.
inline std::size_t content_length(const TokenSequence& seq) {
  std::size_t n = 0;
  while (n < seq.size() && seq[n] != kPadId) ++n;
  return n;
}

}  // namespace pmlm
