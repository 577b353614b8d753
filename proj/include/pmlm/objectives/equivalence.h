#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "pmlm/core/tokens.h"
#include "pmlm/model/transformer.h"

namespace pmlm {

// How often one (unrevealed set, next position) pair occurs across all N!
// generation orders, grouped by the size K of the unrevealed set.
struct DuplicationEntry {
  std::size_t n = 0;
  std::size_t k = 0;
  std::size_t groups = 0;           // distinct (set, position) pairs seen
  std::size_t expected_groups = 0;  // C(N, K) * K
  std::uint64_t count_min = 0;
  std::uint64_t count_max = 0;
  std::uint64_t expected = 0;  // (N-K)! (K-1)!
  bool matches = false;
};

inline constexpr std::size_t kMaxDuplicationAuditLength = 9;

std::vector<DuplicationEntry> duplication_audit(std::size_t n);

// Integer check that (N+1)! * integral_0^1 r^K (1-r)^(N-K) dr == (N-K)! K!,
// with the integral expanded binomially so every term is an exact integer.
struct BetaIdentityEntry {
  std::size_t n = 0;
  std::size_t k = 0;
  std::string scaled_integral;    // decimal
  std::string factorial_product;  // decimal
  bool matches = false;
};

inline constexpr std::size_t kMaxBetaIdentityLength = 24;

std::vector<BetaIdentityEntry> beta_identity_audit(std::size_t max_n);

struct EquivalenceReport {
  std::size_t n = 0;
  // sum_M alpha_M (1/K) sum_k log p(x_k | X_-Pi), a log-likelihood in nats.
  double pmlm_exact = 0.0;
  // Mean over all N! orders of the full order-wise log-likelihood.
  double aplm_mean = 0.0;
  // Sum over orders and steps divided by C = (N+1)!.
  double aplm_sum_over_c = 0.0;
  std::uint64_t constant_c = 0;
  double max_abs_gap = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::vector<DuplicationEntry> duplication;
};

inline constexpr std::size_t kMaxEquivalenceLength = 6;

// Evaluates both sides of the identity
//   (N+1) * sum_M alpha_M (1/K) sum_k log p = mean_sigma sum_t log p
// by separate enumerations (2^N masks, N! orders) under the uniform prior.
EquivalenceReport verify_equivalence(const Transformer& model, const TokenSequence& seq,
                                     double tolerance = 1e-9);

nlohmann::json to_json(const EquivalenceReport& report);
nlohmann::json to_json(const DuplicationEntry& entry);

}  // namespace pmlm
