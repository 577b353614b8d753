#include "pmlm/objectives/equivalence.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <utility>

#include "pmlm/core/ops.h"
#include "pmlm/masking/masking.h"

namespace pmlm {

using nlohmann::json;

namespace {

using Int128 = __int128;

Int128 factorial(std::size_t n) {
  Int128 f = 1;
  for (std::size_t i = 2; i <= n; ++i) f *= static_cast<Int128>(i);
  return f;
}

Int128 binomial(std::size_t n, std::size_t k) {
  Int128 c = 1;
  for (std::size_t i = 1; i <= k; ++i) c = c * static_cast<Int128>(n - k + i) / static_cast<Int128>(i);
  return c;
}

std::string to_decimal(Int128 v) {
  if (v == 0) return "0";
  const bool negative = v < 0;
  std::string digits;
  while (v != 0) {
    const int d = static_cast<int>(v % 10);
    digits.push_back(static_cast<char>('0' + (negative ? -d : d)));
    v /= 10;
  }
  if (negative) digits.push_back('-');
  return {digits.rbegin(), digits.rend()};
}

double log_prob_at(const Transformer& model, const TokenSequence& input, const TokenSequence& seq,
                   std::size_t pos) {
  const Tensor logits = model.forward(input);
  const std::size_t vocab = logits.cols();
  return ops::log_softmax(logits.data().subspan(pos * vocab, vocab))[static_cast<std::size_t>(seq[pos])];
}

}  // namespace

std::vector<DuplicationEntry> duplication_audit(std::size_t n) {
  if (n == 0 || n > kMaxDuplicationAuditLength) {
    throw std::invalid_argument("duplication_audit: N must lie in [1, " +
                                std::to_string(kMaxDuplicationAuditLength) + "]");
  }
  // Key: (bitmask of positions not yet revealed, position revealed next).
  std::map<std::pair<std::uint32_t, std::size_t>, std::uint64_t> counts;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::uint32_t full = (std::uint32_t{1} << n) - 1;
  do {
    std::uint32_t hidden = full;
    for (std::size_t t = 0; t < n; ++t) {
      ++counts[{hidden, order[t]}];
      hidden &= ~(std::uint32_t{1} << order[t]);
    }
  } while (std::next_permutation(order.begin(), order.end()));

  std::vector<DuplicationEntry> entries(n);
  for (std::size_t k = 1; k <= n; ++k) {
    auto& e = entries[k - 1];
    e.n = n;
    e.k = k;
    e.expected_groups = static_cast<std::size_t>(binomial(n, k)) * k;
    e.expected = static_cast<std::uint64_t>(factorial(n - k) * factorial(k - 1));
    e.count_min = std::numeric_limits<std::uint64_t>::max();
  }
  for (const auto& [key, count] : counts) {
    auto& e = entries[static_cast<std::size_t>(std::popcount(key.first)) - 1];
    ++e.groups;
    e.count_min = std::min(e.count_min, count);
    e.count_max = std::max(e.count_max, count);
  }
  for (auto& e : entries) {
    e.matches = e.groups == e.expected_groups && e.count_min == e.expected && e.count_max == e.expected;
  }
  return entries;
}

std::vector<BetaIdentityEntry> beta_identity_audit(std::size_t max_n) {
  if (max_n > kMaxBetaIdentityLength) {
    throw std::invalid_argument("beta_identity_audit: N above " +
                                std::to_string(kMaxBetaIdentityLength) + " overflows 128-bit arithmetic");
  }
  std::vector<BetaIdentityEntry> out;
  for (std::size_t n = 0; n <= max_n; ++n) {
    const Int128 scale = factorial(n + 1);
    for (std::size_t k = 0; k <= n; ++k) {
      // integral_0^1 r^k (1-r)^(n-k) dr = sum_j (-1)^j C(n-k, j) / (k + j + 1)
      Int128 scaled = 0;
      for (std::size_t j = 0; j <= n - k; ++j) {
        const Int128 term = binomial(n - k, j) * (scale / static_cast<Int128>(k + j + 1));
        scaled += (j % 2 == 0) ? term : -term;
      }
      const Int128 product = factorial(n - k) * factorial(k);
      out.push_back({n, k, to_decimal(scaled), to_decimal(product), scaled == product});
    }
  }
  return out;
}

EquivalenceReport verify_equivalence(const Transformer& model, const TokenSequence& seq,
                                     double tolerance) {
  if (model.config().attention_mode != AttentionMode::kBidirectional) {
    throw std::invalid_argument("verify_equivalence requires a bidirectional model");
  }
  const std::size_t n = content_length(seq);
  if (n == 0 || n != seq.size()) {
    throw std::invalid_argument("verify_equivalence: sequence must be non-empty and unpadded");
  }
  if (n > kMaxEquivalenceLength) {
    throw std::invalid_argument("verify_equivalence: N = " + std::to_string(n) +
                                " exceeds the limit of " + std::to_string(kMaxEquivalenceLength));
  }
  NoGradGuard no_grad;
  EquivalenceReport report;
  report.n = n;
  report.tolerance = tolerance;
  report.constant_c = static_cast<std::uint64_t>(factorial(n + 1));

  // Masked-LM side: every pattern, weighted by its uniform-prior probability.
  const MaskingPrior uniform = MaskingPrior::uniform();
  for (const MaskPattern& pattern : enumerate_masks(n)) {
    if (pattern.count() == 0) continue;
    const TokenSequence input = [&] {
      TokenSequence in = seq;
      for (std::size_t pos : pattern.masked) in[pos] = kMaskId;
      return in;
    }();
    const Tensor logits = model.forward(input);
    const std::size_t vocab = logits.cols();
    double log_lik = 0.0;
    for (std::size_t pos : pattern.masked) {
      log_lik += ops::log_softmax(logits.data().subspan(pos * vocab, vocab))[static_cast<std::size_t>(seq[pos])];
    }
    report.pmlm_exact += mask_probability(pattern, uniform).alpha() * log_lik /
                         static_cast<double>(pattern.count());
  }

  // Permutation side: one forward per (order, step).
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  std::uint64_t orders = 0;
  do {
    TokenSequence input(n, kMaskId);
    for (std::size_t t = 0; t < n; ++t) {
      total += log_prob_at(model, input, seq, order[t]);
      input[order[t]] = seq[order[t]];
    }
    ++orders;
  } while (std::next_permutation(order.begin(), order.end()));
  report.aplm_mean = total / static_cast<double>(orders);
  report.aplm_sum_over_c = total / static_cast<double>(report.constant_c);

  const double scaled_gap =
      std::abs(static_cast<double>(n + 1) * report.pmlm_exact - report.aplm_mean);
  const double normalized_gap = std::abs(report.pmlm_exact - report.aplm_sum_over_c);
  report.max_abs_gap = std::max(scaled_gap, normalized_gap);
  report.duplication = duplication_audit(n);
  const bool audit_ok = std::all_of(report.duplication.begin(), report.duplication.end(),
                                    [](const DuplicationEntry& e) { return e.matches; });
  report.passed = std::isfinite(report.max_abs_gap) && report.max_abs_gap < tolerance && audit_ok;
  return report;
}

json to_json(const DuplicationEntry& e) {
  return json{{"n", e.n},
              {"k", e.k},
              {"groups", e.groups},
              {"expected_groups", e.expected_groups},
              {"count_min", e.count_min},
              {"count_max", e.count_max},
              {"expected", e.expected},
              {"matches", e.matches}};
}

json to_json(const EquivalenceReport& r) {
  json audit = json::array();
  for (const auto& e : r.duplication) audit.push_back(to_json(e));
  return json{{"N", r.n},
              {"pmlm_exact", r.pmlm_exact},
              {"pmlm_exact_times_n_plus_1", static_cast<double>(r.n + 1) * r.pmlm_exact},
              {"aplm_mean", r.aplm_mean},
              {"aplm_sum_over_c", r.aplm_sum_over_c},
              {"constant_C", r.constant_c},
              {"max_abs_gap", r.max_abs_gap},
              {"tolerance", r.tolerance},
              {"passed", r.passed},
              {"duplication_audit", audit}};
}

}  // namespace pmlm
