#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pmlm/core/rng.h"

namespace pmlm {

enum class PriorKind { kUniform, kPointMass, kTruncatedUniform };

std::string to_string(PriorKind kind);

// Distribution p(r) over the per-instance masking ratio.
class MaskingPrior {
 public:
  static MaskingPrior uniform();
  static MaskingPrior point_mass(double r0);
  // Uniform on [lower, upper]; requires 0 <= lower < upper <= 1.
  static MaskingPrior truncated_uniform(double lower, double upper);

  PriorKind kind() const { return kind_; }
  double r0() const { return r0_; }
  double lower() const { return lower_; }
  double upper() const { return upper_; }
  double mean() const;

  bool operator==(const MaskingPrior&) const = default;

 private:
  MaskingPrior(PriorKind kind, double r0, double lower, double upper)
      : kind_(kind), r0_(r0), lower_(lower), upper_(upper) {}

  PriorKind kind_;
  double r0_;
  double lower_;
  double upper_;
};

// Binary mask over a sequence together with its sorted masked index set.
// Positions that are [PAD] are ineligible and never masked.
struct MaskPattern {
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> masked;
  std::size_t eligible = 0;  // non-[PAD] positions; the N of the mask prior

  std::size_t length() const { return mask.size(); }
  std::size_t count() const { return masked.size(); }

  // All positions eligible.
  static MaskPattern from_mask(std::vector<std::uint8_t> mask);
  static MaskPattern from_indices(std::size_t length, std::span<const std::size_t> indices);
};

struct MaskWeight {
  double log_alpha;
  double alpha() const;
};

double sample_ratio(const MaskingPrior& prior, Rng& rng);

// Each eligible position is masked independently with probability r.
// `pad_flags`, when non-empty, has one entry per position (nonzero = [PAD]).
MaskPattern sample_mask(std::size_t length, double ratio, Rng& rng,
                        std::span<const std::uint8_t> pad_flags = {});

// Marginal probability of a pattern with the ratio integrated out.
MaskWeight mask_probability(const MaskPattern& pattern, const MaskingPrior& prior);
double log_mask_probability(std::size_t n, std::size_t k, const MaskingPrior& prior);

inline constexpr std::size_t kMaxEnumerationLength = 16;

// Every one of the 2^n patterns, ordered by bitmask value (bit i = position i).
std::vector<MaskPattern> enumerate_masks(std::size_t n);

}  // namespace pmlm
