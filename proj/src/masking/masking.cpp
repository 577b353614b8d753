#include "pmlm/masking/masking.h"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace pmlm {

std::string to_string(PriorKind kind) {
  switch (kind) {
    case PriorKind::kUniform: return "uniform";
    case PriorKind::kPointMass: return "point_mass";
    case PriorKind::kTruncatedUniform: return "truncated_uniform";
  }
  return "unknown";
}

MaskingPrior MaskingPrior::uniform() { return MaskingPrior(PriorKind::kUniform, 0.0, 0.0, 1.0); }

MaskingPrior MaskingPrior::point_mass(double r0) {
  if (!(r0 >= 0.0 && r0 <= 1.0)) {
    throw std::invalid_argument("point_mass prior: r0 = " + std::to_string(r0) + " outside [0, 1]");
  }
  return MaskingPrior(PriorKind::kPointMass, r0, r0, r0);
}

MaskingPrior MaskingPrior::truncated_uniform(double lower, double upper) {
  if (!(lower >= 0.0 && upper <= 1.0 && lower < upper)) {
    throw std::invalid_argument("truncated_uniform prior: need 0 <= a < b <= 1, got a = " +
                                std::to_string(lower) + ", b = " + std::to_string(upper));
  }
  return MaskingPrior(PriorKind::kTruncatedUniform, 0.0, lower, upper);
}

double MaskingPrior::mean() const {
  return kind_ == PriorKind::kPointMass ? r0_ : 0.5 * (lower_ + upper_);
}

MaskPattern MaskPattern::from_mask(std::vector<std::uint8_t> mask) {
  MaskPattern p;
  p.eligible = mask.size();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) p.masked.push_back(i);
  }
  p.mask = std::move(mask);
  return p;
}

MaskPattern MaskPattern::from_indices(std::size_t length, std::span<const std::size_t> indices) {
  std::vector<std::uint8_t> mask(length, 0);
  for (std::size_t i : indices) {
    if (i >= length) {
      throw std::out_of_range("mask pattern: index " + std::to_string(i) + " outside length " +
                              std::to_string(length));
    }
    mask[i] = 1;
  }
  return from_mask(std::move(mask));
}

double MaskWeight::alpha() const { return std::exp(log_alpha); }

double sample_ratio(const MaskingPrior& prior, Rng& rng) {
  switch (prior.kind()) {
    case PriorKind::kPointMass: return prior.r0();
    case PriorKind::kUniform:
    case PriorKind::kTruncatedUniform: return rng.uniform(prior.lower(), prior.upper());
  }
  return 0.0;
}

MaskPattern sample_mask(std::size_t length, double ratio, Rng& rng,
                        std::span<const std::uint8_t> pad_flags) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw std::invalid_argument("sample_mask: ratio " + std::to_string(ratio) + " outside [0, 1]");
  }
  if (!pad_flags.empty() && pad_flags.size() != length) {
    throw std::invalid_argument("sample_mask: pad flags cover " + std::to_string(pad_flags.size()) +
                                " positions, sequence has " + std::to_string(length));
  }
  MaskPattern p;
  p.mask.assign(length, 0);
  for (std::size_t i = 0; i < length; ++i) {
    if (!pad_flags.empty() && pad_flags[i]) continue;
    ++p.eligible;
    if (rng.uniform() < ratio) {
      p.mask[i] = 1;
      p.masked.push_back(i);
    }
  }
  return p;
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Gauss-Legendre nodes/weights on [-1, 1]; exact for polynomials of degree
// below 2 * points.
void gauss_legendre(std::size_t points, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.assign(points, 0.0);
  weights.assign(points, 0.0);
  const std::size_t half = (points + 1) / 2;
  const double n = static_cast<double>(points);
  for (std::size_t i = 0; i < half; ++i) {
    double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (n + 0.5));
    double derivative = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p1 = 1.0;
      double p2 = 0.0;
      for (std::size_t j = 1; j <= points; ++j) {
        const double p3 = p2;
        p2 = p1;
        const double jd = static_cast<double>(j);
        p1 = ((2.0 * jd - 1.0) * z * p2 - (jd - 1.0) * p3) / jd;
      }
      derivative = n * (z * p1 - p2) / (z * z - 1.0);
      const double step = p1 / derivative;
      z -= step;
      if (std::abs(step) < 1e-16) break;
    }
    nodes[i] = -z;
    nodes[points - 1 - i] = z;
    weights[i] = weights[points - 1 - i] = 2.0 / ((1.0 - z * z) * derivative * derivative);
  }
}

// log of (1/(b-a)) * integral_a^b r^k (1-r)^(n-k) dr. The integrand is a
// polynomial of degree n, so the quadrature below is exact up to rounding.
double log_truncated_integral(std::size_t n, std::size_t k, double a, double b) {
  std::vector<double> nodes;
  std::vector<double> weights;
  gauss_legendre(n / 2 + 2, nodes, weights);
  const double half_width = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  std::vector<double> terms;
  terms.reserve(nodes.size());
  double peak = kNegInf;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double r = mid + half_width * nodes[i];
    const double term = std::log(weights[i]) + static_cast<double>(k) * std::log(r) +
                        static_cast<double>(n - k) * std::log1p(-r);
    terms.push_back(term);
    peak = std::max(peak, term);
  }
  if (peak == kNegInf) return kNegInf;
  double total = 0.0;
  for (double t : terms) total += std::exp(t - peak);
  // half_width / (b - a) == 1/2
  return peak + std::log(total) + std::log(0.5);
}

}  // namespace

double log_mask_probability(std::size_t n, std::size_t k, const MaskingPrior& prior) {
  if (k > n) throw std::invalid_argument("mask probability: K exceeds N");
  const double nd = static_cast<double>(n);
  const double kd = static_cast<double>(k);
  switch (prior.kind()) {
    case PriorKind::kUniform:
      return std::lgamma(nd - kd + 1.0) + std::lgamma(kd + 1.0) - std::lgamma(nd + 2.0);
    case PriorKind::kPointMass: {
      const double r = prior.r0();
      const double masked = k == 0 ? 0.0 : (r == 0.0 ? kNegInf : kd * std::log(r));
      const double kept = k == n ? 0.0 : (r == 1.0 ? kNegInf : (nd - kd) * std::log1p(-r));
      return masked + kept;
    }
    case PriorKind::kTruncatedUniform:
      return log_truncated_integral(n, k, prior.lower(), prior.upper());
  }
  return kNegInf;
}

MaskWeight mask_probability(const MaskPattern& pattern, const MaskingPrior& prior) {
  if (pattern.masked.size() > pattern.eligible) {
    throw std::invalid_argument("mask probability: pattern masks more positions than are eligible");
  }
  return MaskWeight{log_mask_probability(pattern.eligible, pattern.count(), prior)};
}

std::vector<MaskPattern> enumerate_masks(std::size_t n) {
  if (n > kMaxEnumerationLength) {
    throw std::invalid_argument("enumerate_masks: N = " + std::to_string(n) +
                                " exceeds the enumeration limit of " +
                                std::to_string(kMaxEnumerationLength));
  }
  std::vector<MaskPattern> out;
  out.reserve(std::size_t{1} << n);
  for (std::size_t bits = 0; bits < (std::size_t{1} << n); ++bits) {
    std::vector<std::uint8_t> mask(n);
    for (std::size_t i = 0; i < n; ++i) mask[i] = (bits >> i) & 1U;
    out.push_back(MaskPattern::from_mask(std::move(mask)));
  }
  return out;
}

}  // namespace pmlm
