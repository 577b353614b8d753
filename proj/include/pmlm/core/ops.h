#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pmlm/core/rng.h"
#include "pmlm/core/tensor.h"

namespace pmlm::ops {

// Differentiable primitives over 2-D row-major tensors (1-D for biases and
// layer-norm affine parameters). Each throws ShapeError naming the primitive
// and the offending shapes.

// [m,k] x [k,n] -> [m,n]; with transpose_b, b is [n,k].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// Adds a [n] vector to every row of an [m,n] matrix.
Tensor add_row(const Tensor& a, const Tensor& row);

Tensor sum(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);
// Mean of a list of scalars.
Tensor mean_of(std::span<const Tensor> scalars);

// Row-wise softmax. Entries equal to -inf get probability 0; a row that is
// entirely -inf yields all zeros.
Tensor softmax(const Tensor& a);

inline constexpr double kLayerNormEps = 1e-12;
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

// Exact (erf-based) GELU.
Tensor gelu(const Tensor& x);

// Rows of `table` ([V,H]) selected by ids -> [ids.size(), H].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);

inline constexpr std::int64_t kIgnoreTarget = -1;
// Mean over rows with target != kIgnoreTarget of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets);

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);

// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// bias[i][j] = table[head][clamp(j - (i + query_offset), -window, window) + window]
// for i < n_query, j < n_key. `table` is [heads, 2*window+1].
Tensor relative_bias(const Tensor& table, std::size_t head, std::size_t window,
                     std::size_t query_offset, std::size_t n_query,
                     std::size_t n_key);

// Non-differentiable helpers.
std::vector<double> log_softmax(std::span<const double> row);
std::vector<double> softmax(std::span<const double> row);

}  // namespace pmlm::ops
