#include "pmlm/core/ops.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace pmlm::ops {

namespace {

using detail::make_result;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const char* want) {
  throw ShapeError(std::string(op) + ": shape " + shape_string(a) + " is not " + want);
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.dim() != 2) shape_fail(op, t.shape(), "a matrix");
}

TensorNode* grad_target(TensorNode& self, std::size_t i) {
  TensorNode* in = self.inputs[i].get();
  if (!in->requires_grad) return nullptr;
  in->ensure_grad();
  return in;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = transpose_b ? b.shape()[0] : b.shape()[1];
  const std::size_t bk = transpose_b ? b.shape()[1] : b.shape()[0];
  if (bk != k) shape_fail("matmul", a.shape(), b.shape());

  const double* A = a.data().data();
  const double* B = b.data().data();
  std::vector<double> out(m * n, 0.0);
  if (!transpose_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = out.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        const double* brow = B + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = A + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = B + j * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        out[i * n + j] = acc;
      }
    }
  }

  return make_result({m, n}, std::move(out), {a, b}, [m, k, n, transpose_b](TensorNode& self) {
    const double* dC = self.grad.data();
    const double* A = self.inputs[0]->data.data();
    const double* B = self.inputs[1]->data.data();
    if (TensorNode* ga = grad_target(self, 0)) {
      double* dA = ga->grad.data();
      for (std::size_t i = 0; i < m; ++i) {
        double* darow = dA + i * k;
        if (!transpose_b) {
          for (std::size_t p = 0; p < k; ++p) {
            const double* brow = B + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += dC[i * n + j] * brow[j];
            darow[p] += acc;
          }
        } else {
          for (std::size_t j = 0; j < n; ++j) {
            const double g = dC[i * n + j];
            const double* brow = B + j * k;
            for (std::size_t p = 0; p < k; ++p) darow[p] += g * brow[p];
          }
        }
      }
    }
    if (TensorNode* gb = grad_target(self, 1)) {
      double* dB = gb->grad.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        const double* dcrow = dC + i * n;
        if (!transpose_b) {
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = arow[p];
            double* dbrow = dB + p * n;
            for (std::size_t j = 0; j < n; ++j) dbrow[j] += aip * dcrow[j];
          }
        } else {
          for (std::size_t j = 0; j < n; ++j) {
            const double g = dcrow[j];
            double* dbrow = dB + j * k;
            for (std::size_t p = 0; p < k; ++p) dbrow[p] += g * arow[p];
          }
        }
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("add", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    for (std::size_t s = 0; s < 2; ++s) {
      if (TensorNode* g = grad_target(self, s)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    const auto& x = self.inputs[0]->data;
    const auto& y = self.inputs[1]->data;
    if (TensorNode* g = grad_target(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i] * y[i];
    }
    if (TensorNode* g = grad_target(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](TensorNode& self) {
    if (TensorNode* g = grad_target(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g->grad[i] += self.grad[i] * factor;
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_matrix("add_row", a);
  const std::size_t m = a.shape()[0];
  const std::size_t n = a.shape()[1];
  if (row.numel() != n || row.dim() != 1) shape_fail("add_row", a.shape(), row.shape());
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.data()[i * n + j] + row.data()[j];
  }
  return make_result(a.shape(), std::move(out), {a, row}, [m, n](TensorNode& self) {
    if (TensorNode* g = grad_target(self, 0)) {
      for (std::size_t i = 0; i < m * n; ++i) g->grad[i] += self.grad[i];
    }
    if (TensorNode* g = grad_target(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) g->grad[j] += self.grad[i * n + j];
      }
    }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result({1}, {total}, {a}, [](TensorNode& self) {
    if (TensorNode* g = grad_target(self, 0)) {
      for (double& v : g->grad) v += self.grad[0];
    }
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) shape_fail("dot", a.shape(), b.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) total += a.data()[i] * b.data()[i];
  return make_result({1}, {total}, {a, b}, [](TensorNode& self) {
    const auto& x = self.inputs[0]->data;
    const auto& y = self.inputs[1]->data;
    const double g0 = self.grad[0];
    if (TensorNode* g = grad_target(self, 0)) {
      for (std::size_t i = 0; i < y.size(); ++i) g->grad[i] += g0 * y[i];
    }
    if (TensorNode* g = grad_target(self, 1)) {
      for (std::size_t i = 0; i < x.size(); ++i) g->grad[i] += g0 * x[i];
    }
  });
}

Tensor mean_of(std::span<const Tensor> scalars) {
  if (scalars.empty()) throw ShapeError("mean_of: no operands");
  double total = 0.0;
  for (const auto& s : scalars) {
    if (s.numel() != 1) shape_fail("mean_of", s.shape(), "a scalar");
    total += s.data()[0];
  }
  const double inv = 1.0 / static_cast<double>(scalars.size());
  std::vector<Tensor> inputs(scalars.begin(), scalars.end());
  return make_result({1}, {total * inv}, std::move(inputs), [inv](TensorNode& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      if (TensorNode* g = grad_target(self, i)) g->grad[0] += self.grad[0] * inv;
    }
  });
}

Tensor softmax(const Tensor& a) {
  require_matrix("softmax", a);
  const std::size_t m = a.shape()[0];
  const std::size_t n = a.shape()[1];
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.data().data() + i * n;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) peak = std::max(peak, x[j]);
    if (peak == -std::numeric_limits<double>::infinity()) continue;
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(x[j] - peak);
      out[i * n + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  return make_result(a.shape(), std::move(out), {a}, [m, n](TensorNode& self) {
    TensorNode* g = grad_target(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.data.data() + i * n;
      const double* dy = self.grad.data() + i * n;
      double inner = 0.0;
      for (std::size_t j = 0; j < n; ++j) inner += y[j] * dy[j];
      for (std::size_t j = 0; j < n; ++j) g->grad[i * n + j] += y[j] * (dy[j] - inner);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_matrix("layer_norm", x);
  const std::size_t m = x.shape()[0];
  const std::size_t n = x.shape()[1];
  if (gamma.numel() != n) shape_fail("layer_norm", x.shape(), gamma.shape());
  if (beta.numel() != n) shape_fail("layer_norm", x.shape(), beta.shape());

  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mean) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gamma.data()[j] + beta.data()[j];
    }
  }

  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode& self) {
        const double* dy = self.grad.data();
        const double* g = self.inputs[1]->data.data();
        if (TensorNode* gx = grad_target(self, 0)) {
          std::vector<double> dxhat(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = dy[i * n + j] * g[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat[i * n + j];
            }
            mean_d /= static_cast<double>(n);
            mean_dx /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              gx->grad[i * n + j] +=
                  inv_std[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
            }
          }
        }
        if (TensorNode* gg = grad_target(self, 1)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) gg->grad[j] += dy[i * n + j] * xhat[i * n + j];
          }
        }
        if (TensorNode* gb = grad_target(self, 2)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) gb->grad[j] += dy[i * n + j];
          }
        }
      });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  }
  return make_result(x.shape(), std::move(out), {x}, [](TensorNode& self) {
    TensorNode* g = grad_target(self, 0);
    if (!g) return;
    const auto& in = self.inputs[0]->data;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double v = in[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g->grad[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
  require_matrix("embedding", table);
  const std::size_t vocab = table.shape()[0];
  const std::size_t width = table.shape()[1];
  std::vector<double> out(ids.size() * width);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[r]) + " at position " +
                              std::to_string(r) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[r]) * width, width,
                out.data() + r * width);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return make_result({ids.size(), width}, std::move(out), {table},
                     [width, saved = std::move(saved)](TensorNode& self) {
                       TensorNode* g = grad_target(self, 0);
                       if (!g) return;
                       for (std::size_t r = 0; r < saved.size(); ++r) {
                         double* dst = g->grad.data() + static_cast<std::size_t>(saved[r]) * width;
                         const double* src = self.grad.data() + r * width;
                         for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets) {
  require_matrix("cross_entropy", logits);
  const std::size_t m = logits.shape()[0];
  const std::size_t n = logits.shape()[1];
  if (targets.size() != m) {
    shape_fail("cross_entropy", logits.shape(), Shape{targets.size()});
  }
  std::vector<double> probs(m * n, 0.0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] == kIgnoreTarget) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= n) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) +
                              " at row " + std::to_string(i) + " outside " +
                              std::to_string(n) + " classes");
    }
    const double* row = logits.data().data() + i * n;
    const double peak = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - peak);
    const double log_z = peak + std::log(z);
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] = std::exp(row[j] - log_z);
    total += log_z - row[targets[i]];
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: every target is ignored");
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<std::int64_t> saved(targets.begin(), targets.end());
  return make_result({1}, {total * inv}, {logits},
                     [m, n, inv, probs = std::move(probs), saved = std::move(saved)](
                         TensorNode& self) {
                       TensorNode* g = grad_target(self, 0);
                       if (!g) return;
                       const double scale = self.grad[0] * inv;
                       for (std::size_t i = 0; i < m; ++i) {
                         if (saved[i] == kIgnoreTarget) continue;
                         for (std::size_t j = 0; j < n; ++j) {
                           g->grad[i * n + j] += scale * probs[i * n + j];
                         }
                         g->grad[i * n + static_cast<std::size_t>(saved[i])] -= scale;
                       }
                     });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_matrix("slice_cols", a);
  const std::size_t m = a.shape()[0];
  const std::size_t n = a.shape()[1];
  if (start + count > n) {
    shape_fail("slice_cols", a.shape(), Shape{start, start + count});
  }
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.data().data() + i * n + start, count, out.data() + i * count);
  }
  return make_result({m, count}, std::move(out), {a}, [m, n, start, count](TensorNode& self) {
    TensorNode* g = grad_target(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < count; ++j) {
        g->grad[i * n + start + j] += self.grad[i * count + j];
      }
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_matrix("concat_cols", p);
    if (p.shape()[0] != m) shape_fail("concat_cols", parts[0].shape(), p.shape());
    n += p.shape()[1];
  }
  std::vector<double> out(m * n);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[1];
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(p.data().data() + i * w, w, out.data() + i * n + offset);
    }
    offsets.push_back(offset);
    offset += w;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result({m, n}, std::move(out), std::move(inputs),
                     [m, n, offsets = std::move(offsets)](TensorNode& self) {
                       for (std::size_t s = 0; s < self.inputs.size(); ++s) {
                         TensorNode* g = grad_target(self, s);
                         if (!g) continue;
                         const std::size_t w = self.inputs[s]->shape[1];
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t j = 0; j < w; ++j) {
                             g->grad[i * w + j] += self.grad[i * n + offsets[s] + j];
                           }
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate " + std::to_string(rate) + " outside [0, 1)");
  }
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] = x.data()[i] * mask[i];
  }
  return make_result(x.shape(), std::move(out), {x}, [mask = std::move(mask)](TensorNode& self) {
    if (TensorNode* g = grad_target(self, 0)) {
      for (std::size_t i = 0; i < mask.size(); ++i) g->grad[i] += self.grad[i] * mask[i];
    }
  });
}

Tensor relative_bias(const Tensor& table, std::size_t head, std::size_t window,
                     std::size_t query_offset, std::size_t n_query, std::size_t n_key) {
  require_matrix("relative_bias", table);
  const std::size_t width = 2 * window + 1;
  if (table.shape()[1] != width || head >= table.shape()[0]) {
    shape_fail("relative_bias", table.shape(), Shape{head, width});
  }
  const auto w = static_cast<std::ptrdiff_t>(window);
  std::vector<std::size_t> slot(n_query * n_key);
  std::vector<double> out(n_query * n_key);
  for (std::size_t i = 0; i < n_query; ++i) {
    for (std::size_t j = 0; j < n_key; ++j) {
      const auto distance = static_cast<std::ptrdiff_t>(j) -
                            static_cast<std::ptrdiff_t>(i + query_offset);
      const std::size_t s = head * width + static_cast<std::size_t>(std::clamp(distance, -w, w) + w);
      slot[i * n_key + j] = s;
      out[i * n_key + j] = table.data()[s];
    }
  }
  return make_result({n_query, n_key}, std::move(out), {table},
                     [slot = std::move(slot)](TensorNode& self) {
                       TensorNode* g = grad_target(self, 0);
                       if (!g) return;
                       for (std::size_t i = 0; i < slot.size(); ++i) g->grad[slot[i]] += self.grad[i];
                     });
}

std::vector<double> log_softmax(std::span<const double> row) {
  std::vector<double> out(row.size());
  if (row.empty()) return out;
  const double peak = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double v : row) z += std::exp(v - peak);
  const double log_z = peak + std::log(z);
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = row[j] - log_z;
  return out;
}

std::vector<double> softmax(std::span<const double> row) {
  auto out = log_softmax(row);
  for (double& v : out) v = std::exp(v);
  return out;
}

}  // namespace pmlm::ops
