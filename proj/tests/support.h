#pragma once

// Shared test helpers: finite-difference gradient checks and plain-loop
// reference implementations that use no library op.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mednli/model.h"
#include "mednli/rng.h"
#include "mednli/tensor.h"
#include "mednli/transformer.h"

namespace testing {

using mednli::Rng;
using mednli::Tensor;

using Matrix = std::vector<std::vector<double>>;

inline Tensor random_tensor(const mednli::Shape& shape, Rng& rng, double scale = 1.0, bool grad = false) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return Tensor(shape, std::move(v), grad);
}

inline Matrix to_matrix(const Tensor& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

inline double max_abs_diff(const Tensor& t, const Matrix& m) {
  double worst = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) worst = std::max(worst, std::abs(t(i, j) - m[i][j]));
  return worst;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
// gradients that are zero up to rounding from dominating the ratio.
inline constexpr double kRelativeFloor = 1e-6;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), kRelativeFloor});
}

struct GradCheck {
  double max_relative = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Adds uniform noise to every parameter. Zero-initialized biases meet
// zero-padded inputs exactly at relu's kink, where finite differences
// see a one-sided slope; a gradient check needs a generic point.
inline void jitter(const std::vector<mednli::NamedTensor>& params, Rng& rng, double scale = 0.05) {
  for (auto p : params)
    for (auto& v : p.tensor.mutable_data()) v += rng.uniform(-scale, scale);
}

// Central differences with step h against one backward pass of loss().
inline GradCheck gradient_check(const std::vector<mednli::NamedTensor>& params,
                                const std::function<Tensor()>& loss, double h = 1e-5) {
  for (auto p : params) p.tensor.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    auto g = p.tensor.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(p.tensor.size(), 0.0);
  }
  GradCheck result;
  mednli::NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss().item();
      data[i] = saved - h;
      const double down = loss().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[k][i], numeric);
      if (err > result.max_relative) {
        result.max_relative = err;
        result.worst_parameter = params[k].name;
        result.worst_index = i;
      }
      ++result.checked;
    }
  }
  return result;
}

// ---- plain-loop references ------------------------------------------------

inline Matrix naive_linear(const Matrix& x, const Tensor& w, const Tensor& b) {
  Matrix y(x.size(), std::vector<double>(w.cols(), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = b(j);
      for (std::size_t k = 0; k < w.rows(); ++k) s += x[i][k] * w(k, j);
      y[i][j] = s;
    }
  return y;
}

inline std::vector<double> naive_softmax(std::vector<double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (auto& v : z) total += (v = std::exp(v - m));
  for (auto& v : z) v /= total;
  return z;
}

// Scaled dot-product attention per head with additive -1e9 on masked keys.
inline Matrix naive_multi_head_attention(const Tensor& x, std::span<const int> mask,
                                         const mednli::AttentionParams& p, std::size_t heads) {
  Matrix xm = to_matrix(x);
  const std::size_t len = xm.size(), d = x.cols(), dk = d / heads;
  Matrix q = naive_linear(xm, p.query_w, p.query_b);
  Matrix k = naive_linear(xm, p.key_w, p.key_b);
  Matrix v = naive_linear(xm, p.value_w, p.value_b);
  Matrix concat(len, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < len; ++i) {
      std::vector<double> scores(len);
      for (std::size_t j = 0; j < len; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dk; ++c) s += q[i][h * dk + c] * k[j][h * dk + c];
        scores[j] = s / std::sqrt(static_cast<double>(dk)) + (mask[j] ? 0.0 : -1e9);
      }
      auto a = naive_softmax(scores);
      for (std::size_t c = 0; c < dk; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < len; ++j) s += a[j] * v[j][h * dk + c];
        concat[i][h * dk + c] = s;
      }
    }
  }
  return naive_linear(concat, p.output_w, p.output_b);
}

// Column layout: premise [d x n], hypothesis [d x m], w [d x d].
inline Matrix naive_cross_attention(const Tensor& premise, const Tensor& hypothesis, const Tensor& w) {
  const std::size_t d = premise.rows(), n = premise.cols(), m = hypothesis.cols();
  Matrix wp(d, std::vector<double>(n, 0.0));
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) wp[r][i] += w(r, c) * premise(c, i);
  Matrix out(d, std::vector<double>(m, 0.0));
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> logits(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < d; ++r) logits[i] += wp[r][i] * hypothesis(r, j);
    auto a = naive_softmax(logits);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t i = 0; i < n; ++i) out[r][j] += premise(r, i) * a[i];
  }
  return out;
}

inline std::vector<double> naive_conv_maxpool(const Tensor& input, std::span<const mednli::ConvBank> banks,
                                              bool relu_activation) {
  const std::size_t channels = input.rows(), length = input.cols();
  std::vector<double> out;
  for (const auto& bank : banks) {
    for (std::size_t f = 0; f < bank.weight.rows(); ++f) {
      double best = -INFINITY;
      for (std::size_t t = 0; t + bank.width <= length; ++t) {
        double z = bank.bias(f);
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t o = 0; o < bank.width; ++o) z += bank.weight(f, c * bank.width + o) * input(c, t + o);
        best = std::max(best, relu_activation ? std::max(z, 0.0) : z);
      }
      out.push_back(best);
    }
  }
  return out;
}

// All six assignments written out; first strict maximum wins.
inline std::array<int, 3> brute_force_listwise(const std::array<std::array<double, 3>, 3>& probs) {
  static constexpr std::array<std::array<int, 3>, 6> perms{
      {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  std::array<int, 3> best = perms[0];
  double best_score = -INFINITY;
  for (const auto& p : perms) {
    const double s = std::log(probs[0][p[0]]) + std::log(probs[1][p[1]]) + std::log(probs[2][p[2]]);
    if (s > best_score) {
      best_score = s;
      best = p;
    }
  }
  return best;
}

// Random row-stochastic 3x3 matrix.
inline std::array<std::array<double, 3>, 3> random_probability_matrix(Rng& rng) {
  std::array<std::array<double, 3>, 3> m{};
  for (auto& row : m) {
    double total = 0.0;
    for (auto& v : row) total += (v = rng.uniform(1e-3, 1.0));
    for (auto& v : row) v /= total;
  }
  return m;
}

}  // namespace testing
