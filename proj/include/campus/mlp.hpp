#pragma once

// Two-layer perceptron: logistic(w2 . relu(W1 z + b1) + b2).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "campus/error.hpp"

namespace campus {

inline constexpr std::size_t kDefaultHidden = 256;

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Binary cross-entropy of logistic(logit) against target y in [0,1].
inline double bce_with_logit(double logit, double y) {
  return std::max(logit, 0.0) - logit * y + std::log1p(std::exp(-std::abs(logit)));
}

/// Parameters stored in one flat row-major buffer:
/// W1 [hidden x input], b1 [hidden], w2 [hidden], b2 [1].
class MlpParams {
 public:
  MlpParams() = default;
  MlpParams(std::size_t input_dim, std::size_t hidden)
      : input_(input_dim), hidden_(hidden), data_(hidden * input_dim + 2 * hidden + 1, 0.0) {
    if (input_dim == 0 || hidden == 0) throw ConfigError("MLP dimensions must be positive");
  }

  /// Kaiming-normal weights (std = sqrt(2 / fan_in)), zero biases.
  template <typename Rng>
  static MlpParams kaiming(std::size_t input_dim, std::size_t hidden, Rng& rng) {
    MlpParams p(input_dim, hidden);
    std::normal_distribution<double> first(0.0, std::sqrt(2.0 / static_cast<double>(input_dim)));
    std::normal_distribution<double> second(0.0, std::sqrt(2.0 / static_cast<double>(hidden)));
    for (std::size_t h = 0; h < hidden; ++h)
      for (std::size_t i = 0; i < input_dim; ++i) p.w1(h, i) = first(rng);
    for (std::size_t h = 0; h < hidden; ++h) p.w2(h) = second(rng);
    return p;
  }

  std::size_t input_dim() const { return input_; }
  std::size_t hidden() const { return hidden_; }

  double& w1(std::size_t h, std::size_t i) { return data_[h * input_ + i]; }
  double w1(std::size_t h, std::size_t i) const { return data_[h * input_ + i]; }
  double& b1(std::size_t h) { return data_[hidden_ * input_ + h]; }
  double b1(std::size_t h) const { return data_[hidden_ * input_ + h]; }
  double& w2(std::size_t h) { return data_[hidden_ * input_ + hidden_ + h]; }
  double w2(std::size_t h) const { return data_[hidden_ * input_ + hidden_ + h]; }
  double& b2() { return data_.back(); }
  double b2() const { return data_.back(); }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  bool operator==(const MlpParams&) const = default;

 private:
  std::size_t input_ = 0;
  std::size_t hidden_ = 0;
  std::vector<double> data_;
};

inline void check_input(const MlpParams& p, std::span<const double> z) {
  if (z.size() != p.input_dim())
    throw ConfigError("feature dimension " + std::to_string(z.size()) + " does not match MLP input " +
                      std::to_string(p.input_dim()));
}

inline double mlp_logit(const MlpParams& p, std::span<const double> z) {
  check_input(p, z);
  double out = p.b2();
  for (std::size_t h = 0; h < p.hidden(); ++h) {
    double a = p.b1(h);
    for (std::size_t i = 0; i < z.size(); ++i) a += p.w1(h, i) * z[i];
    if (a > 0.0) out += p.w2(h) * a;
  }
  return out;
}

inline double mlp_forward(const MlpParams& p, std::span<const double> z) {
  return logistic(mlp_logit(p, z));
}

/// Hidden pre-activations and output logit of one forward pass.
struct MlpTrace {
  std::vector<double> pre;
  double logit = 0.0;
};

inline MlpTrace mlp_trace(const MlpParams& p, std::span<const double> z) {
  check_input(p, z);
  MlpTrace t;
  t.pre.resize(p.hidden());
  t.logit = p.b2();
  for (std::size_t h = 0; h < p.hidden(); ++h) {
    double a = p.b1(h);
    for (std::size_t i = 0; i < z.size(); ++i) a += p.w1(h, i) * z[i];
    t.pre[h] = a;
    if (a > 0.0) t.logit += p.w2(h) * a;
  }
  return t;
}

/// Accumulates dlogit * d logit / d params into `grad`.
inline void mlp_backprop(const MlpParams& p, std::span<const double> z, const MlpTrace& t,
                         double dlogit, MlpParams& grad) {
  grad.b2() += dlogit;
  for (std::size_t h = 0; h < p.hidden(); ++h) {
    if (t.pre[h] <= 0.0) continue;
    grad.w2(h) += dlogit * t.pre[h];
    const double dh = dlogit * p.w2(h);
    grad.b1(h) += dh;
    for (std::size_t i = 0; i < z.size(); ++i) grad.w1(h, i) += dh * z[i];
  }
}

inline void sgd_step(MlpParams& p, const MlpParams& grad, double lr) {
  auto w = p.flat();
  auto g = grad.flat();
  for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * g[k];
}

}  // namespace campus
