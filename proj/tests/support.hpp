#pragma once

// Shared helpers for the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "atrpp/training.hpp"

namespace atrpp::testing_support {

/// One-sample Kolmogorov-Smirnov statistic against Exp(1).
inline double ks_statistic_exp1(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double cdf = 1.0 - std::exp(-xs[i]);
    d = std::max({d, (static_cast<double>(i) + 1) / n - cdf, cdf - static_cast<double>(i) / n});
  }
  return d;
}

// asymptotic two-sided critical value at the 1% level
inline double ks_critical_1pct(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

struct GradMismatch {
  std::string tensor;
  std::size_t index{0};
  double analytic{0.0}, numeric{0.0};
};

/// Central differences over every entry of `values`, comparing against
/// `analytic`. An entry passes when |a - n| <= max(rel * max(|a|, |n|), abs_floor).
inline std::vector<GradMismatch> check_gradient(const std::string& name, double* values, std::size_t count,
                                                const double* analytic, const std::function<double()>& loss,
                                                double step = 1e-5, double rel = 1e-4, double abs_floor = 1e-7) {
  std::vector<GradMismatch> bad;
  for (std::size_t i = 0; i < count; ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double up = loss();
    values[i] = saved - step;
    const double down = loss();
    values[i] = saved;
    const double numeric = (up - down) / (2 * step);
    const double a = analytic[i];
    const double tol = std::max(rel * std::max(std::abs(a), std::abs(numeric)), abs_floor);
    if (!(std::abs(a - numeric) <= tol)) bad.push_back({name, i, a, numeric});
  }
  return bad;
}

struct TinyCase {
  ModelConfig config;
  ModelParams params;
  Record record;
  Eigen::VectorXd class_weights;
};

/// Random small model plus a record with N events and a matching series.
inline TinyCase random_tiny_case(std::uint64_t seed, int z, int h, int n, int features = 2, double scale = 0.5) {
  auto rng = make_stream(seed, 0x7e57);
  TinyCase tc;
  auto& c = tc.config;
  c.num_dims = z;
  c.num_features = features;
  c.embed = 3;
  c.hidden_event = h;
  c.hidden_series = h;
  c.hidden_syn = h;
  c.time_scale = 1.7;
  tc.params = init_params(c, seed, scale);
  // nonzero biases so their gradients are exercised too
  for (auto& t : tensors(tc.params))
    if (t.kind == TensorKind::bias)
      for (auto& x : t.data) x += uniform(rng, -0.3, 0.3);

  auto& r = tc.record;
  r.id = "tiny" + std::to_string(seed);
  r.sequence.num_dims = z;
  double t = 0.0;
  for (int i = 0; i < n; ++i) {
    t += i == 0 ? 0.0 : exponential(rng, 0.8);
    r.sequence.events.push_back({static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(z))), t});
  }
  const double step = 0.6;
  const auto len = static_cast<Eigen::Index>(std::floor(t / step)) + 2;
  TimeSeries s{0.0, step, Eigen::MatrixXd(len, features)};
  for (Eigen::Index k = 0; k < len; ++k)
    for (int f = 0; f < features; ++f) s.samples(k, f) = uniform(rng, -1.0, 1.0);
  r.series = s;

  tc.class_weights.resize(z);
  for (int d = 0; d < z; ++d) tc.class_weights(d) = uniform(rng, 0.5, 2.0);
  return tc;
}

/// Compares every analytic parameter gradient of the training loss with
/// central differences.
inline std::vector<GradMismatch> model_gradient_mismatches(TinyCase& tc, const LossConfig& lc = {}) {
  const auto g = loss_and_gradient(tc.record, tc.params, tc.config, tc.class_weights, lc).grad;
  const auto loss = [&] {
    return sequence_loss(forward(tc.record, tc.params, tc.config), tc.record, tc.class_weights, lc, tc.config)
        .total;
  };
  std::vector<GradMismatch> bad;
  auto pt = tensors(tc.params);
  const auto gt = tensors(g);
  for (std::size_t t = 0; t < pt.size(); ++t) {
    auto b = check_gradient(pt[t].name, pt[t].data.data(), pt[t].data.size(), gt[t].data.data(), loss);
    bad.insert(bad.end(), b.begin(), b.end());
  }
  return bad;
}

}  // namespace atrpp::testing_support
