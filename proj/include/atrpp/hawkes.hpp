#pragma once

// Multivariate Hawkes processes with exponential kernel
//
//   lambda_d(t) = mu_d + sum_{t_i < t} A(z_i, d) * exp(-w (t - t_i))
//
// exact simulation by Ogata thinning, and the synthetic benchmark generator.

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "atrpp/data.hpp"
#include "atrpp/errors.hpp"
#include "atrpp/parallel.hpp"
#include "atrpp/random.hpp"

namespace atrpp {

struct HawkesParams {
  Eigen::VectorXd mu;  // background rate per dimension
  Eigen::MatrixXd A;   // A(i, j): influence of dimension i on dimension j
  double w{1.0};       // decay

  [[nodiscard]] int num_dims() const { return static_cast<int>(mu.size()); }
  [[nodiscard]] Eigen::MatrixXd branching_matrix() const { return A / w; }
};

inline void check_params(const HawkesParams& p) {
  const auto z = p.mu.size();
  if (z == 0) throw ConfigError("Hawkes parameters need at least one dimension");
  if (p.A.rows() != z || p.A.cols() != z) throw ConfigError("A must be Z x Z");
  if (!(p.w > 0.0) || !std::isfinite(p.w)) throw ConfigError("decay w must be positive");
  if (!p.mu.allFinite() || !p.A.allFinite()) throw ConfigError("Hawkes parameters must be finite");
  if ((p.mu.array() < 0.0).any() || (p.A.array() < 0.0).any())
    throw ConfigError("Hawkes parameters must be nonnegative");
}

struct SpectralRadius {
  double value{0.0};  // upper bound on rho
  double lower{0.0};  // lower bound on rho
  int iterations{0};
};

/// Perron root of a nonnegative matrix by power iteration on M + I, with
/// Collatz-Wielandt bounds min_i (Mx)_i/x_i <= rho <= max_i (Mx)_i/x_i.
/// Stops when the bounds agree to 1e-12 relative or after max_iter steps and
/// reports the upper bound, so scaling by it never overshoots.
inline SpectralRadius spectral_radius(const Eigen::MatrixXd& m, int max_iter = 1000) {
  const auto n = m.rows();
  SpectralRadius out;
  if (n == 0 || m.isZero(0.0)) return out;
  // Reducible matrices can drive iterate entries to 0, which breaks the
  // ratios. Then retry on M + eta 11^T: its radius lies in [rho, rho + n eta],
  // so its upper bound still bounds rho.
  const auto run = [&](double eta) {
    const Eigen::MatrixXd mp = m.array() + eta;
    Eigen::VectorXd x = Eigen::VectorXd::Ones(n);
    for (int it = 1; it <= max_iter; ++it) {
      const Eigen::VectorXd mx = mp * x;
      const Eigen::ArrayXd ratio = mx.array() / x.array();
      out.value = ratio.maxCoeff();
      out.lower = std::max(0.0, ratio.minCoeff() - static_cast<double>(n) * eta);
      out.iterations = it;
      if (out.value - out.lower <= 1e-12 * out.value) return true;
      x = mx + x;
      x /= x.maxCoeff();
      if (x.minCoeff() < 1e-250) return false;
    }
    return true;
  };
  if (!run(0.0)) run(1e-15 * m.cwiseAbs().maxCoeff());
  return out;
}

struct ScaledMatrix {
  Eigen::MatrixXd matrix;
  double factor{1.0};  // matrix = input * factor
};

/// Shrinks A so its spectral radius is at most `target`; leaves it unchanged
/// when it already is (or when A is zero).
inline ScaledMatrix scale_to_spectral_radius(const Eigen::MatrixXd& a, double target) {
  if (!(target > 0.0)) throw ConfigError("target spectral radius must be positive");
  if ((a.array() < 0.0).any()) throw ConfigError("matrix must be nonnegative");
  const auto rho = spectral_radius(a).value;
  if (rho <= target) return {a, 1.0};
  const double factor = target / rho;
  return {a * factor, factor};
}

inline double intensity(const HawkesParams& p, const EventSequence& history, double t, int d) {
  double value = p.mu(d);
  for (const auto& e : history.events) {
    if (!(e.time < t)) break;
    value += p.A(e.dim, d) * std::exp(-p.w * (t - e.time));
  }
  return value;
}

inline double total_intensity(const HawkesParams& p, const EventSequence& history, double t) {
  double value = 0.0;
  for (int d = 0; d < p.num_dims(); ++d) value += intensity(p, history, t, d);
  return value;
}

/// Recursive kernel sums: excitation(d) = sum_{t_i <= now} A(z_i, d) exp(-w (now - t_i)).
class ExcitationState {
 public:
  explicit ExcitationState(const HawkesParams& p)
      : params_(&p), excitation_(Eigen::VectorXd::Zero(p.num_dims())) {}

  void advance_to(double t) {
    if (t > now_) excitation_ *= std::exp(-params_->w * (t - now_));
    now_ = t;
  }
  void add_event(const Event& e) {
    advance_to(e.time);
    excitation_ += params_->A.row(e.dim).transpose();
  }
  [[nodiscard]] double now() const { return now_; }
  [[nodiscard]] double intensity(int d) const { return params_->mu(d) + excitation_(d); }
  [[nodiscard]] Eigen::VectorXd intensities() const { return params_->mu + excitation_; }
  [[nodiscard]] double total() const { return params_->mu.sum() + excitation_.sum(); }

 private:
  const HawkesParams* params_;
  Eigen::VectorXd excitation_;
  double now_{0.0};
};

/// Ogata thinning from a given state up to `horizon`, appending to `out`.
/// Between events the total intensity only decays, so its value just after
/// the current time bounds it until the next acceptance. Returns the number
/// of events appended; stops early after `max_events` acceptances.
inline std::size_t thin_forward(const HawkesParams& p, ExcitationState& state, double horizon,
                                Rng& rng, EventSequence& out,
                                std::size_t max_events = SIZE_MAX) {
  std::size_t accepted = 0;
  while (accepted < max_events) {
    const double bound = state.total();
    if (!(bound > 0.0)) break;
    const double t = state.now() + exponential(rng, bound);
    if (!(t <= horizon)) break;
    state.advance_to(t);
    const double total = state.total();
    if (uniform01(rng) * bound >= total) continue;
    double pick = uniform01(rng) * total;
    int dim = 0;
    for (; dim + 1 < p.num_dims(); ++dim) {
      pick -= state.intensity(dim);
      if (pick < 0.0) break;
    }
    const Event e{dim, t};
    out.events.push_back(e);
    state.add_event(e);
    ++accepted;
  }
  return accepted;
}

inline void check_stable(const HawkesParams& p) {
  const auto rho = spectral_radius(p.branching_matrix()).value;
  if (rho >= 1.0)
    throw NumericError("branching ratio >= 1 (spectral radius of A/w is " + std::to_string(rho) + ")");
}

inline EventSequence simulate(const HawkesParams& p, double horizon, Rng& rng) {
  check_params(p);
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("horizon must be positive");
  check_stable(p);
  EventSequence seq;
  seq.num_dims = p.num_dims();
  ExcitationState state(p);
  thin_forward(p, state, horizon, rng, seq);
  return seq;
}

inline EventSequence simulate(const HawkesParams& p, double horizon, std::uint64_t seed) {
  auto rng = make_stream(seed, 0);
  return simulate(p, horizon, rng);
}

/// Increments of the total compensator between consecutive events (the first
/// from time 0). Unit-exponential when the sequence follows `p`.
inline std::vector<double> compensator_increments(const HawkesParams& p, const EventSequence& seq) {
  std::vector<double> out;
  out.reserve(seq.size());
  const double mu_total = p.mu.sum();
  const Eigen::VectorXd row_sums = p.A.rowwise().sum();
  // decaying mass sum_i rowsum(z_i) exp(-w (t - t_i)) just after the previous event
  double mass = 0.0;
  double prev = 0.0;
  for (const auto& e : seq.events) {
    const double dt = e.time - prev;
    const double decay = std::exp(-p.w * dt);
    out.push_back(mu_total * dt + mass * (1.0 - decay) / p.w);
    mass = mass * decay + row_sums(e.dim);
    prev = e.time;
  }
  return out;
}

// ---------------------------------------------------------------------------

enum class NoiseKind { uniform, gaussian };

struct SyntheticConfig {
  int num_dims{20};
  double mu_min{0.0}, mu_max{0.01};
  double a_min{0.0}, a_max{0.1};
  double zero_fraction{0.5};
  double w{0.01};
  double horizon{100.0};
  int num_cascades{5000};
  double noise_scale{0.001};
  NoiseKind noise{NoiseKind::uniform};
  double max_branching{0.9};  // spectral radius cap for A / w
  double series_step{0.0};    // 0 selects horizon / 100
  std::array<double, 3> split{0.6, 0.2, 0.2};
  std::uint64_t seed{1};
};

inline void check_config(const SyntheticConfig& c) {
  if (c.num_dims < 1) throw ConfigError("Z must be at least 1");
  if (c.mu_min < 0 || c.mu_max < c.mu_min) throw ConfigError("invalid mu range");
  if (c.a_min < 0 || c.a_max < c.a_min) throw ConfigError("invalid a range");
  if (c.zero_fraction < 0 || c.zero_fraction > 1) throw ConfigError("zero_fraction must be in [0, 1]");
  if (!(c.w > 0)) throw ConfigError("w must be positive");
  if (!(c.horizon > 0)) throw ConfigError("horizon must be positive");
  if (c.num_cascades < 3) throw ConfigError("need at least 3 cascades");
  if (c.noise_scale < 0) throw ConfigError("noise_scale must be nonnegative");
  if (!(c.max_branching > 0) || c.max_branching >= 1)
    throw ConfigError("max_branching must be in (0, 1)");
  if (c.series_step < 0) throw ConfigError("series_step must be nonnegative");
}

struct SyntheticData {
  Dataset dataset;
  HawkesParams truth;
  double scale_factor{1.0};       // applied to the drawn A
  double branching_before{0.0};   // spectral radius of drawn A / w
  double branching_after{0.0};
};

inline HawkesParams draw_hawkes_params(const SyntheticConfig& c, double& scale_factor,
                                       double& rho_before) {
  const auto z = c.num_dims;
  auto rng = make_stream(c.seed, 0xA11CE);
  HawkesParams p;
  p.w = c.w;
  p.mu.resize(z);
  for (int d = 0; d < z; ++d) p.mu(d) = uniform(rng, c.mu_min, c.mu_max);
  p.A.resize(z, z);
  for (int i = 0; i < z; ++i)
    for (int j = 0; j < z; ++j) p.A(i, j) = uniform(rng, c.a_min, c.a_max);

  std::vector<int> cells(static_cast<std::size_t>(z * z));
  std::iota(cells.begin(), cells.end(), 0);
  shuffle(cells, rng);
  const auto zeros = static_cast<std::size_t>(std::llround(c.zero_fraction * z * z));
  for (std::size_t k = 0; k < zeros; ++k) p.A(cells[k] / z, cells[k] % z) = 0.0;

  rho_before = spectral_radius(p.branching_matrix()).value;
  // rho(A / w) <= cap  <=>  rho(A) <= cap * w
  auto scaled = scale_to_spectral_radius(p.A, c.max_branching * c.w);
  p.A = std::move(scaled.matrix);
  scale_factor = scaled.factor;
  return p;
}

inline std::string cascade_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "c%05d", index);
  return buf;
}

/// Draws ground-truth parameters, simulates independent cascades with one
/// random stream per cascade, attaches noisy background-rate series, and
/// splits the result.
inline SyntheticData generate_synthetic(const SyntheticConfig& c, unsigned threads = 1) {
  check_config(c);
  SyntheticData out;
  out.truth = draw_hawkes_params(c, out.scale_factor, out.branching_before);
  out.branching_after = spectral_radius(out.truth.branching_matrix()).value;
  check_stable(out.truth);

  const double step = c.series_step > 0 ? c.series_step : c.horizon / 100.0;
  const auto samples = static_cast<Eigen::Index>(std::floor(c.horizon / step + 1e-9)) + 1;
  const auto n = static_cast<std::size_t>(c.num_cascades);
  std::vector<Record> records(n);
  const std::uint64_t noise_seed = mix_seed(c.seed) + 1;

  parallel_for(n, threads, [&](std::size_t i) {
    auto& r = records[i];
    r.id = cascade_id(static_cast<int>(i));
    auto sim_rng = make_stream(c.seed, i);
    r.sequence = simulate(out.truth, c.horizon, sim_rng);

    auto noise_rng = make_stream(noise_seed, i);
    TimeSeries s{0.0, step, Eigen::MatrixXd(samples, c.num_dims)};
    for (Eigen::Index k = 0; k < samples; ++k)
      for (int d = 0; d < c.num_dims; ++d) {
        const double n_d = c.noise == NoiseKind::uniform ? uniform(noise_rng, 0.0, c.noise_scale)
                                                         : c.noise_scale * standard_normal(noise_rng);
        s.samples(k, d) = out.truth.mu(d) + n_d;
      }
    r.series = std::move(s);
  });

  out.dataset = split_dataset(std::move(records), c.split, c.seed);
  return out;
}

}  // namespace atrpp
