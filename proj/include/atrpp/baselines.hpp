#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "atrpp/data.hpp"
#include "atrpp/errors.hpp"
#include "atrpp/hawkes.hpp"
#include "atrpp/metrics.hpp"
#include "atrpp/model.hpp"
#include "atrpp/parallel.hpp"
#include "atrpp/random.hpp"
#include "atrpp/training.hpp"

namespace atrpp::baselines {

using Records = std::span<const Record* const>;

// Observation window of a record: [0, horizon] when a horizon is known,
// otherwise [0, last event time].
inline double observed_until(const Record& r, double horizon) {
  if (horizon > 0.0) return horizon;
  return r.sequence.empty() ? 0.0 : r.sequence.events.back().time;
}

/// One prediction per step j = 0 .. N-2 of every record (event j+1 from events 0..j).
/// `fn(record, record_index, j, step)` fills ranking and/or predicted_gap.
inline metrics::PredictionSet collect_steps(
    Records records, const std::function<void(const Record&, std::size_t, std::size_t, metrics::PredictionStep&)>& fn,
    unsigned threads = 1) {
  std::vector<std::size_t> offset(records.size() + 1, 0);
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto n = records[r]->sequence.size();
    offset[r + 1] = offset[r] + (n > 1 ? n - 1 : 0);
  }
  metrics::PredictionSet out(offset.back());
  parallel_for(records.size(), threads, [&](std::size_t r) {
    const auto& ev = records[r]->sequence.events;
    for (std::size_t j = 0; j + 1 < ev.size(); ++j) {
      auto& s = out[offset[r] + j];
      s.true_dim = ev[j + 1].dim;
      s.true_gap = ev[j + 1].time - ev[j].time;
      fn(*records[r], r, j, s);
    }
  });
  return out;
}

inline std::vector<int> ranking_of(const Eigen::VectorXd& scores) { return rank_dims(scores); }

// ---------------------------------------------------------------------------
// homogeneous Poisson

struct PoissonModel {
  double rate{0.0};
  std::size_t events{0};
  double observed_time{0.0};

  [[nodiscard]] double predict_gap() const { return 1.0 / rate; }
};

inline PoissonModel fit_poisson(Records train, double horizon = 0.0) {
  PoissonModel m;
  for (const Record* r : train) {
    m.events += r->sequence.size();
    m.observed_time += observed_until(*r, horizon);
  }
  if (m.events == 0) throw DataError("Poisson fit needs at least one event");
  if (!(m.observed_time > 0.0)) throw DataError("Poisson fit: zero observed time");
  m.rate = static_cast<double>(m.events) / m.observed_time;
  return m;
}

inline metrics::PredictionSet predict(const PoissonModel& m, Records test) {
  return collect_steps(test, [&](const Record&, std::size_t, std::size_t, metrics::PredictionStep& s) {
    s.predicted_gap = m.predict_gap();
  });
}

// ---------------------------------------------------------------------------
// self-correcting process, lambda(t) = exp(mu t - alpha N(t))

struct SelfCorrectingParams {
  double mu{1.0};
  double alpha{1.0};
};

struct SelfCorrectingModel {
  SelfCorrectingParams params;
  double log_likelihood{0.0};
  long evaluations{0};  // likelihood evaluations spent
  bool converged{false};
};

/// Exact log-likelihood on [0, T] for each record, summed. Any alpha >= 0 and
/// mu > 0 are accepted.
inline double self_correcting_loglik(Records records, const SelfCorrectingParams& p, double horizon = 0.0) {
  double ll = 0.0;
  for (const Record* r : records) {
    const auto& ev = r->sequence.events;
    const double end = observed_until(*r, horizon);
    double prev = 0.0;
    for (std::size_t k = 0; k <= ev.size(); ++k) {
      const double next = k < ev.size() ? ev[k].time : end;
      // (prev, next] with N = k: integral exp(mu t - alpha k) dt
      const double len = next - prev;
      if (len > 0.0)
        ll -= std::exp(p.mu * next - p.alpha * static_cast<double>(k)) * -std::expm1(-p.mu * len) / p.mu;
      if (k < ev.size()) ll += p.mu * ev[k].time - p.alpha * static_cast<double>(k);
      prev = std::max(prev, next);
    }
  }
  return ll;
}

namespace detail {

struct GoldenResult {
  double x{0.0};
  double value{0.0};
  bool converged{false};  // bracket shrank below tolerance away from the bounds
};

// Maximizes f on [lo, hi]: scans a grid, then golden-section search inside
// the bracket around the best grid point.
inline GoldenResult golden_maximize(const std::function<double(double)>& f, double lo, double hi, int grid = 24,
                                    double tol = 1e-9, int max_iter = 200) {
  double best_x = lo;
  double best_f = -std::numeric_limits<double>::infinity();
  const double step = (hi - lo) / grid;
  for (int i = 0; i <= grid; ++i) {
    const double x = lo + step * i;
    const double v = f(x);
    if (v > best_f) {
      best_f = v;
      best_x = x;
    }
  }
  double a = std::max(lo, best_x - step), b = std::min(hi, best_x + step);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  int it = 0;
  for (; it < max_iter && b - a > tol; ++it) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  GoldenResult r{fc >= fd ? c : d, std::max(fc, fd), false};
  if (best_f > r.value) r = {best_x, best_f, false};
  r.converged = b - a <= tol && r.x - lo > 2 * tol && hi - r.x > 2 * tol;
  return r;
}

}  // namespace detail

struct SelfCorrectingFitConfig {
  double lower{1e-4};
  double upper{1e2};
  double tolerance{1e-9};  // bracket width in log-parameter space
  int max_iter{200};       // golden steps per search
};

/// Nested golden-section in log space: outer over mu on the profile
/// likelihood, inner over alpha for each mu.
inline SelfCorrectingModel fit_self_correcting(Records train, double horizon = 0.0,
                                               const SelfCorrectingFitConfig& c = {}) {
  std::size_t events = 0;
  for (const Record* r : train) events += r->sequence.size();
  if (events == 0) throw DataError("self-correcting fit needs at least one event");
  const double lo = std::log(c.lower), hi = std::log(c.upper);
  SelfCorrectingModel m;
  const auto ll = [&](double log_mu, double log_alpha) {
    ++m.evaluations;
    const double v = self_correcting_loglik(train, {std::exp(log_mu), std::exp(log_alpha)}, horizon);
    return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
  };
  const auto inner = [&](double log_mu) {
    return detail::golden_maximize([&](double x) { return ll(log_mu, x); }, lo, hi, 24, c.tolerance, c.max_iter);
  };
  const auto outer =
      detail::golden_maximize([&](double x) { return inner(x).value; }, lo, hi, 24, c.tolerance, c.max_iter);
  const auto best_alpha = inner(outer.x);
  m.converged = outer.converged && best_alpha.converged;
  m.params = {std::exp(outer.x), std::exp(best_alpha.x)};
  m.log_likelihood = best_alpha.value;
  return m;
}

namespace detail {

inline double simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
                      double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

}  // namespace detail

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol = 1e-6,
                               int max_depth = 50) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return detail::simpson(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

/// Expected waiting time after the last of `count` events at time `now`:
/// the integral of the survival function exp(-c (e^{mu s} - 1)),
/// c = exp(mu now - alpha count) / mu.
inline double self_correcting_expected_gap(const SelfCorrectingParams& p, double now, std::size_t count) {
  const double log_c = p.mu * now - p.alpha * static_cast<double>(count) - std::log(p.mu);
  const double c = std::exp(log_c);
  const auto survival = [&](double s) { return std::exp(-c * std::expm1(p.mu * s)); };
  // survival below e^-40 beyond this point
  const double end = (std::log1p(40.0 / c)) / p.mu;
  if (!std::isfinite(end)) return std::numeric_limits<double>::infinity();
  // split at the knee so the adaptive rule sees the drop
  const double knee = std::log1p(1.0 / c) / p.mu;
  return adaptive_simpson(survival, 0.0, knee, 1e-6) + adaptive_simpson(survival, knee, end, 1e-6);
}

inline metrics::PredictionSet predict(const SelfCorrectingModel& m, Records test, unsigned threads = 1) {
  return collect_steps(
      test,
      [&](const Record& r, std::size_t, std::size_t j, metrics::PredictionStep& s) {
        s.predicted_gap = self_correcting_expected_gap(m.params, r.sequence[j].time, j + 1);
      },
      threads);
}

/// Exact simulation by inverting the compensator between events.
inline EventSequence simulate_self_correcting(const SelfCorrectingParams& p, double horizon, Rng& rng,
                                              int num_dims = 1) {
  EventSequence seq;
  seq.num_dims = num_dims;
  double t = 0.0;
  for (;;) {
    const double c = std::exp(p.mu * t - p.alpha * static_cast<double>(seq.size())) / p.mu;
    const double e = exponential(rng, 1.0);
    t += std::log1p(e / c) / p.mu;
    if (!(t <= horizon)) break;
    seq.events.push_back({static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(num_dims))), t});
  }
  return seq;
}

// ---------------------------------------------------------------------------
// order-k Markov chain over dimensions

struct MarkovModel {
  int order{1};
  int num_dims{0};
  std::map<std::vector<int>, std::vector<double>> counts;  // context -> next-dim counts
  std::vector<double> marginal;                            // next-dim counts over all targets
  std::map<int, double> validation_accuracy;               // per candidate order

  /// Add-one smoothed conditional distribution, or nullopt for an unseen context.
  [[nodiscard]] std::optional<Eigen::VectorXd> distribution(std::span<const int> context) const {
    if (static_cast<int>(context.size()) != order) return std::nullopt;
    const auto it = counts.find(std::vector<int>(context.begin(), context.end()));
    if (it == counts.end()) return std::nullopt;
    Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(it->second.data(), num_dims).array() + 1.0;
    return p / p.sum();
  }

  /// Ranked dims after the given history (most recent last).
  [[nodiscard]] std::vector<int> rank(std::span<const int> history) const {
    if (static_cast<int>(history.size()) >= order) {
      if (auto d = distribution(history.last(static_cast<std::size_t>(order)))) return ranking_of(*d);
    }
    return ranking_of(Eigen::Map<const Eigen::VectorXd>(marginal.data(), num_dims));
  }
};

inline MarkovModel fit_markov_order(Records train, int num_dims, int order) {
  if (order < 1) throw ConfigError("Markov order must be >= 1");
  MarkovModel m;
  m.order = order;
  m.num_dims = num_dims;
  m.marginal.assign(static_cast<std::size_t>(num_dims), 0.0);
  for (const Record* r : train) {
    const auto& ev = r->sequence.events;
    for (std::size_t i = 1; i < ev.size(); ++i) {
      m.marginal[static_cast<std::size_t>(ev[i].dim)] += 1.0;
      if (i < static_cast<std::size_t>(order)) continue;
      std::vector<int> ctx;
      for (std::size_t k = i - static_cast<std::size_t>(order); k < i; ++k) ctx.push_back(ev[k].dim);
      auto& row = m.counts[ctx];
      row.resize(static_cast<std::size_t>(num_dims), 0.0);
      row[static_cast<std::size_t>(ev[i].dim)] += 1.0;
    }
  }
  return m;
}

inline metrics::PredictionSet predict(const MarkovModel& m, Records test) {
  return collect_steps(test, [&](const Record& r, std::size_t, std::size_t j, metrics::PredictionStep& s) {
    std::vector<int> hist;
    for (std::size_t k = 0; k <= j; ++k) hist.push_back(r.sequence[k].dim);
    s.ranking = m.rank(hist);
  });
}

inline double top1_accuracy(const metrics::PredictionSet& p) {
  if (p.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& s : p) hit += !s.ranking.empty() && s.ranking.front() == s.true_dim;
  return static_cast<double>(hit) / static_cast<double>(p.size());
}

/// Picks the order in [1, max_order] with the best validation accuracy; ties
/// go to the smaller order.
inline MarkovModel fit_markov(Records train, Records validation, int num_dims, int max_order) {
  if (max_order < 1) throw ConfigError("max Markov order must be >= 1");
  if (validation.empty()) throw DataError("Markov order selection needs a validation split");
  std::optional<MarkovModel> best;
  std::map<int, double> acc;
  for (int k = 1; k <= max_order; ++k) {
    auto m = fit_markov_order(train, num_dims, k);
    acc[k] = top1_accuracy(predict(m, validation));
    if (!best || acc[k] > acc[best->order]) best = std::move(m);
  }
  best->validation_accuracy = acc;
  return *best;
}

// ---------------------------------------------------------------------------
// continuous-time Markov chain

struct CtmcModel {
  Eigen::MatrixXd rates;      // q_ij, transitions per unit sojourn time; diagonal holds self-jumps
  Eigen::MatrixXd counts;     // transitions i -> j
  Eigen::VectorXd sojourn;    // time spent in i before a jump
  std::vector<bool> observed; // row estimated from its own data

  [[nodiscard]] int predict_dim(int current) const { return argmax_lowest(rates.row(current).transpose()); }
  [[nodiscard]] double predict_gap(int current) const { return 1.0 / rates.row(current).sum(); }
};

inline CtmcModel fit_ctmc(Records train, int num_dims) {
  CtmcModel m;
  m.counts = Eigen::MatrixXd::Zero(num_dims, num_dims);
  m.sojourn = Eigen::VectorXd::Zero(num_dims);
  for (const Record* r : train) {
    const auto& ev = r->sequence.events;
    for (std::size_t i = 0; i + 1 < ev.size(); ++i) {
      m.counts(ev[i].dim, ev[i + 1].dim) += 1.0;
      m.sojourn(ev[i].dim) += ev[i + 1].time - ev[i].time;
    }
  }
  const double total_time = m.sojourn.sum();
  if (!(total_time > 0.0)) throw DataError("CTMC fit needs transitions with positive sojourn time");
  // fallback for unseen states: pooled jump rates toward each destination
  const Eigen::RowVectorXd global = m.counts.colwise().sum() / total_time;
  m.rates.resize(num_dims, num_dims);
  m.observed.assign(static_cast<std::size_t>(num_dims), false);
  for (int i = 0; i < num_dims; ++i) {
    if (m.sojourn(i) > 0.0 && m.counts.row(i).sum() > 0.0) {
      m.rates.row(i) = m.counts.row(i) / m.sojourn(i);
      m.observed[static_cast<std::size_t>(i)] = true;
    } else {
      m.rates.row(i) = global;
    }
  }
  return m;
}

inline metrics::PredictionSet predict(const CtmcModel& m, Records test) {
  return collect_steps(test, [&](const Record& r, std::size_t, std::size_t j, metrics::PredictionStep& s) {
    const int cur = r.sequence[j].dim;
    s.ranking = ranking_of(m.rates.row(cur).transpose());
    s.predicted_gap = m.predict_gap(cur);
  });
}

// ---------------------------------------------------------------------------
// exponential-kernel Hawkes MLE

/// Everything the likelihood needs for a fixed decay w. For each target
/// dimension d, row i of kernel[d] holds, for the i-th event of dimension d,
/// sum over strictly earlier events of dimension s of exp(-w (t_i - t_j)).
struct HawkesStatistics {
  int num_dims{0};
  double w{1.0};
  double total_time{0.0};     // sum of observation windows
  Eigen::VectorXd integral;   // per source dim, sum over its events of (1 - exp(-w (T - t_i))) / w
  std::vector<Eigen::MatrixXd> kernel;
  std::vector<std::size_t> events;  // per dim
};

inline HawkesStatistics hawkes_statistics(Records records, int num_dims, double w, double horizon = 0.0) {
  if (!(w > 0.0)) throw ConfigError("Hawkes decay must be positive");
  HawkesStatistics st;
  st.num_dims = num_dims;
  st.w = w;
  st.integral = Eigen::VectorXd::Zero(num_dims);
  st.events.assign(static_cast<std::size_t>(num_dims), 0);
  for (const Record* r : records)
    for (const auto& e : r->sequence.events) ++st.events[static_cast<std::size_t>(e.dim)];
  std::vector<std::vector<Eigen::VectorXd>> rows(static_cast<std::size_t>(num_dims));
  for (int d = 0; d < num_dims; ++d) rows[static_cast<std::size_t>(d)].reserve(st.events[static_cast<std::size_t>(d)]);

  for (const Record* r : records) {
    const auto& ev = r->sequence.events;
    const double end = observed_until(*r, horizon);
    st.total_time += end;
    Eigen::VectorXd decayed = Eigen::VectorXd::Zero(num_dims);  // at time `at`, events before the current group
    double at = 0.0;
    std::size_t i = 0;
    while (i < ev.size()) {
      const double t = ev[i].time;
      decayed *= std::exp(-w * (t - at));
      at = t;
      std::size_t k = i;
      for (; k < ev.size() && ev[k].time == t; ++k) rows[static_cast<std::size_t>(ev[k].dim)].push_back(decayed);
      for (; i < k; ++i) {
        decayed(ev[i].dim) += 1.0;
        st.integral(ev[i].dim) += -std::expm1(-w * std::max(0.0, end - ev[i].time)) / w;
      }
    }
  }
  st.kernel.resize(static_cast<std::size_t>(num_dims));
  for (int d = 0; d < num_dims; ++d) {
    const auto& rs = rows[static_cast<std::size_t>(d)];
    auto& k = st.kernel[static_cast<std::size_t>(d)];
    k.resize(static_cast<Eigen::Index>(rs.size()), num_dims);
    for (std::size_t i = 0; i < rs.size(); ++i) k.row(static_cast<Eigen::Index>(i)) = rs[i].transpose();
  }
  return st;
}

struct HawkesLikelihood {
  double value{0.0};
  Eigen::VectorXd d_mu;
  Eigen::MatrixXd d_A;
};

/// L(mu, A) = sum_i log lambda_{z_i}(t_i) - sum_d int_0^T lambda_d, summed
/// over records, with its gradient.
inline HawkesLikelihood hawkes_loglik(const HawkesStatistics& st, const Eigen::VectorXd& mu,
                                      const Eigen::MatrixXd& A, bool with_gradient = true) {
  const int z = st.num_dims;
  HawkesLikelihood out;
  out.value = -st.total_time * mu.sum() - st.integral.dot(A.rowwise().sum());
  if (with_gradient) {
    out.d_mu = Eigen::VectorXd::Constant(z, -st.total_time);
    out.d_A = -st.integral.replicate(1, z);
  }
  for (int d = 0; d < z; ++d) {
    const auto& k = st.kernel[static_cast<std::size_t>(d)];
    if (k.rows() == 0) continue;
    const Eigen::VectorXd lambda = (k * A.col(d)).array() + mu(d);
    out.value += lambda.array().log().sum();
    if (with_gradient) {
      const Eigen::VectorXd inv = lambda.cwiseInverse();
      out.d_mu(d) += inv.sum();
      out.d_A.col(d) += k.transpose() * inv;
    }
  }
  return out;
}

struct HawkesFitConfig {
  double l1{0.0};
  int max_iter{500};
  double tolerance{1e-9};  // relative objective change
  double mu_floor{1e-10};
};

struct HawkesFit {
  HawkesParams params;
  double log_likelihood{0.0};  // unpenalized training log-likelihood
  double objective{0.0};       // log-likelihood minus l1 * sum(A)
  int iterations{0};
  bool converged{false};
  double branching{0.0};       // spectral radius of the estimate's A / w
  std::vector<double> trace;   // objective after each accepted step
};

/// Projected gradient ascent with Barzilai-Borwein steps and a monotone
/// backtracking line search. A >= 0 makes the L1 penalty linear, so the
/// soft-threshold prox followed by projection is a shifted projection.
inline HawkesFit fit_hawkes_fixed_w(const HawkesStatistics& st, const HawkesFitConfig& c = {}) {
  const int z = st.num_dims;
  const auto pack = [z](const Eigen::VectorXd& mu, const Eigen::MatrixXd& A) {
    Eigen::VectorXd x(z + z * z);
    x.head(z) = mu;
    x.tail(z * z) = Eigen::Map<const Eigen::VectorXd>(A.data(), z * z);
    return x;
  };
  const auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    const Eigen::VectorXd mu = x.head(z);
    const Eigen::MatrixXd A = Eigen::Map<const Eigen::MatrixXd>(x.tail(z * z).data(), z, z);
    auto ll = hawkes_loglik(st, mu, A, grad != nullptr);
    if (grad) {
      *grad = pack(ll.d_mu, ll.d_A);
      grad->tail(z * z).array() -= c.l1;
    }
    return ll.value - c.l1 * A.sum();
  };
  const auto project = [&](Eigen::VectorXd& x) {
    x.head(z) = x.head(z).cwiseMax(c.mu_floor);
    x.tail(z * z) = x.tail(z * z).cwiseMax(0.0);
  };

  // start from the Poisson rates with no excitation
  Eigen::VectorXd mu0(z);
  for (int d = 0; d < z; ++d)
    mu0(d) = std::max(c.mu_floor, static_cast<double>(st.events[static_cast<std::size_t>(d)]) / st.total_time);
  Eigen::VectorXd x = pack(mu0, Eigen::MatrixXd::Zero(z, z));
  Eigen::VectorXd g;
  double f = objective(x, &g);
  if (!std::isfinite(f)) throw NumericError("Hawkes log-likelihood is not finite at the starting point");

  HawkesFit fit;
  double step = 1.0 / std::max(1.0, g.norm());
  for (fit.iterations = 1; fit.iterations <= c.max_iter; ++fit.iterations) {
    Eigen::VectorXd x_new, g_new;
    double f_new = -std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      x_new = x + step * g;
      project(x_new);
      f_new = objective(x_new, nullptr);
      if (std::isfinite(f_new) && f_new >= f + 1e-4 * g.dot(x_new - x)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      fit.converged = true;  // no ascent direction left at machine precision
      break;
    }
    objective(x_new, &g_new);
    const Eigen::VectorXd s = x_new - x, y = g_new - g;
    const double change = f_new - f;
    x = std::move(x_new);
    g = std::move(g_new);
    f = f_new;
    fit.trace.push_back(f);
    if (change <= c.tolerance * std::max(1.0, std::abs(f))) {
      fit.converged = true;
      break;
    }
    // BB1 step for ascent: s's / -(s'y), clamped
    const double sy = s.dot(y);
    step = sy < 0.0 ? std::clamp(s.squaredNorm() / -sy, 1e-20, 1e20) : step * 2.0;
  }
  fit.iterations = std::min(fit.iterations, c.max_iter);
  fit.params.w = st.w;
  fit.params.mu = x.head(z);
  fit.params.A = Eigen::Map<const Eigen::MatrixXd>(x.tail(z * z).data(), z, z);
  fit.objective = f;
  fit.log_likelihood = hawkes_loglik(st, fit.params.mu, fit.params.A, false).value;
  if (!std::isfinite(fit.log_likelihood)) throw NumericError("Hawkes log-likelihood became non-finite");
  fit.branching = spectral_radius(fit.params.branching_matrix()).value;
  return fit;
}

struct HawkesSelection {
  HawkesFit fit;
  std::map<double, double> validation_loglik;  // per candidate w
};

/// Fits each candidate decay on train and keeps the one with the best
/// validation log-likelihood (ties to the earlier candidate).
inline HawkesSelection fit_hawkes(Records train, Records validation, int num_dims, std::span<const double> w_grid,
                                  const HawkesFitConfig& c = {}, double horizon = 0.0) {
  if (w_grid.empty()) throw ConfigError("Hawkes needs at least one candidate decay");
  HawkesSelection sel;
  double best = -std::numeric_limits<double>::infinity();
  for (double w : w_grid) {
    auto fit = fit_hawkes_fixed_w(hawkes_statistics(train, num_dims, w, horizon), c);
    double v = fit.log_likelihood;
    if (w_grid.size() > 1) {
      if (validation.empty()) throw DataError("Hawkes decay selection needs a validation split");
      v = hawkes_loglik(hawkes_statistics(validation, num_dims, w, horizon), fit.params.mu, fit.params.A, false)
              .value;
    }
    sel.validation_loglik[w] = v;
    if (v > best || sel.fit.params.mu.size() == 0) {
      best = v;
      sel.fit = std::move(fit);
    }
  }
  return sel;
}

struct HawkesPredictConfig {
  int rollouts{100};
  std::uint64_t seed{1};
  unsigned threads{1};
};

/// Next dim = argmax of the intensities just after the last event; gap = mean
/// first-arrival time over seeded thinning rollouts. Arrivals later than
/// 50 / sum(mu) (background survival below e^-50) are censored there.
inline metrics::PredictionSet predict(const HawkesParams& p, Records test, const HawkesPredictConfig& c = {}) {
  const double mu_total = p.mu.sum();
  const double cap = mu_total > 0.0 ? 50.0 / mu_total : 1e300;
  return collect_steps(
      test,
      [&](const Record& r, std::size_t ri, std::size_t j, metrics::PredictionStep& s) {
        ExcitationState state(p);
        for (std::size_t k = 0; k <= j; ++k) state.add_event(r.sequence[k]);
        s.ranking = ranking_of(state.intensities());
        const double now = r.sequence[j].time;
        auto rng = make_stream(mix_seed(c.seed) ^ static_cast<std::uint64_t>(ri), j);
        double sum = 0.0;
        for (int k = 0; k < c.rollouts; ++k) {
          ExcitationState roll = state;
          EventSequence next;
          next.num_dims = p.num_dims();
          thin_forward(p, roll, now + cap, rng, next, 1);
          sum += next.empty() ? cap : next.events.front().time - now;
        }
        s.predicted_gap = sum / c.rollouts;
      },
      c.threads);
}

// ---------------------------------------------------------------------------
// logistic (softmax) regression with a least-squares gap model

struct SoftmaxConfig {
  int iterations{300};
  RmspropConfig rmsprop{0.05, 0.9, 1e-8};
  double l2{1e-4};
};

/// Full-batch softmax regression; W is Z x (D + 1) with the bias last.
inline Eigen::MatrixXd fit_softmax(const Eigen::MatrixXd& X, std::span<const int> y, int num_dims,
                                   const SoftmaxConfig& c = {}) {
  const auto n = X.rows(), d = X.cols();
  if (n == 0 || static_cast<std::size_t>(n) != y.size()) throw DataError("softmax fit: bad training set");
  Eigen::MatrixXd Xb(n, d + 1);
  Xb << X, Eigen::VectorXd::Ones(n);
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(num_dims, d + 1);
  Eigen::MatrixXd ms = Eigen::MatrixXd::Zero(num_dims, d + 1);
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, num_dims);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, y[static_cast<std::size_t>(i)]) = 1.0;
  for (int it = 0; it < c.iterations; ++it) {
    Eigen::MatrixXd s = Xb * W.transpose();  // n x Z
    s.colwise() -= s.rowwise().maxCoeff();
    s = s.array().exp();
    s.array().colwise() /= s.rowwise().sum().array();
    Eigen::MatrixXd g = (s - onehot).transpose() * Xb / static_cast<double>(n);
    g.leftCols(d) += c.l2 * W.leftCols(d);
    rmsprop_update(std::span<double>(W.data(), static_cast<std::size_t>(W.size())),
                   std::span<const double>(g.data(), static_cast<std::size_t>(g.size())),
                   std::span<double>(ms.data(), static_cast<std::size_t>(ms.size())), c.rmsprop);
  }
  return W;
}

/// Ridge least squares with an intercept: returns (D + 1) coefficients, bias last.
inline Eigen::VectorXd ridge_regression(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double ridge = 1e-6) {
  const auto n = X.rows(), d = X.cols();
  Eigen::MatrixXd Xb(n, d + 1);
  Xb << X, Eigen::VectorXd::Ones(n);
  Eigen::MatrixXd gram = Xb.transpose() * Xb;
  gram.diagonal().array() += ridge;
  return gram.ldlt().solve(Xb.transpose() * y);
}

struct LogisticConfig {
  int window{3};  // most recent series samples in the features
  SoftmaxConfig softmax;
  double ridge{1e-6};
};

struct LogisticModel {
  int num_dims{0};
  int num_features{0};
  int window{3};
  Eigen::VectorXd mean, scale;   // feature standardization
  Eigen::MatrixXd classifier;    // Z x (D + 1)
  Eigen::VectorXd gap_weights;   // D + 1
  double train_accuracy{0.0};

  [[nodiscard]] Eigen::VectorXd standardize(const Eigen::VectorXd& raw) const {
    return ((raw - mean).array() / scale.array()).matrix();
  }
  [[nodiscard]] Eigen::VectorXd scores(const Eigen::VectorXd& standardized) const {
    return classifier.leftCols(classifier.cols() - 1) * standardized + classifier.col(classifier.cols() - 1);
  }
  [[nodiscard]] double gap(const Eigen::VectorXd& standardized) const {
    return std::max(0.0, gap_weights.head(gap_weights.size() - 1).dot(standardized) + gap_weights.tail(1)(0));
  }
};

/// Raw features before step j: the last `window` series samples up to t_j
/// (the earliest repeated when fewer exist), one-hot of z_j, and the gap
/// t_j - t_{j-1} (0 at j = 0).
inline Eigen::VectorXd logistic_features(const Record& r, std::size_t j, int num_dims, int num_features,
                                         int window) {
  if (!r.series) throw DataError("logistic baseline needs a time series on record '" + r.id + "'");
  const auto& s = *r.series;
  Eigen::VectorXd x(window * num_features + num_dims + 1);
  const auto k = align_series_to_time(s, r.sequence[j].time);
  for (int w = 0; w < window; ++w) {
    const auto row = std::max<Eigen::Index>(0, k - (window - 1 - w));
    x.segment(w * num_features, num_features) = s.samples.row(row).transpose();
  }
  x.segment(window * num_features, num_dims).setZero();
  x(window * num_features + r.sequence[j].dim) = 1.0;
  x(x.size() - 1) = j == 0 ? 0.0 : r.sequence[j].time - r.sequence[j - 1].time;
  return x;
}

inline LogisticModel fit_logistic(Records train, int num_dims, int num_features, const LogisticConfig& c = {}) {
  if (num_features <= 0) throw DataError("logistic baseline needs time-series features");
  if (c.window < 1) throw ConfigError("logistic window must be >= 1");
  std::vector<Eigen::VectorXd> rows;
  std::vector<int> labels;
  std::vector<double> gaps;
  for (const Record* r : train)
    for (std::size_t j = 0; j + 1 < r->sequence.size(); ++j) {
      rows.push_back(logistic_features(*r, j, num_dims, num_features, c.window));
      labels.push_back(r->sequence[j + 1].dim);
      gaps.push_back(r->sequence[j + 1].time - r->sequence[j].time);
    }
  if (rows.empty()) throw DataError("logistic baseline: no training steps");
  const auto d = rows.front().size();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();

  LogisticModel m;
  m.num_dims = num_dims;
  m.num_features = num_features;
  m.window = c.window;
  m.mean = X.colwise().mean().transpose();
  const Eigen::MatrixXd centered = X.rowwise() - m.mean.transpose();
  m.scale = (centered.colwise().squaredNorm() / static_cast<double>(X.rows())).cwiseSqrt().transpose();
  m.scale = (m.scale.array() > 1e-12).select(m.scale, 1.0);
  const Eigen::MatrixXd Z = centered.array().rowwise() / m.scale.transpose().array();

  m.classifier = fit_softmax(Z, labels, num_dims, c.softmax);
  m.gap_weights = ridge_regression(Z, Eigen::Map<const Eigen::VectorXd>(gaps.data(), static_cast<Eigen::Index>(gaps.size())),
                                   c.ridge);
  std::size_t hit = 0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i)
    hit += argmax_lowest(m.scores(Z.row(i).transpose())) == labels[static_cast<std::size_t>(i)];
  m.train_accuracy = static_cast<double>(hit) / static_cast<double>(Z.rows());
  return m;
}

inline metrics::PredictionSet predict(const LogisticModel& m, Records test) {
  return collect_steps(test, [&](const Record& r, std::size_t, std::size_t j, metrics::PredictionStep& s) {
    const auto x = m.standardize(logistic_features(r, j, m.num_dims, m.num_features, m.window));
    s.ranking = ranking_of(m.scores(x));
    s.predicted_gap = m.gap(x);
  });
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto r = static_cast<Eigen::Index>(j.size());
  const auto c = r ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(j.at(i).size()) != c) throw DataError("ragged matrix in model JSON");
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = j.at(i).at(k).get<double>();
  }
  return m;
}

inline nlohmann::json vector_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

inline nlohmann::json to_json(const PoissonModel& m) {
  return {{"model", "poisson"}, {"rate", m.rate}, {"events", m.events}, {"observed_time", m.observed_time}};
}

inline nlohmann::json to_json(const SelfCorrectingModel& m) {
  return {{"model", "self_correcting"},  {"mu", m.params.mu},       {"alpha", m.params.alpha},
          {"log_likelihood", m.log_likelihood}, {"evaluations", m.evaluations}, {"converged", m.converged}};
}

inline nlohmann::json to_json(const MarkovModel& m) {
  auto table = nlohmann::json::array();
  for (const auto& [ctx, counts] : m.counts) table.push_back({{"context", ctx}, {"counts", counts}});
  nlohmann::json acc = nlohmann::json::object();
  for (const auto& [k, a] : m.validation_accuracy) acc[std::to_string(k)] = a;
  return {{"model", "markov"}, {"order", m.order},       {"num_dims", m.num_dims},
          {"marginal", m.marginal}, {"table", table}, {"validation_accuracy", acc}};
}

inline nlohmann::json to_json(const CtmcModel& m) {
  return {{"model", "ctmc"},
          {"rates", detail::matrix_json(m.rates)},
          {"counts", detail::matrix_json(m.counts)},
          {"sojourn", detail::vector_json(m.sojourn)},
          {"observed", m.observed}};
}

inline nlohmann::json to_json(const HawkesFit& f) {
  return {{"model", "hawkes"},
          {"w", f.params.w},
          {"mu", detail::vector_json(f.params.mu)},
          {"A", detail::matrix_json(f.params.A)},
          {"log_likelihood", f.log_likelihood},
          {"objective", f.objective},
          {"iterations", f.iterations},
          {"converged", f.converged},
          {"branching", f.branching}};
}

inline nlohmann::json to_json(const LogisticModel& m) {
  return {{"model", "logistic"},
          {"num_dims", m.num_dims},
          {"num_features", m.num_features},
          {"window", m.window},
          {"mean", detail::vector_json(m.mean)},
          {"scale", detail::vector_json(m.scale)},
          {"classifier", detail::matrix_json(m.classifier)},
          {"gap_weights", detail::vector_json(m.gap_weights)},
          {"train_accuracy", m.train_accuracy}};
}

inline PoissonModel poisson_from_json(const nlohmann::json& j) {
  return {j.at("rate").get<double>(), j.at("events").get<std::size_t>(), j.at("observed_time").get<double>()};
}

inline SelfCorrectingModel self_correcting_from_json(const nlohmann::json& j) {
  SelfCorrectingModel m;
  m.params = {j.at("mu").get<double>(), j.at("alpha").get<double>()};
  m.log_likelihood = j.at("log_likelihood").get<double>();
  m.evaluations = j.at("evaluations").get<long>();
  m.converged = j.at("converged").get<bool>();
  return m;
}

inline MarkovModel markov_from_json(const nlohmann::json& j) {
  MarkovModel m;
  m.order = j.at("order").get<int>();
  m.num_dims = j.at("num_dims").get<int>();
  m.marginal = j.at("marginal").get<std::vector<double>>();
  for (const auto& row : j.at("table"))
    m.counts[row.at("context").get<std::vector<int>>()] = row.at("counts").get<std::vector<double>>();
  for (const auto& [k, a] : j.at("validation_accuracy").items()) m.validation_accuracy[std::stoi(k)] = a.get<double>();
  return m;
}

inline CtmcModel ctmc_from_json(const nlohmann::json& j) {
  CtmcModel m;
  m.rates = detail::matrix_from_json(j.at("rates"));
  m.counts = detail::matrix_from_json(j.at("counts"));
  m.sojourn = detail::vector_from_json(j.at("sojourn"));
  m.observed = j.at("observed").get<std::vector<bool>>();
  return m;
}

inline HawkesFit hawkes_from_json(const nlohmann::json& j) {
  HawkesFit f;
  f.params.w = j.at("w").get<double>();
  f.params.mu = detail::vector_from_json(j.at("mu"));
  f.params.A = detail::matrix_from_json(j.at("A"));
  f.log_likelihood = j.at("log_likelihood").get<double>();
  f.objective = j.at("objective").get<double>();
  f.iterations = j.at("iterations").get<int>();
  f.converged = j.at("converged").get<bool>();
  f.branching = j.at("branching").get<double>();
  return f;
}

inline LogisticModel logistic_from_json(const nlohmann::json& j) {
  LogisticModel m;
  m.num_dims = j.at("num_dims").get<int>();
  m.num_features = j.at("num_features").get<int>();
  m.window = j.at("window").get<int>();
  m.mean = detail::vector_from_json(j.at("mean"));
  m.scale = detail::vector_from_json(j.at("scale"));
  m.classifier = detail::matrix_from_json(j.at("classifier"));
  m.gap_weights = detail::vector_from_json(j.at("gap_weights"));
  m.train_accuracy = j.at("train_accuracy").get<double>();
  return m;
}

}  // namespace atrpp::baselines
