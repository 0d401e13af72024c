#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "atrpp/data.hpp"
#include "atrpp/errors.hpp"
#include "atrpp/model.hpp"
#include "atrpp/parallel.hpp"
#include "atrpp/random.hpp"

namespace atrpp {

struct LossConfig {
  double sigma{1.0};        // spread of the Gaussian time penalty, normalized units
  double time_weight{1.0};  // scale of the time term relative to the class term
};

inline void check_config(const LossConfig& c) {
  if (!(c.sigma > 0.0)) throw ConfigError("loss sigma must be positive");
  if (c.time_weight < 0.0) throw ConfigError("time_loss_weight must be nonnegative");
}

struct ClassWeights {
  Eigen::VectorXd weights;
  std::vector<std::size_t> counts;
  std::size_t total{0};
};

/// b_z = total / (Z * max(count_z, 1)).
inline ClassWeights class_weights_from_counts(std::vector<std::size_t> counts) {
  ClassWeights cw;
  cw.counts = std::move(counts);
  const auto z = static_cast<Eigen::Index>(cw.counts.size());
  for (auto c : cw.counts) cw.total += c;
  cw.weights.resize(z);
  for (Eigen::Index d = 0; d < z; ++d)
    cw.weights(d) = static_cast<double>(cw.total) /
                    (static_cast<double>(z) * static_cast<double>(std::max<std::size_t>(cw.counts[static_cast<std::size_t>(d)], 1)));
  return cw;
}

// Counts prediction targets: every event that has a predecessor.
inline ClassWeights class_weights(std::span<const Record* const> train, int num_dims) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_dims), 0);
  for (const Record* r : train)
    for (std::size_t i = 1; i < r->sequence.size(); ++i) ++counts[static_cast<std::size_t>(r->sequence[i].dim)];
  return class_weights_from_counts(std::move(counts));
}

// Mean inter-event gap over prediction targets; 1 when there are none.
inline double mean_gap(std::span<const Record* const> records) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const Record* r : records)
    for (std::size_t i = 1; i < r->sequence.size(); ++i) {
      sum += r->sequence[i].time - r->sequence[i - 1].time;
      ++n;
    }
  return n > 0 && sum > 0.0 ? sum / static_cast<double>(n) : 1.0;
}

inline constexpr double kMinProbability = 1e-12;

struct LossValue {
  double total{0.0};
  double class_term{0.0};
  double time_term{0.0};
  std::size_t steps{0};
  std::size_t clamped{0};  // probabilities floored at kMinProbability
};

struct LossUpstream {
  Eigen::MatrixXd d_scores;  // Z x steps
  Eigen::VectorXd d_time;    // steps
};

/// Negative weighted log-likelihood of a trace:
///   sum_j  -b[z_{j+1}] log u_{j+1}[z_{j+1}]
///          + time_weight * ((gap_j - out_j)^2 / (2 sigma^2) + log(2 pi sigma^2) / 2)
/// with gaps in normalized units. Fills `upstream` when given.
inline LossValue sequence_loss(const ForwardTrace& tr, const Record& record, const Eigen::VectorXd& b,
                               const LossConfig& lc, const ModelConfig& mc,
                               LossUpstream* upstream = nullptr) {
  const auto& ev = record.sequence.events;
  if (tr.steps + 1 > ev.size()) throw ConfigError("trace has steps without targets");
  LossValue out;
  out.steps = tr.steps;
  const double log_floor = std::log(kMinProbability);
  const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi * lc.sigma * lc.sigma);
  const double inv_var = 1.0 / (lc.sigma * lc.sigma);
  const auto cols = static_cast<Eigen::Index>(tr.steps);
  if (upstream) {
    upstream->d_scores = Eigen::MatrixXd::Zero(mc.num_dims, cols);
    upstream->d_time = Eigen::VectorXd::Zero(cols);
  }
  for (Eigen::Index j = 0; j < cols; ++j) {
    const auto& next = ev[static_cast<std::size_t>(j + 1)];
    const int y = next.dim;
    double lp = tr.log_probs(y, j);
    const bool clamped = lp < log_floor;
    if (clamped) {
      lp = log_floor;
      ++out.clamped;
    }
    out.class_term -= b(y) * lp;

    const double gap = (next.time - ev[static_cast<std::size_t>(j)].time) / mc.time_scale;
    const double diff = tr.time_output(j) - gap;
    out.time_term += lc.time_weight * (0.5 * diff * diff * inv_var + log_norm);

    if (upstream) {
      if (!clamped) {
        upstream->d_scores.col(j) = b(y) * tr.probs.col(j);
        upstream->d_scores(y, j) -= b(y);
      }
      upstream->d_time(j) = lc.time_weight * diff * inv_var;
    }
  }
  out.total = out.class_term + out.time_term;
  return out;
}

struct LossAndGradient {
  LossValue loss;
  ModelParams grad;
};

/// Exact gradient of sequence_loss w.r.t. every parameter.
inline LossAndGradient gradients(const ForwardTrace& tr, const Record& record, const Eigen::VectorXd& b,
                                 const LossConfig& lc, const ModelParams& p, const ModelConfig& mc) {
  LossUpstream up;
  auto loss = sequence_loss(tr, record, b, lc, mc, &up);
  return {loss, backward(tr, p, mc, up.d_scores, up.d_time)};
}

inline LossAndGradient loss_and_gradient(const Record& record, const ModelParams& p, const ModelConfig& mc,
                                         const Eigen::VectorXd& b, const LossConfig& lc) {
  return gradients(forward(record, p, mc), record, b, lc, p, mc);
}

// ---------------------------------------------------------------------------
// RMSprop

struct RmspropConfig {
  double lr{1e-3};
  double decay{0.9};
  double eps{1e-8};
};

/// s <- decay s + (1 - decay) g^2;  theta <- theta - lr g / (sqrt(s) + eps).
inline void rmsprop_update(std::span<double> theta, std::span<const double> grad, std::span<double> mean_sq,
                           const RmspropConfig& c) {
  if (theta.size() != grad.size() || theta.size() != mean_sq.size())
    throw ConfigError("rmsprop shape mismatch");
  for (std::size_t k = 0; k < theta.size(); ++k) {
    mean_sq[k] = c.decay * mean_sq[k] + (1.0 - c.decay) * grad[k] * grad[k];
    theta[k] -= c.lr * grad[k] / (std::sqrt(mean_sq[k]) + c.eps);
  }
}

struct OptimizerState {
  ModelParams mean_square;
  std::size_t updates{0};
};

inline OptimizerState make_optimizer_state(const ModelParams& p) { return {zeros_like(p), 0}; }

inline void rmsprop_step(ModelParams& params, const ModelParams& grads, OptimizerState& state,
                         const RmspropConfig& c) {
  auto theta = tensors(params);
  const auto g = tensors(grads);
  auto s = tensors(state.mean_square);
  if (theta.size() != g.size() || theta.size() != s.size()) throw ConfigError("rmsprop shape mismatch");
  for (std::size_t t = 0; t < theta.size(); ++t) rmsprop_update(theta[t].data, g[t].data, s[t].data, c);
  ++state.updates;
}

inline double global_norm(const ModelParams& g) {
  double sq = 0.0;
  for (const auto& t : tensors(g))
    for (double x : t.data) sq += x * x;
  return std::sqrt(sq);
}

/// Rescales in place so the global norm is at most max_norm; returns the norm before.
inline double clip_global_norm(ModelParams& g, double max_norm) {
  const double norm = global_norm(g);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& t : tensors(g))
      for (double& x : t.data) x *= scale;
  }
  return norm;
}

inline void add_to(ModelParams& acc, const ModelParams& g) {
  auto a = tensors(acc);
  const auto b = tensors(g);
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t k = 0; k < a[t].data.size(); ++k) a[t].data[k] += b[t].data[k];
}

/// Sum of per-record gradients and losses, accumulated in record order.
inline LossAndGradient total_gradient(std::span<const Record* const> records, const ModelParams& p,
                                      const ModelConfig& mc, const Eigen::VectorXd& b, const LossConfig& lc,
                                      unsigned threads = 1) {
  std::vector<LossAndGradient> parts(records.size());
  parallel_for(records.size(), threads,
               [&](std::size_t i) { parts[i] = loss_and_gradient(*records[i], p, mc, b, lc); });
  LossAndGradient sum{{}, zeros_like(p)};
  for (const auto& part : parts) {
    add_to(sum.grad, part.grad);
    sum.loss.total += part.loss.total;
    sum.loss.class_term += part.loss.class_term;
    sum.loss.time_term += part.loss.time_term;
    sum.loss.steps += part.loss.steps;
    sum.loss.clamped += part.loss.clamped;
  }
  return sum;
}

// ---------------------------------------------------------------------------

/// Tracks the best validation loss; signals a stop after `patience`
/// consecutive epochs without improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {
    if (patience < 1) throw ConfigError("patience must be >= 1");
  }
  EarlyStopping(int patience, double best, int best_epoch, int since)
      : patience_(patience), best_(best), best_epoch_(best_epoch), since_(since) {}

  // Returns true when this epoch is the new best.
  bool update(int epoch, double loss) {
    if (loss < best_) {
      best_ = loss;
      best_epoch_ = epoch;
      since_ = 0;
      return true;
    }
    ++since_;
    return false;
  }
  [[nodiscard]] bool should_stop() const { return since_ >= patience_; }
  [[nodiscard]] double best() const { return best_; }
  [[nodiscard]] int best_epoch() const { return best_epoch_; }
  [[nodiscard]] int since_best() const { return since_; }

 private:
  int patience_;
  double best_{std::numeric_limits<double>::infinity()};
  int best_epoch_{0};
  int since_{0};
};

struct TrainConfig {
  int max_epochs{20};
  int patience{3};
  RmspropConfig rmsprop;
  double clip_norm{5.0};
  double init_scale{0.1};
  std::uint64_t seed{1};
  LossConfig loss;
  unsigned threads{1};
};

inline void check_config(const TrainConfig& c) {
  if (c.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (c.patience < 1) throw ConfigError("patience must be >= 1");
  if (!(c.rmsprop.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (c.rmsprop.decay < 0.0 || c.rmsprop.decay >= 1.0) throw ConfigError("rmsprop decay must be in [0, 1)");
  if (!(c.rmsprop.eps > 0.0)) throw ConfigError("rmsprop eps must be positive");
  check_config(c.loss);
}

struct EpochLog {
  int epoch{0};
  double train_loss{0.0};  // mean per prediction step during the epoch
  double val_loss{0.0};    // mean per prediction step after the epoch
  double seconds{0.0};
};

// Everything needed to continue a run where it stopped.
struct TrainingState {
  ModelParams params;
  OptimizerState optimizer;
  int epochs_completed{0};
  ModelParams best_params;
  double best_val{std::numeric_limits<double>::infinity()};
  int best_epoch{0};
  int since_best{0};
};

struct TrainResult {
  ModelParams params;  // best validation parameters
  ModelConfig config;
  ClassWeights weights;
  std::vector<EpochLog> log;
  TrainingState state;
  bool stopped_early{false};
};

inline std::vector<const Record*> trainable(std::vector<const Record*> records) {
  std::erase_if(records, [](const Record* r) { return r->sequence.size() < 2; });
  return records;
}

/// Mean loss per prediction step; records are evaluated concurrently and
/// summed in order.
inline double mean_loss(std::span<const Record* const> records, const ModelParams& p, const ModelConfig& mc,
                        const Eigen::VectorXd& b, const LossConfig& lc, unsigned threads) {
  std::vector<LossValue> losses(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) {
    losses[i] = sequence_loss(forward(*records[i], p, mc), *records[i], b, lc, mc);
  });
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& l : losses) {
    total += l.total;
    steps += l.steps;
  }
  return steps ? total / static_cast<double>(steps) : 0.0;
}

/// Per-record RMSprop training with best-validation checkpointing and early
/// stopping. A `time_scale` of 0 in the model config is replaced by the mean
/// training gap. Pass `resume` to continue a previous run.
inline TrainResult train(const Dataset& data, ModelConfig mc, const TrainConfig& tc,
                         std::optional<TrainingState> resume = std::nullopt) {
  check_config(tc);
  const auto train_set = trainable(data.split(Split::train));
  const auto val_set = trainable(data.split(Split::validation));
  if (train_set.empty()) throw DataError("training split has no sequence with 2 or more events");
  if (val_set.empty()) throw DataError("validation split has no sequence with 2 or more events");
  if (mc.time_scale <= 0.0) mc.time_scale = mean_gap(train_set);
  check_config(mc);

  TrainResult result;
  result.config = mc;
  result.weights = class_weights(train_set, mc.num_dims);
  const auto& b = result.weights.weights;

  TrainingState st;
  if (resume) {
    st = std::move(*resume);
  } else {
    st.params = init_params(mc, tc.seed, tc.init_scale);
    st.optimizer = make_optimizer_state(st.params);
    st.best_params = st.params;
  }
  EarlyStopping stopper(tc.patience, st.best_val, st.best_epoch, st.since_best);

  std::vector<std::size_t> order(train_set.size());
  for (int epoch = st.epochs_completed + 1; epoch <= tc.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_stream(tc.seed, 0xE90C00 + static_cast<std::uint64_t>(epoch));
    shuffle(order, rng);

    double epoch_total = 0.0;
    std::size_t epoch_steps = 0;
    for (auto idx : order) {
      const Record& r = *train_set[idx];
      auto [loss, grad] = loss_and_gradient(r, st.params, mc, b, tc.loss);
      if (!std::isfinite(loss.total)) {
        const auto tr = forward(r, st.params, mc);
        std::size_t bad = 0;
        for (; bad < tr.steps; ++bad)
          if (!std::isfinite(tr.time_output(static_cast<Eigen::Index>(bad))) ||
              !tr.probs.col(static_cast<Eigen::Index>(bad)).allFinite())
            break;
        throw NumericError("non-finite loss on record '" + r.id + "' at step " + std::to_string(bad) +
                           " (epoch " + std::to_string(epoch) + ")");
      }
      clip_global_norm(grad, tc.clip_norm);
      rmsprop_step(st.params, grad, st.optimizer, tc.rmsprop);
      epoch_total += loss.total;
      epoch_steps += loss.steps;
    }

    const double val = mean_loss(val_set, st.params, mc, b, tc.loss, tc.threads);
    if (!std::isfinite(val)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    if (stopper.update(epoch, val)) st.best_params = st.params;
    st.epochs_completed = epoch;
    st.best_val = stopper.best();
    st.best_epoch = stopper.best_epoch();
    st.since_best = stopper.since_best();

    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    result.log.push_back({epoch, epoch_total / static_cast<double>(std::max<std::size_t>(epoch_steps, 1)), val,
                          elapsed.count()});
    if (stopper.should_stop()) {
      result.stopped_early = true;
      break;
    }
  }
  result.params = st.best_params;
  result.state = std::move(st);
  return result;
}

}  // namespace atrpp
