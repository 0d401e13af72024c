#pragma once

// Attentional twin-LSTM point-process model.
//
// Event i enters the event LSTM as [W_em[:, z_i]; gap_i / time_scale]. For a
// prediction step j every dimension z attends to the event states h_i in the
// window with unnormalized strengths alpha_iz = |tanh(h_i . v_z)| (zeroed
// below epsilon), giving contexts c_jz = sum_i alpha_iz h_i. The series LSTM
// state at the last sample at or before t_j is fused with each context,
//
//   s_jz = sigmoid(W_syn [h^y; c_jz] + b_syn),
//
// the next dimension is softmax_z(w_u . s_jz) and the next gap is
// w_s . s_jz* + b_s for the arg-max dimension z*.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "atrpp/data.hpp"
#include "atrpp/errors.hpp"
#include "atrpp/lstm.hpp"
#include "atrpp/random.hpp"

namespace atrpp {

struct AttentionConfig {
  double epsilon{0.01};  // strengths below this are zeroed; 1 disables attention
  int window{0};         // most recent states attended; 0 means all history
};

struct ModelConfig {
  int num_dims{0};
  int num_features{0};
  int embed{16};
  int hidden_event{32};
  int hidden_series{32};
  int hidden_syn{32};
  bool use_series{true};  // false gives the event-only variant
  AttentionConfig attention;
  double time_scale{1.0};  // gaps are divided by this before entering the model

  [[nodiscard]] const char* variant() const { return use_series ? "ATRPP" : "AERPP"; }
};

inline void check_config(const ModelConfig& c) {
  if (c.num_dims < 1) throw ConfigError("model needs Z >= 1");
  if (c.num_features < 0) throw ConfigError("feature width must be nonnegative");
  if (c.use_series && c.num_features == 0)
    throw ConfigError("series channel enabled but data has no series features");
  if (c.embed < 1 || c.hidden_event < 1 || c.hidden_series < 1 || c.hidden_syn < 1)
    throw ConfigError("layer sizes must be positive");
  if (c.attention.epsilon < 0.0 || c.attention.epsilon > 1.0)
    throw ConfigError("attention epsilon must be in [0, 1]");
  if (c.attention.window < 0) throw ConfigError("attention window must be >= 0");
  if (!(c.time_scale > 0.0) || !std::isfinite(c.time_scale))
    throw ConfigError("time_scale must be positive");
}

struct ModelParams {
  Eigen::MatrixXd embedding;     // E x Z
  LstmParams event_lstm;         // input E + 1, hidden H_event
  LstmParams series_lstm;        // input F, hidden H_series
  Eigen::MatrixXd attention;     // H_event x Z; column z is v_z
  Eigen::MatrixXd syn_weight;    // H_syn x (H_series + H_event)
  Eigen::VectorXd syn_bias;      // H_syn
  Eigen::VectorXd score_weight;  // H_syn, shared across dimensions
  Eigen::VectorXd time_weight;   // H_syn
  double time_bias{0.0};

  static ModelParams zeros(const ModelConfig& c) {
    ModelParams p;
    p.embedding = Eigen::MatrixXd::Zero(c.embed, c.num_dims);
    p.event_lstm = LstmParams(c.embed + 1, c.hidden_event);
    p.series_lstm = LstmParams(c.num_features, c.hidden_series);
    p.attention = Eigen::MatrixXd::Zero(c.hidden_event, c.num_dims);
    p.syn_weight = Eigen::MatrixXd::Zero(c.hidden_syn, c.hidden_series + c.hidden_event);
    p.syn_bias = Eigen::VectorXd::Zero(c.hidden_syn);
    p.score_weight = Eigen::VectorXd::Zero(c.hidden_syn);
    p.time_weight = Eigen::VectorXd::Zero(c.hidden_syn);
    return p;
  }
};

namespace detail {

template <typename P>
auto model_tensors(P& p) {
  constexpr auto W = TensorKind::weight;
  constexpr auto B = TensorKind::bias;
  using Scalar = std::conditional_t<std::is_const_v<P>, const double, double>;
  std::vector<TensorRef<Scalar>> out;
  out.push_back(tensor_ref("embedding", p.embedding, W));
  for (auto& t : lstm_tensors(p.event_lstm, "event_lstm.")) out.push_back(std::move(t));
  for (auto& t : lstm_tensors(p.series_lstm, "series_lstm.")) out.push_back(std::move(t));
  out.push_back(tensor_ref("attention.v", p.attention, W));
  out.push_back(tensor_ref("synergic.W", p.syn_weight, W));
  out.push_back(tensor_ref("synergic.b", p.syn_bias, B));
  out.push_back(tensor_ref("score.w_u", p.score_weight, W));
  out.push_back(tensor_ref("time.w_s", p.time_weight, W));
  out.push_back(TensorRef<Scalar>{"time.b_s", std::span<Scalar>(&p.time_bias, 1), 1, 1, B});
  return out;
}

}  // namespace detail

/// Every learnable tensor, in a fixed order, as flat views.
inline TensorList<double> tensors(ModelParams& p) { return detail::model_tensors(p); }
inline TensorList<const double> tensors(const ModelParams& p) { return detail::model_tensors(p); }

inline std::size_t parameter_count(const ModelParams& p) {
  std::size_t n = 0;
  for (const auto& t : tensors(p)) n += t.data.size();
  return n;
}

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  for (auto& t : tensors(z)) std::fill(t.data.begin(), t.data.end(), 0.0);
  return z;
}

/// Weights uniform in [-scale, scale], biases zero, forget-gate biases +1.
inline ModelParams init_params(const ModelConfig& c, std::uint64_t seed, double scale = 0.1) {
  check_config(c);
  auto p = ModelParams::zeros(c);
  auto rng = make_stream(seed, 0x1417);
  for (auto& t : tensors(p)) {
    if (t.kind == TensorKind::weight) {
      for (auto& x : t.data) x = uniform(rng, -scale, scale);
    } else if (t.name.ends_with("b_f")) {
      std::fill(t.data.begin(), t.data.end(), 1.0);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// building blocks

inline Eigen::VectorXd embed(int dim, const Eigen::MatrixXd& embedding) {
  if (dim < 0 || dim >= embedding.cols())
    throw DataError("dimension " + std::to_string(dim) + " out of range for embedding");
  return embedding.col(dim);
}

// Largest double below 1; |tanh| saturates to exactly 1 in floating point.
inline constexpr double kMaxStrength = 1.0 - 0x1.0p-53;

inline double threshold_strength(double tanh_score, double epsilon) {
  const double a = std::min(std::abs(tanh_score), kMaxStrength);
  return a < epsilon ? 0.0 : a;
}

/// alpha = |tanh(h . v)| when at least epsilon, else 0; always in [0, 1).
inline double attention_score(const Eigen::VectorXd& h, const Eigen::VectorXd& v, double epsilon) {
  if (h.size() != v.size()) throw ConfigError("attention vector width mismatch");
  return threshold_strength(std::tanh(h.dot(v)), epsilon);
}

/// Unnormalized sum of the most recent min(window, n) states weighted by
/// their strengths; window 0 means all states.
inline Eigen::VectorXd context_vector(std::span<const Eigen::VectorXd> states,
                                      std::span<const double> weights, int window = 0) {
  if (states.size() != weights.size()) throw ConfigError("states and weights differ in length");
  if (states.empty()) return {};
  Eigen::VectorXd c = Eigen::VectorXd::Zero(states.front().size());
  const std::size_t n = states.size();
  const std::size_t first = (window <= 0 || static_cast<std::size_t>(window) >= n) ? 0 : n - window;
  for (std::size_t i = first; i < n; ++i) c += weights[i] * states[i];
  return c;
}

// ---------------------------------------------------------------------------

struct ForwardTrace {
  std::size_t steps{0};                     // step j predicts event j + 1
  std::vector<int> dims;                    // history dims z_0 .. z_{steps-1}
  std::vector<double> times;                // history times t_0 .. t_{steps-1}
  std::vector<LstmStepCache> event_steps;   // one per history event
  std::vector<LstmStepCache> series_steps;  // series samples 0 .. max aligned index
  std::vector<Eigen::Index> series_index;   // aligned sample per step, -1 without series
  Eigen::MatrixXd event_states;             // H_event x steps, column i is h_i
  Eigen::MatrixXd attn_tanh;                // steps x Z, tanh(h_i . v_z)
  Eigen::MatrixXd alpha;                    // steps x Z, thresholded strengths
  std::vector<Eigen::MatrixXd> context;     // per step, H_event x Z
  std::vector<Eigen::VectorXd> series_state;  // per step, h^y (zero without series)
  std::vector<Eigen::MatrixXd> synergic;    // per step, H_syn x Z
  Eigen::MatrixXd scores;                   // Z x steps
  Eigen::MatrixXd log_probs;                // Z x steps
  Eigen::MatrixXd probs;                    // Z x steps, column j is u_{j+1}
  std::vector<int> predicted_dim;           // arg-max, lowest index on ties
  Eigen::VectorXd time_output;              // raw time-head output, normalized units

  // attention window [first, j] used at step j
  [[nodiscard]] std::size_t window_begin(std::size_t j, int window) const {
    return (window <= 0 || j + 1 <= static_cast<std::size_t>(window)) ? 0 : j + 1 - window;
  }
};

inline int argmax_lowest(const Eigen::VectorXd& v) {
  int best = 0;
  for (int z = 1; z < v.size(); ++z)
    if (v(z) > v(best)) best = z;
  return best;
}

/// Runs the model over the first `steps` prediction steps of a record; step j
/// sees events 0..j. The default covers every observed next event (N - 1).
inline ForwardTrace forward(const Record& record, const ModelParams& p, const ModelConfig& cfg,
                            std::size_t steps = std::numeric_limits<std::size_t>::max()) {
  const auto& events = record.sequence.events;
  const std::size_t n = events.size();
  if (steps == std::numeric_limits<std::size_t>::max()) steps = n > 0 ? n - 1 : 0;
  if (steps > n) throw ConfigError("more prediction steps than events");
  if (record.sequence.num_dims != cfg.num_dims)
    throw DataError("record '" + record.id + "' has Z=" + std::to_string(record.sequence.num_dims) +
                    ", model expects " + std::to_string(cfg.num_dims));

  const int z_count = cfg.num_dims;
  const Eigen::Index he = cfg.hidden_event;
  const Eigen::Index hs = cfg.hidden_series;
  const Eigen::Index e_width = cfg.embed;

  ForwardTrace tr;
  tr.steps = steps;
  tr.event_steps.resize(steps);
  tr.event_states.resize(he, static_cast<Eigen::Index>(steps));

  Eigen::VectorXd h = Eigen::VectorXd::Zero(he);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(he);
  Eigen::VectorXd x(e_width + 1);
  for (std::size_t i = 0; i < steps; ++i) {
    const auto& e = events[i];
    tr.dims.push_back(e.dim);
    tr.times.push_back(e.time);
    x.head(e_width) = embed(e.dim, p.embedding);
    x(e_width) = i == 0 ? 0.0 : (e.time - events[i - 1].time) / cfg.time_scale;
    lstm_step(x, h, c, p.event_lstm, tr.event_steps[i]);
    h = tr.event_steps[i].h;
    c = tr.event_steps[i].c;
    tr.event_states.col(static_cast<Eigen::Index>(i)) = h;
  }

  const bool with_series = cfg.use_series && record.series.has_value();
  tr.series_index.assign(steps, -1);
  if (with_series) {
    const auto& s = *record.series;
    if (s.width() != cfg.num_features)
      throw DataError("record '" + record.id + "' series width differs from the model");
    Eigen::Index last = -1;
    for (std::size_t j = 0; j < steps; ++j) {
      tr.series_index[j] = align_series_to_time(s, events[j].time);
      last = std::max(last, tr.series_index[j]);
    }
    tr.series_steps.resize(static_cast<std::size_t>(last + 1));
    Eigen::VectorXd hy = Eigen::VectorXd::Zero(hs);
    Eigen::VectorXd cy = Eigen::VectorXd::Zero(hs);
    for (Eigen::Index k = 0; k <= last; ++k) {
      auto& cache = tr.series_steps[static_cast<std::size_t>(k)];
      lstm_step(s.samples.row(k).transpose(), hy, cy, p.series_lstm, cache);
      hy = cache.h;
      cy = cache.c;
    }
  }

  tr.attn_tanh = (tr.event_states.transpose() * p.attention).array().tanh().matrix();
  tr.alpha = tr.attn_tanh.unaryExpr(
      [eps = cfg.attention.epsilon](double g) { return threshold_strength(g, eps); });

  const auto cols = static_cast<Eigen::Index>(steps);
  tr.scores.resize(z_count, cols);
  tr.log_probs.resize(z_count, cols);
  tr.probs.resize(z_count, cols);
  tr.time_output.resize(cols);
  tr.predicted_dim.resize(steps);
  tr.context.resize(steps);
  tr.series_state.resize(steps);
  tr.synergic.resize(steps);

  const int window = cfg.attention.window;
  Eigen::MatrixXd ctx = Eigen::MatrixXd::Zero(he, z_count);
  const auto w_series = p.syn_weight.leftCols(hs);
  const auto w_context = p.syn_weight.rightCols(he);
  for (std::size_t j = 0; j < steps; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    if (tr.window_begin(j, window) == 0) {
      ctx.noalias() += tr.event_states.col(jj) * tr.alpha.row(jj);
    } else {
      ctx.setZero();
      for (auto i = static_cast<Eigen::Index>(tr.window_begin(j, window)); i <= jj; ++i)
        ctx.noalias() += tr.event_states.col(i) * tr.alpha.row(i);
    }
    tr.context[j] = ctx;

    tr.series_state[j] = with_series
                             ? tr.series_steps[static_cast<std::size_t>(tr.series_index[j])].h
                             : Eigen::VectorXd::Zero(hs);
    const Eigen::VectorXd base = w_series * tr.series_state[j] + p.syn_bias;
    Eigen::MatrixXd pre = w_context * ctx;
    pre.colwise() += base;
    tr.synergic[j] = (1.0 / (1.0 + (-pre.array()).exp())).matrix();

    const Eigen::VectorXd score = tr.synergic[j].transpose() * p.score_weight;
    const double top = score.maxCoeff();
    const double lse = top + std::log((score.array() - top).exp().sum());
    tr.scores.col(jj) = score;
    tr.log_probs.col(jj) = score.array() - lse;
    tr.probs.col(jj) = tr.log_probs.col(jj).array().exp();

    const int best = argmax_lowest(score);
    tr.predicted_dim[j] = best;
    tr.time_output(jj) = p.time_weight.dot(tr.synergic[j].col(best)) + p.time_bias;
  }
  return tr;
}

/// Backpropagates upstream gradients of a scalar loss: `d_scores` (Z x steps)
/// w.r.t. the softmax logits and `d_time` (steps) w.r.t. the raw time output.
inline ModelParams backward(const ForwardTrace& tr, const ModelParams& p, const ModelConfig& cfg,
                            const Eigen::MatrixXd& d_scores, const Eigen::VectorXd& d_time) {
  ModelParams g = zeros_like(p);
  const std::size_t steps = tr.steps;
  if (steps == 0) return g;
  const Eigen::Index he = cfg.hidden_event;
  const Eigen::Index hs = cfg.hidden_series;
  const auto w_series = p.syn_weight.leftCols(hs);
  const auto w_context = p.syn_weight.rightCols(he);

  std::vector<Eigen::MatrixXd> d_ctx(steps);
  std::vector<Eigen::VectorXd> d_series(tr.series_steps.size(), Eigen::VectorXd::Zero(hs));
  for (std::size_t j = 0; j < steps; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const auto& s = tr.synergic[j];
    const int best = tr.predicted_dim[j];
    const double dt = d_time(jj);

    Eigen::MatrixXd d_syn = p.score_weight * d_scores.col(jj).transpose();
    d_syn.col(best) += dt * p.time_weight;
    g.score_weight.noalias() += s * d_scores.col(jj);
    g.time_weight += dt * s.col(best);
    g.time_bias += dt;

    const Eigen::MatrixXd d_pre = (d_syn.array() * s.array() * (1.0 - s.array())).matrix();
    const Eigen::VectorXd d_base = d_pre.rowwise().sum();
    g.syn_bias += d_base;
    g.syn_weight.rightCols(he).noalias() += d_pre * tr.context[j].transpose();
    g.syn_weight.leftCols(hs).noalias() += d_base * tr.series_state[j].transpose();
    if (tr.series_index[j] >= 0)
      d_series[static_cast<std::size_t>(tr.series_index[j])].noalias() += w_series.transpose() * d_base;
    d_ctx[j] = w_context.transpose() * d_pre;
  }

  // contexts -> event states and strengths
  const int window = cfg.attention.window;
  const auto cols = static_cast<Eigen::Index>(steps);
  Eigen::MatrixXd d_states = Eigen::MatrixXd::Zero(he, cols);
  Eigen::MatrixXd d_alpha(cols, cfg.num_dims);
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(he, cfg.num_dims);
  for (auto i = cols - 1; i >= 0; --i) {
    if (window <= 0 || static_cast<std::size_t>(window) >= steps) {
      acc += d_ctx[static_cast<std::size_t>(i)];
    } else {
      acc.setZero();
      const auto last = std::min<Eigen::Index>(i + window - 1, cols - 1);
      for (auto j = i; j <= last; ++j) acc += d_ctx[static_cast<std::size_t>(j)];
    }
    d_states.col(i).noalias() += acc * tr.alpha.row(i).transpose();
    d_alpha.row(i).noalias() = tr.event_states.col(i).transpose() * acc;
  }

  // through |tanh(.)| and the threshold
  Eigen::MatrixXd d_logit(cols, cfg.num_dims);
  for (Eigen::Index i = 0; i < cols; ++i)
    for (Eigen::Index z = 0; z < cfg.num_dims; ++z) {
      const double t = tr.attn_tanh(i, z);
      d_logit(i, z) = tr.alpha(i, z) > 0.0
                          ? d_alpha(i, z) * (t > 0 ? 1.0 : -1.0) * (1.0 - t * t)
                          : 0.0;
    }
  d_states.noalias() += p.attention * d_logit.transpose();
  g.attention.noalias() += tr.event_states * d_logit;

  // event LSTM, back through time
  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(he);
  Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(he);
  for (auto i = cols - 1; i >= 0; --i) {
    const Eigen::VectorXd dh = d_states.col(i) + dh_next;
    auto r = lstm_step_backward(tr.event_steps[static_cast<std::size_t>(i)], dh, dc_next,
                                p.event_lstm, g.event_lstm);
    g.embedding.col(tr.dims[static_cast<std::size_t>(i)]) += r.dx.head(cfg.embed);
    dh_next = std::move(r.dh_prev);
    dc_next = std::move(r.dc_prev);
  }

  // series LSTM
  if (!tr.series_steps.empty()) {
    dh_next = Eigen::VectorXd::Zero(hs);
    dc_next = Eigen::VectorXd::Zero(hs);
    for (auto k = static_cast<std::ptrdiff_t>(tr.series_steps.size()) - 1; k >= 0; --k) {
      const auto kk = static_cast<std::size_t>(k);
      const Eigen::VectorXd dh = d_series[kk] + dh_next;
      auto r = lstm_step_backward(tr.series_steps[kk], dh, dc_next, p.series_lstm, g.series_lstm);
      dh_next = std::move(r.dh_prev);
      dc_next = std::move(r.dc_prev);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// prediction

struct Prediction {
  int dim{0};
  double gap{0.0};   // predicted waiting time, clamped at 0, original units
  double time{0.0};  // last observed time + gap
  Eigen::VectorXd probs;
  std::vector<int> ranking;  // dims by decreasing probability, lowest index on ties
};

inline std::vector<int> rank_dims(const Eigen::VectorXd& probs) {
  std::vector<int> order(static_cast<std::size_t>(probs.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs(a) > probs(b); });
  return order;
}

inline Prediction step_prediction(const ForwardTrace& tr, std::size_t j, const ModelConfig& cfg) {
  const auto jj = static_cast<Eigen::Index>(j);
  Prediction out;
  out.dim = tr.predicted_dim[j];
  out.gap = cfg.time_scale * std::max(0.0, tr.time_output(jj));
  out.time = tr.times[j] + out.gap;
  out.probs = tr.probs.col(jj);
  out.ranking = rank_dims(tr.scores.col(jj));
  return out;
}

/// Predicts the event after the last one in `prefix`.
inline Prediction predict_next(const Record& prefix, const ModelParams& p, const ModelConfig& cfg) {
  const auto n = prefix.sequence.size();
  if (n == 0) throw DataError("prediction needs at least one observed event");
  const auto tr = forward(prefix, p, cfg, n);
  return step_prediction(tr, n - 1, cfg);
}

// ---------------------------------------------------------------------------
// infectivity

struct InfectivityEstimate {
  Eigen::MatrixXd strength;  // (source dim, target dim) mean attention strength
  Eigen::MatrixXd counts;    // samples behind each cell
  std::size_t records{0};
  double epsilon{0.0};
};

/// Averages, over every record and every prediction step, the strength that
/// target dimension z assigns to each attended history event of dimension i.
/// Cells without samples are 0.
inline InfectivityEstimate extract_infectivity(const ModelParams& p, const ModelConfig& cfg,
                                               std::span<const Record* const> records) {
  const int z_count = cfg.num_dims;
  InfectivityEstimate est;
  est.epsilon = cfg.attention.epsilon;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(z_count, z_count);
  est.counts = Eigen::MatrixXd::Zero(z_count, z_count);
  const int window = cfg.attention.window;
  for (const Record* r : records) {
    const auto tr = forward(*r, p, cfg);
    if (tr.steps == 0) continue;
    ++est.records;
    for (std::size_t i = 0; i < tr.steps; ++i) {
      // steps j >= i whose window still reaches event i
      const std::size_t reach = tr.steps - i;
      const auto uses = static_cast<double>(
          window <= 0 ? reach : std::min<std::size_t>(reach, static_cast<std::size_t>(window)));
      const int src = tr.dims[i];
      sum.row(src) += uses * tr.alpha.row(static_cast<Eigen::Index>(i));
      est.counts.row(src).array() += uses;
    }
  }
  est.strength = (est.counts.array() > 0).select(sum.array() / est.counts.array().max(1.0), 0.0);
  return est;
}

inline InfectivityEstimate extract_infectivity(const ModelParams& p, const ModelConfig& cfg,
                                               std::span<const Record> records) {
  std::vector<const Record*> ptrs;
  for (const auto& r : records) ptrs.push_back(&r);
  return extract_infectivity(p, cfg, std::span<const Record* const>(ptrs));
}

}  // namespace atrpp
