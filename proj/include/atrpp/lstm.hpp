#pragma once

// Peephole LSTM cell:
//
//   i = sigmoid(W_i x + U_i h' + V_i * c' + b_i)
//   f = sigmoid(W_f x + U_f h' + V_f * c' + b_f)
//   g = tanh(W_c x + U_c h' + b_c)
//   c = f * c' + i * g
//   o = sigmoid(W_o x + U_o h' + V_o * c + b_o)
//   h = o * tanh(c)
//
// with diagonal peepholes V (stored as vectors) and elementwise products *.

#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "atrpp/errors.hpp"
#include "atrpp/random.hpp"

namespace atrpp {

enum class TensorKind { weight, bias };

template <typename T>
struct TensorRef {
  std::string name;
  std::span<T> data;
  Eigen::Index rows{0};
  Eigen::Index cols{0};
  TensorKind kind{TensorKind::weight};
};

template <typename T>
using TensorList = std::vector<TensorRef<T>>;

namespace detail {

template <typename M>
auto tensor_ref(std::string name, M& m, TensorKind kind) {
  using Scalar = std::conditional_t<std::is_const_v<M>, const double, double>;
  return TensorRef<Scalar>{std::move(name), std::span<Scalar>(m.data(), static_cast<std::size_t>(m.size())),
                           m.rows(), m.cols(), kind};
}

inline auto sigmoid(const Eigen::VectorXd& x) -> Eigen::VectorXd {
  return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

}  // namespace detail

struct LstmParams {
  Eigen::MatrixXd W_i, W_f, W_o, W_c;  // H x D
  Eigen::MatrixXd U_i, U_f, U_o, U_c;  // H x H
  Eigen::VectorXd V_i, V_f, V_o;       // H (diagonal peepholes)
  Eigen::VectorXd b_i, b_f, b_o, b_c;  // H

  LstmParams() = default;
  LstmParams(Eigen::Index input, Eigen::Index hidden) {
    for (auto* w : {&W_i, &W_f, &W_o, &W_c}) *w = Eigen::MatrixXd::Zero(hidden, input);
    for (auto* u : {&U_i, &U_f, &U_o, &U_c}) *u = Eigen::MatrixXd::Zero(hidden, hidden);
    for (auto* v : {&V_i, &V_f, &V_o, &b_i, &b_f, &b_o, &b_c}) *v = Eigen::VectorXd::Zero(hidden);
  }

  [[nodiscard]] Eigen::Index input_size() const { return W_i.cols(); }
  [[nodiscard]] Eigen::Index hidden_size() const { return W_i.rows(); }
};

template <typename P>
  requires std::same_as<std::remove_const_t<P>, LstmParams>
auto lstm_tensors(P& p, std::string_view prefix) {
  const std::string pre(prefix);
  using detail::tensor_ref;
  constexpr auto W = TensorKind::weight;
  constexpr auto B = TensorKind::bias;
  return std::vector{
      tensor_ref(pre + "W_i", p.W_i, W), tensor_ref(pre + "W_f", p.W_f, W),
      tensor_ref(pre + "W_o", p.W_o, W), tensor_ref(pre + "W_c", p.W_c, W),
      tensor_ref(pre + "U_i", p.U_i, W), tensor_ref(pre + "U_f", p.U_f, W),
      tensor_ref(pre + "U_o", p.U_o, W), tensor_ref(pre + "U_c", p.U_c, W),
      tensor_ref(pre + "V_i", p.V_i, W), tensor_ref(pre + "V_f", p.V_f, W),
      tensor_ref(pre + "V_o", p.V_o, W), tensor_ref(pre + "b_i", p.b_i, B),
      tensor_ref(pre + "b_f", p.b_f, B), tensor_ref(pre + "b_o", p.b_o, B),
      tensor_ref(pre + "b_c", p.b_c, B),
  };
}

// Everything one step keeps for backpropagation.
struct LstmStepCache {
  Eigen::VectorXd x, h_prev, c_prev;
  Eigen::VectorXd in, forget, out, cand;  // gate activations
  Eigen::VectorXd c, tanh_c, h;
};

inline void check_shapes(const LstmParams& p, const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev,
                         const Eigen::VectorXd& c_prev) {
  if (x.size() != p.input_size())
    throw ConfigError("lstm input width " + std::to_string(x.size()) + " != " +
                      std::to_string(p.input_size()));
  if (h_prev.size() != p.hidden_size() || c_prev.size() != p.hidden_size())
    throw ConfigError("lstm state width mismatch");
}

inline void lstm_step(const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev,
                      const Eigen::VectorXd& c_prev, const LstmParams& p, LstmStepCache& s) {
  check_shapes(p, x, h_prev, c_prev);
  using detail::sigmoid;
  s.x = x;
  s.h_prev = h_prev;
  s.c_prev = c_prev;
  s.in = sigmoid(p.W_i * x + p.U_i * h_prev + p.V_i.cwiseProduct(c_prev) + p.b_i);
  s.forget = sigmoid(p.W_f * x + p.U_f * h_prev + p.V_f.cwiseProduct(c_prev) + p.b_f);
  s.cand = (p.W_c * x + p.U_c * h_prev + p.b_c).array().tanh().matrix();
  s.c = s.forget.cwiseProduct(c_prev) + s.in.cwiseProduct(s.cand);
  s.out = sigmoid(p.W_o * x + p.U_o * h_prev + p.V_o.cwiseProduct(s.c) + p.b_o);
  s.tanh_c = s.c.array().tanh().matrix();
  s.h = s.out.cwiseProduct(s.tanh_c);
}

struct LstmState {
  Eigen::VectorXd h, c;
};

inline LstmState lstm_step(const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev,
                           const Eigen::VectorXd& c_prev, const LstmParams& p) {
  LstmStepCache s;
  lstm_step(x, h_prev, c_prev, p, s);
  return {s.h, s.c};
}

struct LstmStepGrad {
  Eigen::VectorXd dx, dh_prev, dc_prev;
};

/// Backward through one step. `dh` and `dc_next` are the loss gradients w.r.t. this
/// step's outputs h and c; parameter gradients accumulate into `grad`.
inline LstmStepGrad lstm_step_backward(const LstmStepCache& s, const Eigen::VectorXd& dh,
                                       const Eigen::VectorXd& dc_next, const LstmParams& p,
                                       LstmParams& grad) {
  const Eigen::ArrayXd o = s.out.array();
  const Eigen::ArrayXd i = s.in.array();
  const Eigen::ArrayXd f = s.forget.array();
  const Eigen::ArrayXd g = s.cand.array();
  const Eigen::ArrayXd tc = s.tanh_c.array();

  const Eigen::VectorXd dpo = (dh.array() * tc * o * (1.0 - o)).matrix();
  const Eigen::VectorXd dc =
      (dc_next.array() + dh.array() * o * (1.0 - tc * tc) + dpo.array() * p.V_o.array()).matrix();
  const Eigen::VectorXd dpf = (dc.array() * s.c_prev.array() * f * (1.0 - f)).matrix();
  const Eigen::VectorXd dpi = (dc.array() * g * i * (1.0 - i)).matrix();
  const Eigen::VectorXd dpg = (dc.array() * i * (1.0 - g * g)).matrix();

  grad.W_i.noalias() += dpi * s.x.transpose();
  grad.W_f.noalias() += dpf * s.x.transpose();
  grad.W_o.noalias() += dpo * s.x.transpose();
  grad.W_c.noalias() += dpg * s.x.transpose();
  grad.U_i.noalias() += dpi * s.h_prev.transpose();
  grad.U_f.noalias() += dpf * s.h_prev.transpose();
  grad.U_o.noalias() += dpo * s.h_prev.transpose();
  grad.U_c.noalias() += dpg * s.h_prev.transpose();
  grad.V_i += dpi.cwiseProduct(s.c_prev);
  grad.V_f += dpf.cwiseProduct(s.c_prev);
  grad.V_o += dpo.cwiseProduct(s.c);
  grad.b_i += dpi;
  grad.b_f += dpf;
  grad.b_o += dpo;
  grad.b_c += dpg;

  LstmStepGrad out;
  out.dx = p.W_i.transpose() * dpi + p.W_f.transpose() * dpf + p.W_o.transpose() * dpo +
           p.W_c.transpose() * dpg;
  out.dh_prev = p.U_i.transpose() * dpi + p.U_f.transpose() * dpf + p.U_o.transpose() * dpo +
                p.U_c.transpose() * dpg;
  out.dc_prev = (dc.array() * f + dpi.array() * p.V_i.array() + dpf.array() * p.V_f.array()).matrix();
  return out;
}

}  // namespace atrpp
