#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "atrpp/errors.hpp"

namespace atrpp::metrics {

// One evaluated prediction step. Models that do not predict a dimension leave
// `ranking` empty; models that do not predict time leave `predicted_gap` unset.
struct PredictionStep {
  int true_dim{0};
  std::vector<int> ranking;  // most likely first; ranking[0] is the predicted dim
  double true_gap{0.0};
  std::optional<double> predicted_gap;
};

using PredictionSet = std::vector<PredictionStep>;

inline Eigen::MatrixXi confusion_matrix(const PredictionSet& preds, int num_dims) {
  Eigen::MatrixXi m = Eigen::MatrixXi::Zero(num_dims, num_dims);
  for (const auto& p : preds) {
    if (p.ranking.empty()) continue;
    if (p.true_dim < 0 || p.true_dim >= num_dims || p.ranking.front() < 0 || p.ranking.front() >= num_dims)
      throw DataError("prediction dimension out of range");
    ++m(p.true_dim, p.ranking.front());  // rows: truth, columns: prediction
  }
  return m;
}

struct ClassificationScores {
  std::vector<double> precision, recall, f1;  // per class
  double macro_precision{0.0}, macro_recall{0.0}, macro_f1{0.0};
};

/// Per-class scores with 0 for empty denominators; macro averages over
/// classes with at least one true instance.
inline ClassificationScores precision_recall_f1(const Eigen::MatrixXi& confusion) {
  const auto z = confusion.rows();
  ClassificationScores s;
  int present = 0;
  for (Eigen::Index c = 0; c < z; ++c) {
    const double tp = confusion(c, c);
    const double predicted = confusion.col(c).sum();
    const double actual = confusion.row(c).sum();
    const double p = predicted > 0 ? tp / predicted : 0.0;
    const double r = actual > 0 ? tp / actual : 0.0;
    const double f = p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
    s.precision.push_back(p);
    s.recall.push_back(r);
    s.f1.push_back(f);
    if (actual > 0) {
      ++present;
      s.macro_precision += p;
      s.macro_recall += r;
      s.macro_f1 += f;
    }
  }
  if (present > 0) {
    s.macro_precision /= present;
    s.macro_recall /= present;
    s.macro_f1 /= present;
  }
  return s;
}

inline double mae(std::span<const double> truth, std::span<const double> predicted) {
  if (truth.size() != predicted.size()) throw ConfigError("mae: length mismatch");
  if (truth.empty()) throw ConfigError("mae: no values");
  double sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) sum += std::abs(truth[i] - predicted[i]);
  return sum / static_cast<double>(truth.size());
}

/// Fraction of steps whose true dim is among the first k ranked dims.
inline double accuracy_at_k(std::span<const std::vector<int>> rankings, std::span<const int> truths, int k) {
  if (rankings.size() != truths.size()) throw ConfigError("accuracy_at_k: length mismatch");
  if (rankings.empty()) throw ConfigError("accuracy_at_k: no predictions");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const auto& r = rankings[i];
    const auto end = r.begin() + std::min<std::ptrdiff_t>(std::max(k, 0), static_cast<std::ptrdiff_t>(r.size()));
    if (std::find(r.begin(), end, truths[i]) != end) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(truths.size());
}

/// Kendall tau-b; 0 when either input is constant.
inline double kendall_tau(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ConfigError("kendall_tau: length mismatch");
  const auto n = x.size();
  if (n < 2) throw ConfigError("kendall_tau needs at least 2 values");
  double concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0) ++ties_x;
      if (dy == 0) ++ties_y;
      if (dx == 0 || dy == 0) continue;
      if ((dx > 0) == (dy > 0)) ++concordant;
      else ++discordant;
    }
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  const double denom = std::sqrt((pairs - ties_x) * (pairs - ties_y));
  return denom > 0 ? (concordant - discordant) / denom : 0.0;
}

inline double kendall_tau(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  return kendall_tau(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                     std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
}

/// Row-averaged Kendall tau-b between a true and an estimated matrix.
inline double rank_corr(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& estimate) {
  if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols())
    throw ConfigError("rank_corr: shape mismatch");
  if (truth.cols() < 2 || truth.rows() < 1) throw ConfigError("rank_corr needs Z >= 2");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i) {
    const Eigen::VectorXd a = truth.row(i).transpose();
    const Eigen::VectorXd b = estimate.row(i).transpose();
    sum += kendall_tau(a, b);
  }
  return sum / static_cast<double>(truth.rows());
}

/// Mean |est - truth| / truth over entries with truth > 0. With `normalize`,
/// each matrix is first divided by its own largest entry.
inline double rel_err(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& estimate, bool normalize) {
  if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols())
    throw ConfigError("rel_err: shape mismatch");
  if (!(truth.array() > 0).any()) throw DataError("no positive ground-truth entries");
  Eigen::MatrixXd t = truth;
  Eigen::MatrixXd e = estimate;
  if (normalize) {
    t /= t.maxCoeff();
    if (e.maxCoeff() > 0) e /= e.maxCoeff();
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < t.rows(); ++i)
    for (Eigen::Index j = 0; j < t.cols(); ++j)
      if (truth(i, j) > 0) {
        sum += std::abs(e(i, j) - t(i, j)) / t(i, j);
        ++n;
      }
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------

struct Report {
  std::string model;
  std::size_t steps{0};
  std::optional<Eigen::MatrixXi> confusion;
  std::optional<ClassificationScores> scores;
  std::map<int, double> accuracy_at;  // k -> accuracy@k
  std::optional<double> mae;
  std::optional<double> rank_corr;
  std::optional<double> rel_err;
};

/// Everything computable from a prediction set: classification metrics when
/// rankings exist, MAE when gaps exist.
inline Report evaluate(const PredictionSet& preds, int num_dims, std::span<const int> ks, std::string model = {}) {
  Report r;
  r.model = std::move(model);
  r.steps = preds.size();
  if (preds.empty()) return r;
  const bool has_dims = std::all_of(preds.begin(), preds.end(), [](const auto& p) { return !p.ranking.empty(); });
  const bool has_gaps = std::all_of(preds.begin(), preds.end(), [](const auto& p) { return p.predicted_gap.has_value(); });
  if (has_dims) {
    r.confusion = confusion_matrix(preds, num_dims);
    r.scores = precision_recall_f1(*r.confusion);
    std::vector<std::vector<int>> rankings;
    std::vector<int> truths;
    for (const auto& p : preds) {
      rankings.push_back(p.ranking);
      truths.push_back(p.true_dim);
    }
    for (int k : ks) r.accuracy_at[k] = accuracy_at_k(rankings, truths, k);
  }
  if (has_gaps) {
    std::vector<double> t, g;
    for (const auto& p : preds) {
      t.push_back(p.true_gap);
      g.push_back(*p.predicted_gap);
    }
    r.mae = mae(t, g);
  }
  return r;
}

}  // namespace atrpp::metrics
