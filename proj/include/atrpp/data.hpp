#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "atrpp/errors.hpp"
#include "atrpp/random.hpp"

namespace atrpp {

struct Event {
  int dim{0};
  double time{0.0};

  friend bool operator==(const Event&, const Event&) = default;
};

struct EventSequence {
  std::vector<Event> events;
  int num_dims{0};

  [[nodiscard]] std::size_t size() const { return events.size(); }
  [[nodiscard]] bool empty() const { return events.empty(); }
  [[nodiscard]] const Event& operator[](std::size_t i) const { return events[i]; }

  friend bool operator==(const EventSequence&, const EventSequence&) = default;
};

// Evenly sampled feature vectors; row k is observed at start_time + k * step.
struct TimeSeries {
  double start_time{0.0};
  double step{1.0};
  Eigen::MatrixXd samples;  // T x F

  [[nodiscard]] Eigen::Index length() const { return samples.rows(); }
  [[nodiscard]] Eigen::Index width() const { return samples.cols(); }
  [[nodiscard]] double time_of(Eigen::Index k) const {
    return start_time + static_cast<double>(k) * step;
  }

  friend bool operator==(const TimeSeries& a, const TimeSeries& b) {
    return a.start_time == b.start_time && a.step == b.step &&
           a.samples.rows() == b.samples.rows() &&
           a.samples.cols() == b.samples.cols() && a.samples == b.samples;
  }
};

struct Record {
  std::string id;
  EventSequence sequence;
  std::optional<TimeSeries> series;  // absent selects the event-only model

  [[nodiscard]] int num_dims() const { return sequence.num_dims; }

  friend bool operator==(const Record&, const Record&) = default;
};

enum class Split : std::uint8_t { train, validation, test };

struct Dataset {
  std::vector<Record> records;
  int num_dims{0};
  int num_features{0};  // 0 when no record carries a series
  std::vector<std::size_t> train, validation, test;  // indices into records

  [[nodiscard]] std::vector<const Record*> split(Split which) const {
    const auto& idx = which == Split::train        ? train
                      : which == Split::validation ? validation
                                                   : test;
    std::vector<const Record*> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(&records[i]);
    return out;
  }
};

/// Lists every broken invariant of a record. An empty result means the record
/// is accepted by every downstream operation.
inline std::vector<std::string> validate_record(const Record& record) {
  std::vector<std::string> violations;
  const auto& seq = record.sequence;
  if (seq.num_dims <= 0) violations.push_back("num_dims: Z must be positive");
  for (std::size_t i = 0; i < seq.events.size(); ++i) {
    const auto& e = seq.events[i];
    const auto at = "events[" + std::to_string(i) + "]";
    if (e.dim < 0) violations.push_back(at + ".dim: dim >= 0");
    if (seq.num_dims > 0 && e.dim >= seq.num_dims)
      violations.push_back(at + ".dim: dim < Z");
    if (!std::isfinite(e.time)) violations.push_back(at + ".time: time finite");
    else if (e.time < 0.0) violations.push_back(at + ".time: time >= 0");
    if (i > 0 && e.time < seq.events[i - 1].time)
      violations.push_back(at + ".time: timestamps nondecreasing");
  }
  if (record.series) {
    const auto& s = *record.series;
    if (!(s.step > 0.0) || !std::isfinite(s.step))
      violations.push_back("series.step: step > 0");
    if (!std::isfinite(s.start_time))
      violations.push_back("series.start_time: finite");
    if (s.length() < 1) violations.push_back("series.samples: T >= 1");
    if (!s.samples.allFinite())
      violations.push_back("series.samples: all entries finite");
    if (!seq.empty() && s.length() >= 1) {
      if (s.start_time > seq.events.front().time)
        violations.push_back("series.start_time: start_time <= first event time");
      if (s.time_of(s.length() - 1) < seq.events.back().time)
        violations.push_back("series: coverage reaches last event time");
    }
  }
  return violations;
}

/// Zero-order hold: index of the last sample at or before t, clamped to the
/// final sample.
inline Eigen::Index align_series_to_time(const TimeSeries& series, double t) {
  if (t < series.start_time) throw DataError("event precedes series coverage");
  const double elapsed = (t - series.start_time) / series.step;
  if (elapsed >= static_cast<double>(series.length())) return series.length() - 1;
  auto k = static_cast<Eigen::Index>(std::floor(elapsed));
  if (k >= series.length()) return series.length() - 1;
  // the division can round across a grid point in either direction
  if (k > 0 && series.time_of(k) > t) --k;
  if (k + 1 < series.length() && series.time_of(k + 1) <= t) ++k;
  return k;
}

/// Partition sizes: floor of n * ratio, with the remainder handed out by
/// largest fractional part (lowest index on ties).
inline std::array<std::size_t, 3> split_sizes(std::size_t n,
                                              const std::array<double, 3>& ratios) {
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * ratios[i];
    const double fl = std::floor(exact + 1e-9);
    sizes[i] = static_cast<std::size_t>(fl);
    frac[i] = exact - fl;
    assigned += sizes[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (frac[i] > frac[best]) best = i;
    ++sizes[best];
    frac[best] = -1.0;
    ++assigned;
  }
  return sizes;
}

inline Dataset make_dataset(std::vector<Record> records) {
  Dataset ds;
  if (!records.empty()) ds.num_dims = records.front().num_dims();
  for (const auto& r : records) {
    if (r.num_dims() != ds.num_dims) throw DataError("records disagree on Z");
    if (r.series) {
      const auto f = static_cast<int>(r.series->width());
      if (ds.num_features != 0 && f != ds.num_features)
        throw DataError("records disagree on feature width F");
      ds.num_features = f;
    }
  }
  ds.records = std::move(records);
  return ds;
}

/// Seeded random partition into train/validation/test.
inline Dataset split_dataset(std::vector<Record> records,
                             const std::array<double, 3>& ratios,
                             std::uint64_t seed) {
  if (records.size() < 3) throw DataError("split_dataset needs at least 3 records");
  for (double r : ratios)
    if (!(r > 0.0)) throw ConfigError("split ratios must be positive");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");

  Dataset ds = make_dataset(std::move(records));
  const auto n = ds.records.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_stream(seed, 0x5b1175);
  shuffle(order, rng);

  const auto sizes = split_sizes(n, ratios);
  auto it = order.begin();
  ds.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
  it += static_cast<std::ptrdiff_t>(sizes[0]);
  ds.validation.assign(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
  it += static_cast<std::ptrdiff_t>(sizes[1]);
  ds.test.assign(it, order.end());
  return ds;
}

// Inter-event gaps of a sequence; the first gap is 0.
inline std::vector<double> inter_event_gaps(const EventSequence& seq) {
  std::vector<double> gaps(seq.size(), 0.0);
  for (std::size_t i = 1; i < seq.size(); ++i)
    gaps[i] = seq.events[i].time - seq.events[i - 1].time;
  return gaps;
}

}  // namespace atrpp
