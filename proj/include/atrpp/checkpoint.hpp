#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <string>

#include <json.hpp>

#include "atrpp/errors.hpp"
#include "atrpp/io.hpp"
#include "atrpp/training.hpp"

namespace atrpp {

inline constexpr const char* kCheckpointFormat = "atrpp-checkpoint/1";

struct Checkpoint {
  ModelConfig config;
  ModelParams params;  // parameters used for prediction (best validation)
  ClassWeights weights;
  std::optional<TrainingState> state;  // present when training can be resumed
  std::vector<EpochLog> log;
};

namespace detail {

// Tensors keyed by name; values in column-major order.
inline nlohmann::json params_json(const ModelParams& p) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& t : tensors(p))
    out[t.name] = {{"rows", t.rows}, {"cols", t.cols}, {"data", std::vector<double>(t.data.begin(), t.data.end())}};
  return out;
}

inline ModelParams params_from_json(const nlohmann::json& j, const ModelConfig& c) {
  auto p = ModelParams::zeros(c);
  for (auto& t : tensors(p)) {
    if (!j.contains(t.name)) throw DataError("checkpoint is missing tensor '" + t.name + "'");
    const auto& e = j.at(t.name);
    const auto data = e.at("data").get<std::vector<double>>();
    if (e.at("rows").get<Eigen::Index>() != t.rows || e.at("cols").get<Eigen::Index>() != t.cols ||
        data.size() != t.data.size())
      throw DataError("checkpoint tensor '" + t.name + "' has the wrong shape");
    std::copy(data.begin(), data.end(), t.data.begin());
  }
  return p;
}

// JSON has no infinity; an untouched best-validation value is stored as null.
inline nlohmann::json finite_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(); }

}  // namespace detail

inline nlohmann::json model_config_json(const ModelConfig& c) {
  return {{"num_dims", c.num_dims},         {"num_features", c.num_features},
          {"embed", c.embed},               {"hidden_event", c.hidden_event},
          {"hidden_series", c.hidden_series}, {"hidden_syn", c.hidden_syn},
          {"use_series", c.use_series},     {"epsilon", c.attention.epsilon},
          {"window", c.attention.window},   {"time_scale", c.time_scale}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_dims = j.at("num_dims").get<int>();
  c.num_features = j.at("num_features").get<int>();
  c.embed = j.at("embed").get<int>();
  c.hidden_event = j.at("hidden_event").get<int>();
  c.hidden_series = j.at("hidden_series").get<int>();
  c.hidden_syn = j.at("hidden_syn").get<int>();
  c.use_series = j.at("use_series").get<bool>();
  c.attention.epsilon = j.at("epsilon").get<double>();
  c.attention.window = j.at("window").get<int>();
  c.time_scale = j.at("time_scale").get<double>();
  check_config(c);
  return c;
}

inline nlohmann::json checkpoint_json(const Checkpoint& ck) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["variant"] = ck.config.variant();
  j["schema"] = {{"num_dims", ck.config.num_dims}, {"num_features", ck.config.num_features}};
  j["model"] = model_config_json(ck.config);
  j["parameter_count"] = parameter_count(ck.params);
  j["params"] = detail::params_json(ck.params);
  j["class_weights"] = {{"weights", std::vector<double>(ck.weights.weights.data(),
                                                        ck.weights.weights.data() + ck.weights.weights.size())},
                        {"counts", ck.weights.counts}};
  auto log = nlohmann::json::array();
  for (const auto& e : ck.log)
    log.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  j["log"] = log;
  if (ck.state) {
    const auto& s = *ck.state;
    j["resume"] = {{"epochs_completed", s.epochs_completed},
                   {"best_val", detail::finite_or_null(s.best_val)},
                   {"best_epoch", s.best_epoch},
                   {"since_best", s.since_best},
                   {"updates", s.optimizer.updates},
                   {"params", detail::params_json(s.params)},
                   {"best_params", detail::params_json(s.best_params)},
                   {"mean_square", detail::params_json(s.optimizer.mean_square)}};
  }
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != kCheckpointFormat) throw DataError("not an atrpp checkpoint (bad format tag)");
    Checkpoint ck;
    ck.config = model_config_from_json(j.at("model"));
    if (j.at("variant").get<std::string>() != ck.config.variant())
      throw DataError("checkpoint variant disagrees with its model config");
    ck.params = detail::params_from_json(j.at("params"), ck.config);
    const auto w = j.at("class_weights").at("weights").get<std::vector<double>>();
    ck.weights.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    ck.weights.counts = j.at("class_weights").at("counts").get<std::vector<std::size_t>>();
    for (auto c : ck.weights.counts) ck.weights.total += c;
    for (const auto& e : j.at("log"))
      ck.log.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("val_loss").get<double>(), 0.0});
    if (j.contains("resume")) {
      const auto& r = j.at("resume");
      TrainingState s;
      s.epochs_completed = r.at("epochs_completed").get<int>();
      s.best_val = r.at("best_val").is_null() ? std::numeric_limits<double>::infinity() : r.at("best_val").get<double>();
      s.best_epoch = r.at("best_epoch").get<int>();
      s.since_best = r.at("since_best").get<int>();
      s.params = detail::params_from_json(r.at("params"), ck.config);
      s.best_params = detail::params_from_json(r.at("best_params"), ck.config);
      s.optimizer.mean_square = detail::params_from_json(r.at("mean_square"), ck.config);
      s.optimizer.updates = r.at("updates").get<std::size_t>();
      ck.state = std::move(s);
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline Checkpoint checkpoint_from_result(const TrainResult& r) {
  return {r.config, r.params, r.weights, r.state, r.log};
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  io::write_text(path, checkpoint_json(ck).dump(1) + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

/// Schema check between a checkpoint and a dataset.
inline void check_schema(const ModelConfig& c, const Dataset& d) {
  if (c.num_dims != d.num_dims)
    throw DataError("schema mismatch: checkpoint has Z=" + std::to_string(c.num_dims) + ", data has Z=" +
                    std::to_string(d.num_dims));
  if (c.use_series && d.num_features != 0 && c.num_features != d.num_features)
    throw DataError("schema mismatch: checkpoint has F=" + std::to_string(c.num_features) + ", data has F=" +
                    std::to_string(d.num_features));
}

}  // namespace atrpp
