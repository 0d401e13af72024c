#pragma once

// Config loading, manifests, and the five pipeline commands behind the CLI.

#include <array>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "atrpp/baselines.hpp"
#include "atrpp/checkpoint.hpp"
#include "atrpp/hawkes.hpp"
#include "atrpp/io.hpp"
#include "atrpp/metrics.hpp"
#include "atrpp/training.hpp"

namespace atrpp {

NLOHMANN_JSON_SERIALIZE_ENUM(NoiseKind, {{NoiseKind::uniform, "uniform"}, {NoiseKind::gaussian, "gaussian"}})

namespace experiment {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kManifestFormat = "atrpp-manifest/1";

struct BaselineConfig {
  bool poisson{true}, self_correcting{true}, markov{true}, ctmc{true}, hawkes{true}, logistic{true};
  int markov_max_order{3};
  std::vector<double> hawkes_w{0.01, 0.1, 1.0};
  double hawkes_l1{0.0};
  int hawkes_rollouts{100};
  int logistic_window{3};
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  unsigned threads{1};
  std::string out{"out"};

  SyntheticConfig synthetic;

  std::string data_dir;    // empty: the output directory
  std::string checkpoint;  // empty: <out>/checkpoint.json
  double horizon{0.0};     // observation window per record; 0 uses the last event time

  ModelConfig model = [] {
    ModelConfig m;
    m.time_scale = 0.0;  // auto: mean training gap
    return m;
  }();
  TrainConfig train;
  bool resume{false};

  std::vector<int> ks{1, 3, 5};
  bool normalize{true};
  std::string eval_split{"test"};

  BaselineConfig baselines;

  double edge_floor{0.0};
  double infectivity_epsilon{-1.0};  // negative keeps the checkpoint's
  std::string infectivity_split{"test"};
};

// One place lists every config key; loaders and writers walk it.
template <typename C, typename V>
void visit_fields(C& c, V&& v) {
  v("run", "seed", c.seed);
  v("run", "threads", c.threads);
  v("run", "out", c.out);

  auto& s = c.synthetic;
  v("synthetic", "num_dims", s.num_dims);
  v("synthetic", "mu_min", s.mu_min);
  v("synthetic", "mu_max", s.mu_max);
  v("synthetic", "a_min", s.a_min);
  v("synthetic", "a_max", s.a_max);
  v("synthetic", "zero_fraction", s.zero_fraction);
  v("synthetic", "w", s.w);
  v("synthetic", "horizon", s.horizon);
  v("synthetic", "cascades", s.num_cascades);
  v("synthetic", "noise_scale", s.noise_scale);
  v("synthetic", "noise", s.noise);
  v("synthetic", "max_branching", s.max_branching);
  v("synthetic", "series_step", s.series_step);
  v("synthetic", "split", s.split);

  v("data", "dir", c.data_dir);
  v("data", "checkpoint", c.checkpoint);
  v("data", "horizon", c.horizon);

  auto& m = c.model;
  v("model", "embed", m.embed);
  v("model", "hidden_event", m.hidden_event);
  v("model", "hidden_series", m.hidden_series);
  v("model", "hidden_syn", m.hidden_syn);
  v("model", "use_series", m.use_series);
  v("model", "epsilon", m.attention.epsilon);
  v("model", "window", m.attention.window);
  v("model", "time_scale", m.time_scale);

  auto& t = c.train;
  v("train", "max_epochs", t.max_epochs);
  v("train", "patience", t.patience);
  v("train", "lr", t.rmsprop.lr);
  v("train", "decay", t.rmsprop.decay);
  v("train", "rms_eps", t.rmsprop.eps);
  v("train", "clip_norm", t.clip_norm);
  v("train", "init_scale", t.init_scale);
  v("train", "sigma", t.loss.sigma);
  v("train", "time_weight", t.loss.time_weight);
  v("train", "resume", c.resume);

  v("eval", "k", c.ks);
  v("eval", "normalize", c.normalize);
  v("eval", "split", c.eval_split);

  auto& b = c.baselines;
  v("baselines", "poisson", b.poisson);
  v("baselines", "self_correcting", b.self_correcting);
  v("baselines", "markov", b.markov);
  v("baselines", "ctmc", b.ctmc);
  v("baselines", "hawkes", b.hawkes);
  v("baselines", "logistic", b.logistic);
  v("baselines", "markov_max_order", b.markov_max_order);
  v("baselines", "hawkes_w", b.hawkes_w);
  v("baselines", "hawkes_l1", b.hawkes_l1);
  v("baselines", "hawkes_rollouts", b.hawkes_rollouts);
  v("baselines", "logistic_window", b.logistic_window);

  v("infectivity", "edge_floor", c.edge_floor);
  v("infectivity", "epsilon", c.infectivity_epsilon);
  v("infectivity", "split", c.infectivity_split);
}

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_integer(const std::string& text) {
  T v{};
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || p != text.data() + text.size()) throw ConfigError("not an integer: '" + text + "'");
  return v;
}

inline void parse_text(const std::string& t, double& v) {
  try {
    v = io::parse_double(t, "config value");
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}
inline void parse_text(const std::string& t, int& v) { v = parse_integer<int>(t); }
inline void parse_text(const std::string& t, unsigned& v) { v = parse_integer<unsigned>(t); }
inline void parse_text(const std::string& t, std::uint64_t& v) { v = parse_integer<std::uint64_t>(t); }
inline void parse_text(const std::string& t, std::optional<std::uint64_t>& v) { v = parse_integer<std::uint64_t>(t); }
inline void parse_text(const std::string& t, std::string& v) { v = t; }
inline void parse_text(const std::string& t, bool& v) {
  if (t == "true" || t == "1" || t == "yes" || t == "on") v = true;
  else if (t == "false" || t == "0" || t == "no" || t == "off") v = false;
  else throw ConfigError("not a boolean: '" + t + "'");
}
inline void parse_text(const std::string& t, NoiseKind& v) {
  if (t == "uniform") v = NoiseKind::uniform;
  else if (t == "gaussian") v = NoiseKind::gaussian;
  else throw ConfigError("noise must be uniform or gaussian, got '" + t + "'");
}
template <typename T>
void parse_text(const std::string& t, std::vector<T>& v) {
  v.clear();
  for (const auto& item : split_list(t)) parse_text(item, v.emplace_back());
}
inline void parse_text(const std::string& t, std::array<double, 3>& v) {
  std::vector<double> items;
  parse_text(t, items);
  if (items.size() != 3) throw ConfigError("split needs three comma-separated ratios");
  std::copy(items.begin(), items.end(), v.begin());
}

template <typename T>
void read_json_value(const json& j, T& v) {
  v = j.get<T>();
}
inline void read_json_value(const json& j, std::optional<std::uint64_t>& v) {
  if (j.is_null()) v.reset();
  else v = j.get<std::uint64_t>();
}

}  // namespace detail

/// INI text; unknown sections or keys are errors so typos do not pass silently.
inline RunConfig parse_ini(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c;
  std::set<std::string> known;
  visit_fields(c, [&](const char* section, const char* key, auto& field) {
    const std::string path = std::string(section) + "." + key;
    known.insert(path);
    if (auto v = tree.get_optional<std::string>(pt::ptree::path_type(path, '.'))) {
      try {
        detail::parse_text(detail::trim(*v), field);
      } catch (const ConfigError& e) {
        throw ConfigError("[" + std::string(section) + "] " + key + ": " + e.what());
      }
    }
  });
  for (const auto& [section, keys] : tree) {
    if (keys.empty()) throw ConfigError("config: key '" + section + "' must sit inside a section");
    for (const auto& [key, value] : keys)
      if (!known.contains(section + "." + key)) throw ConfigError("config: unknown key [" + section + "] " + key);
  }
  return c;
}

inline json config_json(const RunConfig& c) {
  json out = json::object();
  visit_fields(c, [&](const char* section, const char* key, const auto& field) {
    if constexpr (std::is_same_v<std::decay_t<decltype(field)>, std::optional<std::uint64_t>>) {
      out[section][key] = field ? json(*field) : json();
    } else {
      out[section][key] = field;
    }
  });
  return out;
}

inline RunConfig config_from_json(const json& j) {
  RunConfig c;
  visit_fields(c, [&](const char* section, const char* key, auto& field) {
    if (j.contains(section) && j.at(section).contains(key)) {
      try {
        detail::read_json_value(j.at(section).at(key), field);
      } catch (const json::exception& e) {
        throw ConfigError("manifest [" + std::string(section) + "] " + key + ": " + e.what());
      }
    }
  });
  return c;
}

/// Reads a .json manifest (its "config" object) or an INI file.
inline RunConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  if (path.extension() == ".json") {
    try {
      const auto j = json::parse(text);
      if (j.value("format", "") != kManifestFormat) throw ConfigError(path.string() + ": not an atrpp manifest");
      return config_from_json(j.at("config"));
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
  return parse_ini(text);
}

/// Fills derived fields so the manifest holds no hidden state.
inline RunConfig resolve(RunConfig c) {
  if (!c.seed) throw ConfigError("a seed is required ([run] seed or --seed)");
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
  if (c.out.empty()) throw ConfigError("output directory must not be empty");
  if (c.data_dir.empty()) c.data_dir = c.out;
  if (c.checkpoint.empty()) c.checkpoint = (fs::path(c.out) / "checkpoint.json").string();
  c.synthetic.seed = *c.seed;
  c.train.seed = *c.seed;
  c.train.threads = c.threads;
  for (int k : c.ks)
    if (k < 1) throw ConfigError("accuracy@k needs k >= 1");
  return c;
}

inline Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "validation") return Split::validation;
  if (name == "test") return Split::test;
  throw ConfigError("split must be train, validation or test, got '" + name + "'");
}

inline void write_manifest(const RunConfig& c, const std::string& command, const json& results,
                           const std::vector<std::string>& outputs) {
  json m;
  m["format"] = kManifestFormat;
  m["command"] = command;
  m["config"] = config_json(c);
  m["results"] = results;
  m["outputs"] = outputs;
  io::write_text(fs::path(c.out) / ("manifest_" + command + ".json"), m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// data on disk

struct LoadedData {
  Dataset dataset;
  std::optional<Eigen::MatrixXd> truth_A;
};

inline void write_splits(const Dataset& d, const fs::path& path) {
  json j;
  for (auto [name, idx] : {std::pair{"train", &d.train}, std::pair{"validation", &d.validation},
                           std::pair{"test", &d.test}}) {
    auto ids = json::array();
    for (auto i : *idx) ids.push_back(d.records[i].id);
    j[name] = ids;
  }
  io::write_text(path, j.dump(1) + "\n");
}

/// events.jsonl (+ series.csv, splits.json, A.csv when present). Without a
/// splits file the records are split with the configured ratios and seed.
inline LoadedData load_data(const RunConfig& c) {
  const fs::path dir(c.data_dir);
  const auto series = dir / "series.csv";
  auto records = io::read_records(dir / "events.jsonl", fs::exists(series) ? series : fs::path{});
  LoadedData out;
  const auto splits = dir / "splits.json";
  if (fs::exists(splits)) {
    json j;
    try {
      j = json::parse(io::read_text(splits));
    } catch (const json::exception& e) {
      throw DataError(splits.string() + ": " + e.what());
    }
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < records.size(); ++i) by_id[records[i].id] = i;
    out.dataset = make_dataset(std::move(records));
    for (auto [name, idx] : {std::pair{"train", &out.dataset.train}, std::pair{"validation", &out.dataset.validation},
                             std::pair{"test", &out.dataset.test}}) {
      if (!j.contains(name)) throw DataError(splits.string() + ": missing '" + name + "'");
      for (const auto& id : j.at(name)) {
        const auto it = by_id.find(id.get<std::string>());
        if (it == by_id.end()) throw DataError(splits.string() + ": unknown record id " + id.dump());
        idx->push_back(it->second);
      }
    }
  } else {
    out.dataset = split_dataset(std::move(records), c.synthetic.split, c.synthetic.seed);
  }
  if (fs::exists(dir / "A.csv")) {
    out.truth_A = io::read_matrix_csv(dir / "A.csv");
    if (out.truth_A->rows() != out.dataset.num_dims || out.truth_A->cols() != out.dataset.num_dims)
      throw DataError("A.csv shape does not match the data's Z");
  }
  return out;
}

// ---------------------------------------------------------------------------
// reports

inline json report_json(const metrics::Report& r) {
  json j;
  j["model"] = r.model;
  j["steps"] = r.steps;
  if (r.confusion) {
    auto rows = json::array();
    for (Eigen::Index i = 0; i < r.confusion->rows(); ++i) {
      std::vector<int> row;
      for (Eigen::Index k = 0; k < r.confusion->cols(); ++k) row.push_back((*r.confusion)(i, k));
      rows.push_back(row);
    }
    j["confusion"] = rows;
  } else {
    j["confusion"] = nullptr;
  }
  if (r.scores) {
    j["precision"] = r.scores->macro_precision;
    j["recall"] = r.scores->macro_recall;
    j["f1"] = r.scores->macro_f1;
    j["per_class"] = {{"precision", r.scores->precision}, {"recall", r.scores->recall}, {"f1", r.scores->f1}};
  } else {
    j["precision"] = j["recall"] = j["f1"] = j["per_class"] = nullptr;
  }
  json acc = json::object();
  for (auto [k, a] : r.accuracy_at) acc[std::to_string(k)] = a;
  j["accuracy_at"] = r.accuracy_at.empty() ? json() : acc;
  j["mae"] = r.mae ? json(*r.mae) : json();
  j["rank_corr"] = r.rank_corr ? json(*r.rank_corr) : json();
  j["rel_err"] = r.rel_err ? json(*r.rel_err) : json();
  return j;
}

struct TableRow {
  metrics::Report report;
  std::string status{"ok"};
};

inline std::string csv_header(std::span<const int> ks) {
  std::string h = "model,status,steps,precision,recall,f1";
  for (int k : ks) h += ",acc@" + std::to_string(k);
  return h + ",mae,rank_corr,rel_err\n";
}

inline std::string csv_row(const TableRow& row, std::span<const int> ks) {
  const auto num = [](const std::optional<double>& v) { return v ? io::format_double(*v) : std::string(); };
  const auto& r = row.report;
  std::string status = row.status;
  std::replace(status.begin(), status.end(), ',', ';');
  std::replace(status.begin(), status.end(), '\n', ' ');
  std::string line = r.model + "," + status + "," + std::to_string(r.steps);
  line += "," + num(r.scores ? std::optional(r.scores->macro_precision) : std::nullopt);
  line += "," + num(r.scores ? std::optional(r.scores->macro_recall) : std::nullopt);
  line += "," + num(r.scores ? std::optional(r.scores->macro_f1) : std::nullopt);
  for (int k : ks) {
    const auto it = r.accuracy_at.find(k);
    line += "," + num(it == r.accuracy_at.end() ? std::nullopt : std::optional(it->second));
  }
  return line + "," + num(r.mae) + "," + num(r.rank_corr) + "," + num(r.rel_err) + "\n";
}

/// Recovery scores of an estimate against the ground truth, when one exists.
inline void add_recovery(metrics::Report& r, const std::optional<Eigen::MatrixXd>& truth, const Eigen::MatrixXd& est,
                         bool normalize) {
  if (!truth) return;
  r.rank_corr = metrics::rank_corr(*truth, est);
  if ((truth->array() > 0).any()) r.rel_err = metrics::rel_err(*truth, est, normalize);
}

/// The neural model's next-event predictions for every step of the given records.
inline metrics::PredictionSet model_predictions(const Checkpoint& ck, std::span<const Record* const> records,
                                                unsigned threads = 1) {
  std::vector<ForwardTrace> traces(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) {
    if (records[i]->sequence.size() >= 2) traces[i] = forward(*records[i], ck.params, ck.config);
  });
  return baselines::collect_steps(records,
                                  [&](const Record&, std::size_t ri, std::size_t j, metrics::PredictionStep& s) {
                                    const auto p = step_prediction(traces[ri], j, ck.config);
                                    s.ranking = p.ranking;
                                    s.predicted_gap = p.gap;
                                  });
}

/// DOT digraph: one node per dimension, one edge per cell whose strength is
/// positive and at least `floor`.
inline std::string infectivity_dot(const Eigen::MatrixXd& m, double floor) {
  std::string out = "digraph infectivity {\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) out += "  d" + std::to_string(i) + ";\n";
  const double top = m.size() ? m.maxCoeff() : 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      if (!(v > 0.0) || v < floor) continue;
      const double width = top > 0 ? 0.5 + 4.5 * v / top : 1.0;
      out += "  d" + std::to_string(i) + " -> d" + std::to_string(j) + " [weight=\"" + io::format_double(v) +
             "\", penwidth=\"" + io::format_double(width) + "\"];\n";
    }
  return out + "}\n";
}

// ---------------------------------------------------------------------------
// commands

inline json cmd_simulate(const RunConfig& c) {
  fs::create_directories(c.out);
  const auto data = generate_synthetic(c.synthetic, c.threads);
  const fs::path out(c.out);
  io::write_records(data.dataset.records, out / "events.jsonl", out / "series.csv");
  io::write_matrix_csv(data.truth.mu, out / "mu.csv");
  io::write_matrix_csv(data.truth.A, out / "A.csv");
  write_splits(data.dataset, out / "splits.json");
  std::size_t events = 0;
  for (const auto& r : data.dataset.records) events += r.sequence.size();
  const json results = {{"num_dims", c.synthetic.num_dims},
                        {"w", c.synthetic.w},
                        {"cascades", c.synthetic.num_cascades},
                        {"events", events},
                        {"scale_factor", data.scale_factor},
                        {"branching_before", data.branching_before},
                        {"branching_after", data.branching_after},
                        {"splits",
                         {{"train", data.dataset.train.size()},
                          {"validation", data.dataset.validation.size()},
                          {"test", data.dataset.test.size()}}}};
  write_manifest(c, "simulate", results, {"events.jsonl", "series.csv", "mu.csv", "A.csv", "splits.json"});
  return results;
}

inline json cmd_train(const RunConfig& c) {
  const auto data = load_data(c);
  fs::create_directories(c.out);
  ModelConfig mc = c.model;
  mc.num_dims = data.dataset.num_dims;
  mc.num_features = data.dataset.num_features;
  if (mc.num_features == 0) mc.use_series = false;

  std::optional<TrainingState> resume;
  std::vector<EpochLog> earlier;
  if (c.resume) {
    auto ck = load_checkpoint(c.checkpoint);
    if (!ck.state) throw DataError("checkpoint has no resume state: " + c.checkpoint);
    check_schema(ck.config, data.dataset);
    mc = ck.config;
    resume = std::move(ck.state);
    earlier = std::move(ck.log);
  }
  auto result = train(data.dataset, mc, c.train, std::move(resume));
  auto log = earlier;
  log.insert(log.end(), result.log.begin(), result.log.end());
  result.log = log;

  const fs::path out(c.out);
  save_checkpoint(checkpoint_from_result(result), out / "checkpoint.json");
  std::string csv = "epoch,train_loss,val_loss,seconds\n";
  for (const auto& e : log)
    csv += std::to_string(e.epoch) + "," + io::format_double(e.train_loss) + "," + io::format_double(e.val_loss) +
           "," + io::format_double(e.seconds) + "\n";
  io::write_text(out / "train_log.csv", csv);

  const json results = {{"variant", result.config.variant()},
                        {"epochs_completed", result.state.epochs_completed},
                        {"best_epoch", result.state.best_epoch},
                        {"best_val", atrpp::detail::finite_or_null(result.state.best_val)},
                        {"stopped_early", result.stopped_early},
                        {"time_scale", result.config.time_scale},
                        {"parameter_count", parameter_count(result.params)}};
  write_manifest(c, "train", results, {"checkpoint.json", "train_log.csv"});
  return results;
}

inline metrics::Report evaluate_checkpoint(const RunConfig& c, const Checkpoint& ck, const LoadedData& data) {
  check_schema(ck.config, data.dataset);
  const auto records = data.dataset.split(parse_split(c.eval_split));
  if (records.empty()) throw DataError("evaluation split '" + c.eval_split + "' is empty");
  auto report = metrics::evaluate(model_predictions(ck, records, c.threads), ck.config.num_dims, c.ks,
                                  ck.config.variant());
  if (data.truth_A) add_recovery(report, data.truth_A, extract_infectivity(ck.params, ck.config, records).strength,
                                 c.normalize);
  return report;
}

inline metrics::Report cmd_eval(const RunConfig& c) {
  const auto data = load_data(c);
  const auto ck = load_checkpoint(c.checkpoint);
  const auto report = evaluate_checkpoint(c, ck, data);
  fs::create_directories(c.out);
  const fs::path out(c.out);
  io::write_text(out / "metrics.json", report_json(report).dump(2) + "\n");
  io::write_text(out / "metrics.csv", csv_header(c.ks) + csv_row({report}, c.ks));
  write_manifest(c, "eval", report_json(report), {"metrics.json", "metrics.csv"});
  return report;
}

struct BaselineRun {
  std::vector<TableRow> rows;
  json models = json::object();  // fitted parameters by name
};

/// Fits every enabled baseline on the train split and scores it on the test
/// split. A failing model leaves a row with its error and the rest continue.
inline BaselineRun run_baselines(const RunConfig& c, const LoadedData& data) {
  namespace bl = baselines;
  const auto& ds = data.dataset;
  const auto train = ds.split(Split::train), val = ds.split(Split::validation), test = ds.split(Split::test);
  const int z = ds.num_dims;
  const auto& b = c.baselines;
  BaselineRun run;
  const auto attempt = [&](bool enabled, const std::string& name, auto&& body) {
    if (!enabled) return;
    TableRow row;
    try {
      row.report = body();
    } catch (const std::exception& e) {
      row.report = {};
      row.status = std::string("error: ") + e.what();
    }
    row.report.model = name;
    run.rows.push_back(std::move(row));
  };
  const auto score = [&](const metrics::PredictionSet& p) { return metrics::evaluate(p, z, c.ks); };

  attempt(b.poisson, "Poisson", [&] {
    const auto m = bl::fit_poisson(train, c.horizon);
    run.models["Poisson"] = bl::to_json(m);
    return score(bl::predict(m, test));
  });
  attempt(b.self_correcting, "SelfCorrecting", [&] {
    const auto m = bl::fit_self_correcting(train, c.horizon);
    run.models["SelfCorrecting"] = bl::to_json(m);
    return score(bl::predict(m, test, c.threads));
  });
  attempt(b.markov, "Markov", [&] {
    const auto m = bl::fit_markov(train, val, z, b.markov_max_order);
    run.models["Markov"] = bl::to_json(m);
    return score(bl::predict(m, test));
  });
  attempt(b.ctmc, "CTMC", [&] {
    const auto m = bl::fit_ctmc(train, z);
    run.models["CTMC"] = bl::to_json(m);
    return score(bl::predict(m, test));
  });
  attempt(b.hawkes, "Hawkes", [&] {
    bl::HawkesFitConfig fc;
    fc.l1 = b.hawkes_l1;
    const auto sel = bl::fit_hawkes(train, val, z, b.hawkes_w, fc, c.horizon);
    run.models["Hawkes"] = bl::to_json(sel.fit);
    bl::HawkesPredictConfig pc;
    pc.rollouts = b.hawkes_rollouts;
    pc.seed = *c.seed;
    pc.threads = c.threads;
    auto r = score(bl::predict(sel.fit.params, test, pc));
    add_recovery(r, data.truth_A, sel.fit.params.A, c.normalize);
    return r;
  });
  attempt(b.logistic, "Logistic", [&] {
    bl::LogisticConfig lc;
    lc.window = b.logistic_window;
    const auto m = bl::fit_logistic(train, z, ds.num_features, lc);
    run.models["Logistic"] = bl::to_json(m);
    return score(bl::predict(m, test));
  });
  return run;
}

inline BaselineRun cmd_baselines(const RunConfig& c) {
  const auto data = load_data(c);
  auto run = run_baselines(c, data);
  fs::create_directories(c.out);
  const fs::path out(c.out);
  std::string csv = csv_header(c.ks);
  auto reports = json::array();
  for (const auto& row : run.rows) {
    csv += csv_row(row, c.ks);
    auto j = report_json(row.report);
    j["status"] = row.status;
    reports.push_back(j);
  }
  io::write_text(out / "baselines.csv", csv);
  io::write_text(out / "baseline_models.json", run.models.dump(1) + "\n");
  write_manifest(c, "baselines", reports, {"baselines.csv", "baseline_models.json"});
  return run;
}

inline InfectivityEstimate cmd_infectivity(const RunConfig& c) {
  const auto data = load_data(c);
  auto ck = load_checkpoint(c.checkpoint);
  check_schema(ck.config, data.dataset);
  if (c.infectivity_epsilon >= 0.0) ck.config.attention.epsilon = c.infectivity_epsilon;
  check_config(ck.config);
  const auto records = data.dataset.split(parse_split(c.infectivity_split));
  if (records.empty()) throw DataError("infectivity split '" + c.infectivity_split + "' is empty");
  const auto est = extract_infectivity(ck.params, ck.config, records);
  fs::create_directories(c.out);
  const fs::path out(c.out);
  io::write_matrix_csv(est.strength, out / "infectivity.csv");
  io::write_text(out / "infectivity.dot", infectivity_dot(est.strength, c.edge_floor));
  json results = {{"records", est.records}, {"epsilon", est.epsilon}};
  if (data.truth_A) {
    metrics::Report r;
    add_recovery(r, data.truth_A, est.strength, c.normalize);
    results["rank_corr"] = *r.rank_corr;
    results["rel_err"] = r.rel_err ? json(*r.rel_err) : json();
  }
  write_manifest(c, "infectivity", results, {"infectivity.csv", "infectivity.dot"});
  return est;
}

}  // namespace experiment
}  // namespace atrpp
