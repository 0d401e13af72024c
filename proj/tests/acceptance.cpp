// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "atrpp/experiment.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
namespace ex = atrpp::experiment;
namespace bl = atrpp::baselines;
using namespace atrpp;

namespace {

struct Outcome {
  bool pass{false};
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------- 1

Outcome gradient_master_check() {
  auto rng = make_stream(2024, 1);
  std::size_t checked = 0, bad = 0;
  std::string first;
  for (int m = 0; m < 20; ++m) {
    const int z = 3 + static_cast<int>(uniform_index(rng, 4));
    const int h = 4 + static_cast<int>(uniform_index(rng, 5));
    const int n = 3 + static_cast<int>(uniform_index(rng, 6));
    auto tc = testing_support::random_tiny_case(1000 + static_cast<std::uint64_t>(m), z, h, n);
    // alternate between the full and the event-only model, with and without a window
    if (m % 2) tc.config.use_series = false;
    if (m % 3 == 0) tc.config.attention.window = 2;
    const auto mism = testing_support::model_gradient_mismatches(tc);
    checked += parameter_count(tc.params);
    bad += mism.size();
    if (!mism.empty() && first.empty())
      first = fmt(" first: model %d %s[%zu] analytic %.6g numeric %.6g", m, mism[0].tensor.c_str(), mism[0].index,
                  mism[0].analytic, mism[0].numeric);
  }
  return {bad == 0, fmt("%zu parameters over 20 models, %zu mismatches", checked, bad) + first};
}

// ---------------------------------------------------------------- 2

Outcome poisson_oracle() {
  HawkesParams p;
  p.mu = Eigen::VectorXd::Constant(4, 0.1);
  p.A = Eigen::MatrixXd::Zero(4, 4);
  p.w = 1.0;
  const int reps = 200;
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(4), sumsq = Eigen::ArrayXd::Zero(4);
  for (int r = 0; r < reps; ++r) {
    auto rng = make_stream(31337, static_cast<std::uint64_t>(r));
    Eigen::ArrayXd c = Eigen::ArrayXd::Zero(4);
    for (const auto& e : simulate(p, 1000.0, rng).events) c(e.dim) += 1;
    sum += c;
    sumsq += c * c;
  }
  const Eigen::ArrayXd mean = sum / reps;
  const Eigen::ArrayXd se = ((sumsq - reps * mean * mean) / (reps - 1) / reps).sqrt();
  const Eigen::ArrayXd dev = (mean - 100.0).abs() / se;
  return {(dev <= 3.0).all(), fmt("max |mean-100|/se = %.3f over 4 dims (means %.2f..%.2f)", dev.maxCoeff(),
                                  mean.minCoeff(), mean.maxCoeff())};
}

// ---------------------------------------------------------------- 3, 4

HawkesParams stable3() {
  HawkesParams p;
  p.mu = Eigen::Vector3d(0.05, 0.1, 0.02);
  p.A.resize(3, 3);
  p.A << 0.2, 0.1, 0.0, 0.0, 0.3, 0.2, 0.15, 0.0, 0.1;
  p.w = 0.8;
  return p;
}

Outcome hawkes_count_oracle() {
  const auto p = stable3();
  const double horizon = 1000.0;
  const Eigen::VectorXd rate =
      (Eigen::MatrixXd::Identity(3, 3) - p.branching_matrix().transpose()).partialPivLu().solve(p.mu);
  const double expected = horizon * rate.sum();
  const int reps = 500;
  std::vector<double> counts(reps);
  parallel_for(reps, 1, [&](std::size_t r) {
    auto rng = make_stream(4242, r);
    counts[r] = static_cast<double>(simulate(p, horizon, rng).size());
  });
  double mean = 0;
  for (double c : counts) mean += c / reps;
  const double rel = std::abs(mean - expected) / expected;
  return {rel <= 0.10, fmt("mean count %.2f vs %.2f (rel dev %.4f, rho %.3f)", mean, expected, rel,
                           spectral_radius(p.branching_matrix()).value)};
}

Outcome time_rescaling() {
  const auto p = stable3();
  std::vector<double> inc;
  for (int r = 0; r < 100; ++r) {
    auto rng = make_stream(99, static_cast<std::uint64_t>(r));
    const auto v = compensator_increments(p, simulate(p, 300.0, rng));
    inc.insert(inc.end(), v.begin(), v.end());
  }
  const double d = testing_support::ks_statistic_exp1(inc), crit = testing_support::ks_critical_1pct(inc.size());
  return {d < crit, fmt("KS D = %.5f vs 1%% critical %.5f over %zu increments", d, crit, inc.size())};
}

// ---------------------------------------------------------------- 5, 6, 8 share one trained model

struct Recovery {
  SyntheticData data;
  TrainResult trained;
  double seconds{0};
};

constexpr double kRecoveryHorizon = 300.0;

const Recovery& recovery() {
  static const Recovery r = [] {
    const auto start = std::chrono::steady_clock::now();
    Recovery out;
    SyntheticConfig sc;
    sc.num_dims = 10;
    sc.num_cascades = 700;
    sc.split = {500.0 / 700, 100.0 / 700, 100.0 / 700};
    sc.w = 0.01;
    sc.horizon = kRecoveryHorizon;
    sc.seed = 1;
    out.data = generate_synthetic(sc);

    ModelConfig mc;
    mc.num_dims = 10;
    mc.num_features = out.data.dataset.num_features;
    mc.embed = mc.hidden_event = mc.hidden_series = mc.hidden_syn = 16;
    mc.attention.epsilon = 0.0;  // thresholding at init leaves most strengths without gradient
    mc.attention.window = 20;
    mc.time_scale = 0.0;
    TrainConfig tc;
    tc.max_epochs = 30;
    tc.patience = 3;
    tc.rmsprop.lr = 3e-3;
    tc.seed = 1;
    out.trained = train(out.data.dataset, mc, tc);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
  }();
  return r;
}

Outcome structure_recovery() {
  const auto& r = recovery();
  const auto& ds = r.data.dataset;
  const Eigen::MatrixXd& truth = r.data.truth.A;
  const auto test = ds.split(Split::test);
  const auto est = extract_infectivity(r.trained.params, r.trained.config, test).strength;
  const double rc = metrics::rank_corr(truth, est);

  auto rng = make_stream(555, 0);
  std::vector<double> null(100);
  std::vector<double> cells(est.data(), est.data() + est.size());
  for (double& v : null) {
    shuffle(cells, rng);
    v = metrics::rank_corr(truth, Eigen::Map<const Eigen::MatrixXd>(cells.data(), est.rows(), est.cols()));
  }
  double mean = 0, var = 0;
  for (double v : null) mean += v / 100;
  for (double v : null) var += (v - mean) * (v - mean) / 99;
  const double sd = std::sqrt(var);
  const double z = sd > 0 ? (rc - mean) / sd : 0.0;

  const std::array<double, 3> grid{0.003, 0.01, 0.03};
  const auto sel = bl::fit_hawkes(ds.split(Split::train), ds.split(Split::validation), 10, grid, {}, kRecoveryHorizon);
  const double hawkes_rc = metrics::rank_corr(truth, sel.fit.params.A);

  const bool pass = rc >= 0.2 && z >= 5.0 && hawkes_rc >= 0.5;
  return {pass, fmt("ATRPP rank_corr %.4f (null mean %.4f sd %.4f, z %.2f); Hawkes MLE rank_corr %.4f at w=%g; "
                    "train/val/test %zu/%zu/%zu, %d epochs, %.0fs",
                    rc, mean, sd, z, hawkes_rc, sel.fit.params.w, ds.train.size(), ds.validation.size(),
                    ds.test.size(), r.trained.state.epochs_completed, r.seconds)};
}

Outcome predictive_ordering() {
  const auto& r = recovery();
  const auto& ds = r.data.dataset;
  const auto train_set = ds.split(Split::train), val = ds.split(Split::validation), test = ds.split(Split::test);
  const std::vector<int> ks{1};
  const Checkpoint ck{r.trained.config, r.trained.params, r.trained.weights, std::nullopt, {}};
  const auto atrpp = metrics::evaluate(ex::model_predictions(ck, test), 10, ks);
  const auto markov = metrics::evaluate(bl::predict(bl::fit_markov(train_set, val, 10, 3), test), 10, ks);
  const auto poisson = metrics::evaluate(bl::predict(bl::fit_poisson(train_set, kRecoveryHorizon), test), 10, ks);
  const double a_acc = atrpp.accuracy_at.at(1), m_acc = markov.accuracy_at.at(1);
  const bool pass = a_acc >= m_acc && *atrpp.mae <= *poisson.mae;
  return {pass, fmt("accuracy ATRPP %.4f vs Markov %.4f; MAE ATRPP %.4f vs Poisson %.4f", a_acc, m_acc, *atrpp.mae,
                    *poisson.mae)};
}

// ---------------------------------------------------------------- 7

double tau_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  // distinct values: concordant minus discordant over all pairs
  int c = 0, d = 0, pairs = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      ++pairs;
      ((x[i] < x[j]) == (y[i] < y[j]) ? c : d) += 1;
    }
  return static_cast<double>(c - d) / pairs;
}

Outcome metric_oracles() {
  std::vector<std::vector<double>> perms;
  std::vector<double> p{1, 2, 3, 4};
  do perms.push_back(p);
  while (std::next_permutation(p.begin(), p.end()));
  int tau_bad = 0;
  for (const auto& a : perms)
    for (const auto& b : perms)
      if (metrics::kendall_tau(a, b) != tau_oracle(a, b)) ++tau_bad;

  int mono_bad = 0;
  auto rng = make_stream(77, 7);
  for (int set = 0; set < 200; ++set) {
    const int z = 2 + static_cast<int>(uniform_index(rng, 9));
    std::vector<std::vector<int>> rankings(30);
    std::vector<int> truths(30);
    for (std::size_t i = 0; i < 30; ++i) {
      rankings[i].resize(static_cast<std::size_t>(z));
      std::iota(rankings[i].begin(), rankings[i].end(), 0);
      shuffle(rankings[i], rng);
      truths[i] = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(z)));
    }
    double prev = -1;
    for (int k = 1; k <= z + 1; ++k) {
      const double a = metrics::accuracy_at_k(rankings, truths, k);
      if (a < prev) ++mono_bad;
      prev = a;
    }
    if (prev != 1.0) ++mono_bad;
  }

  Eigen::MatrixXd t(2, 2), e(2, 2);
  t << 1, 0, 0, 1;
  e << 1.1, 0, 0, 0.9;
  const double hand = (std::abs(1.1 - 1.0) / 1.0 + std::abs(0.9 - 1.0) / 1.0) / 2.0;
  const double r1 = metrics::rel_err(t, e, false);
  const bool rel_ok = r1 == hand && std::abs(r1 - 0.1) < 1e-15 && metrics::rel_err(t, t, false) == 0.0 &&
                      metrics::rel_err(t, 10.0 * t, true) == 0.0;
  return {tau_bad == 0 && mono_bad == 0 && rel_ok,
          fmt("kendall_tau mismatches %d/576; accuracy@k monotonicity violations %d/200 sets; rel_err hand cases %s",
              tau_bad, mono_bad, rel_ok ? "exact" : "wrong")};
}

// ---------------------------------------------------------------- 8

Outcome sparsity_monotonicity() {
  const auto& r = recovery();
  const auto test = r.data.dataset.split(Split::test);
  auto cfg = r.trained.config;
  std::vector<Eigen::MatrixXd> prev;
  long prev_zeros = -1;
  bool ok = true;
  std::string counts;
  for (double eps : {0.0, 0.01, 0.1, 0.5}) {
    cfg.attention.epsilon = eps;
    std::vector<Eigen::MatrixXd> alphas;
    long zeros = 0;
    for (const auto* rec : test) {
      if (rec->sequence.size() < 2) continue;
      alphas.push_back(forward(*rec, r.trained.params, cfg).alpha);
      zeros += (alphas.back().array() == 0.0).count();
    }
    if (!prev.empty()) {
      ok = ok && zeros >= prev_zeros;
      for (std::size_t i = 0; i < alphas.size(); ++i) ok = ok && (alphas[i].array() <= prev[i].array()).all();
    }
    counts += fmt("%s%g:%ld", counts.empty() ? "" : ", ", eps, zeros);
    prev = std::move(alphas);
    prev_zeros = zeros;
  }
  return {ok, "zero weights by epsilon " + counts};
}

// ---------------------------------------------------------------- 9, 10

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ATRPP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome reproducibility() {
  const auto dir = fs::temp_directory_path() / "atrpp_acceptance_repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream(dir / "run.ini") << "[run]\nseed = 13\nthreads = 2\n[synthetic]\nnum_dims = 5\ncascades = 80\n"
                                      "mu_max = 0.05\nhorizon = 100\n[model]\nembed = 6\nhidden_event = 8\n"
                                      "hidden_series = 8\nhidden_syn = 8\n[train]\nmax_epochs = 4\n";
  }
  const auto first = (dir / "first").string(), second = (dir / "second").string();
  for (const char* cmd : {"simulate", "train", "eval"})
    if (run_cli("--config " + (dir / "run.ini").string() + " --out " + first + " " + cmd) != 0)
      return {false, std::string("first run failed at ") + cmd};
  for (const char* cmd : {"simulate", "train", "eval"})
    if (run_cli("--config " + first + "/manifest_" + cmd + ".json --out " + second + " " + cmd) != 0)
      return {false, std::string("manifest rerun failed at ") + cmd};
  int same = 0, differ = 0;
  std::string which;
  for (const char* name : {"events.jsonl", "series.csv", "mu.csv", "A.csv", "splits.json", "checkpoint.json",
                           "metrics.json", "metrics.csv"}) {
    if (io::read_text(fs::path(first) / name) == io::read_text(fs::path(second) / name)) {
      ++same;
    } else {
      ++differ;
      which += std::string(" ") + name;
    }
  }
  return {differ == 0, fmt("%d files byte-identical, %d differ", same, differ) + which};
}

Outcome baseline_dash_pattern() {
  const auto dir = fs::temp_directory_path() / "atrpp_acceptance_baselines";
  fs::remove_all(dir);
  ex::RunConfig c;
  c.seed = 3;
  c.out = dir.string();
  c.synthetic.num_dims = 5;
  c.synthetic.num_cascades = 80;
  c.synthetic.mu_max = 0.05;
  c.baselines.hawkes_rollouts = 20;
  c = ex::resolve(c);
  ex::cmd_simulate(c);
  const auto run = ex::cmd_baselines(c);

  std::map<std::string, std::vector<std::string>> rows;
  std::istringstream in(io::read_text(dir / "baselines.csv"));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    cells.resize(12);
    rows[cells[0]] = cells;
  }
  // columns: model,status,steps,precision,recall,f1,acc@1,acc@3,acc@5,mae,...
  const auto blank = [&](const std::string& m, int lo, int hi) {
    for (int i = lo; i <= hi; ++i)
      if (!rows[m][static_cast<std::size_t>(i)].empty()) return false;
    return true;
  };
  const auto filled = [&](const std::string& m, int lo, int hi) {
    for (int i = lo; i <= hi; ++i)
      if (rows[m][static_cast<std::size_t>(i)].empty()) return false;
    return true;
  };
  bool ok = rows.size() >= 6;
  for (const auto& row : run.rows) ok = ok && row.status == "ok";
  ok = ok && blank("Poisson", 3, 8) && filled("Poisson", 9, 9) && blank("SelfCorrecting", 3, 8) &&
       filled("SelfCorrecting", 9, 9) && blank("Markov", 9, 9) && filled("Markov", 3, 8) && filled("Hawkes", 3, 9);
  return {ok, fmt("%zu rows; time-only models blank on classification, Markov blank on MAE", rows.size())};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 gradient check", gradient_master_check},
      {"2 simulator Poisson oracle", poisson_oracle},
      {"3 simulator Hawkes count oracle", hawkes_count_oracle},
      {"4 time-rescaling KS", time_rescaling},
      {"5 structure recovery", structure_recovery},
      {"6 predictive ordering", predictive_ordering},
      {"7 metric oracles", metric_oracles},
      {"8 attention sparsity monotonicity", sparsity_monotonicity},
      {"9 reproducibility from manifests", reproducibility},
      {"10 baseline table dash pattern", baseline_dash_pattern},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << "[" << name << "] " << o.detail << fmt(" (%.1fs)", secs)
              << std::endl;
  }
  std::cout << (failed ? fmt("%d of %zu criteria failed", failed, criteria.size()) : std::string("all criteria passed"))
            << std::endl;
  return failed ? 1 : 0;
}
