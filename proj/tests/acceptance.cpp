// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cstdio>
#include <filesystem>

#include "support.hpp"

using namespace attnprice;
using attnprice::testing::random_matrix;
using attnprice::testing::randomize;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("%s  %2d  %-26s %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string printf_str(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

void set_identity(ParameterSet& ps, const char* name) {
  auto v = ps.view(ps.find(name));
  for (double& x : v.flat()) x = 0.0;
  for (std::size_t i = 0; i < v.rows; ++i) v(i, i) = 1.0;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.flat().size(); ++i) m = std::max(m, std::abs(a.flat()[i] - b.flat()[i]));
  return m;
}

void causality() {
  const auto t0 = Clock::now();
  std::size_t bad = 0, trials = 0;
  for (ModelKind k : kAllModels)
    for (std::uint64_t s = 0; s < 50; ++s, ++trials)
      if (!attnprice::testing::causality_trial(k, 1000 * static_cast<std::uint64_t>(k) + s)) ++bad;
  const double secs = seconds_since(t0);
  report(1, "causality", bad == 0 && secs < 60.0,
         std::to_string(trials) + " trials, " + std::to_string(bad) + " leaks, " + printf_str("%.1fs", secs));
}

void gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    worst = std::max(worst, attnprice::testing::autoencoder_grad_check(100 + s).max_rel_error);
    for (CoreKind k : {CoreKind::Rnn, CoreKind::Lstm, CoreKind::Gru})
      worst = std::max(worst, attnprice::testing::core_grad_check(k, 200 + s).max_rel_error);
    for (AttentionKind k : {AttentionKind::Batt, AttentionKind::LD, AttentionKind::LG, AttentionKind::LC,
                            AttentionKind::SelfAtt, AttentionKind::SparseAtt})
      worst = std::max(worst, attnprice::testing::attention_grad_check(k, 300 + s).max_rel_error);
    for (ModelKind k : kAllModels)
      worst = std::max(worst, attnprice::testing::composed_grad_check(k, 400 + s).max_rel_error);
  }
  const double secs = seconds_since(t0);
  report(2, "gradients", worst <= 1e-4 && secs < 120.0, printf_str("max rel err %.2e, %.1fs", worst, secs));
}

void degeneracies() {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    const std::size_t T = 2 + rng.uniform_index(12), d = 1 + rng.uniform_index(6);
    const Matrix h = random_matrix(T, d, rng);
    ParameterSet pl, ps, pg, pa, pb;
    AttentionLayer ld(AttentionKind::LD, pl, d), self_id(AttentionKind::SelfAtt, ps, d), lg(AttentionKind::LG, pg, d);
    for (const char* n : {"W_q", "W_k", "W_v"}) set_identity(ps, n);
    set_identity(pg, "W");
    AttentionLayer self_rand(AttentionKind::SelfAtt, pa, d);
    randomize(pa, rng);
    AttentionLayer wide(AttentionKind::SparseAtt, pb, d, T + rng.uniform_index(4));
    pb.assign(pa.flat());
    AttentionCache c_ld, c_self_id, c_lg, c_self, c_wide;
    ld.forward(pl, h, c_ld);
    self_id.forward(ps, h, c_self_id);
    lg.forward(pg, h, c_lg);
    self_rand.forward(pa, h, c_self);
    wide.forward(pb, h, c_wide);
    worst = std::max({worst, max_abs_diff(c_ld.z, c_self_id.z), max_abs_diff(c_ld.z, c_lg.z),
                      max_abs_diff(c_self.z, c_wide.z)});
  }
  report(3, "degeneracies", worst <= 1e-12, printf_str("max abs diff %.2e over 3x20 instances", worst));
}

void softmax_invariants() {
  double worst_sum = 0.0;
  std::size_t nonzero_off_support = 0;
  for (std::uint64_t s = 0; s < 20; ++s)
    for (AttentionKind k : {AttentionKind::Batt, AttentionKind::LD, AttentionKind::LG, AttentionKind::LC,
                            AttentionKind::SelfAtt, AttentionKind::SparseAtt}) {
      Rng rng(500 + s);
      const std::size_t T = 1 + rng.uniform_index(16), d = 1 + rng.uniform_index(6);
      ParameterSet ps;
      AttentionLayer layer(k, ps, d, 4);
      randomize(ps, rng, 1.5);
      AttentionCache cache;
      layer.forward(ps, random_matrix(T, d, rng, 2.0), cache);
      for (std::size_t t = 0; t < T; ++t) {
        const Support sup = layer.support(t);
        double total = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          if (j < sup.first || j > sup.last) {
            if (cache.weights(t, j) != 0.0) ++nonzero_off_support;
          } else {
            total += cache.weights(t, j);
          }
        }
        worst_sum = std::max(worst_sum, std::abs(total - 1.0));
      }
    }
  const bool support_ok = sparse_support_set(10, 4) == std::vector<std::size_t>{7, 8, 9, 10};
  report(4, "softmax invariants", worst_sum <= 1e-10 && nonzero_off_support == 0 && support_ok,
         printf_str("max |row sum - 1| %.2e, ", worst_sum) + std::to_string(nonzero_off_support) +
             " nonzero masked weights, sparse support(t=10,w=4) " + (support_ok ? "7..10" : "wrong"));
}

void optimizer_and_stopping() {
  AdamConfig cfg;
  std::vector<double> theta{0.5};
  AdamState st(1);
  adam_step(theta, std::vector<double>{1.0}, st, cfg);
  const double hand1 = 0.5 - 0.001 / (1.0 + 1e-8);
  const double err1 = std::abs(theta[0] - hand1);
  adam_step(theta, std::vector<double>{0.5}, st, cfg);
  const double hand2 = hand1 - 0.001 * (0.14 / 0.19) / (std::sqrt(0.001249 / 0.001999) + 1e-8);
  const double err2 = std::abs(theta[0] - hand2);

  EarlyStopping<ParameterSet> stop(3);
  const std::vector<double> script{1.0, 0.7, 0.75, 0.72, 0.9, 0.1};
  std::size_t seen = 0;
  for (std::size_t i = 0; i < script.size(); ++i) {
    ParameterSet p;
    p.add("w", 1, 1);
    p.flat()[0] = static_cast<double>(i + 1);
    ++seen;
    if (!stop.observe(script[i], p)) break;
  }
  const bool stop_ok = seen == 5 && stop.best().flat()[0] == 2.0 && stop.best_error() == 0.7;
  report(5, "adam and early stopping", err1 <= 1e-12 && err2 <= 1e-12 && stop_ok,
         printf_str("step errors %.1e %.1e, ", err1, err2) + "stopped after " + std::to_string(seen) +
             " checks with best check " + std::to_string(stop.best_check()));
}

void annualization() {
  const double sr = annualize_ratio(0.2834), so = annualize_ratio(0.3993), a = annualize_alpha(0.0035);
  const bool ok = std::abs(sr - 0.9816) <= 1e-3 && std::abs(so - 1.3832) <= 1e-3 &&
                  std::abs(a / 12.0 - 0.0035) <= 0.00005 && std::abs(0.0417 / 12.0 - 0.0035) <= 0.00005;
  report(6, "annualization", ok, printf_str("SR %.4f, SO %.4f, alpha %.4f", sr, so, a));
}

void backtest_oracle() {
  const attnprice::testing::BacktestFixture f;
  double worst = 0.0;
  for (Weighting w : {Weighting::Equal, Weighting::Value}) {
    const std::size_t T = f.actual[0].size(), N = f.actual.size();
    Matrix net(T, N), caps(T, N);
    for (std::size_t i = 0; i < N; ++i) {
      const auto r = apply_costs(generate_signals(f.actual[i], f.predicted[i]), f.actual[i], 50.0);
      for (std::size_t t = 0; t < T; ++t) {
        net(t, i) = r[t];
        caps(t, i) = f.caps[i][t];
      }
    }
    const auto series = aggregate_portfolio(net, w, &caps);
    const auto oracle =
        attnprice::testing::oracle_backtest(f.actual, f.predicted, w == Weighting::Value ? &f.caps : nullptr, 50.0);
    for (std::size_t t = 0; t < T; ++t) worst = std::max(worst, std::abs(series[t] - oracle.portfolio[t]));
    const BacktestResult res = performance_stats(series, {});
    worst = std::max({worst, std::abs(res.ann_return - oracle.ann_return), std::abs(*res.sharpe - oracle.sharpe),
                      std::abs(*res.sortino - oracle.sortino), std::abs(res.max_drawdown - oracle.mdd)});
  }
  const double mdd = max_drawdown(std::vector<double>{1.0, 1.2, 0.9, 1.1});
  report(7, "backtest oracle", worst <= 1e-10 && std::abs(mdd - 0.25) <= 1e-12,
         printf_str("max diff %.2e, MDD %.4f", worst, mdd));
}

void metric_oracles() {
  std::vector<std::string> bad;
  const std::vector<double> r{0.01, -0.02, 0.03}, flat(3, 0.004);
  if (oos_r2(r, r, 0.0) != 1.0) bad.push_back("r2 perfect");
  if (oos_r2(r, flat, 0.004) != 0.0) bad.push_back("r2 mean");

  const Matrix em = Matrix::from_rows({{0.0}, {0.0}, {0.0}}), en = Matrix::from_rows({{1.0}, {-2.0}, {3.0}});
  const double dm = dm_test(em, en).statistic;
  if (std::abs(dm + 3.464) > 1e-3) bad.push_back("dm fixture");
  Rng rng(3);
  const Matrix a = random_matrix(40, 5, rng), b = random_matrix(40, 5, rng);
  if (std::abs(dm_test(a, b).statistic + dm_test(b, a).statistic) > 1e-12) bad.push_back("dm antisymmetry");

  const std::size_t T = 500;
  const Matrix x = random_matrix(T, 2, rng, 1.5);
  std::vector<std::size_t> rows(T);
  for (std::size_t t = 0; t < T; ++t) rows[t] = t;
  auto teacher = [](const Matrix& m) { return m.column(0); };
  const auto imp = permutation_importance(teacher, x, x.column(0), rows, 5, 8);
  const auto col = x.column(0);
  const double mu = mean(col);
  double var = 0.0;
  for (double v : col) var += (v - mu) * (v - mu);
  var /= static_cast<double>(T);
  const double ratio = imp[0] / (2.0 * var);
  if (imp[1] != 0.0) bad.push_back("dead input");
  if (std::abs(ratio - 1.0) > 0.2) bad.push_back("2 Var identity");

  std::string detail = printf_str("DM %.4f, importance/2Var %.3f, dead %.1e", dm, ratio, imp[1]);
  for (const auto& s : bad) detail += "; failed " + s;
  report(8, "metric oracles", bad.empty(), detail);
}

struct E2eScores {
  std::vector<double> avg;  // per model, averaged over seeds
  double seconds = 0.0;
};

E2eScores e2e_scores(bool pure_noise, std::size_t seeds) {
  const auto t0 = Clock::now();
  const std::vector<ModelKind> models(kAllModels.begin(), kAllModels.end());
  E2eScores out;
  out.avg.assign(models.size(), 0.0);
  for (std::uint64_t s = 0; s < seeds; ++s) {
    SynthConfig sc;
    sc.months = 240;
    sc.stocks = 5;
    sc.seed = 100 + s;
    sc.pure_noise = pure_noise;
    const SynthData sd = synth(sc);
    const Dataset d{sd.factors, sd.returns, sd.caps, sd.rf};
    RunConfig c = attnprice::testing::desk_config(models, 500 + s);
    const Split split{d.samples(), 179, 60};
    c.refit_every = split.test_len;
    const ForecastRun run = run_forecasts(c, d, split);
    for (std::size_t m = 0; m < models.size(); ++m)
      out.avg[m] += average_oos_r2(run.sets[m]) / static_cast<double>(seeds);
  }
  out.seconds = seconds_since(t0);
  return out;
}

void end_to_end() {
  const std::size_t seeds = 10;
  const E2eScores signal = e2e_scores(false, seeds), noise = e2e_scores(true, seeds);
  bool ok = signal.seconds + noise.seconds < 600.0;
  std::string detail;
  std::vector<std::string> below;
  for (std::size_t m = 0; m < kAllModels.size(); ++m) {
    const std::string name = to_string(kAllModels[m]);
    std::printf("      %-10s signal R2 %+.4f   null R2 %+.4f\n", name.c_str(), signal.avg[m], noise.avg[m]);
    if (!(signal.avg[m] > 0.0)) {
      ok = false;
      below.push_back(name);
    }
    if (!(noise.avg[m] <= 0.05)) {
      ok = false;
      below.push_back(name + " (null)");
    }
  }
  detail = std::to_string(seeds) + " seeds, " + printf_str("%.1fs", signal.seconds + noise.seconds);
  if (!below.empty()) {
    detail += "; out of bounds:";
    for (const auto& b : below) detail += " " + b;
  }
  report(9, "end-to-end synthetic", ok, detail);
}

void determinism() {
  const fs::path root = fs::temp_directory_path() / "attnprice_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root / "data");
  SynthConfig sc;
  sc.months = 72;
  sc.stocks = 3;
  sc.seed = 21;
  const SynthData sd = synth(sc);
  save_panel((root / "data/factors.csv").string(), sd.factors);
  save_panel((root / "data/returns.csv").string(), sd.returns);
  save_panel((root / "data/caps.csv").string(), sd.caps);
  save_panel((root / "data/rf.csv").string(), sd.rf);

  std::vector<fs::path> outs{root / "a", root / "b"};
  for (const auto& out : outs) {
    RunConfig c = attnprice::testing::desk_config({ModelKind::LSTM, ModelKind::LG, ModelKind::SparseAtt}, 9);
    c.factors_path = root / "data/factors.csv";
    c.returns_path = root / "data/returns.csv";
    c.caps_path = root / "data/caps.csv";
    c.rf_path = root / "data/rf.csv";
    c.train_len = 50;
    c.test_len = 12;
    c.refit_every = 4;
    c.train.max_epochs = 60;
    c.pretrain.max_epochs = 60;
    c.importance = true;
    c.output_dir = out;
    c.workers = out == outs[0] ? 1 : 0;
    run(c);
  }
  std::size_t compared = 0, differing = 0;
  for (const auto& e : fs::directory_iterator(outs[0])) {
    if (e.path().extension() != ".csv") continue;
    ++compared;
    const fs::path other = outs[1] / e.path().filename();
    if (!fs::exists(other) || attnprice::testing::read_file(e.path().string()) !=
                                  attnprice::testing::read_file(other.string()))
      ++differing;
  }
  fs::remove_all(root);
  report(10, "determinism", compared > 0 && differing == 0,
         std::to_string(compared) + " CSV files compared, " + std::to_string(differing) + " differ");
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  try {
    causality();
    gradients();
    degeneracies();
    softmax_invariants();
    optimizer_and_stopping();
    annualization();
    backtest_oracle();
    metric_oracles();
    end_to_end();
    determinism();
  } catch (const std::exception& e) {
    std::printf("FAIL  acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criterion(s) failed, %.1fs total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
