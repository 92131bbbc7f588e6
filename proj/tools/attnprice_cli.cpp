#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "attnprice/attnprice.hpp"

namespace ap = attnprice;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

int write_synth(const ap::SynthConfig& cfg, const fs::path& dir) {
  const ap::SynthData d = ap::synth(cfg);
  fs::create_directories(dir);
  ap::save_panel((dir / "factors.csv").string(), d.factors);
  ap::save_panel((dir / "returns.csv").string(), d.returns);
  ap::save_panel((dir / "caps.csv").string(), d.caps);
  ap::save_panel((dir / "rf.csv").string(), d.rf);
  std::ofstream betas(dir / "betas.csv");
  if (!betas) throw ap::DataError("cannot write " + (dir / "betas.csv").string());
  betas << "stock";
  for (const auto& f : d.factors.names) betas << ',' << f;
  betas << ",signal_sd\n";
  for (std::size_t i = 0; i < d.betas.rows(); ++i) {
    betas << d.returns.names[i];
    for (std::size_t j = 0; j < d.betas.cols(); ++j) betas << ',' << ap::format_double(d.betas(i, j));
    betas << ',' << ap::format_double(d.signal_sd[i]) << '\n';
  }
  std::printf("wrote %zu months x %zu factors, %zu stocks to %s\n", cfg.months, cfg.factors, cfg.stocks,
              dir.string().c_str());
  return kOk;
}

void print_files(const std::vector<fs::path>& files) {
  for (const auto& f : files) std::printf("wrote %s\n", f.string().c_str());
}

// Aligned plain-text rendering of a CSV file.
void print_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    for (auto c : ap::detail::split_csv_line(line)) cells.emplace_back(c);
    rows.push_back(std::move(cells));
  }
  std::vector<std::size_t> width;
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (width.size() <= c) width.push_back(0);
      width[c] = std::max(width[c], r[c].size());
    }
  std::printf("%s\n", path.filename().string().c_str());
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) std::printf("  %-*s", static_cast<int>(width[c]), r[c].c_str());
    std::printf("\n");
  }
  std::printf("\n");
}

int report(const ap::RunConfig& c) {
  const fs::path dir = c.output_dir;
  std::vector<fs::path> tables{dir / ("metrics_" + c.period + ".csv"), dir / ("dm_" + c.period + ".csv")};
  for (auto w : c.weightings) tables.push_back(dir / ("bt_" + std::string(ap::to_string(w)) + "_" + c.period + ".csv"));
  bool any = false;
  for (const auto& t : tables)
    if (fs::exists(t)) {
      print_table(t);
      any = true;
    }
  if (!any) throw ap::DataError("no report files under " + dir.string() + " (run evaluate/backtest first)");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pretrained recurrent attention forecasters for monthly stock returns"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ap::kVersion);

  ap::SynthConfig scfg;
  std::string synth_out = "data";
  std::string synth_start = "1990-01";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic factor/return/cap panel");
  synth->add_option("-o,--out", synth_out, "Output directory")->capture_default_str();
  synth->add_option("--seed", scfg.seed, "Generator seed")->capture_default_str();
  synth->add_option("--stocks", scfg.stocks, "Number of stocks")->capture_default_str();
  synth->add_option("--months", scfg.months, "Number of months")->capture_default_str();
  synth->add_option("--factors", scfg.factors, "Number of factors")->capture_default_str();
  synth->add_option("--sources", scfg.sources, "Common AR(1) drivers behind the factors")->capture_default_str();
  synth->add_option("--phi", scfg.phi, "AR(1) coefficient of the sources")->capture_default_str();
  synth->add_option("--idio-ratio", scfg.idio_ratio, "Factor-specific noise sd relative to common sd")->capture_default_str();
  synth->add_option("--noise-ratio", scfg.noise_ratio, "Noise sd as a multiple of signal sd")->capture_default_str();
  synth->add_flag("--pure-noise", scfg.pure_noise, "Returns carry no signal");
  synth->add_option("--missing", scfg.missing_frac, "Fraction of factor cells left empty")->capture_default_str();
  synth->add_option("--start", synth_start, "First month (YYYY-MM)")->capture_default_str();

  std::string config_path;
  auto add_stage = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "Run configuration (INI)")->required()->check(CLI::ExistingFile);
    return sub;
  };
  auto* pretrain = add_stage("pretrain", "Fit the autoencoder on the first in-sample block");
  auto* train = add_stage("train", "Rolling-window training and out-of-sample forecasts");
  auto* evaluate = add_stage("evaluate", "OOS R2, MSE, residual alpha and Diebold-Mariano tables");
  auto* backtest = add_stage("backtest", "Sign-signal portfolio backtests");
  auto* run = add_stage("run", "train, evaluate and backtest with a run manifest");
  auto* rep = add_stage("report", "Print the metric and backtest tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (synth->parsed()) {
      if (const char* s = std::getenv("ATTNPRICE_SEED"); s && *s && synth->count("--seed") == 0)
        scfg.seed = std::stoull(s);
      if (const char* o = std::getenv("ATTNPRICE_OUTPUT_DIR"); o && *o && synth->count("--out") == 0) synth_out = o;
      auto start = ap::parse_month(synth_start);
      if (!start) throw ap::ConfigError("synth: --start must be YYYY-MM");
      scfg.start = *start;
      return write_synth(scfg, synth_out);
    }
    const ap::RunConfig cfg = ap::load_run_config(config_path);
    if (pretrain->parsed()) print_files(ap::stage_pretrain(cfg));
    else if (train->parsed()) print_files(ap::stage_train(cfg));
    else if (evaluate->parsed()) print_files(ap::stage_evaluate(cfg));
    else if (backtest->parsed()) print_files(ap::stage_backtest(cfg));
    else if (rep->parsed()) return report(cfg);
    else if (run->parsed()) {
      const auto manifest = ap::run(cfg);
      std::printf("run complete: %zu files, manifest at %s\n", manifest.json()["files"].size(),
                  (cfg.output_dir / "manifest.json").string().c_str());
    }
    return kOk;
  } catch (const ap::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const ap::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const ap::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
}
