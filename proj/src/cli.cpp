#include "ivddpc/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "ivddpc/bench.hpp"
#include "ivddpc/error.hpp"

namespace ivddpc {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  int jobs = 1;
  std::optional<int> replicates;
  std::vector<double> snr;
  int replicate = 0;
  std::string records;
  std::optional<double> lambda_min, lambda_max;
};

ExperimentConfig load_config(const Options& o) {
  if (!fs::exists(o.config)) throw ConfigError("config file '" + o.config + "' does not exist", {"config"});
  json j;
  try {
    j = read_json_file(o.config);
  } catch (const std::exception& e) {
    throw ConfigError(e.what(), {"config"});
  }
  if (j.is_object()) {
    if (o.seed) j["base_seed"] = *o.seed;
    if (o.replicates) j["replicates"] = *o.replicates;
    if (!o.snr.empty() && j.contains("noise") && j["noise"].is_object()) j["noise"]["snr_db"] = o.snr;
  }
  return ExperimentConfig::from_json(j);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

json levels_json(const ExperimentConfig& cfg, const std::vector<SnrCalibration>& levels) {
  json out = json::array();
  for (size_t i = 0; i < levels.size(); ++i) {
    json l{{"sigma", levels[i].sigma}};
    if (!cfg.noise_free) {
      l["snr_db"] = cfg.snr_db[i];
      l["measured_db"] = levels[i].measured_db;
    }
    out.push_back(l);
  }
  return out;
}

json metadata(const ExperimentConfig& cfg, const std::vector<SnrCalibration>& levels,
              double wall, int jobs) {
  return json{{"fingerprint", fingerprint(cfg.source)},
              {"name", cfg.name},
              {"base_seed", cfg.base_seed},
              {"schema_version", kSchemaVersion},
              {"levels", levels_json(cfg, levels)},
              {"snr_definition",
               "10 log10 of summed output variance, noise-free closed-loop response over the "
               "noise-induced part, on the offline dataset"},
              {"kalman_gain", cfg.plant.K ? "configured" : "DARE with Qw = kalman_qw I, Rv = diag(sigma shape)^2"},
              {"prng", "std::mt19937_64, 53-bit uniforms on (0, 1], Box-Muller (both branches)"},
              {"seed_derivation", "splitmix64(base ^ splitmix64(index ^ splitmix64(fnv1a(role))))"},
              {"created_utc", utc_now()},
              {"wall_seconds", wall},
              {"jobs", jobs}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

std::string trend_csv(const std::vector<SummaryRow>& rows, std::optional<double> lmin,
                      std::optional<double> lmax) {
  std::string out = "snr_db,lambda_from,lambda_to,mean_from,mean_to,pooled_se,ok\n";
  std::vector<double> snrs;
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& r : rows) {
    if (r.variant != to_string(VariantTag::RddpcIv)) continue;
    lo = std::min(lo, r.lambda);
    hi = std::max(hi, r.lambda);
    bool seen = false;
    for (double s : snrs) seen = seen || s == r.snr_db || (std::isnan(s) && std::isnan(r.snr_db));
    if (!seen) snrs.push_back(r.snr_db);
  }
  for (double s : snrs) {
    for (const auto& st : lambda_trend(rows, s, lmin.value_or(lo), lmax.value_or(hi))) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", s, st.lambda_from,
                    st.lambda_to, st.mean_from, st.mean_to, st.pooled_se, st.ok ? 1 : 0);
      out += buf;
    }
  }
  return out;
}

void write_summaries(const fs::path& dir, const std::vector<RecordRow>& rows, const Options& o) {
  const auto summary = summarize(rows);
  write_text(dir / "summary.csv", summary_csv(summary));
  write_text(dir / "lambda_trend.csv", trend_csv(summary, o.lambda_min, o.lambda_max));
}

int cmd_collect(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = load_config(o);
  const auto levels = calibrate_levels(cfg);
  const double snr = cfg.noise_free ? std::numeric_limits<double>::infinity() : cfg.snr_db.front();
  const Dataset d = collect(cfg, snr, levels.front().sigma, o.replicate, (fs::path(o.out_dir) / "cache").string());
  json j{{"fingerprint", d.fingerprint},
         {"cache_hit", d.cache_hit},
         {"sigma", d.sigma},
         {"length", d.traj.length()},
         {"columns", d.bundle.columns()},
         {"cache_dir", (fs::path(o.out_dir) / "cache").string()}};
  if (!cfg.noise_free) j["snr_db"] = snr;
  out << j.dump() << '\n';
  return kExitOk;
}

int cmd_campaign(const Options& o, bool single, std::ostream& out) {
  const ExperimentConfig cfg = load_config(o);
  const auto t0 = std::chrono::steady_clock::now();
  CampaignOptions opts;
  opts.jobs = o.jobs;
  opts.out_dir = o.out_dir;
  if (single) opts.only_replicate = o.replicate;
  const auto rows = monte_carlo(cfg, opts);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const fs::path dir(o.out_dir);
  write_summaries(dir, rows, o);
  write_json_file((dir / "metadata.json").string(), metadata(cfg, calibrate_levels(cfg), wall, o.jobs));
  int failed = 0;
  for (const auto& r : rows) failed += r.failed ? 1 : 0;
  out << json{{"records", rows.size()}, {"failed", failed}, {"out_dir", o.out_dir}}.dump() << '\n';
  return kExitOk;
}

int cmd_diag(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = load_config(o);
  const auto levels = calibrate_levels(cfg);
  const double snr = cfg.noise_free ? std::numeric_limits<double>::infinity() : cfg.snr_db.front();
  const Dataset d = collect(cfg, snr, levels.front().sigma, o.replicate);
  const CoprimeFactors f = lcf(cfg.controller);
  json corr = json::object();
  for (IvVariant v : {IvVariant::OpenLoop, IvVariant::RefOnly, IvVariant::LcfOnly, IvVariant::Combined,
                      IvVariant::PastOnly}) {
    const InstrumentSet iv = build_iv(d.bundle, v, f, cfg.svd_tol);
    corr[to_string(v)] = iv_noise_correlation(d.bundle.Ef, iv.Phi);
  }
  const Annihilator an = annihilator(cfg.controller, cfg.future);
  MatrixXd lhs = an.Theta.leftCols(d.bundle.Uf.rows()) * d.bundle.Uf +
                 an.Theta.rightCols(d.bundle.Yf.rows()) * d.bundle.Yf;
  const MatrixXd rhs = an.GammaPerp * an.Hc * d.bundle.Rf;
  const double rel = (lhs - rhs).norm() / std::max(rhs.norm(), 1e-300);
  json j{{"fingerprint", d.fingerprint},
         {"sigma", d.sigma},
         {"columns", d.bundle.columns()},
         {"ef_phi_norm", corr},
         {"annihilator_rows", an.Theta.rows()},
         {"annihilator_data_residual", rel},
         {"lcf_gain", matrix_to_json(f.Lc)}};
  if (!cfg.noise_free) j["snr_db"] = snr;
  fs::create_directories(o.out_dir);
  write_json_file((fs::path(o.out_dir) / "diag.json").string(), j);
  out << j.dump() << '\n';
  return kExitOk;
}

int cmd_summarize(const Options& o, std::ostream& out) {
  const auto rows = read_records_csv(o.records);
  fs::create_directories(o.out_dir);
  write_summaries(o.out_dir, rows, o);
  out << json{{"records", rows.size()}, {"summary", (fs::path(o.out_dir) / "summary.csv").string()}}.dump() << '\n';
  return kExitOk;
}

void report(std::ostream& err, const char* kind, const std::string& msg, int code,
            const std::vector<std::string>& keys = {}) {
  json j{{"status", "error"}, {"kind", kind}, {"message", msg}, {"exit_code", code}};
  if (!keys.empty()) j["keys"] = keys;
  err << j.dump() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Closed-loop data-driven predictive control toolkit", "ivddpc"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool config) {
    if (config) sub->add_option("--config", o.config, "Experiment config (JSON)")->required();
    sub->add_option("--seed", o.seed, "Override base_seed");
    sub->add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
  };
  auto* collect_cmd = app.add_subcommand("collect", "Simulate and cache one offline dataset");
  add_common(collect_cmd, true);
  collect_cmd->add_option("--replicate", o.replicate, "Replicate index")->capture_default_str();
  collect_cmd->add_option("--snr", o.snr, "Override SNR levels (dB); the first is used");

  auto* run_cmd = app.add_subcommand("run", "All variants on a single replicate, with per-step traces");
  add_common(run_cmd, true);
  run_cmd->add_option("--replicate", o.replicate, "Replicate index")->capture_default_str();
  run_cmd->add_option("--snr", o.snr, "Override SNR levels (dB)");
  run_cmd->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* bench_cmd = app.add_subcommand("bench", "Monte Carlo campaign");
  add_common(bench_cmd, true);
  bench_cmd->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  bench_cmd->add_option("--replicates", o.replicates, "Override replicate count")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--snr", o.snr, "Override SNR levels (dB)");
  bench_cmd->add_option("--lambda-min", o.lambda_min, "Lower end of the lambda trend check");
  bench_cmd->add_option("--lambda-max", o.lambda_max, "Upper end of the lambda trend check");

  auto* diag_cmd = app.add_subcommand("diag", "IV noise correlation and annihilator diagnostics");
  add_common(diag_cmd, true);
  diag_cmd->add_option("--replicate", o.replicate, "Replicate index")->capture_default_str();
  diag_cmd->add_option("--snr", o.snr, "Override SNR levels (dB); the first is used");

  auto* sum_cmd = app.add_subcommand("summarize", "Summaries of an existing records.csv");
  sum_cmd->add_option("--records", o.records, "records.csv to read")->required()->check(CLI::ExistingFile);
  sum_cmd->add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
  sum_cmd->add_option("--lambda-min", o.lambda_min, "Lower end of the lambda trend check");
  sum_cmd->add_option("--lambda-max", o.lambda_max, "Upper end of the lambda trend check");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report(err, "usage", e.what(), kExitConfig);
    return kExitConfig;
  }

  try {
    if (*collect_cmd) return cmd_collect(o, out);
    if (*run_cmd) return cmd_campaign(o, true, out);
    if (*bench_cmd) return cmd_campaign(o, false, out);
    if (*diag_cmd) return cmd_diag(o, out);
    if (*sum_cmd) return cmd_summarize(o, out);
  } catch (const ConfigError& e) {
    report(err, "config", e.what(), kExitConfig, e.keys());
    return kExitConfig;
  } catch (const std::exception& e) {
    report(err, "runtime", e.what(), kExitRuntime);
    return kExitRuntime;
  }
  return kExitConfig;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace ivddpc
