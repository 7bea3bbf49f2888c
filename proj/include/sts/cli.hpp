#pragma once

// Command-line surface: simulate, fit, mc-se, study, moments.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sts/error.hpp"
#include "sts/io.hpp"
#include "sts/latent.hpp"
#include "sts/mm.hpp"
#include "sts/model.hpp"
#include "sts/moments.hpp"
#include "sts/monte_carlo.hpp"
#include "sts/quasi_fit.hpp"

namespace sts::cli {

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
  std::string command;
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replicas;
  std::optional<unsigned> threads;
};

/// Everything a command needs, after parsing and defaulting.
struct Context {
  Options options;
  json config;     // as given, then with overrides and defaults filled in
  fs::path base;   // relative data paths resolve against this
  std::ostream* out = &std::cout;
};

namespace detail {

inline const std::set<std::string>& allowed_keys(const std::string& command) {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"simulate", {"description", "family", "design", "params", "conditional", "n", "seed"}},
      {"fit", {"description", "family", "design", "data", "fit_options"}},
      {"mc-se",
       {"description", "family", "design", "data", "fit_options", "conditional", "replicas", "seed",
        "max_redraws", "threads"}},
      {"study",
       {"description", "family", "design", "params", "conditional", "n", "sizes", "replicas", "seed",
        "max_redraws", "threads", "fit_options"}},
      {"moments", {"description", "family", "design", "params", "n", "t", "max_lag"}},
  };
  return keys.at(command);
}

inline ConditionalDistribution default_conditional(const ModelFamily& family) {
  switch (family.kind()) {
    case FamilyKind::RealValued: return ConditionalDistribution::Normal;
    case FamilyKind::Bounded:
      if (family.trials()) return ConditionalDistribution::Binomial;
      if (family.phi_known()) return ConditionalDistribution::Bernoulli;
      return ConditionalDistribution::Beta;
    case FamilyKind::NonNegative:
      if (family.p() == 2.0) return ConditionalDistribution::Gamma;
      if (family.p() == 1.0) return ConditionalDistribution::Poisson;
      break;
  }
  throw ConfigError("no default conditional distribution for this family; set 'conditional'");
}

inline ConditionalDistribution resolve_conditional(Context& ctx, const ModelFamily& family) {
  if (ctx.config.contains("conditional")) {
    return parse_conditional(get_required<std::string>(ctx.config, "conditional", "config"));
  }
  const auto dist = default_conditional(family);
  ctx.config["conditional"] = to_string(dist);
  return dist;
}

inline std::uint64_t resolve_seed(Context& ctx) {
  if (ctx.options.seed) ctx.config["seed"] = *ctx.options.seed;
  if (!ctx.config.contains("seed")) throw ConfigError("a seed is required (config 'seed' or --seed)");
  const auto& s = ctx.config["seed"];
  if (!s.is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
  return s.get<std::uint64_t>();
}

inline std::size_t resolve_replicas(Context& ctx, std::size_t fallback) {
  if (ctx.options.replicas) ctx.config["replicas"] = *ctx.options.replicas;
  if (!ctx.config.contains("replicas")) ctx.config["replicas"] = fallback;
  const auto r = get_required<std::int64_t>(ctx.config, "replicas", "config");
  if (r < 1) throw ConfigError("replicas must be >= 1");
  return static_cast<std::size_t>(r);
}

inline unsigned resolve_threads(Context& ctx) {
  if (ctx.options.threads) ctx.config["threads"] = *ctx.options.threads;
  if (!ctx.config.contains("threads")) ctx.config["threads"] = 1;
  const auto t = get_required<std::int64_t>(ctx.config, "threads", "config");
  if (t < 0) throw ConfigError("threads must be >= 0");
  if (t == 0) return std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(t);
}

inline std::uint32_t resolve_max_redraws(Context& ctx) {
  if (!ctx.config.contains("max_redraws")) ctx.config["max_redraws"] = 100;
  const auto m = get_required<std::int64_t>(ctx.config, "max_redraws", "config");
  if (m < 0) throw ConfigError("max_redraws must be >= 0");
  return static_cast<std::uint32_t>(m);
}

inline FitOptions resolve_fit_options(Context& ctx) {
  const FitOptions options =
      ctx.config.contains("fit_options") ? parse_fit_options(ctx.config["fit_options"]) : FitOptions{};
  ctx.config["fit_options"] = {{"max_iter", options.max_iter}, {"tol", options.tol}};
  return options;
}

inline ModelFamily resolve_family(const Context& ctx) {
  if (!ctx.config.contains("family")) throw ConfigError("missing key 'family'", "config");
  return parse_family(ctx.config["family"]);
}

inline std::vector<CovariateTerm> resolve_terms(Context& ctx) {
  if (!ctx.config.contains("design")) ctx.config["design"] = json::array({{{"term", "intercept"}}});
  return parse_design(ctx.config["design"]);
}

inline std::size_t resolve_n(const Context& ctx) {
  const auto n = get_required<std::int64_t>(ctx.config, "n", "config");
  if (n < 1) throw ConfigError("n must be >= 1");
  return static_cast<std::size_t>(n);
}

inline ParameterSet resolve_params(const Context& ctx) {
  if (!ctx.config.contains("params")) throw ConfigError("missing key 'params'", "config");
  return parse_params(ctx.config["params"]);
}

inline void check_beta_length(const ParameterSet& params, const DesignMatrix& design) {
  if (static_cast<std::size_t>(params.beta.size()) != design.q()) {
    throw ConfigError("params.beta length does not match the design",
                      "beta=" + std::to_string(params.beta.size()) +
                          " design columns=" + std::to_string(design.q()));
  }
}

/// Data set plus the design it induces: declared terms (default intercept
/// when no raw columns are named) followed by raw covariate columns.
struct BoundData {
  DataSet data;
  DesignMatrix design;
};

inline BoundData load_bound_data(Context& ctx, const ModelFamily& family) {
  if (!ctx.config.contains("data")) throw ConfigError("missing key 'data'", "config");
  const DataSpec spec = parse_data_spec(ctx.config["data"]);
  fs::path path(spec.path);
  if (path.is_relative()) path = ctx.base / path;
  BoundData b{load_csv(path.string(), spec.y_column, spec.covariate_columns), {}};
  bind_to_family(b.data, family);

  std::vector<CovariateTerm> terms;
  if (ctx.config.contains("design") || spec.covariate_columns.empty()) terms = resolve_terms(ctx);
  const std::size_t n = b.data.n();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n),
                    static_cast<Eigen::Index>(terms.size() + spec.covariate_columns.size()));
  std::vector<std::string> names;
  if (!terms.empty()) {
    const DesignMatrix built = build_design(terms, n);
    x.leftCols(built.x.cols()) = built.x;
    names = built.names;
  }
  x.rightCols(b.data.covariates.cols()) = b.data.covariates;
  names.insert(names.end(), spec.covariate_columns.begin(), spec.covariate_columns.end());
  b.design = design_from_matrix(std::move(x), std::move(names));
  return b;
}

inline json header(const Context& ctx, const std::string& command, const json& seed) {
  return {{"version", kVersion}, {"command", command}, {"seed", seed}, {"config", ctx.config}};
}

inline json fit_json(const Context& ctx, const DesignMatrix& design, const PipelineEstimate& est) {
  json j = header(ctx, "fit", nullptr);
  j["n"] = design.n();
  j["beta_names"] = design.names;
  j["beta_hat"] = to_std(est.fit.beta_hat);
  j["naive_se"] = to_std(est.fit.naive_se);
  j["phi_hat"] = est.nuisance.phi_hat;
  j["sigma2_hat"] = est.nuisance.sigma2_hat;
  j["rho_hat"] = est.nuisance.rho_hat;
  json moments = json::object();
  for (const auto& [k, v] : est.nuisance.diagnostics) moments[k] = v;
  j["diagnostics"] = {
      {"nuisance_valid", est.nuisance.valid},
      {"nuisance_reason", est.nuisance.reason},
      {"moments", moments},
      {"pearson_phi", est.fit.pearson_phi},
      {"q_value", est.fit.q_value},
      {"rank_warning", design.rank_warning ? json(*design.rank_warning) : json(nullptr)},
  };
  j["convergence"] = {{"converged", est.fit.converged},
                      {"iterations", est.fit.iterations},
                      {"final_score_norm", est.fit.final_score_norm}};
  return j;
}

inline void write_json(const fs::path& path, const json& j) { write_file(path.string(), j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------

inline void cmd_simulate(Context& ctx, const fs::path& out) {
  const ModelFamily family = resolve_family(ctx);
  const DesignMatrix design = build_design(resolve_terms(ctx), resolve_n(ctx));
  const ParameterSet params = resolve_params(ctx);
  check_beta_length(params, design);
  const auto dist = resolve_conditional(ctx, family);
  const std::uint64_t seed = resolve_seed(ctx);
  check_compatible(family, params, dist);
  const SimulatedSeries s = simulate_series(family, design, params, dist, seed);

  std::string csv = "t,alpha,y\n";
  for (Eigen::Index t = 0; t < s.y.size(); ++t) {
    csv += std::to_string(t + 1) + "," + format_double(s.latent.alpha(t)) + "," +
           format_double(s.y(t)) + "\n";
  }
  write_file((out / "simulate.csv").string(), csv);
}

inline void cmd_fit(Context& ctx, const fs::path& out) {
  const ModelFamily family = resolve_family(ctx);
  const FitOptions options = resolve_fit_options(ctx);
  const BoundData b = load_bound_data(ctx, family);
  const PipelineEstimate est = estimate_all(family, b.design, b.data.y, options);
  write_json(out / "fit.json", fit_json(ctx, b.design, est));
}

inline void cmd_mc_se(Context& ctx, const fs::path& out) {
  const ModelFamily family = resolve_family(ctx);
  const FitOptions options = resolve_fit_options(ctx);
  // The semiparametric model implies no response law; simulated SEs need one declared.
  if (!ctx.config.contains("conditional")) {
    throw ConfigError("mc-se needs an explicit 'conditional' distribution");
  }
  const auto dist = resolve_conditional(ctx, family);
  const std::uint64_t seed = resolve_seed(ctx);
  const std::size_t replicas = resolve_replicas(ctx, 500);
  const unsigned threads = resolve_threads(ctx);
  const std::uint32_t max_redraws = resolve_max_redraws(ctx);
  const BoundData b = load_bound_data(ctx, family);

  const PipelineEstimate est = estimate_all(family, b.design, b.data.y, options);
  if (!est.nuisance.valid) {
    throw DomainError("cannot simulate at an invalid nuisance estimate", est.nuisance.reason);
  }
  const ParameterSet theta{est.fit.beta_hat, est.nuisance.phi_hat, est.nuisance.sigma2_hat,
                           est.nuisance.rho_hat};
  const StudyResult mc =
      mc_standard_errors(family, b.design, theta, dist, replicas, seed, threads, max_redraws, options);

  json j = fit_json(ctx, b.design, est);
  j["command"] = "mc-se";
  j["seed"] = seed;
  std::vector<std::string> names = b.design.names;
  names.insert(names.end(), {"phi", "sigma2", "rho"});
  std::size_t redraws_total = 0;
  for (auto r : mc.redraws) redraws_total += r;
  json section = {
      {"replicas", replicas},
      {"conditional", to_string(dist)},
      {"parameter_names", names},
      {"mean", to_std(mc.mean)},
      {"se", mc.se ? json(to_std(*mc.se)) : json(nullptr)},
      {"redraws_total", redraws_total},
      {"total_simulations", mc.total_simulations},
  };

  std::string est_csv = "replica";
  for (const auto& name : names) est_csv += "," + csv_escape(name);
  est_csv += ",redraws\n";
  for (Eigen::Index r = 0; r < mc.estimates.rows(); ++r) {
    est_csv += std::to_string(r);
    for (Eigen::Index c = 0; c < mc.estimates.cols(); ++c) est_csv += "," + format_double(mc.estimates(r, c));
    est_csv += "," + std::to_string(mc.redraws[static_cast<std::size_t>(r)]) + "\n";
  }
  write_file((out / "mc_estimates.csv").string(), est_csv);

  if (replicas >= 30) {
    const auto diags = standardized_diagnostics(mc.estimates, names);
    std::string hist = "parameter,bin,lower,upper,count\n";
    std::string qq = "parameter,theoretical,sample\n";
    json ks = json::object();
    for (const auto& d : diags) {
      ks[d.name] = d.degenerate ? json(nullptr) : json(d.ks_statistic);
      for (std::size_t i = 0; i < d.bin_counts.size(); ++i) {
        hist += csv_escape(d.name) + "," + std::to_string(i) + "," + format_double(d.bin_edges[i]) + "," +
                format_double(d.bin_edges[i + 1]) + "," + std::to_string(d.bin_counts[i]) + "\n";
      }
      for (const auto& [theory, sample] : d.qq) {
        qq += csv_escape(d.name) + "," + format_double(theory) + "," + format_double(sample) + "\n";
      }
    }
    write_file((out / "mc_histogram.csv").string(), hist);
    write_file((out / "mc_qq.csv").string(), qq);
    section["ks_statistic"] = ks;
    section["diagnostics_skipped"] = nullptr;
  } else {
    section["ks_statistic"] = nullptr;
    section["diagnostics_skipped"] = "diagnostics need at least 30 replicas";
  }
  j["mc"] = section;
  j["config"] = ctx.config;
  write_json(out / "mc_se.json", j);
}

inline void cmd_study(Context& ctx, const fs::path& out) {
  const ModelFamily family = resolve_family(ctx);
  const auto terms = resolve_terms(ctx);
  const ParameterSet params = resolve_params(ctx);
  const auto dist = resolve_conditional(ctx, family);
  const std::uint64_t seed = resolve_seed(ctx);
  const std::size_t replicas = resolve_replicas(ctx, 200);
  const unsigned threads = resolve_threads(ctx);
  const std::uint32_t max_redraws = resolve_max_redraws(ctx);
  const FitOptions options = resolve_fit_options(ctx);

  std::vector<std::size_t> sizes;
  if (ctx.config.contains("sizes")) {
    if (ctx.config.contains("n")) throw ConfigError("give either 'n' or 'sizes', not both");
    for (auto n : get_required<std::vector<std::int64_t>>(ctx.config, "sizes", "config")) {
      if (n < 1) throw ConfigError("sizes must be >= 1");
      sizes.push_back(static_cast<std::size_t>(n));
    }
    if (sizes.empty()) throw ConfigError("sizes must not be empty");
  } else {
    sizes.push_back(resolve_n(ctx));
  }

  std::vector<StudyResult> results;
  for (std::size_t n : sizes) {
    const DesignMatrix design = build_design(terms, n);
    check_beta_length(params, design);
    results.push_back(simulate_and_estimate(family, design, params, dist, replicas, seed, max_redraws,
                                            options, threads));
  }

  const auto& names = results.front().names;
  std::string csv = "parameter,true";
  for (std::size_t n : sizes) csv += ",mean_n" + std::to_string(n);
  for (std::size_t n : sizes) csv += ",se_n" + std::to_string(n);
  csv += "\n";
  for (std::size_t p = 0; p < names.size(); ++p) {
    const auto i = static_cast<Eigen::Index>(p);
    csv += csv_escape(names[p]) + "," + format_double(results.front().truth(i));
    for (const auto& r : results) csv += "," + format_double(r.mean(i));
    for (const auto& r : results) csv += "," + (r.se ? format_double((*r.se)(i)) : std::string("nan"));
    csv += "\n";
  }
  write_file((out / "study.csv").string(), csv);

  json j = header(ctx, "study", seed);
  j["parameter_names"] = names;
  j["truth"] = to_std(results.front().truth);
  j["results"] = json::array();
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    const auto& r = results[s];
    std::size_t redraws_total = 0;
    for (auto d : r.redraws) redraws_total += d;
    j["results"].push_back({{"n", sizes[s]},
                            {"mean", to_std(r.mean)},
                            {"se", r.se ? json(to_std(*r.se)) : json(nullptr)},
                            {"redraws_total", redraws_total},
                            {"total_simulations", r.total_simulations}});
  }
  write_json(out / "study.json", j);
}

inline void cmd_moments(Context& ctx, const fs::path& out) {
  const ModelFamily family = resolve_family(ctx);
  const std::size_t n = resolve_n(ctx);
  const DesignMatrix design = build_design(resolve_terms(ctx), n);
  const ParameterSet params = resolve_params(ctx);
  check_beta_length(params, design);
  validate(family, params);
  if (!ctx.config.contains("t")) ctx.config["t"] = 1;
  if (!ctx.config.contains("max_lag")) ctx.config["max_lag"] = 1;
  const auto t = get_required<std::int64_t>(ctx.config, "t", "config");
  const auto max_lag = get_required<std::int64_t>(ctx.config, "max_lag", "config");
  if (t < 1 || static_cast<std::size_t>(t) > n) throw ConfigError("t must lie in 1..n");
  if (max_lag < 0 || static_cast<std::size_t>(t + max_lag) > n) {
    throw ConfigError("max_lag must satisfy 0 <= max_lag and t + max_lag <= n");
  }

  const MomentReport report = moment_report(family, design, params);
  json lags = json::array();
  for (int k = 1; k <= max_lag; ++k) {
    lags.push_back({{"k", k},
                    {"autocov", report.autocov(static_cast<std::size_t>(t), k)},
                    {"acf", report.acf(static_cast<std::size_t>(t), k)}});
  }
  json j = header(ctx, "moments", nullptr);
  j["t"] = t;
  j["mean_t"] = report.mean(static_cast<Eigen::Index>(t - 1));
  j["variance_t"] = report.variance(static_cast<Eigen::Index>(t - 1));
  j["lags"] = lags;
  j["mean"] = to_std(report.mean);
  j["variance"] = to_std(report.variance);
  *ctx.out << j.dump(2) << "\n";
  write_json(out / "moments.json", j);
}

inline json load_config(const std::string& path, fs::path& base) {
  std::string text;
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    text = ss.str();
    base = fs::current_path();
  } else {
    if (!fs::exists(path)) throw ConfigError("config file not found", path);
    text = read_file(path);
    base = fs::absolute(path).parent_path();
  }
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config is not valid JSON", e.what());
  }
}

inline json error_json(const std::string& code, const std::string& message, const std::string& context) {
  return {{"code", code}, {"message", message}, {"context", context}};
}

/// Writes error.json into `out_dir` (best effort) and echoes it to `err`.
inline int report_error(const std::string& out_dir, const json& e, std::ostream& err) {
  err << e.dump() << "\n";
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::ofstream file(fs::path(out_dir) / "error.json");
  if (file) file << e.dump(2) << "\n";
  return 1;
}

}  // namespace detail

/// Parses argv (without the program name) and runs one subcommand.
/// Returns 0 on success; otherwise writes <out>/error.json and returns 1.
inline int run_command(std::vector<std::string> args, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  Options opt;
  CLI::App app{"Semiparametric time-series regression: simulation, fitting and Monte Carlo"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1, 1);
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "simulate one series to simulate.csv (t, alpha, y)"},
      {"fit", "quasi-likelihood + method-of-moments fit to fit.json"},
      {"mc-se", "fit plus simulated standard errors and diagnostics"},
      {"study", "simulation study across sample sizes to study.csv"},
      {"moments", "closed-form mean, variance and ACF"},
  };
  for (const auto& [name, desc] : commands) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", opt.config_path, "JSON config file ('-' for stdin)")->required();
    sub->add_option("--out", opt.out_dir, "output directory")->capture_default_str();
    sub->add_option("--seed", opt.seed, "master seed (overrides config)");
    sub->add_option("--replicas", opt.replicas, "Monte Carlo replicas (overrides config)");
    sub->add_option("--threads", opt.threads, "worker threads, 0 = all cores (overrides config)");
    sub->callback([&opt, name = name] { opt.command = name; });
  }

  const std::vector<std::string> original = args;
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    // Parsing stops at the first problem, so --out may not have been read yet.
    for (std::size_t i = 0; i < original.size(); ++i) {
      if (original[i] == "--out" && i + 1 < original.size()) opt.out_dir = original[i + 1];
      else if (original[i].rfind("--out=", 0) == 0) opt.out_dir = original[i].substr(6);
    }
    return detail::report_error(opt.out_dir, detail::error_json("usage_error", e.what(), app.help()), err);
  }

  try {
    const fs::path out_dir(opt.out_dir);
    fs::create_directories(out_dir);
    fs::remove(out_dir / "error.json");

    Context ctx;
    ctx.options = opt;
    ctx.out = &out;
    ctx.config = detail::load_config(opt.config_path, ctx.base);
    reject_unknown_keys(ctx.config, detail::allowed_keys(opt.command), "config for " + opt.command);

    if (opt.command == "simulate") detail::cmd_simulate(ctx, out_dir);
    else if (opt.command == "fit") detail::cmd_fit(ctx, out_dir);
    else if (opt.command == "mc-se") detail::cmd_mc_se(ctx, out_dir);
    else if (opt.command == "study") detail::cmd_study(ctx, out_dir);
    else detail::cmd_moments(ctx, out_dir);
    return 0;
  } catch (const Error& e) {
    return detail::report_error(opt.out_dir, detail::error_json(e.code(), e.what(), e.context()), err);
  } catch (const json::exception& e) {
    return detail::report_error(opt.out_dir, detail::error_json("config_error", e.what(), ""), err);
  } catch (const fs::filesystem_error& e) {
    return detail::report_error(opt.out_dir, detail::error_json("io_error", e.what(), e.path1().string()), err);
  } catch (const std::exception& e) {
    return detail::report_error(opt.out_dir, detail::error_json("internal_error", e.what(), ""), err);
  }
}

inline int run_command(int argc, const char* const* argv, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  return run_command(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace sts::cli
