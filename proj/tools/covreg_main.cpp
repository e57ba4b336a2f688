#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "covreg/errors.hpp"
#include "covreg/io.hpp"
#include "covreg/parallel.hpp"
#include "covreg/serialize.hpp"

namespace fs = std::filesystem;
using namespace covreg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitSolver = 3;
constexpr int kExitStrict = 4;

std::uint64_t resolve_seed(const CLI::Option* seed_opt, std::uint64_t value) {
  if (seed_opt->count() > 0) return value;
  if (const char* env = std::getenv("COVREG_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("COVREG_SEED is not an integer: " + std::string(env));
    }
  }
  return value;
}

void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw InputError("cannot create output directory: " + out);
}

void write_meta(const std::string& out, const Json& config, double runtime) {
  Json meta;
  meta["config"] = config;
  meta["runtime_seconds"] = runtime;
  write_text_file(out + "/run_meta.json", meta.dump(2) + "\n");
}

struct PenaltyFlags {
  std::string kind = "lasso";
  double lambda = -1.0;  // negative -> cross-validate
  std::string d_matrix_path;
  bool penalize_intercept = false;
  int cv_folds = 5;

  PenaltySpec build(int q) const {
    PenaltySpec pen;
    pen.kind = kind == "generalized" ? PenaltyKind::generalized
                                     : PenaltyKind::lasso;
    pen.penalize_intercept = penalize_intercept;
    if (lambda >= 0.0) {
      if (!std::isfinite(lambda)) throw ConfigError("lambda must be finite");
      pen.lambda = lambda;
    }
    if (pen.kind == PenaltyKind::generalized) {
      if (d_matrix_path.empty()) {
        throw ConfigError("generalized penalty requires --d-matrix");
      }
      pen.d = load_d_matrix(d_matrix_path, q);
    }
    return pen;
  }
  std::optional<CvSpec> cv_spec() const {
    if (lambda >= 0.0) return std::nullopt;
    CvSpec cv;
    cv.folds = cv_folds;
    return cv;
  }
};

int cmd_fit(const std::string& data_path, const std::string& out,
            const PenaltyFlags& pf, double dfd_threshold, int max_components,
            int restarts, std::uint64_t seed, int threads) {
  double t0 = wall_time_seconds();
  Dataset dataset = load_dataset(data_path);
  ensure_out_dir(out);

  PenaltySpec penalty = pf.build(dataset.q);
  FitConfig config;
  config.restarts = restarts;
  config.rng_seed = seed;
  config.threads = threads;

  ComponentSet set = select_components(dataset, penalty, config, dfd_threshold,
                                       max_components, pf.cv_spec());
  write_text_file(out + "/fit.json", to_json(set).dump(2) + "\n");

  Json cfg;
  cfg["command"] = "fit";
  cfg["data"] = data_path;
  cfg["penalty"] = pf.kind;
  cfg["lambda"] = pf.lambda;
  cfg["dfd_threshold"] = dfd_threshold;
  cfg["max_components"] = max_components;
  cfg["restarts"] = restarts;
  cfg["seed"] = seed;
  cfg["threads"] = threads;
  write_meta(out, cfg, wall_time_seconds() - t0);

  std::cout << "retained " << set.components.size() << " component(s); dfd:";
  for (double d : set.dfd_values) std::cout << ' ' << format_double(d);
  std::cout << "\nwrote " << out << "/fit.json" << std::endl;
  return kExitOk;
}

int cmd_infer(const std::string& data_path, const std::string& fit_path,
              const std::string& out, int component, int b_splits, int n1,
              double alpha, const PenaltyFlags& pf, bool cv_per_split,
              std::uint64_t seed, int threads) {
  double t0 = wall_time_seconds();
  if (b_splits < 2) throw ConfigError("B>=2 required for inference");
  Dataset dataset = load_dataset(data_path);
  ComponentSet set = component_set_from_json(Json::parse(read_text_file(fit_path)));
  if (component < 0 || component >= static_cast<int>(set.components.size())) {
    throw ConfigError("component index " + std::to_string(component) +
                      " out of range; fit has " +
                      std::to_string(set.components.size()) + " component(s)");
  }
  ensure_out_dir(out);
  const ModelFit& mf = set.components[component];

  PenaltySpec penalty = pf.build(dataset.q);
  if (pf.lambda < 0.0) penalty.lambda = mf.lambda;  // reuse the fitted lambda

  SplitPlan plan;
  plan.n1 = n1 > 0 ? n1 : dataset.n() / 2;
  plan.n2 = dataset.n() - plan.n1;
  plan.b_splits = b_splits;
  plan.rng_seed = seed;

  MultiSplitOptions options;
  options.threads = threads;
  options.cv_per_split = cv_per_split;
  options.cv.folds = pf.cv_folds;

  auto [splits, beta_hat] = multi_split(dataset, mf.gamma, penalty, plan,
                                        options);
  Vector unsquared;
  IjVariance ij = ij_variance(splits, beta_hat, dataset.n(), plan, &unsquared);
  SmoothedInference inf = intervals_and_pvalues(beta_hat, ij.v_hat, alpha,
                                                std::move(ij.truncated));

  write_text_file(out + "/inference.json",
                  inference_to_json(inf, plan, penalty.lambda, seed, &unsquared)
                          .dump(2) +
                      "\n");
  write_text_file(out + "/inference.csv", inference_to_csv(inf));

  Json cfg;
  cfg["command"] = "infer";
  cfg["data"] = data_path;
  cfg["fit"] = fit_path;
  cfg["component"] = component;
  cfg["B"] = b_splits;
  cfg["n1"] = plan.n1;
  cfg["n2"] = plan.n2;
  cfg["alpha"] = alpha;
  cfg["lambda"] = penalty.lambda;
  cfg["cv_per_split"] = cv_per_split;
  cfg["seed"] = seed;
  cfg["threads"] = threads;
  write_meta(out, cfg, wall_time_seconds() - t0);

  std::cout << "wrote " << out << "/inference.json and inference.csv"
            << std::endl;
  return kExitOk;
}

int cmd_simulate(const std::string& scenario, const std::string& out,
                 const std::string& grid, bool strict, const PenaltyFlags& pf,
                 const CLI::Option* seed_opt, std::uint64_t seed_flag,
                 const CLI::Option* b_opt, int b_flag, int threads) {
  double t0 = wall_time_seconds();
  ScenarioSpec spec;
  bool builtin = false;
  for (const auto& name : builtin_scenario_names()) {
    if (name == scenario) {
      spec = builtin_scenario(name);
      builtin = true;
      break;
    }
  }
  if (!builtin) spec = scenario_from_json(Json::parse(read_text_file(scenario)));
  if (seed_opt->count() > 0) spec.rng_seed = seed_flag;
  if (b_opt->count() > 0) spec.b_splits = b_flag;
  ensure_out_dir(out);

  PenaltySpec penalty = pf.build(spec.q);
  FitConfig config;
  config.rng_seed = spec.rng_seed;

  SimOptions options;
  options.threads = threads;
  options.cv = pf.cv_spec();
  SplitPlan plan_proto;  // resolved per cell from the scenario
  plan_proto.b_splits = 0;
  plan_proto.n1 = 0;

  write_text_file(out + "/scenario_resolved.json",
                  to_json(spec).dump(2) + "\n");

  int failures = 0;
  if (!grid.empty()) {
    auto parse_ints = [](const std::string& s) {
      std::vector<int> out_v;
      std::stringstream ss(s);
      std::string item;
      while (std::getline(ss, item, ',')) out_v.push_back(std::stoi(item));
      return out_v;
    };
    auto sep = grid.find(':');
    if (sep == std::string::npos) {
      throw ConfigError("--grid expects 'n1,n2,...:t1,t2,...'");
    }
    auto cells = sweep(spec, parse_ints(grid.substr(0, sep)),
                       parse_ints(grid.substr(sep + 1)), plan_proto, penalty,
                       config, options);
    write_text_file(out + "/sweep.csv", sweep_to_csv(cells));
    write_text_file(out + "/sweep.json", sweep_to_json(cells).dump(2) + "\n");
    for (const auto& c : cells) failures += c.report.failures;
    std::cout << "wrote " << out << "/sweep.csv (" << cells.size() << " cells)"
              << std::endl;
  } else {
    SimReport report = run_replicates(spec, plan_proto, penalty, config,
                                      options);
    write_text_file(out + "/report.csv", report_to_csv(report));
    write_text_file(out + "/report.json", report_to_json(report).dump(2) + "\n");
    failures = report.failures;
    std::cout << "wrote " << out << "/report.csv ("
              << report.replicate_count - report.failures << "/"
              << report.replicate_count << " replicates ok)" << std::endl;
  }

  Json cfg;
  cfg["command"] = "simulate";
  cfg["scenario"] = scenario;
  cfg["grid"] = grid;
  cfg["strict"] = strict;
  cfg["penalty"] = pf.kind;
  cfg["lambda"] = pf.lambda;
  cfg["seed"] = spec.rng_seed;
  cfg["B"] = spec.b_splits;
  cfg["threads"] = threads;
  write_meta(out, cfg, wall_time_seconds() - t0);

  if (failures > 0) {
    std::cerr << "W_REPLICATES " << failures << " replicate(s) failed"
              << std::endl;
    if (strict) return kExitStrict;
  }
  return kExitOk;
}

int cmd_report(const std::string& in_path, const std::string& out_csv) {
  Json j = Json::parse(read_text_file(in_path));
  std::string csv;
  if (j.contains("rows")) {
    std::cout << "component  index  truth  mean_est  se  coverage  mse  used\n";
    for (const auto& r : j.at("rows")) {
      std::cout << r.at("component").get<std::string>() << "  "
                << r.at("index").get<int>() << "  "
                << r.at("truth").get<double>() << "  "
                << r.at("mean_estimate").get<double>() << "  "
                << r.at("empirical_se").get<double>() << "  "
                << r.at("coverage").get<double>() << "  "
                << r.at("mse").get<double>() << "  "
                << r.at("replicates_used").get<int>() << "\n";
    }
    for (const auto& r : j.at("gamma")) {
      std::cout << r.at("component").get<std::string>()
                << "  gamma |<est,truth>| = "
                << r.at("mean_abs_inner").get<double>() << " (sd "
                << r.at("se_abs_inner").get<double>() << ")\n";
    }
    std::ostringstream ss;
    ss << "component,index,truth,mean_estimate,empirical_se,coverage,mse,"
          "replicates_used\n";
    for (const auto& r : j.at("rows")) {
      ss << csv_field(r.at("component").get<std::string>()) << ','
         << r.at("index").get<int>() << ','
         << format_double(r.at("truth").get<double>()) << ','
         << format_double(r.at("mean_estimate").get<double>()) << ','
         << format_double(r.at("empirical_se").get<double>()) << ','
         << format_double(r.at("coverage").get<double>()) << ','
         << format_double(r.at("mse").get<double>()) << ','
         << r.at("replicates_used").get<int>() << '\n';
    }
    csv = ss.str();
  } else if (j.contains("coordinates")) {
    std::cout << "j  beta_hat  v_hat  ci  p\n";
    std::ostringstream ss;
    ss << "j,beta_hat,v_hat,ci_lower,ci_upper,p_value,truncated_variance\n";
    for (const auto& r : j.at("coordinates")) {
      std::cout << r.at("j").get<int>() << "  "
                << r.at("beta_hat").get<double>() << "  "
                << r.at("v_hat").get<double>() << "  ["
                << r.at("ci_lower").get<double>() << ", "
                << r.at("ci_upper").get<double>() << "]  "
                << r.at("p_value").get<double>() << "\n";
      ss << r.at("j").get<int>() << ','
         << format_double(r.at("beta_hat").get<double>()) << ','
         << format_double(r.at("v_hat").get<double>()) << ','
         << format_double(r.at("ci_lower").get<double>()) << ','
         << format_double(r.at("ci_upper").get<double>()) << ','
         << format_double(r.at("p_value").get<double>()) << ','
         << (r.at("truncated_variance").get<bool>() ? 1 : 0) << '\n';
    }
    csv = ss.str();
  } else {
    throw InputError("unrecognized report JSON: " + in_path);
  }
  if (!out_csv.empty()) {
    write_text_file(out_csv, csv);
    std::cout << "wrote " << out_csv << std::endl;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"covreg: covariance-outcome regression with high-dimensional "
               "covariates"};
  app.require_subcommand(1);

  PenaltyFlags pf;
  std::string data_path, out_dir = "covreg_out", fit_path, scenario, grid;
  std::string report_in, report_out;
  double dfd_threshold = 2.0, alpha = 0.05;
  int max_components = 0, restarts = 5, component = 0, b_splits = 200, n1 = 0;
  int threads = 1;
  std::uint64_t seed = 1;
  bool strict = false, cv_per_split = false;

  auto add_penalty_flags = [&](CLI::App* cmd) {
    cmd->add_option("--penalty", pf.kind, "lasso or generalized")
        ->check(CLI::IsMember({"lasso", "generalized"}));
    cmd->add_option("--lambda", pf.lambda,
                    "fixed penalty weight; omit to cross-validate");
    cmd->add_option("--d-matrix", pf.d_matrix_path,
                    "CSV structure matrix for the generalized penalty");
    cmd->add_flag("--penalize-intercept", pf.penalize_intercept,
                  "include beta[0] in the penalty");
    cmd->add_option("--cv-folds", pf.cv_folds, "folds for lambda selection");
  };

  auto* fit_cmd = app.add_subcommand("fit", "estimate components on a dataset");
  fit_cmd->add_option("--data", data_path, "dataset manifest JSON")->required();
  fit_cmd->add_option("--out", out_dir, "output directory");
  add_penalty_flags(fit_cmd);
  fit_cmd->add_option("--dfd-threshold", dfd_threshold, "stop threshold (>1)");
  fit_cmd->add_option("--max-components", max_components, "0 = up to p");
  fit_cmd->add_option("--restarts", restarts, "random initializations");
  auto* fit_seed = fit_cmd->add_option("--seed", seed, "RNG seed");
  fit_cmd->add_option("--threads", threads, "parallel restarts");

  auto* infer_cmd =
      app.add_subcommand("infer", "split-and-smooth inference on beta");
  infer_cmd->add_option("--data", data_path, "dataset manifest JSON")
      ->required();
  infer_cmd->add_option("--fit", fit_path, "fit.json from the fit command")
      ->required();
  infer_cmd->add_option("--out", out_dir, "output directory");
  infer_cmd->add_option("--component", component, "component index in fit");
  infer_cmd->add_option("--B", b_splits, "number of splits (>= 2)");
  infer_cmd->add_option("--n1", n1, "selection subset size (0 = n/2)");
  infer_cmd->add_option("--alpha", alpha, "CI level is 1 - alpha");
  add_penalty_flags(infer_cmd);
  infer_cmd->add_flag("--cv-per-split", cv_per_split,
                      "re-select lambda on every selection half");
  auto* infer_seed = infer_cmd->add_option("--seed", seed, "RNG seed");
  infer_cmd->add_option("--threads", threads, "parallel splits");

  auto* sim_cmd = app.add_subcommand("simulate", "Monte-Carlo harness");
  sim_cmd->add_option("--scenario", scenario,
                      "builtin scenario name or JSON path")
      ->required();
  sim_cmd->add_option("--out", out_dir, "output directory");
  sim_cmd->add_option("--grid", grid, "sweep 'n1,n2,...:t1,t2,...'");
  sim_cmd->add_flag("--strict", strict, "exit 4 if any replicate fails");
  add_penalty_flags(sim_cmd);
  auto* sim_seed = sim_cmd->add_option("--seed", seed, "override scenario seed");
  auto* sim_b = sim_cmd->add_option("--B", b_splits, "override scenario splits");
  sim_cmd->add_option("--threads", threads, "parallel replicates");

  auto* report_cmd = app.add_subcommand("report", "pretty-print a report JSON");
  report_cmd->add_option("--in", report_in, "report or inference JSON")
      ->required();
  report_cmd->add_option("--out", report_out, "optional CSV destination");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "E_CONFIG " << e.what() << std::endl;
    return kExitInput;
  }

  try {
    if (pf.lambda >= 0.0 && !std::isfinite(pf.lambda)) {
      throw ConfigError("lambda must be finite");
    }
    if (fit_cmd->parsed()) {
      return cmd_fit(data_path, out_dir, pf, dfd_threshold, max_components,
                     restarts, resolve_seed(fit_seed, seed), threads);
    }
    if (infer_cmd->parsed()) {
      if (b_splits < 2) throw ConfigError("B>=2 required for inference");
      return cmd_infer(data_path, fit_path, out_dir, component, b_splits, n1,
                       alpha, pf, cv_per_split, resolve_seed(infer_seed, seed),
                       threads);
    }
    if (sim_cmd->parsed()) {
      return cmd_simulate(scenario, out_dir, grid, strict, pf, sim_seed, seed,
                          sim_b, b_splits, threads);
    }
    if (report_cmd->parsed()) {
      return cmd_report(report_in, report_out);
    }
  } catch (const InputError& e) {
    std::cerr << "E_INPUT " << e.what() << std::endl;
    return kExitInput;
  } catch (const ConfigError& e) {
    std::cerr << "E_CONFIG " << e.what() << std::endl;
    return kExitInput;
  } catch (const SolverError& e) {
    std::cerr << "E_SOLVER " << e.what() << std::endl;
    return kExitSolver;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "E_INPUT malformed JSON: " << e.what() << std::endl;
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "E_SOLVER " << e.what() << std::endl;
    return kExitSolver;
  }
  return kExitOk;
}
