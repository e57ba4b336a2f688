#include "covreg/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include "covreg/errors.hpp"
#include "covreg/parallel.hpp"
#include "covreg/rng.hpp"

namespace covreg {

std::vector<SignalComponent> ScenarioSpec::default_signals() {
  return {
      SignalComponent{"C2", 1, {10, 20, 30}, {2.0, 2.0, -2.0}},
      SignalComponent{"C3", 2, {15, 25, 35}, {1.0, -1.0, 1.0}},
  };
}

void ScenarioSpec::validate() const {
  if (n < 4) throw ConfigError("scenario: n must be >= 4");
  if (p < 1) throw ConfigError("scenario: p must be >= 1");
  if (q < 2) throw ConfigError("scenario: q must be >= 2");
  if (t_obs <= p) {
    throw ConfigError("scenario: t_obs must exceed p for well-posed S_i");
  }
  if (!(lognormal_sigma > 0.0)) {
    throw ConfigError("scenario: lognormal_sigma must be > 0");
  }
  if (intercept_lo > intercept_hi) {
    throw ConfigError("scenario: intercept range is empty");
  }
  if (replicate_count < 1) {
    throw ConfigError("scenario: replicate_count must be >= 1");
  }
  if (b_splits < 2) throw ConfigError("scenario: b_splits must be >= 2");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("scenario: alpha must lie in (0,1)");
  }
  if (!(dfd_threshold > 1.0)) {
    throw ConfigError("scenario: dfd_threshold must exceed 1");
  }
  std::set<int> comps;
  for (const auto& s : signals) {
    if (s.component < 0 || s.component >= p) {
      throw ConfigError("scenario: signal component out of range");
    }
    if (!comps.insert(s.component).second) {
      throw ConfigError("scenario: duplicate signal component");
    }
    if (s.indices.size() != s.values.size()) {
      throw ConfigError("scenario: signal indices/values length mismatch");
    }
    for (int j : s.indices) {
      if (j < 1 || j >= q) {
        throw ConfigError("scenario: active index " + std::to_string(j) +
                          " out of range [1, q)");
      }
    }
  }
  for (int j : report_indices) {
    if (j < 1 || j >= q) {
      throw ConfigError("scenario: report index " + std::to_string(j) +
                        " out of range [1, q)");
    }
  }
  if (eigvec_matrix.has_value()) {
    if (eigvec_matrix->rows() != p || eigvec_matrix->cols() != p) {
      throw ConfigError("scenario: eigvec_matrix must be p x p");
    }
    Matrix gram = eigvec_matrix->transpose() * (*eigvec_matrix);
    double dev = (gram - Matrix::Identity(p, p)).cwiseAbs().maxCoeff();
    if (dev > 1e-10) {
      throw ConfigError("scenario: eigvec_matrix not orthonormal (deviation " +
                        std::to_string(dev) + ")");
    }
  }
}

Matrix ScenarioSpec::resolved_eigvec() const {
  if (eigvec_matrix.has_value()) return *eigvec_matrix;
  if (mode == ScenarioMode::null_case || signals.empty()) {
    return Matrix::Identity(p, p);
  }
  if (p < 5) {
    throw ConfigError(
        "scenario: the default eigenvector matrix needs p >= 5; "
        "provide eigvec_matrix");
  }
  // Signal eigenvectors matching the reported truth loadings, extended to a
  // full orthonormal basis (coordinates beyond 5 stay axis-aligned).
  const double a = 1.0 / std::sqrt(5.0);
  const double c = (1.0 - a) / 4.0;
  const double b = 1.0 - c;
  Vector c2 = Vector::Zero(p), c3 = Vector::Zero(p);
  c2[0] = a, c2[1] = -b, c2[2] = c, c2[3] = c, c2[4] = c;
  c3[0] = a, c3[1] = c, c3[2] = -b, c3[3] = c, c3[4] = c;

  Matrix g = Matrix::Zero(p, p);
  g.col(1) = c2;
  g.col(2) = c3;
  const int seeds[3] = {0, 3, 4};
  const int targets[3] = {0, 3, 4};
  std::vector<int> built{1, 2};
  for (int k = 0; k < 3; ++k) {
    Vector v = Vector::Zero(p);
    v[seeds[k]] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (int col : built) v -= g.col(col).dot(v) * g.col(col);
    }
    v.normalize();
    g.col(targets[k]) = v;
    built.push_back(targets[k]);
  }
  for (int j = 5; j < p; ++j) g(j, j) = 1.0;
  return g;
}

SubjectData generate_subject(const ScenarioSpec& spec, const GroundTruth& truth,
                             const Vector& x, std::mt19937_64& rng) {
  const int p = spec.p;
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<int> signal_of(p, -1);
  for (size_t s = 0; s < spec.signals.size(); ++s) {
    signal_of[spec.signals[s].component] = static_cast<int>(s);
  }

  Vector sqrt_lambda(p);
  for (int j = 0; j < p; ++j) {
    double log_lambda;
    if (spec.mode == ScenarioMode::alternative && signal_of[j] >= 0) {
      log_lambda = x.dot(truth.beta_true[signal_of[j]]);
      if (std::abs(log_lambda) > 700.0) {
        throw SolverError("generate_subject: eigenvalue exponent x^T beta = " +
                          std::to_string(log_lambda) + " out of range");
      }
    } else {
      log_lambda = spec.lognormal_sigma * normal(rng);
    }
    sqrt_lambda[j] = std::exp(0.5 * log_lambda);
  }

  SubjectData subject;
  subject.x = x;
  subject.y.resize(spec.t_obs, p);
  Vector w(p);
  for (int t = 0; t < spec.t_obs; ++t) {
    for (int j = 0; j < p; ++j) w[j] = sqrt_lambda[j] * normal(rng);
    subject.y.row(t) = (truth.eigvec * w).transpose();
  }
  return subject;
}

std::pair<Dataset, GroundTruth> generate_dataset(const ScenarioSpec& spec,
                                                 std::mt19937_64& rng) {
  spec.validate();
  GroundTruth truth;
  truth.eigvec = spec.resolved_eigvec();

  std::uniform_real_distribution<double> unif(spec.intercept_lo,
                                              spec.intercept_hi);
  for (const auto& sig : spec.signals) {
    Vector beta = Vector::Zero(spec.q);
    beta[0] = unif(rng);
    for (size_t k = 0; k < sig.indices.size(); ++k) {
      beta[sig.indices[k]] = sig.values[k];
    }
    truth.beta_true.push_back(std::move(beta));
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset dataset;
  dataset.p = spec.p;
  dataset.q = spec.q;
  dataset.subjects.reserve(spec.n);
  for (int i = 0; i < spec.n; ++i) {
    Vector x(spec.q);
    x[0] = 1.0;
    for (int j = 1; j < spec.q; ++j) x[j] = normal(rng);
    dataset.subjects.push_back(generate_subject(spec, truth, x, rng));
  }
  return {std::move(dataset), std::move(truth)};
}

namespace {

double abs_inner_unit(const Vector& estimated, const Vector& truth_col) {
  double norm = estimated.norm();
  if (norm <= 0.0) return 0.0;
  return std::min(1.0, std::abs(estimated.dot(truth_col)) / norm);
}

/// Injective assignment signal -> estimated component maximizing matched
/// count, then total |<gamma_hat, gamma*>|. Small sizes; brute force.
std::vector<int> match_components(const Matrix& inner) {
  const int n_sig = static_cast<int>(inner.rows());
  const int n_est = static_cast<int>(inner.cols());
  std::vector<int> best(n_sig, -1), current(n_sig, -1);
  int best_matched = -1;
  double best_total = -1.0;
  std::vector<char> used(n_est, 0);

  auto recurse = [&](auto&& self, int s, int matched, double total) -> void {
    if (s == n_sig) {
      if (matched > best_matched ||
          (matched == best_matched && total > best_total)) {
        best_matched = matched;
        best_total = total;
        best = current;
      }
      return;
    }
    for (int k = 0; k < n_est; ++k) {
      if (used[k]) continue;
      used[k] = 1;
      current[s] = k;
      self(self, s + 1, matched + 1, total + inner(s, k));
      used[k] = 0;
    }
    current[s] = -1;
    self(self, s + 1, matched, total);
  };
  recurse(recurse, 0, 0, 0.0);
  return best;
}

struct RepOutcome {
  bool failed = true;
  std::string message;
  std::vector<char> matched;
  std::vector<double> gamma_inner;
  std::vector<Vector> beta_hat;
  std::vector<Vector> ci_lo;
  std::vector<Vector> ci_hi;
  long truncated = 0;
  double max_trace_increase = 0.0;
  double min_dfd = 1.0;
  int null_covered = 0;
  int null_total = 0;
};

double trace_increase(const ModelFit& f) {
  double worst = -std::numeric_limits<double>::infinity();
  for (size_t k = 1; k < f.objective_trace.size(); ++k) {
    worst = std::max(worst, f.objective_trace[k] - f.objective_trace[k - 1]);
  }
  return worst;
}

RepOutcome run_one_replicate(const ScenarioSpec& spec,
                             const SplitPlan& plan_proto,
                             const PenaltySpec& penalty,
                             const FitConfig& config, const SimOptions& options,
                             int rep) {
  RepOutcome out;
  const int n_sig = static_cast<int>(spec.signals.size());
  out.matched.assign(n_sig, 0);
  out.gamma_inner.assign(n_sig, 0.0);
  out.beta_hat.resize(n_sig);
  out.ci_lo.resize(n_sig);
  out.ci_hi.resize(n_sig);

  auto data_rng = make_engine(derive_seed(spec.rng_seed, 0x5EED, rep));
  auto [dataset, truth] = generate_dataset(spec, data_rng);

  FitConfig cfg = config;
  cfg.rng_seed = derive_seed(spec.rng_seed, 0xF17, rep);

  const bool null_mode = (spec.mode == ScenarioMode::null_case);
  const int k_max = null_mode ? 1 : std::min(spec.max_components, spec.p);
  ComponentSet cs = select_components(dataset, penalty, cfg,
                                      spec.dfd_threshold, k_max, options.cv);
  if (cs.components.empty()) {
    out.message = "no components retained";
    return out;
  }
  out.max_trace_increase = -std::numeric_limits<double>::infinity();
  for (const auto& f : cs.components) {
    out.max_trace_increase = std::max(out.max_trace_increase, trace_increase(f));
  }
  for (double d : cs.dfd_values) out.min_dfd = std::min(out.min_dfd, d);

  SplitPlan plan = plan_proto;
  if (plan.n1 <= 0) plan.n1 = (spec.n1 > 0) ? spec.n1 : spec.n / 2;
  plan.n2 = spec.n - plan.n1;
  if (plan.b_splits <= 0) plan.b_splits = spec.b_splits;

  MultiSplitOptions ms;
  ms.threads = 1;  // replicates are the parallel unit

  auto infer_component = [&](const ModelFit& comp, std::uint64_t stream) {
    SplitPlan p2 = plan;
    p2.rng_seed = derive_seed(spec.rng_seed, stream, rep);
    PenaltySpec pen = penalty;
    pen.lambda = comp.lambda;  // reuse the full-data lambda inside splits
    auto [splits, beta_hat] = multi_split(dataset, comp.gamma, pen, p2, ms);
    auto ij = ij_variance(splits, beta_hat, spec.n, p2);
    for (char f : ij.truncated) out.truncated += f;
    return intervals_and_pvalues(beta_hat, ij.v_hat, spec.alpha,
                                 std::move(ij.truncated));
  };

  if (null_mode) {
    SmoothedInference inf = infer_component(cs.components[0], 0xA110);
    auto coord_rng = make_engine(derive_seed(spec.rng_seed, 0xC00D, rep));
    std::vector<int> pool(spec.q - 1);
    std::iota(pool.begin(), pool.end(), 1);
    std::shuffle(pool.begin(), pool.end(), coord_rng);
    int n_coords = std::min<int>(spec.null_report_coords, spec.q - 1);
    for (int k = 0; k < n_coords; ++k) {
      int j = pool[k];
      out.null_total += 1;
      if (inf.ci_lower[j] <= 0.0 && 0.0 <= inf.ci_upper[j]) {
        out.null_covered += 1;
      }
    }
    out.failed = false;
    return out;
  }

  // Match estimated components to the signal truths.
  Matrix inner(n_sig, cs.components.size());
  for (int s = 0; s < n_sig; ++s) {
    Vector truth_col = truth.eigvec.col(spec.signals[s].component);
    for (size_t k = 0; k < cs.components.size(); ++k) {
      inner(s, k) = abs_inner_unit(cs.components[k].gamma.gamma, truth_col);
    }
  }
  std::vector<int> assignment = match_components(inner);

  for (int s = 0; s < n_sig; ++s) {
    if (assignment[s] < 0) continue;
    const ModelFit& comp = cs.components[assignment[s]];
    out.matched[s] = 1;
    out.gamma_inner[s] = inner(s, assignment[s]);
    SmoothedInference inf = infer_component(comp, 0xB000 + s);
    out.beta_hat[s] = inf.beta_hat;
    out.ci_lo[s] = inf.ci_lower;
    out.ci_hi[s] = inf.ci_upper;
  }
  out.failed = false;
  return out;
}

}  // namespace

SimReport run_replicates(const ScenarioSpec& spec, const SplitPlan& plan_proto,
                         const PenaltySpec& penalty, const FitConfig& config,
                         const SimOptions& options) {
  spec.validate();
  penalty.validate(spec.q);
  config.validate();
  const auto start = std::chrono::steady_clock::now();

  std::vector<RepOutcome> outcomes(spec.replicate_count);
  parallel_for(spec.replicate_count, options.threads, [&](int rep) {
    try {
      outcomes[rep] =
          run_one_replicate(spec, plan_proto, penalty, config, options, rep);
    } catch (const std::exception& e) {
      outcomes[rep].failed = true;
      outcomes[rep].message = e.what();
    }
  });

  SimReport report;
  report.replicate_count = spec.replicate_count;
  report.max_trace_increase = -std::numeric_limits<double>::infinity();

  const int n_sig = static_cast<int>(spec.signals.size());
  long null_covered = 0, null_total = 0;
  for (const auto& o : outcomes) {
    if (o.failed) {
      report.failures += 1;
      continue;
    }
    report.max_trace_increase =
        std::max(report.max_trace_increase, o.max_trace_increase);
    report.min_dfd = std::min(report.min_dfd, o.min_dfd);
    report.truncated_variances += o.truncated;
    null_covered += o.null_covered;
    null_total += o.null_total;
    for (int s = 0; s < n_sig; ++s) {
      if (!o.matched[s]) report.component_missing += 1;
    }
  }
  if (null_total > 0) {
    report.null_coverage = static_cast<double>(null_covered) / null_total;
    report.null_ci_count = null_total;
  }

  auto sd_of = [](const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) return 0.0;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / (xs.size() - 1));
  };

  for (int s = 0; s < n_sig; ++s) {
    const auto& sig = spec.signals[s];
    for (int j : spec.report_indices) {
      double truth_j = 0.0;
      for (size_t k = 0; k < sig.indices.size(); ++k) {
        if (sig.indices[k] == j) truth_j = sig.values[k];
      }
      SimTargetRow row;
      row.component = sig.name;
      row.index = j;
      row.truth = truth_j;
      std::vector<double> ests;
      int covered = 0;
      double sq = 0.0;
      for (const auto& o : outcomes) {
        if (o.failed || !o.matched[s]) continue;
        double est = o.beta_hat[s][j];
        ests.push_back(est);
        sq += (est - truth_j) * (est - truth_j);
        if (o.ci_lo[s][j] <= truth_j && truth_j <= o.ci_hi[s][j]) ++covered;
      }
      row.replicates_used = static_cast<int>(ests.size());
      if (!ests.empty()) {
        row.mean_estimate =
            std::accumulate(ests.begin(), ests.end(), 0.0) / ests.size();
        row.empirical_se = sd_of(ests, row.mean_estimate);
        row.coverage = static_cast<double>(covered) / ests.size();
        row.mse = sq / ests.size();
      }
      report.rows.push_back(std::move(row));
    }
    SimGammaRow grow;
    grow.component = sig.name;
    std::vector<double> inners;
    for (const auto& o : outcomes) {
      if (o.failed || !o.matched[s]) continue;
      inners.push_back(o.gamma_inner[s]);
    }
    grow.replicates_used = static_cast<int>(inners.size());
    if (!inners.empty()) {
      grow.mean_abs_inner =
          std::accumulate(inners.begin(), inners.end(), 0.0) / inners.size();
      grow.se_abs_inner = sd_of(inners, grow.mean_abs_inner);
    }
    report.gamma_rows.push_back(std::move(grow));
  }

  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return report;
}

std::vector<SweepCell> sweep(const ScenarioSpec& base,
                             const std::vector<int>& n_grid,
                             const std::vector<int>& t_grid,
                             const SplitPlan& plan_proto,
                             const PenaltySpec& penalty,
                             const FitConfig& config,
                             const SimOptions& options) {
  if (n_grid.empty() || t_grid.empty()) {
    throw ConfigError("sweep: grid must be nonempty");
  }
  std::vector<SweepCell> cells;
  for (int n : n_grid) {
    for (int t : t_grid) {
      ScenarioSpec spec = base;
      spec.n = n;
      spec.t_obs = t;
      SweepCell cell;
      cell.n = n;
      cell.t_obs = t;
      cell.report = run_replicates(spec, plan_proto, penalty, config, options);
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

ScenarioSpec builtin_scenario(const std::string& name) {
  ScenarioSpec spec;
  spec.signals = ScenarioSpec::default_signals();
  if (name == "table1_q200_small") {
    spec.replicate_count = 50;
    spec.b_splits = 100;
    spec.rng_seed = 7;
  } else if (name == "table3_p20_small") {
    spec.p = 20;
    spec.replicate_count = 30;
    spec.b_splits = 100;
    spec.rng_seed = 11;
  } else if (name == "fig1_grid_small") {
    spec.replicate_count = 20;
    spec.b_splits = 100;
    spec.report_indices = {20, 40};
    spec.rng_seed = 13;
  } else if (name == "null_case_small") {
    spec.mode = ScenarioMode::null_case;
    spec.signals.clear();
    spec.replicate_count = 100;
    spec.b_splits = 100;
    spec.rng_seed = 17;
  } else if (name == "table1_q500_regression") {
    spec.q = 500;
    spec.replicate_count = 50;
    spec.b_splits = 100;
    spec.rng_seed = 19;
  } else {
    throw ConfigError("unknown builtin scenario: " + name);
  }
  return spec;
}

std::vector<std::string> builtin_scenario_names() {
  return {"table1_q200_small", "table3_p20_small", "fig1_grid_small",
          "null_case_small", "table1_q500_regression"};
}

}  // namespace covreg
