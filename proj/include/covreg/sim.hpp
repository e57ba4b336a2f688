#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "covreg/estimate.hpp"
#include "covreg/infer.hpp"
#include "covreg/types.hpp"

namespace covreg {

enum class ScenarioMode { null_case, alternative };

/// One signal component: which eigenvector column follows the log-linear
/// model, and the sparse nonzero coefficients (intercept drawn separately).
struct SignalComponent {
  std::string name;            // label used in reports ("C2", ...)
  int component = 0;           // 0-based column of the eigenvector matrix
  std::vector<int> indices;    // covariate indices, never 0
  std::vector<double> values;
};

struct ScenarioSpec {
  int n = 100;
  int t_obs = 100;
  int p = 5;
  int q = 200;
  ScenarioMode mode = ScenarioMode::alternative;
  std::optional<Matrix> eigvec_matrix;  // p x p orthonormal; default built
  std::vector<SignalComponent> signals;  // default C2/C3 when alternative
  double lognormal_sigma = 0.5;
  double intercept_lo = -10.0;
  double intercept_hi = 10.0;
  int replicate_count = 50;
  int b_splits = 100;
  std::uint64_t rng_seed = 1;
  std::vector<int> report_indices = {10, 25};
  double alpha = 0.05;
  double dfd_threshold = 2.0;
  int max_components = 4;
  int n1 = 0;                 // 0 -> floor(n/2)
  int null_report_coords = 10;

  void validate() const;
  /// The eigenvector matrix actually used (configured or default).
  Matrix resolved_eigvec() const;
  /// Table-2 style default signals for the alternative mode.
  static std::vector<SignalComponent> default_signals();
};

/// Per-replicate ground truth: the eigenvector matrix and one full-length
/// coefficient vector per signal component (intercept at position 0).
struct GroundTruth {
  Matrix eigvec;
  std::vector<Vector> beta_true;  // aligned with spec.signals
};

SubjectData generate_subject(const ScenarioSpec& spec, const GroundTruth& truth,
                             const Vector& x, std::mt19937_64& rng);

std::pair<Dataset, GroundTruth> generate_dataset(const ScenarioSpec& spec,
                                                 std::mt19937_64& rng);

struct SimTargetRow {
  std::string component;
  int index = 0;
  double truth = 0.0;
  double mean_estimate = 0.0;
  double empirical_se = 0.0;
  double coverage = 0.0;
  double mse = 0.0;
  int replicates_used = 0;
};

struct SimGammaRow {
  std::string component;
  double mean_abs_inner = 0.0;
  double se_abs_inner = 0.0;
  int replicates_used = 0;
};

struct SimReport {
  std::vector<SimTargetRow> rows;
  std::vector<SimGammaRow> gamma_rows;
  int replicate_count = 0;
  int failures = 0;
  int component_missing = 0;
  double runtime_seconds = 0.0;
  // property diagnostics collected over every fit in the run
  double max_trace_increase = 0.0;
  double min_dfd = 1.0;
  long truncated_variances = 0;
  // null-mode pooled coverage of zero over randomly chosen coordinates
  double null_coverage = -1.0;
  long null_ci_count = 0;
};

struct SimOptions {
  int threads = 1;
  std::optional<CvSpec> cv = CvSpec{};  // lambda selection per component
};

SimReport run_replicates(const ScenarioSpec& spec, const SplitPlan& plan_proto,
                         const PenaltySpec& penalty, const FitConfig& config,
                         const SimOptions& options = {});

struct SweepCell {
  int n = 0;
  int t_obs = 0;
  SimReport report;
};

/// One run_replicates per (n, T) grid point; a single-cell grid reproduces
/// run_replicates exactly.
std::vector<SweepCell> sweep(const ScenarioSpec& base,
                             const std::vector<int>& n_grid,
                             const std::vector<int>& t_grid,
                             const SplitPlan& plan_proto,
                             const PenaltySpec& penalty,
                             const FitConfig& config,
                             const SimOptions& options = {});

/// Bundled scenarios by name ("table1_q200_small", "table3_p20_small",
/// "fig1_grid_small", "null_case_small", "table1_q500_regression").
ScenarioSpec builtin_scenario(const std::string& name);
std::vector<std::string> builtin_scenario_names();

}  // namespace covreg
