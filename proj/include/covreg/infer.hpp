#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "covreg/estimate.hpp"
#include "covreg/types.hpp"

namespace covreg {

/// Split geometry: |C1| = n1 subjects for selection, |C2| = n2 for refits,
/// repeated b_splits times.
struct SplitPlan {
  int n1 = 0;
  int n2 = 0;
  int b_splits = 0;
  std::uint64_t rng_seed = 1;

  static SplitPlan halves(int n, int b_splits, std::uint64_t seed);
  void validate(int n) const;
};

/// One selection/refit round: selected support, per-coordinate refit
/// estimates, and the C2 membership indicators.
struct SplitResult {
  std::vector<int> support;      // includes the intercept index 0
  Vector beta_tilde;             // length q
  std::vector<char> membership;  // length n; 1 = subject was in C2
};

struct SmoothedInference {
  Vector beta_hat;
  Vector v_hat;  // after nonnegativity truncation
  Vector ci_lower;
  Vector ci_upper;
  Vector p_values;
  std::vector<char> truncated_variance;
  double alpha = 0.05;
};

struct MultiSplitOptions {
  int threads = 1;
  bool cv_per_split = false;  // re-select lambda on each C1 (slow)
  CvSpec cv;
  double beta_tol = 1e-8;
  double support_threshold = 1e-8;
};

/// Uniformly random partition of {0..n-1} into (C1, C2); deterministic in
/// (plan.rng_seed, b).
std::pair<std::vector<int>, std::vector<int>> split_sample(int n,
                                                           const SplitPlan& plan,
                                                           int b);

/// Lasso selection on a selection subset with gamma fixed: indices with
/// |beta_j| above threshold, intercept always included.
std::vector<int> select_support(const Dataset& subset, const Projection& gamma,
                                const PenaltySpec& penalty,
                                double beta_tol = 1e-8,
                                double threshold = 1e-8);

/// Unpenalized maximum-likelihood refit on the restricted design; returns
/// coefficients in the order of support_plus_j.
Vector low_dim_refit(const Dataset& subset, const Projection& gamma,
                     const std::vector<int>& support_plus_j,
                     double beta_tol = 1e-8);

/// B rounds of split / select / refit; returns all rounds plus the smoothed
/// estimate (the per-coordinate mean of the refit coefficients). A failed
/// round is retried once with a fresh sub-seed, then aborts.
std::pair<std::vector<SplitResult>, Vector> multi_split(
    const Dataset& dataset, const Projection& gamma, const PenaltySpec& penalty,
    const SplitPlan& plan, const MultiSplitOptions& options = {});

/// Infinitesimal-jackknife variance with finite-B bias correction. Negative
/// values truncate to zero with a per-coordinate flag. `unsquared_debug`,
/// when given, receives the alternative reading that sums the covariances
/// without squaring.
struct IjVariance {
  Vector v_hat;
  std::vector<char> truncated;
};
IjVariance ij_variance(const std::vector<SplitResult>& results,
                       const Vector& beta_hat, int n, const SplitPlan& plan,
                       Vector* unsquared_debug = nullptr);

SmoothedInference intervals_and_pvalues(const Vector& beta_hat,
                                        const Vector& v_hat, double alpha,
                                        std::vector<char> truncated = {});

}  // namespace covreg
