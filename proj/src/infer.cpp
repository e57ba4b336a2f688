#include "covreg/infer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "covreg/errors.hpp"
#include "covreg/normal.hpp"
#include "covreg/parallel.hpp"
#include "covreg/rng.hpp"

namespace covreg {

SplitPlan SplitPlan::halves(int n, int b_splits, std::uint64_t seed) {
  SplitPlan plan;
  plan.n1 = n / 2;
  plan.n2 = n - plan.n1;
  plan.b_splits = b_splits;
  plan.rng_seed = seed;
  return plan;
}

void SplitPlan::validate(int n) const {
  if (n1 < 1) throw ConfigError("split plan: n1 must be >= 1");
  if (n2 < 2) throw ConfigError("split plan: n2 must be >= 2");
  if (n1 + n2 != n) {
    throw ConfigError("split plan: n1 + n2 = " + std::to_string(n1 + n2) +
                      " does not equal n = " + std::to_string(n));
  }
  if (b_splits < 1) throw ConfigError("split plan: b_splits must be >= 1");
}

std::pair<std::vector<int>, std::vector<int>> split_sample(
    int n, const SplitPlan& plan, int b) {
  plan.validate(n);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto engine = make_engine(derive_seed(plan.rng_seed, 0x5B17, b));
  std::shuffle(order.begin(), order.end(), engine);
  std::vector<int> c1(order.begin(), order.begin() + plan.n1);
  std::vector<int> c2(order.begin() + plan.n1, order.end());
  std::sort(c1.begin(), c1.end());
  std::sort(c2.begin(), c2.end());
  return {std::move(c1), std::move(c2)};
}

namespace {

std::vector<int> select_support_glm(const GlmData& glm,
                                    const PenaltySpec& penalty, double beta_tol,
                                    double threshold) {
  const int q = static_cast<int>(glm.x.cols());
  Vector init = Vector::Zero(q);
  init[0] = std::log(std::max(glm.z.sum() / glm.t.sum(), 1e-300));
  Vector beta = beta_step(glm, penalty, Coefficients{init}, beta_tol).beta;
  std::vector<int> support{0};
  for (int j = 1; j < q; ++j) {
    if (std::abs(beta[j]) > threshold) support.push_back(j);
  }
  return support;
}

/// Newton refit (lambda = 0) on the listed columns; init in restricted
/// coordinates (empty -> intercept-only start).
Vector refit_columns(const GlmData& glm, const std::vector<int>& cols,
                     double beta_tol, const Vector& init) {
  GlmData restricted = glm_columns(glm, cols);
  PenaltySpec none;
  Vector start;
  if (init.size() == restricted.x.cols()) {
    start = init;
  } else {
    start = Vector::Zero(restricted.x.cols());
    auto it = std::find(cols.begin(), cols.end(), 0);
    if (it != cols.end()) {
      start[it - cols.begin()] =
          std::log(std::max(restricted.z.sum() / restricted.t.sum(), 1e-300));
    }
  }
  return beta_step(restricted, none, Coefficients{start}, beta_tol).beta;
}

void check_full_rank(const GlmData& glm, const std::vector<int>& cols) {
  Matrix xs(glm.x.rows(), cols.size());
  for (size_t k = 0; k < cols.size(); ++k) xs.col(k) = glm.x.col(cols[k]);
  Eigen::ColPivHouseholderQR<Matrix> qr(xs);
  qr.setThreshold(1e-10);
  if (qr.rank() < static_cast<Eigen::Index>(cols.size())) {
    const auto& perm = qr.colsPermutation().indices();
    std::string names;
    for (Eigen::Index k = qr.rank(); k < perm.size(); ++k) {
      if (!names.empty()) names += ", ";
      names += std::to_string(cols[perm[k]]);
    }
    throw SolverError("rank-deficient restricted design; collinear columns: " +
                      names);
  }
}

}  // namespace

std::vector<int> select_support(const Dataset& subset, const Projection& gamma,
                                const PenaltySpec& penalty, double beta_tol,
                                double threshold) {
  return select_support_glm(make_glm_data(subset, gamma), penalty, beta_tol,
                            threshold);
}

Vector low_dim_refit(const Dataset& subset, const Projection& gamma,
                     const std::vector<int>& support_plus_j, double beta_tol) {
  if (support_plus_j.empty()) {
    throw ConfigError("low_dim_refit: empty support");
  }
  if (static_cast<int>(support_plus_j.size()) >= subset.n()) {
    throw ConfigError("low_dim_refit: support size " +
                      std::to_string(support_plus_j.size()) +
                      " must be below the subset size " +
                      std::to_string(subset.n()));
  }
  GlmData glm = make_glm_data(subset, gamma);
  check_full_rank(glm, support_plus_j);
  return refit_columns(glm, support_plus_j, beta_tol, Vector());
}

namespace {

SplitResult run_split_round(const GlmData& glm, const PenaltySpec& penalty,
                            const SplitPlan& plan, int b, int attempt,
                            const MultiSplitOptions& options) {
  const int n = static_cast<int>(glm.x.rows());
  const int q = static_cast<int>(glm.x.cols());

  SplitPlan round_plan = plan;
  if (attempt > 0) {
    round_plan.rng_seed = derive_seed(plan.rng_seed, 0x8E7, attempt);
  }
  auto [c1, c2] = split_sample(n, round_plan, b);

  GlmData glm1 = glm_rows(glm, c1);
  PenaltySpec pen = penalty;
  if (options.cv_per_split) {
    pen.lambda = cv_lambda(glm1, penalty, options.cv.folds,
                           options.cv.grid_size, options.cv.min_ratio,
                           derive_seed(round_plan.rng_seed, 0xCF, b))
                     .lambda;
  }
  std::vector<int> support =
      select_support_glm(glm1, pen, options.beta_tol, options.support_threshold);
  if (static_cast<int>(support.size()) + 1 >= plan.n2) {
    throw SolverError("split round " + std::to_string(b) +
                      ": selected support of size " +
                      std::to_string(support.size()) +
                      " leaves no degrees of freedom in C2");
  }

  GlmData glm2 = glm_rows(glm, c2);
  check_full_rank(glm2, support);
  Vector beta_base = refit_columns(glm2, support, options.beta_tol, Vector());

  SplitResult result;
  result.support = support;
  result.beta_tilde = Vector::Zero(q);
  result.membership.assign(n, 0);
  for (int i : c2) result.membership[i] = 1;

  std::vector<char> in_support(q, 0);
  for (size_t k = 0; k < support.size(); ++k) {
    in_support[support[k]] = 1;
    result.beta_tilde[support[k]] = beta_base[k];
  }

  // One extra column per left-out coordinate, warm-started from the base
  // refit.
  std::vector<int> cols = support;
  cols.push_back(-1);
  Vector warm(support.size() + 1);
  warm.head(support.size()) = beta_base;
  for (int j = 0; j < q; ++j) {
    if (in_support[j]) continue;
    cols.back() = j;
    warm[support.size()] = 0.0;
    Vector coef = refit_columns(glm2, cols, options.beta_tol, warm);
    result.beta_tilde[j] = coef[support.size()];
  }
  return result;
}

}  // namespace

std::pair<std::vector<SplitResult>, Vector> multi_split(
    const Dataset& dataset, const Projection& gamma, const PenaltySpec& penalty,
    const SplitPlan& plan, const MultiSplitOptions& options) {
  plan.validate(dataset.n());
  penalty.validate(dataset.q);
  GlmData glm = make_glm_data(dataset, gamma);

  std::vector<SplitResult> results(plan.b_splits);
  parallel_for(plan.b_splits, options.threads, [&](int b) {
    try {
      results[b] = run_split_round(glm, penalty, plan, b, 0, options);
    } catch (const Error&) {
      try {
        results[b] = run_split_round(glm, penalty, plan, b, 1, options);
      } catch (const Error& retry_err) {
        throw SolverError("multi_split: round " + std::to_string(b) +
                          " failed after retry: " + retry_err.what());
      }
    }
  });

  Vector beta_hat = Vector::Zero(dataset.q);
  for (const auto& r : results) beta_hat += r.beta_tilde;
  beta_hat /= static_cast<double>(plan.b_splits);
  return {std::move(results), std::move(beta_hat)};
}

IjVariance ij_variance(const std::vector<SplitResult>& results,
                       const Vector& beta_hat, int n, const SplitPlan& plan,
                       Vector* unsquared_debug) {
  const int b_count = static_cast<int>(results.size());
  if (b_count < 2) {
    throw ConfigError("ij_variance requires at least 2 splits");
  }
  const int q = static_cast<int>(beta_hat.size());
  const double nn = n;
  const double n1 = plan.n1;
  const double n2 = nn - n1;

  // Centered membership (n x B) and centered estimates (B x q).
  Matrix nc(n, b_count);
  for (int b = 0; b < b_count; ++b) {
    for (int i = 0; i < n; ++i) nc(i, b) = results[b].membership[i];
  }
  nc.colwise() -= nc.rowwise().mean();
  Matrix bc(b_count, q);
  for (int b = 0; b < b_count; ++b) {
    bc.row(b) = (results[b].beta_tilde - beta_hat).transpose();
  }

  Matrix cov = (nc * bc) / b_count;  // n x q, entry (i,j) = Cov_ij
  const double scale1 = (nn - 1.0) / nn * (nn / n2) * (nn / n2);
  const double scale2 = nn / (static_cast<double>(b_count) * b_count) * (n1 / n2);

  IjVariance out;
  out.v_hat.resize(q);
  out.truncated.assign(q, 0);
  if (unsquared_debug) unsquared_debug->resize(q);

  for (int j = 0; j < q; ++j) {
    double term1 = scale1 * cov.col(j).squaredNorm();
    double term2 = scale2 * bc.col(j).squaredNorm();
    double v = term1 - term2;
    if (unsquared_debug) {
      (*unsquared_debug)[j] = scale1 * cov.col(j).sum() - term2;
    }
    if (v < 0.0) {
      out.truncated[j] = 1;
      v = 0.0;
    }
    out.v_hat[j] = v;
  }
  return out;
}

SmoothedInference intervals_and_pvalues(const Vector& beta_hat,
                                        const Vector& v_hat, double alpha,
                                        std::vector<char> truncated) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("alpha must lie in (0,1)");
  }
  const int q = static_cast<int>(beta_hat.size());
  if (v_hat.size() != q) {
    throw ConfigError("beta_hat and v_hat length mismatch");
  }
  if (v_hat.minCoeff() < 0.0) {
    throw ConfigError("v_hat must be nonnegative");
  }
  SmoothedInference out;
  out.alpha = alpha;
  out.beta_hat = beta_hat;
  out.v_hat = v_hat;
  out.truncated_variance =
      truncated.empty() ? std::vector<char>(q, 0) : std::move(truncated);
  out.ci_lower.resize(q);
  out.ci_upper.resize(q);
  out.p_values.resize(q);

  const double zq = normal_quantile(1.0 - alpha / 2.0);
  for (int j = 0; j < q; ++j) {
    double se = std::sqrt(v_hat[j]);
    out.ci_lower[j] = beta_hat[j] - zq * se;
    out.ci_upper[j] = beta_hat[j] + zq * se;
    if (v_hat[j] == 0.0) {
      out.p_values[j] = (beta_hat[j] == 0.0) ? 1.0 : 0.0;
    } else {
      out.p_values[j] =
          2.0 * (1.0 - normal_cdf(std::abs(beta_hat[j]) / se));
    }
  }
  return out;
}

}  // namespace covreg
