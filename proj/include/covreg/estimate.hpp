#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "covreg/types.hpp"

namespace covreg {

enum class PenaltyKind { lasso, generalized };

/// Penalty P(beta) = lambda * ||beta||_1 (lasso, intercept optionally
/// exempt) or lambda * ||D beta||_1 (generalized; D is r x q).
struct PenaltySpec {
  PenaltyKind kind = PenaltyKind::lasso;
  double lambda = 0.0;
  std::optional<Matrix> d;
  bool penalize_intercept = false;

  void validate(int q) const;
};

struct FitConfig {
  int restarts = 5;
  int max_outer_iters = 100;
  double beta_solver_tol = 1e-8;
  double outer_tol = 1e-6;
  std::uint64_t rng_seed = 1;
  int threads = 1;  // restarts may run concurrently

  void validate() const;
};

/// Result of one alternating fit: projection, coefficients, and the
/// objective recorded at every half-step (non-increasing).
struct ModelFit {
  Projection gamma;
  Coefficients beta;
  std::vector<double> objective_trace;
  bool converged = false;
  int restart_index = 0;
  double lambda = 0.0;
};

struct ComponentSet {
  std::vector<ModelFit> components;
  std::vector<double> dfd_values;  // average DfD after each candidate
};

/// The projected one-dimensional view of the data given a fixed gamma:
/// responses z_i = T_i * gamma^T S_i gamma with design X and weights T.
/// Everything the beta updates need, nothing else.
struct GlmData {
  Matrix x;  // n x q
  Vector z;  // n
  Vector t;  // n
};

GlmData make_glm_data(const Dataset& dataset, const Projection& gamma);
GlmData glm_rows(const GlmData& glm, const std::vector<int>& rows);
GlmData glm_columns(const GlmData& glm, const std::vector<int>& cols);

/// Smooth part 0.5 * sum_i { T_i x_i'b + z_i exp(-x_i'b) }. Throws
/// SolverError naming the subject on exponent overflow.
double glm_negloglik(const GlmData& glm, const Vector& beta);
Vector glm_gradient(const GlmData& glm, const Vector& beta);
double penalty_value(const Vector& beta, const PenaltySpec& penalty);

/// KKT residual of the composite objective at beta (sup-norm subgradient
/// distance); with lambda = 0 this is the gradient sup-norm.
double kkt_residual(const GlmData& glm, const Vector& beta,
                    const PenaltySpec& penalty);

/// Regularized negative likelihood of Eq-style objective at (beta, gamma).
double objective(const Dataset& dataset, const Coefficients& beta,
                 const Projection& gamma, const PenaltySpec& penalty);

/// Minimizes the composite objective in beta for fixed gamma. IRLS with
/// cyclic coordinate descent and soft-thresholding for the lasso penalty;
/// proximal gradient for the generalized penalty. Converges when the KKT
/// residual falls below tol; otherwise throws SolverError carrying the
/// last iterate.
Coefficients beta_step(const GlmData& glm, const PenaltySpec& penalty,
                       const Coefficients& init, double tol);
Coefficients beta_step(const Dataset& dataset, const Projection& gamma,
                       const PenaltySpec& penalty, const Coefficients& init,
                       double tol);

/// argmin gamma' A gamma subject to gamma' H gamma = 1 with
/// A = 0.5 * sum_i T_i exp(-x_i'beta) S_i: the generalized eigenvector of
/// (A, H) with smallest eigenvalue, sign-canonical. A nonempty deflation
/// list restricts the search to the H-orthogonal complement of the listed
/// projections.
Projection gamma_step(const Dataset& dataset, const Coefficients& beta,
                      const PooledMatrix& h,
                      const std::vector<Projection>& deflation = {});

/// Smallest-eigenvalue solution of the pencil (a, h) under the unit
/// h-quadratic constraint, optionally restricted away from `deflation`.
/// Exposed separately so oracles can drive it with raw matrices.
Projection constrained_quadratic_min(const Matrix& a, const Matrix& h,
                                     const std::vector<Projection>& deflation);

/// Algorithm: alternate beta_step / gamma_step from each random start
/// until the objective stalls; keep the restart with the lowest objective
/// (ties break to the lowest restart index).
ModelFit fit(const Dataset& dataset, const PenaltySpec& penalty,
             const FitConfig& config,
             const std::vector<Projection>& deflation = {});

/// Deviation from diagonality of the projected matrices; >= 1, equal to 1
/// when the components jointly diagonalize every S_i.
double dfd(const Dataset& dataset, const std::vector<Projection>& components);

/// K-fold cross-validation of lambda by held-out deviance over a
/// log-spaced grid, gamma held fixed. min_ratio <= 0 picks 1e-2 when q > n
/// and 1e-3 otherwise.
struct CvChoice {
  double lambda = 0.0;
  std::vector<double> grid;
  std::vector<double> mean_deviance;
};
CvChoice cv_lambda(const GlmData& glm, const PenaltySpec& base, int folds,
                   int grid_size, double min_ratio, std::uint64_t seed);

/// Optional lambda selection inside select_components. The penalty scale is
/// set by (T_i, x) rather than the projected responses, so by default the
/// lambda tuned for the first component is reused for the later ones.
struct CvSpec {
  int folds = 5;
  int grid_size = 20;
  double min_ratio = 0.0;  // auto
  bool per_component = false;
};

/// Fits components sequentially under H-orthogonal deflation; stops before
/// the first candidate whose average DfD exceeds dfd_threshold. When `cv`
/// is set, lambda is re-selected per component against the initial
/// projection of restart 0.
ComponentSet select_components(const Dataset& dataset,
                               const PenaltySpec& penalty,
                               const FitConfig& config, double dfd_threshold,
                               int k_max = 0,
                               const std::optional<CvSpec>& cv = std::nullopt);

}  // namespace covreg
