#include "covreg/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "covreg/errors.hpp"
#include "covreg/parallel.hpp"
#include "covreg/rng.hpp"

namespace covreg {

namespace {

constexpr double kExpClamp = 700.0;
constexpr double kInf = std::numeric_limits<double>::infinity();

double soft_threshold(double a, double lambda) {
  if (a > lambda) return a - lambda;
  if (a < -lambda) return a + lambda;
  return 0.0;
}

/// Smooth negative log-likelihood at linear predictor eta, or +inf when the
/// exponent leaves the representable range (used inside line searches).
double negloglik_or_inf(const GlmData& glm, const Vector& eta) {
  double value = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (-eta[i] > kExpClamp || !std::isfinite(eta[i])) return kInf;
    value += 0.5 * (glm.t[i] * eta[i] + glm.z[i] * std::exp(-eta[i]));
  }
  return value;
}

bool is_penalized(const PenaltySpec& penalty, int j) {
  return penalty.lambda > 0.0 && (j != 0 || penalty.penalize_intercept);
}

}  // namespace

void PenaltySpec::validate(int q) const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("penalty lambda must be finite and >= 0");
  }
  if (kind == PenaltyKind::generalized) {
    if (!d.has_value()) {
      throw ConfigError("generalized penalty requires a D matrix");
    }
    if (d->cols() != q) {
      throw ConfigError("penalty matrix D must have q=" + std::to_string(q) +
                        " columns, got " + std::to_string(d->cols()));
    }
  }
}

void FitConfig::validate() const {
  if (restarts < 1) throw ConfigError("restarts must be >= 1");
  if (max_outer_iters < 1) throw ConfigError("max_outer_iters must be >= 1");
  if (!(beta_solver_tol > 0.0)) throw ConfigError("beta_solver_tol must be > 0");
  if (!(outer_tol > 0.0)) throw ConfigError("outer_tol must be > 0");
}

GlmData make_glm_data(const Dataset& dataset, const Projection& gamma) {
  if (gamma.gamma.size() != dataset.p) {
    throw ConfigError("projection length " + std::to_string(gamma.gamma.size()) +
                      " does not match p=" + std::to_string(dataset.p));
  }
  const int n = dataset.n();
  GlmData glm;
  glm.x.resize(n, dataset.q);
  glm.z.resize(n);
  glm.t.resize(n);
  for (int i = 0; i < n; ++i) {
    const auto& s = dataset.subjects[i];
    glm.x.row(i) = s.x.transpose();
    glm.z[i] = project_response(s, gamma);
    glm.t[i] = s.t_count();
  }
  return glm;
}

GlmData glm_rows(const GlmData& glm, const std::vector<int>& rows) {
  GlmData out;
  out.x.resize(rows.size(), glm.x.cols());
  out.z.resize(rows.size());
  out.t.resize(rows.size());
  for (size_t k = 0; k < rows.size(); ++k) {
    out.x.row(k) = glm.x.row(rows[k]);
    out.z[k] = glm.z[rows[k]];
    out.t[k] = glm.t[rows[k]];
  }
  return out;
}

GlmData glm_columns(const GlmData& glm, const std::vector<int>& cols) {
  GlmData out;
  out.x.resize(glm.x.rows(), cols.size());
  for (size_t k = 0; k < cols.size(); ++k) out.x.col(k) = glm.x.col(cols[k]);
  out.z = glm.z;
  out.t = glm.t;
  return out;
}

double glm_negloglik(const GlmData& glm, const Vector& beta) {
  Vector eta = glm.x * beta;
  double value = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (-eta[i] > kExpClamp || !std::isfinite(eta[i])) {
      throw SolverError("objective overflow: exp(-x^T beta) out of range, subject " +
                        std::to_string(i));
    }
    value += 0.5 * (glm.t[i] * eta[i] + glm.z[i] * std::exp(-eta[i]));
  }
  return value;
}

Vector glm_gradient(const GlmData& glm, const Vector& beta) {
  Vector eta = glm.x * beta;
  Vector r(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (-eta[i] > kExpClamp || !std::isfinite(eta[i])) {
      throw SolverError("gradient overflow: exp(-x^T beta) out of range, subject " +
                        std::to_string(i));
    }
    r[i] = 0.5 * (glm.t[i] - glm.z[i] * std::exp(-eta[i]));
  }
  return glm.x.transpose() * r;
}

double penalty_value(const Vector& beta, const PenaltySpec& penalty) {
  if (penalty.lambda == 0.0) return 0.0;
  if (penalty.kind == PenaltyKind::lasso) {
    double sum = 0.0;
    for (Eigen::Index j = penalty.penalize_intercept ? 0 : 1; j < beta.size();
         ++j) {
      sum += std::abs(beta[j]);
    }
    return penalty.lambda * sum;
  }
  return penalty.lambda * (*penalty.d * beta).lpNorm<1>();
}

double kkt_residual(const GlmData& glm, const Vector& beta,
                    const PenaltySpec& penalty) {
  Vector grad = glm_gradient(glm, beta);
  if (penalty.lambda == 0.0) return grad.lpNorm<Eigen::Infinity>();
  if (penalty.kind == PenaltyKind::lasso) {
    double res = 0.0;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
      double rj;
      if (!is_penalized(penalty, static_cast<int>(j))) {
        rj = std::abs(grad[j]);
      } else if (beta[j] != 0.0) {
        rj = std::abs(grad[j] + penalty.lambda * (beta[j] > 0 ? 1.0 : -1.0));
      } else {
        rj = std::max(0.0, std::abs(grad[j]) - penalty.lambda);
      }
      res = std::max(res, rj);
    }
    return res;
  }
  // Generalized penalty: best subgradient via per-row duals u_k in [-1,1],
  // u_k pinned to sign((D beta)_k) on the active rows, chosen by least
  // squares on the inactive rows.
  const Matrix& d = *penalty.d;
  Vector db = d * beta;
  Vector fixed = grad;
  std::vector<int> free_rows;
  for (Eigen::Index k = 0; k < d.rows(); ++k) {
    if (std::abs(db[k]) > 1e-10) {
      fixed += penalty.lambda * (db[k] > 0 ? 1.0 : -1.0) * d.row(k).transpose();
    } else {
      free_rows.push_back(static_cast<int>(k));
    }
  }
  if (free_rows.empty()) return fixed.lpNorm<Eigen::Infinity>();
  Matrix dfree(free_rows.size(), d.cols());
  for (size_t k = 0; k < free_rows.size(); ++k) dfree.row(k) = d.row(free_rows[k]);
  // minimize ||fixed + lambda * Dfree^T u||_2 over the box |u| <= 1 by
  // projected coordinate descent (small r in practice).
  Vector u = Vector::Zero(free_rows.size());
  Vector resid = fixed;
  Vector rownorm2 = dfree.rowwise().squaredNorm();
  for (int sweep = 0; sweep < 200; ++sweep) {
    double moved = 0.0;
    for (Eigen::Index k = 0; k < u.size(); ++k) {
      if (rownorm2[k] <= 0.0) continue;
      double step = dfree.row(k).dot(resid) / (penalty.lambda * rownorm2[k]);
      double unew = std::clamp(u[k] - step, -1.0, 1.0);
      double delta = unew - u[k];
      if (delta != 0.0) {
        resid += penalty.lambda * delta * dfree.row(k).transpose();
        u[k] = unew;
        moved = std::max(moved, std::abs(delta));
      }
    }
    if (moved < 1e-14) break;
  }
  return resid.lpNorm<Eigen::Infinity>();
}

double objective(const Dataset& dataset, const Coefficients& beta,
                 const Projection& gamma, const PenaltySpec& penalty) {
  penalty.validate(dataset.q);
  GlmData glm = make_glm_data(dataset, gamma);
  return glm_negloglik(glm, beta.beta) + penalty_value(beta.beta, penalty);
}

// --- beta step: IRLS + coordinate descent (lasso) ---------------------------

namespace {

Coefficients beta_step_lasso(const GlmData& glm, const PenaltySpec& penalty,
                             const Coefficients& init, double tol,
                             int max_irls) {
  const int n = static_cast<int>(glm.x.rows());
  const int q = static_cast<int>(glm.x.cols());
  if (init.beta.size() != q) {
    throw ConfigError("beta_step: init has length " +
                      std::to_string(init.beta.size()) + ", expected q=" +
                      std::to_string(q));
  }
  if (glm.z.maxCoeff() <= 0.0) {
    throw SolverError("beta_step: all projected responses are zero");
  }

  const double lambda = penalty.lambda;
  Vector beta = init.beta;
  Vector eta = glm.x * beta;
  double f_smooth = negloglik_or_inf(glm, eta);
  if (!std::isfinite(f_smooth)) {
    // fall back to the always-feasible intercept-only start
    beta.setZero();
    beta[0] = std::log(std::max(glm.z.sum() / glm.t.sum(), 1e-300));
    eta = glm.x * beta;
    f_smooth = negloglik_or_inf(glm, eta);
  }
  double f_total = f_smooth + penalty_value(beta, penalty);
  double kkt = kInf;
  Vector grad(q), w(n), hdiag(q), rho(n), b(q);

  int stalls = 0;
  for (int irls = 0; irls < max_irls; ++irls) {
    Vector expz(n);
    for (int i = 0; i < n; ++i) expz[i] = glm.z[i] * std::exp(-eta[i]);
    grad = 0.5 * (glm.x.transpose() * (glm.t - expz));

    kkt = 0.0;
    for (int j = 0; j < q; ++j) {
      double rj;
      if (!is_penalized(penalty, j)) {
        rj = std::abs(grad[j]);
      } else if (beta[j] != 0.0) {
        rj = std::abs(grad[j] + lambda * (beta[j] > 0 ? 1.0 : -1.0));
      } else {
        rj = std::max(0.0, std::abs(grad[j]) - lambda);
      }
      kkt = std::max(kkt, rj);
    }
    if (kkt <= tol) return Coefficients{beta};

    w = 0.5 * expz;
    for (int j = 0; j < q; ++j) hdiag[j] = glm.x.col(j).cwiseAbs2().dot(w);

    // Coordinate descent on the local quadratic model. Solved only as
    // tightly as the current KKT residual warrants; the outer IRLS loop
    // supplies the final accuracy.
    b = beta;
    rho.setZero();              // rho_i = x_i . (b - beta)
    Vector wr = Vector::Zero(n);  // w .* rho, maintained incrementally
    const double cd_tol = std::max(0.05 * tol, 1e-3 * kkt);
    const int max_sweeps = max_irls >= 500 ? 1000 : 100;
    std::vector<char> active(q, 1);
    bool want_full = true;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
      const bool full_pass = want_full;
      double max_move = 0.0;
      for (int j = 0; j < q; ++j) {
        if (!full_pass && !active[j]) continue;
        if (hdiag[j] <= 1e-300) continue;
        double gj = grad[j] + glm.x.col(j).dot(wr);
        double target;
        if (is_penalized(penalty, j)) {
          target = soft_threshold(hdiag[j] * b[j] - gj, lambda) / hdiag[j];
        } else {
          target = b[j] - gj / hdiag[j];
        }
        double delta = target - b[j];
        if (delta != 0.0) {
          rho += delta * glm.x.col(j);
          wr += delta * w.cwiseProduct(glm.x.col(j));
          b[j] = target;
          max_move = std::max(max_move, std::abs(delta) * hdiag[j]);
          active[j] = 1;
        } else if (full_pass) {
          active[j] = (b[j] != 0.0);
        }
      }
      if (full_pass) {
        if (max_move <= cd_tol) break;
        want_full = false;
      } else if (max_move <= cd_tol) {
        want_full = true;  // confirm on a full pass before stopping
      }
    }

    Vector direction = b - beta;
    if (direction.lpNorm<Eigen::Infinity>() == 0.0) {
      if (++stalls >= 2) break;  // model has no descent left; kkt re-checked
      continue;
    }
    stalls = 0;

    // Backtrack on the true composite objective.
    double step = 1.0;
    bool accepted = false;
    while (step >= 1e-12) {
      Vector beta_try = beta + step * direction;
      Vector eta_try = eta + step * rho;
      double f_try = negloglik_or_inf(glm, eta_try) +
                     penalty_value(beta_try, penalty);
      if (f_try <= f_total + 1e-12 * (1.0 + std::abs(f_total))) {
        beta = std::move(beta_try);
        eta = std::move(eta_try);
        f_total = f_try;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    if (irls % 16 == 15) eta = glm.x * beta;  // clear drift in eta updates
  }

  // Final exact check before giving up.
  kkt = kkt_residual(glm, beta, penalty);
  if (kkt <= tol) return Coefficients{beta};
  throw SolverError(
      "beta_step: no convergence (KKT residual " + std::to_string(kkt) +
          " > tol " + std::to_string(tol) + ")",
      std::vector<double>(beta.data(), beta.data() + beta.size()), kkt);
}

// --- beta step: proximal gradient (generalized lasso) -----------------------

/// prox of tau*||D .||_1 at v, via its box-constrained dual. `u` (scaled to
/// [-tau, tau]) is warm-started across calls.
Vector prox_generalized(const Vector& v, const Matrix& d, double tau,
                        Vector& u) {
  const Eigen::Index r = d.rows();
  if (u.size() != r) u = Vector::Zero(r);
  u = u.cwiseMax(-tau).cwiseMin(tau);
  Vector resid = v - d.transpose() * u;
  Vector rownorm2 = d.rowwise().squaredNorm();
  for (int sweep = 0; sweep < 500; ++sweep) {
    double moved = 0.0;
    for (Eigen::Index k = 0; k < r; ++k) {
      if (rownorm2[k] <= 0.0) continue;
      double unew =
          std::clamp(u[k] + d.row(k).dot(resid) / rownorm2[k], -tau, tau);
      double delta = unew - u[k];
      if (delta != 0.0) {
        resid -= delta * d.row(k).transpose();
        u[k] = unew;
        moved = std::max(moved, std::abs(delta));
      }
    }
    if (moved <= 1e-12 * (tau + 1e-300)) break;
  }
  return resid;  // v - D^T u*
}

Coefficients beta_step_generalized(const GlmData& glm,
                                   const PenaltySpec& penalty,
                                   const Coefficients& init, double tol,
                                   int max_iters) {
  const int q = static_cast<int>(glm.x.cols());
  if (init.beta.size() != q) {
    throw ConfigError("beta_step: init has length " +
                      std::to_string(init.beta.size()) + ", expected q=" +
                      std::to_string(q));
  }
  if (glm.z.maxCoeff() <= 0.0) {
    throw SolverError("beta_step: all projected responses are zero");
  }
  const Matrix& d = *penalty.d;
  const double lambda = penalty.lambda;

  Vector beta = init.beta;
  Vector eta = glm.x * beta;
  if (!std::isfinite(negloglik_or_inf(glm, eta))) {
    beta.setZero();
    beta[0] = std::log(std::max(glm.z.sum() / glm.t.sum(), 1e-300));
    eta = glm.x * beta;
  }
  double f = negloglik_or_inf(glm, eta);

  // Lipschitz estimate: trace of the Hessian at the start, adapted upward
  // by the backtracking condition.
  double lip = 0.0;
  for (Eigen::Index i = 0; i < glm.x.rows(); ++i) {
    lip += 0.5 * glm.z[i] * std::exp(-eta[i]) * glm.x.row(i).squaredNorm();
  }
  lip = std::max(lip, 1e-8);

  Vector u;  // dual warm start
  for (int iter = 0; iter < max_iters; ++iter) {
    Vector grad = glm_gradient(glm, beta);
    Vector beta_next;
    double f_next = kInf;
    for (int bt = 0; bt < 60; ++bt) {
      Vector v = beta - grad / lip;
      beta_next = prox_generalized(v, d, lambda / lip, u);
      Vector diff = beta_next - beta;
      f_next = negloglik_or_inf(glm, glm.x * beta_next);
      double model = f + grad.dot(diff) + 0.5 * lip * diff.squaredNorm();
      if (f_next <= model + 1e-12 * (1.0 + std::abs(f))) break;
      lip *= 2.0;
    }
    double res = kkt_residual(glm, beta_next, penalty);
    beta = beta_next;
    eta = glm.x * beta;
    f = f_next;
    if (res <= tol) return Coefficients{beta};
    lip *= 0.97;
  }
  double res = kkt_residual(glm, beta, penalty);
  if (res <= tol) return Coefficients{beta};
  throw SolverError(
      "beta_step (generalized): no convergence (KKT residual " +
          std::to_string(res) + " > tol " + std::to_string(tol) + ")",
      std::vector<double>(beta.data(), beta.data() + beta.size()), res);
}

/// Iteration-capped variant used where a non-convergent solve should fail
/// fast (cross-validation over aggressive lambda grids).
Coefficients beta_step_capped(const GlmData& glm, const PenaltySpec& penalty,
                              const Coefficients& init, double tol,
                              int budget) {
  if (penalty.kind == PenaltyKind::generalized && penalty.lambda > 0.0) {
    return beta_step_generalized(glm, penalty, init, tol, budget * 4);
  }
  return beta_step_lasso(glm, penalty, init, tol, budget);
}

}  // namespace

Coefficients beta_step(const GlmData& glm, const PenaltySpec& penalty,
                       const Coefficients& init, double tol) {
  if (!(tol > 0.0)) throw ConfigError("beta_step: tol must be > 0");
  penalty.validate(static_cast<int>(glm.x.cols()));
  if (penalty.kind == PenaltyKind::generalized && penalty.lambda > 0.0) {
    return beta_step_generalized(glm, penalty, init, tol, 2000);
  }
  return beta_step_lasso(glm, penalty, init, tol, 500);
}

Coefficients beta_step(const Dataset& dataset, const Projection& gamma,
                       const PenaltySpec& penalty, const Coefficients& init,
                       double tol) {
  return beta_step(make_glm_data(dataset, gamma), penalty, init, tol);
}

// --- gamma step --------------------------------------------------------------

namespace {

struct PencilBasis {
  Matrix map;  // p x pr; columns H-orthonormal, spanning the search space
};

/// Factor H and build the (possibly deflated) search-space map. gamma = map
/// * nu has gamma^T H gamma = |nu|^2 and gamma^T H g_prior = 0.
PencilBasis make_pencil_basis(const Matrix& h,
                              const std::vector<Projection>& deflation) {
  const int p = static_cast<int>(h.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  if (es.info() != Eigen::Success) {
    throw SolverError("gamma_step: eigendecomposition of H failed");
  }
  Vector d = es.eigenvalues();
  double dmax = d.maxCoeff();
  if (!(dmax > 0.0) || !d.allFinite()) {
    throw SolverError("gamma_step: pooled matrix H is not positive definite");
  }
  if (d.minCoeff() < 1e-8 * dmax) {
    throw SolverError(
        "gamma_step: pooled matrix H is numerically singular; "
        "is p < min_i T_i violated?");
  }
  const double ridge = 1e-10 * h.trace() / p;
  Vector deff = d.cwiseMax(ridge);
  Matrix hinvhalf = es.eigenvectors() *
                    deff.cwiseSqrt().cwiseInverse().asDiagonal() *
                    es.eigenvectors().transpose();
  if (deflation.empty()) return PencilBasis{std::move(hinvhalf)};

  const int m = static_cast<int>(deflation.size());
  if (m >= p) {
    throw ConfigError("deflation leaves no search directions (k >= p)");
  }
  Matrix hhalf = es.eigenvectors() * deff.cwiseSqrt().asDiagonal() *
                 es.eigenvectors().transpose();
  Matrix u(p, m);
  for (int k = 0; k < m; ++k) {
    if (deflation[k].gamma.size() != p) {
      throw ConfigError("deflation projection has wrong length");
    }
    u.col(k) = hhalf * deflation[k].gamma;
  }
  Eigen::HouseholderQR<Matrix> qr(u);
  Matrix qfull = qr.householderQ() * Matrix::Identity(p, p);
  Matrix basis = qfull.rightCols(p - m);  // null space of u^T
  return PencilBasis{hinvhalf * basis};
}

Projection solve_reduced_pencil(const Matrix& a, const Matrix& h,
                                const PencilBasis& basis) {
  Matrix b = basis.map.transpose() * a * basis.map;
  b = ((b + b.transpose()) * 0.5).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> es(b);
  if (es.info() != Eigen::Success) {
    throw SolverError("gamma_step: reduced eigenproblem failed");
  }
  Vector g = basis.map * es.eigenvectors().col(0);
  double qf = g.dot(h * g);
  if (!(qf > 0.0)) {
    throw SolverError("gamma_step: degenerate solution (zero H-norm)");
  }
  g /= std::sqrt(qf);
  return Projection::canonical(std::move(g));
}

Matrix build_quadratic_form(const std::vector<Matrix>& s_list, const Vector& t,
                            const Matrix& x, const Vector& beta) {
  const int p = static_cast<int>(s_list.front().rows());
  Matrix a = Matrix::Zero(p, p);
  for (size_t i = 0; i < s_list.size(); ++i) {
    double eta = x.row(i).dot(beta);
    if (-eta > kExpClamp || !std::isfinite(eta)) {
      throw SolverError(
          "gamma_step overflow: exp(-x^T beta) out of range, subject " +
          std::to_string(i));
    }
    a.noalias() += (0.5 * t[i] * std::exp(-eta)) * s_list[i];
  }
  return a;
}

}  // namespace

Projection constrained_quadratic_min(const Matrix& a, const Matrix& h,
                                     const std::vector<Projection>& deflation) {
  if (a.rows() != h.rows() || a.rows() != a.cols() || h.rows() != h.cols()) {
    throw ConfigError("constrained_quadratic_min: dimension mismatch");
  }
  PencilBasis basis = make_pencil_basis(h, deflation);
  return solve_reduced_pencil(a, h, basis);
}

Projection gamma_step(const Dataset& dataset, const Coefficients& beta,
                      const PooledMatrix& h,
                      const std::vector<Projection>& deflation) {
  std::vector<Matrix> s_list;
  Vector t(dataset.n());
  Matrix x(dataset.n(), dataset.q);
  s_list.reserve(dataset.n());
  for (int i = 0; i < dataset.n(); ++i) {
    s_list.push_back(sample_covariance(dataset.subjects[i]).s);
    t[i] = dataset.subjects[i].t_count();
    x.row(i) = dataset.subjects[i].x.transpose();
  }
  Matrix a = build_quadratic_form(s_list, t, x, beta.beta);
  return constrained_quadratic_min(a, h.h, deflation);
}

// --- full alternating fit ----------------------------------------------------

ModelFit fit(const Dataset& dataset, const PenaltySpec& penalty,
             const FitConfig& config, const std::vector<Projection>& deflation) {
  config.validate();
  penalty.validate(dataset.q);
  const int n = dataset.n();
  const int p = dataset.p;

  std::vector<Matrix> s_list;
  s_list.reserve(n);
  Vector t(n);
  Matrix x(n, dataset.q);
  for (int i = 0; i < n; ++i) {
    s_list.push_back(sample_covariance(dataset.subjects[i]).s);
    t[i] = dataset.subjects[i].t_count();
    x.row(i) = dataset.subjects[i].x.transpose();
  }
  Matrix h = Matrix::Zero(p, p);
  for (int i = 0; i < n; ++i) h += t[i] * s_list[i];
  h /= t.sum();
  h = ((h + h.transpose()) * 0.5).eval();

  PencilBasis basis = make_pencil_basis(h, deflation);
  const int pr = static_cast<int>(basis.map.cols());

  auto response = [&](const Projection& g) {
    Vector z(n);
    for (int i = 0; i < n; ++i) {
      z[i] = t[i] * g.gamma.dot(s_list[i] * g.gamma);
    }
    return z;
  };

  struct Candidate {
    ModelFit result;
    bool failed = true;
    std::string message;
  };
  std::vector<Candidate> candidates(config.restarts);

  parallel_for(config.restarts, config.threads, [&](int r) {
    Candidate& cand = candidates[r];
    try {
      auto engine = make_engine(derive_seed(config.rng_seed, r));
      std::normal_distribution<double> normal(0.0, 1.0);
      Vector v(pr);
      for (int k = 0; k < pr; ++k) v[k] = normal(engine);
      double norm = v.norm();
      if (norm <= 0.0) v[0] = 1.0, norm = 1.0;
      Projection gamma{basis.map * (v / norm)};  // gamma^T H gamma = 1

      GlmData glm{x, response(gamma), t};
      if (glm.z.sum() <= 0.0) {
        throw SolverError("initial projection has zero pooled variance");
      }
      Vector beta = Vector::Zero(dataset.q);
      beta[0] = std::log(glm.z.sum() / glm.t.sum());

      std::vector<double> trace;
      trace.push_back(glm_negloglik(glm, beta) + penalty_value(beta, penalty));
      bool converged = false;

      for (int outer = 0; outer < config.max_outer_iters; ++outer) {
        beta = beta_step(glm, penalty, Coefficients{beta},
                         config.beta_solver_tol)
                   .beta;
        trace.push_back(glm_negloglik(glm, beta) +
                        penalty_value(beta, penalty));

        Matrix a = build_quadratic_form(s_list, t, x, beta);
        gamma = solve_reduced_pencil(a, h, basis);
        glm.z = response(gamma);
        trace.push_back(glm_negloglik(glm, beta) +
                        penalty_value(beta, penalty));

        const double prev = trace[trace.size() - 3];
        const double curr = trace.back();
        if (std::abs(prev - curr) <= config.outer_tol * (1.0 + std::abs(curr))) {
          converged = true;
          break;
        }
      }
      cand.result = ModelFit{gamma, Coefficients{beta}, std::move(trace),
                             converged, r, penalty.lambda};
      cand.failed = false;
    } catch (const Error& e) {
      cand.message = e.what();
    }
  });

  int best = -1;
  for (int r = 0; r < config.restarts; ++r) {
    if (candidates[r].failed) continue;
    if (best < 0 || candidates[r].result.objective_trace.back() <
                        candidates[best].result.objective_trace.back()) {
      best = r;
    }
  }
  if (best < 0) {
    std::string msg = "fit: all restarts diverged:";
    for (int r = 0; r < config.restarts; ++r) {
      msg += "\n  restart " + std::to_string(r) + ": " + candidates[r].message;
    }
    throw SolverError(msg);
  }
  return candidates[best].result;
}

// --- deviation from diagonality ----------------------------------------------

double dfd(const Dataset& dataset, const std::vector<Projection>& components) {
  if (components.empty()) {
    throw ConfigError("dfd: component list must be nonempty");
  }
  const int k = static_cast<int>(components.size());
  Matrix g(dataset.p, k);
  for (int j = 0; j < k; ++j) {
    if (components[j].gamma.size() != dataset.p) {
      throw ConfigError("dfd: projection length mismatch");
    }
    g.col(j) = components[j].gamma;
  }
  double total_t = 0.0;
  for (const auto& s : dataset.subjects) total_t += s.t_count();

  double log_dfd = 0.0;
  for (int i = 0; i < dataset.n(); ++i) {
    Matrix m = g.transpose() * sample_covariance(dataset.subjects[i]).s * g;
    m = ((m + m.transpose()) * 0.5).eval();
    double det = m.determinant();
    if (!(det > 1e-300)) {
      throw SolverError("dfd: singular projected covariance (det <= 1e-300), "
                        "subject " +
                        std::to_string(i));
    }
    double log_diag = 0.0;
    for (int j = 0; j < k; ++j) {
      if (!(m(j, j) > 0.0)) {
        throw SolverError("dfd: nonpositive projected variance, subject " +
                          std::to_string(i));
      }
      log_diag += std::log(m(j, j));
    }
    log_dfd += (dataset.subjects[i].t_count() / total_t) *
               (log_diag - std::log(det));
  }
  return std::exp(log_dfd);
}

// --- lambda selection by cross-validation ------------------------------------

CvChoice cv_lambda(const GlmData& glm, const PenaltySpec& base, int folds,
                   int grid_size, double min_ratio, std::uint64_t seed) {
  const int n = static_cast<int>(glm.x.rows());
  const int q = static_cast<int>(glm.x.cols());
  if (folds < 2 || folds > n) {
    throw ConfigError("cv_lambda: folds must be in [2, n]");
  }
  if (grid_size < 1) throw ConfigError("cv_lambda: grid_size must be >= 1");
  if (min_ratio <= 0.0) min_ratio = (q > n) ? 1e-2 : 1e-3;
  if (!(min_ratio < 1.0)) {
    throw ConfigError("cv_lambda: min_ratio must lie in (0,1)");
  }

  // lambda_max from the gradient at the intercept-only optimum.
  Vector beta0 = Vector::Zero(q);
  beta0[0] = std::log(std::max(glm.z.sum() / glm.t.sum(), 1e-300));
  Vector grad = glm_gradient(glm, beta0);
  double lambda_max = 0.0;
  for (int j = base.penalize_intercept ? 0 : 1; j < q; ++j) {
    lambda_max = std::max(lambda_max, std::abs(grad[j]));
  }
  CvChoice choice;
  if (lambda_max <= 0.0) {
    choice.lambda = 0.0;
    return choice;
  }
  lambda_max *= 1.02;  // headroom so the largest grid point selects nothing

  choice.grid.resize(grid_size);
  for (int g = 0; g < grid_size; ++g) {
    double frac = grid_size == 1 ? 0.0
                                 : static_cast<double>(g) / (grid_size - 1);
    choice.grid[g] = lambda_max * std::pow(min_ratio, frac);
  }
  choice.mean_deviance.assign(grid_size, 0.0);

  // Deterministic subject shuffle into folds.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto engine = make_engine(derive_seed(seed, 0xCF01));
  std::shuffle(order.begin(), order.end(), engine);

  for (int f = 0; f < folds; ++f) {
    std::vector<int> train, test;
    for (int i = 0; i < n; ++i) {
      ((i % folds == f) ? test : train).push_back(order[i]);
    }
    GlmData glm_train = glm_rows(glm, train);
    GlmData glm_test = glm_rows(glm, test);

    Vector beta = Vector::Zero(q);
    beta[0] = std::log(std::max(glm_train.z.sum() / glm_train.t.sum(), 1e-300));
    for (int g = 0; g < grid_size; ++g) {
      PenaltySpec pen = base;
      pen.lambda = choice.grid[g];
      try {
        beta = beta_step_capped(glm_train, pen, Coefficients{beta}, 1e-6, 60)
                   .beta;
        Vector eta = glm_test.x * beta;
        choice.mean_deviance[g] += negloglik_or_inf(glm_test, eta) / folds;
      } catch (const SolverError&) {
        // this lambda (and everything smaller) is ill-behaved on this fold
        for (int g2 = g; g2 < grid_size; ++g2) {
          choice.mean_deviance[g2] = kInf;
        }
        break;
      }
      // Stop the path once the model saturates the training fold.
      int nnz = 0;
      for (int j = 1; j < q; ++j) nnz += (beta[j] != 0.0);
      if (nnz > 0.9 * static_cast<double>(train.size())) {
        for (int g2 = g + 1; g2 < grid_size; ++g2) {
          choice.mean_deviance[g2] = kInf;
        }
        break;
      }
    }
  }

  int best = 0;
  for (int g = 1; g < grid_size; ++g) {
    if (choice.mean_deviance[g] < choice.mean_deviance[best]) best = g;
  }
  choice.lambda = choice.grid[best];
  return choice;
}

// --- sequential component selection -------------------------------------------

ComponentSet select_components(const Dataset& dataset,
                               const PenaltySpec& penalty,
                               const FitConfig& config, double dfd_threshold,
                               int k_max, const std::optional<CvSpec>& cv) {
  if (!(dfd_threshold > 1.0)) {
    throw ConfigError("dfd_threshold must exceed 1");
  }
  if (k_max <= 0 || k_max > dataset.p) k_max = dataset.p;

  ComponentSet set;
  std::vector<Projection> gammas;
  double cached_lambda = -1.0;
  for (int k = 0; k < k_max; ++k) {
    FitConfig cfg = config;
    cfg.rng_seed = derive_seed(config.rng_seed, 0xC0DE, k);
    PenaltySpec pen = penalty;

    ModelFit candidate;
    try {
      if (cv.has_value()) {
        if (cached_lambda >= 0.0 && !cv->per_component) {
          pen.lambda = cached_lambda;
        } else {
          // Tune lambda against the same initial projection restart 0 of
          // this component's fit will use (identical seed derivation and
          // basis).
          Matrix h = pooled_matrix(dataset).h;
          Projection pilot = [&] {
            auto engine = make_engine(derive_seed(cfg.rng_seed, 0));
            std::normal_distribution<double> normal(0.0, 1.0);
            PencilBasis basis = make_pencil_basis(h, gammas);
            Vector v(basis.map.cols());
            for (int i = 0; i < v.size(); ++i) v[i] = normal(engine);
            double norm = v.norm();
            if (norm <= 0.0) v[0] = 1.0, norm = 1.0;
            return Projection{basis.map * (v / norm)};
          }();
          GlmData glm = make_glm_data(dataset, pilot);
          CvChoice cvc =
              cv_lambda(glm, pen, cv->folds, cv->grid_size, cv->min_ratio,
                        derive_seed(cfg.rng_seed, 0xCF));
          pen.lambda = cvc.lambda;
          cached_lambda = cvc.lambda;
        }
      }
      candidate = fit(dataset, pen, cfg, gammas);
    } catch (const Error&) {
      if (k == 0) throw;
      break;  // keep what we have
    }

    std::vector<Projection> trial = gammas;
    trial.push_back(candidate.gamma);
    double d = dfd(dataset, trial);
    set.dfd_values.push_back(d);
    if (d > dfd_threshold) break;
    gammas = std::move(trial);
    set.components.push_back(std::move(candidate));
  }
  return set;
}

}  // namespace covreg
