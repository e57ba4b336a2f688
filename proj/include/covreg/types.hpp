#pragma once

#include <Eigen/Dense>
#include <vector>

namespace covreg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// One unit: a T_i x p matrix of mean-zero observations plus its covariate
/// vector (x[0] = 1, the intercept). Immutable after construction.
struct SubjectData {
  Matrix y;  // T_i x p, rows are observations
  Vector x;  // length q, x[0] == 1

  int t_count() const { return static_cast<int>(y.rows()); }
  int p() const { return static_cast<int>(y.cols()); }
  int q() const { return static_cast<int>(x.size()); }
};

/// Ordered collection of subjects sharing dimensions (p, q). Treated as
/// read-only shared input by every downstream operation.
struct Dataset {
  std::vector<SubjectData> subjects;
  int p = 0;
  int q = 0;

  int n() const { return static_cast<int>(subjects.size()); }
  long long total_observations() const {
    long long m = 0;
    for (const auto& s : subjects) m += s.t_count();
    return m;
  }
  Dataset subset(const std::vector<int>& indices) const;
};

/// Sample second-moment matrix of one subject: S_i = sum_t y_it y_it^T / T_i
/// (divisor T_i, no centering; the model assumes mean zero).
struct SampleCov {
  Matrix s;       // p x p, symmetric PSD
  double weight;  // T_i
};

/// Weighted average H = sum_i T_i S_i / sum_i T_i; defines the quadratic
/// normalization constraint for projections.
struct PooledMatrix {
  Matrix h;  // p x p, symmetric PSD
};

/// A direction in observation space. Sign-canonical: the entry of largest
/// absolute value is positive (gamma and -gamma fit identically).
struct Projection {
  Vector gamma;

  static Projection canonical(Vector g);
};

/// Regression coefficients; beta[0] is the intercept.
struct Coefficients {
  Vector beta;
};

// --- data-module operations -------------------------------------------------

/// Validates the SubjectData invariants (throws InputError; `index` names the
/// subject in messages).
void validate_subject(const SubjectData& subject, int index);

/// Validates the whole dataset (shared dims, n >= 2).
void validate_dataset(const Dataset& dataset);

SampleCov sample_covariance(const SubjectData& subject);

PooledMatrix pooled_matrix(const Dataset& dataset);

/// z_i = sum_t (gamma^T y_it)^2 = T_i * gamma^T S_i gamma.
double project_response(const SubjectData& subject, const Projection& gamma);

}  // namespace covreg
