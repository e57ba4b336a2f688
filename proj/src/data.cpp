#include "covreg/types.hpp"

#include <cmath>
#include <string>

#include "covreg/errors.hpp"

namespace covreg {

Projection Projection::canonical(Vector g) {
  int lead = 0;
  double best = -1.0;
  for (int i = 0; i < g.size(); ++i) {
    double a = std::abs(g[i]);
    if (a > best) {
      best = a;
      lead = i;
    }
  }
  if (g.size() > 0 && g[lead] < 0.0) g = -g;
  return Projection{std::move(g)};
}

void validate_subject(const SubjectData& subject, int index) {
  const std::string tag = ", subject " + std::to_string(index);
  if (subject.t_count() < 1) {
    throw InputError("empty observation matrix" + tag);
  }
  if (subject.q() < 1) {
    throw InputError("empty covariate vector" + tag);
  }
  if (subject.x[0] != 1.0) {
    throw InputError("missing intercept: x[0] must equal 1" + tag);
  }
  if (!subject.y.allFinite() || !subject.x.allFinite()) {
    throw InputError("non-finite value" + tag);
  }
}

void validate_dataset(const Dataset& dataset) {
  if (dataset.n() < 2) {
    throw InputError("dataset needs at least 2 subjects, got " +
                     std::to_string(dataset.n()));
  }
  for (int i = 0; i < dataset.n(); ++i) {
    const auto& s = dataset.subjects[i];
    if (s.p() != dataset.p) {
      throw InputError("observation dimension mismatch: expected p=" +
                       std::to_string(dataset.p) + ", got " +
                       std::to_string(s.p()) + ", subject " +
                       std::to_string(i));
    }
    if (s.q() != dataset.q) {
      throw InputError("covariate dimension mismatch: expected q=" +
                       std::to_string(dataset.q) + ", got " +
                       std::to_string(s.q()) + ", subject " +
                       std::to_string(i));
    }
    validate_subject(s, i);
  }
}

Dataset Dataset::subset(const std::vector<int>& indices) const {
  Dataset out;
  out.p = p;
  out.q = q;
  out.subjects.reserve(indices.size());
  for (int i : indices) out.subjects.push_back(subjects.at(i));
  return out;
}

SampleCov sample_covariance(const SubjectData& subject) {
  const double t = subject.t_count();
  Matrix s = (subject.y.transpose() * subject.y) / t;
  // y^T y is symmetric up to rounding; enforce it exactly.
  s = ((s + s.transpose()) * 0.5).eval();
  return SampleCov{std::move(s), t};
}

PooledMatrix pooled_matrix(const Dataset& dataset) {
  Matrix h = Matrix::Zero(dataset.p, dataset.p);
  double total = 0.0;
  for (const auto& subject : dataset.subjects) {
    h.noalias() += subject.y.transpose() * subject.y;
    total += subject.t_count();
  }
  h /= total;
  h = ((h + h.transpose()) * 0.5).eval();
  return PooledMatrix{std::move(h)};
}

double project_response(const SubjectData& subject, const Projection& gamma) {
  Vector proj = subject.y * gamma.gamma;  // T_i entries gamma^T y_it
  return proj.squaredNorm();
}

}  // namespace covreg
