#include "covreg/serialize.hpp"

#include <fstream>
#include <sstream>

#include "covreg/errors.hpp"
#include "covreg/io.hpp"

namespace covreg {

namespace {

Json vector_to_json(const Vector& v) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vector vector_from_json(const Json& j) {
  Vector v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[i] = j.at(i).get<double>();
  return v;
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index jj = 0; jj < m.cols(); ++jj) row.push_back(m(i, jj));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j) {
  if (j.empty()) return Matrix();
  Matrix m(j.size(), j.at(0).size());
  for (size_t i = 0; i < j.size(); ++i) {
    if (j.at(i).size() != static_cast<size_t>(m.cols())) {
      throw InputError("ragged matrix in JSON");
    }
    for (size_t k = 0; k < j.at(i).size(); ++k) {
      m(i, k) = j.at(i).at(k).get<double>();
    }
  }
  return m;
}

}  // namespace

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n") == std::string::npos) return value;
  std::string quoted = "\"";
  for (char c : value) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  quoted += '"';
  return quoted;
}

Json to_json(const ModelFit& fit) {
  Json j;
  j["gamma"] = vector_to_json(fit.gamma.gamma);
  j["beta"] = vector_to_json(fit.beta.beta);
  j["objective_trace"] = fit.objective_trace;
  j["converged"] = fit.converged;
  j["restart_index"] = fit.restart_index;
  j["lambda"] = fit.lambda;
  return j;
}

ModelFit model_fit_from_json(const Json& j) {
  ModelFit fit;
  fit.gamma.gamma = vector_from_json(j.at("gamma"));
  fit.beta.beta = vector_from_json(j.at("beta"));
  fit.objective_trace = j.at("objective_trace").get<std::vector<double>>();
  fit.converged = j.at("converged").get<bool>();
  fit.restart_index = j.at("restart_index").get<int>();
  fit.lambda = j.at("lambda").get<double>();
  return fit;
}

Json to_json(const ComponentSet& set) {
  Json j;
  j["components"] = Json::array();
  for (const auto& c : set.components) j["components"].push_back(to_json(c));
  j["dfd_values"] = set.dfd_values;
  return j;
}

ComponentSet component_set_from_json(const Json& j) {
  ComponentSet set;
  for (const auto& c : j.at("components")) {
    set.components.push_back(model_fit_from_json(c));
  }
  set.dfd_values = j.at("dfd_values").get<std::vector<double>>();
  return set;
}

Json inference_to_json(const SmoothedInference& inf, const SplitPlan& plan,
                       double lambda, std::uint64_t seed,
                       const Vector* debug_unsquared) {
  Json j;
  j["coordinates"] = Json::array();
  for (Eigen::Index k = 0; k < inf.beta_hat.size(); ++k) {
    Json row;
    row["j"] = static_cast<int>(k);
    row["beta_hat"] = inf.beta_hat[k];
    row["v_hat"] = inf.v_hat[k];
    row["ci_lower"] = inf.ci_lower[k];
    row["ci_upper"] = inf.ci_upper[k];
    row["p_value"] = inf.p_values[k];
    row["truncated_variance"] = static_cast<bool>(inf.truncated_variance[k]);
    j["coordinates"].push_back(std::move(row));
  }
  j["meta"] = {{"B", plan.b_splits}, {"n1", plan.n1},     {"n2", plan.n2},
               {"lambda", lambda},   {"alpha", inf.alpha}, {"seed", seed}};
  if (debug_unsquared != nullptr) {
    j["debug_v_hat_unsquared"] = vector_to_json(*debug_unsquared);
  }
  return j;
}

std::string inference_to_csv(const SmoothedInference& inf) {
  std::ostringstream out;
  out << "j,beta_hat,v_hat,ci_lower,ci_upper,p_value,truncated_variance\n";
  for (Eigen::Index k = 0; k < inf.beta_hat.size(); ++k) {
    out << k << ',' << format_double(inf.beta_hat[k]) << ','
        << format_double(inf.v_hat[k]) << ',' << format_double(inf.ci_lower[k])
        << ',' << format_double(inf.ci_upper[k]) << ','
        << format_double(inf.p_values[k]) << ','
        << (inf.truncated_variance[k] ? 1 : 0) << '\n';
  }
  return out.str();
}

Json report_to_json(const SimReport& report) {
  Json j;
  j["rows"] = Json::array();
  for (const auto& r : report.rows) {
    j["rows"].push_back({{"component", r.component},
                         {"index", r.index},
                         {"truth", r.truth},
                         {"mean_estimate", r.mean_estimate},
                         {"empirical_se", r.empirical_se},
                         {"coverage", r.coverage},
                         {"mse", r.mse},
                         {"replicates_used", r.replicates_used}});
  }
  j["gamma"] = Json::array();
  for (const auto& r : report.gamma_rows) {
    j["gamma"].push_back({{"component", r.component},
                          {"mean_abs_inner", r.mean_abs_inner},
                          {"se_abs_inner", r.se_abs_inner},
                          {"replicates_used", r.replicates_used}});
  }
  j["replicate_count"] = report.replicate_count;
  j["failures"] = report.failures;
  j["component_missing"] = report.component_missing;
  j["diagnostics"] = {{"max_trace_increase", report.max_trace_increase},
                      {"min_dfd", report.min_dfd},
                      {"truncated_variances", report.truncated_variances}};
  if (report.null_ci_count > 0) {
    j["null_coverage"] = report.null_coverage;
    j["null_ci_count"] = report.null_ci_count;
  }
  return j;
}

std::string report_to_csv(const SimReport& report) {
  std::ostringstream out;
  out << "component,index,truth,mean_estimate,empirical_se,coverage,mse,"
         "replicates_used\n";
  for (const auto& r : report.rows) {
    out << csv_field(r.component) << ',' << r.index << ','
        << format_double(r.truth) << ',' << format_double(r.mean_estimate)
        << ',' << format_double(r.empirical_se) << ','
        << format_double(r.coverage) << ',' << format_double(r.mse) << ','
        << r.replicates_used << '\n';
  }
  for (const auto& r : report.gamma_rows) {
    out << csv_field(r.component + "_gamma") << ",-1,"
        << format_double(1.0) << ',' << format_double(r.mean_abs_inner) << ','
        << format_double(r.se_abs_inner) << ",,," << r.replicates_used << '\n';
  }
  return out.str();
}

std::string sweep_to_csv(const std::vector<SweepCell>& cells) {
  std::ostringstream out;
  out << "n,t,component,index,truth,mean_estimate,empirical_se,coverage,mse,"
         "replicates_used\n";
  for (const auto& cell : cells) {
    for (const auto& r : cell.report.rows) {
      out << cell.n << ',' << cell.t_obs << ',' << csv_field(r.component)
          << ',' << r.index << ',' << format_double(r.truth) << ','
          << format_double(r.mean_estimate) << ','
          << format_double(r.empirical_se) << ',' << format_double(r.coverage)
          << ',' << format_double(r.mse) << ',' << r.replicates_used << '\n';
    }
  }
  return out.str();
}

Json sweep_to_json(const std::vector<SweepCell>& cells) {
  Json arr = Json::array();
  for (const auto& cell : cells) {
    arr.push_back({{"n", cell.n},
                   {"t", cell.t_obs},
                   {"report", report_to_json(cell.report)}});
  }
  return arr;
}

ScenarioSpec scenario_from_json(const Json& j) {
  ScenarioSpec spec;
  spec.n = j.value("n", spec.n);
  spec.t_obs = j.value("t_obs", spec.t_obs);
  spec.p = j.value("p", spec.p);
  spec.q = j.value("q", spec.q);
  std::string mode = j.value("mode", std::string("alternative"));
  if (mode == "null") {
    spec.mode = ScenarioMode::null_case;
  } else if (mode == "alternative") {
    spec.mode = ScenarioMode::alternative;
  } else {
    throw InputError("scenario mode must be 'null' or 'alternative'");
  }
  if (j.contains("eigvec_matrix")) {
    spec.eigvec_matrix = matrix_from_json(j.at("eigvec_matrix"));
  }
  if (j.contains("signals")) {
    spec.signals.clear();
    for (const auto& s : j.at("signals")) {
      SignalComponent sig;
      sig.name = s.value("name", std::string("C") + std::to_string(
                                     s.at("component").get<int>() + 1));
      sig.component = s.at("component").get<int>();
      sig.indices = s.at("indices").get<std::vector<int>>();
      sig.values = s.at("values").get<std::vector<double>>();
      spec.signals.push_back(std::move(sig));
    }
  } else if (spec.mode == ScenarioMode::alternative) {
    spec.signals = ScenarioSpec::default_signals();
  }
  spec.lognormal_sigma = j.value("lognormal_sigma", spec.lognormal_sigma);
  if (j.contains("intercept_range")) {
    spec.intercept_lo = j.at("intercept_range").at(0).get<double>();
    spec.intercept_hi = j.at("intercept_range").at(1).get<double>();
  }
  spec.replicate_count = j.value("replicate_count", spec.replicate_count);
  spec.b_splits = j.value("b_splits", spec.b_splits);
  spec.rng_seed = j.value("rng_seed", spec.rng_seed);
  if (j.contains("report_indices")) {
    spec.report_indices = j.at("report_indices").get<std::vector<int>>();
  }
  spec.alpha = j.value("alpha", spec.alpha);
  spec.dfd_threshold = j.value("dfd_threshold", spec.dfd_threshold);
  spec.max_components = j.value("max_components", spec.max_components);
  spec.n1 = j.value("n1", spec.n1);
  spec.null_report_coords =
      j.value("null_report_coords", spec.null_report_coords);
  spec.validate();
  return spec;
}

Json to_json(const ScenarioSpec& spec) {
  Json j;
  j["n"] = spec.n;
  j["t_obs"] = spec.t_obs;
  j["p"] = spec.p;
  j["q"] = spec.q;
  j["mode"] = spec.mode == ScenarioMode::null_case ? "null" : "alternative";
  if (spec.eigvec_matrix.has_value()) {
    j["eigvec_matrix"] = matrix_to_json(*spec.eigvec_matrix);
  }
  j["signals"] = Json::array();
  for (const auto& s : spec.signals) {
    j["signals"].push_back({{"name", s.name},
                            {"component", s.component},
                            {"indices", s.indices},
                            {"values", s.values}});
  }
  j["lognormal_sigma"] = spec.lognormal_sigma;
  j["intercept_range"] = {spec.intercept_lo, spec.intercept_hi};
  j["replicate_count"] = spec.replicate_count;
  j["b_splits"] = spec.b_splits;
  j["rng_seed"] = spec.rng_seed;
  j["report_indices"] = spec.report_indices;
  j["alpha"] = spec.alpha;
  j["dfd_threshold"] = spec.dfd_threshold;
  j["max_components"] = spec.max_components;
  j["n1"] = spec.n1;
  j["null_report_coords"] = spec.null_report_coords;
  return j;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write file: " + path);
  out << content;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace covreg
