#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "covreg/estimate.hpp"
#include "covreg/infer.hpp"
#include "covreg/sim.hpp"

namespace covreg {

using Json = nlohmann::ordered_json;

Json to_json(const ModelFit& fit);
ModelFit model_fit_from_json(const Json& j);

Json to_json(const ComponentSet& set);
ComponentSet component_set_from_json(const Json& j);

/// Per-coordinate inference report plus run metadata; `debug_unsquared`
/// optionally records the alternative variance reading.
Json inference_to_json(const SmoothedInference& inf, const SplitPlan& plan,
                       double lambda, std::uint64_t seed,
                       const Vector* debug_unsquared = nullptr);
std::string inference_to_csv(const SmoothedInference& inf);

Json report_to_json(const SimReport& report);
std::string report_to_csv(const SimReport& report);
std::string sweep_to_csv(const std::vector<SweepCell>& cells);
Json sweep_to_json(const std::vector<SweepCell>& cells);

ScenarioSpec scenario_from_json(const Json& j);
Json to_json(const ScenarioSpec& spec);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

/// RFC-4180 style: quotes a field only when it contains a delimiter, quote,
/// or newline.
std::string csv_field(const std::string& value);

}  // namespace covreg
