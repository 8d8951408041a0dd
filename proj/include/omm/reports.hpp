#pragma once

#include "omm/data_io.hpp"
#include "omm/evaluation.hpp"
#include "omm/intervention_lab.hpp"

#include <string>

namespace omm {

/// Label lists used to key report tables.
struct Labels {
    std::vector<std::string> platforms;
    std::vector<std::string> opinions;
    std::vector<std::string> interventions;

    [[nodiscard]] static Labels of(const DatasetBundle& bundle) {
        return {bundle.platforms, bundle.opinions, bundle.interventions};
    }
};

/// Parses "a:b" (1-based, inclusive) into a 0-based half-open range; an empty
/// string means every bin.
[[nodiscard]] BinRange parse_range(const std::string& text, int bins);

/// Finite numbers as-is, anything else as null.
[[nodiscard]] json number(double v);

[[nodiscard]] json model_summary_json(const ModelFile& file, const Labels& labels);
[[nodiscard]] json holdout_json(const HoldoutReport& report, const Labels& labels);
[[nodiscard]] json prediction_json(const Prediction& prediction, const Labels& labels);
[[nodiscard]] json elasticity_json(const ElasticityReport& report, const Labels& labels);
[[nodiscard]] json whatif_json(const WhatIfResult& result, const Labels& labels);
[[nodiscard]] json scenario_json(const WhatIfScenario& scenario);

}  // namespace omm
