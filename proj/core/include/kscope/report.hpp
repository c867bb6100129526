#pragma once

#include <string>

#include "kscope/engine.hpp"

namespace kscope {

// Structured report: config, traffic, dispatch, queues, inference, latency, dataplane sections.
// Per-record arrays are included when with_records is set.
std::string report_json(const SimReport& rep, bool with_records = false);
// One row per flow / per inference, header first. Missing values are empty cells.
std::string flows_csv(const SimReport& rep);
std::string inferences_csv(const SimReport& rep);
// Short human-readable summary.
std::string report_summary(const SimReport& rep);

}  // namespace kscope
