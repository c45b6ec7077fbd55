#pragma once

// Plain-text tables for a RunReport.

#include <string>
#include <vector>

#include <json.hpp>

namespace chainlearn::report {

std::string render(const nlohmann::json& report);

// Single-run trend checks behind `run --check`: ledger audit, monotone
// fusion trajectory, p-sweep ordering, strategy ordering and cipherspace
// argmax agreement. Returns one message per failed check.
std::vector<std::string> check_trends(const nlohmann::json& report);

// Percent with one decimal, "-" for null.
std::string pct(const nlohmann::json& v);

}  // namespace chainlearn::report
