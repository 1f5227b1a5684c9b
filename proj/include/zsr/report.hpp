#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "zsr/evaluation.hpp"

namespace zsr {

/// CSV columns: dataset,clean,robust,n. One row per dataset in report order,
/// then a final "average" row whose clean/robust are the arithmetic means of
/// the dataset rows and whose n is their total. Values use %.17g so they
/// round-trip exactly.
std::string report_to_csv(const EvalReport& report);
EvalReport parse_report_csv(const std::string& text);
EvalReport load_report_csv(const std::filesystem::path& path);

nlohmann::json report_to_json(const EvalReport& report);

/// Writes `<stem>.json` and `<stem>.csv` next to each other. `json_path`
/// names the JSON file; the CSV gets the same stem.
void emit_report(const EvalReport& report, const std::filesystem::path& json_path);

/// Columns: w,clean,robust.
std::string frontier_to_csv(const std::vector<FrontierRow>& rows);
std::vector<FrontierRow> parse_frontier_csv(const std::string& text);

std::string format_double(double v);

}  // namespace zsr
