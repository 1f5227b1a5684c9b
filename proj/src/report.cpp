#include "zsr/report.hpp"

#include <cstdio>
#include <sstream>

#include "zsr/config.hpp"
#include "zsr/error.hpp"
#include "zsr/util.hpp"

namespace zsr {

using json = nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

void require_records(const EvalReport& report) {
  if (report.records.empty()) throw ValidationError("report needs at least one record");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("CSV: malformed number '" + s + "'");
  }
}

}  // namespace

std::string report_to_csv(const EvalReport& report) {
  require_records(report);
  std::string out = "dataset,clean,robust,n\n";
  std::size_t total = 0;
  for (const auto& r : report.records) {
    if (r.dataset.find(',') != std::string::npos) throw ValidationError("dataset name contains a comma");
    out += r.dataset + "," + format_double(r.clean) + "," + format_double(r.robust) + "," + std::to_string(r.n) + "\n";
    total += r.n;
  }
  out += "average," + format_double(report.average_clean()) + "," + format_double(report.average_robust()) + "," +
         std::to_string(total) + "\n";
  return out;
}

EvalReport parse_report_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "dataset,clean,robust,n") {
    throw ValidationError("CSV: expected header 'dataset,clean,robust,n'");
  }
  EvalReport report;
  bool saw_average = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (saw_average) throw ValidationError("CSV: rows after the average row");
    const auto cells = split_csv_line(line);
    if (cells.size() != 4) throw ValidationError("CSV: expected 4 columns in '" + line + "'");
    if (cells[0] == "average") {
      saw_average = true;
      continue;
    }
    EvalRecord r;
    r.dataset = cells[0];
    r.clean = parse_number(cells[1]);
    r.robust = parse_number(cells[2]);
    r.n = static_cast<std::size_t>(parse_number(cells[3]));
    report.records.push_back(r);
  }
  if (!saw_average) throw ValidationError("CSV: missing average row");
  return report;
}

EvalReport load_report_csv(const std::filesystem::path& path) { return parse_report_csv(read_text(path)); }

json report_to_json(const EvalReport& report) {
  require_records(report);
  json rows = json::array();
  for (const auto& r : report.records) {
    rows.push_back({{"dataset", r.dataset},
                    {"clean", r.clean},
                    {"robust", r.robust},
                    {"n", r.n},
                    {"attack", r.attack ? to_json(*r.attack) : json(nullptr)}});
  }
  return json{{"records", rows},
              {"average", {{"clean", report.average_clean()}, {"robust", report.average_robust()}}},
              {"config_hash", report.config_hash},
              {"seed", report.seed}};
}

void emit_report(const EvalReport& report, const std::filesystem::path& json_path) {
  const auto csv = report_to_csv(report);
  write_text(json_path, report_to_json(report).dump(2) + "\n");
  auto csv_path = json_path;
  csv_path.replace_extension(".csv");
  write_text(csv_path, csv);
}

std::string frontier_to_csv(const std::vector<FrontierRow>& rows) {
  std::string out = "w,clean,robust\n";
  for (const auto& r : rows) {
    out += format_double(r.w) + "," + format_double(r.clean) + "," + format_double(r.robust) + "\n";
  }
  return out;
}

std::vector<FrontierRow> parse_frontier_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "w,clean,robust") throw ValidationError("CSV: expected header 'w,clean,robust'");
  std::vector<FrontierRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 3) throw ValidationError("CSV: expected 3 columns in '" + line + "'");
    FrontierRow r;
    r.w = parse_number(cells[0]);
    r.clean = parse_number(cells[1]);
    r.robust = parse_number(cells[2]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace zsr
