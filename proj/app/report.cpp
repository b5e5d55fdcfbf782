#include "report.hpp"

#include <algorithm>
#include <cstdio>

#include <nlohmann/json.hpp>

namespace tminfer::app {

std::optional<OutputFormat> parse_format(std::string_view name) {
  if (name == "json") return OutputFormat::Json;
  if (name == "csv") return OutputFormat::Csv;
  if (name == "table") return OutputFormat::Table;
  return std::nullopt;
}

ResultSet rank(const ResultSet& results, std::optional<std::size_t> top_k) {
  if (!top_k || *top_k >= results.size()) return results;
  ResultSet sorted = results;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Prediction& a, const Prediction& b) { return a.probability > b.probability; });
  sorted.resize(*top_k);
  return sorted;
}

std::string json_row(std::string_view path, const ResultSet& predictions) {
  return R"({"path":)" + nlohmann::json(std::string(path)).dump() + R"(,"predictions":)" +
         format_result(predictions) + "}";
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

namespace {

std::string six(float p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(p));
  return buf;
}

}  // namespace

void ResultWriter::write(std::string_view path, const ResultSet& predictions) {
  switch (format_) {
    case OutputFormat::Json:
      out_ << json_row(path, predictions) << '\n';
      break;
    case OutputFormat::Csv:
      if (!header_written_) out_ << "path,rank,label,probability\n";
      for (std::size_t i = 0; i < predictions.size(); ++i) {
        out_ << csv_field(path) << ',' << i + 1 << ',' << csv_field(predictions[i].label) << ','
             << six(predictions[i].probability) << '\n';
      }
      break;
    case OutputFormat::Table: {
      std::size_t width = 5;
      for (const auto& p : predictions) width = std::max(width, p.label.size());
      out_ << path << '\n';
      for (const auto& p : predictions) {
        out_ << "  " << p.label << std::string(width - p.label.size() + 2, ' ') << six(p.probability) << '\n';
      }
      break;
    }
  }
  header_written_ = true;
  out_.flush();
}

}  // namespace tminfer::app
