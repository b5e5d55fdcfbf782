#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

#include "tminfer/session.hpp"

namespace tminfer::app {

enum class OutputFormat { Json, Csv, Table };

std::optional<OutputFormat> parse_format(std::string_view name);

// Label order when top_k is absent or covers every class; otherwise the top_k
// highest probabilities, descending, ties kept in label order.
ResultSet rank(const ResultSet& results, std::optional<std::size_t> top_k);

// `{"path":...,"predictions":[...]}` where predictions is the session wire text.
std::string json_row(std::string_view path, const ResultSet& predictions);

// Writes result rows for one image. The CSV header is written once by the caller.
class ResultWriter {
 public:
  ResultWriter(std::ostream& out, OutputFormat format) : out_(out), format_(format) {}

  void write(std::string_view path, const ResultSet& predictions);

 private:
  std::ostream& out_;
  OutputFormat format_;
  bool header_written_ = false;
};

std::string csv_field(std::string_view s);

}  // namespace tminfer::app
