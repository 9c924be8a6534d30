#pragma once

#include "csd/model.hpp"

#include <json.hpp>

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace csd::io {

/// Locale-independent rendering at 12 significant digits.
std::string format_number(double x);

/// Nearest double to the 12-significant-digit rendering.
double round_significant(double x);

/// Pretty-printed JSON with every floating-point value rounded to 12
/// significant digits; non-finite values become null.
std::string json_dump(nlohmann::json j);

/// Version string compiled into the library.
const char* version();

/// Hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

/// Writes `contents` to `path` through a temporary file in the same
/// directory followed by rename(2).
void write_atomic(const std::string& path, const std::string& contents);

std::string read_file(const std::string& path);

/// RFC-4180 row splitting. Quoted fields may contain commas, doubled quotes
/// and newlines.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  // 1-based source line of each row
};

CsvTable parse_csv(const std::string& text);

/// Quotes a field when it contains a comma, quote or line break.
std::string csv_field(std::string_view s);

/// Provenance comment line: "# csdemand <version> config_sha256=<hash>".
std::string provenance_line(const std::string& config_hash);

/// Dense matrix as CSV with an optional label column and header.
std::string dense_csv(const Matrix& m, const std::vector<std::string>& labels, const std::string& provenance);

/// Coordinate list "row,col,value" of nonzero entries, upper triangle
/// included only once when `symmetric_upper` is set.
std::string sparse_text(const Matrix& m, const std::vector<std::string>& labels, const std::string& provenance,
                        bool symmetric_upper);

}  // namespace csd::io
