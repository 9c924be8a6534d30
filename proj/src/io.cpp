#include "csd/io.hpp"

#include "csd/errors.hpp"

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#ifndef CSD_VERSION
#define CSD_VERSION "0.0.0"
#endif

namespace csd::io {

std::string format_number(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    if (x == 0.0) return "0";  // folds -0
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x, std::chars_format::general, 12);
    return std::string(buf.data(), res.ptr);
}

double round_significant(double x) {
    if (!std::isfinite(x) || x == 0.0) return x;
    const std::string s = format_number(x);
    double out = x;
    std::from_chars(s.data(), s.data() + s.size(), out);
    return out;
}

namespace {

void round_in_place(nlohmann::json& j) {
    if (j.is_number_float()) {
        const double x = j.get<double>();
        j = std::isfinite(x) ? nlohmann::json(round_significant(x)) : nlohmann::json(nullptr);
    } else if (j.is_structured()) {
        for (auto& v : j) round_in_place(v);
    }
}

}  // namespace

std::string json_dump(nlohmann::json j) {
    round_in_place(j);
    return j.dump(2) + "\n";
}

const char* version() { return CSD_VERSION; }

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xF]);
    }
    return out;
}

void write_atomic(const std::string& path, const std::string& contents) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot open " + tmp.string() + " for writing");
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        f.flush();
        if (!f) throw DataError("write to " + tmp.string() + " failed");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw DataError("cannot move output into place at " + path + ": " + ec.message());
    }
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

CsvTable parse_csv(const std::string& text) {
    CsvTable out;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, any = false;
    std::size_t line = 1, row_start = 1;
    auto end_row = [&] {
        row.push_back(field);
        field.clear();
        const bool blank = row.size() == 1 && row[0].empty();
        if (!blank) {
            if (out.header.empty() && out.rows.empty() && out.line_numbers.empty())
                out.header = row;
            else {
                out.rows.push_back(row);
                out.line_numbers.push_back(row_start);
            }
        }
        row.clear();
        any = false;
    };
    std::size_t i = 0;
    if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF && static_cast<unsigned char>(text[1]) == 0xBB &&
        static_cast<unsigned char>(text[2]) == 0xBF)
        i = 3;
    for (; i < text.size(); ++i) {
        const char c = text[i];
        if (!any) {
            row_start = line;
            any = true;
        }
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        if (c == '"' && field.empty()) {
            quoted = true;
        } else if (c == ',') {
            row.push_back(field);
            field.clear();
        } else if (c == '\r') {
            // tolerated before \n
        } else if (c == '\n') {
            end_row();
            ++line;
        } else {
            field.push_back(c);
        }
    }
    if (quoted) throw DataError("csv: unterminated quoted field starting on line " + std::to_string(row_start));
    if (any || !field.empty() || !row.empty()) end_row();
    return out;
}

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string provenance_line(const std::string& config_hash) {
    return std::string("# csdemand ") + version() + " config_sha256=" + config_hash + "\n";
}

std::string dense_csv(const Matrix& m, const std::vector<std::string>& labels, const std::string& provenance) {
    std::string out = provenance;
    const bool labelled = static_cast<Index>(labels.size()) == m.rows() && m.rows() == m.cols();
    if (labelled) {
        out += "id";
        for (const auto& l : labels) out += "," + csv_field(l);
        out += "\n";
    }
    for (Index r = 0; r < m.rows(); ++r) {
        if (labelled) out += csv_field(labels[static_cast<std::size_t>(r)]) + ",";
        for (Index c = 0; c < m.cols(); ++c) {
            if (c) out += ",";
            out += format_number(m(r, c));
        }
        out += "\n";
    }
    return out;
}

std::string sparse_text(const Matrix& m, const std::vector<std::string>& labels, const std::string& provenance,
                        bool symmetric_upper) {
    std::string out = provenance + "row,col,value\n";
    const bool labelled = static_cast<Index>(labels.size()) == m.rows();
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = symmetric_upper ? r : 0; c < m.cols(); ++c) {
            if (m(r, c) == 0.0) continue;
            out += labelled ? csv_field(labels[static_cast<std::size_t>(r)]) : std::to_string(r);
            out += ",";
            out += labelled && c < static_cast<Index>(labels.size()) ? csv_field(labels[static_cast<std::size_t>(c)])
                                                                     : std::to_string(c);
            out += "," + format_number(m(r, c)) + "\n";
        }
    }
    return out;
}

}  // namespace csd::io
