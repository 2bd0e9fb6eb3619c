#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "sdidml/errors.hpp"

namespace sdidml {

// RFC 4180 CSV: comma separator, optional quoting with doubled-quote escapes,
// fields may span lines when quoted, CRLF or LF line ends, UTF-8 with
// optional BOM. Cells are kept as raw strings; numeric interpretation is the
// caller's concern (empty cell = missing).
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline CsvTable parse_csv(const std::string& text) {
    CsvTable out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    if (n >= 3 && static_cast<unsigned char>(text[0]) == 0xEF &&
        static_cast<unsigned char>(text[1]) == 0xBB &&
        static_cast<unsigned char>(text[2]) == 0xBF) {
        i = 3;  // skip BOM
    }
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool any_field = false;
    auto end_field = [&]() {
        record.push_back(field);
        field.clear();
        any_field = false;
    };
    auto end_record = [&]() {
        end_field();
        if (out.header.empty()) out.header = record;
        else out.rows.push_back(record);
        record.clear();
    };
    while (i < n) {
        char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < n && text[i + 1] == '"') { field.push_back('"'); i += 2; continue; }
                in_quotes = false;
                ++i;
                continue;
            }
            field.push_back(c);
            ++i;
            continue;
        }
        if (c == '"' && field.empty() && !any_field) { in_quotes = true; any_field = true; ++i; continue; }
        if (c == ',') { end_field(); ++i; continue; }
        if (c == '\r') {
            if (i + 1 < n && text[i + 1] == '\n') ++i;
            end_record();
            ++i;
            continue;
        }
        if (c == '\n') { end_record(); ++i; continue; }
        field.push_back(c);
        any_field = true;
        ++i;
    }
    if (in_quotes) throw ParseError("unterminated quoted field at end of input");
    if (any_field || !field.empty() || !record.empty()) end_record();
    return out;
}

inline CsvTable read_csv_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_csv(buf.str());
}

// Shortest decimal string that round-trips to the same double.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string csv_escape(const std::string& s) {
    bool needs_quotes = s.find_first_of(",\"\n\r") != std::string::npos;
    if (!needs_quotes) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

inline std::string write_csv(const CsvTable& t) {
    std::string out;
    auto emit_row = [&](const std::vector<std::string>& row) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j) out.push_back(',');
            out += csv_escape(row[j]);
        }
        out.push_back('\n');
    };
    emit_row(t.header);
    for (const auto& r : t.rows) emit_row(r);
    return out;
}

// Parses a cell as double. Empty cell = missing (NaN). Anything else that
// does not fully parse is an error reported at (row, column), 1-based.
inline double parse_cell_double(const std::string& cell, std::size_t row, const std::string& col) {
    if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    // Tolerate surrounding spaces, which RFC 4180 treats as field content.
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end > begin && (end[-1] == ' ' || end[-1] == '\t')) --end;
    if (begin == end) return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc() || res.ptr != end) {
        throw ParseError("non-numeric cell '" + cell + "' at data row " + std::to_string(row) +
                         ", column '" + col + "'");
    }
    return v;
}

inline long long parse_cell_int(const std::string& cell, std::size_t row, const std::string& col) {
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end > begin && (end[-1] == ' ' || end[-1] == '\t')) --end;
    long long v = 0;
    auto res = std::from_chars(begin, end, v);
    if (begin == end || res.ec != std::errc() || res.ptr != end) {
        throw ParseError("non-integer cell '" + cell + "' at data row " + std::to_string(row) +
                         ", column '" + col + "'");
    }
    return v;
}

} // namespace sdidml
