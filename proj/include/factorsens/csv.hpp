#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "factorsens/errors.hpp"

namespace factorsens {

// Minimal CSV support: comma-separated, header row, no quoting. Cells are
// trimmed; an empty cell means "missing".
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column_index(const std::string& name) const {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == name) return j;
        throw ValidationError("missing column '" + name + "' in CSV header");
    }

    bool has_column(const std::string& name) const {
        for (const auto& h : header)
            if (h == name) return true;
        return false;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    cells.push_back(trim(cur));
    return cells;
}

} // namespace detail

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file '" + path + "'");
    CsvTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1) {
            table.header = detail::split_line(line);
            if (table.header.empty() || (table.header.size() == 1 && table.header[0].empty()))
                throw ValidationError("empty CSV header in '" + path + "'");
            continue;
        }
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_line(line);
        if (cells.size() != table.header.size())
            throw ValidationError("row " + std::to_string(lineno) + " of '" + path + "' has " +
                                  std::to_string(cells.size()) + " cells, expected " +
                                  std::to_string(table.header.size()));
        table.rows.push_back(std::move(cells));
    }
    if (table.header.empty()) throw ValidationError("empty CSV file '" + path + "'");
    return table;
}

// Parses a cell as double. Empty cell -> nullopt (missing). Anything else
// non-numeric -> error with location context.
inline std::optional<double> parse_cell(const std::string& cell, std::size_t row,
                                        const std::string& column) {
    if (cell.empty()) return std::nullopt;
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end)
        throw ValidationError("non-numeric value '" + cell + "' in column '" + column +
                              "', data row " + std::to_string(row + 1));
    return value;
}

// Full-precision formatting so written CSVs round-trip exactly.
inline std::string format_full(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline void write_csv(const std::string& path, const CsvTable& table) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write file '" + path + "'");
    for (std::size_t j = 0; j < table.header.size(); ++j) {
        if (j) out << ',';
        out << table.header[j];
    }
    out << '\n';
    for (const auto& row : table.rows) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j) out << ',';
            out << row[j];
        }
        out << '\n';
    }
    if (!out) throw ValidationError("failed writing '" + path + "'");
}

} // namespace factorsens
