#pragma once

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxdag/graph.hpp"

namespace ctxdag {

// Shortest decimal that round-trips the double exactly.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// Comment lines ("# ...") carry provenance (the run's config echo) and are
// skipped by read_csv.
inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const Matrix& values, const std::vector<std::string>& comments = {}) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_csv: cannot open " + path);
    for (const auto& c : comments) out << "# " << c << "\n";
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
    out << "\n";
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        for (Eigen::Index c = 0; c < values.cols(); ++c)
            out << (c ? "," : "") << format_double(values(r, c));
        out << "\n";
    }
}

struct CsvTable {
    std::vector<std::string> header;
    Matrix values;
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_csv: cannot open " + path);
    CsvTable table;
    std::string line;
    do {
        if (!std::getline(in, line)) throw std::runtime_error("read_csv: empty file " + path);
    } while (!line.empty() && line.front() == '#');
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) table.header.push_back(cell);
    }
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str()) throw std::runtime_error("read_csv: bad number in " + path);
            row.push_back(v);
        }
        if (row.size() != table.header.size())
            throw std::runtime_error("read_csv: ragged row in " + path);
        rows.push_back(std::move(row));
    }
    table.values = Matrix(rows.size(), table.header.size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) table.values(r, c) = rows[r][c];
    return table;
}

}  // namespace ctxdag
