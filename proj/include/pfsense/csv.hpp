#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pfsense/matrix.hpp"

namespace pfsense::numkit {

/// Full-precision numeric formatting (17 significant digits) so that writing
/// and re-reading a matrix is lossless and reruns are byte-identical.
inline std::string format_full(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline std::string matrix_to_csv(const Matrix& m) {
    std::string out;
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) {
            if (j) out += ',';
            out += format_full(m(i, j));
        }
        out += '\n';
    }
    return out;
}

inline Matrix matrix_from_csv(const std::string& text) {
    std::vector<std::vector<double>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw IoError("matrix_from_csv: non-numeric cell '" + cell + "'");
            }
        }
        if (!row.empty()) rows.push_back(std::move(row));
    }
    if (rows.empty()) return {};
    const size_t ncol = rows.front().size();
    for (const auto& r : rows)
        if (r.size() != ncol) throw IoError("matrix_from_csv: ragged rows");
    Matrix m(static_cast<int>(rows.size()), static_cast<int>(ncol));
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
    return m;
}

inline void write_matrix_csv(const std::string& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path);
    out << matrix_to_csv(m);
}

inline Matrix read_matrix_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for read: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return matrix_from_csv(ss.str());
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for read: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path);
    out << text;
}

} // namespace pfsense::numkit
