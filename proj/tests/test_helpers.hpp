#pragma once

#include <random>
#include <string>

#include "pfsense/csv.hpp"
#include "pfsense/matrix.hpp"
#include "pfsense/netmodel.hpp"

namespace testutil {

using pfsense::numkit::Matrix;

inline Matrix random_matrix(int rows, int cols, unsigned seed, double scale = 1.0) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> g(0.0, scale);
    Matrix m(rows, cols);
    for (double& x : m.data()) x = g(rng);
    return m;
}

inline std::string cases_dir() { return PFSENSE_CASES_DIR; }

inline pfsense::netmodel::NetworkCase load_case(const std::string& name) {
    const std::string path = cases_dir() + "/" + name;
    return pfsense::netmodel::parse_matpower_case(pfsense::numkit::read_text_file(path), name);
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    return pfsense::numkit::max_abs(a - b);
}

} // namespace testutil
