#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "pfsense/csv.hpp"
#include "pfsense/matrix.hpp"

namespace pfsense::ami {

/// Per-bus time series of voltage magnitude and net injections (pu):
/// the measurement dataset the estimators consume.
struct AmiSeries {
    int m = 0;  // steps
    int n = 0;  // buses
    numkit::Matrix v;  // m x n
    numkit::Matrix p;
    numkit::Matrix q;
    std::vector<int> bus_ids;  // column -> external bus id
    double noise_sigma = 0.0;
    unsigned seed = 0;
    double step_minutes = 15.0;
};

/// Long-form CSV with header t,bus,v,p,q: one row per bus per step.
inline std::string series_to_csv(const AmiSeries& s) {
    std::string out = "t,bus,v,p,q\n";
    for (int t = 0; t < s.m; ++t) {
        for (int j = 0; j < s.n; ++j) {
            out += std::to_string(t);
            out += ',';
            out += std::to_string(s.bus_ids.empty() ? j : s.bus_ids[j]);
            out += ',';
            out += numkit::format_full(s.v(t, j));
            out += ',';
            out += numkit::format_full(s.p(t, j));
            out += ',';
            out += numkit::format_full(s.q(t, j));
            out += '\n';
        }
    }
    return out;
}

inline AmiSeries series_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw IoError("ami csv: empty file");
    struct Row {
        int t, bus;
        double v, p, q;
    };
    std::vector<Row> rows;
    std::vector<int> ids;
    int max_t = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        Row r{};
        int field = 0;
        while (std::getline(ls, cell, ',')) {
            try {
                switch (field) {
                    case 0: r.t = std::stoi(cell); break;
                    case 1: r.bus = std::stoi(cell); break;
                    case 2: r.v = std::stod(cell); break;
                    case 3: r.p = std::stod(cell); break;
                    case 4: r.q = std::stod(cell); break;
                    default: break;
                }
            } catch (const std::exception&) {
                throw IoError("ami csv: bad cell '" + cell + "'");
            }
            ++field;
        }
        if (field < 5) throw IoError("ami csv: row with fewer than 5 fields");
        rows.push_back(r);
        max_t = std::max(max_t, r.t);
        bool seen = false;
        for (int id : ids) seen = seen || id == r.bus;
        if (!seen) ids.push_back(r.bus);
    }
    AmiSeries s;
    s.m = max_t + 1;
    s.n = static_cast<int>(ids.size());
    s.bus_ids = ids;
    s.v = numkit::Matrix(s.m, s.n);
    s.p = numkit::Matrix(s.m, s.n);
    s.q = numkit::Matrix(s.m, s.n);
    auto col_of = [&](int bus) {
        for (int j = 0; j < s.n; ++j)
            if (ids[j] == bus) return j;
        return -1;
    };
    for (const Row& r : rows) {
        const int j = col_of(r.bus);
        s.v(r.t, j) = r.v;
        s.p(r.t, j) = r.p;
        s.q(r.t, j) = r.q;
    }
    return s;
}

} // namespace pfsense::ami
