#pragma once

#include <cmath>
#include <random>
#include <variant>
#include <vector>

#include "pfsense/ami_series.hpp"
#include "pfsense/observability.hpp"
#include "pfsense/powerflow.hpp"

namespace pfsense::amisim {

using ami::AmiSeries;
using netmodel::NetworkCase;
using numkit::Matrix;

/// Per-step load multipliers: either one global multiplier per step, or an
/// m x n matrix of independent per-bus multipliers (columns follow PQ order).
struct LoadShape {
    std::vector<double> global;  // length m when used
    Matrix per_bus_p;            // m x n when used
    Matrix per_bus_q;            // optional independent reactive multipliers
    Matrix add_p;                // optional additive MW offsets, m x n; excite
    Matrix add_q;                // buses whose base load is zero

    int steps() const { return global.empty() ? per_bus_p.rows() : static_cast<int>(global.size()); }
    bool per_bus() const { return global.empty(); }
};

/// Power-factor schedule: empty = keep the case reactive loads; one value =
/// fixed target every step; length-m vector = per-step targets.
struct PfSchedule {
    std::vector<double> alpha;

    bool active() const { return !alpha.empty(); }
    double at(int t) const { return alpha.size() == 1 ? alpha.front() : alpha.at(t); }
};

struct SimulateOptions {
    double noise_sigma = 0.005;  // relative std per recorded channel
    unsigned seed = 1;
    double step_minutes = 15.0;
    bool additive_noise = false;  // absolute-sigma mode behind a flag
};

inline std::vector<double> default_loadshape(int m, const std::string& profile, unsigned seed) {
    std::vector<double> shape(m, 1.0);
    if (profile == "flat") return shape;
    if (profile != "residential-like") throw DomainError("default_loadshape: unknown profile '" + profile + "'");
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> jitter(-0.02, 0.02);
    for (int t = 0; t < m; ++t) {
        const double h = 24.0 * t / std::max(m, 1);
        const double morning = 0.28 * std::exp(-0.5 * std::pow((h - 8.0) / 2.2, 2));
        const double evening = 0.45 * std::exp(-0.5 * std::pow((h - 19.0) / 2.8, 2));
        double s = 0.42 + morning + evening + jitter(rng);
        shape[t] = std::min(1.0, std::max(0.4, s));
    }
    return shape;
}

/// Drive the power flow step by step, recording (v, p, q) at the PQ buses,
/// then inject sensor noise. Reproducible for a fixed seed.
inline AmiSeries simulate_series(const NetworkCase& c, const LoadShape& shape,
                                 const PfSchedule& pf = {}, const SimulateOptions& opts = {}) {
    const int m = shape.steps();
    if (m <= 0) throw DomainError("simulate_series: empty load shape");
    if (pf.active() && pf.alpha.size() != 1 && static_cast<int>(pf.alpha.size()) != m)
        throw DomainError("simulate_series: power-factor schedule length differs from steps");
    const std::vector<int> pq = c.pq_indices();
    const int n = static_cast<int>(pq.size());

    AmiSeries s;
    s.m = m;
    s.n = n;
    s.v = Matrix(m, n);
    s.p = Matrix(m, n);
    s.q = Matrix(m, n);
    s.noise_sigma = opts.noise_sigma;
    s.seed = opts.seed;
    s.step_minutes = opts.step_minutes;
    for (int j = 0; j < n; ++j) s.bus_ids.push_back(c.buses[pq[j]].id);

    const netmodel::AdmittanceMatrix y = netmodel::build_admittance(c);
    powerflow::OperatingPoint prev = powerflow::solve_newton_raphson(c, y);
    if (!prev.converged) throw NoConvergence("simulate_series: base case did not converge");

    for (int t = 0; t < m; ++t) {
        NetworkCase stepped = c;
        for (int j = 0; j < n; ++j) {
            netmodel::Bus& b = stepped.buses[pq[j]];
            const double mp = shape.per_bus() ? shape.per_bus_p(t, j) : shape.global[t];
            b.p_load = c.buses[pq[j]].p_load * mp;
            if (!shape.add_p.empty()) b.p_load += shape.add_p(t, j);
            if (pf.active()) {
                b.q_load = observability::k_of_alpha(pf.at(t)) * b.p_load;
            } else {
                const double mq = shape.per_bus() && !shape.per_bus_q.empty()
                                      ? shape.per_bus_q(t, j)
                                      : mp;
                b.q_load = c.buses[pq[j]].q_load * mq;
                if (!shape.add_q.empty()) b.q_load += shape.add_q(t, j);
            }
        }
        powerflow::SolveOptions so;
        so.warm_start = &prev;
        const powerflow::OperatingPoint pt = powerflow::solve_newton_raphson(stepped, y, so);
        if (!pt.converged)
            throw NoConvergence("simulate_series: step " + std::to_string(t) + " did not converge");
        std::vector<double> ps, qs;
        stepped.scheduled_injections(ps, qs);
        for (int j = 0; j < n; ++j) {
            s.v(t, j) = pt.v[pq[j]];
            s.p(t, j) = ps[pq[j]];
            s.q(t, j) = qs[pq[j]];
        }
        prev = pt;
    }

    if (opts.noise_sigma > 0.0) {
        std::mt19937 rng(opts.seed);
        std::normal_distribution<double> gauss(0.0, opts.noise_sigma);
        auto corrupt = [&](Matrix& ch) {
            for (double& x : ch.data()) {
                const double e = gauss(rng);
                x = opts.additive_noise ? x + e : x * (1.0 + e);
            }
        };
        corrupt(s.v);
        corrupt(s.p);
        corrupt(s.q);
    }
    return s;
}

} // namespace pfsense::amisim
