#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pfsense/linalg.hpp"
#include "pfsense/netmodel.hpp"

namespace pfsense::powerflow {

using netmodel::AdmittanceMatrix;
using netmodel::BusKind;
using netmodel::NetworkCase;
using numkit::Matrix;

/// Which rows/columns the Jacobian keeps.
///   pq:       angles and magnitudes over PQ buses only (the theory set).
///   nonslack: angles over all non-slack buses, magnitudes over PQ buses
///             (classical Newton-Raphson variable space).
enum class BusSet { pq, nonslack };

struct OperatingPoint {
    std::vector<double> v;      // pu, all buses
    std::vector<double> theta;  // radians, all buses
    std::vector<double> p_inj;  // computed net injections, pu
    std::vector<double> q_inj;
    bool converged = false;
    double mismatch_norm = 0.0;
    int iterations = 0;
};

/// Computed injections from the power balance equations at (v, theta).
inline void compute_injections(const AdmittanceMatrix& y, const std::vector<double>& v,
                               const std::vector<double>& theta, std::vector<double>& p,
                               std::vector<double>& q) {
    const int n = y.n_bus;
    if (static_cast<int>(v.size()) != n || static_cast<int>(theta.size()) != n)
        throw DimensionMismatch("compute_injections: vector length differs from n_bus");
    p.assign(n, 0.0);
    q.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double pi = 0.0, qi = 0.0;
        for (int k = 0; k < n; ++k) {
            const double gik = y.g(i, k), bik = y.b(i, k);
            if (gik == 0.0 && bik == 0.0) continue;
            const double d = theta[i] - theta[k];
            const double c = std::cos(d), s = std::sin(d);
            pi += v[k] * (gik * c + bik * s);
            qi += v[k] * (gik * s - bik * c);
        }
        p[i] = v[i] * pi;
        q[i] = v[i] * qi;
    }
}

/// Mismatch dp_i = p_sched_i - p_computed_i (dq analogous).
inline void power_mismatch(const AdmittanceMatrix& y, const std::vector<double>& v,
                           const std::vector<double>& theta, const std::vector<double>& p_sched,
                           const std::vector<double>& q_sched, std::vector<double>& dp,
                           std::vector<double>& dq) {
    if (p_sched.size() != v.size() || q_sched.size() != v.size())
        throw DimensionMismatch("power_mismatch: schedule length differs from n_bus");
    compute_injections(y, v, theta, dp, dq);
    for (size_t i = 0; i < dp.size(); ++i) {
        dp[i] = p_sched[i] - dp[i];
        dq[i] = q_sched[i] - dq[i];
    }
}

// ---------------------------------------------------------------------------
// Jacobian blocks
// ---------------------------------------------------------------------------

/// The four partial-derivative blocks of the computed injections with respect
/// to angles and magnitudes, restricted to a bus set. theta_index / v_index
/// give the bus position for each block row/column; under `nonslack` the
/// blocks are rectangular.
struct JacobianBlocks {
    Matrix dp_dtheta;  // |theta_index| x |theta_index|
    Matrix dp_dv;      // |theta_index| x |v_index|
    Matrix dq_dtheta;  // |v_index| x |theta_index|
    Matrix dq_dv;      // |v_index| x |v_index|
    BusSet bus_set = BusSet::pq;
    std::vector<int> theta_index;  // matrix row/col -> bus position
    std::vector<int> v_index;

    /// Overall square matrix [[dp_dtheta, dp_dv], [dq_dtheta, dq_dv]].
    Matrix assemble() const {
        using numkit::hcat;
        const Matrix top = hcat(dp_dtheta, dp_dv);
        const Matrix bot = hcat(dq_dtheta, dq_dv);
        Matrix j(top.rows() + bot.rows(), top.cols());
        for (int i = 0; i < top.rows(); ++i)
            for (int c = 0; c < top.cols(); ++c) j(i, c) = top(i, c);
        for (int i = 0; i < bot.rows(); ++i)
            for (int c = 0; c < bot.cols(); ++c) j(top.rows() + i, c) = bot(i, c);
        return j;
    }
};

inline std::vector<int> select_indices(const NetworkCase& c, BusSet set, bool for_theta) {
    if (set == BusSet::pq) return c.pq_indices();
    return for_theta ? c.nonslack_indices() : c.pq_indices();
}

/// Analytic partials of the power balance equations at a point (which need
/// not be converged).
inline JacobianBlocks assemble_jacobian(const AdmittanceMatrix& y, const OperatingPoint& pt,
                                        const NetworkCase& c, BusSet set = BusSet::pq) {
    if (static_cast<int>(pt.v.size()) != y.n_bus)
        throw DimensionMismatch("assemble_jacobian: point size differs from n_bus");
    std::vector<double> p, q;
    compute_injections(y, pt.v, pt.theta, p, q);

    JacobianBlocks jb;
    jb.bus_set = set;
    jb.theta_index = select_indices(c, set, true);
    jb.v_index = select_indices(c, set, false);
    const int nt = static_cast<int>(jb.theta_index.size());
    const int nv = static_cast<int>(jb.v_index.size());
    jb.dp_dtheta = Matrix(nt, nt);
    jb.dp_dv = Matrix(nt, nv);
    jb.dq_dtheta = Matrix(nv, nt);
    jb.dq_dv = Matrix(nv, nv);

    auto dpdt = [&](int i, int k) {
        if (i == k) return -q[i] - y.b(i, i) * pt.v[i] * pt.v[i];
        const double d = pt.theta[i] - pt.theta[k];
        return pt.v[i] * pt.v[k] * (y.g(i, k) * std::sin(d) - y.b(i, k) * std::cos(d));
    };
    auto dpdv = [&](int i, int k) {
        if (i == k) return p[i] / pt.v[i] + y.g(i, i) * pt.v[i];
        const double d = pt.theta[i] - pt.theta[k];
        return pt.v[i] * (y.g(i, k) * std::cos(d) + y.b(i, k) * std::sin(d));
    };
    auto dqdt = [&](int i, int k) {
        if (i == k) return p[i] - y.g(i, i) * pt.v[i] * pt.v[i];
        const double d = pt.theta[i] - pt.theta[k];
        return -pt.v[i] * pt.v[k] * (y.g(i, k) * std::cos(d) + y.b(i, k) * std::sin(d));
    };
    auto dqdv = [&](int i, int k) {
        if (i == k) return q[i] / pt.v[i] - y.b(i, i) * pt.v[i];
        const double d = pt.theta[i] - pt.theta[k];
        return pt.v[i] * (y.g(i, k) * std::sin(d) - y.b(i, k) * std::cos(d));
    };

    for (int r = 0; r < nt; ++r)
        for (int s = 0; s < nt; ++s) jb.dp_dtheta(r, s) = dpdt(jb.theta_index[r], jb.theta_index[s]);
    for (int r = 0; r < nt; ++r)
        for (int s = 0; s < nv; ++s) jb.dp_dv(r, s) = dpdv(jb.theta_index[r], jb.v_index[s]);
    for (int r = 0; r < nv; ++r)
        for (int s = 0; s < nt; ++s) jb.dq_dtheta(r, s) = dqdt(jb.v_index[r], jb.theta_index[s]);
    for (int r = 0; r < nv; ++r)
        for (int s = 0; s < nv; ++s) jb.dq_dv(r, s) = dqdv(jb.v_index[r], jb.v_index[s]);
    return jb;
}

/// Central finite differences of the computed injections; the oracle for
/// assemble_jacobian.
inline JacobianBlocks finite_difference_jacobian(const AdmittanceMatrix& y,
                                                 const OperatingPoint& pt, const NetworkCase& c,
                                                 BusSet set = BusSet::pq, double h = 1e-6) {
    if (h <= 0.0) throw DomainError("finite_difference_jacobian: step must be positive");
    JacobianBlocks jb;
    jb.bus_set = set;
    jb.theta_index = select_indices(c, set, true);
    jb.v_index = select_indices(c, set, false);
    const int nt = static_cast<int>(jb.theta_index.size());
    const int nv = static_cast<int>(jb.v_index.size());
    jb.dp_dtheta = Matrix(nt, nt);
    jb.dp_dv = Matrix(nt, nv);
    jb.dq_dtheta = Matrix(nv, nt);
    jb.dq_dv = Matrix(nv, nv);

    std::vector<double> pp, qp, pm, qm;
    auto diff_theta = [&](int busk, int colT) {
        std::vector<double> th = pt.theta;
        th[busk] += h;
        compute_injections(y, pt.v, th, pp, qp);
        th[busk] -= 2 * h;
        compute_injections(y, pt.v, th, pm, qm);
        for (int r = 0; r < nt; ++r) jb.dp_dtheta(r, colT) = (pp[jb.theta_index[r]] - pm[jb.theta_index[r]]) / (2 * h);
        for (int r = 0; r < nv; ++r) jb.dq_dtheta(r, colT) = (qp[jb.v_index[r]] - qm[jb.v_index[r]]) / (2 * h);
    };
    auto diff_v = [&](int busk, int colV) {
        std::vector<double> vv = pt.v;
        vv[busk] += h;
        compute_injections(y, vv, pt.theta, pp, qp);
        vv[busk] -= 2 * h;
        compute_injections(y, vv, pt.theta, pm, qm);
        for (int r = 0; r < nt; ++r) jb.dp_dv(r, colV) = (pp[jb.theta_index[r]] - pm[jb.theta_index[r]]) / (2 * h);
        for (int r = 0; r < nv; ++r) jb.dq_dv(r, colV) = (qp[jb.v_index[r]] - qm[jb.v_index[r]]) / (2 * h);
    };
    for (int s = 0; s < nt; ++s) diff_theta(jb.theta_index[s], s);
    for (int s = 0; s < nv; ++s) diff_v(jb.v_index[s], s);
    return jb;
}

// ---------------------------------------------------------------------------
// Newton-Raphson solver
// ---------------------------------------------------------------------------

struct SolveOptions {
    double tol = 1e-8;  // infinity norm of per-unit mismatch
    int max_iter = 20;
    bool flat_start = true;
    /// Optional start point (overrides flat_start when set).
    const OperatingPoint* warm_start = nullptr;
};

/// Starting voltage profile: setpoints at slack/PV, flat or bus-table values
/// elsewhere.
inline OperatingPoint initial_point(const NetworkCase& c, bool flat) {
    OperatingPoint pt;
    const int n = c.n_bus();
    pt.v.resize(n);
    pt.theta.resize(n);
    for (int i = 0; i < n; ++i) {
        const netmodel::Bus& b = c.buses[i];
        if (b.kind == BusKind::pq) {
            pt.v[i] = flat ? 1.0 : b.v_init;
            pt.theta[i] = flat ? 0.0 : b.theta_init * M_PI / 180.0;
        } else {
            pt.v[i] = c.v_setpoint(i);
            pt.theta[i] = (b.kind == BusKind::slack || !flat) ? b.theta_init * M_PI / 180.0 : 0.0;
        }
    }
    return pt;
}

/// The operating point exactly as recorded in the case data (bus-table VM/VA,
/// no setpoint overrides). This is the "default operating point" of a fixture.
inline OperatingPoint file_point(const NetworkCase& c, const AdmittanceMatrix& y) {
    OperatingPoint pt;
    const int n = c.n_bus();
    pt.v.resize(n);
    pt.theta.resize(n);
    for (int i = 0; i < n; ++i) {
        pt.v[i] = c.buses[i].v_init;
        pt.theta[i] = c.buses[i].theta_init * M_PI / 180.0;
    }
    compute_injections(y, pt.v, pt.theta, pt.p_inj, pt.q_inj);
    pt.converged = true;
    return pt;
}

/// Full Newton-Raphson in polar form. PV magnitudes are held at setpoints,
/// generator reactive limits are ignored.
inline OperatingPoint solve_newton_raphson(const NetworkCase& c, const AdmittanceMatrix& y,
                                           const SolveOptions& opts = {}) {
    OperatingPoint pt = opts.warm_start ? *opts.warm_start : initial_point(c, opts.flat_start);
    const int n = c.n_bus();

    std::vector<double> p_sched, q_sched;
    c.scheduled_injections(p_sched, q_sched);

    const std::vector<int> ns = c.nonslack_indices();  // angle variables
    const std::vector<int> pq = c.pq_indices();        // magnitude variables
    const int nt = static_cast<int>(ns.size());
    const int nv = static_cast<int>(pq.size());
    const int dim = nt + nv;

    std::vector<double> dp(n), dq(n);
    auto mismatch_norm = [&]() {
        power_mismatch(y, pt.v, pt.theta, p_sched, q_sched, dp, dq);
        double m = 0.0;
        for (int i : ns) m = std::max(m, std::abs(dp[i]));
        for (int i : pq) m = std::max(m, std::abs(dq[i]));
        return m;
    };

    pt.mismatch_norm = mismatch_norm();
    pt.iterations = 0;
    while (pt.mismatch_norm > opts.tol && pt.iterations < opts.max_iter) {
        const JacobianBlocks jb = assemble_jacobian(y, pt, c, BusSet::nonslack);
        const Matrix j = jb.assemble();
        std::vector<double> rhs(dim);
        for (int r = 0; r < nt; ++r) rhs[r] = dp[ns[r]];
        for (int r = 0; r < nv; ++r) rhs[nt + r] = dq[pq[r]];
        std::vector<double> step;
        try {
            step = numkit::lu_solve(j, rhs);
        } catch (const SingularMatrix&) {
            throw SingularJacobian("newton_raphson: Jacobian is singular at iteration " +
                                   std::to_string(pt.iterations));
        }
        for (int r = 0; r < nt; ++r) pt.theta[ns[r]] += step[r];
        for (int r = 0; r < nv; ++r) pt.v[pq[r]] += step[nt + r];
        ++pt.iterations;
        pt.mismatch_norm = mismatch_norm();
    }
    compute_injections(y, pt.v, pt.theta, pt.p_inj, pt.q_inj);
    pt.converged = pt.mismatch_norm <= opts.tol;
    return pt;
}

inline OperatingPoint solve_newton_raphson(const NetworkCase& c, const SolveOptions& opts = {}) {
    return solve_newton_raphson(c, netmodel::build_admittance(c), opts);
}

} // namespace pfsense::powerflow
