#pragma once

#include <vector>

#include "pfsense/ami_series.hpp"
#include "pfsense/linalg.hpp"

namespace pfsense::estimation {

using numkit::Matrix;

/// First differences of an AMI series: row t = sample t+1 - sample t, with
/// the injection columns stacked [all P | all Q] to match the wide matrix.
struct AmiDeltas {
    Matrix dv;  // m' x n
    Matrix dp;  // m' x n
    Matrix dq;  // m' x n
    Matrix dx;  // m' x 2n
};

inline AmiDeltas finite_differences(const ami::AmiSeries& s) {
    if (s.m < 2) throw TooShort("finite_differences: need at least two samples");
    AmiDeltas d;
    const int mp = s.m - 1;
    d.dv = Matrix(mp, s.n);
    d.dp = Matrix(mp, s.n);
    d.dq = Matrix(mp, s.n);
    d.dx = Matrix(mp, 2 * s.n);
    for (int t = 0; t < mp; ++t) {
        for (int j = 0; j < s.n; ++j) {
            d.dv(t, j) = s.v(t + 1, j) - s.v(t, j);
            d.dp(t, j) = s.p(t + 1, j) - s.p(t, j);
            d.dq(t, j) = s.q(t + 1, j) - s.q(t, j);
            d.dx(t, j) = d.dp(t, j);
            d.dx(t, s.n + j) = d.dq(t, j);
        }
    }
    return d;
}

/// Phaseless recovery at fixed power factors:
/// dp = S_dagger^-1 dv, dq = K dp.
inline void estimate_injections_phaseless(const Matrix& s_dag, const Matrix& k,
                                          const std::vector<double>& dv, std::vector<double>& dp,
                                          std::vector<double>& dq) {
    try {
        dp = numkit::lu_solve(s_dag, dv);
    } catch (const SingularMatrix&) {
        throw SingularSDagger("estimate_injections_phaseless: S_dagger is singular");
    }
    dq.resize(dp.size());
    for (size_t i = 0; i < dp.size(); ++i) dq[i] = k(static_cast<int>(i), static_cast<int>(i)) * dp[i];
}

/// Least squares for a single perturbed bus: s_perp is the n x 2 matrix
/// [s_v_p[:,l], s_v_q[:,l]]; returns (dp_l, dq_l) via the normal equations.
inline std::pair<double, double> single_bus_lsq(const Matrix& s_perp,
                                                const std::vector<double>& dv) {
    if (s_perp.cols() != 2 || s_perp.rows() != static_cast<int>(dv.size()))
        throw DimensionMismatch("single_bus_lsq: s_perp must be n x 2 matching dv");
    double a = 0, b = 0, c = 0, r0 = 0, r1 = 0;
    for (int i = 0; i < s_perp.rows(); ++i) {
        a += s_perp(i, 0) * s_perp(i, 0);
        b += s_perp(i, 0) * s_perp(i, 1);
        c += s_perp(i, 1) * s_perp(i, 1);
        r0 += s_perp(i, 0) * dv[i];
        r1 += s_perp(i, 1) * dv[i];
    }
    const double det = a * c - b * b;
    const double scale = std::max(a, c);
    if (scale <= 0.0 || std::abs(det) < 1e-14 * scale * scale)
        throw RankDeficient("single_bus_lsq: s_perp is rank deficient");
    return {(c * r0 - b * r1) / det, (a * r1 - b * r0) / det};
}

/// Ridge regression fit of the wide sensitivity matrix:
/// S^T = (dX^T dX + lambda I)^-1 dX^T dV. lambda = 0 requires full-rank
/// normal equations (m' >= 2n).
inline Matrix tikhonov_fit(const AmiDeltas& deltas, double lambda) {
    const Matrix& dx = deltas.dx;
    const Matrix& dv = deltas.dv;
    const Matrix g = transpose(dx) * dx;
    Matrix reg = g;
    for (int i = 0; i < reg.rows(); ++i) reg(i, i) += lambda;
    Matrix st;
    try {
        st = numkit::lu_solve(reg, transpose(dx) * dv);
    } catch (const SingularMatrix&) {
        throw SingularNormalEquations("tikhonov_fit: normal equations singular (need richer data or lambda > 0)");
    }
    return transpose(st);  // n x 2n
}

/// Scale-aware default ridge parameter.
inline double default_lambda(const AmiDeltas& deltas) {
    const Matrix g = transpose(deltas.dx) * deltas.dx;
    double tr = 0.0;
    for (int i = 0; i < g.rows(); ++i) tr += g(i, i);
    return g.rows() > 0 ? 1e-8 * tr / g.rows() : 0.0;
}

} // namespace pfsense::estimation
