#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pfsense/sensitivity.hpp"

namespace pfsense::observability {

using netmodel::NetworkCase;
using numkit::Matrix;
using powerflow::BusSet;
using powerflow::JacobianBlocks;
using powerflow::OperatingPoint;
using sensitivity::SensitivityBlocks;

constexpr double kInjectionTol = 1e-6;  // pu, zero-injection threshold
constexpr double kPdTol = 1e-10;        // strictness margin for definiteness flags

// ---------------------------------------------------------------------------
// Power-factor encoding
// ---------------------------------------------------------------------------

/// k(alpha) on the positive branch, alpha in (0, 1].
inline double k_of_alpha(double alpha) {
    if (alpha <= 0.0 || alpha > 1.0) throw DomainError("k_of_alpha: alpha outside (0, 1]");
    return std::sqrt(1.0 - alpha * alpha) / alpha;
}

/// Inverse map alpha = 1/sqrt(k^2 + 1).
inline double k_inverse(double k) { return std::sqrt(1.0 / (k * k + 1.0)); }

/// Bus power factors and the signed K diagonal for one set of net injections.
/// A bus participates in the condition statistics only when it has nonzero net
/// active and apparent power and a strictly lagging factor (q/p > 0); all other
/// entries are markers to be imputed.
struct PowerFactorProfile {
    std::vector<double> alpha;   // NaN where marked
    std::vector<double> signs;   // sign(q*p); 0 where marked
    std::vector<double> k_diag;  // signed q/p where defined; imputed after preprocessing
    std::vector<bool> participating;
    std::vector<int> zero_injection_buses;  // entry indices that were imputed
    std::vector<int> index_map;             // entry -> bus position
    double k_min = 0.0, k_max = 0.0, delta_k = 0.0;
    double alpha_min = 0.0, alpha_max = 0.0;
    bool mixed_sign = false;  // any leading-factor bus seen before imputation
    bool preprocessed = false;
};

/// alpha_i = |p_i| / sqrt(p_i^2 + q_i^2), marker when apparent power is below
/// tolerance. The sign satisfies q_i = K_ii p_i exactly.
inline PowerFactorProfile power_factors(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw DimensionMismatch("power_factors: p/q length mismatch");
    PowerFactorProfile prof;
    const int n = static_cast<int>(p.size());
    prof.alpha.assign(n, std::numeric_limits<double>::quiet_NaN());
    prof.signs.assign(n, 0.0);
    prof.k_diag.assign(n, std::numeric_limits<double>::quiet_NaN());
    prof.participating.assign(n, false);
    prof.index_map.resize(n);
    for (int i = 0; i < n; ++i) {
        prof.index_map[i] = i;
        const double s = std::hypot(p[i], q[i]);
        if (s < kInjectionTol || std::abs(p[i]) < kInjectionTol) continue;  // marker
        prof.alpha[i] = std::abs(p[i]) / s;
        prof.signs[i] = (q[i] * p[i] > 0.0) ? 1.0 : (q[i] * p[i] < 0.0 ? -1.0 : 0.0);
        prof.k_diag[i] = q[i] / p[i];
        prof.participating[i] = true;
    }
    return prof;
}

/// Impute marked diagonal entries with the sample mean of the nonzero positive
/// entries, and normalize the study set: buses with leading or unity factors
/// (k <= 0) are imputed as well, so the spread statistics stay on the strictly lagging branch.
inline PowerFactorProfile preprocess_zero_injections(PowerFactorProfile prof,
                                                     double tol = kInjectionTol) {
    const int n = static_cast<int>(prof.k_diag.size());
    double sum = 0.0;
    int count = 0;
    for (int i = 0; i < n; ++i) {
        if (!prof.participating[i]) continue;
        if (prof.k_diag[i] <= tol) {  // leading or unity factor: demote to marker
            if (prof.k_diag[i] < -tol) prof.mixed_sign = true;
            prof.participating[i] = false;
            continue;
        }
        sum += prof.k_diag[i];
        ++count;
    }
    if (count == 0) throw AllZeroInjections("preprocess_zero_injections: no usable entries");
    const double mean = sum / count;
    prof.zero_injection_buses.clear();
    prof.k_min = std::numeric_limits<double>::infinity();
    prof.k_max = -std::numeric_limits<double>::infinity();
    prof.alpha_min = std::numeric_limits<double>::infinity();
    prof.alpha_max = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        if (!prof.participating[i]) {
            prof.zero_injection_buses.push_back(i);
            prof.k_diag[i] = mean;
            prof.alpha[i] = k_inverse(mean);
            prof.signs[i] = 1.0;
        } else {
            prof.k_min = std::min(prof.k_min, prof.k_diag[i]);
            prof.k_max = std::max(prof.k_max, prof.k_diag[i]);
            prof.alpha_min = std::min(prof.alpha_min, prof.alpha[i]);
            prof.alpha_max = std::max(prof.alpha_max, prof.alpha[i]);
        }
    }
    if (prof.k_min > prof.k_max) {  // everything imputed to the mean
        prof.k_min = prof.k_max = mean;
        prof.alpha_min = prof.alpha_max = k_inverse(mean);
    }
    prof.delta_k = prof.k_max - prof.k_min;
    prof.preprocessed = true;
    return prof;
}

inline Matrix build_K(const PowerFactorProfile& prof) {
    if (!prof.preprocessed) throw DomainError("build_K: profile must be preprocessed first");
    return numkit::diag(prof.k_diag);
}

// ---------------------------------------------------------------------------
// Projected sensitivity matrices
// ---------------------------------------------------------------------------

/// S_dagger = s_v_p + s_v_q K.
inline Matrix s_dagger(const SensitivityBlocks& sb, const Matrix& k) {
    return sb.s_v_p + sb.s_v_q * k;
}

/// S_ddagger = s_v_p K^-1 + s_v_q; requires every K_ii nonzero.
inline Matrix s_ddagger(const SensitivityBlocks& sb, const Matrix& k) {
    Matrix kinv(k.rows(), k.cols());
    for (int i = 0; i < k.rows(); ++i) {
        if (k(i, i) == 0.0) throw SingularK("s_ddagger: K has a zero diagonal entry");
        kinv(i, i) = 1.0 / k(i, i);
    }
    return sb.s_v_p * kinv + sb.s_v_q;
}

// ---------------------------------------------------------------------------
// Observability condition checks
// ---------------------------------------------------------------------------

/// All quantities a Table row carries. Flags are deterministic functions of
/// the numbers; failures are annotations, not exceptions.
struct ObservabilityReport {
    std::string case_name;
    int n = 0;  // analysis bus-set size
    // Assumption 1
    bool assumption1_dp_dtheta_pd = false;
    bool jacobian_invertible = false;
    double lambda_min_j_sv = std::numeric_limits<double>::quiet_NaN();   // smallest singular value
    double lambda_min_j_eig = std::numeric_limits<double>::quiet_NaN();  // smallest |eigenvalue|
    // smallest |eigenvalue| of the all-bus solver-form Jacobian
    double lambda_min_j_solver = std::numeric_limits<double>::quiet_NaN();
    // Power factors
    double alpha_min = std::numeric_limits<double>::quiet_NaN();
    double alpha_max = std::numeric_limits<double>::quiet_NaN();
    double k_min = std::numeric_limits<double>::quiet_NaN();
    double k_max = std::numeric_limits<double>::quiet_NaN();
    double delta_k = std::numeric_limits<double>::quiet_NaN();
    bool mixed_sign_factors = false;
    // Sufficient condition (Neumann bound)
    bool m_positive_definite = false;
    double bound_strict = std::numeric_limits<double>::quiet_NaN();    // ||M^-1||^-1 ||Ptheta||^-1
    double value_neumann = std::numeric_limits<double>::quiet_NaN();   // ||M^-1 dK Ptheta||
    bool thm1_holds = false;
    // Necessary-and-sufficient condition (eigenvalue check)
    double min_eig_s_dagger = std::numeric_limits<double>::quiet_NaN();
    double min_eig_s_ddagger = std::numeric_limits<double>::quiet_NaN();
    bool thm2_holds = false;
    std::string annotation;  // per-case error note, empty when clean
};

/// Sufficient-condition quantities (the Neumann-series bound on the
/// power-factor spread) from square same-set Jacobian blocks and a
/// preprocessed profile over the same buses.
inline void theorem1_check(const JacobianBlocks& jb, const PowerFactorProfile& prof,
                           ObservabilityReport& rep) {
    const Matrix& ptheta = jb.dp_dtheta;
    const Matrix& qtheta = jb.dq_dtheta;
    if (ptheta.rows() != ptheta.cols() || qtheta.rows() != ptheta.rows())
        throw DimensionMismatch("theorem1_check: blocks must be square over one bus set");
    if (static_cast<int>(prof.k_diag.size()) != ptheta.rows())
        throw DimensionMismatch("theorem1_check: profile size differs from block size");

    rep.assumption1_dp_dtheta_pd = numkit::min_real_eig_sym_part(ptheta) > kPdTol;
    const Matrix j = jb.assemble();
    const auto [smin, smax] = numkit::sigma_extrema(j);
    rep.jacobian_invertible = smin > 0.0 && smax / smin < 1e12;
    rep.lambda_min_j_sv = smin;
    double mineig = std::numeric_limits<double>::infinity();
    for (const auto& ev : numkit::eigenvalues(j)) mineig = std::min(mineig, std::abs(ev));
    rep.lambda_min_j_eig = mineig;

    rep.alpha_min = prof.alpha_min;
    rep.alpha_max = prof.alpha_max;
    rep.k_min = prof.k_min;
    rep.k_max = prof.k_max;
    rep.delta_k = prof.delta_k;
    rep.mixed_sign_factors = prof.mixed_sign;

    // M = k_max dp_dtheta - dq_dtheta; dK = k_max I - K
    const Matrix m = prof.k_max * ptheta - qtheta;
    rep.m_positive_definite = numkit::min_real_eig_sym_part(m) > kPdTol;
    Matrix m_inv;
    try {
        m_inv = numkit::inverse(m);
    } catch (const SingularMatrix&) {
        rep.annotation = "M singular";
        return;
    }
    Matrix dk(ptheta.rows(), ptheta.cols());
    for (int i = 0; i < dk.rows(); ++i) dk(i, i) = prof.k_max - prof.k_diag[i];
    rep.value_neumann = numkit::spectral_norm(m_inv * dk * ptheta);
    rep.bound_strict = 1.0 / (numkit::spectral_norm(m_inv) * numkit::spectral_norm(ptheta));
    rep.thm1_holds = rep.value_neumann < 1.0;
}

/// Necessary-and-sufficient condition: minimum eigenvalues of the symmetric
/// parts of S_dagger and S_ddagger; holds iff lambda_min(sym S_dagger) is
/// strictly positive.
inline void theorem2_check(const Matrix& s_dag, const std::optional<Matrix>& s_ddag,
                           ObservabilityReport& rep) {
    rep.min_eig_s_dagger = numkit::min_real_eig_sym_part(s_dag);
    if (s_ddag) rep.min_eig_s_ddagger = numkit::min_real_eig_sym_part(*s_ddag);
    rep.thm2_holds = rep.min_eig_s_dagger > kPdTol;
}

// ---------------------------------------------------------------------------
// Feasible power-factor curve
// ---------------------------------------------------------------------------

/// alpha_min(alpha_max) = k^-1(k(alpha_max) + dk_max), the boundary of the
/// power-factor spreads that satisfy the strict bound.
inline std::vector<std::pair<double, double>> alpha_min_curve(double dk_max,
                                                              const std::vector<double>& alpha_max_grid) {
    std::vector<std::pair<double, double>> curve;
    curve.reserve(alpha_max_grid.size());
    for (double am : alpha_max_grid)
        curve.emplace_back(am, k_inverse(k_of_alpha(am) + dk_max));
    return curve;
}

// ---------------------------------------------------------------------------
// Whole-case evaluation
// ---------------------------------------------------------------------------

/// Solver-form Jacobian over all buses: physical rows for free quantities,
/// identity rows for specified ones (slack angle and magnitude, PV
/// magnitudes). Its smallest |eigenvalue| is the third lambda_min variant the
/// report carries.
inline Matrix solver_form_jacobian(const NetworkCase& c, const netmodel::AdmittanceMatrix& y,
                                   const OperatingPoint& pt) {
    const int n = c.n_bus();
    std::vector<double> p, q;
    powerflow::compute_injections(y, pt.v, pt.theta, p, q);
    Matrix j(2 * n, 2 * n);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            if (i == k) {
                j(i, k) = -q[i] - y.b(i, i) * pt.v[i] * pt.v[i];
                j(i, n + k) = p[i] / pt.v[i] + y.g(i, i) * pt.v[i];
                j(n + i, k) = p[i] - y.g(i, i) * pt.v[i] * pt.v[i];
                j(n + i, n + k) = q[i] / pt.v[i] - y.b(i, i) * pt.v[i];
            } else {
                const double d = pt.theta[i] - pt.theta[k];
                const double gik = y.g(i, k), bik = y.b(i, k);
                j(i, k) = pt.v[i] * pt.v[k] * (gik * std::sin(d) - bik * std::cos(d));
                j(i, n + k) = pt.v[i] * (gik * std::cos(d) + bik * std::sin(d));
                j(n + i, k) = -pt.v[i] * pt.v[k] * (gik * std::cos(d) + bik * std::sin(d));
                j(n + i, n + k) = pt.v[i] * (gik * std::sin(d) - bik * std::cos(d));
            }
        }
    for (int i = 0; i < n; ++i) {
        const netmodel::BusKind kind = c.buses[i].kind;
        if (kind == netmodel::BusKind::slack) {
            for (int k = 0; k < 2 * n; ++k) j(i, k) = 0.0;
            j(i, i) = 1.0;
        }
        if (kind != netmodel::BusKind::pq) {
            for (int k = 0; k < 2 * n; ++k) j(n + i, k) = 0.0;
            j(n + i, n + i) = 1.0;
        }
    }
    return j;
}

/// Build the profile over the analysis bus set from scheduled case injections.
inline PowerFactorProfile case_profile(const NetworkCase& c, const std::vector<int>& bus_index) {
    std::vector<double> p_all, q_all;
    c.scheduled_injections(p_all, q_all);
    std::vector<double> p, q;
    for (int b : bus_index) {
        p.push_back(p_all[b]);
        q.push_back(q_all[b]);
    }
    PowerFactorProfile prof = power_factors(p, q);
    prof.index_map = bus_index;
    return preprocess_zero_injections(prof);
}

struct CheckOptions {
    BusSet bus_set = BusSet::pq;
    /// Evaluate at the solved point by default: fixtures with flat bus tables
    /// (case5, case9, case24) only carry a physically consistent operating
    /// point after a solve; reported quantities all refer to that point.
    bool solve_first = true;
};

/// Evaluate every observability quantity for one case. Errors never escape: the
/// report carries an annotation instead (table rows must render regardless).
inline ObservabilityReport check_case(const NetworkCase& c, const CheckOptions& opts = {}) {
    ObservabilityReport rep;
    rep.case_name = c.name;
    try {
        const netmodel::AdmittanceMatrix y = netmodel::build_admittance(c);
        OperatingPoint pt;
        if (opts.solve_first) {
            pt = powerflow::solve_newton_raphson(c, y);
            if (!pt.converged) {
                rep.annotation = "power flow did not converge";
                return rep;
            }
        } else {
            pt = powerflow::file_point(c, y);
        }
        const std::vector<int> pq = c.pq_indices();
        if (pq.empty()) {
            rep.annotation = "no PQ buses";
            return rep;
        }
        rep.n = static_cast<int>(pq.size());
        const PowerFactorProfile prof = case_profile(c, pq);

        // The Neumann quantities need square same-set blocks, so they always
        // come from the PQ set regardless of the sensitivity bus set.
        const JacobianBlocks jb_pq = powerflow::assemble_jacobian(y, pt, c, BusSet::pq);
        theorem1_check(jb_pq, prof, rep);
        double solver_min = std::numeric_limits<double>::infinity();
        for (const auto& ev : numkit::eigenvalues(solver_form_jacobian(c, y, pt)))
            solver_min = std::min(solver_min, std::abs(ev));
        rep.lambda_min_j_solver = solver_min;

        const JacobianBlocks jb = opts.bus_set == BusSet::pq
                                      ? jb_pq
                                      : powerflow::assemble_jacobian(y, pt, c, BusSet::nonslack);
        SensitivityBlocks sb;
        try {
            sb = sensitivity::invert_jacobian(jb);
        } catch (const SingularJacobian&) {
            rep.annotation = "Jacobian singular";
            return rep;
        }
        const Matrix k = build_K(prof);
        const Matrix sdag = s_dagger(sb, k);
        std::optional<Matrix> sddag;
        try {
            sddag = s_ddagger(sb, k);
        } catch (const SingularK&) {
            rep.annotation = "K singular, S_ddagger skipped";
        }
        theorem2_check(sdag, sddag, rep);
    } catch (const Error& e) {
        rep.annotation = e.what();
    }
    return rep;
}

/// One report row per case; per-case errors embedded as annotations.
inline std::vector<ObservabilityReport> report_table(const std::vector<NetworkCase>& cases,
                                                     const CheckOptions& opts = {}) {
    std::vector<ObservabilityReport> rows;
    rows.reserve(cases.size());
    for (const NetworkCase& c : cases) rows.push_back(check_case(c, opts));
    return rows;
}

} // namespace pfsense::observability
