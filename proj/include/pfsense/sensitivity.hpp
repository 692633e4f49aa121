#pragma once

#include <complex>
#include <vector>

#include "pfsense/powerflow.hpp"

namespace pfsense::sensitivity {

using netmodel::AdmittanceMatrix;
using netmodel::NetworkCase;
using numkit::Matrix;
using powerflow::BusSet;
using powerflow::JacobianBlocks;
using powerflow::OperatingPoint;

/// Blocks of the inverse Jacobian. s_v_p / s_v_q are the square PQ x PQ
/// voltage-magnitude sensitivities (injection columns restricted to PQ buses
/// when the Jacobian was built over the nonslack set); s_wide = [s_v_p | s_v_q].
struct SensitivityBlocks {
    Matrix s_theta_p;
    Matrix s_theta_q;
    Matrix s_v_p;  // n x n, n = |PQ|
    Matrix s_v_q;  // n x n
    Matrix s_wide; // n x 2n
    BusSet bus_set = BusSet::pq;
    std::vector<int> index_map;  // row -> bus position (PQ buses)
};

/// Invert the full Jacobian and slice out the sensitivity blocks.
/// Throws SingularJacobian when the spectral condition estimate exceeds 1e12.
inline SensitivityBlocks invert_jacobian(const JacobianBlocks& jb) {
    const Matrix j = jb.assemble();
    const auto [smin, smax] = numkit::sigma_extrema(j);
    if (smin <= 0.0 || smax / smin > 1e12)
        throw SingularJacobian("invert_jacobian: condition estimate above 1e12");
    const Matrix jinv = numkit::inverse(j);

    const int nt = static_cast<int>(jb.theta_index.size());
    const int nv = static_cast<int>(jb.v_index.size());

    // Columns of J^-1 pair with the p entries (theta-set buses) then q entries
    // (v-set buses); rows pair with theta then v variables.
    std::vector<int> pq_in_theta;  // positions of PQ buses within theta_index
    for (int s = 0; s < nt; ++s)
        for (int r = 0; r < nv; ++r)
            if (jb.theta_index[s] == jb.v_index[r]) {
                pq_in_theta.push_back(s);
                break;
            }

    SensitivityBlocks sb;
    sb.bus_set = jb.bus_set;
    sb.index_map = jb.v_index;
    sb.s_theta_p = Matrix(nt, nt);
    sb.s_theta_q = Matrix(nt, nv);
    sb.s_v_p = Matrix(nv, nv);
    sb.s_v_q = Matrix(nv, nv);
    for (int r = 0; r < nt; ++r) {
        for (int s = 0; s < nt; ++s) sb.s_theta_p(r, s) = jinv(r, s);
        for (int s = 0; s < nv; ++s) sb.s_theta_q(r, s) = jinv(r, nt + s);
    }
    for (int r = 0; r < nv; ++r) {
        for (int s = 0; s < nv; ++s) {
            sb.s_v_p(r, s) = jinv(nt + r, pq_in_theta[s]);
            sb.s_v_q(r, s) = jinv(nt + r, nt + s);
        }
    }
    sb.s_wide = numkit::hcat(sb.s_v_p, sb.s_v_q);
    return sb;
}

/// Schur-complement route:
///   s_v_q = (dq_dv - dq_dtheta dp_dtheta^-1 dp_dv)^-1
///   s_v_p = -s_v_q dq_dtheta dp_dtheta^-1   (columns restricted to PQ buses)
inline void schur_sensitivities(const JacobianBlocks& jb, Matrix& s_v_q, Matrix& s_v_p) {
    Matrix ptheta_inv;
    try {
        ptheta_inv = numkit::inverse(jb.dp_dtheta);
    } catch (const SingularMatrix&) {
        throw SingularBlock("schur_sensitivities: dp_dtheta is singular");
    }
    const Matrix schur = jb.dq_dv - jb.dq_dtheta * ptheta_inv * jb.dp_dv;
    try {
        s_v_q = numkit::inverse(schur);
    } catch (const SingularMatrix&) {
        throw SingularBlock("schur_sensitivities: Schur complement is singular");
    }
    const Matrix full = -1.0 * (s_v_q * jb.dq_dtheta * ptheta_inv);  // nv x nt
    // keep the PQ columns so the block is square like the inverse route
    const int nv = static_cast<int>(jb.v_index.size());
    s_v_p = Matrix(nv, nv);
    for (int s = 0; s < nv; ++s) {
        int colT = -1;
        for (int t = 0; t < static_cast<int>(jb.theta_index.size()); ++t)
            if (jb.theta_index[t] == jb.v_index[s]) {
                colT = t;
                break;
            }
        for (int r = 0; r < nv; ++r) s_v_p(r, s) = full(r, colT);
    }
}

// ---------------------------------------------------------------------------
// Phasor sensitivities
// ---------------------------------------------------------------------------

/// Complex voltage-phasor sensitivities of all PQ buses to an injection at
/// one target bus.
struct PhasorSensitivity {
    int target_bus = -1;  // bus position
    bool wrt_q = false;
    std::vector<std::complex<double>> dv;  // per PQ bus, order = pq_indices
    std::vector<int> index_map;
};

namespace detail {

/// Assemble the real 2n x 2n system equivalent to the conjugate-coupled
/// phasor equations. Unknown layout: [Re dv_1..n, Im dv_1..n].
inline void phasor_system(const AdmittanceMatrix& y, const OperatingPoint& pt,
                          const std::vector<int>& pq, Matrix& sys) {
    const int n = static_cast<int>(pq.size());
    const int nb = y.n_bus;
    sys = Matrix(2 * n, 2 * n);
    for (int ei = 0; ei < n; ++ei) {
        const int i = pq[ei];
        // a_i = sum over all buses of Y_ik vbar_k  (the conjugated current)
        std::complex<double> a(0.0, 0.0);
        for (int k = 0; k < nb; ++k) {
            const std::complex<double> yik = y.y(i, k);
            if (yik == std::complex<double>(0.0, 0.0)) continue;
            a += yik * std::polar(pt.v[k], pt.theta[k]);
        }
        const std::complex<double> vi_conj = std::conj(std::polar(pt.v[i], pt.theta[i]));
        // conj(u_i) * a contributes to the diagonal unknown i
        sys(ei, ei) += a.real();
        sys(ei, n + ei) += a.imag();
        sys(n + ei, ei) += a.imag();
        sys(n + ei, n + ei) += -a.real();
        // vbar_i^* sum_k Y_ik u_k over PQ buses
        for (int ek = 0; ek < n; ++ek) {
            const std::complex<double> b = vi_conj * y.y(i, pq[ek]);
            sys(ei, ek) += b.real();
            sys(ei, n + ek) += -b.imag();
            sys(n + ei, ek) += b.imag();
            sys(n + ei, n + ek) += b.real();
        }
    }
}

} // namespace detail

/// Solve the phasor-sensitivity linear system for a single target bus l
/// (bus position, must be PQ). wrt_q selects the -j e_l right-hand side.
inline PhasorSensitivity phasor_sensitivities(const AdmittanceMatrix& y, const OperatingPoint& pt,
                                              const NetworkCase& c, int target_bus, bool wrt_q) {
    const std::vector<int> pq = c.pq_indices();
    int el = -1;
    for (int e = 0; e < static_cast<int>(pq.size()); ++e)
        if (pq[e] == target_bus) el = e;
    if (el < 0) throw DomainError("phasor_sensitivities: target bus is not a PQ bus");

    const int n = static_cast<int>(pq.size());
    Matrix sys;
    detail::phasor_system(y, pt, pq, sys);
    std::vector<double> rhs(2 * n, 0.0);
    if (wrt_q)
        rhs[n + el] = -1.0;  // -j at the target equation
    else
        rhs[el] = 1.0;
    const std::vector<double> sol = numkit::lu_solve(sys, rhs);

    PhasorSensitivity ps;
    ps.target_bus = target_bus;
    ps.wrt_q = wrt_q;
    ps.index_map = pq;
    ps.dv.resize(n);
    for (int k = 0; k < n; ++k) ps.dv[k] = {sol[k], sol[n + k]};
    return ps;
}

/// Residual of the defining equations for a computed phasor sensitivity;
/// the plug-back oracle.
inline double phasor_residual(const AdmittanceMatrix& y, const OperatingPoint& pt,
                              const PhasorSensitivity& ps) {
    const std::vector<int>& pq = ps.index_map;
    const int n = static_cast<int>(pq.size());
    double worst = 0.0;
    for (int ei = 0; ei < n; ++ei) {
        const int i = pq[ei];
        std::complex<double> a(0.0, 0.0);
        for (int k = 0; k < y.n_bus; ++k) a += y.y(i, k) * std::polar(pt.v[k], pt.theta[k]);
        std::complex<double> lhs = std::conj(ps.dv[ei]) * a;
        const std::complex<double> vi_conj = std::conj(std::polar(pt.v[i], pt.theta[i]));
        for (int ek = 0; ek < n; ++ek) lhs += vi_conj * y.y(i, pq[ek]) * ps.dv[ek];
        std::complex<double> rhs(0.0, 0.0);
        if (pq[ei] == ps.target_bus) rhs = ps.wrt_q ? std::complex<double>(0.0, -1.0) : std::complex<double>(1.0, 0.0);
        worst = std::max(worst, std::abs(lhs - rhs));
    }
    return worst;
}

/// Magnitude projection dv_i/dx_l = Re{vbar_i^* dvbar_i/dx_l} / v_i.
inline std::vector<double> magnitude_from_phasor(const OperatingPoint& pt,
                                                 const PhasorSensitivity& ps) {
    std::vector<double> out(ps.dv.size());
    for (size_t k = 0; k < ps.dv.size(); ++k) {
        const int bus = ps.index_map[k];
        if (pt.v[bus] <= 1e-9) throw ZeroVoltage("magnitude_from_phasor: |v| below 1e-9");
        const std::complex<double> vbar = std::polar(pt.v[bus], pt.theta[bus]);
        out[k] = (std::conj(vbar) * ps.dv[k]).real() / pt.v[bus];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Distinctness report (excluded zero sets of the uniqueness lemma)
// ---------------------------------------------------------------------------

struct DistinctnessReport {
    std::vector<std::pair<int, int>> violations;  // (row, col) entry pairs
    int pairs_checked = 0;
};

/// Flags entry pairs where the p- and q-sensitivities coincide within tol or
/// either is below tol in magnitude.
inline DistinctnessReport distinctness_check(const Matrix& s_v_p, const Matrix& s_v_q,
                                             double tol) {
    if (!s_v_p.same_shape(s_v_q)) throw DimensionMismatch("distinctness_check: shape mismatch");
    DistinctnessReport rep;
    for (int i = 0; i < s_v_p.rows(); ++i) {
        for (int l = 0; l < s_v_p.cols(); ++l) {
            ++rep.pairs_checked;
            const double sp = s_v_p(i, l), sq = s_v_q(i, l);
            if (std::abs(sp - sq) <= tol || std::abs(sp) <= tol || std::abs(sq) <= tol)
                rep.violations.emplace_back(i, l);
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Perturb-and-observe
// ---------------------------------------------------------------------------

/// Empirical sensitivities: re-solve the power flow with a small injection
/// added at one PQ bus at a time and difference the voltage magnitudes.
/// Columns follow the PQ ordering; solves warm-start from the base point.
inline void perturb_and_observe(const NetworkCase& c, const AdmittanceMatrix& y,
                                const OperatingPoint& base, Matrix& s_v_p_emp,
                                Matrix& s_v_q_emp, double eps = 1e-4) {
    if (eps == 0.0) throw DomainError("perturb_and_observe: eps must be nonzero");
    const std::vector<int> pq = c.pq_indices();
    const int n = static_cast<int>(pq.size());
    s_v_p_emp = Matrix(n, n);
    s_v_q_emp = Matrix(n, n);

    for (int col = 0; col < n; ++col) {
        for (int which = 0; which < 2; ++which) {
            NetworkCase pert = c;
            // additional injection = extra negative load at the bus
            const double dmw = eps * c.base_mva;
            if (which == 0)
                pert.buses[pq[col]].p_load -= dmw;
            else
                pert.buses[pq[col]].q_load -= dmw;
            powerflow::SolveOptions opts;
            opts.warm_start = &base;
            const OperatingPoint sol = powerflow::solve_newton_raphson(pert, y, opts);
            if (!sol.converged)
                throw NoConvergence("perturb_and_observe: solve failed at column " +
                                    std::to_string(col));
            Matrix& target = which == 0 ? s_v_p_emp : s_v_q_emp;
            for (int r = 0; r < n; ++r) target(r, col) = (sol.v[pq[r]] - base.v[pq[r]]) / eps;
        }
    }
}

} // namespace pfsense::sensitivity
