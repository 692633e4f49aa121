#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pfsense/linalg.hpp"

namespace pfsense::lowrank {

using numkit::Matrix;

/// Partially known matrix. omega marks UNKNOWN entries; s0 is zero there.
/// The mask is stored explicitly so a genuinely zero sensitivity is not
/// confused with a missing one.
struct MaskedMatrix {
    Matrix s0;
    std::vector<bool> omega;  // row-major, true = unknown
    double known_fraction = 1.0;

    static MaskedMatrix from_parts(const Matrix& values, const std::vector<bool>& unknown) {
        if (static_cast<int>(unknown.size()) != values.rows() * values.cols())
            throw DimensionMismatch("MaskedMatrix: mask size differs from matrix");
        MaskedMatrix mm;
        mm.s0 = values;
        mm.omega = unknown;
        int hidden = 0;
        for (size_t i = 0; i < unknown.size(); ++i) {
            if (unknown[i]) {
                mm.s0.data()[i] = 0.0;
                ++hidden;
            }
        }
        mm.known_fraction = unknown.empty() ? 1.0 : 1.0 - static_cast<double>(hidden) / unknown.size();
        return mm;
    }

    bool unknown(int i, int j) const { return omega[static_cast<size_t>(i) * s0.cols() + j]; }
};

struct CompletionResult {
    Matrix s_hat;
    std::vector<double> objective_trace;
    int iterations = 0;
    bool converged = false;
    double rel_fro_error_vs_reference = std::numeric_limits<double>::quiet_NaN();
};

inline double rel_fro_error(const Matrix& est, const Matrix& truth) {
    const double denom = numkit::norm_fro(truth);
    return denom == 0.0 ? numkit::norm_fro(est) : numkit::norm_fro(est - truth) / denom;
}

// ---------------------------------------------------------------------------
// Rank-constrained completion (hard-impute)
// ---------------------------------------------------------------------------

/// Alternate (i) restore known entries, (ii) truncate to rank r, until the
/// iterate stalls. Known entries are restored exactly on output.
inline CompletionResult complete_rank_constrained(const MaskedMatrix& mm, int r, int iters = 200,
                                                  double tol = 1e-8) {
    CompletionResult res;
    Matrix s = mm.s0;
    const double scale = std::max(numkit::norm_fro(mm.s0), 1e-30);
    for (int it = 0; it < iters; ++it) {
        // impose known entries, then project to rank r
        Matrix filled = s;
        for (int i = 0; i < filled.rows(); ++i)
            for (int j = 0; j < filled.cols(); ++j)
                if (!mm.unknown(i, j)) filled(i, j) = mm.s0(i, j);
        const numkit::SvdFactors f = numkit::svd(filled);
        Matrix next = numkit::truncate(f, r);
        double obj = 0.0;  // masked data misfit on known entries
        for (int i = 0; i < next.rows(); ++i)
            for (int j = 0; j < next.cols(); ++j)
                if (!mm.unknown(i, j)) {
                    const double d = next(i, j) - mm.s0(i, j);
                    obj += d * d;
                }
        res.objective_trace.push_back(obj);
        const double change = numkit::norm_fro(next - s);
        s = next;
        res.iterations = it + 1;
        if (change <= tol * scale) {
            res.converged = true;
            break;
        }
    }
    // known entries exact on output
    for (int i = 0; i < s.rows(); ++i)
        for (int j = 0; j < s.cols(); ++j)
            if (!mm.unknown(i, j)) s(i, j) = mm.s0(i, j);
    res.s_hat = s;
    return res;
}

// ---------------------------------------------------------------------------
// Nuclear-norm programs via projected proximal gradient
// ---------------------------------------------------------------------------

namespace detail {

/// Project the deviation of the known entries from s0 onto the delta-ball.
inline void project_known_ball(Matrix& s, const MaskedMatrix& mm, double delta) {
    double dev = 0.0;
    for (int i = 0; i < s.rows(); ++i)
        for (int j = 0; j < s.cols(); ++j)
            if (!mm.unknown(i, j)) {
                const double d = s(i, j) - mm.s0(i, j);
                dev += d * d;
            }
    dev = std::sqrt(dev);
    if (dev <= delta) return;
    const double shrink = delta == 0.0 ? 0.0 : delta / dev;
    for (int i = 0; i < s.rows(); ++i)
        for (int j = 0; j < s.cols(); ++j)
            if (!mm.unknown(i, j)) s(i, j) = mm.s0(i, j) + shrink * (s(i, j) - mm.s0(i, j));
}

} // namespace detail

/// min ||s0 - S||_F^2 + lambda ||S||_*  s.t.  known-entry deviation <= delta.
/// Proximal gradient with step 1/2 (the data-term Lipschitz constant is 1 in
/// the 1/(2L) convention), SVT for the nuclear term, then the ball projection.
/// A monotone safeguard keeps objective_trace nonincreasing.
inline CompletionResult complete_nuclear(const MaskedMatrix& mm, double lambda, double delta,
                                         int iters = 1000, double tol = 1e-8) {
    if (lambda < 0 || delta < 0) throw DomainError("complete_nuclear: lambda, delta must be >= 0");
    CompletionResult res;
    Matrix s = mm.s0;  // feasible start: known deviation is zero
    auto objective = [&](const Matrix& x) {
        const Matrix d = mm.s0 - x;
        return numkit::norm_fro(d) * numkit::norm_fro(d) + lambda * numkit::nuclear_norm(x);
    };
    double obj = objective(s);
    res.objective_trace.push_back(obj);
    const double scale = std::max(numkit::norm_fro(mm.s0), 1e-30);
    const double step = 0.5;
    for (int it = 0; it < iters; ++it) {
        Matrix grad = 2.0 * (s - mm.s0);
        Matrix cand = numkit::svt(s - step * grad, step * lambda);
        detail::project_known_ball(cand, mm, delta);
        const double cand_obj = objective(cand);
        res.iterations = it + 1;
        if (cand_obj > obj + 1e-12) {  // safeguard: never accept an ascent step
            res.converged = true;
            break;
        }
        const double change = numkit::norm_fro(cand - s);
        s = cand;
        obj = cand_obj;
        res.objective_trace.push_back(obj);
        if (change <= tol * scale) {
            res.converged = true;
            break;
        }
    }
    res.s_hat = s;
    return res;
}

/// min ||S dX^T - dV^T||_F^2 + lambda ||S||_*  s.t.  known-entry deviation <= delta.
/// Same scheme with the regression gradient 2 (S dX^T - dV^T) dX and step
/// 1/(2L), L = 2 sigma_max(dX^T dX).
inline CompletionResult fit_partial_nuclear(const Matrix& dx, const Matrix& dv,
                                            const MaskedMatrix& mm, double lambda, double delta,
                                            int iters = 1000, double tol = 1e-8) {
    if (lambda < 0 || delta < 0) throw DomainError("fit_partial_nuclear: lambda, delta must be >= 0");
    const Matrix dxt = transpose(dx);        // 2n x m'
    const Matrix dvt = transpose(dv);        // n x m'
    const double smax = numkit::spectral_norm(dxt * dx);
    const double lips = std::max(2.0 * smax, 1e-12);
    const double step = 1.0 / (2.0 * lips);

    CompletionResult res;
    Matrix s = mm.s0;
    auto objective = [&](const Matrix& x) {
        const Matrix r = x * dxt - dvt;
        return numkit::norm_fro(r) * numkit::norm_fro(r) + lambda * numkit::nuclear_norm(x);
    };
    double obj = objective(s);
    res.objective_trace.push_back(obj);
    const double scale = std::max(numkit::norm_fro(mm.s0), 1.0);
    for (int it = 0; it < iters; ++it) {
        const Matrix grad = 2.0 * ((s * dxt - dvt) * dx);
        Matrix cand = numkit::svt(s - step * grad, step * lambda);
        detail::project_known_ball(cand, mm, delta);
        const double cand_obj = objective(cand);
        res.iterations = it + 1;
        if (cand_obj > obj + 1e-12) {
            res.converged = true;
            break;
        }
        const double change = numkit::norm_fro(cand - s);
        s = cand;
        obj = cand_obj;
        res.objective_trace.push_back(obj);
        if (change <= tol * scale) {
            res.converged = true;
            break;
        }
    }
    res.s_hat = s;
    return res;
}

// ---------------------------------------------------------------------------
// Online smoothed estimator
// ---------------------------------------------------------------------------

/// Exponentially weighted history of past estimates, kept as one running
/// matrix. Algebraically exact for the quadratic penalty, so the state stays
/// O(n^2) regardless of how many steps were absorbed.
struct OnlineState {
    Matrix history_sum;   // H_t = sum_s gamma^s * S_hat_{t-s}
    double weight = 0.0;  // w_t = sum_s gamma^s
    Matrix last_estimate;
    int steps = 0;
};

struct OnlineOptions {
    double lambda = 1.25e-4;
    double c = 1e-8;
    double gamma = 0.9;
    double delta = 0.06;
    int iters = 500;
    double tol = 1e-9;
};

/// One step of the online convex program: fit the newest (dv_t, dx_t) pair
/// under nuclear-norm regularization and the exponential smoothing penalty.
inline CompletionResult online_update(OnlineState& state, const std::vector<double>& dv_t,
                                      const std::vector<double>& dx_t, const MaskedMatrix& mm,
                                      const OnlineOptions& opts = {}) {
    const int n = static_cast<int>(dv_t.size());
    const int n2 = static_cast<int>(dx_t.size());
    if (mm.s0.rows() != n || mm.s0.cols() != n2)
        throw DimensionMismatch("online_update: mask shape differs from data");
    if (state.steps == 0) {
        state.history_sum = Matrix(n, n2);
        state.weight = 0.0;
        state.last_estimate = mm.s0;
    }
    // absorb the previous estimate into the smoother
    if (state.steps > 0) {
        state.history_sum = opts.gamma * (state.last_estimate + state.history_sum);
        state.weight = opts.gamma * (1.0 + state.weight);
    }
    const double cw = opts.c * state.weight;
    Matrix target(n, n2);  // H_t / w_t
    if (state.weight > 0.0) target = (1.0 / state.weight) * state.history_sum;

    const double xnorm2 = numkit::dot(dx_t, dx_t);
    const double lips = std::max(2.0 * (xnorm2 + cw), 1e-12);
    const double step = 1.0 / (2.0 * lips);

    auto objective = [&](const Matrix& s) {
        std::vector<double> pred = s * dx_t;
        double fit = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d = dv_t[i] - pred[i];
            fit += d * d;
        }
        double smooth = 0.0;
        if (cw > 0.0) {
            const Matrix d = s - target;
            smooth = cw * numkit::norm_fro(d) * numkit::norm_fro(d);
        }
        return fit + smooth + opts.lambda * numkit::nuclear_norm(s);
    };

    CompletionResult res;
    Matrix s = state.last_estimate;
    double obj = objective(s);
    res.objective_trace.push_back(obj);
    for (int it = 0; it < opts.iters; ++it) {
        // grad = 2 (S dx - dv) dx^T + 2 c w (S - target)
        const std::vector<double> pred = s * dx_t;
        Matrix grad(n, n2);
        for (int i = 0; i < n; ++i) {
            const double ri = 2.0 * (pred[i] - dv_t[i]);
            if (ri != 0.0)
                for (int j = 0; j < n2; ++j) grad(i, j) = ri * dx_t[j];
        }
        if (cw > 0.0) grad = grad + (2.0 * cw) * (s - target);
        Matrix cand = numkit::svt(s - step * grad, step * opts.lambda);
        detail::project_known_ball(cand, mm, opts.delta);
        const double cand_obj = objective(cand);
        res.iterations = it + 1;
        if (cand_obj > obj + 1e-12) {
            res.converged = true;
            break;
        }
        const double change = numkit::norm_fro(cand - s);
        s = cand;
        obj = cand_obj;
        res.objective_trace.push_back(obj);
        if (change <= opts.tol * std::max(1.0, numkit::norm_fro(s))) {
            res.converged = true;
            break;
        }
    }
    res.s_hat = s;
    state.last_estimate = s;
    state.steps += 1;
    return res;
}

// ---------------------------------------------------------------------------
// Spectral report
// ---------------------------------------------------------------------------

struct SpectralGroup {
    std::string name;
    std::vector<double> sigma;             // raw singular values
    std::vector<double> sigma_normalized;  // sigma / sigma_1 of this group
};

/// Singular values of the whole matrix plus each column group, normalized by
/// the leading value.
inline std::vector<SpectralGroup> spectral_report(const Matrix& s,
                                                  const std::vector<std::pair<std::string, std::vector<int>>>& groups) {
    std::vector<SpectralGroup> out;
    auto push = [&](const std::string& name, const Matrix& block) {
        SpectralGroup g;
        g.name = name;
        g.sigma = numkit::svd(block).sigma;
        g.sigma_normalized = g.sigma;
        if (!g.sigma.empty() && g.sigma.front() > 0.0)
            for (double& x : g.sigma_normalized) x /= g.sigma.front();
        out.push_back(std::move(g));
    };
    push("all", s);
    std::vector<int> all_rows(s.rows());
    for (int i = 0; i < s.rows(); ++i) all_rows[i] = i;
    for (const auto& [name, cols] : groups) {
        if (cols.empty()) throw EmptyGroup("spectral_report: empty column group '" + name + "'");
        push(name, numkit::submatrix(s, all_rows, cols));
    }
    return out;
}

} // namespace pfsense::lowrank
