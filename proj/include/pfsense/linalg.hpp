#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <vector>

#include "pfsense/matrix.hpp"

namespace pfsense::numkit {

// ---------------------------------------------------------------------------
// LU factorization with partial pivoting
// ---------------------------------------------------------------------------

struct LuFactors {
    Matrix lu;              // combined L (unit lower) and U
    std::vector<int> perm;  // row permutation
    int sign = 1;
};

/// Factor a square matrix with partial pivoting. Throws SingularMatrix when a
/// pivot falls below 1e-14 * max|a_ij|.
inline LuFactors lu_factor(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionMismatch("lu_factor: matrix not square");
    const int n = a.rows();
    LuFactors f{a, std::vector<int>(n), 1};
    std::iota(f.perm.begin(), f.perm.end(), 0);
    const double scale = max_abs(a);
    const double tiny = 1e-14 * (scale > 0 ? scale : 1.0);
    Matrix& lu = f.lu;
    for (int k = 0; k < n; ++k) {
        int piv = k;
        double best = std::abs(lu(k, k));
        for (int i = k + 1; i < n; ++i) {
            if (std::abs(lu(i, k)) > best) {
                best = std::abs(lu(i, k));
                piv = i;
            }
        }
        if (best < tiny) throw SingularMatrix("lu_factor: pivot below threshold");
        if (piv != k) {
            for (int j = 0; j < n; ++j) std::swap(lu(k, j), lu(piv, j));
            std::swap(f.perm[k], f.perm[piv]);
            f.sign = -f.sign;
        }
        const double pivot = lu(k, k);
        for (int i = k + 1; i < n; ++i) {
            lu(i, k) /= pivot;
            const double lik = lu(i, k);
            if (lik == 0.0) continue;
            for (int j = k + 1; j < n; ++j) lu(i, j) -= lik * lu(k, j);
        }
    }
    return f;
}

inline std::vector<double> lu_solve_one(const LuFactors& f, const std::vector<double>& b) {
    const int n = f.lu.rows();
    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) x[i] = b[f.perm[i]];
    for (int i = 1; i < n; ++i)
        for (int j = 0; j < i; ++j) x[i] -= f.lu(i, j) * x[j];
    for (int i = n - 1; i >= 0; --i) {
        for (int j = i + 1; j < n; ++j) x[i] -= f.lu(i, j) * x[j];
        x[i] /= f.lu(i, i);
    }
    return x;
}

/// Solve a X = B for possibly many right-hand sides.
inline Matrix lu_solve(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw DimensionMismatch("lu_solve: rhs rows differ from a");
    const LuFactors f = lu_factor(a);
    Matrix x(b.rows(), b.cols());
    for (int j = 0; j < b.cols(); ++j) x.set_col(j, lu_solve_one(f, b.col(j)));
    return x;
}

inline std::vector<double> lu_solve(const Matrix& a, const std::vector<double>& b) {
    if (a.rows() != static_cast<int>(b.size()))
        throw DimensionMismatch("lu_solve: rhs size differs from a");
    return lu_solve_one(lu_factor(a), b);
}

inline Matrix inverse(const Matrix& a) { return lu_solve(a, Matrix::identity(a.rows())); }

// ---------------------------------------------------------------------------
// Singular value decomposition (one-sided Jacobi)
// ---------------------------------------------------------------------------

struct SvdFactors {
    Matrix u;                   // rows x k, orthonormal columns
    std::vector<double> sigma;  // k nonincreasing, nonnegative
    Matrix v;                   // cols x k, orthonormal columns
};

namespace detail {

// Orthonormal completion for zero singular directions so U^T U = I holds even
// for rank-deficient inputs.
inline void complete_column(Matrix& m, int col) {
    const int rows = m.rows();
    for (int attempt = 0; attempt < rows; ++attempt) {
        std::vector<double> cand(rows, 0.0);
        cand[attempt] = 1.0;
        for (int j = 0; j < m.cols(); ++j) {
            if (j == col) continue;
            double proj = 0.0;
            for (int i = 0; i < rows; ++i) proj += cand[i] * m(i, j);
            for (int i = 0; i < rows; ++i) cand[i] -= proj * m(i, j);
        }
        const double nrm = norm2(cand);
        if (nrm > 1e-6) {
            for (int i = 0; i < rows; ++i) m(i, col) = cand[i] / nrm;
            return;
        }
    }
}

} // namespace detail

/// Thin SVD via one-sided Jacobi rotations. Deterministic; accurate for the
/// dense, modest-size matrices handled here.
inline SvdFactors svd(const Matrix& a) {
    if (a.rows() < a.cols()) {
        SvdFactors f = svd(transpose(a));
        std::swap(f.u, f.v);
        return f;
    }
    const int m = a.rows(), n = a.cols();
    Matrix b = a;
    Matrix v = Matrix::identity(n);
    const double eps = 1e-15;
    for (int sweep = 0; sweep < 64; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (int i = 0; i < m; ++i) {
                    app += b(i, p) * b(i, p);
                    aqq += b(i, q) * b(i, q);
                    apq += b(i, p) * b(i, q);
                }
                if (std::abs(apq) <= eps * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int i = 0; i < m; ++i) {
                    const double bp = b(i, p), bq = b(i, q);
                    b(i, p) = c * bp - s * bq;
                    b(i, q) = s * bp + c * bq;
                }
                for (int i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }
    SvdFactors f;
    f.sigma.resize(n);
    f.u = Matrix(m, n);
    std::vector<int> order(n);
    std::vector<double> nrm(n);
    for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int i = 0; i < m; ++i) s += b(i, j) * b(i, j);
        nrm[j] = std::sqrt(s);
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return nrm[x] > nrm[y]; });
    Matrix vs(n, n);
    const double rank_tol = (m > 0 ? nrm[order[0]] : 0.0) * 1e-300;
    for (int j = 0; j < n; ++j) {
        const int src = order[j];
        f.sigma[j] = nrm[src];
        for (int i = 0; i < n; ++i) vs(i, j) = v(i, src);
        if (nrm[src] > rank_tol && nrm[src] > 0.0) {
            for (int i = 0; i < m; ++i) f.u(i, j) = b(i, src) / nrm[src];
        } else {
            f.sigma[j] = 0.0;
            detail::complete_column(f.u, j);
        }
    }
    f.v = vs;
    return f;
}

/// Frobenius-optimal rank-r approximation from SVD factors.
inline Matrix truncate(const SvdFactors& f, int r) {
    const int k = std::min<int>(r, static_cast<int>(f.sigma.size()));
    Matrix out(f.u.rows(), f.v.rows());
    for (int t = 0; t < k; ++t) {
        if (f.sigma[t] == 0.0) break;
        for (int i = 0; i < out.rows(); ++i) {
            const double us = f.u(i, t) * f.sigma[t];
            if (us == 0.0) continue;
            for (int j = 0; j < out.cols(); ++j) out(i, j) += us * f.v(j, t);
        }
    }
    return out;
}

/// Singular value thresholding: U diag(max(sigma - tau, 0)) V^T, the proximal
/// operator of tau * nuclear norm.
inline Matrix svt(const Matrix& a, double tau) {
    SvdFactors f = svd(a);
    for (double& s : f.sigma) s = std::max(s - tau, 0.0);
    Matrix out(a.rows(), a.cols());
    for (size_t t = 0; t < f.sigma.size(); ++t) {
        if (f.sigma[t] == 0.0) continue;
        for (int i = 0; i < out.rows(); ++i) {
            const double us = f.u(i, static_cast<int>(t)) * f.sigma[t];
            if (us == 0.0) continue;
            for (int j = 0; j < out.cols(); ++j) out(i, j) += us * f.v(j, static_cast<int>(t));
        }
    }
    return out;
}

inline double nuclear_norm(const Matrix& a) {
    const SvdFactors f = svd(a);
    return std::accumulate(f.sigma.begin(), f.sigma.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Spectral norm by power iteration on A^T A
// ---------------------------------------------------------------------------

/// Largest singular value. Power iteration on A^T A, all-ones seed plus one
/// graded second seed to guard against an orthogonal start, tolerance 1e-12,
/// capped at 10000 iterations. Kept independent of svd() so the two can be
/// cross-checked.
inline double spectral_norm(const Matrix& a) {
    const int n = a.cols();
    if (n == 0 || a.rows() == 0) return 0.0;
    if (max_abs(a) == 0.0) return 0.0;
    const Matrix at = transpose(a);
    auto apply_ata = [&](const std::vector<double>& x) { return at * (a * x); };
    auto run = [&](std::vector<double> x) {
        double nx = norm2(x);
        for (double& e : x) e /= nx;
        double val = 0.0;
        for (int it = 0; it < 10000; ++it) {
            std::vector<double> y = apply_ata(x);
            const double lam = dot(x, y);
            const double ny = norm2(y);
            if (ny == 0.0) return 0.0;
            for (double& e : y) e /= ny;
            x = y;
            const double next = std::sqrt(std::max(lam, 0.0));
            if (std::abs(next - val) <= 1e-12 * std::max(1.0, next) && it > 2) return next;
            val = next;
        }
        return val;
    };
    std::vector<double> ones(n, 1.0), graded(n);
    for (int i = 0; i < n; ++i) graded[i] = 1.0 + i;
    return std::max(run(ones), run(graded));
}

// ---------------------------------------------------------------------------
// Symmetric eigenvalues (cyclic Jacobi)
// ---------------------------------------------------------------------------

/// Eigenvalues of a symmetric matrix, ascending. Input symmetry is assumed,
/// only the upper triangle is read.
inline std::vector<double> sym_eigenvalues(const Matrix& s) {
    if (s.rows() != s.cols()) throw DimensionMismatch("sym_eigenvalues: matrix not square");
    const int n = s.rows();
    Matrix a = s;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j) a(i, j) = a(j, i);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (off <= 1e-30 * std::max(1.0, max_abs(a) * max_abs(a))) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - sn * aiq;
                    a(i, q) = sn * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = a(p, i), aqi = a(q, i);
                    a(p, i) = c * api - sn * aqi;
                    a(q, i) = sn * api + c * aqi;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (int i = 0; i < n; ++i) ev[i] = a(i, i);
    std::sort(ev.begin(), ev.end());
    return ev;
}

/// lambda_min((A + A^T)/2): the quadratic-form notion of definiteness for a
/// possibly nonsymmetric matrix.
inline double min_real_eig_sym_part(const Matrix& a) {
    const std::vector<double> ev = sym_eigenvalues(symmetric_part(a));
    return ev.empty() ? 0.0 : ev.front();
}

// ---------------------------------------------------------------------------
// General real eigenvalues (Hessenberg + Francis double-shift QR)
// ---------------------------------------------------------------------------

namespace detail {

inline void balance(Matrix& a) {
    const int n = a.rows();
    const double radix = 2.0;
    bool done = false;
    while (!done) {
        done = true;
        for (int i = 0; i < n; ++i) {
            double r = 0.0, c = 0.0;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                c += std::abs(a(j, i));
                r += std::abs(a(i, j));
            }
            if (c == 0.0 || r == 0.0) continue;
            double g = r / radix, f = 1.0, s = c + r;
            while (c < g) {
                f *= radix;
                c *= radix * radix;
            }
            g = r * radix;
            while (c > g) {
                f /= radix;
                c /= radix * radix;
            }
            if ((c + r) / f < 0.95 * s) {
                done = false;
                g = 1.0 / f;
                for (int j = 0; j < n; ++j) a(i, j) *= g;
                for (int j = 0; j < n; ++j) a(j, i) *= f;
            }
        }
    }
}

inline void hessenberg(Matrix& a) {
    const int n = a.rows();
    for (int m = 1; m < n - 1; ++m) {
        double x = 0.0;
        int i = m;
        for (int j = m; j < n; ++j) {
            if (std::abs(a(j, m - 1)) > std::abs(x)) {
                x = a(j, m - 1);
                i = j;
            }
        }
        if (i != m) {
            for (int j = m - 1; j < n; ++j) std::swap(a(i, j), a(m, j));
            for (int j = 0; j < n; ++j) std::swap(a(j, i), a(j, m));
        }
        if (x != 0.0) {
            for (i = m + 1; i < n; ++i) {
                double y = a(i, m - 1);
                if (y == 0.0) continue;
                y /= x;
                a(i, m - 1) = y;
                for (int j = m; j < n; ++j) a(i, j) -= y * a(m, j);
                for (int j = 0; j < n; ++j) a(j, m) += y * a(j, i);
            }
        }
    }
    for (int i = 2; i < n; ++i)
        for (int j = 0; j < i - 1; ++j) a(i, j) = 0.0;
}

// Francis QR on an upper Hessenberg matrix; returns eigenvalues.
inline std::vector<std::complex<double>> hqr(Matrix& a) {
    const int n = a.rows();
    std::vector<std::complex<double>> w(n);
    double anorm = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = std::max(i - 1, 0); j < n; ++j) anorm += std::abs(a(i, j));
    int nn = n - 1;
    double t = 0.0;
    while (nn >= 0) {
        int its = 0;
        int l;
        do {
            for (l = nn; l >= 1; --l) {
                const double s = std::abs(a(l - 1, l - 1)) + std::abs(a(l, l));
                const double scale = (s == 0.0 ? anorm : s);
                if (std::abs(a(l, l - 1)) + scale == scale) {
                    a(l, l - 1) = 0.0;
                    break;
                }
            }
            double x = a(nn, nn);
            if (l == nn) {
                w[nn--] = std::complex<double>(x + t, 0.0);
            } else {
                double y = a(nn - 1, nn - 1);
                double zw = a(nn, nn - 1) * a(nn - 1, nn);
                if (l == nn - 1) {
                    const double p = 0.5 * (y - x);
                    const double q = p * p + zw;
                    const double z = std::sqrt(std::abs(q));
                    const double xt = x + t;
                    if (q >= 0.0) {
                        const double zz = p + (p >= 0 ? z : -z);
                        w[nn - 1] = w[nn] = std::complex<double>(xt + zz, 0.0);
                        if (zz != 0.0) w[nn] = std::complex<double>(xt - zw / zz, 0.0);
                    } else {
                        w[nn - 1] = std::complex<double>(xt + p, z);
                        w[nn] = std::conj(w[nn - 1]);
                    }
                    nn -= 2;
                } else {
                    if (its == 60) throw NoConvergence("eigenvalues: QR iteration cap reached");
                    double p = 0, q = 0, z = 0, r = 0, s = 0;
                    if (its == 10 || its == 20 || its == 30 || its == 40 || its == 50) {
                        // exceptional shift
                        t += x;
                        for (int i = 0; i <= nn; ++i) a(i, i) -= x;
                        s = std::abs(a(nn, nn - 1)) + std::abs(a(nn - 1, nn - 2));
                        x = y = 0.75 * s;
                        zw = -0.4375 * s * s;
                    }
                    ++its;
                    int m;
                    for (m = nn - 2; m >= l; --m) {
                        z = a(m, m);
                        r = x - z;
                        s = y - z;
                        p = (r * s - zw) / a(m + 1, m) + a(m, m + 1);
                        q = a(m + 1, m + 1) - z - r - s;
                        r = a(m + 2, m + 1);
                        s = std::abs(p) + std::abs(q) + std::abs(r);
                        p /= s;
                        q /= s;
                        r /= s;
                        if (m == l) break;
                        const double u = std::abs(a(m, m - 1)) * (std::abs(q) + std::abs(r));
                        const double v = std::abs(p) * (std::abs(a(m - 1, m - 1)) + std::abs(z) +
                                                        std::abs(a(m + 1, m + 1)));
                        if (u + v == v) break;
                    }
                    for (int i = m + 2; i <= nn; ++i) {
                        a(i, i - 2) = 0.0;
                        if (i != m + 2) a(i, i - 3) = 0.0;
                    }
                    for (int k = m; k <= nn - 1; ++k) {
                        if (k != m) {
                            p = a(k, k - 1);
                            q = a(k + 1, k - 1);
                            r = (k != nn - 1 ? a(k + 2, k - 1) : 0.0);
                            x = std::abs(p) + std::abs(q) + std::abs(r);
                            if (x != 0.0) {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        s = std::sqrt(p * p + q * q + r * r);
                        if (p < 0) s = -s;
                        if (s == 0.0) continue;
                        if (k == m) {
                            if (l != m) a(k, k - 1) = -a(k, k - 1);
                        } else {
                            a(k, k - 1) = -s * x;
                        }
                        p += s;
                        x = p / s;
                        y = q / s;
                        z = r / s;
                        q /= p;
                        r /= p;
                        for (int j = k; j <= nn; ++j) {
                            p = a(k, j) + q * a(k + 1, j);
                            if (k != nn - 1) {
                                p += r * a(k + 2, j);
                                a(k + 2, j) -= p * z;
                            }
                            a(k + 1, j) -= p * y;
                            a(k, j) -= p * x;
                        }
                        const int mmin = (nn < k + 3 ? nn : k + 3);
                        for (int i = l; i <= mmin; ++i) {
                            p = x * a(i, k) + y * a(i, k + 1);
                            if (k != nn - 1) {
                                p += z * a(i, k + 2);
                                a(i, k + 2) -= p * r;
                            }
                            a(i, k + 1) -= p * q;
                            a(i, k) -= p;
                        }
                    }
                }
            }
        } while (l + 1 < nn + 1 && nn >= 0);
    }
    return w;
}

} // namespace detail

/// All eigenvalues of a square real matrix (complex in general).
inline std::vector<std::complex<double>> eigenvalues(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionMismatch("eigenvalues: matrix not square");
    if (a.rows() == 0) return {};
    if (a.rows() == 1) return {std::complex<double>(a(0, 0), 0.0)};
    Matrix h = a;
    detail::balance(h);
    detail::hessenberg(h);
    return detail::hqr(h);
}

/// Smallest and largest singular values, for condition estimates.
inline std::pair<double, double> sigma_extrema(const Matrix& a) {
    const SvdFactors f = svd(a);
    if (f.sigma.empty()) return {0.0, 0.0};
    return {f.sigma.back(), f.sigma.front()};
}

} // namespace pfsense::numkit
