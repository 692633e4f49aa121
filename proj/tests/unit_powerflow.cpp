#include <doctest.h>

#include <random>

#include "pfsense/powerflow.hpp"
#include "test_helpers.hpp"

using namespace pfsense;
using namespace pfsense::netmodel;
using namespace pfsense::powerflow;
using numkit::Matrix;

namespace {

NetworkCase two_bus_line(double r, double x, double p_load_mw, double q_load_mw) {
    NetworkCase c;
    c.base_mva = 100;
    c.buses = {Bus{1, BusKind::slack, 0, 0, 0, 0, 1.0, 0, 138},
               Bus{2, BusKind::pq, p_load_mw, q_load_mw, 0, 0, 1.0, 0, 138}};
    c.branches = {Branch{1, 2, r, x, 0.0, 0.0, 0.0, true}};
    validate(c);
    return c;
}

double block_disagreement(const JacobianBlocks& a, const JacobianBlocks& b) {
    auto worst = [](const Matrix& x, const Matrix& y) {
        double w = 0.0;
        for (int i = 0; i < x.rows(); ++i)
            for (int j = 0; j < x.cols(); ++j) {
                const double tol = std::max(1e-6, 1e-4 * std::abs(x(i, j)));
                w = std::max(w, std::abs(x(i, j) - y(i, j)) / tol);
            }
        return w;
    };
    double w = worst(a.dp_dtheta, b.dp_dtheta);
    w = std::max(w, worst(a.dp_dv, b.dp_dv));
    w = std::max(w, worst(a.dq_dtheta, b.dq_dtheta));
    w = std::max(w, worst(a.dq_dv, b.dq_dv));
    return w;  // <= 1 means within the entry-wise tolerance
}

} // namespace

TEST_CASE("mismatch is zero at flat start with no injections and no shunts") {
    NetworkCase c = two_bus_line(0.01, 0.1, 0, 0);
    const AdmittanceMatrix y = build_admittance(c);
    std::vector<double> dp, dq;
    power_mismatch(y, {1.0, 1.0}, {0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}, dp, dq);
    CHECK(numkit::norm_inf(dp) < 1e-14);
    CHECK(numkit::norm_inf(dq) < 1e-14);
}

TEST_CASE("two-bus susceptance line injection from the power balance equations") {
    // B off-diagonal 10, theta2 - theta1 = 0.1, unit magnitudes: the bus-2
    // injection is +10 sin(0.1); the power delivered at bus 2 is its negative.
    NetworkCase c = two_bus_line(0.0, 0.1, 0, 0);
    const AdmittanceMatrix y = build_admittance(c);
    std::vector<double> p, q;
    compute_injections(y, {1.0, 1.0}, {0.0, 0.1}, p, q);
    CHECK(p[1] == doctest::Approx(10.0 * std::sin(0.1)).epsilon(1e-12));
    CHECK(-p[1] == doctest::Approx(-0.9983).epsilon(1e-3));
}

TEST_CASE("power_mismatch rejects wrong-size inputs") {
    NetworkCase c = two_bus_line(0.0, 0.1, 0, 0);
    const AdmittanceMatrix y = build_admittance(c);
    std::vector<double> dp, dq;
    CHECK_THROWS_AS(power_mismatch(y, {1.0}, {0.0}, {0.0}, {0.0}, dp, dq), DimensionMismatch);
}

TEST_CASE("newton raphson: zero-injection network converges immediately") {
    NetworkCase c = two_bus_line(0.01, 0.1, 0, 0);
    const OperatingPoint pt = solve_newton_raphson(c);
    CHECK(pt.converged);
    CHECK(pt.iterations == 0);
    CHECK(pt.v[1] == doctest::Approx(1.0));
    CHECK(pt.theta[1] == doctest::Approx(0.0));
}

TEST_CASE("newton raphson two-bus matches the closed-form quadratic") {
    // z = j0.1, load 0.5 pu, q = 0: v2 = cos(theta2) and 10 v2 sin(theta2) = -0.5
    // give v2^4 - v2^2 + 0.0025 = 0.
    NetworkCase c = two_bus_line(0.0, 0.1, 50.0, 0.0);
    const OperatingPoint pt = solve_newton_raphson(c);
    REQUIRE(pt.converged);
    const double v2 = std::sqrt((1.0 + std::sqrt(1.0 - 4 * 0.05 * 0.05)) / 2.0);
    CHECK(pt.v[1] == doctest::Approx(v2).epsilon(1e-10));
    CHECK(pt.theta[1] == doctest::Approx(std::asin(-0.05 / v2)).epsilon(1e-10));
}

TEST_CASE("case9 converges from flat start within 6 iterations") {
    const NetworkCase c = testutil::load_case("case9.m");
    const OperatingPoint pt = solve_newton_raphson(c);
    REQUIRE(pt.converged);
    CHECK(pt.iterations <= 6);
    CHECK(pt.mismatch_norm <= 1e-8);

    // fixed point: mismatch at the solution is below tolerance everywhere
    const AdmittanceMatrix y = build_admittance(c);
    std::vector<double> ps, qs, dp, dq;
    c.scheduled_injections(ps, qs);
    power_mismatch(y, pt.v, pt.theta, ps, qs, dp, dq);
    for (int i : c.nonslack_indices()) CHECK(std::abs(dp[i]) <= 1e-8);
    for (int i : c.pq_indices()) CHECK(std::abs(dq[i]) <= 1e-8);
}

TEST_CASE("solver reconverges to the same point from a perturbed start") {
    for (const char* name : {"case9.m", "case14.m", "case30.m"}) {
        const NetworkCase c = testutil::load_case(name);
        const OperatingPoint base = solve_newton_raphson(c);
        REQUIRE(base.converged);
        OperatingPoint start = base;
        std::mt19937 rng(7);
        std::uniform_real_distribution<double> noise(-0.01, 0.01);
        for (int i : c.pq_indices()) {
            start.v[i] *= 1.0 + noise(rng);
            start.theta[i] += noise(rng);
        }
        SolveOptions opts;
        opts.warm_start = &start;
        const OperatingPoint again = solve_newton_raphson(c, opts);
        REQUIRE(again.converged);
        for (int i = 0; i < c.n_bus(); ++i) {
            CHECK(std::abs(again.v[i] - base.v[i]) < 1e-8);
            CHECK(std::abs(again.theta[i] - base.theta[i]) < 1e-8);
        }
    }
}

TEST_CASE("analytic jacobian matches central differences on every bundled case") {
    for (const char* name :
         {"case5.m", "case9.m", "case14.m", "case24.m", "case30.m", "case4_radial.m"}) {
        const NetworkCase c = testutil::load_case(name);
        const AdmittanceMatrix y = build_admittance(c);
        const OperatingPoint pt = solve_newton_raphson(c);
        REQUIRE(pt.converged);
        for (BusSet set : {BusSet::pq, BusSet::nonslack}) {
            const JacobianBlocks a = assemble_jacobian(y, pt, c, set);
            const JacobianBlocks fd = finite_difference_jacobian(y, pt, c, set);
            CHECK(block_disagreement(a, fd) <= 1.0);
        }
    }
}

TEST_CASE("jacobian agreement at a randomly perturbed case14 point") {
    const NetworkCase c = testutil::load_case("case14.m");
    const AdmittanceMatrix y = build_admittance(c);
    OperatingPoint pt = solve_newton_raphson(c);
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> noise(-0.03, 0.03);
    for (int i = 0; i < c.n_bus(); ++i) {
        pt.v[i] *= 1.0 + noise(rng);
        pt.theta[i] += noise(rng);
    }
    const JacobianBlocks a = assemble_jacobian(y, pt, c, BusSet::nonslack);
    const JacobianBlocks fd = finite_difference_jacobian(y, pt, c, BusSet::nonslack);
    CHECK(numkit::max_abs(a.dp_dtheta - fd.dp_dtheta) < 1e-5);
    CHECK(numkit::max_abs(a.dp_dv - fd.dp_dv) < 1e-5);
    CHECK(numkit::max_abs(a.dq_dtheta - fd.dq_dtheta) < 1e-5);
    CHECK(numkit::max_abs(a.dq_dv - fd.dq_dv) < 1e-5);
}

TEST_CASE("central differences converge at second order in h") {
    const NetworkCase c = testutil::load_case("case9.m");
    const AdmittanceMatrix y = build_admittance(c);
    const OperatingPoint pt = solve_newton_raphson(c);
    const JacobianBlocks exact = assemble_jacobian(y, pt, c, BusSet::pq);
    const JacobianBlocks fd1 = finite_difference_jacobian(y, pt, c, BusSet::pq, 2e-4);
    const JacobianBlocks fd2 = finite_difference_jacobian(y, pt, c, BusSet::pq, 1e-4);
    const double e1 = numkit::max_abs(fd1.dp_dtheta - exact.dp_dtheta);
    const double e2 = numkit::max_abs(fd2.dp_dtheta - exact.dp_dtheta);
    CHECK(e2 < e1 / 3.0);  // quartering up to roundoff
}

TEST_CASE("finite differences reject h <= 0") {
    const NetworkCase c = testutil::load_case("case9.m");
    const AdmittanceMatrix y = build_admittance(c);
    const OperatingPoint pt = powerflow::file_point(c, y);
    CHECK_THROWS_AS(finite_difference_jacobian(y, pt, c, BusSet::pq, 0.0), DomainError);
}

TEST_CASE("two-bus flat-start jacobian entries") {
    NetworkCase c = two_bus_line(0.0, 0.1, 0, 0);
    const AdmittanceMatrix y = build_admittance(c);
    const OperatingPoint pt = powerflow::file_point(c, y);
    const JacobianBlocks jb = assemble_jacobian(y, pt, c, BusSet::pq);
    REQUIRE(jb.dp_dtheta.rows() == 1);
    CHECK(jb.dp_dtheta(0, 0) == doctest::Approx(10.0));
    CHECK(jb.dq_dv(0, 0) == doctest::Approx(10.0));
}

TEST_CASE("decoupled buses give a diagonal dp_dtheta") {
    // two PQ buses tied only to the slack: no off-diagonal coupling
    NetworkCase c;
    c.base_mva = 100;
    c.buses = {Bus{1, BusKind::slack, 0, 0, 0, 0, 1.0, 0, 138},
               Bus{2, BusKind::pq, 10, 2, 0, 0, 1.0, 0, 138},
               Bus{3, BusKind::pq, 5, 1, 0, 0, 1.0, 0, 138}};
    c.branches = {Branch{1, 2, 0.01, 0.1, 0, 0, 0, true}, Branch{1, 3, 0.01, 0.1, 0, 0, 0, true}};
    validate(c);
    const AdmittanceMatrix y = build_admittance(c);
    const OperatingPoint pt = solve_newton_raphson(c);
    const JacobianBlocks jb = assemble_jacobian(y, pt, c, BusSet::pq);
    CHECK(jb.dp_dtheta(0, 1) == doctest::Approx(0.0));
    CHECK(jb.dp_dtheta(1, 0) == doctest::Approx(0.0));
}

TEST_CASE("fixtures carrying a stored solution are reproduced by the solver") {
    // case14 and case30 ship solved bus tables; the solver must land on them
    // within the file's rounding precision
    struct Expect {
        const char* name;
        double v_tol;
    };
    for (const Expect e : {Expect{"case14.m", 2e-3}, Expect{"case30.m", 3e-3}}) {
        const NetworkCase c = testutil::load_case(e.name);
        const OperatingPoint pt = solve_newton_raphson(c);
        REQUIRE(pt.converged);
        for (int i = 0; i < c.n_bus(); ++i)
            CHECK(std::abs(pt.v[i] - c.buses[i].v_init) < e.v_tol);
    }
}
