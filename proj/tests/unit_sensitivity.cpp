#include <doctest.h>

#include "pfsense/sensitivity.hpp"
#include "test_helpers.hpp"

using namespace pfsense;
using namespace pfsense::netmodel;
using namespace pfsense::powerflow;
using namespace pfsense::sensitivity;
using numkit::Matrix;

namespace {

struct Setup {
    NetworkCase c;
    AdmittanceMatrix y;
    OperatingPoint pt;
    JacobianBlocks jb;
    SensitivityBlocks sb;
};

Setup solve_and_invert(const std::string& name, BusSet set) {
    Setup s{testutil::load_case(name), {}, {}, {}, {}};
    s.y = build_admittance(s.c);
    s.pt = solve_newton_raphson(s.c, s.y);
    REQUIRE(s.pt.converged);
    s.jb = assemble_jacobian(s.y, s.pt, s.c, set);
    s.sb = invert_jacobian(s.jb);
    return s;
}

} // namespace

TEST_CASE("invert_jacobian of identity blocks is identity") {
    JacobianBlocks jb;
    jb.bus_set = BusSet::pq;
    jb.theta_index = {1, 2};
    jb.v_index = {1, 2};
    jb.dp_dtheta = Matrix::identity(2);
    jb.dp_dv = Matrix(2, 2);
    jb.dq_dtheta = Matrix(2, 2);
    jb.dq_dv = Matrix::identity(2);
    const SensitivityBlocks sb = invert_jacobian(jb);
    CHECK(testutil::max_abs_diff(sb.s_theta_p, Matrix::identity(2)) < 1e-14);
    CHECK(testutil::max_abs_diff(sb.s_v_q, Matrix::identity(2)) < 1e-14);
    CHECK(numkit::max_abs(sb.s_v_p) < 1e-14);
    CHECK(sb.s_wide.cols() == 4);
}

TEST_CASE("inverse blocks satisfy S * J = I on case9") {
    for (BusSet set : {BusSet::pq, BusSet::nonslack}) {
        const Setup s = solve_and_invert("case9.m", set);
        const Matrix j = s.jb.assemble();
        const Matrix jinv = numkit::inverse(j);
        CHECK(numkit::max_abs(jinv * j - Matrix::identity(j.rows())) < 1e-8);
        // s_v_q block sits at the v-rows / q-cols corner
        const int nt = static_cast<int>(s.jb.theta_index.size());
        const int nv = static_cast<int>(s.jb.v_index.size());
        for (int r = 0; r < nv; ++r)
            for (int col = 0; col < nv; ++col)
                CHECK(s.sb.s_v_q(r, col) == doctest::Approx(jinv(nt + r, nt + col)).epsilon(1e-12));
    }
}

TEST_CASE("singular jacobian is rejected with a condition estimate") {
    JacobianBlocks jb;
    jb.bus_set = BusSet::pq;
    jb.theta_index = {1, 2};
    jb.v_index = {1, 2};
    // duplicated rows: exactly singular
    jb.dp_dtheta = Matrix(2, 2, {1, 2, 1, 2});
    jb.dp_dv = Matrix(2, 2, {3, 4, 3, 4});
    jb.dq_dtheta = Matrix(2, 2, {5, 6, 5, 6});
    jb.dq_dv = Matrix(2, 2, {7, 8, 7, 8});
    CHECK_THROWS_AS(invert_jacobian(jb), SingularJacobian);
}

TEST_CASE("schur route reproduces the inverse-route blocks") {
    for (const char* name : {"case9.m", "case4_radial.m", "case4_dist.m"}) {
        for (BusSet set : {BusSet::pq, BusSet::nonslack}) {
            const Setup s = solve_and_invert(name, set);
            Matrix s_v_q, s_v_p;
            schur_sensitivities(s.jb, s_v_q, s_v_p);
            CHECK(testutil::max_abs_diff(s_v_q, s.sb.s_v_q) < 1e-8);
            CHECK(testutil::max_abs_diff(s_v_p, s.sb.s_v_p) < 1e-8);
        }
    }
}

TEST_CASE("schur on diagonal blocks matches the scalar closed form") {
    JacobianBlocks jb;
    jb.bus_set = BusSet::pq;
    jb.theta_index = {1};
    jb.v_index = {1};
    jb.dp_dtheta = Matrix(1, 1, {4.0});
    jb.dp_dv = Matrix(1, 1, {1.0});
    jb.dq_dtheta = Matrix(1, 1, {-2.0});
    jb.dq_dv = Matrix(1, 1, {3.0});
    Matrix s_v_q, s_v_p;
    schur_sensitivities(jb, s_v_q, s_v_p);
    // s_v_q = 1/(3 - (-2)(1/4)) = 1/3.5; s_v_p = -s_v_q * (-2) / 4
    CHECK(s_v_q(0, 0) == doctest::Approx(1.0 / 3.5).epsilon(1e-14));
    CHECK(s_v_p(0, 0) == doctest::Approx(0.5 / 3.5).epsilon(1e-14));
}

TEST_CASE("schur reports a singular dp_dtheta") {
    JacobianBlocks jb;
    jb.bus_set = BusSet::pq;
    jb.theta_index = {1, 2};
    jb.v_index = {1, 2};
    jb.dp_dtheta = Matrix(2, 2, {1, 1, 1, 1});
    jb.dp_dv = Matrix::identity(2);
    jb.dq_dtheta = Matrix::identity(2);
    jb.dq_dv = Matrix::identity(2);
    Matrix a, b;
    CHECK_THROWS_AS(schur_sensitivities(jb, a, b), SingularBlock);
}

TEST_CASE("phasor sensitivities satisfy their defining equations") {
    for (const char* name : {"case4_dist.m", "case4_radial.m"}) {
        const NetworkCase c = testutil::load_case(name);
        const AdmittanceMatrix y = build_admittance(c);
        const OperatingPoint pt = solve_newton_raphson(c, y);
        REQUIRE(pt.converged);
        for (int l : c.pq_indices()) {
            for (bool wrt_q : {false, true}) {
                const PhasorSensitivity ps = phasor_sensitivities(y, pt, c, l, wrt_q);
                CHECK(phasor_residual(y, pt, ps) < 1e-10);
            }
        }
    }
}

TEST_CASE("phasor route rejects non-PQ target buses") {
    const NetworkCase c = testutil::load_case("case9.m");
    const AdmittanceMatrix y = build_admittance(c);
    const OperatingPoint pt = solve_newton_raphson(c, y);
    CHECK_THROWS_AS(phasor_sensitivities(y, pt, c, c.slack_index, false), DomainError);
}

TEST_CASE("reactive right-hand side is -j e_l: q-solution differs from p-solution") {
    const NetworkCase c = testutil::load_case("case4_radial.m");
    const AdmittanceMatrix y = build_admittance(c);
    const OperatingPoint pt = solve_newton_raphson(c, y);
    const int l = c.pq_indices()[1];
    const PhasorSensitivity pp = phasor_sensitivities(y, pt, c, l, false);
    const PhasorSensitivity pq = phasor_sensitivities(y, pt, c, l, true);
    double diff = 0.0;
    for (size_t k = 0; k < pp.dv.size(); ++k) diff = std::max(diff, std::abs(pp.dv[k] - pq.dv[k]));
    CHECK(diff > 1e-6);
    CHECK(phasor_residual(y, pt, pq) < 1e-10);
}

TEST_CASE("magnitude projection: tangential phasor movement has zero magnitude change") {
    OperatingPoint pt;
    pt.v = {1.02};
    pt.theta = {0.3};
    PhasorSensitivity ps;
    ps.target_bus = 0;
    ps.index_map = {0};
    // dv parallel to j*vbar: pure rotation, magnitude unchanged
    const std::complex<double> vbar = std::polar(1.02, 0.3);
    ps.dv = {std::complex<double>(0, 1) * vbar};
    CHECK(magnitude_from_phasor(pt, ps)[0] == doctest::Approx(0.0));
    // dv parallel to vbar, unit length: magnitude sensitivity 1
    ps.dv = {vbar / std::abs(vbar)};
    CHECK(magnitude_from_phasor(pt, ps)[0] == doctest::Approx(1.0));
}

TEST_CASE("magnitude projection rejects near-zero voltage") {
    OperatingPoint pt;
    pt.v = {1e-12};
    pt.theta = {0.0};
    PhasorSensitivity ps;
    ps.target_bus = 0;
    ps.index_map = {0};
    ps.dv = {{1.0, 0.0}};
    CHECK_THROWS_AS(magnitude_from_phasor(pt, ps), ZeroVoltage);
}

TEST_CASE("phasor-route magnitudes match inverse-jacobian columns on radial fixtures") {
    for (const char* name : {"case4_radial.m", "case4_dist.m"}) {
        const Setup s = solve_and_invert(name, BusSet::pq);
        const std::vector<int> pq = s.c.pq_indices();
        for (int e = 0; e < static_cast<int>(pq.size()); ++e) {
            const auto mp =
                magnitude_from_phasor(s.pt, phasor_sensitivities(s.y, s.pt, s.c, pq[e], false));
            const auto mq =
                magnitude_from_phasor(s.pt, phasor_sensitivities(s.y, s.pt, s.c, pq[e], true));
            for (int r = 0; r < static_cast<int>(pq.size()); ++r) {
                CHECK(mp[r] == doctest::Approx(s.sb.s_v_p(r, e)).epsilon(1e-8));
                CHECK(mq[r] == doctest::Approx(s.sb.s_v_q(r, e)).epsilon(1e-8));
            }
        }
    }
}

TEST_CASE("distinctness check: radial fixture has no violating pairs") {
    const Setup s = solve_and_invert("case4_dist.m", BusSet::pq);
    const DistinctnessReport rep = distinctness_check(s.sb.s_v_p, s.sb.s_v_q, 1e-9);
    CHECK(rep.violations.empty());
    CHECK(rep.pairs_checked == 9);
}

TEST_CASE("distinctness check flags equal columns and the infinite-tolerance boundary") {
    Matrix a(2, 2, {1, 2, 3, 4});
    const DistinctnessReport all_equal = distinctness_check(a, a, 1e-12);
    CHECK(all_equal.violations.size() == 4);
    Matrix b(2, 2, {5, 6, 7, 8});
    const DistinctnessReport inf_tol =
        distinctness_check(a, b, std::numeric_limits<double>::infinity());
    CHECK(inf_tol.violations.size() == 4);
    const DistinctnessReport none = distinctness_check(a, b, 1e-12);
    CHECK(none.violations.empty());
}

TEST_CASE("perturb-and-observe agrees with the analytic sensitivities") {
    // nonslack reduction is the physical response when PV buses regulate
    const Setup s = solve_and_invert("case9.m", BusSet::nonslack);
    Matrix emp_p, emp_q;
    perturb_and_observe(s.c, s.y, s.pt, emp_p, emp_q, 1e-5);
    CHECK(testutil::max_abs_diff(emp_p, s.sb.s_v_p) < 1e-4);
    CHECK(testutil::max_abs_diff(emp_q, s.sb.s_v_q) < 1e-4);
}

TEST_CASE("perturb-and-observe first-order symmetry in eps") {
    const Setup s = solve_and_invert("case4_radial.m", BusSet::pq);
    Matrix p_plus, q_plus, p_minus, q_minus;
    perturb_and_observe(s.c, s.y, s.pt, p_plus, q_plus, 1e-4);
    perturb_and_observe(s.c, s.y, s.pt, p_minus, q_minus, -1e-4);
    // forward/backward perturbations differ by O(eps) only
    CHECK(testutil::max_abs_diff(p_plus, p_minus) < 1e-3);
    CHECK(testutil::max_abs_diff(q_plus, q_minus) < 1e-3);
}

TEST_CASE("perturb-and-observe rejects eps = 0") {
    const Setup s = solve_and_invert("case4_radial.m", BusSet::pq);
    Matrix a, b;
    CHECK_THROWS_AS(perturb_and_observe(s.c, s.y, s.pt, a, b, 0.0), DomainError);
}

TEST_CASE("three-route agreement on bundled cases") {
    for (const char* name : {"case9.m", "case4_radial.m", "case4_dist.m"}) {
        const BusSet set = std::string(name) == "case9.m" ? BusSet::nonslack : BusSet::pq;
        const Setup s = solve_and_invert(name, set);
        Matrix schur_q, schur_p;
        schur_sensitivities(s.jb, schur_q, schur_p);
        Matrix emp_p, emp_q;
        perturb_and_observe(s.c, s.y, s.pt, emp_p, emp_q, 1e-5);
        CHECK(testutil::max_abs_diff(schur_p, s.sb.s_v_p) < 1e-8);
        CHECK(testutil::max_abs_diff(schur_q, s.sb.s_v_q) < 1e-8);
        CHECK(testutil::max_abs_diff(emp_p, s.sb.s_v_p) < 1e-4);
        CHECK(testutil::max_abs_diff(emp_q, s.sb.s_v_q) < 1e-4);
    }
}

TEST_CASE("wide matrix has full row rank on bundled cases") {
    for (const char* name : {"case9.m", "case14.m", "case4_radial.m", "case4_dist.m"}) {
        const Setup s = solve_and_invert(name, BusSet::pq);
        const auto f = numkit::svd(s.sb.s_wide);
        CHECK(static_cast<int>(f.sigma.size()) >= s.sb.s_wide.rows());
        CHECK(f.sigma[s.sb.s_wide.rows() - 1] > 1e-10 * f.sigma[0]);
    }
}
