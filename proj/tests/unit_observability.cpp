#include <doctest.h>

#include <cmath>

#include "pfsense/observability.hpp"
#include "test_helpers.hpp"

using namespace pfsense;
using namespace pfsense::netmodel;
using namespace pfsense::powerflow;
using namespace pfsense::observability;
using numkit::Matrix;

TEST_CASE("power factors from the 3-4-5 triangle") {
    const PowerFactorProfile prof = power_factors({3.0}, {4.0});
    CHECK(prof.alpha[0] == doctest::Approx(0.6));
    CHECK(prof.k_diag[0] == doctest::Approx(4.0 / 3.0));
    CHECK(prof.participating[0]);
}

TEST_CASE("unity power factor gives k = 0; zero injection is a marker") {
    const PowerFactorProfile unity = power_factors({1.0}, {0.0});
    CHECK(unity.alpha[0] == doctest::Approx(1.0));
    CHECK(unity.k_diag[0] == doctest::Approx(0.0));
    const PowerFactorProfile zero = power_factors({0.0}, {0.0});
    CHECK_FALSE(zero.participating[0]);
    CHECK(std::isnan(zero.alpha[0]));
}

TEST_CASE("k_of_alpha analytic values and reference spot values") {
    CHECK(k_of_alpha(1.0 / std::sqrt(2.0)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(k_of_alpha(0.894) == doctest::Approx(0.5).epsilon(3e-3));
    CHECK(k_of_alpha(2.0 / std::sqrt(5.0)) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(k_of_alpha(1.0) == doctest::Approx(0.0));
    CHECK_THROWS_AS(k_of_alpha(0.0), DomainError);
    CHECK_THROWS_AS(k_of_alpha(1.5), DomainError);
    CHECK_THROWS_AS(k_of_alpha(-0.5), DomainError);
}

TEST_CASE("k roundtrip over a 1000-point grid") {
    for (int i = 1; i <= 1000; ++i) {
        const double alpha = i / 1000.0;
        CHECK(std::abs(k_inverse(k_of_alpha(alpha)) - alpha) < 1e-12);
    }
}

TEST_CASE("zero-injection imputation follows the stated mean rule") {
    PowerFactorProfile prof = power_factors({1.0, 0.0, 1.0}, {0.5, 0.0, 0.3});
    const PowerFactorProfile out = preprocess_zero_injections(prof);
    CHECK(out.k_diag[0] == doctest::Approx(0.5));
    CHECK(out.k_diag[1] == doctest::Approx(0.4));  // mean of 0.5 and 0.3
    CHECK(out.k_diag[2] == doctest::Approx(0.3));
    CHECK(out.zero_injection_buses == std::vector<int>{1});
    CHECK(out.delta_k == doctest::Approx(0.2));
    CHECK(out.preprocessed);
}

TEST_CASE("profile without markers is unchanged; all markers is an error") {
    PowerFactorProfile clean = power_factors({1.0, 2.0}, {0.5, 0.8});
    const PowerFactorProfile out = preprocess_zero_injections(clean);
    CHECK(out.k_diag[0] == doctest::Approx(0.5));
    CHECK(out.k_diag[1] == doctest::Approx(0.4));
    CHECK(out.zero_injection_buses.empty());

    PowerFactorProfile empty = power_factors({0.0, 0.0}, {0.0, 0.0});
    CHECK_THROWS_AS(preprocess_zero_injections(empty), AllZeroInjections);
}

TEST_CASE("leading power factors are imputed and flagged") {
    // q*p < 0 at the second bus: demoted to a marker, mixed_sign set
    PowerFactorProfile prof = power_factors({1.0, 2.0, 1.0}, {0.5, -0.4, 0.25});
    const PowerFactorProfile out = preprocess_zero_injections(prof);
    CHECK(out.mixed_sign);
    CHECK(out.k_diag[1] == doctest::Approx(0.375));  // mean of 0.5 and 0.25
    CHECK(out.k_max == doctest::Approx(0.5));
    CHECK(out.k_min == doctest::Approx(0.25));
}

TEST_CASE("signed K reproduces q = K p exactly") {
    const std::vector<double> p{-0.9, 1.2, -0.4};
    const std::vector<double> q{-0.3, 0.6, 0.1};
    const PowerFactorProfile prof = power_factors(p, q);
    for (int i = 0; i < 3; ++i) CHECK(prof.k_diag[i] * p[i] == doctest::Approx(q[i]).epsilon(1e-15));
    // signed branch matches +-sqrt(1-a^2)/a
    for (int i = 0; i < 3; ++i)
        CHECK(std::abs(prof.k_diag[i]) ==
              doctest::Approx(std::sqrt(1 - prof.alpha[i] * prof.alpha[i]) / prof.alpha[i]));
}

TEST_CASE("s_dagger and s_ddagger identities") {
    sensitivity::SensitivityBlocks sb;
    sb.s_v_p = Matrix(2, 2, {1, 2, 3, 4});
    sb.s_v_q = Matrix(2, 2, {5, 6, 7, 8});
    const Matrix k_id = Matrix::identity(2);
    CHECK(testutil::max_abs_diff(s_dagger(sb, k_id), sb.s_v_p + sb.s_v_q) < 1e-14);
    // K = 0: s_dagger collapses to s_v_p, s_ddagger undefined
    const Matrix k0(2, 2);
    CHECK(testutil::max_abs_diff(s_dagger(sb, k0), sb.s_v_p) < 1e-14);
    CHECK_THROWS_AS(s_ddagger(sb, k0), SingularK);
    // S_ddagger = S_dagger K^-1 for invertible K
    Matrix k(2, 2);
    k(0, 0) = 0.5;
    k(1, 1) = 0.25;
    Matrix kinv(2, 2);
    kinv(0, 0) = 2.0;
    kinv(1, 1) = 4.0;
    CHECK(testutil::max_abs_diff(s_ddagger(sb, k), s_dagger(sb, k) * kinv) < 1e-10);
}

TEST_CASE("theorem 2 boundary cases") {
    ObservabilityReport rep;
    theorem2_check(-1.0 * Matrix::identity(3), std::nullopt, rep);
    CHECK_FALSE(rep.thm2_holds);
    CHECK(rep.min_eig_s_dagger == doctest::Approx(-1.0));
    theorem2_check(Matrix::identity(3), Matrix::identity(3), rep);
    CHECK(rep.thm2_holds);
    CHECK(rep.min_eig_s_ddagger == doctest::Approx(1.0));
}

TEST_CASE("case4_dist reproduces the reference observability quantities") {
    const NetworkCase c = testutil::load_case("case4_dist.m");
    const ObservabilityReport rep = check_case(c);
    CHECK(rep.annotation.empty());
    CHECK(rep.assumption1_dp_dtheta_pd);
    CHECK(rep.jacobian_invertible);
    // uniform power factor 0.894: K = 0.5 I, spread zero, value zero
    CHECK(rep.k_min == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(rep.k_max == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(rep.delta_k == doctest::Approx(0.0));
    CHECK(rep.value_neumann == doctest::Approx(0.0));
    CHECK(rep.thm1_holds);
    CHECK(rep.min_eig_s_dagger == doctest::Approx(2.3e-3).epsilon(0.2));
    CHECK(rep.min_eig_s_ddagger == doctest::Approx(4.6e-3).epsilon(0.2));
    CHECK(rep.min_eig_s_ddagger == doctest::Approx(2.0 * rep.min_eig_s_dagger).epsilon(1e-9));
    CHECK(rep.thm2_holds);
}

TEST_CASE("uniform power factors make the Neumann value exactly zero") {
    const NetworkCase c = testutil::load_case("case4_dist.m");
    const AdmittanceMatrix y = build_admittance(c);
    const OperatingPoint pt = solve_newton_raphson(c, y);
    const JacobianBlocks jb = assemble_jacobian(y, pt, c, BusSet::pq);
    const PowerFactorProfile prof = case_profile(c, c.pq_indices());
    ObservabilityReport rep;
    theorem1_check(jb, prof, rep);
    CHECK(rep.value_neumann == doctest::Approx(0.0));
    CHECK(rep.bound_strict > 0.0);
}

TEST_CASE("alpha_min curve analytics") {
    const double dk_max = 0.25;
    std::vector<double> grid;
    for (int i = 1; i <= 50; ++i) grid.push_back(i / 50.0);
    const auto curve = alpha_min_curve(dk_max, grid);
    REQUIRE(curve.size() == 50);
    // alpha_max = 1 end point equals k_inverse(dk_max)
    CHECK(curve.back().first == doctest::Approx(1.0));
    CHECK(curve.back().second == doctest::Approx(k_inverse(dk_max)).epsilon(1e-12));
    // nondecreasing in alpha_max
    for (size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].second >= curve[i - 1].second - 1e-15);
    // zero spread: identity map
    const auto ident = alpha_min_curve(0.0, grid);
    for (size_t i = 0; i < ident.size(); ++i)
        CHECK(ident[i].second == doctest::Approx(ident[i].first).epsilon(1e-12));
}

TEST_CASE("report table over the bundled meshed cases matches the reference flag set") {
    std::vector<NetworkCase> cases;
    for (const char* name : {"case5.m", "case9.m", "case14.m", "case24.m", "case30.m"})
        cases.push_back(testutil::load_case(name));
    const auto rows = report_table(cases);
    REQUIRE(rows.size() == 5);
    const bool thm1_expect[] = {true, true, true, true, false};
    for (int i = 0; i < 5; ++i) {
        CAPTURE(rows[i].case_name);
        CHECK(rows[i].assumption1_dp_dtheta_pd);
        CHECK(rows[i].jacobian_invertible);
        CHECK(rows[i].thm1_holds == thm1_expect[i]);
        CHECK(rows[i].thm2_holds);
        CHECK(rows[i].annotation.empty());
    }
    CHECK(report_table({}).empty());
}

TEST_CASE("a case with a singular jacobian is annotated, not thrown") {
    // isolated PQ bus: its Jacobian rows vanish
    NetworkCase c;
    c.name = "isolated";
    c.base_mva = 100;
    c.buses = {Bus{1, BusKind::slack, 0, 0, 0, 0, 1.0, 0, 138},
               Bus{2, BusKind::pq, 10, 5, 0, 0, 1.0, 0, 138},
               Bus{3, BusKind::pq, 0, 0, 0, 0, 1.0, 0, 138}};
    c.branches = {Branch{1, 2, 0.01, 0.1, 0, 0, 0, true},
                  Branch{2, 3, 0.01, 0.1, 0, 0, 0, false}};
    validate(c);
    CheckOptions opts;
    opts.solve_first = false;  // the solve itself would fail on the isolated bus
    const ObservabilityReport rep = check_case(c, opts);
    CHECK_FALSE(rep.annotation.empty());
    const auto rows = report_table({c}, opts);
    REQUIRE(rows.size() == 1);
    CHECK_FALSE(rows[0].annotation.empty());
}

TEST_CASE("consistency: delta_k below the strict bound implies the Neumann value is below one") {
    for (const char* name :
         {"case5.m", "case9.m", "case14.m", "case24.m", "case30.m", "case4_dist.m", "case4_radial.m"}) {
        const ObservabilityReport rep = check_case(testutil::load_case(name));
        REQUIRE(rep.annotation.empty());
        if (rep.delta_k < rep.bound_strict) CHECK(rep.value_neumann < 1.0);
    }
}

TEST_CASE("theorem 1 implies theorem 2 on every bundled case") {
    for (const char* name :
         {"case5.m", "case9.m", "case14.m", "case24.m", "case30.m", "case4_dist.m", "case4_radial.m"}) {
        const ObservabilityReport rep = check_case(testutil::load_case(name));
        if (rep.thm1_holds) CHECK(rep.thm2_holds);
    }
}

TEST_CASE("when theorem 2 holds, S_dagger systems are solvable with small residual") {
    for (const char* name : {"case9.m", "case4_dist.m", "case4_radial.m"}) {
        const NetworkCase c = testutil::load_case(name);
        const AdmittanceMatrix y = build_admittance(c);
        const OperatingPoint pt = solve_newton_raphson(c, y);
        const JacobianBlocks jb = assemble_jacobian(y, pt, c, BusSet::pq);
        const auto sb = sensitivity::invert_jacobian(jb);
        const PowerFactorProfile prof = case_profile(c, c.pq_indices());
        const Matrix sdag = s_dagger(sb, build_K(prof));
        ObservabilityReport rep;
        theorem2_check(sdag, std::nullopt, rep);
        REQUIRE(rep.thm2_holds);
        const Matrix rhs = testutil::random_matrix(sdag.rows(), 1, 99, 0.01);
        const Matrix x = numkit::lu_solve(sdag, rhs);
        CHECK(numkit::max_abs(sdag * x - rhs) < 1e-8);
    }
}

TEST_CASE("solver-form jacobian lambda_min is reported alongside the set-level values") {
    const ObservabilityReport rep = check_case(testutil::load_case("case14.m"));
    CHECK(rep.lambda_min_j_solver == doctest::Approx(0.549).epsilon(0.01));
    CHECK(rep.lambda_min_j_sv > 0.0);
    CHECK(rep.lambda_min_j_eig > 0.0);
}
