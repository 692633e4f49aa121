// pfsense: power-flow sensitivity and phaseless-observability toolkit.
//
// Subcommands: solve, sensitivities, check, pfcurve, estimate, simulate,
// complete, spectral. Machine outputs carry 17 significant digits; the human
// format rounds to 4. Exit codes: 0 success, 1 domain error, 2 usage error.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pfsense/amisim.hpp"
#include "pfsense/csv.hpp"
#include "pfsense/estimation.hpp"
#include "pfsense/lowrank.hpp"
#include "pfsense/observability.hpp"

using namespace pfsense;
using numkit::Matrix;

namespace {

std::string human_num(double x) {
    if (std::isnan(x)) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", x);
    return buf;
}

std::string yes_no(bool b) { return b ? "Yes" : "No"; }

netmodel::NetworkCase load_case_file(const std::string& path) {
    std::string name = path;
    const size_t slash = name.find_last_of('/');
    if (slash != std::string::npos) name = name.substr(slash + 1);
    const size_t dot = name.find_last_of('.');
    if (dot != std::string::npos) name = name.substr(0, dot);
    return netmodel::parse_case_auto(numkit::read_text_file(path), name);
}

powerflow::BusSet parse_bus_set(const std::string& s) {
    if (s == "pq") return powerflow::BusSet::pq;
    if (s == "nonslack") return powerflow::BusSet::nonslack;
    throw UsageError("unknown bus set '" + s + "' (expected pq or nonslack)");
}

void json_put(nlohmann::json& j, const std::string& key, double v) {
    if (std::isnan(v))
        j[key] = nullptr;
    else
        j[key] = v;
}

// ---------------------------------------------------------------------------
// check rendering
// ---------------------------------------------------------------------------

nlohmann::json report_to_json(const observability::ObservabilityReport& r) {
    nlohmann::json j;
    j["case"] = r.case_name;
    j["n"] = r.n;
    j["assumption1_dp_dtheta_pd"] = r.assumption1_dp_dtheta_pd;
    j["jacobian_invertible"] = r.jacobian_invertible;
    json_put(j, "lambda_min_j_sv", r.lambda_min_j_sv);
    json_put(j, "lambda_min_j_eig", r.lambda_min_j_eig);
    json_put(j, "lambda_min_j_solver", r.lambda_min_j_solver);
    json_put(j, "alpha_min", r.alpha_min);
    json_put(j, "alpha_max", r.alpha_max);
    json_put(j, "alpha_spread", r.alpha_max - r.alpha_min);
    json_put(j, "k_min", r.k_min);
    json_put(j, "k_max", r.k_max);
    json_put(j, "delta_k", r.delta_k);
    j["mixed_sign_factors"] = r.mixed_sign_factors;
    j["m_positive_definite"] = r.m_positive_definite;
    json_put(j, "bound_strict", r.bound_strict);
    json_put(j, "value_neumann", r.value_neumann);
    j["thm1_holds"] = r.thm1_holds;
    json_put(j, "min_eig_s_dagger", r.min_eig_s_dagger);
    json_put(j, "min_eig_s_ddagger", r.min_eig_s_ddagger);
    j["thm2_holds"] = r.thm2_holds;
    j["annotation"] = r.annotation;
    return j;
}

// Column order: assumption flags first, then the
// lambda column, power-factor spreads, the two Theorem-1 quantities, flags.
const char* kReportCsvHeader =
    "case,dp_dtheta_pd,jacobian_invertible,lambda_min_j_sv,lambda_min_j_eig,lambda_min_j_solver,"
    "alpha_spread,delta_k,bound_strict,value_neumann,thm1_holds,thm2_holds,"
    "min_eig_s_dagger,min_eig_s_ddagger,annotation";

std::string report_to_csv_row(const observability::ObservabilityReport& r) {
    using numkit::format_full;
    std::string row = r.case_name;
    row += "," + yes_no(r.assumption1_dp_dtheta_pd);
    row += "," + yes_no(r.jacobian_invertible);
    row += "," + format_full(r.lambda_min_j_sv);
    row += "," + format_full(r.lambda_min_j_eig);
    row += "," + format_full(r.lambda_min_j_solver);
    row += "," + format_full(r.alpha_max - r.alpha_min);
    row += "," + format_full(r.delta_k);
    row += "," + format_full(r.bound_strict);
    row += "," + format_full(r.value_neumann);
    row += "," + yes_no(r.thm1_holds);
    row += "," + yes_no(r.thm2_holds);
    row += "," + format_full(r.min_eig_s_dagger);
    row += "," + format_full(r.min_eig_s_ddagger);
    row += "," + r.annotation;
    return row;
}

std::string report_render_human(const observability::ObservabilityReport& r) {
    std::string out;
    out += "case:               " + r.case_name + "\n";
    out += "pq buses:           " + std::to_string(r.n) + "\n";
    out += "dp/dtheta > 0:      " + yes_no(r.assumption1_dp_dtheta_pd) + "\n";
    out += "J invertible:       " + yes_no(r.jacobian_invertible) + "\n";
    out += "lambda_min(J):      " + human_num(r.lambda_min_j_sv) + " (sv), " +
           human_num(r.lambda_min_j_eig) + " (|eig|), " + human_num(r.lambda_min_j_solver) +
           " (solver form)\n";
    out += "alpha range:        [" + human_num(r.alpha_min) + ", " + human_num(r.alpha_max) + "]\n";
    out += "k range:            [" + human_num(r.k_min) + ", " + human_num(r.k_max) +
           "], delta_k = " + human_num(r.delta_k) + "\n";
    out += "M > 0:              " + yes_no(r.m_positive_definite) + "\n";
    out += "strict bound:       " + human_num(r.bound_strict) + "\n";
    out += "Neumann value:      " + human_num(r.value_neumann) + "\n";
    out += "theorem 1 holds:    " + yes_no(r.thm1_holds) + "\n";
    out += "min eig S_dagger:   " + human_num(r.min_eig_s_dagger) + "\n";
    out += "min eig S_ddagger:  " + human_num(r.min_eig_s_ddagger) + "\n";
    out += "theorem 2 holds:    " + yes_no(r.thm2_holds) + "\n";
    if (r.mixed_sign_factors) out += "note: leading power factors were imputed\n";
    if (!r.annotation.empty()) out += "annotation: " + r.annotation + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// subcommand bodies
// ---------------------------------------------------------------------------

int cmd_solve(const std::string& case_path, bool as_json, bool as_csv) {
    const netmodel::NetworkCase c = load_case_file(case_path);
    const powerflow::OperatingPoint pt = powerflow::solve_newton_raphson(c);
    const double rad2deg = 180.0 / M_PI;
    if (as_json) {
        nlohmann::json j;
        j["case"] = c.name;
        j["converged"] = pt.converged;
        j["iterations"] = pt.iterations;
        j["mismatch_norm"] = pt.mismatch_norm;
        j["buses"] = nlohmann::json::array();
        for (int i = 0; i < c.n_bus(); ++i) {
            j["buses"].push_back({{"bus", c.buses[i].id},
                                  {"v", pt.v[i]},
                                  {"theta_deg", pt.theta[i] * rad2deg},
                                  {"p", pt.p_inj[i]},
                                  {"q", pt.q_inj[i]}});
        }
        std::cout << j.dump(2) << "\n";
    } else if (as_csv) {
        std::cout << "bus,v,theta_deg,p,q\n";
        for (int i = 0; i < c.n_bus(); ++i) {
            std::cout << c.buses[i].id << ',' << numkit::format_full(pt.v[i]) << ','
                      << numkit::format_full(pt.theta[i] * rad2deg) << ','
                      << numkit::format_full(pt.p_inj[i]) << ','
                      << numkit::format_full(pt.q_inj[i]) << "\n";
        }
        std::cout << "# converged=" << yes_no(pt.converged) << " iterations=" << pt.iterations
                  << " mismatch=" << numkit::format_full(pt.mismatch_norm) << "\n";
    } else {
        std::printf("%6s %10s %12s %12s %12s\n", "bus", "v", "theta_deg", "p", "q");
        for (int i = 0; i < c.n_bus(); ++i)
            std::printf("%6d %10s %12s %12s %12s\n", c.buses[i].id, human_num(pt.v[i]).c_str(),
                        human_num(pt.theta[i] * rad2deg).c_str(), human_num(pt.p_inj[i]).c_str(),
                        human_num(pt.q_inj[i]).c_str());
        std::printf("converged=%s iterations=%d mismatch=%s\n", yes_no(pt.converged).c_str(),
                    pt.iterations, human_num(pt.mismatch_norm).c_str());
    }
    return pt.converged ? 0 : 1;
}

int cmd_sensitivities(const std::string& case_path, const std::string& route,
                      const std::string& out, const std::string& bus_set_name, double eps) {
    const netmodel::NetworkCase c = load_case_file(case_path);
    const netmodel::AdmittanceMatrix y = netmodel::build_admittance(c);
    const powerflow::OperatingPoint pt = powerflow::solve_newton_raphson(c, y);
    if (!pt.converged) throw NoConvergence("power flow did not converge");
    const powerflow::BusSet set = parse_bus_set(bus_set_name);
    const std::vector<int> pq = c.pq_indices();
    const int n = static_cast<int>(pq.size());

    Matrix s_v_p, s_v_q;
    if (route == "inverse") {
        const auto sb = sensitivity::invert_jacobian(powerflow::assemble_jacobian(y, pt, c, set));
        s_v_p = sb.s_v_p;
        s_v_q = sb.s_v_q;
    } else if (route == "schur") {
        sensitivity::schur_sensitivities(powerflow::assemble_jacobian(y, pt, c, set), s_v_q, s_v_p);
    } else if (route == "phasor") {
        s_v_p = Matrix(n, n);
        s_v_q = Matrix(n, n);
        for (int e = 0; e < n; ++e) {
            const auto col_p = sensitivity::magnitude_from_phasor(
                pt, sensitivity::phasor_sensitivities(y, pt, c, pq[e], false));
            const auto col_q = sensitivity::magnitude_from_phasor(
                pt, sensitivity::phasor_sensitivities(y, pt, c, pq[e], true));
            for (int r = 0; r < n; ++r) {
                s_v_p(r, e) = col_p[r];
                s_v_q(r, e) = col_q[r];
            }
        }
    } else if (route == "perturb") {
        sensitivity::perturb_and_observe(c, y, pt, s_v_p, s_v_q, eps);
    } else {
        throw UsageError("unknown route '" + route + "'");
    }
    const Matrix wide = numkit::hcat(s_v_p, s_v_q);
    if (out.empty())
        std::cout << numkit::matrix_to_csv(wide);
    else {
        numkit::write_matrix_csv(out, wide);
        std::cout << "wrote " << wide.rows() << "x" << wide.cols() << " matrix to " << out << "\n";
    }
    return 0;
}

int cmd_check(const std::vector<std::string>& case_paths, const std::string& bus_set_name,
              bool as_json, bool as_csv, bool file_point) {
    observability::CheckOptions opts;
    opts.bus_set = parse_bus_set(bus_set_name);
    opts.solve_first = !file_point;
    std::vector<observability::ObservabilityReport> rows;
    for (const auto& path : case_paths)
        rows.push_back(observability::check_case(load_case_file(path), opts));
    if (as_json) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : rows) j.push_back(report_to_json(r));
        std::cout << (rows.size() == 1 ? report_to_json(rows[0]).dump(2) : j.dump(2)) << "\n";
    } else if (as_csv) {
        std::cout << kReportCsvHeader << "\n";
        for (const auto& r : rows) std::cout << report_to_csv_row(r) << "\n";
    } else {
        for (const auto& r : rows) std::cout << report_render_human(r) << "\n";
    }
    for (const auto& r : rows)
        if (!r.annotation.empty()) return 1;
    return 0;
}

int cmd_pfcurve(const std::string& case_path, int grid, const std::string& out, bool file_point) {
    if (grid < 1) throw UsageError("--grid must be at least 1");
    observability::CheckOptions opts;
    opts.solve_first = !file_point;
    const observability::ObservabilityReport rep =
        observability::check_case(load_case_file(case_path), opts);
    if (!rep.annotation.empty()) throw Error("check failed: " + rep.annotation);
    std::vector<double> alpha_grid;
    for (int i = 1; i <= grid; ++i) alpha_grid.push_back(static_cast<double>(i) / grid);
    const auto curve = observability::alpha_min_curve(rep.bound_strict, alpha_grid);
    std::string text = "alpha_max,alpha_min\n";
    for (const auto& [am, an] : curve)
        text += numkit::format_full(am) + "," + numkit::format_full(an) + "\n";
    if (out.empty())
        std::cout << text;
    else {
        numkit::write_text_file(out, text);
        std::cout << "wrote " << curve.size() << " curve points to " << out << "\n";
    }
    return 0;
}

int cmd_estimate(const std::string& case_path, const std::string& series_path, bool per_bus_rmse,
                 const std::string& out) {
    const netmodel::NetworkCase c = load_case_file(case_path);
    const netmodel::AdmittanceMatrix y = netmodel::build_admittance(c);
    const powerflow::OperatingPoint pt = powerflow::solve_newton_raphson(c, y);
    if (!pt.converged) throw NoConvergence("power flow did not converge");
    const auto sb =
        sensitivity::invert_jacobian(powerflow::assemble_jacobian(y, pt, c, powerflow::BusSet::pq));
    const auto prof = observability::case_profile(c, c.pq_indices());
    const Matrix k = observability::build_K(prof);
    const Matrix sdag = observability::s_dagger(sb, k);

    const ami::AmiSeries series = ami::series_from_csv(numkit::read_text_file(series_path));
    if (series.n != sdag.rows())
        throw DimensionMismatch("series has " + std::to_string(series.n) + " buses, case has " +
                                std::to_string(sdag.rows()) + " PQ buses");
    const estimation::AmiDeltas d = estimation::finite_differences(series);

    std::string text = "t,bus,dp_hat,dq_hat,dp_meas,dq_meas\n";
    Matrix se_p(series.n, 1), se_q(series.n, 1);
    for (int t = 0; t < d.dv.rows(); ++t) {
        std::vector<double> dp_hat, dq_hat;
        estimation::estimate_injections_phaseless(sdag, k, d.dv.row(t), dp_hat, dq_hat);
        for (int j = 0; j < series.n; ++j) {
            text += std::to_string(t) + "," + std::to_string(series.bus_ids[j]) + "," +
                    numkit::format_full(dp_hat[j]) + "," + numkit::format_full(dq_hat[j]) + "," +
                    numkit::format_full(d.dp(t, j)) + "," + numkit::format_full(d.dq(t, j)) + "\n";
            se_p(j, 0) += (dp_hat[j] - d.dp(t, j)) * (dp_hat[j] - d.dp(t, j));
            se_q(j, 0) += (dq_hat[j] - d.dq(t, j)) * (dq_hat[j] - d.dq(t, j));
        }
    }
    if (out.empty())
        std::cout << text;
    else {
        numkit::write_text_file(out, text);
        std::cout << "wrote " << d.dv.rows() << " estimate rows to " << out << "\n";
    }
    if (per_bus_rmse) {
        std::cout << "bus,rmse_p,rmse_q\n";
        for (int j = 0; j < series.n; ++j)
            std::cout << series.bus_ids[j] << ','
                      << numkit::format_full(std::sqrt(se_p(j, 0) / d.dv.rows())) << ','
                      << numkit::format_full(std::sqrt(se_q(j, 0) / d.dv.rows())) << "\n";
    }
    return 0;
}

int cmd_simulate(const std::string& case_path, int steps, double noise, unsigned seed,
                 const std::string& out, const std::string& profile, double pf_alpha) {
    const netmodel::NetworkCase c = load_case_file(case_path);
    amisim::LoadShape shape;
    shape.global = amisim::default_loadshape(steps, profile, seed);
    amisim::PfSchedule pf;
    if (pf_alpha > 0.0) pf.alpha = {pf_alpha};
    amisim::SimulateOptions opts;
    opts.noise_sigma = noise;
    opts.seed = seed;
    const ami::AmiSeries series = amisim::simulate_series(c, shape, pf, opts);
    const std::string text = ami::series_to_csv(series);
    if (out.empty())
        std::cout << text;
    else {
        numkit::write_text_file(out, text);
        std::cout << "wrote " << series.m << " steps x " << series.n << " buses to " << out << "\n";
    }
    return 0;
}

int cmd_complete(const std::string& matrix_path, const std::string& mask_path, double lambda,
                 double delta, int rank, const std::string& truth_path, const std::string& out) {
    const Matrix s0 = numkit::read_matrix_csv(matrix_path);
    const Matrix mask = numkit::read_matrix_csv(mask_path);
    if (!s0.same_shape(mask)) throw DimensionMismatch("matrix and mask shapes differ");
    std::vector<bool> unknown(s0.data().size());
    for (size_t i = 0; i < unknown.size(); ++i) unknown[i] = mask.data()[i] != 0.0;
    const lowrank::MaskedMatrix mm = lowrank::MaskedMatrix::from_parts(s0, unknown);

    lowrank::CompletionResult res = rank >= 0 ? lowrank::complete_rank_constrained(mm, rank)
                                              : lowrank::complete_nuclear(mm, lambda, delta);
    std::printf("known_fraction=%s iterations=%d converged=%s\n",
                human_num(mm.known_fraction).c_str(), res.iterations,
                yes_no(res.converged).c_str());
    if (!truth_path.empty()) {
        const Matrix truth = numkit::read_matrix_csv(truth_path);
        res.rel_fro_error_vs_reference = lowrank::rel_fro_error(res.s_hat, truth);
        std::printf("rel_fro_error=%s\n", human_num(res.rel_fro_error_vs_reference).c_str());
    }
    if (!out.empty()) {
        numkit::write_matrix_csv(out, res.s_hat);
        std::cout << "wrote completed matrix to " << out << "\n";
    } else {
        std::cout << numkit::matrix_to_csv(res.s_hat);
    }
    return 0;
}

int cmd_spectral(const std::string& matrix_path, const std::string& out) {
    const Matrix s = numkit::read_matrix_csv(matrix_path);
    if (s.cols() % 2 != 0) throw DimensionMismatch("expected an n x 2n wide matrix");
    std::vector<int> p_cols, q_cols;
    for (int j = 0; j < s.cols() / 2; ++j) p_cols.push_back(j);
    for (int j = s.cols() / 2; j < s.cols(); ++j) q_cols.push_back(j);
    const auto groups = lowrank::spectral_report(s, {{"p", p_cols}, {"q", q_cols}});
    std::string text = "group,index,sigma,sigma_normalized\n";
    for (const auto& g : groups)
        for (size_t i = 0; i < g.sigma.size(); ++i)
            text += g.name + "," + std::to_string(i) + "," + numkit::format_full(g.sigma[i]) + "," +
                    numkit::format_full(g.sigma_normalized[i]) + "\n";
    if (out.empty())
        std::cout << text;
    else {
        numkit::write_text_file(out, text);
        std::cout << "wrote spectral table to " << out << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"power-flow sensitivity, phaseless observability and matrix recovery toolkit"};
    app.require_subcommand(1);

    std::string case_path, series_path, out_path, matrix_path, mask_path, truth_path;
    std::vector<std::string> case_paths;
    std::string route = "inverse", bus_set = "pq", profile = "residential-like";
    bool as_json = false, as_csv = false, per_bus_rmse = false, file_point = false;
    int grid = 50, steps = 96, rank = -1;
    double noise = 0.005, eps = 1e-5, lambda = 0.125, delta = 0.06, pf_alpha = 0.0;
    unsigned seed = 1;

    auto* solve = app.add_subcommand("solve", "run the Newton-Raphson power flow");
    solve->add_option("--case", case_path, "case file (.m or .json)")->required();
    solve->add_flag("--json", as_json, "machine-readable JSON output");
    solve->add_flag("--csv", as_csv, "machine-readable CSV output");

    auto* sens = app.add_subcommand("sensitivities", "voltage-magnitude sensitivity matrices");
    sens->add_option("--case", case_path)->required();
    sens->add_option("--route", route, "inverse | schur | phasor | perturb");
    sens->add_option("--out", out_path, "output CSV for the n x 2n wide matrix");
    sens->add_option("--bus-set", bus_set, "pq | nonslack");
    sens->add_option("--eps", eps, "perturbation size for the perturb route");

    auto* check = app.add_subcommand("check", "phaseless observability report");
    check->add_option("--case", case_paths, "one or more case files")->required();
    check->add_option("--bus-set", bus_set, "pq | nonslack (sensitivity reduction)");
    check->add_flag("--json", as_json);
    check->add_flag("--csv", as_csv);
    check->add_flag("--file-point", file_point,
                    "evaluate at the bus-table point instead of solving first");

    auto* curve = app.add_subcommand("pfcurve", "feasible power-factor boundary curve");
    curve->add_option("--case", case_path)->required();
    curve->add_option("--grid", grid, "number of alpha_max grid points");
    curve->add_option("--out", out_path);
    curve->add_flag("--file-point", file_point);

    auto* est = app.add_subcommand("estimate", "phaseless injection estimation from an AMI series");
    est->add_option("--case", case_path)->required();
    est->add_option("--series", series_path, "long-form AMI CSV (t,bus,v,p,q)")->required();
    est->add_flag("--per-bus-rmse", per_bus_rmse);
    est->add_option("--out", out_path);

    auto* sim = app.add_subcommand("simulate", "generate a synthetic AMI series");
    sim->add_option("--case", case_path)->required();
    sim->add_option("--steps", steps);
    sim->add_option("--noise", noise, "relative sensor noise std");
    sim->add_option("--seed", seed);
    sim->add_option("--out", out_path);
    sim->add_option("--profile", profile, "flat | residential-like");
    sim->add_option("--pf", pf_alpha, "enforce a fixed load power factor");

    auto* comp = app.add_subcommand("complete", "matrix completion of a partially known matrix");
    comp->add_option("--matrix", matrix_path, "CSV of known values (zeros where unknown)")
        ->required();
    comp->add_option("--mask", mask_path, "CSV of 0/1 flags, 1 = unknown")->required();
    comp->add_option("--lambda", lambda, "nuclear-norm weight");
    comp->add_option("--delta", delta, "known-entry fidelity radius");
    comp->add_option("--rank", rank, "use the rank-constrained route with this rank");
    comp->add_option("--truth", truth_path, "reference matrix for the error report");
    comp->add_option("--out", out_path);

    auto* spec = app.add_subcommand("spectral", "singular-value table of a wide matrix");
    spec->add_option("--matrix", matrix_path)->required();
    spec->add_option("--out", out_path);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << app.help() << "\n";
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (app.got_subcommand(solve)) return cmd_solve(case_path, as_json, as_csv);
        if (app.got_subcommand(sens))
            return cmd_sensitivities(case_path, route, out_path, bus_set, eps);
        if (app.got_subcommand(check))
            return cmd_check(case_paths, bus_set, as_json, as_csv, file_point);
        if (app.got_subcommand(curve)) return cmd_pfcurve(case_path, grid, out_path, file_point);
        if (app.got_subcommand(est))
            return cmd_estimate(case_path, series_path, per_bus_rmse, out_path);
        if (app.got_subcommand(sim))
            return cmd_simulate(case_path, steps, noise, seed, out_path, profile, pf_alpha);
        if (app.got_subcommand(comp))
            return cmd_complete(matrix_path, mask_path, lambda, delta, rank, truth_path, out_path);
        if (app.got_subcommand(spec)) return cmd_spectral(matrix_path, out_path);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
