// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any criterion fails.

#include "cdroc/experiments.hpp"

#include <array>
#include <cstdio>
#include <random>

using namespace cdroc;

namespace {

int failures = 0;

void verdict(int id, bool ok, const std::string& summary)
{
    std::printf("criterion %d: %s  %s\n", id, ok ? "PASS" : "FAIL", summary.c_str());
    std::fflush(stdout);
    if (!ok) {
        ++failures;
    }
}

void detail(const char* fmt, auto... args)
{
    std::printf("    ");
    std::printf(fmt, args...);
    std::printf("\n");
    std::fflush(stdout);
}

bool within_band(int measured, int reference)
{
    const double band = std::max(0.2 * reference, 5.0);
    return std::abs(measured - reference) <= band;
}

int solve_cell(const ProblemDiscretization& d, double eps, double alpha, SolveSettings s)
{
    s.p = d.degree();
    s.level = d.level();
    const auto r = d.solve(eps, alpha, s);
    return r.converged ? r.iterations : s.solver.max_iterations;
}

const std::array<double, 4> decades{1.0, 1e-3, 1e-6, 1e-9};

void condition_bound()
{
    const ProblemDiscretization d(make_model_problem(ProblemId::mp1), 2, 4);
    double worst = 0.0;
    for (double eps : {1.0, 1e-3, 1e-6}) {
        for (double alpha : {1.0, 1e-3, 1e-6}) {
            const auto& blocks = d.blocks(eps, 0.0);
            const BlockOperator A = d.system(eps, alpha, 0.0);
            const ExactPreconditioner S(d.mass_factor(), d.mass(), d.obs_mass(), blocks.fourth_order, alpha);
            const auto c = estimate_condition(A, S, A.size(), 120);
            detail("eps=%g alpha=%g: |lambda| in [%.4f, %.4f], kappa=%.4f", eps, alpha, c.lambda_min_abs,
                   c.lambda_max_abs, c.kappa);
            worst = std::max(worst, c.kappa);
        }
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "max kappa %.4f (bound 4.254)", worst);
    verdict(1, worst <= 4.254, buf);
}

void schur_identity()
{
    double worst = 0.0;
    for (int p : {2, 3}) {
        for (int l : {3, 4}) {
            const ProblemDiscretization d(make_model_problem(ProblemId::mp1), p, l);
            for (double eps : {1.0, 1e-3}) {
                const auto& b = d.blocks(eps, 0.0);
                const double gap = verify_schur_identity(b.state, d.mass(), b.fourth_order);
                detail("box p=%d l=%d eps=%g: gap %.3e", p, l, eps, gap);
                worst = std::max(worst, gap);
            }
        }
    }
    for (int p : {2, 3}) {
        const ProblemDiscretization d(make_model_problem(ProblemId::mp3), p, 3);
        const auto& b = d.blocks(1e-3, 0.0);
        detail("annulus p=%d l=3 (reported only): gap %.3e", p, verify_schur_identity(b.state, d.mass(), b.fourth_order));
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "max box gap %.3e (limit 1e-10)", worst);
    verdict(2, worst < 1e-10, buf);
}

using Grid = std::array<std::array<int, 4>, 4>;

void iteration_tables()
{
    const Grid left{{{12, 26, 60, 72}, {15, 47, 26, 11}, {15, 46, 26, 11}, {15, 46, 26, 11}}};
    const Grid right{{{12, 20, 57, 78}, {15, 41, 54, 19}, {14, 41, 53, 19}, {14, 41, 53, 19}}};
    int outside = 0;
    std::string misses;
    for (auto [id, ref] : {std::pair{ProblemId::mp1, &left}, std::pair{ProblemId::mp2, &right}}) {
        const ProblemDiscretization d(make_model_problem(id), 2, 6);
        for (std::size_t i = 0; i < 4; ++i) {
            std::string line = problem_name(id) + " eps=" + format_number(decades[i]) + ":";
            for (std::size_t j = 0; j < 4; ++j) {
                const int it = solve_cell(d, decades[i], decades[j], SolveSettings{});
                const int expected = (*ref)[i][j];
                const bool ok = within_band(it, expected);
                line += " " + std::to_string(it) + "/" + std::to_string(expected) + (ok ? "" : "*");
                if (!ok) {
                    ++outside;
                    misses += " " + problem_name(id) + "(" + format_number(decades[i]) + "," +
                              format_number(decades[j]) + ")";
                }
            }
            detail("%s", line.c_str());
        }
    }
    verdict(3, outside == 0,
            outside == 0 ? "32/32 cells within +-max(20%,5)"
                         : std::to_string(32 - outside) + "/32 cells within band; outside:" + misses);
}

void annulus_spots()
{
    bool ok = true;
    std::string summary;
    for (auto [id, expected] : {std::pair{ProblemId::mp3, 48}, std::pair{ProblemId::mp4, 46}}) {
        const ProblemDiscretization d(make_model_problem(id), 2, 6);
        const int it = solve_cell(d, 1e-3, 1e-3, SolveSettings{});
        ok = ok && within_band(it, expected);
        summary += problem_name(id) + " " + std::to_string(it) + " (ref " + std::to_string(expected) + ") ";
    }
    verdict(4, ok, summary);
}

void smoother_contrast()
{
    const auto mp = make_model_problem(ProblemId::mp3);
    SolveSettings gs;
    gs.precond = PreconditionerVariant::inexact_mg;
    gs.solver.max_iterations = 3000;
    SolveSettings macro = gs;
    macro.smoother.kind = SmootherKind::macro_gauss_seidel;

    std::map<int, int> gs_it;
    std::map<int, int> macro_it;
    for (int p : {2, 3, 5}) {
        const ProblemDiscretization d(mp, p, 5);
        if (p != 3) {
            gs_it[p] = solve_cell(d, 1e-3, 1e-3, gs);
        }
        macro_it[p] = solve_cell(d, 1e-3, 1e-3, macro);
        if (gs_it.count(p)) {
            detail("p=%d: gs %d, macro-gs %d", p, gs_it[p], macro_it[p]);
        } else {
            detail("p=%d: macro-gs %d", p, macro_it[p]);
        }
    }
    int lo = macro_it.begin()->second;
    int hi = lo;
    for (const auto& [p, it] : macro_it) {
        lo = std::min(lo, it);
        hi = std::max(hi, it);
    }
    const double mid = 0.5 * (lo + hi);
    const bool gs_ok = gs_it[5] > 1.5 * gs_it[2];
    const bool macro_ok = hi - mid <= 0.25 * mid;
    verdict(5, gs_ok && macro_ok,
            "gs p=2 " + std::to_string(gs_it[2]) + " -> p=5 " + std::to_string(gs_it[5]) + "; macro-gs range [" +
                std::to_string(lo) + "," + std::to_string(hi) + "]");
}

void convergence_orders()
{
    bool ok = true;
    RateStudySettings rs;
    rs.p = 3;
    rs.level_min = 3;
    rs.level_max = 6;
    for (const auto& r : run_rate_study(rs)) {
        detail("rates l=%d: combined %.4e, eoc %.3f", r.level, r.combined, r.eoc_combined);
        if (!std::isnan(r.eoc_combined)) {
            ok = ok && r.eoc_combined >= 0.8 && r.eoc_combined <= 1.5;
        }
    }
    for (const auto& r : run_projection_rates(3, 3, 6)) {
        detail("projector l=%d: H2 %.4e (eoc %.3f), H1 %.4e (eoc %.3f), L2 %.4e (eoc %.3f), |Lap Pi u|/|Lap u| %.12f",
               r.level, r.h2_error, r.eoc_h2, r.h1_error, r.eoc_h1, r.l2_error, r.eoc_l2, r.laplacian_ratio);
        ok = ok && r.laplacian_ratio <= 1.0 + 1e-10;
        if (!std::isnan(r.eoc_h2)) {
            ok = ok && r.eoc_h2 >= 0.9 && r.eoc_h2 <= 1.5 && r.eoc_l2 >= 2.7 && r.eoc_l2 <= 3.5;
        }
    }
    for (const auto& r : run_lowreg_projection_bound(3, 3, 6)) {
        detail("low regularity l=%d: error %.4e, bound %.4e, ratio %.3e", r.level, r.error, r.bound, r.ratio);
        ok = ok && r.ratio < 1.0;
    }
    verdict(6, ok, "p=3, levels 3..6 (combined [0.8,1.5], H2 [0.9,1.5], L2 [2.7,3.5], ratio < 1)");
}

void canonical_1d()
{
    Canonical1DSettings s;
    s.level = 4;
    const auto coarse = run_canonical_1d(s);
    detail("l=4: forward overshoot %.4f, state overshoot %.4f", coarse.forward_metrics.overshoot,
           coarse.state_metrics.overshoot);
    for (auto region : {Canonical1DRegion::left, Canonical1DRegion::right}) {
        s.region = region;
        const auto r = run_canonical_1d(s);
        detail("l=4 %s observation: state overshoot %.4f, undershoot %.4f",
               region == Canonical1DRegion::left ? "left" : "right", r.state_metrics.overshoot,
               r.state_metrics.undershoot);
    }
    s.region = Canonical1DRegion::full;
    s.level = 6;
    const auto fine = run_canonical_1d(s);
    detail("l=6: |q_h| %.4e, |w_h| %.4e", fine.q_norm, fine.w_norm);
    const bool ok = coarse.forward_metrics.overshoot > 0.05 && coarse.state_metrics.overshoot < 0.01 &&
                    fine.q_norm < 1e-6 && fine.w_norm < 1e-6;
    char buf[160];
    std::snprintf(buf, sizeof buf, "overshoot %.3f / %.4f, |q_h| %.3e, |w_h| %.3e at l=6",
                  coarse.forward_metrics.overshoot, coarse.state_metrics.overshoot, fine.q_norm, fine.w_norm);
    verdict(7, ok, buf);
}

void invariants()
{
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::string broken;

    double pou = 0.0;
    for (int p = 1; p <= 7; ++p) {
        for (int k : {-1, 0, p - 1}) {
            const auto s = make_space(p, k, 3);
            for (int t = 0; t < 1000; ++t) {
                pou = std::max(pou, std::abs(eval_basis(s, unit(rng), 0).table.row(0).sum() - 1.0));
            }
        }
    }
    detail("partition of unity: max deviation %.2e", pou);
    if (!(pou < 1e-13)) {
        broken += " partition-of-unity";
    }

    double nest = 0.0;
    for (int p = 2; p <= 7; ++p) {
        for (int l = 0; l <= 4; ++l) {
            const auto c = make_smooth_space(p, l);
            const auto f = make_smooth_space(p, l + 1);
            Vector cc(c.dim());
            for (auto& v : cc) {
                v = 2.0 * unit(rng) - 1.0;
            }
            const Vector fc = prolongation(c, f) * cc;
            for (int t = 0; t < 50; ++t) {
                const double x = unit(rng);
                nest = std::max(nest, std::abs(eval_spline(c, cc, x, 0)[0] - eval_spline(f, fc, x, 0)[0]));
            }
        }
    }
    detail("prolongation nestedness: max deviation %.2e", nest);
    if (!(nest < 1e-12)) {
        broken += " nestedness";
    }

    const auto U = TensorSpace<2>::uniform(make_smooth_space(3, 4), true);
    const SparseOperator C =
        assemble_convection<2>(U, [](const Point<2>&) { return Point<2>(-2.0, 1.0); }, identity_map<2>());
    const double skew = SparseOperator(C + SparseOperator(C.transpose())).coeffs().cwiseAbs().maxCoeff();
    detail("convection skew-symmetry: max |C + C^T| %.2e", skew);
    if (!(skew < 1e-10)) {
        broken += " skew-symmetry";
    }

    const auto Q = TensorSpace<2>::uniform(make_space(3, 0, 4), false);
    const auto Q1 = TensorSpace<1>::uniform(make_space(3, 0, 4), false);
    const SparseOperator M = assemble_mass<2>(Q, identity_map<2>());
    const SparseOperator M1 = assemble_mass<1>(Q1, identity_map<1>());
    const double kron = SparseOperator(M - kronecker(M1, M1)).coeffs().cwiseAbs().maxCoeff();
    detail("Kronecker mass identity: max deviation %.2e", kron);
    if (!(kron < 1e-14)) {
        broken += " kronecker-mass";
    }

    const ProblemDiscretization d(make_model_problem(ProblemId::mp2), 2, 4);
    const BlockOperator A = d.system(1e-3, 1e-3, 0.0);
    const ExactPreconditioner S(d.mass_factor(), d.mass(), d.obs_mass(), d.blocks(1e-3, 0.0).fourth_order, 1e-3);
    SolverConfig cfg;
    cfg.track_preconditioned_residual = true;
    const auto run1 = minres(A, S, d.rhs(), cfg);
    const auto run2 = minres(A, S, d.rhs(), cfg);
    bool monotone = true;
    const auto& hist = run1.second.preconditioned_residual;
    for (std::size_t k = 1; k < hist.size(); ++k) {
        monotone = monotone && hist[k] <= hist[k - 1] * (1.0 + 1e-10);
    }
    const bool deterministic =
        run1.first == run2.first && run1.second.residual_history == run2.second.residual_history;
    detail("MINRES: %d iterations, preconditioned residual monotone %s, repeat bit-identical %s",
           run1.second.iterations, monotone ? "yes" : "no", deterministic ? "yes" : "no");
    if (!monotone) {
        broken += " minres-monotone";
    }
    if (!deterministic) {
        broken += " minres-determinism";
    }

    verdict(8, broken.empty(), broken.empty() ? "all invariants hold" : "violated:" + broken);
}

} // namespace

int main()
{
    const std::array<void (*)(), 8> criteria{condition_bound,    schur_identity,    iteration_tables,
                                             annulus_spots,      smoother_contrast, convergence_orders,
                                             canonical_1d,       invariants};
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        try {
            criteria[i]();
        } catch (const std::exception& e) {
            verdict(static_cast<int>(i + 1), false, std::string("error: ") + e.what());
        }
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
