#include "cdroc/experiments.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace cdroc;

struct Options {
    std::string problem = "mp1";
    int p = 2;
    int level = 6;
    double eps = 1e-3;
    double alpha = 1e-3;
    double sigma = 0.0;
    std::string precond = "exact";
    std::string smoother = "gs";
    int nu = 0;
    int patch_a = -1;
    int patch_b = -1;
    std::uint64_t seed = 42;
    double tol = 1e-8;
    int maxit = 1000;
    std::string out;

    std::string sweep = "eps-alpha";
    std::vector<double> rows;
    std::vector<double> cols;
    std::string region = "full";
    int samples = 1001;
    int level_min = 3;
    int level_max = 6;
    std::string mm_dir;
    bool quiet = false;
};

bool given(const CLI::App& app, const std::string& name)
{
    return app.get_option(name)->count() > 0;
}

/// Writes through `body` to --out, or to stdout when no path was given.
template <class F>
void emit(const Options& o, F&& body)
{
    if (o.out.empty()) {
        body(std::cout);
        return;
    }
    std::ofstream os(o.out);
    if (!os) {
        throw Error("cannot open output file '" + o.out + "'");
    }
    body(os);
}

SolveSettings solve_settings(const Options& o)
{
    SolveSettings s;
    s.p = o.p;
    s.level = o.level;
    s.sigma = o.sigma;
    if (o.precond == "exact") {
        s.precond = PreconditionerVariant::exact_cholesky;
    } else if (o.precond == "mg") {
        s.precond = PreconditionerVariant::inexact_mg;
    } else {
        throw ParameterError("unknown preconditioner '" + o.precond + "'");
    }
    if (o.smoother == "gs") {
        s.smoother.kind = SmootherKind::gauss_seidel;
    } else if (o.smoother == "macro-gs") {
        s.smoother.kind = SmootherKind::macro_gauss_seidel;
    } else {
        throw ParameterError("unknown smoother '" + o.smoother + "'");
    }
    s.smoother.nu = o.nu;
    s.smoother.patch = o.patch_a;
    s.smoother.overlap = o.patch_b;
    s.solver.seed = o.seed;
    s.solver.tolerance = o.tol;
    s.solver.max_iterations = o.maxit;
    s.solver.validate();
    return s;
}

void run_table_command(const Options& o)
{
    TableSpec spec;
    spec.problem = parse_problem(o.problem);
    spec.sweep = parse_sweep(o.sweep);
    spec.rows = o.rows;
    spec.cols = o.cols;
    spec.eps = o.eps;
    spec.alpha = o.alpha;
    spec.settings = solve_settings(o);
    const auto table = run_table(spec, [&](double r, double c, const CellResult& cell) {
        if (!o.quiet) {
            std::cerr << "  " << format_number(r) << " / " << format_number(c) << ": " << cell.iterations
                      << (cell.converged ? "" : " (not converged)") << "  " << format_number(cell.seconds) << " s\n";
        }
    });
    emit(o, [&](std::ostream& os) { table.write_csv(os); });
}

void run_canonical_command(const CLI::App& app, const Options& o)
{
    Canonical1DSettings s;
    s.eps = given(app, "--eps") ? o.eps : 0.01;
    s.alpha = given(app, "--alpha") ? o.alpha : 1e-3;
    s.p = o.p;
    s.level = given(app, "--level") ? o.level : 4;
    s.region = parse_canonical_region(o.region);
    s.samples = o.samples;
    const auto r = run_canonical_1d(s);
    emit(o, [&](std::ostream& os) { r.write_csv(os); });
    auto report = [](const char* name, const CurveMetrics& m) {
        std::cerr << name << "_overshoot=" << format_number(m.overshoot) << '\n'
                  << name << "_undershoot=" << format_number(m.undershoot) << '\n'
                  << name << "_l2_error=" << format_number(m.l2_error) << '\n'
                  << name << "_l2_error_region=" << format_number(m.l2_error_in_region) << '\n';
    };
    report("forward", r.forward_metrics);
    report("state", r.state_metrics);
    std::cerr << "q_norm=" << format_number(r.q_norm) << "\nw_norm=" << format_number(r.w_norm) << '\n';
}

void run_rates_command(const CLI::App& app, const Options& o)
{
    RateStudySettings s;
    s.p = given(app, "--p") ? o.p : 3;
    s.level_min = o.level_min;
    s.level_max = o.level_max;
    s.eps = given(app, "--eps") ? o.eps : 1.0;
    s.alpha = given(app, "--alpha") ? o.alpha : 1.0;
    s.sigma = o.sigma;
    const auto rows = run_rate_study(s);
    emit(o, [&](std::ostream& os) { write_rate_csv(os, rows); });
}

void run_verify_command(const Options& o)
{
    const ProblemDiscretization disc(make_model_problem(parse_problem(o.problem)), o.p, o.level);
    const auto report = run_verify(disc, o.eps, o.alpha, o.sigma);
    emit(o, [&](std::ostream& os) { report.write_csv(os); });
    if (!o.mm_dir.empty()) {
        std::filesystem::create_directories(o.mm_dir);
        const auto& blocks = disc.blocks(o.eps, o.sigma);
        const std::pair<const char*, const SparseOperator*> mats[] = {
            {"mass.mtx", &disc.mass()},
            {"state.mtx", &blocks.state},
            {"obs_mass.mtx", &disc.obs_mass()},
            {"fourth_order.mtx", &blocks.fourth_order},
        };
        for (const auto& [name, m] : mats) {
            std::ofstream os(std::filesystem::path(o.mm_dir) / name);
            write_matrix_market(os, *m);
        }
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Preconditioned optimal-control solver for convection-diffusion-reaction problems"};
    app.set_config("--config", "", "flat key=value configuration file; command-line flags take precedence");
    app.require_subcommand(1);
    app.fallthrough();

    Options o;
    app.add_option("--problem", o.problem, "model problem")->check(CLI::IsMember({"mp1", "mp2", "mp3", "mp4"}));
    app.add_option("--p", o.p, "spline degree of the state space")->check(CLI::Range(2, 12));
    app.add_option("--level", o.level, "refinement level")->check(CLI::Range(0, 12));
    app.add_option("--eps", o.eps, "diffusion coefficient")->check(CLI::PositiveNumber);
    app.add_option("--alpha", o.alpha, "control cost")->check(CLI::PositiveNumber);
    app.add_option("--sigma", o.sigma, "reaction coefficient")->check(CLI::NonNegativeNumber);
    app.add_option("--precond", o.precond, "preconditioner")->check(CLI::IsMember({"exact", "mg"}));
    app.add_option("--smoother", o.smoother, "multigrid smoother")->check(CLI::IsMember({"gs", "macro-gs"}));
    app.add_option("--nu", o.nu, "smoothing steps (0: smoother default)");
    app.add_option("--patch-a", o.patch_a, "macro patch size (-1: p)");
    app.add_option("--patch-b", o.patch_b, "macro patch overlap (-1: p-1)");
    app.add_option("--seed", o.seed, "seed of the random initial guess");
    app.add_option("--tol", o.tol, "relative residual tolerance");
    app.add_option("--maxit", o.maxit, "iteration limit");
    app.add_option("--out", o.out, "output CSV path (default: stdout)");
    app.add_option("--sweep", o.sweep, "table layout")->check(CLI::IsMember({"eps-alpha", "level-alpha", "level-p"}));
    app.add_option("--rows", o.rows, "row values (comma separated)")->delimiter(',');
    app.add_option("--cols", o.cols, "column values (comma separated)")->delimiter(',');
    app.add_option("--region", o.region, "1D observation region")->check(CLI::IsMember({"full", "left", "right"}));
    app.add_option("--samples", o.samples, "1D curve samples")->check(CLI::Range(2, 1000000));
    app.add_option("--level-min", o.level_min, "first level of convergence studies");
    app.add_option("--level-max", o.level_max, "last level of convergence studies");
    app.add_option("--mm", o.mm_dir, "directory for Matrix Market export of the system blocks");
    app.add_flag("--quiet", o.quiet, "suppress progress output");

    auto* table = app.add_subcommand("table", "iteration-count table");
    auto* canonical = app.add_subcommand("canonical1d", "1D layer problem: forward Galerkin vs optimal-control state");
    auto* rates = app.add_subcommand("rates", "manufactured-solution convergence study");
    auto* projrates = app.add_subcommand("projrates", "H2 projector convergence study");
    auto* lowreg = app.add_subcommand("lowreg", "L2 projection error bound for H1 data");
    auto* verify = app.add_subcommand("verify", "Schur identity, condition estimate and inverse-inequality constant");

    CLI11_PARSE(app, argc, argv);

    try {
        if (table->parsed()) {
            run_table_command(o);
        } else if (canonical->parsed()) {
            run_canonical_command(app, o);
        } else if (rates->parsed()) {
            run_rates_command(app, o);
        } else if (projrates->parsed()) {
            const auto rows = run_projection_rates(given(app, "--p") ? o.p : 3, o.level_min, o.level_max);
            emit(o, [&](std::ostream& os) { write_projection_csv(os, rows); });
        } else if (lowreg->parsed()) {
            const auto rows = run_lowreg_projection_bound(given(app, "--p") ? o.p : 3, o.level_min, o.level_max);
            emit(o, [&](std::ostream& os) { write_lowreg_csv(os, rows); });
        } else if (verify->parsed()) {
            run_verify_command(o);
        }
    } catch (const std::exception& e) {
        std::cerr << "cdroc: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
