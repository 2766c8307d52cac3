#include "cdroc/experiments.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace cdroc;

TEST(ModelProblems, ParseRoundTrip)
{
    for (auto id : {ProblemId::mp1, ProblemId::mp2, ProblemId::mp3, ProblemId::mp4}) {
        EXPECT_EQ(parse_problem(problem_name(id)), id);
    }
    EXPECT_THROW(parse_problem("mp5"), ParameterError);
    EXPECT_THROW(parse_sweep("alpha-eps"), ParameterError);
    EXPECT_THROW(parse_canonical_region("middle"), ParameterError);
}

TEST(ModelProblems, BoxProblemsUseConstantConvection)
{
    const auto mp1 = make_model_problem(ProblemId::mp1);
    ASSERT_TRUE(mp1.constant_beta.has_value());
    EXPECT_DOUBLE_EQ((*mp1.constant_beta)[0], -2.0);
    EXPECT_DOUBLE_EQ((*mp1.constant_beta)[1], 1.0);
    EXPECT_TRUE(mp1.region.full);

    const auto mp2 = make_model_problem(ProblemId::mp2);
    EXPECT_FALSE(mp2.region.full);
    EXPECT_TRUE(mp2.region.knot_aligned(2));
    EXPECT_FALSE(mp2.region.knot_aligned(1));

    EXPECT_DOUBLE_EQ(mp1.u_d.value(Point<2>(0.375, 0.625)), 1.0);
    EXPECT_DOUBLE_EQ(mp1.u_d.value(Point<2>(0.375, 0.874)), 1.0);
    EXPECT_DOUBLE_EQ(mp1.u_d.value(Point<2>(0.375, 0.876)), 0.0);
    EXPECT_DOUBLE_EQ(mp1.f.value(Point<2>(0.3, 0.2)), 0.0);
}

TEST(ModelProblems, AnnulusCentreIsMappedParameterPoint)
{
    const auto mp3 = make_model_problem(ProblemId::mp3);
    EXPECT_FALSE(mp3.constant_beta.has_value());
    const double c = std::sqrt(2.0) - 1.0;
    const double a = 0.375;
    const double b = 0.625;
    const Point<2> centre((1 + a) * (1 - b) * (1 + 2 * c * b), (1 + a) * b * (2 * std::sqrt(2.0) - 1 - 2 * c * b));
    EXPECT_DOUBLE_EQ(mp3.u_d.value(centre), 1.0);
    EXPECT_DOUBLE_EQ(mp3.u_d.value(centre + Point<2>(0.249, 0.0)), 1.0);
    EXPECT_DOUBLE_EQ(mp3.u_d.value(centre + Point<2>(0.0, -0.251)), 0.0);

    const Point<2> x(1.2, 0.7);
    const Point<2> beta = mp3.beta(x);
    EXPECT_DOUBLE_EQ(beta[0], 0.7);
    EXPECT_DOUBLE_EQ(beta[1], 1.0 + 1.44);
    EXPECT_FALSE(make_model_problem(ProblemId::mp4).region.full);
}

TEST(ProblemDiscretization, DimensionsAndAlignment)
{
    const ProblemDiscretization d(make_model_problem(ProblemId::mp1), 2, 3);
    EXPECT_EQ(d.Q().dim(), 24 * 24);
    EXPECT_EQ(d.U().dim(), 8 * 8);
    const auto A = d.system(1.0, 1.0, 0.0);
    EXPECT_EQ(A.size(), 2 * 576 + 64);
    const Vector b = d.rhs();
    EXPECT_EQ(b.head(576).norm(), 0.0);
    EXPECT_EQ(b.segment(576, 576).norm(), 0.0);
    EXPECT_GT(b.tail(64).norm(), 0.0);
    EXPECT_THROW(ProblemDiscretization(make_model_problem(ProblemId::mp2), 2, 1), ParameterError);
    EXPECT_THROW(ProblemDiscretization(make_model_problem(ProblemId::mp1), 1, 3), ParameterError);
}

TEST(ProblemDiscretization, BothPreconditionersConverge)
{
    const ProblemDiscretization d(make_model_problem(ProblemId::mp3), 2, 3);
    SolveSettings s;
    s.level = 3;
    const auto exact = d.solve(1e-3, 1e-3, s);
    EXPECT_TRUE(exact.converged);
    s.precond = PreconditionerVariant::inexact_mg;
    for (auto kind : {SmootherKind::gauss_seidel, SmootherKind::macro_gauss_seidel}) {
        s.smoother.kind = kind;
        const auto r = d.solve(1e-3, 1e-3, s);
        EXPECT_TRUE(r.converged);
        EXPECT_GE(r.iterations, exact.iterations);
    }
}

TEST(IterationTable, CsvLayout)
{
    TableSpec spec;
    spec.problem = ProblemId::mp1;
    spec.sweep = SweepKind::eps_alpha;
    spec.rows = {1.0, 1e-3};
    spec.cols = {1.0, 1e-3, 1e-6};
    spec.settings.level = 2;
    const auto t = run_table(spec);
    std::ostringstream os;
    t.write_csv(os);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "eps\\alpha,1,0.001,1e-06");
    std::getline(is, line);
    EXPECT_EQ(line.rfind("1,", 0), 0u);
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 3);
    std::getline(is, line);
    EXPECT_EQ(line.rfind("0.001,", 0), 0u);
    EXPECT_FALSE(std::getline(is, line));
}

TEST(IterationTable, RegeneratedCsvIsByteIdentical)
{
    TableSpec spec;
    spec.problem = ProblemId::mp2;
    spec.sweep = SweepKind::level_alpha;
    spec.rows = {2, 3};
    spec.cols = {1.0, 1e-3};
    auto csv = [&] {
        std::ostringstream os;
        run_table(spec).write_csv(os);
        return os.str();
    };
    const std::string first = csv();
    EXPECT_EQ(first, csv());
    EXPECT_EQ(first.substr(0, first.find('\n')), "level\\alpha,1,0.001");
}

TEST(IterationTable, DefaultAxesAndSentinel)
{
    TableSpec spec;
    spec.sweep = SweepKind::level_p;
    spec.apply_default_axes();
    EXPECT_EQ(spec.rows, (std::vector<double>{4, 5, 6, 7}));
    EXPECT_EQ(spec.cols, (std::vector<double>{2, 3, 5, 7}));

    TableSpec tiny;
    tiny.sweep = SweepKind::level_p;
    tiny.rows = {2};
    tiny.cols = {2, 3};
    tiny.settings.solver.max_iterations = 2;
    const auto t = run_table(tiny);
    for (const auto& cell : t.cells[0]) {
        EXPECT_FALSE(cell.converged);
        EXPECT_EQ(cell.iterations, 2);
    }

    TableSpec bad;
    bad.sweep = SweepKind::level_alpha;
    bad.rows = {2.5};
    bad.cols = {1.0};
    EXPECT_THROW(run_table(bad), ParameterError);
}

TEST(Canonical1D, ExactSolutionFormula)
{
    for (double eps : {1.0, 0.1, 0.01, 1e-4}) {
        EXPECT_NEAR(canonical_exact(0.0, eps), 0.0, 1e-15);
        EXPECT_NEAR(canonical_exact(1.0, eps), 1.0, 1e-15);
        // -u' - eps u'' = 0 via central differences
        const double x = 0.5;
        const double h = 1e-4 * std::min(1.0, eps * 10);
        const double d1 = (canonical_exact(x + h, eps) - canonical_exact(x - h, eps)) / (2 * h);
        const double d2 =
            (canonical_exact(x + h, eps) - 2 * canonical_exact(x, eps) + canonical_exact(x - h, eps)) / (h * h);
        EXPECT_NEAR(-d1 - eps * d2, 0.0, 1e-4 * (1.0 + std::abs(d1)));
        EXPECT_NEAR(canonical_exact_derivative(x, eps), d1, 1e-6 * (1.0 + std::abs(d1)));
    }
}

TEST(Canonical1D, SmoothCaseIsAccurate)
{
    Canonical1DSettings s;
    s.eps = 1.0;
    s.level = 4;
    s.samples = 11;
    const auto r = run_canonical_1d(s);
    EXPECT_LT(r.forward_metrics.l2_error, 1e-4);
    EXPECT_LT(r.state_metrics.l2_error, 1e-4);
    EXPECT_EQ(r.forward_metrics.overshoot, 0.0);
    EXPECT_DOUBLE_EQ(r.state.front(), 0.0);
    EXPECT_DOUBLE_EQ(r.state.back(), 1.0);
    EXPECT_DOUBLE_EQ(r.forward.back(), 1.0);
    // alpha q + w = 0 holds exactly in the discrete system
    EXPECT_NEAR(r.w_norm, s.alpha * r.q_norm, 1e-10 * r.q_norm);
}

TEST(Canonical1D, ControlVanishesUnderRefinement)
{
    Canonical1DSettings s;
    s.eps = 1.0;
    s.level = 3;
    const double coarse = run_canonical_1d(s).q_norm;
    s.level = 5;
    const double fine = run_canonical_1d(s).q_norm;
    EXPECT_LT(fine, coarse / 3.0);
}

TEST(Canonical1D, CurveCsv)
{
    Canonical1DSettings s;
    s.samples = 5;
    s.region = Canonical1DRegion::right;
    const auto r = run_canonical_1d(s);
    std::ostringstream os;
    r.write_csv(os);
    const std::string text = os.str();
    EXPECT_EQ(text.substr(0, text.find('\n')), "x,exact,forward,state");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 6);
    EXPECT_DOUBLE_EQ(r.x[2], 0.5);
}

TEST(RateStudy, DegreeTwoIsFirstOrder)
{
    RateStudySettings s;
    s.p = 2;
    s.level_min = 2;
    s.level_max = 4;
    const auto rows = run_rate_study(s);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_TRUE(std::isnan(rows[0].eoc_combined));
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_GT(rows[i].error_q, 0.0);
        EXPECT_NEAR(rows[i].eoc_combined, 1.0, 0.15);
    }
}

TEST(RateStudy, LargeAlphaKeepsStateAccuracy)
{
    // q* = -w*/alpha is negligible: the state error is governed by approximation alone
    RateStudySettings s;
    s.p = 2;
    s.level_min = 2;
    s.level_max = 4;
    s.alpha = 1e6;
    const auto rows = run_rate_study(s);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_NEAR(rows[i].eoc_u, 1.0, 0.15);
        EXPECT_TRUE(std::isfinite(rows[i].error_q));
    }
}

TEST(RateStudy, QuadratureIndependent)
{
    RateStudySettings s;
    s.p = 2;
    s.level_min = 3;
    s.level_max = 3;
    const auto a = run_rate_study(s);
    s.extra_points = 6;
    const auto b = run_rate_study(s);
    EXPECT_NEAR(a[0].combined, b[0].combined, 1e-6 * b[0].combined);
}

TEST(ProjectionRates, StableAndConvergent)
{
    const auto rows = run_projection_rates(2, 2, 4);
    for (const auto& r : rows) {
        EXPECT_LE(r.laplacian_ratio, 1.0 + 1e-12);
        EXPECT_LT(r.l2_error, r.h1_error);
    }
    EXPECT_NEAR(rows.back().eoc_h2, 1.0, 0.1);
    EXPECT_NEAR(rows.back().eoc_l2, 2.0, 0.2);
}

TEST(LowRegularity, PolynomialsAreReproduced)
{
    const auto rows = run_lowreg_projection_bound(
        3, 1, 2, [](const Point<2>& x) { return 2.0 + x[0] - 3.0 * x[1]; }, std::sqrt(10.0));
    for (const auto& r : rows) {
        EXPECT_LT(r.error, 1e-12);
        EXPECT_LT(r.ratio, 1e-10);
    }
}

TEST(LowRegularity, BoundHalvesPerLevel)
{
    const auto rows = run_lowreg_projection_bound(2, 1, 3);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_NEAR(rows[i - 1].bound / rows[i].bound, 2.0, 1e-12);
    }
    EXPECT_NEAR(rows[0].bound, 0.5 / (4.0 * std::sqrt(3.0)) * std::numbers::pi * std::sqrt(2.0), 1e-14);
}

TEST(Verify, BoxReport)
{
    const ProblemDiscretization d(make_model_problem(ProblemId::mp1), 2, 2);
    const auto r = run_verify(d, 1e-3, 1e-3, 0.0, 40);
    EXPECT_LT(r.schur_gap, 1e-10);
    EXPECT_GT(r.condition.kappa, 1.0);
    EXPECT_LE(r.condition.kappa, 4.254);
    EXPECT_GT(r.second_fundamental_constant, 0.0);
    std::ostringstream os;
    r.write_csv(os);
    EXPECT_NE(os.str().find("kappa,"), std::string::npos);
}
