#pragma once

#include "cdroc/assembly.hpp"
#include "cdroc/errors.hpp"
#include "cdroc/geometry.hpp"
#include "cdroc/krylov.hpp"
#include "cdroc/multigrid.hpp"
#include "cdroc/spline.hpp"
#include "cdroc/system.hpp"
#include "cdroc/types.hpp"

#include <Eigen/SparseLU>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cdroc {

// ---------------------------------------------------------------------------
// model problems

enum class ProblemId { mp1, mp2, mp3, mp4 };

inline ProblemId parse_problem(std::string_view name)
{
    if (name == "mp1") {
        return ProblemId::mp1;
    }
    if (name == "mp2") {
        return ProblemId::mp2;
    }
    if (name == "mp3") {
        return ProblemId::mp3;
    }
    if (name == "mp4") {
        return ProblemId::mp4;
    }
    throw ParameterError("unknown problem '" + std::string(name) + "' (expected mp1..mp4)");
}

inline std::string problem_name(ProblemId id)
{
    static const char* names[] = {"mp1", "mp2", "mp3", "mp4"};
    return names[static_cast<int>(id)];
}

/// Box (mp1, mp2) or quarter annulus (mp3, mp4) with full or (1/4,3/4)^2 observation.
/// f = 0 and u_d is the indicator of a disc of radius 1/4 around the image of (3/8, 5/8).
struct ModelProblem {
    ProblemId id;
    GeometryMap<2> map;
    std::function<Point<2>(const Point<2>&)> beta;
    std::optional<Point<2>> constant_beta;
    ObservationRegion<2> region;
    LoadFunction<2> f;
    LoadFunction<2> u_d;

    [[nodiscard]] PdeCoefficients<2> coefficients(double eps, double sigma) const
    {
        if (constant_beta) {
            return PdeCoefficients<2>::with_constant_beta(eps, *constant_beta, sigma);
        }
        return PdeCoefficients<2>::with_beta_field(eps, beta, sigma);
    }
};

inline ObservationRegion<2> centre_box()
{
    return ObservationRegion<2>::box(Point<2>(0.25, 0.25), Point<2>(0.75, 0.75));
}

inline ModelProblem make_model_problem(ProblemId id)
{
    const bool annulus = id == ProblemId::mp3 || id == ProblemId::mp4;
    const bool limited = id == ProblemId::mp2 || id == ProblemId::mp4;
    GeometryMap<2> map = annulus ? quarter_annulus() : identity_map<2>();
    const Point<2> centre = map(Point<2>(0.375, 0.625));
    auto indicator = [centre](const Point<2>& x) { return (x - centre).squaredNorm() <= 1.0 / 16.0 ? 1.0 : 0.0; };

    ModelProblem mp{id,
                    map,
                    {},
                    std::nullopt,
                    limited ? centre_box() : ObservationRegion<2>::whole(),
                    LoadFunction<2>{[](const Point<2>&) { return 0.0; }, 1},
                    LoadFunction<2>{indicator, 4}};
    if (annulus) {
        mp.beta = [](const Point<2>& x) { return Point<2>(x[1], 1.0 + x[0] * x[0]); };
    } else {
        const Point<2> b(-2.0, 1.0);
        mp.beta = [b](const Point<2>&) { return b; };
        mp.constant_beta = b;
    }
    return mp;
}

// ---------------------------------------------------------------------------
// solving one configuration

struct SolveSettings {
    int p = 2;
    int level = 6;
    double sigma = 0.0;
    PreconditionerVariant precond = PreconditionerVariant::exact_cholesky;
    SmootherConfig smoother;
    SolverConfig solver;
};

struct CellResult {
    int iterations = 0;
    bool converged = false;
    double seconds = 0.0;
};

/// Space pair, eps-independent matrices and loads of one model problem at fixed (p, level);
/// eps-dependent blocks are cached per (eps, sigma).
class ProblemDiscretization {
public:
    struct OperatorBlocks {
        SparseOperator state;        // K_h
        SparseOperator fourth_order; // B_h
    };

    ProblemDiscretization(ModelProblem problem, int p, int level)
        : problem_(std::move(problem))
        , p_(p)
        , level_(level)
        , Q_(TensorSpace<2>::uniform(make_space(p, p - 3, level), false))
        , U_(TensorSpace<2>::uniform(make_smooth_space(p, level), true))
    {
        require<ParameterError>(p >= 2, "the space pair needs p >= 2");
        require<ParameterError>(problem_.region.knot_aligned(level),
                                "observation box is not aligned with the level-" + std::to_string(level) + " grid");
        mass_ = assemble_mass<2>(Q_, problem_.map);
        obs_mass_ = assemble_obs_mass<2>(U_, problem_.region, problem_.map);
        f_load_ = assemble_load<2>(Q_, problem_.f, problem_.map);
        ud_load_ = assemble_load<2>(U_, problem_.u_d, problem_.map, problem_.region);
    }

    [[nodiscard]] const ModelProblem& problem() const { return problem_; }
    [[nodiscard]] int degree() const { return p_; }
    [[nodiscard]] int level() const { return level_; }
    [[nodiscard]] const TensorSpace<2>& Q() const { return Q_; }
    [[nodiscard]] const TensorSpace<2>& U() const { return U_; }
    [[nodiscard]] const SparseOperator& mass() const { return mass_; }
    [[nodiscard]] const SparseOperator& obs_mass() const { return obs_mass_; }

    [[nodiscard]] std::shared_ptr<const SparseCholesky> mass_factor() const
    {
        if (!mass_factor_) {
            mass_factor_ = std::make_shared<SparseCholesky>(mass_, "mass matrix");
        }
        return mass_factor_;
    }

    [[nodiscard]] std::shared_ptr<const KroneckerMassInverse<2>> kronecker_inverse() const
    {
        if (!kronecker_) {
            kronecker_ = std::make_shared<KroneckerMassInverse<2>>(Q_, problem_.map);
        }
        return kronecker_;
    }

    [[nodiscard]] const OperatorBlocks& blocks(double eps, double sigma) const
    {
        const auto key = std::make_pair(eps, sigma);
        auto it = blocks_.find(key);
        if (it == blocks_.end()) {
            const auto coeffs = problem_.coefficients(eps, sigma);
            OperatorBlocks b{assemble_state<2>(U_, Q_, coeffs, problem_.map),
                             assemble_fourth_order<2>(U_, coeffs, problem_.map)};
            it = blocks_.emplace(key, std::move(b)).first;
        }
        return it->second;
    }

    [[nodiscard]] BlockOperator system(double eps, double alpha, double sigma) const
    {
        return BlockOperator(mass_, blocks(eps, sigma).state, obs_mass_, alpha);
    }

    [[nodiscard]] Vector rhs() const
    {
        const Eigen::Index nq = Q_.dim();
        Vector b = Vector::Zero(2 * nq + U_.dim());
        b.segment(nq, nq) = f_load_;
        b.segment(2 * nq, U_.dim()) = ud_load_;
        return b;
    }

    [[nodiscard]] CellResult solve(double eps, double alpha, const SolveSettings& s) const
    {
        const auto start = std::chrono::steady_clock::now();
        const BlockOperator A = system(eps, alpha, s.sigma);
        const Vector b = rhs();
        SolveReport report;
        if (s.precond == PreconditionerVariant::exact_cholesky) {
            const ExactPreconditioner S(mass_factor(), mass_, obs_mass_, blocks(eps, s.sigma).fourth_order, alpha);
            report = minres(A, S, b, s.solver).second;
        } else {
            auto mg = std::make_shared<MgHierarchy<2>>(build_hierarchy<2>(
                p_, level_, problem_.map, problem_.coefficients(eps, s.sigma), problem_.region, alpha, s.smoother));
            const InexactPreconditioner<2> S(kronecker_inverse(), std::move(mg), Q_.dim(), alpha);
            report = minres(A, S, b, s.solver).second;
        }
        CellResult out;
        out.iterations = report.iterations;
        out.converged = report.converged;
        out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return out;
    }

private:
    ModelProblem problem_;
    int p_;
    int level_;
    TensorSpace<2> Q_;
    TensorSpace<2> U_;
    SparseOperator mass_;
    SparseOperator obs_mass_;
    Vector f_load_;
    Vector ud_load_;
    mutable std::shared_ptr<SparseCholesky> mass_factor_;
    mutable std::shared_ptr<KroneckerMassInverse<2>> kronecker_;
    mutable std::map<std::pair<double, double>, OperatorBlocks> blocks_;
};

// ---------------------------------------------------------------------------
// iteration tables

enum class SweepKind { eps_alpha, level_alpha, level_p };

inline SweepKind parse_sweep(std::string_view name)
{
    if (name == "eps-alpha") {
        return SweepKind::eps_alpha;
    }
    if (name == "level-alpha") {
        return SweepKind::level_alpha;
    }
    if (name == "level-p") {
        return SweepKind::level_p;
    }
    throw ParameterError("unknown sweep '" + std::string(name) + "' (expected eps-alpha, level-alpha, level-p)");
}

inline std::string format_number(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

struct TableSpec {
    ProblemId problem = ProblemId::mp1;
    SweepKind sweep = SweepKind::eps_alpha;
    std::vector<double> rows;
    std::vector<double> cols;
    /// Fixed values for the axes not swept.
    double eps = 1e-3;
    double alpha = 1e-3;
    SolveSettings settings;

    /// Fills empty axes with the default sweeps.
    void apply_default_axes()
    {
        const std::vector<double> decades{1.0, 1e-3, 1e-6, 1e-9};
        if (rows.empty()) {
            rows = sweep == SweepKind::eps_alpha ? decades : std::vector<double>{4, 5, 6, 7};
        }
        if (cols.empty()) {
            cols = sweep == SweepKind::level_p ? std::vector<double>{2, 3, 5, 7} : decades;
        }
    }
};

struct IterationTable {
    SweepKind sweep = SweepKind::eps_alpha;
    std::vector<double> rows;
    std::vector<double> cols;
    std::vector<std::vector<CellResult>> cells;

    [[nodiscard]] std::string corner_label() const
    {
        switch (sweep) {
        case SweepKind::eps_alpha:
            return "eps\\alpha";
        case SweepKind::level_alpha:
            return "level\\alpha";
        case SweepKind::level_p:
            return "level\\p";
        }
        return "";
    }

    void write_csv(std::ostream& os) const
    {
        os << corner_label();
        for (double c : cols) {
            os << ',' << format_number(c);
        }
        os << '\n';
        for (std::size_t i = 0; i < rows.size(); ++i) {
            os << format_number(rows[i]);
            for (const auto& cell : cells[i]) {
                os << ',' << cell.iterations;
            }
            os << '\n';
        }
    }
};

/// Solves every (row, col) cell. Non-converged cells carry the max-iteration count.
inline IterationTable run_table(TableSpec spec,
                                const std::function<void(double, double, const CellResult&)>& progress = {})
{
    spec.apply_default_axes();
    IterationTable table;
    table.sweep = spec.sweep;
    table.rows = spec.rows;
    table.cols = spec.cols;
    table.cells.assign(spec.rows.size(), std::vector<CellResult>(spec.cols.size()));
    const ModelProblem mp = make_model_problem(spec.problem);

    auto as_int = [](double v) {
        const int i = static_cast<int>(std::lround(v));
        require<ParameterError>(std::abs(v - i) < 1e-12, "level and degree axes need integer values");
        return i;
    };

    std::unique_ptr<ProblemDiscretization> disc;
    for (std::size_t i = 0; i < spec.rows.size(); ++i) {
        for (std::size_t j = 0; j < spec.cols.size(); ++j) {
            SolveSettings s = spec.settings;
            double eps = spec.eps;
            double alpha = spec.alpha;
            switch (spec.sweep) {
            case SweepKind::eps_alpha:
                eps = spec.rows[i];
                alpha = spec.cols[j];
                break;
            case SweepKind::level_alpha:
                s.level = as_int(spec.rows[i]);
                alpha = spec.cols[j];
                break;
            case SweepKind::level_p:
                s.level = as_int(spec.rows[i]);
                s.p = as_int(spec.cols[j]);
                break;
            }
            if (!disc || disc->degree() != s.p || disc->level() != s.level) {
                disc = std::make_unique<ProblemDiscretization>(mp, s.p, s.level);
            }
            CellResult r = disc->solve(eps, alpha, s);
            if (!r.converged) {
                r.iterations = s.solver.max_iterations;
            }
            table.cells[i][j] = r;
            if (progress) {
                progress(spec.rows[i], spec.cols[j], r);
            }
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// canonical one-dimensional problem

enum class Canonical1DRegion { full, left, right };

inline Canonical1DRegion parse_canonical_region(std::string_view name)
{
    if (name == "full") {
        return Canonical1DRegion::full;
    }
    if (name == "left") {
        return Canonical1DRegion::left;
    }
    if (name == "right") {
        return Canonical1DRegion::right;
    }
    throw ParameterError("unknown 1D observation region '" + std::string(name) + "' (expected full, left, right)");
}

struct Canonical1DSettings {
    double eps = 0.01;
    double alpha = 1e-3;
    Canonical1DRegion region = Canonical1DRegion::full;
    int p = 2;
    int level = 4;
    int samples = 1001;
};

struct CurveMetrics {
    double overshoot = 0.0;  // max(u_h) - 1, clipped at 0
    double undershoot = 0.0; // -min(u_h), clipped at 0
    double l2_error = 0.0;
    double l2_error_in_region = 0.0;
};

struct Canonical1DResult {
    std::vector<double> x;
    std::vector<double> exact;
    std::vector<double> forward;
    std::vector<double> state;
    CurveMetrics forward_metrics;
    CurveMetrics state_metrics;
    double q_norm = 0.0;
    double w_norm = 0.0;

    void write_csv(std::ostream& os) const
    {
        os << "x,exact,forward,state\n";
        for (std::size_t i = 0; i < x.size(); ++i) {
            os << format_number(x[i]) << ',' << format_number(exact[i]) << ',' << format_number(forward[i]) << ','
               << format_number(state[i]) << '\n';
        }
    }
};

/// u(x) = (exp(-x/eps) - 1) / (exp(-1/eps) - 1), written to avoid overflow for small eps.
inline double canonical_exact(double x, double eps)
{
    return std::expm1(-x / eps) / std::expm1(-1.0 / eps);
}

inline double canonical_exact_derivative(double x, double eps)
{
    return -std::exp(-x / eps) / (eps * std::expm1(-1.0 / eps));
}

/// Forward Galerkin (trial = test = U_h) and optimal control (Q_h = S_{p,p-3}) solutions of
/// -eps u'' - u' = 0, u(0) = 0, u(1) = 1 with u_d = exact solution. The boundary value is lifted
/// by the last basis function of the unmasked space.
inline Canonical1DResult run_canonical_1d(const Canonical1DSettings& s)
{
    require<ParameterError>(s.eps > 0.0 && s.alpha > 0.0, "eps and alpha must be positive");
    require<ParameterError>(s.samples >= 2, "need at least two samples");
    const auto map = identity_map<1>();
    const auto u1 = make_smooth_space(s.p, s.level);
    const auto U = TensorSpace<1>::uniform(u1, true);
    const auto Ufull = TensorSpace<1>::uniform(u1, false);
    const auto Q = TensorSpace<1>::uniform(make_space(s.p, s.p - 3, s.level), false);
    const auto coeffs = PdeCoefficients<1>::with_constant_beta(s.eps, Point<1>(-1.0), 0.0);

    ObservationRegion<1> region = ObservationRegion<1>::whole();
    if (s.region == Canonical1DRegion::left) {
        region = ObservationRegion<1>::box(Point<1>(0.0), Point<1>(0.25));
    } else if (s.region == Canonical1DRegion::right) {
        region = ObservationRegion<1>::box(Point<1>(0.75), Point<1>(1.0));
    }

    // lifting g = last basis function: column of the unmasked operators
    const int last = u1.dim() - 1;
    Vector g = Vector::Zero(u1.dim());
    g[last] = 1.0;
    const auto lift = [&](const SparseOperator& full) { return Vector(full * g); };

    // quadrature that resolves the layer in the data
    const int pts = s.p + 5;
    const LoadFunction<1> ud{[&](const Point<1>& x) { return canonical_exact(x[0], s.eps); }, 8};

    Canonical1DResult out;

    // forward problem
    const SparseOperator Af = assemble_state<1>(U, U, coeffs, map, pts);
    const Vector bf = -lift(assemble_state<1>(Ufull, U, coeffs, map, pts));
    Eigen::SparseLU<ColMajorSparse> lu_f;
    lu_f.compute(ColMajorSparse(Af));
    require<Error>(lu_f.info() == Eigen::Success, "forward Galerkin matrix is singular");
    const Vector uf = lu_f.solve(bf);

    // optimal control system
    const SparseOperator M = assemble_mass<1>(Q, map, pts);
    const SparseOperator K = assemble_state<1>(U, Q, coeffs, map, pts);
    IntegrationOptions<1> obs_opts;
    obs_opts.points = pts;
    obs_opts.region = region;
    const SparseOperator Mo = assemble_bilinear<1>(U, U, map, value_side<1>(), value_side<1>(), obs_opts);
    const SparseOperator Mo_full = assemble_bilinear<1>(U, Ufull, map, value_side<1>(), value_side<1>(), obs_opts);
    const Vector rhs_state = -lift(assemble_state<1>(Ufull, Q, coeffs, map, pts));
    const Vector rhs_obs = assemble_load<1>(U, ud, map, region, pts) - lift(Mo_full);

    const BlockOperator A(M, K, Mo, s.alpha);
    const Eigen::Index nq = A.q_dim();
    const Eigen::Index nu = A.u_dim();
    std::vector<Triplet> t;
    auto put = [&t](const SparseOperator& B, Eigen::Index r0, Eigen::Index c0, double scale, bool transpose) {
        for (int k = 0; k < B.outerSize(); ++k) {
            for (SparseOperator::InnerIterator it(B, k); it; ++it) {
                const auto r = static_cast<int>(r0 + (transpose ? it.col() : it.row()));
                const auto c = static_cast<int>(c0 + (transpose ? it.row() : it.col()));
                t.emplace_back(r, c, scale * it.value());
            }
        }
    };
    put(M, 0, 0, s.alpha, false);
    put(M, 0, nq, 1.0, false);
    put(M, nq, 0, 1.0, false);
    put(K, nq, 2 * nq, 1.0, false);
    put(K, 2 * nq, nq, 1.0, true);
    put(Mo, 2 * nq, 2 * nq, 1.0, false);
    ColMajorSparse big(2 * nq + nu, 2 * nq + nu);
    big.setFromTriplets(t.begin(), t.end());
    Vector rhs = Vector::Zero(2 * nq + nu);
    rhs.segment(nq, nq) = rhs_state;
    rhs.segment(2 * nq, nu) = rhs_obs;
    Eigen::SparseLU<ColMajorSparse> lu;
    lu.compute(big);
    require<Error>(lu.info() == Eigen::Success, "optimal control system is singular");
    const Vector x = lu.solve(rhs);
    const Vector q = x.segment(0, nq);
    const Vector w = x.segment(nq, nq);
    const Vector us = x.segment(2 * nq, nu);

    out.q_norm = std::sqrt(q.dot(M * q));
    out.w_norm = std::sqrt(w.dot(M * w));

    auto full_coeffs = [&](const Vector& interior) {
        Vector c = g;
        c.segment(1, interior.size()) = interior;
        return c;
    };
    const Vector cf = full_coeffs(uf);
    const Vector cs = full_coeffs(us);

    auto metrics = [&](const Vector& c, const std::vector<double>& values) {
        CurveMetrics m;
        double hi = -std::numeric_limits<double>::infinity();
        double lo = std::numeric_limits<double>::infinity();
        for (double v : values) {
            hi = std::max(hi, v);
            lo = std::min(lo, v);
        }
        m.overshoot = std::max(0.0, hi - 1.0);
        m.undershoot = std::max(0.0, -lo);
        IntegrationOptions<1> opts;
        opts.points = pts;
        opts.subdivisions = 8;
        auto sq_err = [&](const QuadPoint<1>& qp, const PhysicalDerivatives<1>& pd) {
            const double e = pd.value - canonical_exact(qp.x[0], s.eps);
            return e * e;
        };
        m.l2_error = std::sqrt(integrate_field<1>(Ufull, c, map, sq_err, opts));
        opts.region = region;
        opts.region_mode = RegionMode::clip;
        m.l2_error_in_region = std::sqrt(integrate_field<1>(Ufull, c, map, sq_err, opts));
        return m;
    };

    for (int i = 0; i < s.samples; ++i) {
        const double xi = static_cast<double>(i) / (s.samples - 1);
        out.x.push_back(xi);
        out.exact.push_back(canonical_exact(xi, s.eps));
        out.forward.push_back(eval_spline(u1, cf, xi, 0)[0]);
        out.state.push_back(eval_spline(u1, cs, xi, 0)[0]);
    }
    out.forward_metrics = metrics(cf, out.forward);
    out.state_metrics = metrics(cs, out.state);
    return out;
}

// ---------------------------------------------------------------------------
// convergence studies on the unit square

inline double eoc(double coarse, double fine)
{
    return std::log2(coarse / fine);
}

/// Smooth manufactured optimum: u* = sin(pi x) sin(pi y), w* = x(1-x) y(1-y), q* = -w*/alpha.
struct ManufacturedSolution {
    double alpha;

    static PhysicalDerivatives<2> u(const Point<2>& x)
    {
        const double pi = std::numbers::pi;
        const double sx = std::sin(pi * x[0]);
        const double sy = std::sin(pi * x[1]);
        const double cx = std::cos(pi * x[0]);
        const double cy = std::cos(pi * x[1]);
        PhysicalDerivatives<2> d;
        d.value = sx * sy;
        d.gradient << pi * cx * sy, pi * sx * cy;
        d.hessian << -pi * pi * sx * sy, pi * pi * cx * cy, pi * pi * cx * cy, -pi * pi * sx * sy;
        return d;
    }

    static PhysicalDerivatives<2> w(const Point<2>& x)
    {
        const double a = x[0] * (1.0 - x[0]);
        const double b = x[1] * (1.0 - x[1]);
        const double da = 1.0 - 2.0 * x[0];
        const double db = 1.0 - 2.0 * x[1];
        PhysicalDerivatives<2> d;
        d.value = a * b;
        d.gradient << da * b, a * db;
        d.hessian << -2.0 * b, da * db, da * db, -2.0 * a;
        return d;
    }

    [[nodiscard]] double q(const Point<2>& x) const { return -w(x).value / alpha; }
};

struct RateRow {
    int level = 0;
    double error_q = 0.0; // sqrt(alpha) ||q - q_h||
    double error_w = 0.0; // ||w - w_h|| / sqrt(alpha)
    double error_u = 0.0; // (||u - u_h||^2_O + alpha ||L(u - u_h)||^2)^(1/2)
    double combined = 0.0;
    double eoc_q = std::numeric_limits<double>::quiet_NaN();
    double eoc_w = std::numeric_limits<double>::quiet_NaN();
    double eoc_u = std::numeric_limits<double>::quiet_NaN();
    double eoc_combined = std::numeric_limits<double>::quiet_NaN();
};

struct RateStudySettings {
    int p = 3;
    int level_min = 3;
    int level_max = 6;
    double eps = 1.0;
    double alpha = 1.0;
    double sigma = 0.0;
    Point<2> beta = Point<2>(-2.0, 1.0);
    /// Extra Gauss points per direction for loads and error integrals.
    int extra_points = 3;
};

inline void write_rate_csv(std::ostream& os, const std::vector<RateRow>& rows)
{
    os << "level,error_q,error_w,error_u,combined,eoc_q,eoc_w,eoc_u,eoc_combined\n";
    for (const auto& r : rows) {
        os << r.level << ',' << format_number(r.error_q) << ',' << format_number(r.error_w) << ','
           << format_number(r.error_u) << ',' << format_number(r.combined) << ',' << format_number(r.eoc_q) << ','
           << format_number(r.eoc_w) << ',' << format_number(r.eoc_u) << ',' << format_number(r.eoc_combined)
           << '\n';
    }
}

namespace detail {

inline void fill_eoc(std::vector<RateRow>& rows)
{
    for (std::size_t i = 1; i < rows.size(); ++i) {
        rows[i].eoc_q = eoc(rows[i - 1].error_q, rows[i].error_q);
        rows[i].eoc_w = eoc(rows[i - 1].error_w, rows[i].error_w);
        rows[i].eoc_u = eoc(rows[i - 1].error_u, rows[i].error_u);
        rows[i].eoc_combined = eoc(rows[i - 1].combined, rows[i].combined);
    }
}

} // namespace detail

/// Full-observation manufactured study on the unit square with errors in the S-norm components.
inline std::vector<RateRow> run_rate_study(const RateStudySettings& s)
{
    require<ParameterError>(s.level_min >= 1 && s.level_max >= s.level_min, "invalid level range");
    const auto map = identity_map<2>();
    const auto coeffs = PdeCoefficients<2>::with_constant_beta(s.eps, s.beta, s.sigma);
    const ManufacturedSolution ms{s.alpha};
    const int pts = s.p + 1 + s.extra_points;

    const LoadFunction<2> f{[&](const Point<2>& x) { return coeffs.apply(x, ManufacturedSolution::u(x)) + ms.q(x); }};
    const LoadFunction<2> ud{
        [&](const Point<2>& x) { return ManufacturedSolution::u(x).value + coeffs.apply_adjoint(x, ManufacturedSolution::w(x)); }};

    std::vector<RateRow> rows;
    for (int l = s.level_min; l <= s.level_max; ++l) {
        const auto Q = TensorSpace<2>::uniform(make_space(s.p, s.p - 3, l), false);
        const auto U = TensorSpace<2>::uniform(make_smooth_space(s.p, l), true);
        const SparseOperator M = assemble_mass<2>(Q, map);
        const SparseOperator K = assemble_state<2>(U, Q, coeffs, map);
        const SparseOperator Mo = assemble_mass<2>(U, map);
        const SparseOperator B = assemble_fourth_order<2>(U, coeffs, map);
        const BlockOperator A(M, K, Mo, s.alpha);
        Vector b = Vector::Zero(A.size());
        b.segment(A.q_dim(), A.q_dim()) = assemble_load<2>(Q, f, map, std::nullopt, pts);
        b.segment(2 * A.q_dim(), A.u_dim()) = assemble_load<2>(U, ud, map, std::nullopt, pts);

        const ExactPreconditioner S(M, Mo, B, s.alpha);
        SolverConfig cfg;
        cfg.random_initial_guess = false;
        cfg.tolerance = 1e-13;
        cfg.max_iterations = 5000;
        const auto [x, report] = minres(A, S, b, cfg);
        const Vector qh = x.segment(0, A.q_dim());
        const Vector wh = x.segment(A.q_dim(), A.q_dim());
        const Vector uh = x.segment(2 * A.q_dim(), A.u_dim());

        const std::array<const TensorSpace<2>*, 2> spaces{&Q, &U};
        IntegrationOptions<2> opts;
        opts.points = pts;
        double eq2 = 0.0;
        double ew2 = 0.0;
        double eu2 = 0.0;
        double el2 = 0.0;
        for_each_quadrature_point<2>(
            std::span<const TensorSpace<2>* const>(spaces), map, opts, 2, [](const MultiIndex<2>&) {},
            [&](const QuadPoint<2>& qp, std::span<const ShapeSet<2>> sets) {
                const double dq = ms.q(qp.x) - evaluate_field<2>(sets[0], qh).value;
                const double dw = ManufacturedSolution::w(qp.x).value - evaluate_field<2>(sets[0], wh).value;
                const auto ue = ManufacturedSolution::u(qp.x);
                const auto ud_h = evaluate_field<2>(sets[1], uh);
                PhysicalDerivatives<2> du;
                du.value = ue.value - ud_h.value;
                du.gradient = ue.gradient - ud_h.gradient;
                du.hessian = ue.hessian - ud_h.hessian;
                const double r = coeffs.apply(qp.x, du);
                eq2 += qp.weight * dq * dq;
                ew2 += qp.weight * dw * dw;
                el2 += qp.weight * du.value * du.value;
                eu2 += qp.weight * r * r;
            },
            [](const MultiIndex<2>&) {});

        RateRow row;
        row.level = l;
        row.error_q = std::sqrt(s.alpha * eq2);
        row.error_w = std::sqrt(ew2 / s.alpha);
        row.error_u = std::sqrt(el2 + s.alpha * eu2);
        row.combined = row.error_q + row.error_w + row.error_u;
        rows.push_back(row);
    }
    detail::fill_eoc(rows);
    return rows;
}

struct ProjectionRow {
    int level = 0;
    double h2_error = 0.0; // ||grad^2 (u - Pi u)||
    double h1_error = 0.0; // ||grad (u - Pi u)||
    double l2_error = 0.0; // ||u - Pi u||
    double laplacian_ratio = 0.0; // ||Lap Pi u|| / ||Lap u||
    double eoc_h2 = std::numeric_limits<double>::quiet_NaN();
    double eoc_h1 = std::numeric_limits<double>::quiet_NaN();
    double eoc_l2 = std::numeric_limits<double>::quiet_NaN();
};

inline void write_projection_csv(std::ostream& os, const std::vector<ProjectionRow>& rows)
{
    os << "level,h2_error,h1_error,l2_error,laplacian_ratio,eoc_h2,eoc_h1,eoc_l2\n";
    for (const auto& r : rows) {
        os << r.level << ',' << format_number(r.h2_error) << ',' << format_number(r.h1_error) << ','
           << format_number(r.l2_error) << ',' << format_number(r.laplacian_ratio) << ',' << format_number(r.eoc_h2)
           << ',' << format_number(r.eoc_h1) << ',' << format_number(r.eoc_l2) << '\n';
    }
}

/// H^2-orthogonal projection (Hessian inner product) of sin(pi x) sin(pi y) onto S_{p,l} with H^1_0 mask.
inline std::vector<ProjectionRow> run_projection_rates(int p, int level_min, int level_max)
{
    require<ParameterError>(p >= 2 && level_min >= 1 && level_max >= level_min, "invalid projection study range");
    const auto map = identity_map<2>();
    std::vector<ProjectionRow> rows;
    for (int l = level_min; l <= level_max; ++l) {
        const auto U = TensorSpace<2>::uniform(make_smooth_space(p, l), true);
        const SparseOperator H = assemble_hessian_form<2>(U, map);
        IntegrationOptions<2> opts;
        opts.points = p + 4;
        Vector b = Vector::Zero(U.dim());
        const std::array<const TensorSpace<2>*, 1> spaces{&U};
        for_each_quadrature_point<2>(
            std::span<const TensorSpace<2>* const>(spaces), map, opts, 2, [](const MultiIndex<2>&) {},
            [&](const QuadPoint<2>& qp, std::span<const ShapeSet<2>> sets) {
                const auto ue = ManufacturedSolution::u(qp.x);
                for (std::size_t i = 0; i < sets[0].shape.size(); ++i) {
                    const int g = sets[0].global[i];
                    if (g >= 0) {
                        b[g] += qp.weight * ue.hessian.cwiseProduct(sets[0].shape[i].hessian).sum();
                    }
                }
            },
            [](const MultiIndex<2>&) {});
        const SparseCholesky chol(H, "Hessian form");
        const Vector c = chol.solve(b);

        double e0 = 0.0;
        double e1 = 0.0;
        double e2 = 0.0;
        double lap_h = 0.0;
        double lap = 0.0;
        integrate_field<2>(
            U, c, map,
            [&](const QuadPoint<2>& qp, const PhysicalDerivatives<2>& pd) {
                const auto ue = ManufacturedSolution::u(qp.x);
                const double d0 = ue.value - pd.value;
                e0 += qp.weight * d0 * d0;
                e1 += qp.weight * (ue.gradient - pd.gradient).squaredNorm();
                e2 += qp.weight * (ue.hessian - pd.hessian).squaredNorm();
                lap_h += qp.weight * pd.laplacian() * pd.laplacian();
                lap += qp.weight * ue.laplacian() * ue.laplacian();
                return 0.0;
            },
            opts);
        ProjectionRow row;
        row.level = l;
        row.l2_error = std::sqrt(e0);
        row.h1_error = std::sqrt(e1);
        row.h2_error = std::sqrt(e2);
        row.laplacian_ratio = std::sqrt(lap_h / lap);
        rows.push_back(row);
    }
    for (std::size_t i = 1; i < rows.size(); ++i) {
        rows[i].eoc_h2 = eoc(rows[i - 1].h2_error, rows[i].h2_error);
        rows[i].eoc_h1 = eoc(rows[i - 1].h1_error, rows[i].h1_error);
        rows[i].eoc_l2 = eoc(rows[i - 1].l2_error, rows[i].l2_error);
    }
    return rows;
}

struct LowRegRow {
    int level = 0;
    double error = 0.0;
    double bound = 0.0;
    double ratio = 0.0;
};

inline void write_lowreg_csv(std::ostream& os, const std::vector<LowRegRow>& rows)
{
    os << "level,error,bound,ratio\n";
    for (const auto& r : rows) {
        os << r.level << ',' << format_number(r.error) << ',' << format_number(r.bound) << ','
           << format_number(r.ratio) << '\n';
    }
}

/// L2 projection of `q` onto S_{p,p-3,l} compared with h / (4 sqrt 3) * grad_norm.
inline std::vector<LowRegRow> run_lowreg_projection_bound(
    int p, int level_min, int level_max,
    const std::function<double(const Point<2>&)>& q =
        [](const Point<2>& x) {
            return std::cos(2.0 * std::numbers::pi * x[0]) * std::cos(2.0 * std::numbers::pi * x[1]);
        },
    double grad_norm = std::numbers::pi * std::numbers::sqrt2)
{
    require<ParameterError>(p >= 2 && level_min >= 0 && level_max >= level_min, "invalid projection study range");
    const auto map = identity_map<2>();
    std::vector<LowRegRow> rows;
    for (int l = level_min; l <= level_max; ++l) {
        const auto Q = TensorSpace<2>::uniform(make_space(p, p - 3, l), false);
        const SparseOperator M = assemble_mass<2>(Q, map);
        const Vector b = assemble_load<2>(Q, LoadFunction<2>{q}, map, std::nullopt, p + 6);
        const SparseCholesky chol(M, "mass matrix");
        const Vector c = chol.solve(b);
        IntegrationOptions<2> opts;
        opts.points = p + 6;
        const double err2 = integrate_field<2>(
            Q, c, map,
            [&](const QuadPoint<2>& qp, const PhysicalDerivatives<2>& pd) {
                const double d = q(qp.x) - pd.value;
                return d * d;
            },
            opts);
        LowRegRow row;
        row.level = l;
        row.error = std::sqrt(std::max(0.0, err2));
        row.bound = std::ldexp(1.0, -l) / (4.0 * std::sqrt(3.0)) * grad_norm;
        row.ratio = row.error / row.bound;
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// theory checks for one configuration

struct VerifyReport {
    double schur_gap = 0.0;
    ConditionEstimate condition;
    double second_fundamental_constant = 0.0;

    void write_csv(std::ostream& os) const
    {
        os << "quantity,value\n";
        os << "schur_gap," << format_number(schur_gap) << '\n';
        os << "lambda_min_abs," << format_number(condition.lambda_min_abs) << '\n';
        os << "lambda_max_abs," << format_number(condition.lambda_max_abs) << '\n';
        os << "kappa," << format_number(condition.kappa) << '\n';
        os << "lanczos_steps," << condition.steps << '\n';
        os << "second_fundamental_constant," << format_number(second_fundamental_constant) << '\n';
    }
};

inline VerifyReport run_verify(const ProblemDiscretization& disc, double eps, double alpha, double sigma,
                               int lanczos_iterations = 60)
{
    VerifyReport r;
    const auto& blocks = disc.blocks(eps, sigma);
    r.schur_gap = verify_schur_identity(blocks.state, disc.mass(), blocks.fourth_order);
    const BlockOperator A = disc.system(eps, alpha, sigma);
    const ExactPreconditioner S(disc.mass_factor(), disc.mass(), disc.obs_mass(), blocks.fourth_order, alpha);
    r.condition = estimate_condition(A, S, A.size(), lanczos_iterations);
    r.second_fundamental_constant =
        estimate_second_fundamental_constant<2>(disc.U(), disc.problem().map, lanczos_iterations);
    return r;
}

} // namespace cdroc
