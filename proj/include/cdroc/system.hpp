#pragma once

#include "cdroc/assembly.hpp"
#include "cdroc/errors.hpp"
#include "cdroc/krylov.hpp"
#include "cdroc/types.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>

namespace cdroc {

/// Sparse Cholesky factorization with AMD fill-reducing ordering.
class SparseCholesky {
public:
    SparseCholesky() = default;

    explicit SparseCholesky(const SparseOperator& A, const std::string& what = "matrix")
    {
        require<ParameterError>(A.rows() == A.cols(), what + " must be square");
        const ColMajorSparse colmajor = A;
        solver_ = std::make_shared<Solver>();
        solver_->compute(colmajor);
        require<NotSpdError>(solver_->info() == Eigen::Success, what + " is not symmetric positive definite");
        size_ = A.rows();
    }

    [[nodiscard]] Vector solve(const Vector& b) const { return solver_->solve(b); }
    void solve(const Vector& b, Vector& x) const { x = solver_->solve(b); }

    template <class Derived>
    [[nodiscard]] DenseMatrix solve_many(const Eigen::MatrixBase<Derived>& B) const
    {
        return solver_->solve(B);
    }

    [[nodiscard]] Eigen::Index size() const { return size_; }

private:
    using Solver = Eigen::SimplicialLLT<ColMajorSparse, Eigen::Lower, Eigen::AMDOrdering<int>>;
    std::shared_ptr<Solver> solver_;
    Eigen::Index size_ = 0;
};

/// The saddle-point operator
///     [ alpha M   M    0  ]
///     [   M       0    K  ]
///     [   0      K^T  M_O ]
/// acting on (q, w, u) with q, w in Q_h and u in U_h.
class BlockOperator {
public:
    BlockOperator(SparseOperator mass, SparseOperator state, SparseOperator obs_mass, double alpha)
        : mass_(std::move(mass))
        , state_(std::move(state))
        , obs_mass_(std::move(obs_mass))
        , alpha_(alpha)
    {
        require<ParameterError>(alpha > 0.0, "regularization alpha must be positive");
        require<ParameterError>(mass_.rows() == mass_.cols() && state_.rows() == mass_.rows()
                                    && obs_mass_.rows() == obs_mass_.cols() && state_.cols() == obs_mass_.rows(),
                                "block dimensions are inconsistent");
    }

    [[nodiscard]] Eigen::Index q_dim() const { return mass_.rows(); }
    [[nodiscard]] Eigen::Index u_dim() const { return obs_mass_.rows(); }
    [[nodiscard]] Eigen::Index size() const { return 2 * q_dim() + u_dim(); }
    [[nodiscard]] double alpha() const { return alpha_; }

    [[nodiscard]] const SparseOperator& mass() const { return mass_; }
    [[nodiscard]] const SparseOperator& state() const { return state_; }
    [[nodiscard]] const SparseOperator& obs_mass() const { return obs_mass_; }

    void apply(const Vector& x, Vector& y) const
    {
        const Eigen::Index nq = q_dim();
        const Eigen::Index nu = u_dim();
        y.resize(size());
        const auto q = x.segment(0, nq);
        const auto w = x.segment(nq, nq);
        const auto u = x.segment(2 * nq, nu);
        Vector Mq = mass_ * q;
        y.segment(0, nq) = alpha_ * Mq + mass_ * w;
        y.segment(nq, nq) = Mq + state_ * u;
        y.segment(2 * nq, nu) = state_.transpose() * w + obs_mass_ * u;
    }

private:
    SparseOperator mass_;
    SparseOperator state_;
    SparseOperator obs_mass_;
    double alpha_;
};

struct SystemBuild {
    BlockOperator op;
    Vector rhs;
};

/// Right-hand side (0, f_h, u_{d,h}) for a given operator.
template <int D>
Vector build_rhs(const BlockOperator& op, const TensorSpace<D>& Q, const TensorSpace<D>& U, const GeometryMap<D>& map,
                 const ObservationRegion<D>& region, const LoadFunction<D>& f, const LoadFunction<D>& u_d)
{
    Vector rhs = Vector::Zero(op.size());
    rhs.segment(op.q_dim(), op.q_dim()) = assemble_load<D>(Q, f, map);
    rhs.segment(2 * op.q_dim(), op.u_dim()) = assemble_load<D>(U, u_d, map, region);
    return rhs;
}

/// Assembles the discrete optimality system for the space pair (Q_h, U_h).
template <int D>
SystemBuild build_system(const TensorSpace<D>& Q, const TensorSpace<D>& U, const PdeCoefficients<D>& coeffs,
                         const GeometryMap<D>& map, const ObservationRegion<D>& region, double alpha,
                         const LoadFunction<D>& f, const LoadFunction<D>& u_d)
{
    BlockOperator op(assemble_mass<D>(Q, map), assemble_state<D>(U, Q, coeffs, map),
                     assemble_obs_mass<D>(U, region, map), alpha);
    Vector rhs = build_rhs<D>(op, Q, U, map, region, f, u_d);
    return {std::move(op), std::move(rhs)};
}

enum class PreconditionerVariant { exact_cholesky, inexact_mg };

/// Block-diagonal preconditioner diag(alpha M, M / alpha, M_O + alpha B) realized
/// by sparse Cholesky factorizations. M is factorized once and shared by the first two blocks.
class ExactPreconditioner {
public:
    ExactPreconditioner(const SparseOperator& mass, const SparseOperator& obs_mass, const SparseOperator& fourth_order,
                        double alpha)
        : ExactPreconditioner(std::make_shared<SparseCholesky>(mass, "mass matrix"), mass, obs_mass, fourth_order,
                              alpha)
    {
    }

    /// Reuses an existing factorization of the mass matrix.
    ExactPreconditioner(std::shared_ptr<const SparseCholesky> mass_factor, const SparseOperator& mass,
                        const SparseOperator& obs_mass, const SparseOperator& fourth_order, double alpha)
        : mass_factor_(std::move(mass_factor))
        , mass_(mass)
        , state_block_(obs_mass + alpha * fourth_order)
        , state_factor_(state_block_, "M_O + alpha B")
        , alpha_(alpha)
    {
        require<ParameterError>(alpha > 0.0, "regularization alpha must be positive");
    }

    [[nodiscard]] Eigen::Index q_dim() const { return mass_.rows(); }
    [[nodiscard]] Eigen::Index u_dim() const { return state_block_.rows(); }
    [[nodiscard]] Eigen::Index size() const { return 2 * q_dim() + u_dim(); }
    [[nodiscard]] const SparseOperator& state_block() const { return state_block_; }

    /// z = S^{-1} r
    void apply(const Vector& r, Vector& z) const
    {
        const Eigen::Index nq = q_dim();
        const Eigen::Index nu = u_dim();
        z.resize(size());
        z.segment(0, nq) = mass_factor_->solve(r.segment(0, nq)) / alpha_;
        z.segment(nq, nq) = alpha_ * mass_factor_->solve(r.segment(nq, nq));
        z.segment(2 * nq, nu) = state_factor_.solve(r.segment(2 * nq, nu));
    }

    /// y = S x
    void apply_forward(const Vector& x, Vector& y) const
    {
        const Eigen::Index nq = q_dim();
        const Eigen::Index nu = u_dim();
        y.resize(size());
        y.segment(0, nq) = alpha_ * (mass_ * x.segment(0, nq));
        y.segment(nq, nq) = (mass_ * x.segment(nq, nq)) / alpha_;
        y.segment(2 * nq, nu) = state_block_ * x.segment(2 * nq, nu);
    }

    /// S as a LinearOperator.
    [[nodiscard]] FunctionOperator forward() const
    {
        return FunctionOperator([this](const Vector& x, Vector& y) { apply_forward(x, y); });
    }

private:
    std::shared_ptr<const SparseCholesky> mass_factor_;
    SparseOperator mass_;
    SparseOperator state_block_;
    SparseCholesky state_factor_;
    double alpha_;
};

inline ExactPreconditioner build_preconditioner_exact(const SparseOperator& mass, const SparseOperator& obs_mass,
                                                      const SparseOperator& fourth_order, double alpha)
{
    return ExactPreconditioner(mass, obs_mass, fourth_order, alpha);
}

/// Largest relative gap |u'Bu - (Ku)' M^{-1} (Ku)| / u'Bu over `samples` random u.
inline double verify_schur_identity(const SparseOperator& state, const SparseOperator& mass,
                                    const SparseOperator& fourth_order, int samples = 8, std::uint64_t seed = 11)
{
    const SparseCholesky mf(mass, "mass matrix");
    double worst = 0.0;
    for (int s = 0; s < samples; ++s) {
        const Vector u = random_vector(state.cols(), seed + static_cast<std::uint64_t>(s));
        const Vector Ku = state * u;
        const double schur = Ku.dot(mf.solve(Ku));
        const double b = u.dot(fourth_order * u);
        worst = std::max(worst, std::abs(b - schur) / b);
    }
    return worst;
}

struct ConditionEstimate {
    double lambda_min_abs = 0.0;
    double lambda_max_abs = 0.0;
    double kappa = 0.0;
    int steps = 0;
    bool breakdown = false;
};

/// Extreme |eigenvalues| of S^{-1} A. Lanczos runs on the S-self-adjoint, positive
/// operator (S^{-1} A)^2 so both extremes are exterior eigenvalues; Ritz values then
/// always lie inside [lambda_min^2, lambda_max^2].
template <LinearOperator Op, LinearOperator Prec>
ConditionEstimate estimate_condition(const Op& A, const Prec& Sinv, Eigen::Index n, int iterations = 60,
                                     std::uint64_t seed = 7)
{
    Vector t1(n);
    Vector t2(n);
    const FunctionOperator squared([&](const Vector& x, Vector& y) {
        A.apply(x, t1);
        Sinv.apply(t1, t2);
        A.apply(t2, y);
    });
    const LanczosResult lr = lanczos(squared, Sinv, n, iterations, seed);
    ConditionEstimate out;
    out.steps = lr.steps;
    out.breakdown = lr.breakdown;
    out.lambda_min_abs = std::sqrt(std::max(0.0, lr.ritz_values.front()));
    out.lambda_max_abs = std::sqrt(std::max(0.0, lr.ritz_values.back()));
    out.kappa = out.lambda_min_abs > 0.0 ? out.lambda_max_abs / out.lambda_min_abs
                                         : std::numeric_limits<double>::infinity();
    return out;
}

/// Discrete lower bound for C_Omega^2: max ||u||_{H^2}^2 / ||Lap u||^2 over U_h.
template <int D>
double estimate_second_fundamental_constant(const TensorSpace<D>& U, const GeometryMap<D>& map, int iterations = 60)
{
    const SparseOperator gram = assemble_h2_gram<D>(U, map);
    const SparseOperator lap = assemble_laplacian_form<D>(U, map);
    const SparseCholesky lap_factor(lap, "Laplacian form");
    const MatrixOperator G(gram);
    const FunctionOperator lap_inv([&](const Vector& x, Vector& y) { y = lap_factor.solve(x); });
    const LanczosResult lr = lanczos(G, lap_inv, gram.rows(), iterations);
    return lr.ritz_values.back();
}

} // namespace cdroc
