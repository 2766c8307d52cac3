#pragma once

#include "cdroc/errors.hpp"
#include "cdroc/types.hpp"

#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace cdroc {

/// Anything with `apply(x, y)` computing y = Op x.
template <class T>
concept LinearOperator = requires(const T& op, const Vector& x, Vector& y) { op.apply(x, y); };

/// Adapts a callable `void(const Vector&, Vector&)` to LinearOperator.
class FunctionOperator {
public:
    explicit FunctionOperator(std::function<void(const Vector&, Vector&)> f)
        : f_(std::move(f))
    {
    }

    void apply(const Vector& x, Vector& y) const { f_(x, y); }

private:
    std::function<void(const Vector&, Vector&)> f_;
};

class MatrixOperator {
public:
    explicit MatrixOperator(const SparseOperator& A)
        : A_(&A)
    {
    }

    void apply(const Vector& x, Vector& y) const { y.noalias() = (*A_) * x; }

private:
    const SparseOperator* A_;
};

class IdentityOperator {
public:
    void apply(const Vector& x, Vector& y) const { y = x; }
};

struct SolverConfig {
    double tolerance = 1e-8;
    int max_iterations = 1000;
    std::uint64_t seed = 42;
    /// Start from a random vector (uniform in [-1,1]); otherwise from `initial_guess` or zero.
    bool random_initial_guess = true;
    std::optional<Vector> initial_guess;
    /// Additionally record the true preconditioned residual norm sqrt(r' S^{-1} r) (one extra preconditioner apply).
    bool track_preconditioned_residual = false;

    void validate() const
    {
        require<ParameterError>(tolerance > 0.0 && tolerance < 1.0, "tolerance must lie in (0,1)");
        require<ParameterError>(max_iterations >= 1, "max_iterations must be >= 1");
    }
};

struct SolveReport {
    int iterations = 0;
    bool converged = false;
    /// ||b - A x_k|| / ||b - A x_0||, k = 0..iterations.
    std::vector<double> residual_history;
    /// MINRES recurrence estimate of ||r_k||_{S^{-1}}, k = 0..iterations.
    std::vector<double> preconditioned_estimate;
    /// True ||r_k||_{S^{-1}} when requested.
    std::vector<double> preconditioned_residual;
    double seconds = 0.0;
    std::optional<double> lambda_min_abs;
    std::optional<double> lambda_max_abs;
    std::optional<double> condition_estimate;
};

/// Uniform [-1,1] vector from a 64-bit Mersenne Twister; the mapping is fixed so results
/// do not depend on the standard library's distribution implementation.
inline Vector random_vector(Eigen::Index n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        v[i] = 2.0 * u - 1.0;
    }
    return v;
}

/// Preconditioned MINRES for symmetric A and SPD preconditioner S (given as S^{-1}).
/// Stops when the Euclidean norm of the recomputed residual b - A x_k drops below
/// tolerance * ||r_0||.
template <LinearOperator Op, LinearOperator Prec>
std::pair<Vector, SolveReport> minres(const Op& A, const Prec& Sinv, const Vector& b, const SolverConfig& config)
{
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    const Eigen::Index n = b.size();
    SolveReport report;

    Vector x;
    if (config.initial_guess) {
        require<ParameterError>(config.initial_guess->size() == n, "initial guess has wrong size");
        x = *config.initial_guess;
    } else if (config.random_initial_guess) {
        x = random_vector(n, config.seed);
    } else {
        x = Vector::Zero(n);
    }

    Vector Ax(n);
    A.apply(x, Ax);
    Vector v = b - Ax; // v_1 (unnormalized Lanczos vector)
    const double r0 = v.norm();
    Vector z(n);
    Sinv.apply(v, z);
    double gamma = v.dot(z);
    require<NotSpdError>(gamma >= 0.0, "preconditioner is not positive definite");
    gamma = std::sqrt(gamma);

    report.residual_history.push_back(1.0);
    report.preconditioned_estimate.push_back(gamma);
    if (config.track_preconditioned_residual) {
        report.preconditioned_residual.push_back(gamma);
    }
    auto finish = [&]() {
        report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return std::make_pair(std::move(x), std::move(report));
    };
    if (r0 == 0.0) {
        report.converged = true;
        return finish();
    }

    Vector v_prev = Vector::Zero(n);
    Vector w = Vector::Zero(n);
    Vector w_prev = Vector::Zero(n);
    Vector Az(n);
    Vector v_next(n);
    Vector z_next(n);
    Vector r(n);
    Vector Sr(n);
    double gamma_prev = 1.0;
    double eta = gamma;
    double c = 1.0;
    double c_prev = 1.0;
    double s = 0.0;
    double s_prev = 0.0;

    for (int k = 1; k <= config.max_iterations; ++k) {
        z /= gamma;
        A.apply(z, Az);
        const double delta = Az.dot(z);
        v_next = Az - (delta / gamma) * v - (gamma / gamma_prev) * v_prev;
        Sinv.apply(v_next, z_next);
        double gamma_next = v_next.dot(z_next);
        require<NotSpdError>(gamma_next >= -1e-14 * std::abs(delta) * gamma,
                             "preconditioner is not positive definite");
        gamma_next = std::sqrt(std::max(gamma_next, 0.0));

        const double a0 = c * delta - c_prev * s * gamma;
        const double a1 = std::hypot(a0, gamma_next);
        const double a2 = s * delta + c_prev * c * gamma;
        const double a3 = s_prev * gamma;
        c_prev = c;
        s_prev = s;
        c = a0 / a1;
        s = gamma_next / a1;

        Vector w_next = (z - a3 * w_prev - a2 * w) / a1;
        x += (c * eta) * w_next;
        eta = -s * eta;

        w_prev = std::move(w);
        w = std::move(w_next);
        v_prev = std::move(v);
        v = v_next;
        std::swap(z, z_next);
        gamma_prev = gamma;
        gamma = gamma_next;

        A.apply(x, Ax);
        r = b - Ax;
        const double rel = r.norm() / r0;
        report.iterations = k;
        report.residual_history.push_back(rel);
        report.preconditioned_estimate.push_back(std::abs(eta));
        if (config.track_preconditioned_residual) {
            Sinv.apply(r, Sr);
            report.preconditioned_residual.push_back(std::sqrt(std::max(0.0, r.dot(Sr))));
        }
        if (rel <= config.tolerance) {
            report.converged = true;
            break;
        }
        if (gamma == 0.0) {
            break; // invariant subspace: x is the minimizer over the full Krylov space
        }
    }
    return finish();
}

/// Ritz values of the pencil (A, S) from a Lanczos process in the S inner product
/// with full reorthogonalization. A symmetric, S SPD (given as S^{-1}).
struct LanczosResult {
    std::vector<double> ritz_values; // ascending
    int steps = 0;
    bool breakdown = false;
};

template <LinearOperator Op, LinearOperator Prec>
LanczosResult lanczos(const Op& A, const Prec& Sinv, Eigen::Index n, int iterations, std::uint64_t seed = 7)
{
    require<ParameterError>(iterations >= 1, "Lanczos needs at least one iteration");
    LanczosResult out;
    // w_j = S v_j is stored alongside v_j so that S itself is never applied.
    std::vector<Vector> V;
    std::vector<Vector> W;
    std::vector<double> alpha;
    std::vector<double> beta;

    Vector w = random_vector(n, seed);
    Vector v(n);
    Sinv.apply(w, v);
    double nrm = w.dot(v);
    require<NotSpdError>(nrm > 0.0, "preconditioner is not positive definite");
    nrm = std::sqrt(nrm);
    v /= nrm;
    w /= nrm;

    Vector p(n);
    Vector z(n);
    for (int j = 0; j < iterations; ++j) {
        V.push_back(v);
        W.push_back(w);
        A.apply(v, p);
        const double a = v.dot(p);
        alpha.push_back(a);
        out.steps = j + 1;
        if (j + 1 == iterations || j + 1 == n) {
            break;
        }
        // two passes of classical Gram-Schmidt in the S inner product
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t i = 0; i < V.size(); ++i) {
                const double coef = V[i].dot(p);
                p -= coef * W[i];
            }
        }
        Sinv.apply(p, z);
        double b = p.dot(z);
        if (!(b > 1e-28 * std::max(1.0, std::abs(a) * std::abs(a)))) {
            out.breakdown = true;
            break;
        }
        b = std::sqrt(b);
        beta.push_back(b);
        v = z / b;
        w = p / b;
    }

    const int m = static_cast<int>(alpha.size());
    DenseMatrix T = DenseMatrix::Zero(m, m);
    for (int i = 0; i < m; ++i) {
        T(i, i) = alpha[static_cast<std::size_t>(i)];
        if (i + 1 < m) {
            T(i, i + 1) = T(i + 1, i) = beta[static_cast<std::size_t>(i)];
        }
    }
    Eigen::SelfAdjointEigenSolver<DenseMatrix> es(T, Eigen::EigenvaluesOnly);
    for (int i = 0; i < m; ++i) {
        out.ritz_values.push_back(es.eigenvalues()[i]);
    }
    return out;
}

} // namespace cdroc
