#pragma once

#include "cdroc/errors.hpp"
#include "cdroc/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace cdroc {

/// Univariate B-spline space S_{p,k,l}(0,1): degree p, C^k continuity at the
/// interior breakpoints i*2^-l, open (clamped) knot vector.
class SplineSpace1D {
public:
    SplineSpace1D() = default;

    SplineSpace1D(int degree, int continuity, int level)
        : degree_(degree)
        , continuity_(continuity)
        , level_(level)
    {
        require<ParameterError>(degree >= 1, "spline degree must be >= 1, got " + std::to_string(degree));
        require<ParameterError>(continuity >= -1 && continuity <= degree - 1,
                                "continuity must lie in [-1, p-1], got k=" + std::to_string(continuity)
                                    + " for p=" + std::to_string(degree));
        require<ParameterError>(level >= 0 && level <= 24, "level must lie in [0, 24], got " + std::to_string(level));

        const int elements = num_elements();
        const int mult = interior_multiplicity();
        knots_.clear();
        knots_.reserve(static_cast<std::size_t>(2 * (degree + 1) + mult * (elements - 1)));
        knots_.insert(knots_.end(), static_cast<std::size_t>(degree + 1), 0.0);
        for (int e = 1; e < elements; ++e) {
            const double t = std::ldexp(static_cast<double>(e), -level);
            knots_.insert(knots_.end(), static_cast<std::size_t>(mult), t);
        }
        knots_.insert(knots_.end(), static_cast<std::size_t>(degree + 1), 1.0);
        dim_ = static_cast<int>(knots_.size()) - degree - 1;
    }

    [[nodiscard]] int degree() const { return degree_; }
    [[nodiscard]] int continuity() const { return continuity_; }
    [[nodiscard]] int level() const { return level_; }
    [[nodiscard]] int dim() const { return dim_; }
    [[nodiscard]] const std::vector<double>& knots() const { return knots_; }
    [[nodiscard]] int num_elements() const { return 1 << level_; }
    [[nodiscard]] int interior_multiplicity() const { return degree_ - continuity_; }
    [[nodiscard]] double element_size() const { return std::ldexp(1.0, -level_); }

    [[nodiscard]] double element_begin(int e) const { return std::ldexp(static_cast<double>(e), -level_); }
    [[nodiscard]] double element_end(int e) const { return std::ldexp(static_cast<double>(e + 1), -level_); }

    /// Index of the first basis function that is nonzero on element e.
    [[nodiscard]] int first_active(int e) const { return e * interior_multiplicity(); }

    /// Element containing x; breakpoints belong to the element on their right, x = 1 to the last one.
    [[nodiscard]] int element_of(double x) const
    {
        const int n = num_elements();
        const int e = static_cast<int>(std::floor(std::ldexp(x, level_)));
        return std::clamp(e, 0, n - 1);
    }

    friend bool operator==(const SplineSpace1D& a, const SplineSpace1D& b)
    {
        return a.degree_ == b.degree_ && a.continuity_ == b.continuity_ && a.level_ == b.level_;
    }

private:
    int degree_ = 1;
    int continuity_ = 0;
    int level_ = 0;
    int dim_ = 2;
    std::vector<double> knots_{0.0, 0.0, 1.0, 1.0};
};

inline SplineSpace1D make_space(int p, int k, int level)
{
    return SplineSpace1D(p, k, level);
}

/// Maximum-smoothness space S_{p,l} = S_{p,p-1,l}.
inline SplineSpace1D make_smooth_space(int p, int level)
{
    return SplineSpace1D(p, p - 1, level);
}

/// Values and derivatives of the p+1 basis functions active at a point.
/// `table(r, j)` is the r-th derivative of basis function `first_index + j`.
struct BasisValues {
    int first_index = 0;
    DenseMatrix table;
};

namespace detail {

// Cox-de Boor with derivatives (Piegl & Tiller, A2.3) on the knot span `span`.
inline void basis_derivatives(const std::vector<double>& knots, int p, int span, double x, int max_deriv,
                              DenseMatrix& out)
{
    const int nd = std::min(max_deriv, p);
    out.setZero(max_deriv + 1, p + 1);

    DenseMatrix ndu(p + 1, p + 1);
    std::vector<double> left(static_cast<std::size_t>(p + 1));
    std::vector<double> right(static_cast<std::size_t>(p + 1));
    ndu(0, 0) = 1.0;
    for (int j = 1; j <= p; ++j) {
        left[j] = x - knots[static_cast<std::size_t>(span + 1 - j)];
        right[j] = knots[static_cast<std::size_t>(span + j)] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            ndu(j, r) = right[r + 1] + left[j - r];
            const double temp = ndu(r, j - 1) / ndu(j, r);
            ndu(r, j) = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu(j, j) = saved;
    }
    for (int j = 0; j <= p; ++j) {
        out(0, j) = ndu(j, p);
    }

    DenseMatrix a(2, p + 1);
    for (int r = 0; r <= p; ++r) {
        int s1 = 0;
        int s2 = 1;
        a(0, 0) = 1.0;
        for (int k = 1; k <= nd; ++k) {
            double d = 0.0;
            const int rk = r - k;
            const int pk = p - k;
            if (r >= k) {
                a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
                d = a(s2, 0) * ndu(rk, pk);
            }
            const int j1 = (rk >= -1) ? 1 : -rk;
            const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
            for (int j = j1; j <= j2; ++j) {
                a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
                d += a(s2, j) * ndu(rk + j, pk);
            }
            if (r <= pk) {
                a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
                d += a(s2, k) * ndu(r, pk);
            }
            out(k, r) = d;
            std::swap(s1, s2);
        }
    }
    double factor = p;
    for (int k = 1; k <= nd; ++k) {
        for (int j = 0; j <= p; ++j) {
            out(k, j) *= factor;
        }
        factor *= (p - k);
    }
}

} // namespace detail

/// Basis functions of `space` on element `element`, evaluated at x using that
/// element's polynomial pieces (x may sit on the element boundary).
inline BasisValues eval_basis_on_element(const SplineSpace1D& space, int element, double x, int max_deriv)
{
    require<ParameterError>(element >= 0 && element < space.num_elements(), "element index out of range");
    require<ParameterError>(max_deriv >= 0, "derivative order must be nonnegative");
    BasisValues result;
    result.first_index = space.first_active(element);
    const int span = space.degree() + element * space.interior_multiplicity();
    detail::basis_derivatives(space.knots(), space.degree(), span, x, max_deriv, result.table);
    return result;
}

/// Evaluates the active basis functions and their derivatives at x in [0,1].
/// Derivatives at breakpoints are right limits (left limit at x = 1).
inline BasisValues eval_basis(const SplineSpace1D& space, double x, int max_deriv)
{
    require<DomainError>(x >= 0.0 && x <= 1.0 && !std::isnan(x),
                         "evaluation point " + std::to_string(x) + " outside [0,1]");
    return eval_basis_on_element(space, space.element_of(x), x, max_deriv);
}

/// Evaluates the spline sum_j coeffs[j] N_j and its derivatives up to `max_deriv` at x.
inline Vector eval_spline(const SplineSpace1D& space, const Vector& coeffs, double x, int max_deriv)
{
    require<ParameterError>(coeffs.size() == space.dim(), "coefficient vector does not match space dimension");
    const BasisValues b = eval_basis(space, x, max_deriv);
    Vector out = Vector::Zero(max_deriv + 1);
    for (int j = 0; j <= space.degree(); ++j) {
        out += coeffs[b.first_index + j] * b.table.col(j);
    }
    return out;
}

/// Gauss-Legendre rule with n points on [-1,1].
struct GaussRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

inline GaussRule gauss_legendre(int n)
{
    require<ParameterError>(n >= 1, "Gauss rule needs at least one point");
    GaussRule rule;
    rule.nodes.resize(static_cast<std::size_t>(n));
    rule.weights.resize(static_cast<std::size_t>(n));
    const double pi = 3.14159265358979323846;
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0;
            double p1 = 0.0;
            for (int j = 1; j <= n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
            }
            dp = n * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) {
                break;
            }
        }
        // recompute derivative at the converged root
        double p0 = 1.0;
        double p1 = 0.0;
        for (int j = 1; j <= n; ++j) {
            const double p2 = p1;
            p1 = p0;
            p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
        }
        dp = n * (z * p0 - p1) / (z * z - 1.0);
        const double w = 2.0 / ((1.0 - z * z) * dp * dp);
        rule.nodes[static_cast<std::size_t>(i)] = -z;
        rule.nodes[static_cast<std::size_t>(n - 1 - i)] = z;
        rule.weights[static_cast<std::size_t>(i)] = w;
        rule.weights[static_cast<std::size_t>(n - 1 - i)] = w;
    }
    if (n % 2 == 1) {
        rule.nodes[static_cast<std::size_t>(n / 2)] = 0.0;
    }
    return rule;
}

/// Quadrature points of one knot span.
struct ElementQuadrature {
    int element = 0;
    std::vector<double> nodes;
    std::vector<double> weights;
};

/// Gauss rule with n points mapped to [a,b], optionally split into `subdivisions` equal pieces.
inline void map_gauss_rule(const GaussRule& rule, double a, double b, int subdivisions, std::vector<double>& nodes,
                           std::vector<double>& weights)
{
    nodes.clear();
    weights.clear();
    const double piece = (b - a) / subdivisions;
    for (int s = 0; s < subdivisions; ++s) {
        const double lo = a + s * piece;
        const double half = 0.5 * piece;
        for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
            nodes.push_back(lo + half * (rule.nodes[q] + 1.0));
            weights.push_back(half * rule.weights[q]);
        }
    }
}

/// Gauss-Legendre nodes and weights on every knot span of `space`.
inline std::vector<ElementQuadrature> quadrature_rule(const SplineSpace1D& space, int points_per_element)
{
    require<ParameterError>(points_per_element >= 1, "points_per_element must be >= 1");
    const GaussRule rule = gauss_legendre(points_per_element);
    std::vector<ElementQuadrature> out(static_cast<std::size_t>(space.num_elements()));
    for (int e = 0; e < space.num_elements(); ++e) {
        auto& eq = out[static_cast<std::size_t>(e)];
        eq.element = e;
        map_gauss_rule(rule, space.element_begin(e), space.element_end(e), 1, eq.nodes, eq.weights);
    }
    return out;
}

/// Knot-insertion matrix P (fine.dim x coarse.dim) with spline(c) == spline(P c).
inline SparseOperator prolongation(const SplineSpace1D& coarse, const SplineSpace1D& fine)
{
    require<ParameterError>(coarse.degree() == fine.degree() && coarse.continuity() == fine.continuity()
                                && fine.level() == coarse.level() + 1,
                            "prolongation requires equal degree/continuity and fine.level == coarse.level + 1");
    const int p = coarse.degree();
    std::vector<double> knots = coarse.knots();
    // rows: current fine-side coefficients, columns: coarse coefficients
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(coarse.dim()),
                                          std::vector<double>(static_cast<std::size_t>(coarse.dim()), 0.0));
    for (int i = 0; i < coarse.dim(); ++i) {
        rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 1.0;
    }

    const int new_breaks = coarse.num_elements();
    const int mult = coarse.interior_multiplicity();
    for (int e = 0; e < new_breaks; ++e) {
        const double t = std::ldexp(2.0 * e + 1.0, -fine.level());
        for (int rep = 0; rep < mult; ++rep) {
            // span k with knots[k] <= t < knots[k+1]
            const auto it = std::upper_bound(knots.begin(), knots.end(), t);
            const int k = static_cast<int>(it - knots.begin()) - 1;
            const int n = static_cast<int>(rows.size());
            std::vector<std::vector<double>> next;
            next.reserve(static_cast<std::size_t>(n + 1));
            for (int i = 0; i <= n; ++i) {
                if (i <= k - p) {
                    next.push_back(rows[static_cast<std::size_t>(i)]);
                } else if (i >= k + 1) {
                    next.push_back(rows[static_cast<std::size_t>(i - 1)]);
                } else {
                    const double a = (t - knots[static_cast<std::size_t>(i)])
                                     / (knots[static_cast<std::size_t>(i + p)] - knots[static_cast<std::size_t>(i)]);
                    std::vector<double> row(rows[static_cast<std::size_t>(i)].size());
                    for (std::size_t c = 0; c < row.size(); ++c) {
                        row[c] = a * rows[static_cast<std::size_t>(i)][c]
                                 + (1.0 - a) * rows[static_cast<std::size_t>(i - 1)][c];
                    }
                    next.push_back(std::move(row));
                }
            }
            rows = std::move(next);
            knots.insert(knots.begin() + k + 1, t);
        }
    }

    std::vector<Triplet> triplets;
    for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
        for (int c = 0; c < coarse.dim(); ++c) {
            const double v = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
            if (v != 0.0) {
                triplets.emplace_back(i, c, v);
            }
        }
    }
    SparseOperator P(fine.dim(), coarse.dim());
    P.setFromTriplets(triplets.begin(), triplets.end());
    return P;
}

/// Tensor-product spline space on (0,1)^D. A masked direction drops its first and
/// last basis function, which leaves exactly the functions with zero boundary trace.
template <int D>
class TensorSpace {
public:
    TensorSpace() = default;

    TensorSpace(const std::array<SplineSpace1D, D>& factors, const std::array<bool, D>& masked)
        : factors_(factors)
        , masked_(masked)
    {
        for (int d = 0; d < D; ++d) {
            require<ParameterError>(!masked_[d] || factors_[d].dim() >= 3,
                                    "masking needs at least three basis functions per direction");
        }
    }

    /// Same univariate space in every direction.
    static TensorSpace uniform(const SplineSpace1D& s, bool masked)
    {
        std::array<SplineSpace1D, D> f;
        std::array<bool, D> m;
        f.fill(s);
        m.fill(masked);
        return TensorSpace(f, m);
    }

    [[nodiscard]] const SplineSpace1D& factor(int d) const { return factors_[static_cast<std::size_t>(d)]; }
    [[nodiscard]] const std::array<SplineSpace1D, D>& factors() const { return factors_; }
    [[nodiscard]] bool masked(int d) const { return masked_[static_cast<std::size_t>(d)]; }
    [[nodiscard]] const std::array<bool, D>& mask() const { return masked_; }

    [[nodiscard]] int retained_dim(int d) const { return factor(d).dim() - (masked(d) ? 2 : 0); }
    [[nodiscard]] int offset(int d) const { return masked(d) ? 1 : 0; }

    [[nodiscard]] MultiIndex<D> retained_extents() const
    {
        MultiIndex<D> e;
        for (int d = 0; d < D; ++d) {
            e[d] = retained_dim(d);
        }
        return e;
    }

    [[nodiscard]] int dim() const
    {
        int n = 1;
        for (int d = 0; d < D; ++d) {
            n *= retained_dim(d);
        }
        return n;
    }

    [[nodiscard]] int unmasked_dim() const
    {
        int n = 1;
        for (int d = 0; d < D; ++d) {
            n *= factor(d).dim();
        }
        return n;
    }

    [[nodiscard]] bool is_retained(int d, int full_index) const
    {
        return full_index >= offset(d) && full_index < offset(d) + retained_dim(d);
    }

    /// Flat index (row-major over retained indices) of a full multi-index, or -1 if masked.
    [[nodiscard]] int flat_index_or_masked(const MultiIndex<D>& full) const
    {
        int flat = 0;
        for (int d = 0; d < D; ++d) {
            if (!is_retained(d, full[d])) {
                return -1;
            }
            flat = flat * retained_dim(d) + (full[d] - offset(d));
        }
        return flat;
    }

    [[nodiscard]] int num_elements() const
    {
        int n = 1;
        for (int d = 0; d < D; ++d) {
            n *= factor(d).num_elements();
        }
        return n;
    }

private:
    std::array<SplineSpace1D, D> factors_{};
    std::array<bool, D> masked_{};
};

/// Flat index of a full (unmasked-numbering) multi-index; throws for masked or out-of-range entries.
template <int D>
int tensor_index(const TensorSpace<D>& space, const MultiIndex<D>& full)
{
    for (int d = 0; d < D; ++d) {
        require<ParameterError>(full[d] >= 0 && full[d] < space.factor(d).dim(), "multi-index out of range");
    }
    const int flat = space.flat_index_or_masked(full);
    require<ParameterError>(flat >= 0, "multi-index refers to a masked boundary basis function");
    return flat;
}

/// Inverse of tensor_index.
template <int D>
MultiIndex<D> tensor_multi_index(const TensorSpace<D>& space, int flat)
{
    require<ParameterError>(flat >= 0 && flat < space.dim(), "flat index out of range");
    MultiIndex<D> full;
    for (int d = D - 1; d >= 0; --d) {
        const int n = space.retained_dim(d);
        full[d] = flat % n + space.offset(d);
        flat /= n;
    }
    return full;
}

/// Kronecker product A (x) B with row-major index convention i = i0 * rows(B) + i1.
inline SparseOperator kronecker(const SparseOperator& A, const SparseOperator& B)
{
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(A.nonZeros() * B.nonZeros()));
    for (int i = 0; i < A.outerSize(); ++i) {
        for (SparseOperator::InnerIterator a(A, i); a; ++a) {
            for (int k = 0; k < B.outerSize(); ++k) {
                for (SparseOperator::InnerIterator b(B, k); b; ++b) {
                    t.emplace_back(static_cast<int>(a.row() * B.rows() + b.row()),
                                   static_cast<int>(a.col() * B.cols() + b.col()), a.value() * b.value());
                }
            }
        }
    }
    SparseOperator K(A.rows() * B.rows(), A.cols() * B.cols());
    K.setFromTriplets(t.begin(), t.end());
    return K;
}

/// Drops the first and last row/column of a univariate operator in each masked direction.
inline SparseOperator restrict_interior(const SparseOperator& A, bool rows_masked, bool cols_masked)
{
    const int r0 = rows_masked ? 1 : 0;
    const int c0 = cols_masked ? 1 : 0;
    const int nr = static_cast<int>(A.rows()) - 2 * r0;
    const int nc = static_cast<int>(A.cols()) - 2 * c0;
    std::vector<Triplet> t;
    for (int i = r0; i < r0 + nr; ++i) {
        for (SparseOperator::InnerIterator it(A, i); it; ++it) {
            const int c = static_cast<int>(it.col());
            if (c >= c0 && c < c0 + nc) {
                t.emplace_back(i - r0, c - c0, it.value());
            }
        }
    }
    SparseOperator R(nr, nc);
    R.setFromTriplets(t.begin(), t.end());
    return R;
}

/// Prolongation between two tensor spaces one dyadic level apart (masking respected).
template <int D>
SparseOperator tensor_prolongation(const TensorSpace<D>& coarse, const TensorSpace<D>& fine)
{
    SparseOperator P;
    for (int d = 0; d < D; ++d) {
        require<ParameterError>(coarse.masked(d) == fine.masked(d), "prolongation requires matching masks");
        SparseOperator p1 = restrict_interior(prolongation(coarse.factor(d), fine.factor(d)), fine.masked(d),
                                              coarse.masked(d));
        P = (d == 0) ? p1 : kronecker(P, p1);
    }
    return P;
}

} // namespace cdroc
