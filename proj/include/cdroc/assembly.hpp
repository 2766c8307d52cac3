#pragma once

#include "cdroc/errors.hpp"
#include "cdroc/geometry.hpp"
#include "cdroc/spline.hpp"
#include "cdroc/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace cdroc {

/// Coefficients of L u = -eps Lap u + beta . grad u + sigma u.
template <int D>
struct PdeCoefficients {
    double eps = 1.0;
    std::function<Point<D>(const Point<D>&)> beta = [](const Point<D>&) { return Point<D>::Zero().eval(); };
    std::optional<Point<D>> constant_beta = Point<D>::Zero().eval();
    double sigma = 0.0;

    static PdeCoefficients with_constant_beta(double eps, const Point<D>& b, double sigma)
    {
        PdeCoefficients c;
        c.eps = eps;
        c.beta = [b](const Point<D>&) { return b; };
        c.constant_beta = b;
        c.sigma = sigma;
        c.validate();
        return c;
    }

    /// beta given as a divergence-free field of the physical coordinates.
    static PdeCoefficients with_beta_field(double eps, std::function<Point<D>(const Point<D>&)> field, double sigma)
    {
        PdeCoefficients c;
        c.eps = eps;
        c.beta = std::move(field);
        c.constant_beta.reset();
        c.sigma = sigma;
        c.validate();
        return c;
    }

    void validate() const
    {
        require<ParameterError>(eps > 0.0, "diffusion eps must be positive");
        require<ParameterError>(sigma >= 0.0, "reaction sigma must be nonnegative");
    }

    /// Strong operator applied to physical derivatives at x.
    [[nodiscard]] double apply(const Point<D>& x, const PhysicalDerivatives<D>& u) const
    {
        return -eps * u.laplacian() + beta(x).dot(u.gradient) + sigma * u.value;
    }

    /// Formal adjoint L* u = -eps Lap u - beta . grad u + sigma u (div beta = 0).
    [[nodiscard]] double apply_adjoint(const Point<D>& x, const PhysicalDerivatives<D>& u) const
    {
        return -eps * u.laplacian() - beta(x).dot(u.gradient) + sigma * u.value;
    }

    /// Same operator with every coefficient multiplied by c.
    [[nodiscard]] PdeCoefficients scaled(double c) const
    {
        PdeCoefficients out = *this;
        out.eps *= c;
        out.sigma *= c;
        auto field = beta;
        out.beta = [field, c](const Point<D>& x) { return (c * field(x)).eval(); };
        if (constant_beta) {
            out.constant_beta = (c * *constant_beta).eval();
        }
        return out;
    }
};

/// Axis-aligned box in the parameter domain, or the whole domain.
template <int D>
struct ObservationRegion {
    bool full = true;
    Point<D> lo = Point<D>::Zero();
    Point<D> hi = Point<D>::Ones();

    static ObservationRegion whole() { return {}; }

    static ObservationRegion box(const Point<D>& lo, const Point<D>& hi)
    {
        ObservationRegion r;
        r.full = false;
        r.lo = lo;
        r.hi = hi;
        for (int d = 0; d < D; ++d) {
            require<ParameterError>(lo[d] >= 0.0 && hi[d] <= 1.0, "observation box must lie in [0,1]^d");
        }
        return r;
    }

    [[nodiscard]] bool contains(const Point<D>& xhat) const
    {
        if (full) {
            return true;
        }
        for (int d = 0; d < D; ++d) {
            if (xhat[d] < lo[d] || xhat[d] > hi[d]) {
                return false;
            }
        }
        return true;
    }

    /// Every element of a level-l grid is entirely inside or outside the box.
    [[nodiscard]] bool knot_aligned(int level) const
    {
        if (full) {
            return true;
        }
        for (int d = 0; d < D; ++d) {
            for (double v : {lo[d], hi[d]}) {
                const double scaled = std::ldexp(v, level);
                if (std::abs(scaled - std::round(scaled)) > 1e-12) {
                    return false;
                }
            }
        }
        return true;
    }
};

/// How elements that are cut by an observation box are handled.
enum class RegionMode {
    strict, ///< cut elements are an error
    clip,   ///< integrate over element intersected with the box (exact for boxes)
};

/// Scalar function of physical coordinates used as load or desired state.
template <int D>
struct LoadFunction {
    std::function<double(const Point<D>&)> value;
    /// Equal sub-intervals per direction per element; > 1 for discontinuous data.
    int subdivisions = 1;
};

template <int D>
struct IntegrationOptions {
    /// Gauss points per direction; 0 selects max degree + 1.
    int points = 0;
    int subdivisions = 1;
    std::optional<ObservationRegion<D>> region;
    RegionMode region_mode = RegionMode::strict;
};

/// A quadrature point mapped to the physical domain. `weight` includes |det DG|.
template <int D>
struct QuadPoint {
    Point<D> xhat;
    Point<D> x;
    double weight = 0.0;
    GeometryJet<D> jet;
    SquareMatrix<D> inverse_gradient;
};

/// Active basis functions of one space at one quadrature point.
template <int D>
struct ShapeSet {
    std::vector<int> global;
    std::vector<PhysicalDerivatives<D>> shape;
};

namespace detail {

template <int D>
struct ElementTables {
    // per direction: nodes, weights, basis values at each node
    std::array<std::vector<double>, D> nodes;
    std::array<std::vector<double>, D> weights;
    std::array<std::vector<BasisValues>, D> basis;
};

template <int D>
int common_level(std::span<const TensorSpace<D>* const> spaces, int d)
{
    const int level = spaces[0]->factor(d).level();
    for (const auto* s : spaces) {
        require<ParameterError>(s->factor(d).level() == level, "spaces must share the element grid (same level)");
    }
    return level;
}

} // namespace detail

/// Loops over the quadrature points of all elements shared by `spaces` and hands the
/// active shape functions of every space to `body(const QuadPoint&, std::span<const ShapeSet>)`.
/// `begin_element(elem)` / `end_element(elem)` bracket each element.
template <int D, class Begin, class Body, class End>
void for_each_quadrature_point(std::span<const TensorSpace<D>* const> spaces, const GeometryMap<D>& map,
                               const IntegrationOptions<D>& opts, int max_deriv, Begin&& begin_element,
                               Body&& body, End&& end_element)
{
    require<ParameterError>(!spaces.empty(), "need at least one space");
    MultiIndex<D> elems;
    int max_degree = 0;
    for (int d = 0; d < D; ++d) {
        const int level = detail::common_level<D>(spaces, d);
        elems[d] = 1 << level;
        for (const auto* s : spaces) {
            max_degree = std::max(max_degree, s->factor(d).degree());
        }
    }
    const int npts = opts.points > 0 ? opts.points : max_degree + 1;
    const GaussRule rule = gauss_legendre(npts);
    const std::size_t nspaces = spaces.size();

    std::vector<detail::ElementTables<D>> tables(nspaces);
    std::vector<ShapeSet<D>> sets(nspaces);
    std::vector<MultiIndex<D>> local_extents(nspaces);

    for_each_multi_index<D>(elems, [&](const MultiIndex<D>& elem) {
        std::array<double, D> a{};
        std::array<double, D> b{};
        bool empty = false;
        bool partial = false;
        for (int d = 0; d < D; ++d) {
            const SplineSpace1D& f = spaces[0]->factor(d);
            a[d] = f.element_begin(elem[d]);
            b[d] = f.element_end(elem[d]);
            if (opts.region && !opts.region->full) {
                const double lo = std::max(a[d], opts.region->lo[d]);
                const double hi = std::min(b[d], opts.region->hi[d]);
                if (hi <= lo) {
                    empty = true;
                } else if (lo > a[d] || hi < b[d]) {
                    partial = true;
                }
                a[d] = lo;
                b[d] = hi;
            }
        }
        if (empty) {
            return;
        }
        if (partial) {
            require<ParameterError>(opts.region_mode == RegionMode::clip,
                                    "observation region is not aligned with the knot lines");
        }

        for (std::size_t s = 0; s < nspaces; ++s) {
            auto& t = tables[s];
            for (int d = 0; d < D; ++d) {
                map_gauss_rule(rule, a[d], b[d], opts.subdivisions, t.nodes[d], t.weights[d]);
                t.basis[d].clear();
                for (double x : t.nodes[d]) {
                    t.basis[d].push_back(eval_basis_on_element(spaces[s]->factor(d), elem[d], x, max_deriv));
                }
                local_extents[s][d] = spaces[s]->factor(d).degree() + 1;
            }
            // global indices are fixed per element
            auto& set = sets[s];
            set.global.clear();
            for_each_multi_index<D>(local_extents[s], [&](const MultiIndex<D>& loc) {
                MultiIndex<D> full;
                for (int d = 0; d < D; ++d) {
                    full[d] = t.basis[d][0].first_index + loc[d];
                }
                set.global.push_back(spaces[s]->flat_index_or_masked(full));
            });
            set.shape.resize(set.global.size());
        }

        begin_element(elem);

        MultiIndex<D> qext;
        for (int d = 0; d < D; ++d) {
            qext[d] = static_cast<int>(tables[0].nodes[d].size());
        }
        QuadPoint<D> qp;
        for_each_multi_index<D>(qext, [&](const MultiIndex<D>& q) {
            double w = 1.0;
            for (int d = 0; d < D; ++d) {
                qp.xhat[d] = tables[0].nodes[d][static_cast<std::size_t>(q[d])];
                w *= tables[0].weights[d][static_cast<std::size_t>(q[d])];
            }
            qp.jet = map.jet(qp.xhat);
            qp.x = qp.jet.value;
            const double det = qp.jet.gradient.determinant();
            require<GeometryError>(std::abs(det) > 1e-14, "singular geometry Jacobian at a quadrature point");
            qp.inverse_gradient = qp.jet.gradient.inverse();
            qp.weight = w * std::abs(det);

            for (std::size_t s = 0; s < nspaces; ++s) {
                const auto& t = tables[s];
                auto& set = sets[s];
                std::size_t idx = 0;
                for_each_multi_index<D>(local_extents[s], [&](const MultiIndex<D>& loc) {
                    double value = 1.0;
                    Point<D> grad = Point<D>::Ones();
                    SquareMatrix<D> hess = SquareMatrix<D>::Ones();
                    for (int d = 0; d < D; ++d) {
                        const DenseMatrix& tab = t.basis[d][static_cast<std::size_t>(q[d])].table;
                        const double v0 = tab(0, loc[d]);
                        const double v1 = max_deriv >= 1 ? tab(1, loc[d]) : 0.0;
                        const double v2 = max_deriv >= 2 ? tab(2, loc[d]) : 0.0;
                        value *= v0;
                        for (int i = 0; i < D; ++i) {
                            grad[i] *= (i == d) ? v1 : v0;
                            for (int j = 0; j < D; ++j) {
                                const int order = (i == d) + (j == d);
                                hess(i, j) *= order == 0 ? v0 : (order == 1 ? v1 : v2);
                            }
                        }
                    }
                    if (max_deriv >= 2) {
                        set.shape[idx] = physical_derivatives<D>(qp.jet, qp.inverse_gradient, value, grad, hess);
                    } else {
                        PhysicalDerivatives<D> pd;
                        pd.value = value;
                        pd.gradient = qp.inverse_gradient.transpose() * grad;
                        pd.hessian.setZero();
                        set.shape[idx] = pd;
                    }
                    ++idx;
                });
            }
            body(qp, std::span<const ShapeSet<D>>(sets));
        });

        end_element(elem);
    });
}

/// One side of a bilinear form: a fixed number of scalar features per shape function.
/// The form is sum_c  int  test_c(phi_i) * trial_c(phi_j).
template <int D>
struct FormSide {
    int features = 1;
    int max_deriv = 0;
    std::function<void(const QuadPoint<D>&, const PhysicalDerivatives<D>&, double*)> eval;
};

template <int D>
FormSide<D> value_side()
{
    return {1, 0, [](const QuadPoint<D>&, const PhysicalDerivatives<D>& u, double* out) { out[0] = u.value; }};
}

template <int D>
FormSide<D> operator_side(const PdeCoefficients<D>& coeffs)
{
    return {1, 2, [coeffs](const QuadPoint<D>& qp, const PhysicalDerivatives<D>& u, double* out) {
                out[0] = coeffs.apply(qp.x, u);
            }};
}

template <int D>
FormSide<D> convection_side(std::function<Point<D>(const Point<D>&)> beta)
{
    return {1, 1, [beta](const QuadPoint<D>& qp, const PhysicalDerivatives<D>& u, double* out) {
                out[0] = beta(qp.x).dot(u.gradient);
            }};
}

template <int D>
FormSide<D> laplacian_side()
{
    return {1, 2, [](const QuadPoint<D>&, const PhysicalDerivatives<D>& u, double* out) { out[0] = u.laplacian(); }};
}

/// Features of the full H^2 inner product: value, gradient, Hessian.
template <int D>
FormSide<D> h2_side()
{
    return {1 + D + D * D, 2, [](const QuadPoint<D>&, const PhysicalDerivatives<D>& u, double* out) {
                out[0] = u.value;
                for (int i = 0; i < D; ++i) {
                    out[1 + i] = u.gradient[i];
                }
                for (int i = 0; i < D; ++i) {
                    for (int j = 0; j < D; ++j) {
                        out[1 + D + i * D + j] = u.hessian(i, j);
                    }
                }
            }};
}

/// Hessian Frobenius inner product (grad^2 u : grad^2 v).
template <int D>
FormSide<D> hessian_side()
{
    return {D * D, 2, [](const QuadPoint<D>&, const PhysicalDerivatives<D>& u, double* out) {
                for (int i = 0; i < D; ++i) {
                    for (int j = 0; j < D; ++j) {
                        out[i * D + j] = u.hessian(i, j);
                    }
                }
            }};
}

namespace detail {

// Accumulates triplets and compresses in bounded chunks.
class ChunkedAssembler {
public:
    ChunkedAssembler(int rows, int cols)
        : result_(rows, cols)
    {
    }

    void add(int i, int j, double v)
    {
        triplets_.emplace_back(i, j, v);
        if (triplets_.size() >= chunk_) {
            flush();
        }
    }

    SparseOperator finish()
    {
        flush();
        result_.makeCompressed();
        return std::move(result_);
    }

private:
    void flush()
    {
        if (triplets_.empty()) {
            return;
        }
        SparseOperator part(result_.rows(), result_.cols());
        part.setFromTriplets(triplets_.begin(), triplets_.end());
        if (result_.nonZeros() == 0) {
            result_ = std::move(part);
        } else {
            result_ += part;
        }
        triplets_.clear();
    }

    static constexpr std::size_t chunk_ = std::size_t{1} << 23;
    SparseOperator result_;
    std::vector<Triplet> triplets_;
};

} // namespace detail

/// Generic Galerkin assembly: rows = test space, columns = trial space.
template <int D>
SparseOperator assemble_bilinear(const TensorSpace<D>& test, const TensorSpace<D>& trial, const GeometryMap<D>& map,
                                 const FormSide<D>& test_side, const FormSide<D>& trial_side,
                                 const IntegrationOptions<D>& opts = {})
{
    require<ParameterError>(test_side.features == trial_side.features, "form sides must have equal feature counts");
    const std::array<const TensorSpace<D>*, 2> spaces{&test, &trial};
    const int max_deriv = std::max(test_side.max_deriv, trial_side.max_deriv);
    const int nf = test_side.features;

    detail::ChunkedAssembler out(test.dim(), trial.dim());
    DenseMatrix local;
    DenseMatrix ft;
    DenseMatrix fu;
    std::vector<double> buf(static_cast<std::size_t>(nf));
    const std::vector<int>* test_global = nullptr;
    const std::vector<int>* trial_global = nullptr;

    for_each_quadrature_point<D>(
        std::span<const TensorSpace<D>* const>(spaces), map, opts, max_deriv,
        [&](const MultiIndex<D>&) { local.resize(0, 0); },
        [&](const QuadPoint<D>& qp, std::span<const ShapeSet<D>> sets) {
            const auto& ts = sets[0];
            const auto& us = sets[1];
            test_global = &ts.global;
            trial_global = &us.global;
            const auto nt = static_cast<Eigen::Index>(ts.shape.size());
            const auto nu = static_cast<Eigen::Index>(us.shape.size());
            if (local.rows() != nt || local.cols() != nu) {
                local.setZero(nt, nu);
            }
            ft.resize(nt, nf);
            fu.resize(nu, nf);
            for (Eigen::Index i = 0; i < nt; ++i) {
                test_side.eval(qp, ts.shape[static_cast<std::size_t>(i)], buf.data());
                for (int c = 0; c < nf; ++c) {
                    ft(i, c) = buf[static_cast<std::size_t>(c)];
                }
            }
            for (Eigen::Index j = 0; j < nu; ++j) {
                trial_side.eval(qp, us.shape[static_cast<std::size_t>(j)], buf.data());
                for (int c = 0; c < nf; ++c) {
                    fu(j, c) = buf[static_cast<std::size_t>(c)];
                }
            }
            local.noalias() += qp.weight * ft * fu.transpose();
        },
        [&](const MultiIndex<D>&) {
            if (test_global == nullptr) {
                return;
            }
            for (Eigen::Index i = 0; i < local.rows(); ++i) {
                const int gi = (*test_global)[static_cast<std::size_t>(i)];
                if (gi < 0) {
                    continue;
                }
                for (Eigen::Index j = 0; j < local.cols(); ++j) {
                    const int gj = (*trial_global)[static_cast<std::size_t>(j)];
                    if (gj >= 0 && local(i, j) != 0.0) {
                        out.add(gi, gj, local(i, j));
                    }
                }
            }
            test_global = nullptr;
        });
    return out.finish();
}

/// Generic load assembly: entry i = int f * phi_i.
template <int D>
Vector assemble_linear(const TensorSpace<D>& test, const GeometryMap<D>& map,
                       const std::function<double(const QuadPoint<D>&)>& integrand,
                       const IntegrationOptions<D>& opts = {})
{
    const std::array<const TensorSpace<D>*, 1> spaces{&test};
    Vector out = Vector::Zero(test.dim());
    for_each_quadrature_point<D>(
        std::span<const TensorSpace<D>* const>(spaces), map, opts, 0, [](const MultiIndex<D>&) {},
        [&](const QuadPoint<D>& qp, std::span<const ShapeSet<D>> sets) {
            const double f = integrand(qp);
            if (f == 0.0) {
                return;
            }
            const auto& s = sets[0];
            for (std::size_t i = 0; i < s.shape.size(); ++i) {
                if (s.global[i] >= 0) {
                    out[s.global[i]] += qp.weight * f * s.shape[i].value;
                }
            }
        },
        [](const MultiIndex<D>&) {});
    return out;
}

/// Mass matrix M_h with entries (phi_j, phi_i)_{L2(Omega)}.
template <int D>
SparseOperator assemble_mass(const TensorSpace<D>& space, const GeometryMap<D>& map, int points = 0)
{
    IntegrationOptions<D> opts;
    opts.points = points;
    return assemble_bilinear<D>(space, space, map, value_side<D>(), value_side<D>(), opts);
}

/// Observation mass M_{O,h}: the L2 product restricted to a parameter box.
/// `mode = clip` integrates boxes that cut elements exactly (used on coarse multigrid levels).
template <int D>
SparseOperator assemble_obs_mass(const TensorSpace<D>& space, const ObservationRegion<D>& region,
                                 const GeometryMap<D>& map, RegionMode mode = RegionMode::strict)
{
    IntegrationOptions<D> opts;
    opts.region = region;
    opts.region_mode = mode;
    return assemble_bilinear<D>(space, space, map, value_side<D>(), value_side<D>(), opts);
}

/// State operator K_h: rows test (Q_h), columns trial (U_h), entries (L phi_j, psi_i).
template <int D>
SparseOperator assemble_state(const TensorSpace<D>& trial, const TensorSpace<D>& test,
                              const PdeCoefficients<D>& coeffs, const GeometryMap<D>& map, int points = 0)
{
    IntegrationOptions<D> opts;
    opts.points = points;
    return assemble_bilinear<D>(test, trial, map, value_side<D>(), operator_side<D>(coeffs), opts);
}

/// Convection matrix with entries (beta . grad phi_j, phi_i).
template <int D>
SparseOperator assemble_convection(const TensorSpace<D>& space, std::function<Point<D>(const Point<D>&)> beta,
                                   const GeometryMap<D>& map)
{
    return assemble_bilinear<D>(space, space, map, value_side<D>(), convection_side<D>(std::move(beta)));
}

/// B_h with entries (L phi_j, L phi_i); needs an H^2-conforming space.
template <int D>
SparseOperator assemble_fourth_order(const TensorSpace<D>& space, const PdeCoefficients<D>& coeffs,
                                     const GeometryMap<D>& map, int points = 0)
{
    for (int d = 0; d < D; ++d) {
        require<ParameterError>(space.factor(d).degree() >= 2
                                    && space.factor(d).continuity() == space.factor(d).degree() - 1,
                                "fourth-order form needs maximum smoothness splines with p >= 2");
    }
    IntegrationOptions<D> opts;
    opts.points = points;
    const auto side = operator_side<D>(coeffs);
    return assemble_bilinear<D>(space, space, map, side, side, opts);
}

/// Discrete H^2 Gram matrix (u v + grad u . grad v + grad^2 u : grad^2 v).
template <int D>
SparseOperator assemble_h2_gram(const TensorSpace<D>& space, const GeometryMap<D>& map)
{
    const auto side = h2_side<D>();
    return assemble_bilinear<D>(space, space, map, side, side);
}

/// (Lap phi_j, Lap phi_i).
template <int D>
SparseOperator assemble_laplacian_form(const TensorSpace<D>& space, const GeometryMap<D>& map)
{
    const auto side = laplacian_side<D>();
    return assemble_bilinear<D>(space, space, map, side, side);
}

/// (grad^2 phi_j : grad^2 phi_i).
template <int D>
SparseOperator assemble_hessian_form(const TensorSpace<D>& space, const GeometryMap<D>& map)
{
    const auto side = hessian_side<D>();
    return assemble_bilinear<D>(space, space, map, side, side);
}

/// Load vector (f, phi_i), restricted to `region` when given.
template <int D>
Vector assemble_load(const TensorSpace<D>& test, const LoadFunction<D>& f, const GeometryMap<D>& map,
                     const std::optional<ObservationRegion<D>>& region = std::nullopt, int points = 0)
{
    IntegrationOptions<D> opts;
    opts.points = points;
    opts.subdivisions = std::max(1, f.subdivisions);
    opts.region = region;
    opts.region_mode = RegionMode::strict;
    return assemble_linear<D>(test, map, [&](const QuadPoint<D>& qp) { return f.value(qp.x); }, opts);
}

/// Physical derivatives of the discrete function with coefficients `coeffs` (retained numbering).
template <int D>
PhysicalDerivatives<D> evaluate_field(const ShapeSet<D>& set, const Vector& coeffs)
{
    PhysicalDerivatives<D> out;
    out.value = 0.0;
    out.gradient.setZero();
    out.hessian.setZero();
    for (std::size_t i = 0; i < set.shape.size(); ++i) {
        const int g = set.global[i];
        if (g < 0) {
            continue;
        }
        const double c = coeffs[g];
        out.value += c * set.shape[i].value;
        out.gradient += c * set.shape[i].gradient;
        out.hessian += c * set.shape[i].hessian;
    }
    return out;
}

/// Integrates integrand(qp, u_h) over the (optionally restricted) domain.
template <int D>
double integrate_field(const TensorSpace<D>& space, const Vector& coeffs, const GeometryMap<D>& map,
                       const std::function<double(const QuadPoint<D>&, const PhysicalDerivatives<D>&)>& integrand,
                       const IntegrationOptions<D>& opts = {})
{
    require<ParameterError>(coeffs.size() == space.dim(), "coefficient vector does not match space dimension");
    const std::array<const TensorSpace<D>*, 1> spaces{&space};
    int max_deriv = 2;
    for (int d = 0; d < D; ++d) {
        max_deriv = std::min(max_deriv, space.factor(d).degree());
    }
    double total = 0.0;
    for_each_quadrature_point<D>(
        std::span<const TensorSpace<D>* const>(spaces), map, opts, max_deriv, [](const MultiIndex<D>&) {},
        [&](const QuadPoint<D>& qp, std::span<const ShapeSet<D>> sets) {
            total += qp.weight * integrand(qp, evaluate_field<D>(sets[0], coeffs));
        },
        [](const MultiIndex<D>&) {});
    return total;
}

/// Pointwise evaluation of a discrete function at a parameter point.
template <int D>
PhysicalDerivatives<D> evaluate_at(const TensorSpace<D>& space, const Vector& coeffs, const GeometryMap<D>& map,
                                   const Point<D>& xhat)
{
    std::array<BasisValues, D> b;
    int max_deriv = 2;
    for (int d = 0; d < D; ++d) {
        max_deriv = std::min(max_deriv, space.factor(d).degree());
    }
    for (int d = 0; d < D; ++d) {
        b[d] = eval_basis(space.factor(d), xhat[d], max_deriv);
    }
    double value = 0.0;
    Point<D> grad = Point<D>::Zero();
    SquareMatrix<D> hess = SquareMatrix<D>::Zero();
    MultiIndex<D> ext;
    for (int d = 0; d < D; ++d) {
        ext[d] = space.factor(d).degree() + 1;
    }
    for_each_multi_index<D>(ext, [&](const MultiIndex<D>& loc) {
        MultiIndex<D> full;
        for (int d = 0; d < D; ++d) {
            full[d] = b[d].first_index + loc[d];
        }
        const int g = space.flat_index_or_masked(full);
        if (g < 0) {
            return;
        }
        double v = 1.0;
        Point<D> gr = Point<D>::Ones();
        SquareMatrix<D> h = SquareMatrix<D>::Ones();
        for (int d = 0; d < D; ++d) {
            const double v0 = b[d].table(0, loc[d]);
            const double v1 = max_deriv >= 1 ? b[d].table(1, loc[d]) : 0.0;
            const double v2 = max_deriv >= 2 ? b[d].table(2, loc[d]) : 0.0;
            v *= v0;
            for (int i = 0; i < D; ++i) {
                gr[i] *= (i == d) ? v1 : v0;
                for (int j = 0; j < D; ++j) {
                    const int order = (i == d) + (j == d);
                    h(i, j) *= order == 0 ? v0 : (order == 1 ? v1 : v2);
                }
            }
        }
        value += coeffs[g] * v;
        grad += coeffs[g] * gr;
        hess += coeffs[g] * h;
    });
    return physical_derivatives<D>(map, xhat, value, grad, hess);
}

/// Writes a sparse matrix in Matrix Market coordinate format.
inline void write_matrix_market(std::ostream& os, const SparseOperator& A)
{
    os << "%%MatrixMarket matrix coordinate real general\n";
    os << A.rows() << ' ' << A.cols() << ' ' << A.nonZeros() << '\n';
    os.precision(17);
    for (int i = 0; i < A.outerSize(); ++i) {
        for (SparseOperator::InnerIterator it(A, i); it; ++it) {
            os << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
        }
    }
}

} // namespace cdroc
