#pragma once

#include "cdroc/errors.hpp"
#include "cdroc/types.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <utility>

namespace cdroc {

/// Value, Jacobian and second derivatives of a geometry map at one parameter point.
/// `gradient(m, j)` = dG_m / dx_j and `hessian[m](i, j)` = d^2 G_m / dx_i dx_j.
template <int D>
struct GeometryJet {
    Point<D> value;
    SquareMatrix<D> gradient;
    std::array<SquareMatrix<D>, D> hessian;
};

enum class GeometryKind { identity, affine, quarter_annulus, user };

/// Parameter-to-physical map G: (0,1)^D -> Omega.
template <int D>
class GeometryMap {
public:
    using Evaluator = std::function<GeometryJet<D>(const Point<D>&)>;

    GeometryMap(GeometryKind kind, Evaluator eval)
        : kind_(kind)
        , eval_(std::move(eval))
    {
    }

    [[nodiscard]] GeometryKind kind() const { return kind_; }
    [[nodiscard]] GeometryJet<D> jet(const Point<D>& xhat) const { return eval_(xhat); }
    [[nodiscard]] Point<D> operator()(const Point<D>& xhat) const { return eval_(xhat).value; }

    /// Whether the Jacobian determinant is constant (affine maps).
    [[nodiscard]] bool is_affine() const { return kind_ == GeometryKind::identity || kind_ == GeometryKind::affine; }

private:
    GeometryKind kind_;
    Evaluator eval_;
};

template <int D>
GeometryMap<D> identity_map()
{
    return GeometryMap<D>(GeometryKind::identity, [](const Point<D>& x) {
        GeometryJet<D> j;
        j.value = x;
        j.gradient.setIdentity();
        for (auto& h : j.hessian) {
            h.setZero();
        }
        return j;
    });
}

/// G(x) = scale * x + shift (diagonal scaling).
template <int D>
GeometryMap<D> affine_map(const Point<D>& scale, const Point<D>& shift = Point<D>::Zero())
{
    return GeometryMap<D>(GeometryKind::affine, [scale, shift](const Point<D>& x) {
        GeometryJet<D> j;
        j.value = scale.cwiseProduct(x) + shift;
        j.gradient = scale.asDiagonal();
        for (auto& h : j.hessian) {
            h.setZero();
        }
        return j;
    });
}

/// Polynomial approximation of a quarter annulus with radii 1 and 2:
///   G1 = (1+a)(1-b)(1+2(sqrt2-1)b),  G2 = (1+a) b (2 sqrt2 - 1 - 2(sqrt2-1) b).
inline GeometryMap<2> quarter_annulus()
{
    return GeometryMap<2>(GeometryKind::quarter_annulus, [](const Point<2>& x) {
        const double c = std::sqrt(2.0) - 1.0;
        const double a = x[0];
        const double b = x[1];
        const double r = 1.0 + a;
        // G1 = r s(b), G2 = r t(b)
        const double s = (1.0 - b) * (1.0 + 2.0 * c * b);
        const double ds = (2.0 * c - 1.0) - 4.0 * c * b;
        const double dds = -4.0 * c;
        const double t = b * (2.0 * std::sqrt(2.0) - 1.0 - 2.0 * c * b);
        const double dt = (2.0 * std::sqrt(2.0) - 1.0) - 4.0 * c * b;
        const double ddt = -4.0 * c;

        GeometryJet<2> j;
        j.value << r * s, r * t;
        j.gradient << s, r * ds, t, r * dt;
        j.hessian[0] << 0.0, ds, ds, r * dds;
        j.hessian[1] << 0.0, dt, dt, r * ddt;
        return j;
    });
}

template <int D>
double jacobian_det(const GeometryMap<D>& map, const Point<D>& xhat)
{
    return std::abs(map.jet(xhat).gradient.determinant());
}

/// Physical value, gradient and Hessian of u = uhat o G^{-1}.
template <int D>
struct PhysicalDerivatives {
    double value = 0.0;
    Point<D> gradient;
    SquareMatrix<D> hessian;

    [[nodiscard]] double laplacian() const { return hessian.trace(); }
};

/// Chain rule with a precomputed inverse Jacobian:
///   grad u = DG^{-T} grad uhat,
///   hess u = DG^{-T} (hess uhat - sum_m (grad u)_m hess G_m) DG^{-1}.
template <int D>
PhysicalDerivatives<D> physical_derivatives(const GeometryJet<D>& jet, const SquareMatrix<D>& inverse_gradient,
                                            double value, const Point<D>& param_gradient,
                                            const SquareMatrix<D>& param_hessian)
{
    PhysicalDerivatives<D> out;
    out.value = value;
    out.gradient = inverse_gradient.transpose() * param_gradient;
    SquareMatrix<D> h = param_hessian;
    for (int m = 0; m < D; ++m) {
        h -= out.gradient[m] * jet.hessian[static_cast<std::size_t>(m)];
    }
    out.hessian = inverse_gradient.transpose() * h * inverse_gradient;
    return out;
}

template <int D>
PhysicalDerivatives<D> physical_derivatives(const GeometryMap<D>& map, const Point<D>& xhat, double value,
                                            const Point<D>& param_gradient, const SquareMatrix<D>& param_hessian)
{
    const GeometryJet<D> jet = map.jet(xhat);
    const double det = jet.gradient.determinant();
    require<GeometryError>(std::abs(det) > 1e-14, "singular geometry Jacobian");
    return physical_derivatives<D>(jet, jet.gradient.inverse(), value, param_gradient, param_hessian);
}

} // namespace cdroc
