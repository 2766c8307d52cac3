#pragma once

#include "cdroc/assembly.hpp"
#include "cdroc/errors.hpp"
#include "cdroc/geometry.hpp"
#include "cdroc/spline.hpp"
#include "cdroc/system.hpp"
#include "cdroc/types.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace cdroc {

enum class SweepDirection { forward, backward };

enum class SmootherKind { gauss_seidel, macro_gauss_seidel };

struct SmootherConfig {
    SmootherKind kind = SmootherKind::gauss_seidel;
    /// Sweeps per pre/post smoothing step; <= 0 selects 2 (Gauss-Seidel) or 1 (macro).
    int nu = 0;
    /// Macro patch size a and overlap b; < 0 selects a = p, b = p - 1.
    int patch = -1;
    int overlap = -1;

    [[nodiscard]] int sweeps() const
    {
        if (nu > 0) {
            return nu;
        }
        return kind == SmootherKind::gauss_seidel ? 2 : 1;
    }
    [[nodiscard]] int patch_size(int p) const { return patch > 0 ? patch : p; }
    [[nodiscard]] int overlap_size(int p) const { return overlap >= 0 ? overlap : p - 1; }
};

namespace detail {

inline double row_product(const SparseOperator& A, const Vector& x, int i)
{
    double s = 0.0;
    for (SparseOperator::InnerIterator it(A, i); it; ++it) {
        s += it.value() * x[it.col()];
    }
    return s;
}

inline Vector diagonal_of(const SparseOperator& A)
{
    Vector d = A.diagonal();
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        require<SmootherError>(d[i] != 0.0, "zero diagonal entry in row " + std::to_string(i));
    }
    return d;
}

} // namespace detail

/// One Gauss-Seidel sweep in natural (forward) or reversed (backward) DOF order.
inline void gauss_seidel_sweep(const SparseOperator& A, const Vector& rhs, Vector& x, SweepDirection dir,
                               const Vector* diagonal = nullptr)
{
    const Vector diag_local = diagonal ? Vector() : detail::diagonal_of(A);
    const Vector& diag = diagonal ? *diagonal : diag_local;
    const int n = static_cast<int>(A.rows());
    for (int k = 0; k < n; ++k) {
        const int i = dir == SweepDirection::forward ? k : n - 1 - k;
        x[i] += (rhs[i] - detail::row_product(A, x, i)) / diag[i];
    }
}

/// Overlapping a x a DOF patches (plus b layers per side) of a tensor DOF grid,
/// each with a dense Cholesky factor of its diagonal block.
template <int D>
class MacroGrid {
public:
    MacroGrid(const SparseOperator& A, const MultiIndex<D>& extents, int patch, int overlap)
        : patch_(patch)
        , overlap_(overlap)
    {
        require<ParameterError>(patch >= 1 && overlap >= 0, "macro patch needs a >= 1 and b >= 0");
        int n = 1;
        MultiIndex<D> macros;
        for (int d = 0; d < D; ++d) {
            n *= extents[d];
            macros[d] = (extents[d] + patch - 1) / patch;
        }
        require<ParameterError>(n == A.rows(), "macro grid extents do not match the matrix");

        std::vector<int> local(static_cast<std::size_t>(n), -1);
        for_each_multi_index<D>(macros, [&](const MultiIndex<D>& m) {
            MultiIndex<D> lo;
            MultiIndex<D> len;
            for (int d = 0; d < D; ++d) {
                const int begin = m[d] * patch;
                const int end = std::min(begin + patch, extents[d]);
                lo[d] = std::max(0, begin - overlap);
                len[d] = std::min(extents[d], end + overlap) - lo[d];
            }
            std::vector<int> dofs;
            for_each_multi_index<D>(len, [&](const MultiIndex<D>& r) {
                int flat = 0;
                for (int d = 0; d < D; ++d) {
                    flat = flat * extents[d] + lo[d] + r[d];
                }
                dofs.push_back(flat);
            });
            blocks_.push_back(std::move(dofs));
        });

        factors_.reserve(blocks_.size());
        diag_ = A.diagonal();
        for (const auto& dofs : blocks_) {
            const auto nb = static_cast<Eigen::Index>(dofs.size());
            for (Eigen::Index i = 0; i < nb; ++i) {
                local[static_cast<std::size_t>(dofs[static_cast<std::size_t>(i)])] = static_cast<int>(i);
            }
            DenseMatrix sub = DenseMatrix::Zero(nb, nb);
            for (Eigen::Index i = 0; i < nb; ++i) {
                for (SparseOperator::InnerIterator it(A, dofs[static_cast<std::size_t>(i)]); it; ++it) {
                    const int j = local[static_cast<std::size_t>(it.col())];
                    if (j >= 0) {
                        sub(i, j) = it.value();
                    }
                }
            }
            for (int g : dofs) {
                local[static_cast<std::size_t>(g)] = -1;
            }
            if (nb == 1) {
                require<SmootherError>(sub(0, 0) != 0.0, "singular macro block");
                factors_.emplace_back();
                continue;
            }
            Eigen::LLT<DenseMatrix> llt(sub);
            require<SmootherError>(llt.info() == Eigen::Success, "macro block is not positive definite");
            factors_.push_back(std::move(llt));
        }
    }

    [[nodiscard]] const std::vector<std::vector<int>>& blocks() const { return blocks_; }
    [[nodiscard]] int patch() const { return patch_; }
    [[nodiscard]] int overlap() const { return overlap_; }

    /// Multiplicative Schwarz sweep: blocks in lexicographic (forward) or reverse order,
    /// each solving its restricted residual equation exactly.
    void sweep(const SparseOperator& A, const Vector& rhs, Vector& x, SweepDirection dir) const
    {
        const int nb = static_cast<int>(blocks_.size());
        Vector r;
        for (int k = 0; k < nb; ++k) {
            const int b = dir == SweepDirection::forward ? k : nb - 1 - k;
            const auto& dofs = blocks_[static_cast<std::size_t>(b)];
            if (dofs.size() == 1) {
                const int g = dofs[0];
                x[g] += (rhs[g] - detail::row_product(A, x, g)) / diag_[g];
                continue;
            }
            r.resize(static_cast<Eigen::Index>(dofs.size()));
            for (std::size_t i = 0; i < dofs.size(); ++i) {
                r[static_cast<Eigen::Index>(i)] = rhs[dofs[i]] - detail::row_product(A, x, dofs[i]);
            }
            const Vector delta = factors_[static_cast<std::size_t>(b)].solve(r);
            for (std::size_t i = 0; i < dofs.size(); ++i) {
                x[dofs[i]] += delta[static_cast<Eigen::Index>(i)];
            }
        }
    }

private:
    int patch_;
    int overlap_;
    std::vector<std::vector<int>> blocks_;
    std::vector<Eigen::LLT<DenseMatrix>> factors_;
    Vector diag_;
};

template <int D>
void macro_gs_sweep(const SparseOperator& A, const Vector& rhs, Vector& x, const MacroGrid<D>& grid,
                    SweepDirection dir)
{
    grid.sweep(A, rhs, x, dir);
}

/// Geometric multigrid hierarchy for M_O + alpha B on the maximum-smoothness,
/// boundary-masked spaces S_{p,l} for l = 0..L (rediscretized per level).
template <int D>
class MgHierarchy {
public:
    struct Level {
        TensorSpace<D> space;
        SparseOperator matrix;
        SparseOperator prolongation; // from level - 1; empty on level 0
        Vector diagonal;
        std::unique_ptr<MacroGrid<D>> macro;
    };

    MgHierarchy(std::vector<Level> levels, SmootherConfig smoother)
        : levels_(std::move(levels))
        , smoother_(smoother)
    {
        require<ParameterError>(!levels_.empty(), "hierarchy needs at least one level");
        const DenseMatrix coarse = DenseMatrix(levels_.front().matrix);
        coarse_.compute(coarse);
        require<NotSpdError>(coarse_.info() == Eigen::Success, "coarsest-level matrix is not SPD");
    }

    [[nodiscard]] int finest() const { return static_cast<int>(levels_.size()) - 1; }
    [[nodiscard]] const Level& level(int l) const { return levels_[static_cast<std::size_t>(l)]; }
    [[nodiscard]] const SmootherConfig& smoother() const { return smoother_; }
    [[nodiscard]] Eigen::Index size() const { return level(finest()).matrix.rows(); }

    void smooth(int l, const Vector& rhs, Vector& x, SweepDirection dir) const
    {
        const Level& lv = level(l);
        for (int s = 0; s < smoother_.sweeps(); ++s) {
            if (smoother_.kind == SmootherKind::gauss_seidel) {
                gauss_seidel_sweep(lv.matrix, rhs, x, dir, &lv.diagonal);
            } else {
                lv.macro->sweep(lv.matrix, rhs, x, dir);
            }
        }
    }

    /// One V-cycle on level l starting from x.
    void vcycle(int l, const Vector& rhs, Vector& x) const
    {
        if (l == 0) {
            x = coarse_.solve(rhs);
            return;
        }
        const Level& lv = level(l);
        smooth(l, rhs, x, SweepDirection::forward);
        const Vector residual = rhs - lv.matrix * x;
        const Vector coarse_rhs = lv.prolongation.transpose() * residual;
        Vector correction = Vector::Zero(coarse_rhs.size());
        vcycle(l - 1, coarse_rhs, correction);
        x += lv.prolongation * correction;
        smooth(l, rhs, x, SweepDirection::backward);
    }

    /// z = V r: one V-cycle with zero initial guess on the finest level.
    void apply(const Vector& r, Vector& z) const
    {
        z = Vector::Zero(r.size());
        vcycle(finest(), r, z);
    }

private:
    std::vector<Level> levels_;
    SmootherConfig smoother_;
    Eigen::LLT<DenseMatrix> coarse_;
};

/// Assembles M_O + alpha B on every level 0..finest_level. Observation boxes that cut
/// coarse elements are integrated over the exact intersection.
template <int D>
MgHierarchy<D> build_hierarchy(int p, int finest_level, const GeometryMap<D>& map, const PdeCoefficients<D>& coeffs,
                               const ObservationRegion<D>& region, double alpha, const SmootherConfig& smoother)
{
    require<ParameterError>(finest_level >= 0, "finest level must be >= 0");
    require<ParameterError>(p >= 2, "multigrid for the fourth-order block needs p >= 2");
    std::vector<typename MgHierarchy<D>::Level> levels;
    for (int l = 0; l <= finest_level; ++l) {
        typename MgHierarchy<D>::Level lv{TensorSpace<D>::uniform(make_smooth_space(p, l), true), {}, {}, {}, {}};
        lv.matrix = assemble_obs_mass<D>(lv.space, region, map, RegionMode::clip)
                    + alpha * assemble_fourth_order<D>(lv.space, coeffs, map);
        lv.matrix.makeCompressed();
        lv.diagonal = detail::diagonal_of(lv.matrix);
        if (l > 0) {
            lv.prolongation = tensor_prolongation<D>(levels.back().space, lv.space);
        }
        if (smoother.kind == SmootherKind::macro_gauss_seidel && l > 0) {
            lv.macro = std::make_unique<MacroGrid<D>>(lv.matrix, lv.space.retained_extents(), smoother.patch_size(p),
                                                      smoother.overlap_size(p));
        }
        levels.push_back(std::move(lv));
    }
    return MgHierarchy<D>(std::move(levels), smoother);
}

/// Univariate mass matrix with weight function w: entries int w N_i N_j.
inline SparseOperator assemble_weighted_mass_1d(const SplineSpace1D& space, const std::function<double(double)>& weight,
                                                int points = 0)
{
    const int npts = points > 0 ? points : space.degree() + 3;
    const auto quad = quadrature_rule(space, npts);
    std::vector<Triplet> t;
    const int p = space.degree();
    for (const auto& eq : quad) {
        DenseMatrix local = DenseMatrix::Zero(p + 1, p + 1);
        int first = 0;
        for (std::size_t q = 0; q < eq.nodes.size(); ++q) {
            const BasisValues b = eval_basis_on_element(space, eq.element, eq.nodes[q], 0);
            first = b.first_index;
            const Eigen::RowVectorXd v = b.table.row(0);
            local.noalias() += eq.weights[q] * weight(eq.nodes[q]) * v.transpose() * v;
        }
        for (int i = 0; i <= p; ++i) {
            for (int j = 0; j <= p; ++j) {
                t.emplace_back(first + i, first + j, local(i, j));
            }
        }
    }
    SparseOperator M(space.dim(), space.dim());
    M.setFromTriplets(t.begin(), t.end());
    return M;
}

/// Tensor-rank-one mass approximation
///   (u, v)_{M~} = J(1/2,..)^{1-D} int J(x_1, 1/2, ..) ... J(.., 1/2, x_D) u v dx
/// and the action of its inverse through univariate Cholesky solves.
template <int D>
class KroneckerMassInverse {
public:
    KroneckerMassInverse(const TensorSpace<D>& space, const GeometryMap<D>& map)
        : space_(space)
    {
        const Point<D> center = Point<D>::Constant(0.5);
        const double jc = jacobian_det<D>(map, center);
        scale_ = std::pow(jc, D - 1);
        for (int d = 0; d < D; ++d) {
            auto weight = [&map, center, d](double t) {
                Point<D> x = center;
                x[d] = t;
                return jacobian_det<D>(map, x);
            };
            SparseOperator m = assemble_weighted_mass_1d(space.factor(d), weight);
            m = restrict_interior(m, space.masked(d), space.masked(d));
            factors_[static_cast<std::size_t>(d)] = std::make_shared<SparseCholesky>(m, "univariate mass");
            univariate_[static_cast<std::size_t>(d)] = std::move(m);
        }
    }

    [[nodiscard]] const SparseOperator& univariate(int d) const { return univariate_[static_cast<std::size_t>(d)]; }

    /// Assembled M~ (for verification).
    [[nodiscard]] SparseOperator matrix() const
    {
        SparseOperator M = univariate_[0];
        for (int d = 1; d < D; ++d) {
            M = kronecker(M, univariate_[static_cast<std::size_t>(d)]);
        }
        return M / scale_;
    }

    /// y = M~^{-1} x
    void apply(const Vector& x, Vector& y) const
    {
        y = x;
        const MultiIndex<D> ext = space_.retained_extents();
        for (int d = 0; d < D; ++d) {
            int inner = 1;
            for (int e = d + 1; e < D; ++e) {
                inner *= ext[e];
            }
            const int n = ext[d];
            const int outer = static_cast<int>(y.size()) / (n * inner);
            DenseMatrix fibers(n, outer * inner);
            for (int o = 0; o < outer; ++o) {
                for (int i = 0; i < inner; ++i) {
                    for (int k = 0; k < n; ++k) {
                        fibers(k, o * inner + i) = y[(o * n + k) * inner + i];
                    }
                }
            }
            const DenseMatrix solved = factors_[static_cast<std::size_t>(d)]->solve_many(fibers);
            for (int o = 0; o < outer; ++o) {
                for (int i = 0; i < inner; ++i) {
                    for (int k = 0; k < n; ++k) {
                        y[(o * n + k) * inner + i] = solved(k, o * inner + i);
                    }
                }
            }
        }
        y *= scale_;
    }

private:
    TensorSpace<D> space_;
    double scale_ = 1.0;
    std::array<SparseOperator, D> univariate_;
    std::array<std::shared_ptr<SparseCholesky>, D> factors_;
};

template <int D>
KroneckerMassInverse<D> kronecker_mass_inverse(const TensorSpace<D>& space, const GeometryMap<D>& map)
{
    return KroneckerMassInverse<D>(space, map);
}

/// diag(alpha M~, M~ / alpha, V^{-1}) with V one multigrid V-cycle for M_O + alpha B.
template <int D>
class InexactPreconditioner {
public:
    InexactPreconditioner(std::shared_ptr<const KroneckerMassInverse<D>> mass_inverse,
                          std::shared_ptr<const MgHierarchy<D>> multigrid, Eigen::Index q_dim, double alpha)
        : mass_inverse_(std::move(mass_inverse))
        , multigrid_(std::move(multigrid))
        , q_dim_(q_dim)
        , alpha_(alpha)
    {
        require<ParameterError>(alpha > 0.0, "regularization alpha must be positive");
    }

    [[nodiscard]] Eigen::Index size() const { return 2 * q_dim_ + multigrid_->size(); }

    void apply(const Vector& r, Vector& z) const
    {
        const Eigen::Index nq = q_dim_;
        const Eigen::Index nu = multigrid_->size();
        z.resize(size());
        Vector tmp;
        mass_inverse_->apply(r.segment(0, nq), tmp);
        z.segment(0, nq) = tmp / alpha_;
        mass_inverse_->apply(r.segment(nq, nq), tmp);
        z.segment(nq, nq) = alpha_ * tmp;
        multigrid_->apply(r.segment(2 * nq, nu), tmp);
        z.segment(2 * nq, nu) = tmp;
    }

private:
    std::shared_ptr<const KroneckerMassInverse<D>> mass_inverse_;
    std::shared_ptr<const MgHierarchy<D>> multigrid_;
    Eigen::Index q_dim_;
    double alpha_;
};

} // namespace cdroc
