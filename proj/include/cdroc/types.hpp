#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <cstddef>
#include <functional>

namespace cdroc {

using Vector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;

/// Row-major compressed sparse storage; Gauss-Seidel sweeps walk rows.
using SparseOperator = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;
using ColMajorSparse = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using Triplet = Eigen::Triplet<double, int>;

template <int D>
using Point = Eigen::Matrix<double, D, 1>;

template <int D>
using SquareMatrix = Eigen::Matrix<double, D, D>;

template <int D>
using MultiIndex = std::array<int, D>;

/// Visits every multi-index in [0, extents) in row-major order (last index fastest).
template <int D, class F>
void for_each_multi_index(const MultiIndex<D>& extents, F&& f)
{
    for (int d = 0; d < D; ++d) {
        if (extents[d] <= 0) {
            return;
        }
    }
    MultiIndex<D> idx{};
    while (true) {
        f(idx);
        int d = D - 1;
        while (d >= 0) {
            if (++idx[d] < extents[d]) {
                break;
            }
            idx[d] = 0;
            --d;
        }
        if (d < 0) {
            return;
        }
    }
}

} // namespace cdroc
