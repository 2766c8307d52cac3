#include "cdroc/spline.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace cdroc;

namespace {

double binomial(int n, int k)
{
    double r = 1.0;
    for (int i = 1; i <= k; ++i) {
        r = r * (n - k + i) / i;
    }
    return r;
}

double bernstein(int p, int i, double t)
{
    return binomial(p, i) * std::pow(t, i) * std::pow(1.0 - t, p - i);
}

} // namespace

TEST(SplineSpace, DimensionFormula)
{
    EXPECT_EQ(make_space(2, 1, 2).dim(), 6);
    EXPECT_EQ(make_space(2, -1, 1).dim(), 6);
    EXPECT_EQ(make_space(4, 1, 3).dim(), 26);
    for (int p = 1; p <= 7; ++p) {
        for (int k = -1; k < p; ++k) {
            for (int l = 0; l <= 4; ++l) {
                const auto s = make_space(p, k, l);
                EXPECT_EQ(s.dim(), (p + 1) + (p - k) * ((1 << l) - 1));
                EXPECT_EQ(static_cast<int>(s.knots().size()), s.dim() + p + 1);
            }
        }
    }
}

TEST(SplineSpace, RejectsInvalidParameters)
{
    EXPECT_THROW(make_space(0, 0, 1), ParameterError);
    EXPECT_THROW(make_space(2, 2, 1), ParameterError);
    EXPECT_THROW(make_space(2, -2, 1), ParameterError);
    EXPECT_THROW(make_space(2, 1, -1), ParameterError);
}

TEST(EvalBasis, HatPeakAtBreakpoint)
{
    const auto s = make_space(1, 0, 1);
    const auto b = eval_basis(s, 0.5, 0);
    int ones = 0;
    for (int i = 0; i < b.table.cols(); ++i) {
        if (std::abs(b.table(0, i) - 1.0) < 1e-15) {
            ++ones;
        } else {
            EXPECT_NEAR(b.table(0, i), 0.0, 1e-15);
        }
    }
    EXPECT_EQ(ones, 1);
}

TEST(EvalBasis, MatchesBernsteinOnSingleElement)
{
    for (int p = 1; p <= 7; ++p) {
        const auto s = make_space(p, p - 1, 0);
        for (double x : {0.0, 0.1, 0.5, 0.77, 1.0}) {
            const auto b = eval_basis(s, x, 0);
            EXPECT_EQ(b.first_index, 0);
            for (int i = 0; i <= p; ++i) {
                EXPECT_NEAR(b.table(0, i), bernstein(p, i, x), 1e-14) << "p=" << p << " x=" << x;
            }
        }
    }
    const auto b = eval_basis(make_space(2, 1, 0), 0.5, 0);
    EXPECT_NEAR(b.table(0, 0), 0.25, 1e-15);
    EXPECT_NEAR(b.table(0, 1), 0.5, 1e-15);
    EXPECT_NEAR(b.table(0, 2), 0.25, 1e-15);
}

TEST(EvalBasis, RejectsOutsideDomain)
{
    const auto s = make_space(2, 1, 2);
    EXPECT_THROW(eval_basis(s, -0.1, 0), DomainError);
    EXPECT_THROW(eval_basis(s, 1.1, 0), DomainError);
}

TEST(EvalBasis, PartitionOfUnity)
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int p = 1; p <= 7; ++p) {
        for (int k : {-1, 0, p - 1}) {
            const auto s = make_space(p, k, 3);
            for (int t = 0; t < 1000; ++t) {
                const auto b = eval_basis(s, u(rng), 1);
                EXPECT_NEAR(b.table.row(0).sum(), 1.0, 1e-13);
                EXPECT_NEAR(b.table.row(1).sum(), 0.0, 1e-10);
                EXPECT_GE(b.table.row(0).minCoeff(), -1e-15);
            }
        }
    }
}

TEST(EvalBasis, DerivativesMatchFiniteDifferences)
{
    const auto s = make_space(4, 3, 2);
    const double h = 1e-5;
    for (double x : {0.1, 0.3, 0.62, 0.9}) {
        const auto b = eval_basis(s, x, 2);
        const auto bp = eval_basis(s, x + h, 1);
        const auto bm = eval_basis(s, x - h, 1);
        ASSERT_EQ(bp.first_index, b.first_index);
        ASSERT_EQ(bm.first_index, b.first_index);
        for (int i = 0; i <= 4; ++i) {
            EXPECT_NEAR((bp.table(0, i) - bm.table(0, i)) / (2 * h), b.table(1, i), 1e-7);
            EXPECT_NEAR((bp.table(1, i) - bm.table(1, i)) / (2 * h), b.table(2, i), 1e-5);
        }
    }
}

TEST(Quadrature, MidpointAndNormalization)
{
    const auto r0 = quadrature_rule(make_space(2, 1, 0), 1);
    ASSERT_EQ(r0.size(), 1u);
    EXPECT_DOUBLE_EQ(r0[0].nodes[0], 0.5);
    EXPECT_DOUBLE_EQ(r0[0].weights[0], 1.0);

    const auto r1 = quadrature_rule(make_space(2, 1, 1), 2);
    double total = 0.0;
    int nodes = 0;
    for (const auto& e : r1) {
        nodes += static_cast<int>(e.nodes.size());
        for (double w : e.weights) {
            total += w;
        }
    }
    EXPECT_EQ(nodes, 4);
    EXPECT_NEAR(total, 1.0, 1e-15);
}

TEST(Quadrature, ExactForOddMonomials)
{
    for (int q = 1; q <= 8; ++q) {
        const auto rule = quadrature_rule(make_space(1, 0, 2), q);
        double integral = 0.0;
        for (const auto& e : rule) {
            for (std::size_t i = 0; i < e.nodes.size(); ++i) {
                integral += e.weights[i] * std::pow(e.nodes[i], 2 * q - 1);
            }
        }
        EXPECT_NEAR(integral, 1.0 / (2.0 * q), 1e-14) << "q=" << q;
    }
}

TEST(Prolongation, ConstantsAndHatWeights)
{
    const auto P = prolongation(make_space(1, 0, 0), make_space(1, 0, 1));
    ASSERT_EQ(P.rows(), 3);
    ASSERT_EQ(P.cols(), 2);
    const DenseMatrix Pd(P);
    EXPECT_DOUBLE_EQ(Pd(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(Pd(1, 0), 0.5);
    EXPECT_DOUBLE_EQ(Pd(1, 1), 0.5);
    EXPECT_DOUBLE_EQ(Pd(2, 1), 1.0);

    for (int p = 2; p <= 5; ++p) {
        const auto c = make_smooth_space(p, 2);
        const auto f = make_smooth_space(p, 3);
        const Vector ones = prolongation(c, f) * Vector::Ones(c.dim());
        EXPECT_NEAR((ones - Vector::Ones(f.dim())).cwiseAbs().maxCoeff(), 0.0, 1e-14);
    }
}

TEST(Prolongation, NestednessBySampling)
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int p = 2; p <= 7; ++p) {
        for (int l = 0; l <= 4; ++l) {
            for (int k : {p - 1, p - 3}) {
                if (k < -1) {
                    continue;
                }
                const auto c = make_space(p, k, l);
                const auto f = make_space(p, k, l + 1);
                Vector cc(c.dim());
                for (Eigen::Index i = 0; i < cc.size(); ++i) {
                    cc[i] = u(rng);
                }
                const Vector fc = prolongation(c, f) * cc;
                double worst = 0.0;
                for (int s = 0; s < 100; ++s) {
                    const double x = (s + 0.5) / 100.0;
                    worst = std::max(worst, std::abs(eval_spline(c, cc, x, 0)[0] - eval_spline(f, fc, x, 0)[0]));
                }
                EXPECT_LT(worst, 1e-12) << "p=" << p << " k=" << k << " l=" << l;
            }
        }
    }
}

TEST(Prolongation, RejectsNonNestedSpaces)
{
    EXPECT_THROW(prolongation(make_space(2, 1, 1), make_space(3, 2, 2)), ParameterError);
    EXPECT_THROW(prolongation(make_space(2, 1, 1), make_space(2, 1, 3)), ParameterError);
}

TEST(TensorSpace, IndexingRoundTrip)
{
    const auto s1 = make_space(2, 1, 0); // dim 3
    const TensorSpace<2> t = TensorSpace<2>::uniform(s1, false);
    EXPECT_EQ(t.dim(), 9);
    EXPECT_EQ(tensor_index<2>(t, {0, 0}), 0);
    EXPECT_EQ(tensor_index<2>(t, {1, 2}), 5);
    for (int i = 0; i < t.dim(); ++i) {
        EXPECT_EQ(tensor_index<2>(t, tensor_multi_index<2>(t, i)), i);
    }
    const TensorSpace<2> m = TensorSpace<2>::uniform(make_space(2, 1, 2), true);
    EXPECT_EQ(m.dim(), 16);
    EXPECT_EQ(m.unmasked_dim(), 36);
    EXPECT_THROW(tensor_index<2>(m, {0, 3}), ParameterError);
    for (int i = 0; i < m.dim(); ++i) {
        EXPECT_EQ(tensor_index<2>(m, tensor_multi_index<2>(m, i)), i);
    }
}

TEST(TensorSpace, ProlongationPreservesMaskedFunctions)
{
    const auto c = TensorSpace<2>::uniform(make_smooth_space(3, 1), true);
    const auto f = TensorSpace<2>::uniform(make_smooth_space(3, 2), true);
    const SparseOperator P = tensor_prolongation<2>(c, f);
    ASSERT_EQ(P.rows(), f.dim());
    ASSERT_EQ(P.cols(), c.dim());
    // kronecker of univariate P restricted to the interior reproduces the tensor evaluation
    const Vector cc = Vector::LinSpaced(c.dim(), -1.0, 1.0);
    const Vector fc = P * cc;
    for (double x : {0.13, 0.5, 0.81}) {
        for (double y : {0.07, 0.44, 0.93}) {
            auto value = [&](const TensorSpace<2>& s, const Vector& coef) {
                const auto bx = eval_basis(s.factor(0), x, 0);
                const auto by = eval_basis(s.factor(1), y, 0);
                double v = 0.0;
                for (int i = 0; i < bx.table.cols(); ++i) {
                    for (int j = 0; j < by.table.cols(); ++j) {
                        const int g = s.flat_index_or_masked({bx.first_index + i, by.first_index + j});
                        if (g >= 0) {
                            v += coef[g] * bx.table(0, i) * by.table(0, j);
                        }
                    }
                }
                return v;
            };
            EXPECT_NEAR(value(c, cc), value(f, fc), 1e-13);
        }
    }
}
