#include "jmp/feller.hpp"
#include "jmp/model_io.hpp"
#include "jmp/scenarios.hpp"

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <numbers>
#include <random>

using namespace jmp;

namespace {

QModel constant_model(const Matrix& rates) {
    std::vector<Transition> tr;
    for (Eigen::Index i = 0; i < rates.rows(); ++i)
        for (Eigen::Index j = 0; j < rates.cols(); ++j)
            if (i != j && rates(i, j) > 0)
                tr.push_back({State(i), State(j), TimeProfile::constant(rates(i, j))});
    return QModel({std::size_t(rates.rows()), false}, tr);
}

/// exp(t Q) for the generator built from off-diagonal rates.
Matrix expm_generator(const Matrix& rates, double tau) {
    Matrix q = rates;
    q.diagonal().setZero();
    q.diagonal() = -q.rowwise().sum();
    return (q * tau).exp();
}

const QModel symmetric = constant_model((Matrix(2, 2) << 0, 1, 1, 0).finished());

/// Random model on n states with piecewise-constant profiles sharing breakpoints.
QModel random_piecewise_model(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Transition> tr;
    for (State x = 0; x < n; ++x)
        for (State y = 0; y < n; ++y)
            if (x != y && unit(rng) < 0.7)
                tr.push_back({x, y, TimeProfile::piecewise_constant({0.6, 1.1}, {2 * unit(rng), 2 * unit(rng), 2 * unit(rng)})});
    return QModel({n, false}, tr);
}

}  // namespace

TEST(P0, IndicatorAndSurvival) {
    const auto row = p0(symmetric, 0.5, 0, 0.5 + std::numbers::ln2);
    EXPECT_EQ(row[1], 0.0);
    EXPECT_NEAR(row[0], 0.5, 1e-15);
    const QModel step({1, false}, {}, {{0, TimeProfile::piecewise_constant({1.0}, {1.0, 3.0})}});
    EXPECT_NEAR(p0(step, 0.5, 0, 1.5)[0], std::exp(-2.0), 1e-15);
    EXPECT_NEAR(p0(step, 0.5, 0, 1.5)[0], 0.1353352832366127, 1e-15);
    EXPECT_THROW(p0(step, 1.0, 0, 1.0), DomainError);
}

TEST(Pn, ZeroRatesGiveZeroTerms) {
    const QModel zero({3, false}, {});
    const auto grid = TimeGrid::build(zero, 0.5, 1.5);
    for (auto route : {FellerRoute::backward, FellerRoute::forward}) {
        const auto it = feller_iterates(zero, grid, route, 4);
        for (std::size_t n = 1; n < it.size(); ++n) EXPECT_EQ(it[n].span_kernel().matrix.cwiseAbs().maxCoeff(), 0.0);
        EXPECT_EQ(it[0].span_kernel().matrix, Matrix::Identity(3, 3));
    }
}

TEST(Pn, FirstIterateTwoStateIsTauExpMinusTau) {
    const double u = 0.3, tau = 0.9;
    const auto grid = TimeGrid::build(symmetric, u, u + tau);
    for (auto route : {FellerRoute::backward, FellerRoute::forward}) {
        const auto it = feller_iterates(symmetric, grid, route, 2);
        EXPECT_NEAR(it[1].span_kernel().matrix(0, 1), tau * std::exp(-tau), 1e-10);
        EXPECT_EQ(it[1].span_kernel().matrix(0, 0), 0.0);
    }
}

TEST(Pn, FirstIteratePureBirthConvolution) {
    // 0 -> 1 at rate a, 1 -> 2 at rate b: P1(0 -> 1) = a (e^{-a tau} - e^{-b tau}) / (b - a)
    const double a = 1.3, b = 3.1, tau = 1.2;
    const QModel m({3, false}, {{0, 1, TimeProfile::constant(a)}, {1, 2, TimeProfile::constant(b)}});
    const auto grid = TimeGrid::build(m, 0.2, 0.2 + tau);
    const auto k = pn_backward(m, {KernelFamily::Anchor::upper, grid, p0_family(m, grid, KernelFamily::Anchor::upper)});
    EXPECT_NEAR(k.matrix(0, 1), a * (std::exp(-a * tau) - std::exp(-b * tau)) / (b - a), 1e-10);
}

TEST(Pn, ThreeStateChainSecondIterateAgreesAcrossRoutes) {
    const QModel m({3, false}, {{0, 1, TimeProfile::constant(1.7)}, {1, 2, TimeProfile::constant(0.6)}});
    const auto grid = TimeGrid::build(m, 0.1, 1.4);
    const auto back = feller_iterates(m, grid, FellerRoute::backward, 3);
    const auto fwd = feller_iterates(m, grid, FellerRoute::forward, 3);
    EXPECT_NEAR(back[2].span_kernel().matrix(0, 2), fwd[2].span_kernel().matrix(0, 2), 1e-9);
    // closed form: a b / (b - a) * [ (1 - e^{-a T})/a - (1 - e^{-b T})/b ], T = 1.3
    const double a = 1.7, b = 0.6, T = 1.3;
    EXPECT_NEAR(back[2].span_kernel().matrix(0, 2), a * b / (b - a) * ((1 - std::exp(-a * T)) / a - (1 - std::exp(-b * T)) / b),
                1e-9);
}

TEST(Pn, MisalignedGridIsRejected) {
    const auto m = model_from_json(bundled_scenarios()[2].model);  // breakpoints 0.5, 1.0, 1.5
    const TimeGrid grid({0.25, 1.75}, {64});
    EXPECT_THROW(feller_iterates(m, grid, FellerRoute::backward, 2), PreconditionError);
    const TimeGrid aligned({0.25, 0.5, 1.0, 1.5, 1.75}, {8, 16, 16, 8});
    EXPECT_NO_THROW(feller_iterates(m, aligned, FellerRoute::backward, 2));
}

TEST(Pn, WrongAnchorIsRejected) {
    const auto grid = TimeGrid::build(symmetric, 0.0, 1.0);
    const KernelFamily lower{KernelFamily::Anchor::lower, grid, p0_family(symmetric, grid, KernelFamily::Anchor::lower)};
    EXPECT_THROW(pn_backward(symmetric, lower), PreconditionError);
    const KernelFamily upper{KernelFamily::Anchor::upper, grid, p0_family(symmetric, grid, KernelFamily::Anchor::upper)};
    EXPECT_THROW(pn_forward(symmetric, upper), PreconditionError);
}

// Backward and forward recursions agree term by term on random piecewise models.
TEST(Pn, RouteEquivalenceProperty) {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 12; ++trial) {
        const std::size_t n = 2 + trial % 3;
        const auto m = random_piecewise_model(rng, n);
        const auto grid = TimeGrid::build(m, 0.2, 1.7);
        const auto back = feller_iterates(m, grid, FellerRoute::backward, 5);
        const auto fwd = feller_iterates(m, grid, FellerRoute::forward, 5);
        for (std::size_t k = 0; k < 5; ++k)
            EXPECT_LE(max_abs_diff(back[k].span_kernel().matrix, fwd[k].span_kernel().matrix), 1e-8)
                << "trial " << trial << " term " << k;
    }
}

// ---------------------------------------------------------------------------

TEST(FellerSum, TwoStateSymmetricMatchesMatrixExponential) {
    const auto r = feller_sum(symmetric, 0.5, 0.5 + std::numbers::ln2);
    EXPECT_NEAR(r.kernel.matrix(0, 0), 0.625, 1e-6);
    EXPECT_NEAR(r.kernel.matrix(0, 1), 0.375, 1e-6);
    EXPECT_NEAR(r.kernel.matrix(0, 0), 0.625, 1e-9);
    EXPECT_LE(r.stack.tail_bound.maxCoeff(), 1e-12);
}

TEST(FellerSum, ForwardRouteGivesSameKernel) {
    FellerOptions fo;
    fo.route = FellerRoute::forward;
    const auto f = feller_sum(symmetric, 0.5, 1.4, fo);
    const auto b = feller_sum(symmetric, 0.5, 1.4);
    EXPECT_LE(max_abs_diff(f.kernel.matrix, b.kernel.matrix), 1e-9);
}

TEST(FellerSum, PoissonClosedForm) {
    const auto m = model_from_json(
        scenario_models::pure_birth(30, [](std::size_t) { return TimeProfile::constant(1.0); }, false));
    const auto r = feller_sum(m, 0.25, 1.25);
    EXPECT_NEAR(r.kernel.matrix(0, 0), std::exp(-1.0), 1e-9);
    EXPECT_NEAR(r.kernel.matrix(0, 0), 0.367879, 1e-6);
    for (int k = 1; k < 6; ++k) EXPECT_NEAR(r.kernel.matrix(0, k), std::exp(-1.0) / std::tgamma(k + 1.0), 1e-9);
}

TEST(FellerSum, NonhomogeneousPoisson) {
    const auto sc = bundled_scenarios()[3];
    const auto r = feller_sum(sc.build_model(), sc.u, sc.t);
    for (const auto& e : sc.expected) EXPECT_NEAR(r.kernel.matrix(e.row, e.col), e.value, 1e-8) << e.label();
}

TEST(FellerSum, RandomConstantModelsMatchMatrixExponential) {
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::Index n = 2 + trial % 3;
        const Matrix rates = Matrix::NullaryExpr(n, n, [&] { return unit(rng) < 0.7 ? 2.0 * unit(rng) : 0.0; });
        const auto m = constant_model(rates);
        const auto r = feller_sum(m, 0.1, 1.3);
        EXPECT_LE(max_abs_diff(r.kernel.matrix, expm_generator(rates, 1.2)), 1e-8) << trial;
    }
}

TEST(FellerSum, ExplosiveTruncationDefect) {
    const auto sc = bundled_scenarios()[5];
    const auto r = feller_sum(sc.build_model(), sc.u, sc.t);
    EXPECT_NEAR(r.kernel.defect()[0], 0.7152906484670958, 1e-8);
    EXPECT_NEAR(r.kernel.matrix(0, 0), std::exp(-1.9), 1e-12);
    EXPECT_GT(r.kernel.defect()[0], 0.0);
}

TEST(FellerSum, PartialSumsNondecreasingAndSubstochastic) {
    for (const auto& sc : bundled_scenarios()) {
        FellerOptions fo;
        fo.estimate_quadrature_error = true;
        const auto r = feller_sum(sc.build_model(), sc.u, sc.t, fo);
        // row sums may exceed 1 by the Simpson error, not more
        const double slack = 10 * std::max(r.quadrature_error, 1e-13);
        for (std::size_t n = 0; n < r.stack.terms.size(); ++n) {
            EXPECT_GE(r.stack.terms[n].matrix.minCoeff(), 0.0) << sc.id << " term " << n;
            EXPECT_TRUE(r.stack.partial_sums[n].substochastic(slack)) << sc.id << " partial sum " << n;
        }
    }
}

TEST(FellerSum, RegularCaseHasNoDefect) {
    for (std::size_t i : {1, 2, 4}) {
        const auto sc = bundled_scenarios()[i];
        FellerOptions fo;
        fo.estimate_quadrature_error = true;
        const auto r = feller_sum(sc.build_model(), sc.u, sc.t, fo);
        EXPECT_LE(r.kernel.defect().cwiseAbs().maxCoeff(), fo.tail_tol + 10 * r.quadrature_error + 1e-12) << sc.id;
    }
}

TEST(FellerSum, ChapmanKolmogorov) {
    const auto m = model_from_json(bundled_scenarios()[2].model);
    const auto us = feller_sum(m, 0.25, 1.1).kernel;
    const auto st = feller_sum(m, 1.1, 1.75).kernel;
    const auto ut = feller_sum(m, 0.25, 1.75).kernel;
    EXPECT_LE((us.matrix * st.matrix - ut.matrix).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(FellerSum, BoundaryApproachesIdentity) {
    const auto m = model_from_json(bundled_scenarios()[4].model);
    for (double d : {1e-2, 1e-3, 1e-4}) {
        const auto k = feller_sum(m, 0.2, 0.2 + d).kernel;
        Matrix off = k.matrix;
        off.diagonal().setZero();
        EXPECT_LE(off.rowwise().sum().maxCoeff(), -std::expm1(-m.q_bound() * d)) << d;
    }
}

TEST(FellerSum, AcyclicModelsTerminateExactly) {
    const QModel chain({3, false}, {{0, 1, TimeProfile::constant(1.0)}, {1, 2, TimeProfile::constant(1.0)}});
    const auto r = feller_sum(chain, 0.0, 1.0);
    EXPECT_EQ(r.stack.terms.size(), 3u);
    EXPECT_EQ(r.stack.tail_bound.maxCoeff(), 0.0);
}

TEST(FellerSum, SlowConvergenceReportsAchievedBound) {
    FellerOptions fo;
    fo.max_terms = 3;
    try {
        feller_sum(symmetric, 0.0, 5.0, fo);
        FAIL() << "expected SlowConvergenceError";
    } catch (const SlowConvergenceError& e) {
        EXPECT_GT(e.achieved_bound(), fo.tail_tol);
    }
}

TEST(FellerSum, RejectsDegenerateInterval) {
    EXPECT_THROW(feller_sum(symmetric, 1.0, 1.0), DomainError);
    FellerOptions fo;
    fo.tail_tol = 0.0;
    EXPECT_THROW(feller_sum(symmetric, 0.0, 1.0, fo), DomainError);
}

TEST(TailBounder, PoissonTail) {
    const TailBounder tb(symmetric, 2.0);
    // P(Poisson(2) >= 3) = 1 - e^{-2}(1 + 2 + 2)
    EXPECT_NEAR(tb.row_bound(0, 3), 1.0 - 5.0 * std::exp(-2.0), 1e-14);
    EXPECT_EQ(tb.row_bound(0, 0), 1.0);
}

TEST(TimeGrid, OversizedGridsAreNumericalFailures) {
    const auto m = model_from_json(scenario_models::explosive_birth(20));
    QuadratureOptions q;
    q.max_nodes = 100;
    EXPECT_THROW(TimeGrid::build(m, 0.1, 2.0, q), NumericalError);
    q = {};
    q.max_family_entries = 1e4;
    EXPECT_THROW(TimeGrid::build(m, 0.1, 2.0, q), NumericalError);
    EXPECT_NO_THROW(TimeGrid::build(m, 0.1, 2.0));
}
