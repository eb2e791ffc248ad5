#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "ipd/pd_algorithms.hpp"
#include "support.hpp"

using namespace ipd;
using ipd::testing::largest_eigenvalue;
using ipd::testing::random_positive;
using ipd::testing::random_sparse_dense;
using ipd::testing::random_sparse_no_zero_rows;
using ipd::testing::random_vector;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Vector vec(std::initializer_list<double> v)
{
    Vector out(static_cast<Index>(v.size()));
    Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

LinearMapPtr sparse(const Matrix& m) { return std::make_shared<SparseMap>(SparseMap::from_dense(m)); }

/// f = 1/2 (x - 1)^2, g = 0.1 |x|, no coupling (D = 0 into R^1).
CompositeProblem scalar_lasso()
{
    return CompositeProblem(std::make_shared<QuadraticLoss>(vec({1.0})), std::make_shared<L1Norm>(1, 0.1),
                            std::make_shared<ZeroFunction>(1), std::make_shared<SparseMap>(SparseMap::zero(1, 1)));
}

struct LassoData
{
    Matrix a;
    Vector b;
    double lambda;
};

LassoData lasso_data(std::uint64_t seed, Index m, Index q, double lambda)
{
    Rng rng(seed);
    LassoData d{Matrix(m, q), Vector(m), lambda};
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < q; ++j) d.a(i, j) = rng.normal();
    d.b = random_vector(rng, m);
    return d;
}

/// (1/(2m))||Ax - b||^2 + lambda ||D x||_1 with D = I.
CompositeProblem lasso_problem(const LassoData& d)
{
    const Index q = d.a.cols();
    auto f = std::make_shared<LeastSquaresLoss>(sparse(d.a), d.b, 1.0 / static_cast<double>(d.a.rows()));
    return CompositeProblem(f, std::make_shared<ZeroFunction>(q), std::make_shared<L1Norm>(q, d.lambda),
                            std::make_shared<SparseMap>(SparseMap::identity(q)));
}

/// Plain ISTA written out with dense algebra, independent of the solvers.
std::pair<Vector, double> ista(const LassoData& d, double tol = 1e-13)
{
    const double m = static_cast<double>(d.a.rows());
    const double l = largest_eigenvalue(d.a.transpose() * d.a) / m;
    const double t = 1.0 / l;
    Vector x = Vector::Zero(d.a.cols());
    for (int it = 0; it < 1000000; ++it) {
        const Vector v = x - t * d.a.transpose() * (d.a * x - d.b) / m;
        Vector nx(x.size());
        for (Index j = 0; j < x.size(); ++j) nx[j] = std::copysign(std::max(std::abs(v[j]) - t * d.lambda, 0.0), v[j]);
        const double step = (nx - x).norm();
        x = nx;
        if (step <= tol) break;
    }
    const double obj = (d.a * x - d.b).squaredNorm() / (2.0 * m) + d.lambda * x.lpNorm<1>();
    return {x, obj};
}

InertialSchedule default_schedule(double alpha = 0.3)
{
    return make_schedule(alpha, 0.01, kNaN, 0.9);
}

} // namespace

TEST(StepValidation, ZeroCouplingPasses)
{
    const CompositeProblem p(std::make_shared<QuadraticLoss>(vec({0.0})), std::make_shared<ZeroFunction>(1),
                             std::make_shared<ZeroFunction>(1), std::make_shared<SparseMap>(SparseMap::zero(1, 1)));
    const StepCertificate c = validate_step_sizes(p, PdsSteps::scalar(1, 1, 1.0, 1.0));
    EXPECT_TRUE(c.scalar);
    EXPECT_DOUBLE_EQ(c.margin, 0.5);
}

TEST(StepValidation, IdentityCouplingAtUnitStepsFails)
{
    const CompositeProblem p(std::make_shared<QuadraticLoss>(vec({0.0})), std::make_shared<ZeroFunction>(1),
                             std::make_shared<ZeroFunction>(1), std::make_shared<SparseMap>(SparseMap::identity(1)));
    try {
        validate_step_sizes(p, PdsSteps::scalar(1, 1, 1.0, 1.0));
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("margin -0.5"), std::string::npos) << e.what();
    }
}

TEST(StepValidation, MatrixConditionAgainstDenseOracle)
{
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const Index m = 1 + static_cast<Index>(rng.index(8));
        const Index n = 1 + static_cast<Index>(rng.index(8));
        const Matrix d = random_sparse_dense(rng, m, n, 0.5);
        const Vector e = random_positive(rng, n, 0.0, 2.0);
        const Vector tau = random_positive(rng, n, 0.05, 1.0);
        const Vector sigma = random_positive(rng, m, 0.05, 1.0);
        const Vector slack = tau.cwiseInverse() - 0.5 * e;
        bool expect = slack.minCoeff() > 0.0;
        if (expect) {
            const Matrix s = sigma.cwiseSqrt().asDiagonal() * d * slack.cwiseSqrt().cwiseInverse().asDiagonal();
            expect = largest_eigenvalue(s * s.transpose()) < 1.0 - 1e-9;
            if (std::abs(largest_eigenvalue(s * s.transpose()) - 1.0) < 1e-6) continue;
        }
        const CompositeProblem p(std::make_shared<QuadraticLoss>(Vector::Zero(n)), std::make_shared<ZeroFunction>(n),
                                 std::make_shared<ZeroFunction>(m), sparse(d));
        // a custom e needs a custom f
        struct Diag final : SmoothOracle
        {
            Vector e;
            explicit Diag(Vector v) : e(std::move(v)) {}
            Index dim() const override { return e.size(); }
            double value(const Vector&) const override { return 0.0; }
            Vector grad(const Vector& x) const override { return Vector::Zero(x.size()); }
            Vector cocoercivity_diag() const override { return e; }
        };
        const CompositeProblem q(std::make_shared<Diag>(e), p.g, p.h, p.d);
        bool ok = true;
        try {
            validate_step_sizes(q, PdsSteps{DiagonalMap(tau), DiagonalMap(sigma)});
        } catch (const ValidationError&) {
            ok = false;
        }
        if (tau.maxCoeff() == tau.minCoeff() && sigma.maxCoeff() == sigma.minCoeff()) continue;
        EXPECT_EQ(ok, expect) << trial;
    }
}

TEST(Preconditioner, IdentityExample)
{
    const DiagPreconditioner pc = build_diag_preconditioner(SparseMap::identity(2), vec({1.0, 1.0}), 1.0, 1.0, 1.0);
    EXPECT_EQ(pc.tau.values(), vec({0.5, 0.5}));
    EXPECT_EQ(pc.psi.values(), vec({1.0, 1.0}));
}

TEST(Preconditioner, ZeroCouplingIsRejected)
{
    try {
        build_diag_preconditioner(SparseMap::zero(1, 1), vec({2.0}), 1.0);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("row 0 of D is zero"), std::string::npos);
    }
    EXPECT_THROW(build_diag_preconditioner(SparseMap::from_dense(Matrix::Zero(1, 2)), vec({0.0, 1.0})),
                 ValidationError);
}

TEST(Preconditioner, HandEnumeratedExample)
{
    Matrix d(2, 2);
    d << 1, -2, 0, 3;
    const DiagPreconditioner pc = build_diag_preconditioner(SparseMap::from_dense(d), vec({1.0, 1.0}), 1.0, 1.0, 0.0);
    EXPECT_DOUBLE_EQ(pc.tau[0], 0.5);
    EXPECT_DOUBLE_EQ(pc.tau[1], 1.0 / 14.0);
    EXPECT_EQ(pc.psi.values(), vec({2.0, 1.0}));
}

TEST(Preconditioner, ParameterRanges)
{
    const SparseMap id = SparseMap::identity(1);
    EXPECT_THROW(build_diag_preconditioner(id, vec({1.0}), 2.0), ValidationError);
    EXPECT_THROW(build_diag_preconditioner(id, vec({1.0}), 1.0, 0.0), ValidationError);
    EXPECT_THROW(build_diag_preconditioner(id, vec({1.0}), 1.0, 1.0, 2.5), ValidationError);
}

TEST(Preconditioner, RandomSparseCouplingsPassBothConditions)
{
    Rng rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const Index m = 1 + static_cast<Index>(rng.index(50));
        const Index n = 1 + static_cast<Index>(rng.index(50));
        const Matrix d = random_sparse_no_zero_rows(rng, m, n, rng.uniform(0.1, 0.9));
        const Vector e = random_positive(rng, n, 0.01, 5.0);
        const double s = rng.uniform(0.0, 2.0);
        const double r = rng.uniform(0.2, 5.0);
        const DiagPreconditioner pc = build_diag_preconditioner(SparseMap::from_dense(d), e, 1.9, r, s);
        const Vector slack = pc.tau.values().cwiseInverse() - 0.5 * e;
        ASSERT_GT(slack.minCoeff(), 0.0);
        const Matrix k = pc.sigma().values().cwiseSqrt().asDiagonal() * d *
                         slack.cwiseSqrt().cwiseInverse().asDiagonal();
        EXPECT_LT(largest_eigenvalue(k * k.transpose()), 1.0) << trial;
        struct Diag final : SmoothOracle
        {
            Vector e;
            explicit Diag(Vector v) : e(std::move(v)) {}
            Index dim() const override { return e.size(); }
            double value(const Vector&) const override { return 0.0; }
            Vector grad(const Vector& x) const override { return Vector::Zero(x.size()); }
            Vector cocoercivity_diag() const override { return e; }
        };
        const CompositeProblem p(std::make_shared<Diag>(e), std::make_shared<ZeroFunction>(n),
                                 std::make_shared<ZeroFunction>(m), sparse(d));
        EXPECT_NO_THROW(validate_step_sizes(p, pc.pds_steps())) << trial;
    }
}

TEST(Ipds, AllZeroProblemIsStationary)
{
    const CompositeProblem p(std::make_shared<ZeroSmooth>(2), std::make_shared<ZeroFunction>(2),
                             std::make_shared<ZeroFunction>(1), std::make_shared<SparseMap>(SparseMap::zero(1, 2)));
    const PrimalDualState st = PrimalDualState::start(vec({1.0, -2.0}), Vector::Zero(1));
    const PrimalDualState next = ipds_step(p, PdsSteps::scalar(2, 1, 1.0, 1.0), {0.0, 1.0, 1.0, 1.0}, st);
    EXPECT_EQ(next.x_curr, st.x_curr);
    EXPECT_EQ(next.y_curr, st.y_curr);
}

TEST(Ipds, UnitGradientStepOnQuadratic)
{
    const CompositeProblem p(std::make_shared<QuadraticLoss>(Vector::Zero(3)), std::make_shared<ZeroFunction>(3),
                             std::make_shared<ZeroFunction>(1), std::make_shared<SparseMap>(SparseMap::zero(1, 3)));
    const PrimalDualState next = ipds_step(p, PdsSteps::scalar(3, 1, 1.0, 1.0), {0.0, 1.0, 1.0, 1.0},
                                           PrimalDualState::start(vec({1.0, 2.0, 3.0}), Vector::Zero(1)));
    EXPECT_EQ(next.x_curr, Vector::Zero(3));
}

TEST(Ipds, ScalarLassoReachesSoftThreshold)
{
    const CompositeProblem p = scalar_lasso();
    const PdRunResult r = solve_ipds(p, PdsSteps::scalar(1, 1, 1.0, 1.0), default_schedule(), {100000, 1e-12, 10},
                                     PrimalDualState::start(vec({5.0}), Vector::Zero(1)));
    EXPECT_EQ(r.status, RunStatus::converged);
    EXPECT_NEAR(r.state.x_curr[0], 0.9, 1e-10);
    EXPECT_LE(r.fixed_point_residual, 1e-10);
}

TEST(Ipds, MatchesEngineStepOnPdsOperator)
{
    const LassoData d = lasso_data(3, 12, 5, 0.1);
    const CompositeProblem p = lasso_problem(d);
    const PdsSteps steps = build_diag_preconditioner(*p.d, p.cocoercivity()).pds_steps();
    const PdsOperator op(p, steps);
    const InertialSchedule s = default_schedule();
    Rng rng(1);
    PrimalDualState st = PrimalDualState::start(random_vector(rng, 5), random_vector(rng, 5));
    Vector z(10);
    z << st.x_curr, st.y_curr;
    KMState km = km_start(z, z);
    for (int k = 0; k < 30; ++k) {
        st = ipds_step(p, steps, s, st);
        km = km_step(op, km, s, {0, 1});
        Vector packed(10);
        packed << st.x_curr, st.y_curr;
        ASSERT_EQ(packed, km.x_curr) << k;
    }
}

TEST(Condat, EqualsIpdsWithoutInertia)
{
    Rng rng(9);
    const Matrix dm = random_sparse_no_zero_rows(rng, 6, 4, 0.5);
    const LassoData d = lasso_data(4, 10, 4, 0.05);
    auto f = std::make_shared<LeastSquaresLoss>(sparse(d.a), d.b, 0.1);
    const CompositeProblem p(f, std::make_shared<L1Norm>(4, 0.02), std::make_shared<L1Norm>(6, 0.1), sparse(dm));
    const PdsSteps sc = default_scalar_steps(p);
    const CondatSteps cs = make_condat_steps(p, sc.tau[0], sc.sigma[0]);
    for (double rho : {1.0, 0.6}) {
        PrimalDualState a = PrimalDualState::start(random_vector(rng, 4), random_vector(rng, 6));
        PrimalDualState b = a;
        for (int k = 0; k < 40; ++k) {
            a = ipds_step(p, sc, {0.0, 1.0, 1.0, rho}, a);
            b = condat_step(p, cs, rho, b);
            ASSERT_EQ(a.x_curr, b.x_curr) << k;
            ASSERT_EQ(a.y_curr, b.y_curr) << k;
        }
    }
}

TEST(Condat, ScalarLassoLimit)
{
    const CompositeProblem p = scalar_lasso();
    const CondatSteps cs = make_condat_steps(p, 1.0, 1.0);
    EXPECT_DOUBLE_EQ(cs.delta, 1.5);
    const PdRunResult r =
        solve_condat(p, cs, 1.2, {100000, 1e-12, 10}, PrimalDualState::start(vec({-3.0}), Vector::Zero(1)));
    EXPECT_EQ(r.status, RunStatus::converged);
    EXPECT_NEAR(r.state.x_curr[0], 0.9, 1e-10);
}

TEST(Condat, PointIndicatorPinsOrigin)
{
    const CompositeProblem p(std::make_shared<ZeroSmooth>(2), std::make_shared<ZeroIndicator>(2),
                             std::make_shared<ZeroFunction>(1), std::make_shared<SparseMap>(SparseMap::zero(1, 2)));
    const CondatSteps cs = make_condat_steps(p, 1.0, 1.0);
    PrimalDualState st = PrimalDualState::start(vec({4.0, 1.0}), Vector::Zero(1));
    for (int k = 0; k < 5; ++k) {
        st = condat_step(p, cs, 1.0, st);
        EXPECT_EQ(st.x_curr, Vector::Zero(2));
    }
}

TEST(Condat, RelaxationOutsideIntervalIsRejected)
{
    const CompositeProblem p = scalar_lasso();
    const CondatSteps cs = make_condat_steps(p, 1.0, 1.0);
    EXPECT_THROW(condat_step(p, cs, 1.5, PrimalDualState::start(vec({0.0}), vec({0.0}))), ValidationError);
    EXPECT_THROW(make_condat_steps(p, 2.0, 1.0), ValidationError);
}

TEST(Iadmm, ZeroCouplingIdentityIsForwardBackward)
{
    const LassoData d = lasso_data(5, 15, 6, 0.0);
    auto f = std::make_shared<LeastSquaresLoss>(sparse(d.a), d.b, 1.0 / 15.0);
    auto g = std::make_shared<L1Norm>(6, 0.05);
    const CompositeProblem p(f, g, std::make_shared<ZeroFunction>(6), std::make_shared<SparseMap>(SparseMap::identity(6)));
    const double tau = 1.0 / p.lipschitz();
    const AdmmSteps steps = AdmmSteps::scalar(6, tau, 3.0);
    Rng rng(2);
    const Vector x0 = random_vector(rng, 6);
    PrimalDualState st = PrimalDualState::start(x0, Vector::Zero(6));
    Vector x = x0;
    for (int k = 0; k < 50; ++k) {
        st = iadmm_step(p, steps, {0.0, 1.0, 1.0, 1.0}, st);
        x = forward_backward_step(p, tau, x);
        ASSERT_EQ(st.x_curr, x) << k;
        ASSERT_EQ(st.y_curr, Vector::Zero(6)) << k;
    }
}

TEST(Iadmm, NoInertiaFollowsTheAdmmRecursion)
{
    // z = prox_{mu h}(x + mu y); y+ = y + (x - z)/mu; u = (1 - tau/mu) x + (tau/mu) z;
    // x+ = prox_{tau g}(u - tau y+ - tau grad f(x)) for D = I.
    const LassoData d = lasso_data(6, 12, 4, 0.0);
    auto f = std::make_shared<LeastSquaresLoss>(sparse(d.a), d.b, 1.0 / 12.0);
    const CompositeProblem p(f, std::make_shared<L1Norm>(4, 0.03), std::make_shared<L1Norm>(4, 0.2),
                             std::make_shared<SparseMap>(SparseMap::identity(4)));
    const double tau = 0.5 / p.lipschitz();
    const double mu = 4.0 / p.lipschitz();
    Rng rng(3);
    Vector x = random_vector(rng, 4);
    Vector y = random_vector(rng, 4);
    PrimalDualState st = PrimalDualState::start(x, y);
    for (int k = 0; k < 30; ++k) {
        st = iadmm_step(p, AdmmSteps::scalar(4, tau, mu), {0.0, 1.0, 1.0, 1.0}, st);
        const Vector z = prox_l1(DiagonalMap::constant(4, mu), x + mu * y, 0.2);
        y = y + (x - z) / mu;
        const Vector u = (1.0 - tau / mu) * x + (tau / mu) * z;
        x = prox_l1(DiagonalMap::constant(4, tau), u - tau * y - tau * f->grad(x), 0.03);
        ASSERT_LE((st.x_curr - x).cwiseAbs().maxCoeff(), 1e-12) << k;
        ASSERT_LE((st.y_curr - y).cwiseAbs().maxCoeff(), 1e-12) << k;
    }
}

TEST(Iadmm, PointIndicatorDrivesToOrigin)
{
    const CompositeProblem p(std::make_shared<QuadraticLoss>(vec({0.0})), std::make_shared<ZeroFunction>(1),
                             std::make_shared<ZeroIndicator>(1), std::make_shared<SparseMap>(SparseMap::identity(1)));
    const AdmmSteps steps = AdmmSteps::scalar(1, 0.5, 2.0);
    const PdRunResult r = solve_iadmm(p, steps, default_schedule(), {100000, 1e-12, 10},
                                      PrimalDualState::start(vec({3.0}), vec({0.0})));
    EXPECT_EQ(r.status, RunStatus::converged);
    EXPECT_NEAR(r.state.x_curr[0], 0.0, 1e-10);
    const Vector z = p.h->prox(steps.psi, p.d->apply(r.state.x_curr) + steps.psi.values().cwiseProduct(r.state.y_curr));
    EXPECT_EQ(z[0], 0.0);
}

TEST(Iadmm, GeometryRequirements)
{
    Matrix two(2, 2);
    two << 1, 1, 0, 1;
    EXPECT_THROW(AdmmGeometry(SparseMap::from_dense(two)), ValidationError);
    Matrix empty_col(2, 2);
    empty_col << 1, 0, 2, 0;
    EXPECT_THROW(AdmmGeometry(SparseMap::from_dense(empty_col)), ValidationError);
    Matrix ok(3, 2);
    ok << 2, 0, 0, 1, 0, -1;
    const AdmmGeometry g(SparseMap::from_dense(ok));
    const DiagonalMap tau(vec({1.0, 2.0, 4.0}));
    // column 1 hits rows 1 and 2: metric 1 / (1/2 + 1/4)
    EXPECT_DOUBLE_EQ(g.metric(tau)[0], 0.25);
    EXPECT_DOUBLE_EQ(g.metric(tau)[1], 4.0 / 3.0);
    // argmin over w of ||D w - v||^2_{T^{-1}} against the normal equations
    const Vector v = vec({1.0, 3.0, -1.0});
    const Matrix tinv = tau.values().cwiseInverse().asDiagonal();
    const Vector w = (ok.transpose() * tinv * ok).ldlt().solve(ok.transpose() * tinv * v);
    EXPECT_NEAR((g.pullback(tau, v) - w).norm(), 0.0, 1e-14);
    EXPECT_EQ(g.lift_cocoercivity(vec({8.0, 2.0})), vec({2.0, 1.0, 1.0}));
}

TEST(ForwardBackward, UnitStepOnQuadratic)
{
    const QuadraticLoss f(Vector::Zero(2));
    const ZeroFunction g(2);
    EXPECT_EQ(forward_backward_step(f, g, 1.0, vec({3.0, -1.0})), Vector::Zero(2));
    EXPECT_THROW(forward_backward_step(f, g, 2.0, vec({3.0, -1.0})), ValidationError);
}

TEST(ForwardBackward, MatchesIpdsWithoutCoupling)
{
    const LassoData d = lasso_data(8, 10, 3, 0.0);
    auto f = std::make_shared<LeastSquaresLoss>(sparse(d.a), d.b, 0.1);
    const CompositeProblem p(f, std::make_shared<L1Norm>(3, 0.1), std::make_shared<ZeroFunction>(1),
                             std::make_shared<SparseMap>(SparseMap::zero(1, 3)));
    const double tau = 1.0 / p.lipschitz();
    Vector x = vec({1.0, 2.0, 3.0});
    PrimalDualState st = PrimalDualState::start(x, Vector::Zero(1));
    for (int k = 0; k < 20; ++k) {
        x = forward_backward_step(p, tau, x);
        st = ipds_step(p, PdsSteps::scalar(3, 1, tau, 1.0), {0.0, 1.0, 1.0, 1.0}, st);
        ASSERT_EQ(st.x_curr, x);
    }
    const CompositeProblem coupled(f, p.g, std::make_shared<L1Norm>(3, 0.1),
                                   std::make_shared<SparseMap>(SparseMap::identity(3)));
    EXPECT_THROW(forward_backward_step(coupled, tau, x), ValidationError);
}

TEST(ForwardBackward, IsIsta)
{
    const LassoData d = lasso_data(12, 20, 5, 0.1);
    auto f = std::make_shared<LeastSquaresLoss>(sparse(d.a), d.b, 1.0 / 20.0);
    const L1Norm g(5, 0.1);
    const double t = 1.0 / f->cocoercivity_diag()[0];
    Vector x = Vector::Zero(5);
    Vector y = Vector::Zero(5);
    for (int k = 0; k < 10; ++k) {
        x = forward_backward_step(*f, g, t, x);
        const Vector v = y - t * d.a.transpose() * (d.a * y - d.b) / 20.0;
        for (Index j = 0; j < 5; ++j) y[j] = std::copysign(std::max(std::abs(v[j]) - t * 0.1, 0.0), v[j]);
        EXPECT_LE((x - y).cwiseAbs().maxCoeff(), 1e-14);
    }
}

TEST(Solvers, ObjectivesAgreeWithIsta)
{
    const LassoData d = lasso_data(42, 50, 20, 0.1);
    const CompositeProblem p = lasso_problem(d);
    const auto [x_ref, obj_ref] = ista(d);
    const StopCriteria stop{200000, 1e-11, 50};
    const PrimalDualState z0 = PrimalDualState::start(Vector::Zero(20), Vector::Zero(20));

    const PdsSteps sc = default_scalar_steps(p);
    const PdRunResult condat = solve_condat(p, make_condat_steps(p, sc.tau[0], sc.sigma[0]), 1.0, stop, z0);
    const PdRunResult ipds = solve_ipds(p, sc, default_schedule(), stop, z0);
    const PdsSteps pre = build_diag_preconditioner(*p.d, p.cocoercivity()).pds_steps();
    const PdRunResult ipdsp = solve_ipds(p, pre, default_schedule(), stop, z0);
    const AdmmGeometry geom(*p.d);
    const PdRunResult iadmm = solve_iadmm(p, default_admm_steps(p, geom, 1.9, 1.0, true), default_schedule(), stop, z0);
    const PdRunResult padmm = solve_iadmm(p, default_admm_steps(p, geom), default_schedule(), stop, z0);
    for (const PdRunResult* r : {&condat, &ipds, &ipdsp, &iadmm, &padmm}) {
        EXPECT_EQ(r->status, RunStatus::converged);
        EXPECT_NEAR(r->objective, obj_ref, 1e-6);
        EXPECT_LE((r->state.x_curr - x_ref).norm(), 1e-6);
    }
}

TEST(Solvers, GeneralCouplingAgrees)
{
    Rng rng(77);
    const Matrix dm = random_sparse_no_zero_rows(rng, 8, 6, 0.4);
    const LassoData d = lasso_data(13, 30, 6, 0.0);
    auto f = std::make_shared<LeastSquaresLoss>(sparse(d.a), d.b, 1.0 / 30.0);
    const CompositeProblem p(f, std::make_shared<L1Norm>(6, 0.01), std::make_shared<L1Norm>(8, 0.05), sparse(dm));
    const StopCriteria stop{200000, 1e-11, 50};
    const PrimalDualState z0 = PrimalDualState::start(Vector::Zero(6), Vector::Zero(8));
    const PdsSteps sc = default_scalar_steps(p);
    const PdRunResult a = solve_condat(p, make_condat_steps(p, sc.tau[0], sc.sigma[0]), 1.0, stop, z0);
    const PdRunResult b = solve_ipds(p, sc, default_schedule(), stop, z0);
    const PdsSteps pre = build_diag_preconditioner(*p.d, p.cocoercivity()).pds_steps();
    const PdRunResult c = solve_ipds(p, pre, default_schedule(), stop, z0);
    EXPECT_NEAR(a.objective, b.objective, 1e-8);
    EXPECT_NEAR(a.objective, c.objective, 1e-8);
    EXPECT_THROW(AdmmGeometry{*p.d}, ValidationError);
}

TEST(Solvers, ConvergedPointIsPrimalDualOptimal)
{
    const LassoData d = lasso_data(21, 40, 8, 0.05);
    const CompositeProblem p = lasso_problem(d);
    const double tol = 1e-10;
    const PdsSteps pre = build_diag_preconditioner(*p.d, p.cocoercivity()).pds_steps();
    const PdRunResult r = solve_ipds(p, pre, default_schedule(), {200000, tol, 20},
                                     PrimalDualState::start(Vector::Zero(8), Vector::Zero(8)));
    ASSERT_EQ(r.status, RunStatus::converged);
    const Vector& x = r.state.x_curr;
    const Vector& y = r.state.y_curr;
    const Vector& t = pre.tau.values();
    const Vector px = p.g->prox(pre.tau, x - t.cwiseProduct(p.f->grad(x)) - t.cwiseProduct(p.d->apply_adjoint(y)));
    const Vector py = prox_conjugate(*p.h, pre.sigma, y + pre.sigma.values().cwiseProduct(p.d->apply(x)));
    EXPECT_LE((x - px).norm(), 10 * tol);
    EXPECT_LE((y - py).norm(), 10 * tol);
}

TEST(Solvers, StepLengthsAreSummable)
{
    const LassoData d = lasso_data(17, 30, 10, 0.1);
    const CompositeProblem p = lasso_problem(d);
    const PdRunResult r = solve_ipds(p, default_scalar_steps(p), default_schedule(), {4000, 0.0, 1000},
                                     PrimalDualState::start(Vector::Zero(10), Vector::Zero(10)), nullptr, true);
    ASSERT_EQ(r.trajectory.size(), 4000u);
    double total = 0.0, at90 = 0.0;
    for (std::size_t i = 0; i < r.trajectory.size(); ++i) {
        const auto& row = r.trajectory[i];
        total += row.primal_residual * row.primal_residual + row.dual_residual * row.dual_residual;
        if (i + 1 == r.trajectory.size() * 9 / 10) at90 = total;
    }
    EXPECT_LT((total - at90) / total, 1e-9);
}

TEST(Solvers, TraceHeaderAndDeterminism)
{
    const CompositeProblem p = scalar_lasso();
    auto trace = [&] {
        std::ostringstream os;
        solve_ipds(p, PdsSteps::scalar(1, 1, 1.0, 1.0), default_schedule(), {50, 0.0, 1000},
                   PrimalDualState::start(vec({5.0}), Vector::Zero(1)), &os);
        return os.str();
    };
    const std::string a = trace();
    EXPECT_EQ(a.substr(0, a.find('\n')), "k,objective,primal_residual,dual_residual");
    EXPECT_EQ(a, trace());
    EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 51);
}

TEST(Solvers, InvalidStepsFailBeforeIterating)
{
    const CompositeProblem p = scalar_lasso();
    std::ostringstream os;
    EXPECT_THROW(solve_ipds(p, PdsSteps::scalar(1, 1, 3.0, 1.0), default_schedule(), {},
                            PrimalDualState::start(vec({1.0}), vec({0.0})), &os),
                 ValidationError);
    EXPECT_TRUE(os.str().empty());
}

TEST(Averagedness, ScalarConstant)
{
    const CompositeProblem p = scalar_lasso();
    // kappa = 1/tau / l = 2, constant 1 / (2 - 1/4)
    EXPECT_DOUBLE_EQ(pds_averaged_constant(p, 0.5, 1.0), 1.0 / 1.75);
    EXPECT_THROW(pds_averaged_constant(p, 2.0, 1.0), ValidationError);
}
