#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "ipd/distnet.hpp"
#include "ipd/pd_algorithms.hpp"
#include "support.hpp"

using namespace ipd;
using ipd::testing::random_vector;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::shared_ptr<const AgentGraph> graph_ptr(AgentGraph g) { return std::make_shared<const AgentGraph>(std::move(g)); }

NetworkProblem trivial_network(std::shared_ptr<const AgentGraph> g, Index q)
{
    std::vector<SmoothPtr> f;
    std::vector<ProxPtr> h;
    for (std::size_t n = 0; n < g->num_nodes(); ++n) {
        f.push_back(std::make_shared<ZeroSmooth>(q));
        h.push_back(std::make_shared<ZeroFunction>(q));
    }
    return NetworkProblem(g, BatchedProblem(f, h));
}

/// Agent n holds 1/2 ||x - c_n||^2 and g_n = lambda ||x||_1.
NetworkProblem quadratic_network(std::shared_ptr<const AgentGraph> g, const std::vector<Vector>& centers,
                                 double lambda = 0.0)
{
    std::vector<SmoothPtr> f;
    std::vector<ProxPtr> h;
    for (const auto& c : centers) {
        f.push_back(std::make_shared<QuadraticLoss>(c));
        if (lambda > 0.0) {
            h.push_back(std::make_shared<L1Norm>(c.size(), lambda));
        } else {
            h.push_back(std::make_shared<ZeroFunction>(c.size()));
        }
    }
    return NetworkProblem(g, BatchedProblem(f, h));
}

NetworkProblem logistic_network(std::shared_ptr<const AgentGraph> g, std::uint64_t seed, Index m, Index q,
                                double lambda)
{
    Rng rng(seed);
    Matrix a(m, q);
    Vector labels(m);
    for (Index i = 0; i < m; ++i) {
        for (Index j = 0; j < q; ++j) a(i, j) = rng.normal();
        labels[i] = rng.uniform() < 0.5 ? -1.0 : 1.0;
    }
    return NetworkProblem(g, split_problem(SparseMap::from_dense(a), labels, lambda, g->num_nodes()));
}

BlockVector random_blocks(Rng& rng, Index n, Index q, double scale = 1.0)
{
    return BlockVector::from_flat(random_vector(rng, n * q, scale), n);
}

/// Random duals with y_e(hi) = -y_e(lo).
BlockVector antisymmetric_duals(Rng& rng, const AgentGraph& g, Index q)
{
    BlockVector y = zero_edge_duals(g, q);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        y.block(static_cast<Index>(2 * e)) = random_vector(rng, q);
        y.block(static_cast<Index>(2 * e + 1)) = -y.block(static_cast<Index>(2 * e));
    }
    return y;
}

InertialSchedule schedule_for(const NetworkProblem& np, const AdmmSteps& steps)
{
    return make_schedule(0.3, 0.01, kNaN, 0.9, minibatch_averaged_constant(np.local().e_hat(), steps));
}

/// sum_n f_n(x_n) on the stacked agent variables.
class StackedSmooth final : public SmoothOracle
{
public:
    explicit StackedSmooth(const BatchedProblem& bp) : bp_(bp) {}
    Index dim() const override { return static_cast<Index>(bp_.num_batches()) * bp_.dim(); }
    double value(const Vector& x) const override
    {
        double v = 0.0;
        for (std::size_t n = 0; n < bp_.num_batches(); ++n) v += bp_.f(n).value(block(x, n));
        return v;
    }
    Vector grad(const Vector& x) const override
    {
        Vector out(dim());
        for (std::size_t n = 0; n < bp_.num_batches(); ++n) {
            out.segment(static_cast<Index>(n) * bp_.dim(), bp_.dim()) = bp_.f(n).grad(block(x, n));
        }
        return out;
    }
    Vector cocoercivity_diag() const override
    {
        Vector out(dim());
        for (std::size_t n = 0; n < bp_.num_batches(); ++n) {
            out.segment(static_cast<Index>(n) * bp_.dim(), bp_.dim()) = bp_.f(n).cocoercivity_diag();
        }
        return out;
    }

private:
    Vector block(const Vector& x, std::size_t n) const
    {
        return x.segment(static_cast<Index>(n) * bp_.dim(), bp_.dim());
    }
    const BatchedProblem& bp_;
};

class StackedProx final : public ProxOracle
{
public:
    explicit StackedProx(const BatchedProblem& bp) : bp_(bp) {}
    Index dim() const override { return static_cast<Index>(bp_.num_batches()) * bp_.dim(); }
    Vector prox(const DiagonalMap& w, const Vector& v) const override
    {
        const Index q = bp_.dim();
        Vector out(dim());
        for (std::size_t n = 0; n < bp_.num_batches(); ++n) {
            const Index off = static_cast<Index>(n) * q;
            out.segment(off, q) = bp_.g(n).prox(DiagonalMap(w.values().segment(off, q)), v.segment(off, q));
        }
        return out;
    }
    double value(const Vector& v) const override
    {
        const Index q = bp_.dim();
        double s = 0.0;
        for (std::size_t n = 0; n < bp_.num_batches(); ++n) s += bp_.g(n).value(v.segment(static_cast<Index>(n) * q, q));
        return s;
    }

private:
    const BatchedProblem& bp_;
};

} // namespace

TEST(EdgeDuals, SlotLayoutMatchesEdgeOperator)
{
    auto g = graph_ptr(make_ring_graph(5));
    const Index q = 2;
    const EdgeOperator d(g, q);
    Rng rng(1);
    const BlockVector y = BlockVector::from_flat(random_vector(rng, d.rows()), static_cast<Index>(2 * g->num_edges()));
    const Vector adj = d.apply_adjoint(y.flatten());
    for (std::size_t n = 0; n < g->num_nodes(); ++n) {
        Vector s = Vector::Zero(q);
        for (const auto& inc : g->neighbors(n)) s += y.block(static_cast<Index>(owner_slot(inc)));
        EXPECT_EQ(Vector(adj.segment(static_cast<Index>(n) * q, q)), s);
    }
    const BlockVector x = random_blocks(rng, 5, q);
    const Vector dx = d.apply(x.flatten());
    for (std::size_t n = 0; n < g->num_nodes(); ++n) {
        for (const auto& inc : g->neighbors(n)) {
            EXPECT_EQ(Vector(dx.segment(static_cast<Index>(owner_slot(inc)) * q, q)),
                      Vector(x.block(static_cast<Index>(n))));
        }
    }
}

TEST(NetworkProblem, AgentCountMustMatch)
{
    auto g = graph_ptr(make_path_graph(3));
    std::vector<SmoothPtr> f{std::make_shared<ZeroSmooth>(1), std::make_shared<ZeroSmooth>(1)};
    std::vector<ProxPtr> h{std::make_shared<ZeroFunction>(1), std::make_shared<ZeroFunction>(1)};
    EXPECT_THROW(NetworkProblem(g, BatchedProblem(f, h)), ValidationError);
}

TEST(DistPadmm, PathOfTwoAveragesInitialPoints)
{
    auto g = graph_ptr(make_path_graph(2));
    const NetworkProblem np = trivial_network(g, 1);
    const AdmmSteps steps = AdmmSteps::scalar(1, 0.5, 1.0);
    BlockVector x0(2, 1);
    x0.block(0)[0] = -1.0;
    x0.block(1)[0] = 5.0;
    const DistRunResult r = solve_dist_padmm(np, steps, make_schedule(0.3, 0.01, kNaN, 0.9), {100000, 1e-13, 10},
                                             DistState::start(*g, x0));
    EXPECT_EQ(r.status, RunStatus::converged);
    EXPECT_NEAR(r.state.x.block(0)[0], 2.0, 1e-10);
    EXPECT_NEAR(r.state.x.block(1)[0], 2.0, 1e-10);
}

TEST(DistPadmm, TriangleQuadraticsReachMeanOfCenters)
{
    auto g = graph_ptr(make_ring_graph(3));
    Rng rng(2);
    std::vector<Vector> centers{random_vector(rng, 2), random_vector(rng, 2), random_vector(rng, 2)};
    const Vector mean = (centers[0] + centers[1] + centers[2]) / 3.0;
    const NetworkProblem np = quadratic_network(g, centers);
    const AdmmSteps steps = default_batch_steps(np.local().e_hat());
    const DistRunResult r = solve_dist_padmm(np, steps, schedule_for(np, steps), {100000, 1e-12, 10},
                                             DistState::start(*g, BlockVector(3, 2)));
    EXPECT_EQ(r.status, RunStatus::converged);
    for (Index n = 0; n < 3; ++n) EXPECT_LE((r.state.x.block(n) - mean).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(DistPadmm, EdgeDualsStayAntisymmetric)
{
    auto g = graph_ptr(make_complete_graph(4));
    const NetworkProblem np = logistic_network(g, 3, 40, 3, 0.02);
    const AdmmSteps steps = default_batch_steps(np.local().e_hat());
    const InertialSchedule s = schedule_for(np, steps);
    Rng rng(4);
    DistState st = DistState::start(random_blocks(rng, 4, 3), antisymmetric_duals(rng, *g, 3));
    for (int k = 0; k < 100; ++k) {
        st = dist_padmm_step(np, steps, s, st);
        ASSERT_LE(antisymmetry_defect(st.y), 1e-14) << k;
    }
}

TEST(DistPadmm, RejectsNonAntisymmetricStart)
{
    auto g = graph_ptr(make_path_graph(2));
    const NetworkProblem np = trivial_network(g, 1);
    DistState st = DistState::start(*g, BlockVector(2, 1));
    st.y.block(0)[0] = 1.0;
    st.y_prev = st.y;
    EXPECT_THROW(dist_padmm_step(np, AdmmSteps::scalar(1, 0.5, 1.0), {}, st), ValidationError);
}

TEST(Pdapds, FullActivationMatchesDistPadmm)
{
    auto g = graph_ptr(make_ring_graph(5));
    const NetworkProblem np = logistic_network(g, 5, 50, 4, 0.01);
    const AdmmSteps steps = default_batch_steps(np.local().e_hat(), 1.9, 2.0);
    const InertialSchedule s = schedule_for(np, steps);
    const std::vector<std::size_t> all{0, 1, 2, 3, 4};
    Rng rng(6);
    for (bool printed : {false, true}) {
        const DistOptions opts{printed};
        DistState a = DistState::start(random_blocks(rng, 5, 4), antisymmetric_duals(rng, *g, 4));
        DistState b = a;
        for (int k = 0; k < 200; ++k) {
            a = dist_padmm_step(np, steps, s, a, opts);
            b = pdapds_step(np, steps, s, all, b, opts);
            ASSERT_LE((a.x.matrix() - b.x.matrix()).cwiseAbs().maxCoeff(), 1e-12) << k;
            ASSERT_LE((a.y.matrix() - b.y.matrix()).cwiseAbs().maxCoeff(), 1e-12) << k;
        }
    }
}

TEST(Pdapds, PrintedDualFormDiffersOnlyWhenPsiIsNotOne)
{
    auto g = graph_ptr(make_path_graph(3));
    const NetworkProblem np = logistic_network(g, 7, 30, 2, 0.01);
    Rng rng(8);
    const DistState st = DistState::start(random_blocks(rng, 3, 2), antisymmetric_duals(rng, *g, 2));
    const InertialSchedule s{0.0, 1.0, 1.0, 1.0};
    const AdmmSteps unit = default_batch_steps(np.local().e_hat(), 1.9, 1.0);
    EXPECT_EQ(pdapds_step(np, unit, s, {0, 1, 2}, st, {true}).y, pdapds_step(np, unit, s, {0, 1, 2}, st, {false}).y);
    const AdmmSteps other = default_batch_steps(np.local().e_hat(), 1.9, 3.0);
    EXPECT_NE(pdapds_step(np, other, s, {0, 1, 2}, st, {true}).y, pdapds_step(np, other, s, {0, 1, 2}, st, {false}).y);
}

TEST(Pdapds, FullActivationIsTheLiftedAdmmStep)
{
    // the network problem as min sum f_n(x_n) + g_n(x_n) + h(D x), D = EdgeOperator,
    // h = indicator of equal endpoint slots
    auto g = graph_ptr(make_ring_graph(4));
    const NetworkProblem np = logistic_network(g, 9, 40, 3, 0.05);
    const AdmmSteps steps = default_batch_steps(np.local().e_hat(), 1.9, 1.5);
    const Index slots = static_cast<Index>(2 * g->num_edges());
    const CompositeProblem lifted(std::make_shared<StackedSmooth>(np.local()), std::make_shared<StackedProx>(np.local()),
                                  std::make_shared<EdgePairConsensus>(static_cast<Index>(g->num_edges()), 3),
                                  std::make_shared<EdgeOperator>(g, 3));
    const AdmmSteps lifted_steps{steps.tau.replicated(slots), steps.psi.replicated(slots)};
    const InertialSchedule s = schedule_for(np, steps);
    Rng rng(10);
    DistState a = DistState::start(random_blocks(rng, 4, 3), BlockVector::from_flat(random_vector(rng, 3 * slots), slots));
    PrimalDualState b = PrimalDualState::start(a.x.flatten(), a.y.flatten());
    const AdmmGeometry geom(*lifted.d);
    for (int k = 0; k < 50; ++k) {
        a = pdapds_step(np, steps, s, {0, 1, 2, 3}, a);
        b = iadmm_step(lifted, geom, lifted_steps, s, b);
        ASSERT_LE((a.x.flatten() - b.x_curr).cwiseAbs().maxCoeff(), 1e-12) << k;
        ASSERT_LE((a.y.flatten() - b.y_curr).cwiseAbs().maxCoeff(), 1e-12) << k;
    }
}

TEST(Pdapds, ActiveSetOrderIsIrrelevant)
{
    auto g = graph_ptr(make_ring_graph(5));
    const NetworkProblem np = logistic_network(g, 11, 25, 2, 0.01);
    const AdmmSteps steps = default_batch_steps(np.local().e_hat());
    const InertialSchedule s = schedule_for(np, steps);
    Rng rng(12);
    const DistState st{random_blocks(rng, 5, 2), random_blocks(rng, 5, 2),
                       BlockVector::from_flat(random_vector(rng, 20), 10),
                       BlockVector::from_flat(random_vector(rng, 20), 10), 3};
    const DistState a = pdapds_step(np, steps, s, {1, 3, 4}, st);
    const DistState b = pdapds_step(np, steps, s, {4, 1, 3}, st);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.y, b.y);
}

TEST(Pdapds, InactiveAgentsCarryExtrapolatedValues)
{
    auto g = graph_ptr(make_path_graph(3));
    const NetworkProblem np = logistic_network(g, 13, 30, 2, 0.01);
    const AdmmSteps steps = default_batch_steps(np.local().e_hat());
    const InertialSchedule s{0.25, 0.01, 1.0, 0.2};
    Rng rng(14);
    const DistState st{random_blocks(rng, 3, 2), random_blocks(rng, 3, 2), BlockVector::from_flat(random_vector(rng, 8), 4),
                       BlockVector::from_flat(random_vector(rng, 8), 4), 3};
    const DistState next = pdapds_step(np, steps, s, {1}, st);
    for (Index n : {0, 2}) {
        EXPECT_EQ(Vector(next.x.block(n)), Vector(st.x.block(n) + 0.25 * (st.x.block(n) - st.x_prev.block(n))));
    }
    // node 1 is hi on edge {0,1} and lo on edge {1,2}: it owns slots 1 and 2
    for (Index slot : {0, 3}) {
        EXPECT_EQ(Vector(next.y.block(slot)), Vector(st.y.block(slot) + 0.25 * (st.y.block(slot) - st.y_prev.block(slot))));
    }
    for (Index slot : {1, 2}) {
        EXPECT_NE(Vector(next.y.block(slot)), Vector(st.y.block(slot) + 0.25 * (st.y.block(slot) - st.y_prev.block(slot))));
    }
}

TEST(Pdapds, MatchesEngineOnNetworkOperator)
{
    auto g = graph_ptr(make_ring_graph(4));
    const NetworkProblem np = logistic_network(g, 15, 32, 2, 0.02);
    const AdmmSteps steps = default_batch_steps(np.local().e_hat());
    const NetworkOperator op(np, steps);
    const InertialSchedule s = schedule_for(np, steps);
    const auto act = ActivationSchedule::uniform_singletons(4);
    Rng r1(3), r2(3), init(16);
    DistState st = DistState::start(random_blocks(init, 4, 2), BlockVector::from_flat(random_vector(init, 16), 8));
    KMState km = km_start(op.pack(st.x, st.y), op.pack(st.x, st.y));
    for (int k = 0; k < 100; ++k) {
        st = pdapds_step(np, steps, s, act, r1, st);
        km = km_step(op, km, s, act.draw(r2));
        ASSERT_EQ(op.pack(st.x, st.y), km.x_curr) << k;
    }
}

TEST(Pdapds, SingletonActivationOnPathReachesConsensus)
{
    // every consensual point is optimal here and one-sided updates do not
    // conserve x_1 + x_2, so the limit depends on the activation sequence
    auto g = graph_ptr(make_path_graph(2));
    const NetworkProblem np = trivial_network(g, 1);
    const AdmmSteps steps = AdmmSteps::scalar(1, 0.5, 1.0);
    BlockVector x0(2, 1);
    x0.block(0)[0] = 1.0;
    x0.block(1)[0] = 3.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        const DistRunResult r =
            solve_pdapds(np, steps, make_schedule(0.3, 0.01, kNaN, 0.9), ActivationSchedule::uniform_singletons(2), rng,
                         {100000, 1e-13, 10}, DistState::start(*g, x0));
        EXPECT_EQ(r.status, RunStatus::converged);
        EXPECT_LE(r.consensus_error, 1e-10) << seed;
        EXPECT_LE(r.fixed_point_residual, 1e-13) << seed;
    }
}

TEST(Pdapds, RingLogisticReachesReference)
{
    auto g = graph_ptr(make_ring_graph(5));
    const NetworkProblem np = logistic_network(g, 17, 60, 5, 0.01);
    const AdmmSteps steps = default_batch_steps(np.local().e_hat());
    const InertialSchedule s = schedule_for(np, steps);
    const DistRunResult sync = solve_dist_padmm(np, steps, s, {200000, 1e-12, 50}, DistState::start(*g, BlockVector(5, 5)));
    ASSERT_EQ(sync.status, RunStatus::converged);
    EXPECT_LE(sync.consensus_error, 1e-8);
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        Rng rng(seed);
        const DistRunResult r = solve_pdapds(np, steps, s, ActivationSchedule::uniform_singletons(5), rng,
                                             {400000, 1e-10, 100}, DistState::start(*g, BlockVector(5, 5)));
        EXPECT_EQ(r.status, RunStatus::converged) << seed;
        EXPECT_LE(r.consensus_error, 1e-6) << seed;
        EXPECT_NEAR(r.objective, sync.objective, 1e-8) << seed;
    }
}

TEST(DistTrace, ActiveSetColumnAndDeterminism)
{
    auto g = graph_ptr(make_ring_graph(4));
    const NetworkProblem np = logistic_network(g, 19, 20, 2, 0.01);
    const AdmmSteps steps = default_batch_steps(np.local().e_hat());
    const ActivationSchedule act(4, {{0, 2}, {1, 3}, {3}}, {0.4, 0.4, 0.2});
    auto trace = [&](std::uint64_t seed) {
        std::ostringstream os;
        Rng rng(seed);
        solve_pdapds(np, steps, schedule_for(np, steps), act, rng, {100, 0.0, 1000},
                     DistState::start(*g, BlockVector(4, 2)), &os);
        return os.str();
    };
    const std::string a = trace(5);
    EXPECT_EQ(a.substr(0, a.find('\n')), "k,active_set,objective,consensus_error,residual");
    EXPECT_TRUE(a.find(",1;3,") != std::string::npos || a.find(",2;4,") != std::string::npos);
    EXPECT_EQ(a, trace(5));
    EXPECT_EQ(format_active_set({0, 4}), "1;5");
}
