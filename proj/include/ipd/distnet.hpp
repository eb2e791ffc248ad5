#pragma once

#include <cmath>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ipd/graph.hpp"
#include "ipd/km_engine.hpp"
#include "ipd/linops.hpp"
#include "ipd/minibatch.hpp"
#include "ipd/trace.hpp"

namespace ipd {

/// Activation law over subsets of agents.
using ActivationSchedule = CoordinateSampler;

/// Edge duals of a graph with |E| edges: a q x 2|E| BlockVector where column
/// 2e holds y_e(lo) and column 2e+1 holds y_e(hi).
inline std::size_t owner_slot(const AgentGraph::Incidence& inc) { return 2 * inc.edge + (inc.is_lo ? 0 : 1); }
inline std::size_t partner_slot(const AgentGraph::Incidence& inc) { return 2 * inc.edge + (inc.is_lo ? 1 : 0); }

inline BlockVector zero_edge_duals(const AgentGraph& g, Index q)
{
    return BlockVector(static_cast<Index>(2 * g.num_edges()), q);
}

/// max_e ||y_e(lo) + y_e(hi)||_inf.
inline double antisymmetry_defect(const BlockVector& y)
{
    double worst = 0.0;
    for (Index e = 0; 2 * e + 1 < y.num_blocks(); ++e) {
        worst = std::max(worst, (y.block(2 * e) + y.block(2 * e + 1)).cwiseAbs().maxCoeff());
    }
    return worst;
}

/// Per-agent primal blocks and per-edge dual slots, with previous copies.
struct DistState
{
    BlockVector x_prev;
    BlockVector x;
    BlockVector y_prev;
    BlockVector y;
    long k = 1;

    static DistState start(const BlockVector& x0, const BlockVector& y0) { return {x0, x0, y0, y0, 1}; }
    static DistState start(const AgentGraph& g, const BlockVector& x0)
    {
        const BlockVector y0 = zero_edge_duals(g, x0.block_dim());
        return {x0, x0, y0, y0, 1};
    }
};

/// Agents' local objectives on a connected network. Agent n owns f_n, g_n.
class NetworkProblem
{
public:
    NetworkProblem(std::shared_ptr<const AgentGraph> graph, BatchedProblem local)
        : graph_(std::move(graph)), local_(std::move(local))
    {
        if (!graph_) throw ValidationError("NetworkProblem: null graph");
        if (graph_->num_nodes() != local_.num_batches()) {
            throw ValidationError("NetworkProblem: " + std::to_string(local_.num_batches()) + " local objectives for " +
                                  std::to_string(graph_->num_nodes()) + " agents");
        }
    }

    const AgentGraph& graph() const noexcept { return *graph_; }
    std::shared_ptr<const AgentGraph> graph_ptr() const noexcept { return graph_; }
    const BatchedProblem& local() const noexcept { return local_; }
    std::size_t num_agents() const noexcept { return graph_->num_nodes(); }
    Index dim() const noexcept { return local_.dim(); }

private:
    std::shared_ptr<const AgentGraph> graph_;
    BatchedProblem local_;
};

enum class DistAlgorithm
{
    /// Synchronous update, relies on antisymmetric edge duals.
    padmm,
    /// Asynchronous update, uses both endpoints' dual slots.
    pdapds,
};

struct DistOptions
{
    /// Drop Psi^{-1} from the dual update (y~ = ... + (xi_n - xi_m)/2), as
    /// the algorithm listings print it. Off by default.
    bool printed_dual_update = false;
};

namespace detail {

inline void require_dist_state(const NetworkProblem& np, const DistState& st)
{
    const auto nodes = static_cast<long>(np.num_agents());
    const auto slots = static_cast<long>(2 * np.graph().num_edges());
    for (const BlockVector* b : {&st.x_prev, &st.x}) {
        require_dims(nodes, b->num_blocks(), "network state x blocks");
        require_dims(np.dim(), b->block_dim(), "network state x block dim");
    }
    for (const BlockVector* b : {&st.y_prev, &st.y}) {
        require_dims(slots, b->num_blocks(), "network state edge dual slots");
        require_dims(np.dim(), b->block_dim(), "network state edge dual dim");
    }
}

struct AgentUpdate
{
    Vector x;
    /// One entry per incidence of the agent, in adjacency order.
    std::vector<Vector> y;
};

/// Agent n's update from the snapshot (xi, eta).
inline AgentUpdate agent_map(const NetworkProblem& np, const AdmmSteps& steps, DistAlgorithm alg,
                             const DistOptions& opts, std::size_t n, const BlockVector& xi, const BlockVector& eta)
{
    const auto& nbrs = np.graph().neighbors(n);
    const double d = static_cast<double>(nbrs.size());
    const Vector& tau = steps.tau.values();
    const Vector inv_psi = steps.psi.values().cwiseInverse();
    const Index b = static_cast<Index>(n);
    const Vector xi_n = xi.block(b);

    AgentUpdate out;
    out.y.reserve(nbrs.size());
    Vector neighbor_sum = Vector::Zero(np.dim());
    for (const auto& inc : nbrs) {
        const Vector xi_m = xi.block(static_cast<Index>(inc.neighbor));
        const Vector own = eta.block(static_cast<Index>(owner_slot(inc)));
        const Vector other = eta.block(static_cast<Index>(partner_slot(inc)));
        Vector diff = 0.5 * (xi_n - xi_m);
        if (!opts.printed_dual_update) diff = inv_psi.cwiseProduct(diff);
        if (alg == DistAlgorithm::padmm) {
            out.y.push_back(own + diff);
            neighbor_sum += inv_psi.cwiseProduct(xi_m) - own;
        } else {
            out.y.push_back(0.5 * (own - other) + diff);
            neighbor_sum += inv_psi.cwiseProduct(xi_m) + other;
        }
    }
    const Vector t_over_d = tau / d;
    const Vector arg = xi_n - tau.cwiseProduct(inv_psi.cwiseProduct(xi_n)) -
                       t_over_d.cwiseProduct(np.local().f(n).grad(xi_n)) + t_over_d.cwiseProduct(neighbor_sum);
    out.x = np.local().g(n).prox(DiagonalMap(t_over_d), arg);
    return out;
}

inline double dist_residual(const NetworkProblem& np, const AdmmSteps& steps, DistAlgorithm alg,
                            const DistOptions& opts, const BlockVector& x, const BlockVector& y)
{
    double sq = 0.0;
    for (std::size_t n = 0; n < np.num_agents(); ++n) {
        const AgentUpdate t = agent_map(np, steps, alg, opts, n, x, y);
        sq += (t.x - x.block(static_cast<Index>(n))).squaredNorm();
        const auto& nbrs = np.graph().neighbors(n);
        for (std::size_t i = 0; i < nbrs.size(); ++i) {
            sq += (t.y[i] - y.block(static_cast<Index>(owner_slot(nbrs[i])))).squaredNorm();
        }
    }
    return std::sqrt(sq);
}

inline DistState dist_step_impl(const NetworkProblem& np, const AdmmSteps& steps, const InertialSchedule& sched,
                                DistAlgorithm alg, const DistOptions& opts, const std::vector<std::size_t>& active,
                                const DistState& st)
{
    const double a = sched.alpha_at(st.k);
    const BlockVector xi = extrapolate(st.x, st.x_prev, a);
    const BlockVector eta = extrapolate(st.y, st.y_prev, a);
    DistState next{st.x, xi, st.y, eta, st.k + 1};
    for (auto n : active) {
        if (n >= np.num_agents()) throw ValidationError("network step: agent index out of range");
        const AgentUpdate t = agent_map(np, steps, alg, opts, n, xi, eta);
        const Index b = static_cast<Index>(n);
        next.x.block(b) = relax(xi.block(b), t.x, sched.rho);
        const auto& nbrs = np.graph().neighbors(n);
        for (std::size_t i = 0; i < nbrs.size(); ++i) {
            const Index s = static_cast<Index>(owner_slot(nbrs[i]));
            next.y.block(s) = relax(eta.block(s), t.y[i], sched.rho);
        }
    }
    return next;
}

inline bool duals_antisymmetric(const BlockVector& y)
{
    const double scale = 1.0 + y.matrix().cwiseAbs().maxCoeff();
    return antisymmetry_defect(y) <= 1e-12 * scale;
}

inline std::vector<std::size_t> all_agents(std::size_t n)
{
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

} // namespace detail

/// Synchronous distributed PADMM+ step. The edge duals must be antisymmetric.
inline DistState dist_padmm_step(const NetworkProblem& np, const AdmmSteps& steps, const InertialSchedule& sched,
                                 const DistState& st, const DistOptions& opts = {})
{
    detail::require_dist_state(np, st);
    if (!detail::duals_antisymmetric(st.y) || !detail::duals_antisymmetric(st.y_prev)) {
        throw ValidationError("distributed PADMM+: edge duals must satisfy y_e(n) = -y_e(m) at start");
    }
    return detail::dist_step_impl(np, steps, sched, DistAlgorithm::padmm, opts, detail::all_agents(np.num_agents()),
                                  st);
}

/// Asynchronous step with an explicit active set. Every active agent reads
/// the pre-tick snapshot, so the order inside `active` is irrelevant.
inline DistState pdapds_step(const NetworkProblem& np, const AdmmSteps& steps, const InertialSchedule& sched,
                             const std::vector<std::size_t>& active, const DistState& st, const DistOptions& opts = {})
{
    detail::require_dist_state(np, st);
    if (active.empty()) throw ValidationError("PDAPDS: empty active set");
    return detail::dist_step_impl(np, steps, sched, DistAlgorithm::pdapds, opts, active, st);
}

inline DistState pdapds_step(const NetworkProblem& np, const AdmmSteps& steps, const InertialSchedule& sched,
                             const ActivationSchedule& activation, Rng& rng, const DistState& st,
                             const DistOptions& opts = {})
{
    if (activation.num_blocks() != np.num_agents()) {
        throw ValidationError("PDAPDS: activation covers " + std::to_string(activation.num_blocks()) +
                              " agents, network has " + std::to_string(np.num_agents()));
    }
    return pdapds_step(np, steps, sched, activation.draw(rng), st, opts);
}

/// The asynchronous network operator as a block operator: block n is
/// [x_n; y_e(n) for each incident edge e in adjacency order].
class NetworkOperator final : public BlockOperator
{
public:
    NetworkOperator(const NetworkProblem& np, AdmmSteps steps, DistOptions opts = {})
        : BlockOperator(block_sizes(np)), np_(np), steps_(std::move(steps)), opts_(opts)
    {
    }

    Vector pack(const BlockVector& x, const BlockVector& y) const
    {
        Vector z(dim());
        const Index q = np_.dim();
        for (std::size_t n = 0; n < np_.num_agents(); ++n) {
            Index off = block_offset(n);
            z.segment(off, q) = x.block(static_cast<Index>(n));
            for (const auto& inc : np_.graph().neighbors(n)) {
                off += q;
                z.segment(off, q) = y.block(static_cast<Index>(owner_slot(inc)));
            }
        }
        return z;
    }

    std::pair<BlockVector, BlockVector> unpack(const Vector& z) const
    {
        const Index q = np_.dim();
        BlockVector x(static_cast<Index>(np_.num_agents()), q);
        BlockVector y = zero_edge_duals(np_.graph(), q);
        for (std::size_t n = 0; n < np_.num_agents(); ++n) {
            Index off = block_offset(n);
            x.block(static_cast<Index>(n)) = z.segment(off, q);
            for (const auto& inc : np_.graph().neighbors(n)) {
                off += q;
                y.block(static_cast<Index>(owner_slot(inc))) = z.segment(off, q);
            }
        }
        return {x, y};
    }

    Vector apply(const Vector& w) const override
    {
        detail::require_dims(dim(), w.size(), "NetworkOperator");
        Vector out(dim());
        const auto [x, y] = unpack(w);
        for (std::size_t n = 0; n < np_.num_agents(); ++n) out.segment(block_offset(n), block_size(n)) = agent(n, x, y);
        return out;
    }

    Vector apply_block(std::size_t j, const Vector& w) const override
    {
        detail::require_dims(dim(), w.size(), "NetworkOperator");
        const auto [x, y] = unpack(w);
        return agent(j, x, y);
    }

private:
    static std::vector<Index> block_sizes(const NetworkProblem& np)
    {
        std::vector<Index> sizes;
        for (std::size_t n = 0; n < np.num_agents(); ++n) {
            sizes.push_back(static_cast<Index>(1 + np.graph().degree(n)) * np.dim());
        }
        return sizes;
    }

    Vector agent(std::size_t n, const BlockVector& x, const BlockVector& y) const
    {
        const detail::AgentUpdate t = detail::agent_map(np_, steps_, DistAlgorithm::pdapds, opts_, n, x, y);
        const Index q = np_.dim();
        Vector out(block_size(n));
        out.head(q) = t.x;
        for (std::size_t i = 0; i < t.y.size(); ++i) out.segment(static_cast<Index>(i + 1) * q, q) = t.y[i];
        return out;
    }

    const NetworkProblem& np_;
    AdmmSteps steps_;
    DistOptions opts_;
};

/// "1;3;4": 1-indexed agents, semicolon separated.
inline std::string format_active_set(const std::vector<std::size_t>& active)
{
    std::ostringstream os;
    for (std::size_t i = 0; i < active.size(); ++i) os << (i ? ";" : "") << active[i] + 1;
    return os.str();
}

struct DistTraceRow
{
    long k;
    std::string active_set;
    double objective;
    double consensus_error;
    double residual;
};

struct DistRunResult
{
    RunStatus status = RunStatus::max_iters;
    DistState state;
    long iterations = 0;
    double fixed_point_residual = 0.0;
    /// Objective at the agent average xbar.
    double objective = 0.0;
    double consensus_error = 0.0;
    std::vector<DistTraceRow> trajectory;
};

namespace detail {

template <typename Pick>
DistRunResult run_dist_loop(const NetworkProblem& np, const AdmmSteps& steps, const InertialSchedule& sched,
                            DistAlgorithm alg, const DistOptions& opts, const StopCriteria& stop, DistState start,
                            std::ostream* sink, bool keep_trajectory, const Pick& pick)
{
    require_dist_state(np, start);
    validate_batch_steps(np.local().e_hat(), steps);
    CsvWriter csv(sink, {"k", "active_set", "objective", "consensus_error", "residual"});
    DistRunResult result{RunStatus::max_iters, std::move(start)};
    auto finish = [&](RunStatus s) {
        result.status = s;
        result.objective = np.local().objective(result.state.x.mean());
        result.consensus_error = consensus_error(result.state.x);
        return result;
    };
    for (long it = 1; it <= stop.max_iters; ++it) {
        const std::vector<std::size_t>& active = pick();
        DistState next = dist_step_impl(np, steps, sched, alg, opts, active, result.state);
        const double res = std::sqrt((next.x.matrix() - result.state.x.matrix()).squaredNorm() +
                                     (next.y.matrix() - result.state.y.matrix()).squaredNorm());
        result.state = std::move(next);
        result.iterations = it;
        if (!result.state.x.matrix().allFinite() || !result.state.y.matrix().allFinite()) {
            throw Error("network solver: non-finite iterate");
        }
        if (keep_trajectory || csv.enabled()) {
            const double obj = np.local().objective(result.state.x.mean());
            const double ce = consensus_error(result.state.x);
            const std::string set = format_active_set(active);
            if (keep_trajectory) result.trajectory.push_back({result.state.k, set, obj, ce, res});
            csv.row(result.state.k, set, obj, ce, res);
        }
        if (res <= stop.residual_tol || it % stop.check_every == 0) {
            result.fixed_point_residual = dist_residual(np, steps, alg, opts, result.state.x, result.state.y);
            if (result.fixed_point_residual <= stop.residual_tol) return finish(RunStatus::converged);
        }
    }
    result.fixed_point_residual = dist_residual(np, steps, alg, opts, result.state.x, result.state.y);
    return finish(result.fixed_point_residual <= stop.residual_tol ? RunStatus::converged : RunStatus::max_iters);
}

} // namespace detail

inline DistRunResult solve_dist_padmm(const NetworkProblem& np, const AdmmSteps& steps, const InertialSchedule& sched,
                                      const StopCriteria& stop, DistState start, std::ostream* sink = nullptr,
                                      bool keep_trajectory = false, const DistOptions& opts = {})
{
    if (!detail::duals_antisymmetric(start.y) || !detail::duals_antisymmetric(start.y_prev)) {
        throw ValidationError("distributed PADMM+: edge duals must satisfy y_e(n) = -y_e(m) at start");
    }
    const std::vector<std::size_t> all = detail::all_agents(np.num_agents());
    auto pick = [&]() -> const std::vector<std::size_t>& { return all; };
    return detail::run_dist_loop(np, steps, sched, DistAlgorithm::padmm, opts, stop, std::move(start), sink,
                                 keep_trajectory, pick);
}

inline DistRunResult solve_pdapds(const NetworkProblem& np, const AdmmSteps& steps, const InertialSchedule& sched,
                                  const ActivationSchedule& activation, Rng& rng, const StopCriteria& stop,
                                  DistState start, std::ostream* sink = nullptr, bool keep_trajectory = false,
                                  const DistOptions& opts = {})
{
    if (activation.num_blocks() != np.num_agents()) {
        throw ValidationError("PDAPDS: activation covers " + std::to_string(activation.num_blocks()) +
                              " agents, network has " + std::to_string(np.num_agents()));
    }
    auto pick = [&]() -> const std::vector<std::size_t>& { return activation.draw(rng); };
    return detail::run_dist_loop(np, steps, sched, DistAlgorithm::pdapds, opts, stop, std::move(start), sink,
                                 keep_trajectory, pick);
}

} // namespace ipd
