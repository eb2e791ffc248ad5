#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <ostream>
#include <utility>
#include <vector>

#include "ipd/km_engine.hpp"
#include "ipd/linops.hpp"
#include "ipd/pd_algorithms.hpp"
#include "ipd/prox.hpp"
#include "ipd/smooth.hpp"
#include "ipd/trace.hpp"

namespace ipd {

/// sum_n f_n(x) + g_n(x) over a shared x in R^q. Ê is the entrywise max of
/// the batch cocoercivity diagonals, so every grad f_n is cocoercive w.r.t.
/// Ê^{-1}.
class BatchedProblem
{
public:
    BatchedProblem(std::vector<SmoothPtr> f, std::vector<ProxPtr> g) : f_(std::move(f)), g_(std::move(g))
    {
        if (f_.empty() || f_.size() != g_.size()) throw ValidationError("BatchedProblem: need N >= 1 (f_n, g_n) pairs");
        q_ = f_[0] ? f_[0]->dim() : 0;
        if (q_ < 1) throw ValidationError("BatchedProblem: empty dimension");
        e_hat_ = Vector::Zero(q_);
        for (std::size_t n = 0; n < f_.size(); ++n) {
            if (!f_[n] || !g_[n]) throw ValidationError("BatchedProblem: null oracle");
            detail::require_dims(q_, f_[n]->dim(), "BatchedProblem f_n");
            detail::require_dims(q_, g_[n]->dim(), "BatchedProblem g_n");
            const Vector e = f_[n]->cocoercivity_diag();
            detail::require_dims(q_, e.size(), "BatchedProblem cocoercivity");
            if (!e.allFinite() || (e.array() < 0.0).any()) throw ValidationError("BatchedProblem: bad cocoercivity");
            e_hat_ = e_hat_.cwiseMax(e);
        }
    }

    std::size_t num_batches() const noexcept { return f_.size(); }
    Index dim() const noexcept { return q_; }
    const SmoothOracle& f(std::size_t n) const { return *f_.at(n); }
    const ProxOracle& g(std::size_t n) const { return *g_.at(n); }
    const Vector& e_hat() const noexcept { return e_hat_; }

    /// sum_n f_n(x) + g_n(x).
    double objective(const Vector& x) const
    {
        double v = 0.0;
        for (std::size_t n = 0; n < f_.size(); ++n) v += f_[n]->value(x) + g_[n]->value(x);
        return v;
    }

private:
    std::vector<SmoothPtr> f_;
    std::vector<ProxPtr> g_;
    Index q_ = 0;
    Vector e_hat_;
};

/// Contiguous chunks of {0, ..., m-1}; the first m mod N chunks get one
/// extra row. Returns (start, count) pairs.
inline std::vector<std::pair<Index, Index>> batch_ranges(Index m, std::size_t n)
{
    if (n < 1) throw ValidationError("batch split: need at least one batch");
    if (static_cast<Index>(n) > m) {
        throw ValidationError("batch split: " + std::to_string(n) + " batches for " + std::to_string(m) + " samples");
    }
    std::vector<std::pair<Index, Index>> out;
    const Index base = m / static_cast<Index>(n);
    const Index extra = m % static_cast<Index>(n);
    Index start = 0;
    for (std::size_t b = 0; b < n; ++b) {
        const Index count = base + (static_cast<Index>(b) < extra ? 1 : 0);
        out.emplace_back(start, count);
        start += count;
    }
    return out;
}

/// l1-logistic regression split over N batches:
///   f_n(x) = (1/m) sum_{i in W_n} log(1 + exp(-y_i a_i^T x)),  g_n = (lambda/N) ||x||_1.
inline BatchedProblem split_problem(const SparseMap& a, const Vector& labels, double lambda, std::size_t n)
{
    detail::require_dims(a.rows(), labels.size(), "split_problem labels");
    if (lambda < 0.0) throw ValidationError("split_problem: lambda must be nonnegative");
    const double inv_m = 1.0 / static_cast<double>(a.rows());
    std::vector<SmoothPtr> f;
    std::vector<ProxPtr> g;
    for (const auto& [start, count] : batch_ranges(a.rows(), n)) {
        auto rows = std::make_shared<SparseMap>(a.row_block(start, count));
        f.push_back(std::make_shared<LogisticLoss>(rows, labels.segment(start, count), inv_m));
        g.push_back(std::make_shared<L1Norm>(a.cols(), lambda / static_cast<double>(n)));
    }
    return BatchedProblem(std::move(f), std::move(g));
}

/// LASSO split: f_n(x) = (1/(2m)) ||A_n x - b_n||^2,  g_n = (lambda/N) ||x||_1.
inline BatchedProblem split_lasso(const SparseMap& a, const Vector& b, double lambda, std::size_t n)
{
    detail::require_dims(a.rows(), b.size(), "split_lasso targets");
    if (lambda < 0.0) throw ValidationError("split_lasso: lambda must be nonnegative");
    const double inv_m = 1.0 / static_cast<double>(a.rows());
    std::vector<SmoothPtr> f;
    std::vector<ProxPtr> g;
    for (const auto& [start, count] : batch_ranges(a.rows(), n)) {
        auto rows = std::make_shared<SparseMap>(a.row_block(start, count));
        f.push_back(std::make_shared<LeastSquaresLoss>(rows, b.segment(start, count), inv_m));
        g.push_back(std::make_shared<L1Norm>(a.cols(), lambda / static_cast<double>(n)));
    }
    return BatchedProblem(std::move(f), std::move(g));
}

/// max_n ||x_n - xbar||_2.
inline double consensus_error(const BlockVector& x)
{
    const Vector mean = x.mean();
    double worst = 0.0;
    for (Index n = 0; n < x.num_blocks(); ++n) worst = std::max(worst, (x.block(n) - mean).norm());
    return worst;
}

/// Per-coordinate steps (T, Psi) on R^q, replicated over the batches.
/// Requires T^{-1} - Ê/2 > 0 and ||(T^{-1} - Ê/2)^{-1/2} Psi^{-1/2}|| < 1,
/// i.e. 1/psi_j < 1/tau_j - ê_j/2.
inline StepCertificate validate_batch_steps(const Vector& e_hat, const AdmmSteps& steps)
{
    detail::require_dims(e_hat.size(), steps.tau.size(), "batch steps tau");
    detail::require_dims(e_hat.size(), steps.psi.size(), "batch steps psi");
    const Vector slack = steps.tau.values().cwiseInverse() - 0.5 * e_hat;
    const double min_slack = slack.minCoeff();
    if (!(min_slack > 0.0)) throw ValidationError(detail::margin_message("T^{-1} - Ê/2 > 0", min_slack));
    const double margin = 1.0 - slack.cwiseInverse().cwiseProduct(steps.psi.values().cwiseInverse()).maxCoeff();
    if (!(margin > 0.0)) {
        throw ValidationError(detail::margin_message("||(T^{-1} - Ê/2)^{-1/2} Psi^{-1/2}|| < 1", margin));
    }
    return {"T^{-1} - Ê/2 > 0 and ||(T^{-1} - Ê/2)^{-1/2} Psi^{-1/2}|| < 1", std::min(min_slack, margin), false};
}

/// tau_j = 1/(ê_j/gamma + r), psi_j = 1/r: the diagonal preconditioner of the
/// identity coupling on R^q.
inline AdmmSteps default_batch_steps(const Vector& e_hat, double gamma = 1.9, double r = 1.0, double s = 1.0)
{
    const DiagPreconditioner pc = build_diag_preconditioner(SparseMap::identity(e_hat.size()), e_hat, gamma, r, s);
    return {pc.tau, pc.psi};
}

/// Averagedness constant of the minibatch operator in the metric
/// [[T^{-1}, I], [I, Psi]]: 1/(2 - 1/(2 kappa)), kappa = min_j (1/tau_j - 1/psi_j)/ê_j.
inline double minibatch_averaged_constant(const Vector& e_hat, const AdmmSteps& steps)
{
    double kappa = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < e_hat.size(); ++j) {
        if (e_hat[j] > 0.0) kappa = std::min(kappa, (1.0 / steps.tau[j] - 1.0 / steps.psi[j]) / e_hat[j]);
    }
    if (std::isinf(kappa)) return 0.5;
    if (!(kappa > 0.5)) throw ValidationError("minibatch: step sizes violate T^{-1} - Psi^{-1} > Ê/2");
    return 1.0 / (2.0 - 1.0 / (2.0 * kappa));
}

/// ||(x, y)||^2 in the metric [[T^{-1}, I], [I, Psi]], summed over batches.
inline double minibatch_metric_sq(const AdmmSteps& steps, const BlockVector& x, const BlockVector& y)
{
    double v = 0.0;
    for (Index n = 0; n < x.num_blocks(); ++n) {
        const auto xn = x.block(n);
        const auto yn = y.block(n);
        v += xn.cwiseProduct(xn).cwiseQuotient(steps.tau.values()).sum() + 2.0 * xn.dot(yn) +
             yn.cwiseProduct(yn).cwiseProduct(steps.psi.values()).sum();
    }
    return v;
}

/// (x^k, x^{k-1}, y^k, y^{k-1}) with one block per batch.
struct MinibatchState
{
    BlockVector x_prev;
    BlockVector x;
    BlockVector y_prev;
    BlockVector y;
    long k = 1;

    static MinibatchState start(const BlockVector& x0, const BlockVector& y0) { return {x0, x0, y0, y0, 1}; }
    static MinibatchState zeros(std::size_t n, Index q)
    {
        BlockVector z(static_cast<Index>(n), q);
        return {z, z, z, z, 1};
    }
};

namespace detail {

inline void require_batch_state(const BatchedProblem& bp, const MinibatchState& st)
{
    for (const BlockVector* b : {&st.x_prev, &st.x, &st.y_prev, &st.y}) {
        require_dims(static_cast<long>(bp.num_batches()), b->num_blocks(), "minibatch state blocks");
        require_dims(bp.dim(), b->block_dim(), "minibatch state block dim");
    }
}

inline BlockVector extrapolate(const BlockVector& x, const BlockVector& x_prev, double a)
{
    return BlockVector(Matrix(x.matrix() + a * (x.matrix() - x_prev.matrix())));
}

/// Batch n of the minibatch operator at (xi, eta):
///   y~_n = eta_n - eta_bar + Psi^{-1}(xi_n - xi_bar)
///   x~_n = prox_{T g_n}[xi_n - 2 T Psi^{-1} xi_n - T grad f_n(xi_n) - T eta_n + 2 T (Psi^{-1} xi_bar + eta_bar)]
/// With eta_bar = 0 this is the synchronous minibatch update.
inline PrimalDualPair batch_map(const BatchedProblem& bp, const AdmmSteps& steps, std::size_t n, const Vector& xi_n,
                                const Vector& eta_n, const Vector& xi_bar, const Vector& eta_bar)
{
    const Vector& tau = steps.tau.values();
    const Vector& psi = steps.psi.values();
    PrimalDualPair out;
    out.y = eta_n - eta_bar + (xi_n - xi_bar).cwiseQuotient(psi);
    const Vector arg = xi_n - 2.0 * tau.cwiseProduct(xi_n.cwiseQuotient(psi)) - tau.cwiseProduct(bp.f(n).grad(xi_n)) -
                       tau.cwiseProduct(eta_n) + 2.0 * tau.cwiseProduct(xi_bar.cwiseQuotient(psi) + eta_bar);
    out.x = bp.g(n).prox(steps.tau, arg);
    return out;
}

inline bool mean_is_zero(const BlockVector& y)
{
    const double scale = 1.0 + y.matrix().cwiseAbs().maxCoeff();
    return y.mean().cwiseAbs().maxCoeff() <= 1e-10 * scale;
}

/// ||T(x, y) - (x, y)|| of the full (all batches, eta_bar-aware) operator.
inline double minibatch_residual(const BatchedProblem& bp, const AdmmSteps& steps, const BlockVector& x,
                                 const BlockVector& y, bool with_eta_bar)
{
    const Vector xbar = x.mean();
    const Vector ybar = with_eta_bar ? y.mean() : Vector(Vector::Zero(bp.dim()));
    double sq = 0.0;
    for (std::size_t n = 0; n < bp.num_batches(); ++n) {
        const Index b = static_cast<Index>(n);
        const PrimalDualPair t = batch_map(bp, steps, n, x.block(b), y.block(b), xbar, ybar);
        sq += (t.x - x.block(b)).squaredNorm() + (t.y - y.block(b)).squaredNorm();
    }
    return std::sqrt(sq);
}

} // namespace detail

/// Synchronous minibatch PADMM+ step over all batches. The dual average must
/// start (and therefore stay) at zero.
inline MinibatchState minibatch_padmm_step(const BatchedProblem& bp, const AdmmSteps& steps,
                                           const InertialSchedule& sched, const MinibatchState& st)
{
    detail::require_batch_state(bp, st);
    if (!detail::mean_is_zero(st.y) || !detail::mean_is_zero(st.y_prev)) {
        throw ValidationError("minibatch PADMM+: the dual average must be zero at start");
    }
    const double a = sched.alpha_at(st.k);
    const BlockVector xi = detail::extrapolate(st.x, st.x_prev, a);
    const BlockVector eta = detail::extrapolate(st.y, st.y_prev, a);
    const Vector xi_bar = xi.mean();
    const Vector zero = Vector::Zero(bp.dim());
    MinibatchState next{st.x, xi, st.y, eta, st.k + 1};
    for (std::size_t n = 0; n < bp.num_batches(); ++n) {
        const Index b = static_cast<Index>(n);
        const PrimalDualPair t = detail::batch_map(bp, steps, n, xi.block(b), eta.block(b), xi_bar, zero);
        next.x.block(b) = detail::relax(xi.block(b), t.x, sched.rho);
        next.y.block(b) = detail::relax(eta.block(b), t.y, sched.rho);
    }
    return next;
}

/// Stochastic minibatch step: batches in `active` are refreshed with the
/// eta_bar-aware update, all others carry the extrapolated (xi_n, eta_n).
inline MinibatchState psmpds_step(const BatchedProblem& bp, const AdmmSteps& steps, const InertialSchedule& sched,
                                  const std::vector<std::size_t>& active, const MinibatchState& st)
{
    detail::require_batch_state(bp, st);
    if (active.empty()) throw ValidationError("PSMPDS: empty active set");
    const double a = sched.alpha_at(st.k);
    const BlockVector xi = detail::extrapolate(st.x, st.x_prev, a);
    const BlockVector eta = detail::extrapolate(st.y, st.y_prev, a);
    const Vector xi_bar = xi.mean();
    const Vector eta_bar = eta.mean();
    MinibatchState next{st.x, xi, st.y, eta, st.k + 1};
    for (auto n : active) {
        if (n >= bp.num_batches()) throw ValidationError("PSMPDS: batch index out of range");
        const Index b = static_cast<Index>(n);
        const PrimalDualPair t = detail::batch_map(bp, steps, n, xi.block(b), eta.block(b), xi_bar, eta_bar);
        next.x.block(b) = detail::relax(xi.block(b), t.x, sched.rho);
        next.y.block(b) = detail::relax(eta.block(b), t.y, sched.rho);
    }
    return next;
}

inline MinibatchState psmpds_step(const BatchedProblem& bp, const AdmmSteps& steps, const InertialSchedule& sched,
                                  const CoordinateSampler& sampler, Rng& rng, const MinibatchState& st)
{
    if (sampler.num_blocks() != bp.num_batches()) {
        throw ValidationError("PSMPDS: sampler covers " + std::to_string(sampler.num_blocks()) + " blocks, problem has " +
                              std::to_string(bp.num_batches()) + " batches");
    }
    return psmpds_step(bp, steps, sched, sampler.draw(rng), st);
}

/// The stochastic minibatch operator on Z = prod_n (X x X), block n =
/// [x_n; y_n]. Its fixed points are the primal-dual points of the consensus
/// problem.
class MinibatchOperator final : public BlockOperator
{
public:
    MinibatchOperator(const BatchedProblem& bp, AdmmSteps steps)
        : BlockOperator(std::vector<Index>(bp.num_batches(), 2 * bp.dim())), bp_(bp), steps_(std::move(steps))
    {
    }

    /// Packs (x, y) as [x_1; y_1; ...; x_N; y_N].
    Vector pack(const BlockVector& x, const BlockVector& y) const
    {
        const Index q = bp_.dim();
        Vector z(dim());
        for (Index n = 0; n < x.num_blocks(); ++n) {
            z.segment(2 * n * q, q) = x.block(n);
            z.segment(2 * n * q + q, q) = y.block(n);
        }
        return z;
    }

    std::pair<BlockVector, BlockVector> unpack(const Vector& z) const
    {
        const Index q = bp_.dim();
        const Index nb = static_cast<Index>(bp_.num_batches());
        BlockVector x(nb, q), y(nb, q);
        for (Index n = 0; n < nb; ++n) {
            x.block(n) = z.segment(2 * n * q, q);
            y.block(n) = z.segment(2 * n * q + q, q);
        }
        return {x, y};
    }

    Vector apply(const Vector& w) const override
    {
        detail::require_dims(dim(), w.size(), "MinibatchOperator");
        const auto [x, y] = unpack(w);
        const Vector xbar = x.mean();
        const Vector ybar = y.mean();
        BlockVector tx = x, ty = y;
        for (std::size_t n = 0; n < bp_.num_batches(); ++n) {
            const Index b = static_cast<Index>(n);
            const PrimalDualPair t = detail::batch_map(bp_, steps_, n, x.block(b), y.block(b), xbar, ybar);
            tx.block(b) = t.x;
            ty.block(b) = t.y;
        }
        return pack(tx, ty);
    }

    Vector apply_block(std::size_t j, const Vector& w) const override
    {
        detail::require_dims(dim(), w.size(), "MinibatchOperator");
        const auto [x, y] = unpack(w);
        const Index b = static_cast<Index>(j);
        const PrimalDualPair t = detail::batch_map(bp_, steps_, j, x.block(b), y.block(b), x.mean(), y.mean());
        Vector out(2 * bp_.dim());
        out << t.x, t.y;
        return out;
    }

private:
    const BatchedProblem& bp_;
    AdmmSteps steps_;
};

struct MinibatchTraceRow
{
    long k;
    double objective;
    double consensus_error;
    double residual;
};

struct MinibatchRunResult
{
    RunStatus status = RunStatus::max_iters;
    MinibatchState state;
    long iterations = 0;
    double fixed_point_residual = 0.0;
    /// Objective at the batch average xbar.
    double objective = 0.0;
    double consensus_error = 0.0;
    std::vector<MinibatchTraceRow> trajectory;
};

namespace detail {

template <typename Step>
MinibatchRunResult run_minibatch_loop(const BatchedProblem& bp, const AdmmSteps& steps, const StopCriteria& stop,
                                      MinibatchState start, std::ostream* sink, bool keep_trajectory,
                                      bool with_eta_bar, const Step& step)
{
    require_batch_state(bp, start);
    CsvWriter csv(sink, {"k", "objective", "consensus_error", "residual"});
    MinibatchRunResult result{RunStatus::max_iters, std::move(start)};
    auto finish = [&](RunStatus s) {
        result.status = s;
        result.objective = bp.objective(result.state.x.mean());
        result.consensus_error = consensus_error(result.state.x);
        return result;
    };
    for (long it = 1; it <= stop.max_iters; ++it) {
        MinibatchState next = step(result.state);
        const double res = std::sqrt((next.x.matrix() - result.state.x.matrix()).squaredNorm() +
                                     (next.y.matrix() - result.state.y.matrix()).squaredNorm());
        result.state = std::move(next);
        result.iterations = it;
        if (!result.state.x.matrix().allFinite() || !result.state.y.matrix().allFinite()) {
            throw Error("minibatch solver: non-finite iterate");
        }
        if (keep_trajectory || csv.enabled()) {
            const double obj = bp.objective(result.state.x.mean());
            const double ce = consensus_error(result.state.x);
            if (keep_trajectory) result.trajectory.push_back({result.state.k, obj, ce, res});
            csv.row(result.state.k, obj, ce, res);
        }
        if (res <= stop.residual_tol || it % stop.check_every == 0) {
            result.fixed_point_residual = minibatch_residual(bp, steps, result.state.x, result.state.y, with_eta_bar);
            if (result.fixed_point_residual <= stop.residual_tol) return finish(RunStatus::converged);
        }
    }
    result.fixed_point_residual = minibatch_residual(bp, steps, result.state.x, result.state.y, with_eta_bar);
    return finish(result.fixed_point_residual <= stop.residual_tol ? RunStatus::converged : RunStatus::max_iters);
}

} // namespace detail

inline MinibatchRunResult solve_minibatch(const BatchedProblem& bp, const AdmmSteps& steps,
                                          const InertialSchedule& sched, const StopCriteria& stop,
                                          MinibatchState start, std::ostream* sink = nullptr,
                                          bool keep_trajectory = false)
{
    validate_batch_steps(bp.e_hat(), steps);
    auto step = [&](const MinibatchState& st) { return minibatch_padmm_step(bp, steps, sched, st); };
    return detail::run_minibatch_loop(bp, steps, stop, std::move(start), sink, keep_trajectory, false, step);
}

inline MinibatchRunResult solve_psmpds(const BatchedProblem& bp, const AdmmSteps& steps,
                                       const InertialSchedule& sched, const CoordinateSampler& sampler, Rng& rng,
                                       const StopCriteria& stop, MinibatchState start, std::ostream* sink = nullptr,
                                       bool keep_trajectory = false)
{
    validate_batch_steps(bp.e_hat(), steps);
    auto step = [&](const MinibatchState& st) { return psmpds_step(bp, steps, sched, sampler, rng, st); };
    return detail::run_minibatch_loop(bp, steps, stop, std::move(start), sink, keep_trajectory, true, step);
}

} // namespace ipd
