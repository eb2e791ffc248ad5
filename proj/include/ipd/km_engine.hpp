#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include "ipd/linops.hpp"
#include "ipd/rng.hpp"
#include "ipd/trace.hpp"

namespace ipd {

/// Inertia and relaxation parameters (alpha, theta, delta_hat, rho).
///
/// alpha_k = 0 at k = 1 and alpha afterwards, which is nondecreasing and
/// capped by alpha. A schedule obtained from validate_schedule() satisfies
///   delta_hat > (alpha^2 (1 + alpha) + alpha theta) / (1 - alpha^2)
///   0 < rho < (delta_hat - alpha [alpha (1 + alpha) + alpha delta_hat + theta])
///             / (delta_hat [1 + alpha (1 + alpha) + alpha delta_hat + theta]).
/// Step functions accept any schedule, which is how the degenerate
/// (alpha = 0, rho = 1) reductions are exercised.
struct InertialSchedule
{
    double alpha = 0.0;
    double theta = 1.0;
    double delta_hat = 1.0;
    double rho = 1.0;

    double alpha_at(long k) const noexcept { return k <= 1 ? 0.0 : alpha; }
};

/// Right-hand side of the delta_hat condition.
inline double delta_hat_lower_bound(double alpha, double theta)
{
    return (alpha * alpha * (1.0 + alpha) + alpha * theta) / (1.0 - alpha * alpha);
}

/// Upper end of the admissible relaxation interval.
inline double relaxation_upper_bound(double alpha, double theta, double delta_hat)
{
    const double common = alpha * (1.0 + alpha) + alpha * delta_hat + theta;
    return (delta_hat - alpha * common) / (delta_hat * (1.0 + common));
}

/// delta_hat maximizing relaxation_upper_bound for fixed (alpha, theta).
/// With alpha = 0 the bound does not depend on delta_hat and 1 is returned.
inline double best_delta_hat(double alpha, double theta)
{
    if (alpha == 0.0) return 1.0;
    // bound = (c d - e) / (d (p + a d)); stationary point of the quotient
    const double a = alpha;
    const double c = 1.0 - alpha * alpha;
    const double e = alpha * (alpha * (1.0 + alpha) + theta);
    const double p = 1.0 + alpha * (1.0 + alpha) + theta;
    return (a * e + std::sqrt(a * a * e * e + c * a * e * p)) / (c * a);
}

/// Checks both schedule conditions strictly. When the operator is known to be
/// averaged with constant `averaged`, rho < 1/averaged is enforced as well.
inline InertialSchedule validate_schedule(double alpha, double theta, double delta_hat, double rho,
                                          std::optional<double> averaged = std::nullopt)
{
    if (!(alpha >= 0.0 && alpha < 1.0)) throw ValidationError("schedule: alpha must lie in [0, 1)");
    if (!(theta > 0.0)) throw ValidationError("schedule: theta must be positive");
    if (!(delta_hat > 0.0)) throw ValidationError("schedule: delta_hat must be positive");
    if (!(rho > 0.0)) throw ValidationError("schedule: rho must be positive");
    const double lower = delta_hat_lower_bound(alpha, theta);
    if (!(delta_hat > lower)) {
        std::ostringstream msg;
        msg << "schedule: delta_hat condition violated: delta_hat = " << delta_hat << " must exceed "
            << format_double(lower);
        throw ValidationError(msg.str());
    }
    double upper = relaxation_upper_bound(alpha, theta, delta_hat);
    if (averaged) {
        if (!(*averaged > 0.0 && *averaged <= 1.0)) throw ValidationError("schedule: averaged constant must lie in (0, 1]");
        upper = std::min(upper, 1.0 / *averaged);
    }
    if (!(rho < upper)) {
        std::ostringstream msg;
        msg << "schedule: relaxation condition violated: rho = " << rho << " outside admissible interval (0, "
            << format_double(upper) << ")";
        throw ValidationError(msg.str());
    }
    return {alpha, theta, delta_hat, rho};
}

/// Validated schedule with rho = rho_fraction * upper bound. A NaN delta_hat
/// selects best_delta_hat().
inline InertialSchedule make_schedule(double alpha, double theta, double delta_hat, double rho_fraction,
                                      std::optional<double> averaged = std::nullopt)
{
    if (!(rho_fraction > 0.0 && rho_fraction < 1.0)) throw ValidationError("schedule: rho fraction must lie in (0, 1)");
    if (std::isnan(delta_hat)) delta_hat = best_delta_hat(alpha, theta);
    if (!(alpha >= 0.0 && alpha < 1.0)) throw ValidationError("schedule: alpha must lie in [0, 1)");
    double upper = relaxation_upper_bound(alpha, theta, delta_hat);
    if (averaged && *averaged > 0.0) upper = std::min(upper, 1.0 / *averaged);
    return validate_schedule(alpha, theta, delta_hat, rho_fraction * upper, averaged);
}

/// Distribution over subsets of {0, ..., J-1} driving which coordinate blocks
/// are refreshed. Every block must belong to some subset of positive
/// probability.
class CoordinateSampler
{
public:
    CoordinateSampler(std::size_t num_blocks, std::vector<std::vector<std::size_t>> subsets, std::vector<double> probs)
        : j_(num_blocks), subsets_(std::move(subsets)), probs_(std::move(probs))
    {
        if (j_ == 0) throw ValidationError("sampler: no coordinate blocks");
        if (subsets_.empty() || subsets_.size() != probs_.size()) {
            throw ValidationError("sampler: need one probability per subset");
        }
        std::vector<bool> covered(j_, false);
        double total = 0.0;
        for (std::size_t s = 0; s < subsets_.size(); ++s) {
            if (!(probs_[s] >= 0.0)) throw ValidationError("sampler: negative probability");
            if (subsets_[s].empty()) throw ValidationError("sampler: empty subset");
            auto sorted = subsets_[s];
            std::sort(sorted.begin(), sorted.end());
            if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
                throw ValidationError("sampler: repeated block in a subset");
            }
            for (auto j : sorted) {
                if (j >= j_) throw ValidationError("sampler: block index out of range");
                if (probs_[s] > 0.0) covered[j] = true;
            }
            subsets_[s] = std::move(sorted);
            total += probs_[s];
        }
        if (std::abs(total - 1.0) > 1e-12) throw ValidationError("sampler: probabilities must sum to 1");
        for (std::size_t j = 0; j < j_; ++j) {
            if (!covered[j]) {
                throw ValidationError("sampler: block " + std::to_string(j) +
                                      " is never activated with positive probability");
            }
        }
        cumulative_.resize(probs_.size());
        std::partial_sum(probs_.begin(), probs_.end(), cumulative_.begin());
    }

    /// Uniform over the singletons {0}, ..., {J-1}.
    static CoordinateSampler uniform_singletons(std::size_t num_blocks)
    {
        std::vector<std::vector<std::size_t>> sets;
        for (std::size_t j = 0; j < num_blocks; ++j) sets.push_back({j});
        return CoordinateSampler(num_blocks, std::move(sets),
                                 std::vector<double>(num_blocks, 1.0 / static_cast<double>(num_blocks)));
    }

    /// Always activates every block.
    static CoordinateSampler full(std::size_t num_blocks)
    {
        std::vector<std::size_t> all(num_blocks);
        std::iota(all.begin(), all.end(), 0);
        return CoordinateSampler(num_blocks, {all}, {1.0});
    }

    /// Draws one subset. Consumes exactly one generator value.
    const std::vector<std::size_t>& draw(Rng& rng) const
    {
        const double u = rng.uniform();
        auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
        std::size_t idx = static_cast<std::size_t>(it - cumulative_.begin());
        if (idx >= subsets_.size()) idx = subsets_.size() - 1;
        while (probs_[idx] == 0.0 && idx > 0) --idx;
        return subsets_[idx];
    }

    std::size_t num_blocks() const noexcept { return j_; }
    const std::vector<std::vector<std::size_t>>& subsets() const noexcept { return subsets_; }
    const std::vector<double>& probabilities() const noexcept { return probs_; }

private:
    std::size_t j_;
    std::vector<std::vector<std::size_t>> subsets_;
    std::vector<double> probs_;
    std::vector<double> cumulative_;
};

/// Operator T on Z = Z_1 x ... x Z_J, blocks stored contiguously in order.
class BlockOperator
{
public:
    explicit BlockOperator(std::vector<Index> block_sizes) : sizes_(std::move(block_sizes))
    {
        offsets_.resize(sizes_.size() + 1, 0);
        for (std::size_t j = 0; j < sizes_.size(); ++j) offsets_[j + 1] = offsets_[j] + sizes_[j];
    }
    virtual ~BlockOperator() = default;

    std::size_t num_blocks() const noexcept { return sizes_.size(); }
    Index dim() const noexcept { return offsets_.back(); }
    Index block_offset(std::size_t j) const { return offsets_.at(j); }
    Index block_size(std::size_t j) const { return sizes_.at(j); }

    virtual Vector apply(const Vector& w) const = 0;

    /// Block j of T(w). Must agree exactly with the block of apply(w);
    /// overrides exist only to skip work.
    virtual Vector apply_block(std::size_t j, const Vector& w) const
    {
        return apply(w).segment(block_offset(j), block_size(j));
    }

private:
    std::vector<Index> sizes_;
    std::vector<Index> offsets_;
};

/// Last two iterates. k counts from 1; the first step uses alpha_1 = 0.
struct KMState
{
    Vector x_prev;
    Vector x_curr;
    long k = 1;
};

inline KMState km_start(const Vector& x0, const Vector& x1)
{
    detail::require_dims(x0.size(), x1.size(), "km_start");
    return {x0, x1, 1};
}

/// One randomized inertial Krasnosel'skii-Mann step:
///   w = x_k + alpha_k (x_k - x_{k-1})
///   x_{k+1, j} = (1 - rho) w_j + rho T_j(w)   for j in active
///   x_{k+1, j} = w_j                           otherwise
inline KMState km_step(const BlockOperator& t, const KMState& st, const InertialSchedule& sched,
                       const std::vector<std::size_t>& active)
{
    detail::require_dims(t.dim(), st.x_curr.size(), "km_step state");
    detail::require_dims(t.dim(), st.x_prev.size(), "km_step previous state");
    if (active.empty()) throw ValidationError("km_step: empty active set");
    const double a = sched.alpha_at(st.k);
    const double rho = sched.rho;
    const Vector w = st.x_curr + a * (st.x_curr - st.x_prev);
    Vector next = w;
    if (active.size() == t.num_blocks()) {
        const Vector tw = t.apply(w);
        next = (1.0 - rho) * w + rho * tw;
    } else {
        for (auto j : active) {
            if (j >= t.num_blocks()) throw ValidationError("km_step: block index out of range");
            const Index off = t.block_offset(j);
            const Index len = t.block_size(j);
            const Vector tj = t.apply_block(j, w);
            next.segment(off, len) = (1.0 - rho) * w.segment(off, len) + rho * tj;
        }
    }
    return {st.x_curr, std::move(next), st.k + 1};
}

/// ||T(x) - x||_2.
inline double fixed_point_residual(const BlockOperator& t, const Vector& x) { return (t.apply(x) - x).norm(); }

struct StopCriteria
{
    long max_iters = 100000;
    double residual_tol = 1e-10;
    /// Full fixed-point residual is evaluated at this period, and whenever
    /// the step length drops below residual_tol.
    long check_every = 100;
};

enum class RunStatus { converged, max_iters };

inline const char* to_string(RunStatus s) { return s == RunStatus::converged ? "converged" : "max-iters"; }

struct KMTraceRow
{
    long k;
    double residual;
    double metric;
};

struct KMRunResult
{
    RunStatus status = RunStatus::max_iters;
    KMState state;
    long iterations = 0;
    double fixed_point_residual = 0.0;
    std::vector<KMTraceRow> trajectory;
};

/// Iterates km_step with sampled active sets until ||T(x) - x|| <= tol or the
/// iteration cap. Deterministic for a given generator state. When `sink` is
/// set, rows (k, residual, metric) are streamed as CSV; residual is the step
/// length ||x_{k+1} - x_k||.
inline KMRunResult run(const BlockOperator& t, const CoordinateSampler& sampler, const InertialSchedule& sched,
                       const StopCriteria& stop, KMState start, Rng& rng, std::ostream* sink = nullptr,
                       const std::function<double(const Vector&)>& metric = {})
{
    if (sampler.num_blocks() != t.num_blocks()) throw ValidationError("run: sampler and operator block counts differ");
    CsvWriter csv(sink, {"k", "residual", "metric"});
    KMRunResult result;
    result.state = std::move(start);
    for (long it = 1; it <= stop.max_iters; ++it) {
        const auto& active = sampler.draw(rng);
        KMState next = km_step(t, result.state, sched, active);
        const double step = (next.x_curr - next.x_prev).norm();
        result.state = std::move(next);
        result.iterations = it;
        const double m = metric ? metric(result.state.x_curr) : 0.0;
        result.trajectory.push_back({result.state.k, step, m});
        csv.row(result.state.k, step, m);
        if (!result.state.x_curr.allFinite()) throw Error("run: non-finite iterate");
        if (step <= stop.residual_tol || it % stop.check_every == 0) {
            result.fixed_point_residual = fixed_point_residual(t, result.state.x_curr);
            if (result.fixed_point_residual <= stop.residual_tol) {
                result.status = RunStatus::converged;
                return result;
            }
        }
    }
    result.fixed_point_residual = fixed_point_residual(t, result.state.x_curr);
    result.status = result.fixed_point_residual <= stop.residual_tol ? RunStatus::converged : RunStatus::max_iters;
    return result;
}

} // namespace ipd
