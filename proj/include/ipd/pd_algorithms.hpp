#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ipd/km_engine.hpp"
#include "ipd/linops.hpp"
#include "ipd/prox.hpp"
#include "ipd/smooth.hpp"
#include "ipd/trace.hpp"

namespace ipd {

/// minimize f(x) + g(x) + h(D x) over X, with D : X -> Y.
struct CompositeProblem
{
    SmoothPtr f;
    ProxPtr g;
    ProxPtr h;
    LinearMapPtr d;

    CompositeProblem(SmoothPtr f_, ProxPtr g_, ProxPtr h_, LinearMapPtr d_)
        : f(std::move(f_)), g(std::move(g_)), h(std::move(h_)), d(std::move(d_))
    {
        if (!f || !g || !h || !d) throw ValidationError("CompositeProblem: null oracle");
        detail::require_dims(d->cols(), f->dim(), "CompositeProblem f");
        detail::require_dims(d->cols(), g->dim(), "CompositeProblem g");
        detail::require_dims(d->rows(), h->dim(), "CompositeProblem h");
        const Vector e = f->cocoercivity_diag();
        detail::require_dims(d->cols(), e.size(), "CompositeProblem cocoercivity diagonal");
        if (!e.allFinite() || (e.array() < 0.0).any()) {
            throw ValidationError("CompositeProblem: cocoercivity diagonal must be finite and nonnegative");
        }
    }

    Index primal_dim() const { return d->cols(); }
    Index dual_dim() const { return d->rows(); }
    Vector cocoercivity() const { return f->cocoercivity_diag(); }
    /// ||L||, the largest cocoercivity entry.
    double lipschitz() const
    {
        const Vector e = cocoercivity();
        return e.size() ? e.maxCoeff() : 0.0;
    }

    double objective(const Vector& x) const { return f->value(x) + g->value(x) + h->value(d->apply(x)); }
};

/// Primal step T (on X) and dual step Sigma (on Y) of the primal-dual
/// splitting family. Scalar steps are constant diagonals.
struct PdsSteps
{
    DiagonalMap tau;
    DiagonalMap sigma;

    static PdsSteps scalar(Index n, Index m, double tau, double sigma)
    {
        return {DiagonalMap::constant(n, tau), DiagonalMap::constant(m, sigma)};
    }

    bool is_scalar() const
    {
        return tau.max_entry() == tau.min_entry() && sigma.max_entry() == sigma.min_entry();
    }
};

/// Steps of the ADMM+ family. Both live on Y: tau is the T of the
/// x-update metric, psi the metric of the z-update (mu in the scalar case).
struct AdmmSteps
{
    DiagonalMap tau;
    DiagonalMap psi;

    static AdmmSteps scalar(Index m, double tau, double mu)
    {
        return {DiagonalMap::constant(m, tau), DiagonalMap::constant(m, mu)};
    }

    bool is_scalar() const { return tau.max_entry() == tau.min_entry() && psi.max_entry() == psi.min_entry(); }
};

struct StepCertificate
{
    std::string condition;
    /// Smallest slack over the checked inequalities; always > 0.
    double margin = 0.0;
    bool scalar = false;
};

namespace detail {

inline double norm_sq_or_zero(const LinearMap& m)
{
    if (is_zero_map(m)) return 0.0;
    return operator_norm_sq(m, PowerIterationOptions{1e-12, 5000});
}

inline std::string margin_message(const std::string& what, double margin)
{
    std::ostringstream msg;
    msg << "step sizes: " << what << " violated (margin " << format_double(margin) << ")";
    return msg.str();
}

/// T^{-1} - E/2 > 0 entrywise and ||Sigma^{1/2} D (T^{-1} - E/2)^{-1/2}|| < 1.
inline StepCertificate check_matrix_condition(const LinearMap& d, const Vector& e, const Vector& tau,
                                              const Vector& sigma)
{
    detail::require_dims(d.cols(), tau.size(), "validate_step_sizes primal step");
    detail::require_dims(d.rows(), sigma.size(), "validate_step_sizes dual step");
    detail::require_dims(d.cols(), e.size(), "validate_step_sizes cocoercivity");
    const Vector slack = tau.cwiseInverse() - 0.5 * e;
    const double min_slack = slack.minCoeff();
    if (!(min_slack > 0.0)) throw ValidationError(margin_message("T^{-1} - E/2 > 0", min_slack));
    ScaledMap coupled(d, sigma.cwiseSqrt(), slack.cwiseSqrt().cwiseInverse());
    const double nrm = norm_sq_or_zero(coupled);
    const double margin = 1.0 - nrm;
    if (!(margin > 0.0)) {
        throw ValidationError(margin_message("||Sigma^{1/2} D (T^{-1} - E/2)^{-1/2}|| < 1", margin));
    }
    return {"T^{-1} - E/2 > 0 and ||Sigma^{1/2} D (T^{-1} - E/2)^{-1/2}|| < 1", std::min(min_slack, margin), false};
}

} // namespace detail

/// Scalar steps: 1/tau - sigma ||D||^2 > ||L||/2 with ||L|| = max_j e_j.
/// Diagonal steps: T^{-1} - E/2 > 0 and ||Sigma^{1/2} D (T^{-1} - E/2)^{-1/2}|| < 1,
/// which is the matrix form the positive-definiteness argument needs.
inline StepCertificate validate_step_sizes(const CompositeProblem& p, const PdsSteps& steps)
{
    detail::require_dims(p.primal_dim(), steps.tau.size(), "validate_step_sizes primal step");
    detail::require_dims(p.dual_dim(), steps.sigma.size(), "validate_step_sizes dual step");
    if (steps.is_scalar()) {
        const double tau = steps.tau[0];
        const double sigma = steps.sigma[0];
        const double lhs = 1.0 / tau - sigma * detail::norm_sq_or_zero(*p.d);
        const double margin = lhs - 0.5 * p.lipschitz();
        if (!(margin > 0.0)) throw ValidationError(detail::margin_message("1/tau - sigma ||D||^2 > ||L||/2", margin));
        return {"1/tau - sigma ||D||^2 > ||L||/2", margin, true};
    }
    return detail::check_matrix_condition(*p.d, p.cocoercivity(), steps.tau.values(), steps.sigma.values());
}

/// Diagonal steps for D and cocoercivity diagonal e:
///   tau_j = 1 / (e_j / gamma + r sum_i |D_ij|^(2-s)),
///   psi_i = (1/r) sum_j |D_ij|^s          (0^0 = 0).
/// The dual step of the primal-dual form is Sigma = Psi^{-1}.
struct DiagPreconditioner
{
    DiagonalMap tau;
    DiagonalMap psi;

    DiagonalMap sigma() const { return psi.inverse(); }
    PdsSteps pds_steps() const { return {tau, sigma()}; }
};

inline DiagPreconditioner build_diag_preconditioner(const LinearMap& d, const Vector& e, double gamma = 1.9,
                                                    double r = 1.0, double s = 1.0)
{
    if (!(gamma > 0.0 && gamma < 2.0)) throw ValidationError("preconditioner: gamma must lie in (0, 2)");
    if (!(r > 0.0)) throw ValidationError("preconditioner: r must be positive");
    if (!(s >= 0.0 && s <= 2.0)) throw ValidationError("preconditioner: s must lie in [0, 2]");
    detail::require_dims(d.cols(), e.size(), "preconditioner cocoercivity");
    const PowerSums ps = power_sums(d, s);
    Vector tau(d.cols());
    for (Index j = 0; j < d.cols(); ++j) {
        if (!(e[j] >= 0.0)) throw ValidationError("preconditioner: negative cocoercivity entry");
        const double denom = e[j] / gamma + r * ps.col_sums[j];
        if (!(denom > 0.0)) {
            throw ValidationError("preconditioner: column " + std::to_string(j) +
                                  " of D is zero and e_j = 0, primal step unbounded");
        }
        tau[j] = 1.0 / denom;
    }
    Vector psi(d.rows());
    for (Index i = 0; i < d.rows(); ++i) {
        if (!(ps.row_sums[i] > 0.0)) {
            throw ValidationError("preconditioner: row " + std::to_string(i) + " of D is zero, dual coordinate unused");
        }
        psi[i] = ps.row_sums[i] / r;
    }
    return {DiagonalMap(std::move(tau)), DiagonalMap(std::move(psi))};
}

/// Scalar steps with 1/tau - sigma ||D||^2 = ||L|| / gamma.
inline PdsSteps default_scalar_steps(const CompositeProblem& p, double gamma = 1.9, double r = 1.0)
{
    if (!(gamma > 0.0 && gamma < 2.0)) throw ValidationError("steps: gamma must lie in (0, 2)");
    if (!(r > 0.0)) throw ValidationError("steps: r must be positive");
    const double nd = std::sqrt(detail::norm_sq_or_zero(*p.d));
    const double l = p.lipschitz();
    if (nd == 0.0) {
        if (l == 0.0) return PdsSteps::scalar(p.primal_dim(), p.dual_dim(), 1.0, 1.0);
        return PdsSteps::scalar(p.primal_dim(), p.dual_dim(), gamma / l, 1.0);
    }
    return PdsSteps::scalar(p.primal_dim(), p.dual_dim(), 1.0 / (l / gamma + r * nd), r / nd);
}

/// Averagedness constant 1/delta of the primal-dual operator for scalar
/// steps, delta = 2 - 1/(2 kappa), kappa = (1/tau - sigma ||D||^2) / ||L||.
/// With ||L|| = 0 the operator is firmly nonexpansive (1/2).
inline double pds_averaged_constant(const CompositeProblem& p, double tau, double sigma)
{
    const double l = p.lipschitz();
    if (l == 0.0) return 0.5;
    const double kappa = (1.0 / tau - sigma * detail::norm_sq_or_zero(*p.d)) / l;
    if (!(kappa > 0.5)) throw ValidationError("steps: 1/tau - sigma ||D||^2 > ||L||/2 violated");
    return 1.0 / (2.0 - 1.0 / (2.0 * kappa));
}

/// Iterates (x^k, x^{k-1}, y^k, y^{k-1}).
struct PrimalDualState
{
    Vector x_prev;
    Vector x_curr;
    Vector y_prev;
    Vector y_curr;
    long k = 1;

    static PrimalDualState start(const Vector& x0, const Vector& y0) { return {x0, x0, y0, y0, 1}; }
};

namespace detail {

inline Vector extrapolate(const Vector& x, const Vector& x_prev, double a) { return x + a * (x - x_prev); }

inline Vector relax(const Vector& w, const Vector& t, double rho) { return (1.0 - rho) * w + rho * t; }

inline void require_state(const CompositeProblem& p, const PrimalDualState& st)
{
    require_dims(p.primal_dim(), st.x_curr.size(), "primal-dual state x");
    require_dims(p.primal_dim(), st.x_prev.size(), "primal-dual state previous x");
    require_dims(p.dual_dim(), st.y_curr.size(), "primal-dual state y");
    require_dims(p.dual_dim(), st.y_prev.size(), "primal-dual state previous y");
}

} // namespace detail

/// The primal-dual splitting map (xi, eta) -> (x~, y~):
///   y~ = prox_{Sigma h*}(eta + Sigma D xi)
///   x~ = prox_{T g}(xi - T grad f(xi) - T D*(2 y~ - eta))
inline PrimalDualPair pds_map(const CompositeProblem& p, const PdsSteps& steps, const Vector& xi, const Vector& eta)
{
    const DiagonalMap& tau = steps.tau;
    const DiagonalMap& sigma = steps.sigma;
    PrimalDualPair out;
    out.y = prox_conjugate(*p.h, sigma, eta + sigma.values().cwiseProduct(p.d->apply(xi)));
    const Vector tg = tau.values().cwiseProduct(p.f->grad(xi));
    const Vector td = tau.values().cwiseProduct(p.d->apply_adjoint(2.0 * out.y - eta));
    out.x = p.g->prox(tau, xi - tg - td);
    return out;
}

/// One IPDS step (IPDSP when the steps are diagonal maps): inertial
/// extrapolation of both variables, pds_map, then relaxation of the pair
/// around the extrapolated point.
inline PrimalDualState ipds_step(const CompositeProblem& p, const PdsSteps& steps, const InertialSchedule& sched,
                                 const PrimalDualState& st)
{
    detail::require_state(p, st);
    const double a = sched.alpha_at(st.k);
    const Vector xi = detail::extrapolate(st.x_curr, st.x_prev, a);
    const Vector eta = detail::extrapolate(st.y_curr, st.y_prev, a);
    const PrimalDualPair t = pds_map(p, steps, xi, eta);
    return {st.x_curr, detail::relax(xi, t.x, sched.rho), st.y_curr, detail::relax(eta, t.y, sched.rho), st.k + 1};
}

/// Scalar steps of the non-inertial baseline together with its relaxation
/// bound delta = 2 - (l/2) (1/tau - sigma ||D||^2)^{-1}.
struct CondatSteps
{
    double tau;
    double sigma;
    double delta;
};

inline CondatSteps make_condat_steps(const CompositeProblem& p, double tau, double sigma)
{
    if (!(tau > 0.0 && sigma > 0.0)) throw ValidationError("condat: tau and sigma must be positive");
    const double gap = 1.0 / tau - sigma * detail::norm_sq_or_zero(*p.d);
    const double l = p.lipschitz();
    if (!(gap > 0.5 * l) || !(gap > 0.0)) {
        throw ValidationError(detail::margin_message("1/tau - sigma ||D||^2 > l/2", gap - 0.5 * l));
    }
    return {tau, sigma, 2.0 - 0.5 * l / gap};
}

/// Non-inertial primal-dual step:
///   y~ = prox_{sigma h*}(y + sigma D x)
///   x~ = prox_{tau g}(x - tau grad f(x) - tau D*(2 y~ - y))
///   (x, y) <- rho (x~, y~) + (1 - rho)(x, y),   rho in (0, delta).
inline PrimalDualState condat_step(const CompositeProblem& p, const CondatSteps& steps, double rho,
                                   const PrimalDualState& st)
{
    detail::require_state(p, st);
    if (!(rho > 0.0 && rho < steps.delta)) {
        throw ValidationError("condat: relaxation rho = " + format_double(rho) + " outside (0, " +
                              format_double(steps.delta) + ")");
    }
    const DiagonalMap tau = DiagonalMap::constant(p.primal_dim(), steps.tau);
    const DiagonalMap sigma = DiagonalMap::constant(p.dual_dim(), steps.sigma);
    const Vector& x = st.x_curr;
    const Vector& y = st.y_curr;
    const Vector yt = prox_conjugate(*p.h, sigma, y + sigma.values().cwiseProduct(p.d->apply(x)));
    const Vector tg = tau.values().cwiseProduct(p.f->grad(x));
    const Vector td = tau.values().cwiseProduct(p.d->apply_adjoint(2.0 * yt - y));
    const Vector xt = p.g->prox(tau, x - tg - td);
    return {x, (1.0 - rho) * x + rho * xt, y, (1.0 - rho) * y + rho * yt, st.k + 1};
}

/// Structure of a D whose rows carry at most one nonzero and whose columns
/// are all nonzero. Then D is injective and D* T^{-1} D is diagonal for any
/// diagonal T on Y, which turns the ADMM+ x-update into a diagonal-metric
/// prox of g.
class AdmmGeometry
{
public:
    explicit AdmmGeometry(const LinearMap& d) : rows_(d.rows()), cols_(static_cast<std::size_t>(d.cols()))
    {
        std::vector<int> row_count(static_cast<std::size_t>(d.rows()), 0);
        d.for_each_nonzero([&](Index i, Index j, double v) {
            if (v == 0.0) return;
            if (++row_count[static_cast<std::size_t>(i)] > 1) {
                throw ValidationError("ADMM+: row " + std::to_string(i) +
                                      " of D has more than one nonzero; use the primal-dual splitting solver");
            }
            cols_[static_cast<std::size_t>(j)].push_back({i, v});
        });
        for (std::size_t j = 0; j < cols_.size(); ++j) {
            if (cols_[j].empty()) {
                throw ValidationError("ADMM+: D is not injective (column " + std::to_string(j) + " is zero)");
            }
        }
    }

    Index rows() const noexcept { return rows_; }
    Index cols() const noexcept { return static_cast<Index>(cols_.size()); }

    /// Cocoercivity diagonal of f o D^{-1} on Im(D): e_j / sum_i D_ij^2 on
    /// every row i of column j; rows outside the image get 0.
    Vector lift_cocoercivity(const Vector& e) const
    {
        detail::require_dims(cols(), e.size(), "ADMM+ cocoercivity");
        Vector out = Vector::Zero(rows_);
        for (std::size_t j = 0; j < cols_.size(); ++j) {
            double c = 0.0;
            for (const auto& [i, v] : cols_[j]) c += v * v;
            for (const auto& [i, v] : cols_[j]) out[i] = e[static_cast<Index>(j)] / c;
        }
        return out;
    }

    /// (D* T^{-1} D)^{-1}, the metric of the x-update prox.
    Vector metric(const DiagonalMap& tau) const
    {
        detail::require_dims(rows_, tau.size(), "ADMM+ metric");
        Vector out(cols());
        for (std::size_t j = 0; j < cols_.size(); ++j) {
            if (cols_[j].size() == 1) {
                const auto& [i, v] = cols_[j][0];
                out[static_cast<Index>(j)] = tau[i] / (v * v);
            } else {
                double m = 0.0;
                for (const auto& [i, v] : cols_[j]) m += v * v / tau[i];
                out[static_cast<Index>(j)] = 1.0 / m;
            }
        }
        return out;
    }

    /// argmin_w ||D w - v||^2_{T^{-1}}.
    Vector pullback(const DiagonalMap& tau, const Vector& v) const
    {
        detail::require_dims(rows_, v.size(), "ADMM+ pullback");
        Vector out(cols());
        for (std::size_t j = 0; j < cols_.size(); ++j) {
            if (cols_[j].size() == 1) {
                const auto& [i, d] = cols_[j][0];
                out[static_cast<Index>(j)] = v[i] / d;
            } else {
                double num = 0.0, den = 0.0;
                for (const auto& [i, d] : cols_[j]) {
                    num += d * v[i] / tau[i];
                    den += d * d / tau[i];
                }
                out[static_cast<Index>(j)] = num / den;
            }
        }
        return out;
    }

private:
    Index rows_;
    std::vector<std::vector<std::pair<Index, double>>> cols_;
};

/// Scalar steps: 1/tau - 1/mu > ||Lbar||/2. Diagonal steps (both on Y):
/// T^{-1} - Ebar/2 > 0 and ||(T^{-1} - Ebar/2)^{-1/2} Psi^{-1/2}|| < 1, i.e.
/// 1/psi_i < 1/tau_i - ebar_i/2 entrywise.
inline StepCertificate validate_admm_steps(const CompositeProblem& p, const AdmmGeometry& geom, const AdmmSteps& steps)
{
    detail::require_dims(p.dual_dim(), steps.tau.size(), "validate_admm_steps tau");
    detail::require_dims(p.dual_dim(), steps.psi.size(), "validate_admm_steps psi");
    const Vector ebar = geom.lift_cocoercivity(p.cocoercivity());
    if (steps.is_scalar()) {
        const double margin = 1.0 / steps.tau[0] - 1.0 / steps.psi[0] - 0.5 * ebar.maxCoeff();
        if (!(margin > 0.0)) throw ValidationError(detail::margin_message("1/tau - 1/mu > ||Lbar||/2", margin));
        return {"1/tau - 1/mu > ||Lbar||/2", margin, true};
    }
    const Vector slack = steps.tau.values().cwiseInverse() - 0.5 * ebar;
    const double min_slack = slack.minCoeff();
    if (!(min_slack > 0.0)) throw ValidationError(detail::margin_message("T^{-1} - Ebar/2 > 0", min_slack));
    const double nrm = slack.cwiseInverse().cwiseProduct(steps.psi.values().cwiseInverse()).maxCoeff();
    const double margin = 1.0 - nrm;
    if (!(margin > 0.0)) {
        throw ValidationError(detail::margin_message("||(T^{-1} - Ebar/2)^{-1/2} Psi^{-1/2}|| < 1", margin));
    }
    return {"T^{-1} - Ebar/2 > 0 and ||(T^{-1} - Ebar/2)^{-1/2} Psi^{-1/2}|| < 1", std::min(min_slack, margin), false};
}

/// Diagonal ADMM+ steps from the preconditioner formula applied to the
/// identity on Y with the lifted cocoercivity: tau_i = 1/(ebar_i/gamma + r),
/// psi_i = 1/r.
inline AdmmSteps default_admm_steps(const CompositeProblem& p, const AdmmGeometry& geom, double gamma = 1.9,
                                    double r = 1.0, bool scalar = false)
{
    Vector ebar = geom.lift_cocoercivity(p.cocoercivity());
    if (scalar) ebar.setConstant(ebar.maxCoeff());
    const DiagPreconditioner pc = build_diag_preconditioner(SparseMap::identity(p.dual_dim()), ebar, gamma, r, 1.0);
    return {pc.tau, pc.psi};
}

/// The ADMM+ map (xi, eta) -> (x~, y~):
///   z  = prox_{Psi h}(D xi + Psi eta)
///   y~ = eta + Psi^{-1}(D xi - z)
///   u  = (I - T Psi^{-1}) D xi + T Psi^{-1} z
///   x~ = argmin_w g(w) + <grad f(xi), w> + 1/2 ||D w - u + T y~||^2_{T^{-1}}
/// The last line is a prox of g in the metric M = (D* T^{-1} D)^{-1}.
inline PrimalDualPair admm_map(const CompositeProblem& p, const AdmmGeometry& geom, const AdmmSteps& steps,
                               const Vector& xi, const Vector& eta)
{
    const Vector& tau = steps.tau.values();
    const Vector& psi = steps.psi.values();
    const Vector dxi = p.d->apply(xi);
    const Vector z = p.h->prox(steps.psi, dxi + psi.cwiseProduct(eta));
    const Vector gap = (dxi - z).cwiseQuotient(psi);
    PrimalDualPair out;
    out.y = eta + gap;
    const Vector u = dxi - tau.cwiseProduct(gap);
    const Vector v = u - tau.cwiseProduct(out.y);
    const DiagonalMap metric(geom.metric(steps.tau));
    const Vector a = geom.pullback(steps.tau, v);
    out.x = p.g->prox(metric, a - metric.values().cwiseProduct(p.f->grad(xi)));
    return out;
}

/// One IADMM+ step (PADMM+ when the steps are diagonal maps).
inline PrimalDualState iadmm_step(const CompositeProblem& p, const AdmmGeometry& geom, const AdmmSteps& steps,
                                  const InertialSchedule& sched, const PrimalDualState& st)
{
    detail::require_state(p, st);
    const double a = sched.alpha_at(st.k);
    const Vector xi = detail::extrapolate(st.x_curr, st.x_prev, a);
    const Vector eta = detail::extrapolate(st.y_curr, st.y_prev, a);
    const PrimalDualPair t = admm_map(p, geom, steps, xi, eta);
    return {st.x_curr, detail::relax(xi, t.x, sched.rho), st.y_curr, detail::relax(eta, t.y, sched.rho), st.k + 1};
}

inline PrimalDualState iadmm_step(const CompositeProblem& p, const AdmmSteps& steps, const InertialSchedule& sched,
                                  const PrimalDualState& st)
{
    return iadmm_step(p, AdmmGeometry(*p.d), steps, sched, st);
}

/// x+ = prox_{T g}(x - T grad f(x)), requiring tau_j < 2 / e_j.
inline Vector forward_backward_step(const SmoothOracle& f, const ProxOracle& g, const DiagonalMap& tau,
                                    const Vector& x)
{
    detail::require_dims(f.dim(), x.size(), "forward_backward_step");
    detail::require_dims(tau.size(), x.size(), "forward_backward_step step");
    const Vector e = f.cocoercivity_diag();
    for (Index j = 0; j < e.size(); ++j) {
        if (!(tau[j] * e[j] < 2.0)) {
            throw ValidationError("forward-backward: step " + format_double(tau[j]) + " must be below 2/l = " +
                                  format_double(2.0 / e[j]));
        }
    }
    return g.prox(tau, x - tau.values().cwiseProduct(f.grad(x)));
}

inline Vector forward_backward_step(const SmoothOracle& f, const ProxOracle& g, double tau, const Vector& x)
{
    return forward_backward_step(f, g, DiagonalMap::constant(x.size(), tau), x);
}

/// Forward-backward on a problem without the h o D term.
inline Vector forward_backward_step(const CompositeProblem& p, double tau, const Vector& x)
{
    if (!dynamic_cast<const ZeroFunction*>(p.h.get())) {
        throw ValidationError("forward-backward: problem must have h = 0");
    }
    return forward_backward_step(*p.f, *p.g, tau, x);
}

/// The primal-dual splitting map on Z = X x Y as a two-block operator
/// (block 0 = x, block 1 = y).
class PdsOperator final : public BlockOperator
{
public:
    PdsOperator(const CompositeProblem& p, PdsSteps steps)
        : BlockOperator({p.primal_dim(), p.dual_dim()}), p_(p), steps_(std::move(steps))
    {
    }

    Vector apply(const Vector& w) const override
    {
        detail::require_dims(dim(), w.size(), "PdsOperator");
        const PrimalDualPair t = pds_map(p_, steps_, w.head(p_.primal_dim()), w.tail(p_.dual_dim()));
        Vector out(dim());
        out << t.x, t.y;
        return out;
    }

private:
    const CompositeProblem& p_;
    PdsSteps steps_;
};

class AdmmOperator final : public BlockOperator
{
public:
    AdmmOperator(const CompositeProblem& p, AdmmSteps steps)
        : BlockOperator({p.primal_dim(), p.dual_dim()}), p_(p), geom_(*p.d), steps_(std::move(steps))
    {
    }

    Vector apply(const Vector& w) const override
    {
        detail::require_dims(dim(), w.size(), "AdmmOperator");
        const PrimalDualPair t = admm_map(p_, geom_, steps_, w.head(p_.primal_dim()), w.tail(p_.dual_dim()));
        Vector out(dim());
        out << t.x, t.y;
        return out;
    }

private:
    const CompositeProblem& p_;
    AdmmGeometry geom_;
    AdmmSteps steps_;
};

struct PdTraceRow
{
    long k;
    double objective;
    double primal_residual;
    double dual_residual;
};

struct PdRunResult
{
    RunStatus status = RunStatus::max_iters;
    PrimalDualState state;
    long iterations = 0;
    /// ||T(z) - z|| at the returned point.
    double fixed_point_residual = 0.0;
    double objective = 0.0;
    std::vector<PdTraceRow> trajectory;
};

namespace detail {

/// Shared loop: `map` is the fixed-point map (xi, eta) -> (x~, y~); the
/// step residual ||T(w) - w|| comes for free, and the residual at the
/// current point is confirmed before declaring convergence.
template <typename Map, typename Step>
PdRunResult run_pd_loop(const CompositeProblem& p, const Map& map, const Step& step, const StopCriteria& stop,
                        PrimalDualState start, std::ostream* sink, bool keep_trajectory)
{
    detail::require_state(p, start);
    CsvWriter csv(sink, {"k", "objective", "primal_residual", "dual_residual"});
    PdRunResult result;
    result.state = std::move(start);
    auto residual_at = [&](const PrimalDualState& s) {
        const PrimalDualPair t = map(s.x_curr, s.y_curr);
        return std::sqrt((t.x - s.x_curr).squaredNorm() + (t.y - s.y_curr).squaredNorm());
    };
    for (long it = 1; it <= stop.max_iters; ++it) {
        double w_residual = 0.0;
        PrimalDualState next = step(result.state, w_residual);
        const double pr = (next.x_curr - next.x_prev).norm();
        const double dr = (next.y_curr - next.y_prev).norm();
        result.state = std::move(next);
        result.iterations = it;
        if (!result.state.x_curr.allFinite() || !result.state.y_curr.allFinite()) {
            throw Error("primal-dual solver: non-finite iterate");
        }
        if (keep_trajectory || csv.enabled()) {
            const double obj = p.objective(result.state.x_curr);
            if (keep_trajectory) result.trajectory.push_back({result.state.k, obj, pr, dr});
            csv.row(result.state.k, obj, pr, dr);
        }
        if (w_residual <= stop.residual_tol || it % stop.check_every == 0) {
            result.fixed_point_residual = residual_at(result.state);
            if (result.fixed_point_residual <= stop.residual_tol) {
                result.status = RunStatus::converged;
                result.objective = p.objective(result.state.x_curr);
                return result;
            }
        }
    }
    result.fixed_point_residual = residual_at(result.state);
    result.status = result.fixed_point_residual <= stop.residual_tol ? RunStatus::converged : RunStatus::max_iters;
    result.objective = p.objective(result.state.x_curr);
    return result;
}

} // namespace detail

/// IPDS / IPDSP driver. Trace rows: k, objective, primal_residual
/// ||x^{k+1} - x^k||, dual_residual ||y^{k+1} - y^k||.
inline PdRunResult solve_ipds(const CompositeProblem& p, const PdsSteps& steps, const InertialSchedule& sched,
                              const StopCriteria& stop, PrimalDualState start, std::ostream* sink = nullptr,
                              bool keep_trajectory = false)
{
    validate_step_sizes(p, steps);
    auto map = [&](const Vector& xi, const Vector& eta) { return pds_map(p, steps, xi, eta); };
    auto step = [&](const PrimalDualState& st, double& w_residual) {
        const double a = sched.alpha_at(st.k);
        const Vector xi = detail::extrapolate(st.x_curr, st.x_prev, a);
        const Vector eta = detail::extrapolate(st.y_curr, st.y_prev, a);
        const PrimalDualPair t = map(xi, eta);
        w_residual = std::sqrt((t.x - xi).squaredNorm() + (t.y - eta).squaredNorm());
        return PrimalDualState{st.x_curr, detail::relax(xi, t.x, sched.rho), st.y_curr,
                               detail::relax(eta, t.y, sched.rho), st.k + 1};
    };
    return detail::run_pd_loop(p, map, step, stop, std::move(start), sink, keep_trajectory);
}

inline PdRunResult solve_condat(const CompositeProblem& p, const CondatSteps& steps, double rho,
                                const StopCriteria& stop, PrimalDualState start, std::ostream* sink = nullptr,
                                bool keep_trajectory = false)
{
    const PdsSteps diag = PdsSteps::scalar(p.primal_dim(), p.dual_dim(), steps.tau, steps.sigma);
    auto map = [&](const Vector& x, const Vector& y) { return pds_map(p, diag, x, y); };
    auto step = [&](const PrimalDualState& st, double& w_residual) {
        PrimalDualState next = condat_step(p, steps, rho, st);
        // the relaxed step is rho (T z - z)
        w_residual = std::sqrt((next.x_curr - st.x_curr).squaredNorm() + (next.y_curr - st.y_curr).squaredNorm()) / rho;
        return next;
    };
    return detail::run_pd_loop(p, map, step, stop, std::move(start), sink, keep_trajectory);
}

inline PdRunResult solve_iadmm(const CompositeProblem& p, const AdmmSteps& steps, const InertialSchedule& sched,
                               const StopCriteria& stop, PrimalDualState start, std::ostream* sink = nullptr,
                               bool keep_trajectory = false)
{
    const AdmmGeometry geom(*p.d);
    validate_admm_steps(p, geom, steps);
    auto map = [&](const Vector& xi, const Vector& eta) { return admm_map(p, geom, steps, xi, eta); };
    auto step = [&](const PrimalDualState& st, double& w_residual) {
        const double a = sched.alpha_at(st.k);
        const Vector xi = detail::extrapolate(st.x_curr, st.x_prev, a);
        const Vector eta = detail::extrapolate(st.y_curr, st.y_prev, a);
        const PrimalDualPair t = map(xi, eta);
        w_residual = std::sqrt((t.x - xi).squaredNorm() + (t.y - eta).squaredNorm());
        return PrimalDualState{st.x_curr, detail::relax(xi, t.x, sched.rho), st.y_curr,
                               detail::relax(eta, t.y, sched.rho), st.k + 1};
    };
    return detail::run_pd_loop(p, map, step, stop, std::move(start), sink, keep_trajectory);
}

} // namespace ipd
