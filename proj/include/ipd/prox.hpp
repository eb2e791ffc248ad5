#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <utility>

#include "ipd/linops.hpp"

namespace ipd {

/// Proximable convex function g.
///
/// prox(W, v) returns argmin_w g(w) + 1/2 ||w - v||^2_{W^{-1}} for a positive
/// diagonal W. A scalar step tau is W = tau * I. Because W is diagonal, the
/// weighted problem is the standard prox after the change of variable
/// w <- W^{-1/2} w; separable functions reduce to per-coordinate steps W_jj.
class ProxOracle
{
public:
    virtual ~ProxOracle() = default;
    virtual Index dim() const = 0;
    virtual Vector prox(const DiagonalMap& w, const Vector& v) const = 0;
    /// Function value, +inf outside the domain.
    virtual double value(const Vector& v) const = 0;

    /// prox of the conjugate in the Sigma metric. The default goes through
    /// the Moreau identity; overrides return exact closed forms.
    virtual Vector prox_conjugate(const DiagonalMap& sigma, const Vector& y) const
    {
        detail::require_dims(sigma.size(), y.size(), "prox_conjugate");
        const Vector scaled = y.cwiseQuotient(sigma.values());
        const Vector p = prox(sigma.inverse(), scaled);
        return y - sigma.values().cwiseProduct(p);
    }
};

using ProxPtr = std::shared_ptr<const ProxOracle>;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Component-wise soft threshold sign(v_j) max(|v_j| - lambda W_jj, 0).
inline Vector prox_l1(const DiagonalMap& w, const Vector& v, double lambda)
{
    if (lambda < 0.0) throw ValidationError("prox_l1: lambda must be nonnegative");
    detail::require_dims(w.size(), v.size(), "prox_l1");
    Vector out(v.size());
    for (Index j = 0; j < v.size(); ++j) {
        const double t = lambda * w[j];
        const double a = std::abs(v[j]) - t;
        out[j] = a > 0.0 ? std::copysign(a, v[j]) : 0.0;
    }
    return out;
}

/// Replaces every block by the block average.
inline BlockVector project_consensus(const BlockVector& x)
{
    const Vector mean = x.mean();
    return BlockVector(mean.replicate(1, x.num_blocks()));
}

/// Projection onto {(u, -u)}: (a, b) -> ((a - b)/2, (b - a)/2).
inline std::pair<Vector, Vector> project_pair_anticonsensus(const Vector& a, const Vector& b)
{
    detail::require_dims(a.size(), b.size(), "project_pair_anticonsensus");
    Vector half = 0.5 * (a - b);
    return {half, -half};
}

class ZeroFunction final : public ProxOracle
{
public:
    explicit ZeroFunction(Index n) : n_(n) {}
    Index dim() const override { return n_; }
    Vector prox(const DiagonalMap& w, const Vector& v) const override
    {
        detail::require_dims(w.size(), v.size(), "ZeroFunction::prox");
        return v;
    }
    double value(const Vector&) const override { return 0.0; }
    Vector prox_conjugate(const DiagonalMap& sigma, const Vector& y) const override
    {
        detail::require_dims(sigma.size(), y.size(), "prox_conjugate");
        return Vector::Zero(y.size());
    }

private:
    Index n_;
};

/// lambda ||x||_1.
class L1Norm final : public ProxOracle
{
public:
    L1Norm(Index n, double lambda) : n_(n), lambda_(lambda)
    {
        if (lambda < 0.0) throw ValidationError("L1Norm: lambda must be nonnegative");
    }
    Index dim() const override { return n_; }
    double lambda() const noexcept { return lambda_; }
    Vector prox(const DiagonalMap& w, const Vector& v) const override { return prox_l1(w, v, lambda_); }
    double value(const Vector& v) const override { return lambda_ * v.lpNorm<1>(); }

private:
    Index n_;
    double lambda_;
};

/// Indicator of the single point {0}.
class ZeroIndicator final : public ProxOracle
{
public:
    explicit ZeroIndicator(Index n) : n_(n) {}
    Index dim() const override { return n_; }
    Vector prox(const DiagonalMap& w, const Vector& v) const override
    {
        detail::require_dims(w.size(), v.size(), "ZeroIndicator::prox");
        return Vector::Zero(v.size());
    }
    double value(const Vector& v) const override { return v.isZero(0.0) ? 0.0 : kInfinity; }
    Vector prox_conjugate(const DiagonalMap& sigma, const Vector& y) const override
    {
        detail::require_dims(sigma.size(), y.size(), "prox_conjugate");
        return y;
    }

private:
    Index n_;
};

/// Indicator of the consensus set {(u, ..., u)} in X^N, blocks contiguous.
/// In the W^{-1} metric the projection is the W^{-1}-weighted block average.
class ConsensusIndicator final : public ProxOracle
{
public:
    ConsensusIndicator(Index num_blocks, Index block_dim) : n_(num_blocks), q_(block_dim) {}
    Index dim() const override { return n_ * q_; }

    Vector prox(const DiagonalMap& w, const Vector& v) const override
    {
        detail::require_dims(dim(), v.size(), "ConsensusIndicator::prox");
        detail::require_dims(dim(), w.size(), "ConsensusIndicator::prox metric");
        Eigen::Map<const Matrix> vb(v.data(), q_, n_);
        Eigen::Map<const Matrix> wb(w.values().data(), q_, n_);
        const Matrix inv = wb.cwiseInverse();
        const Vector avg = (vb.cwiseProduct(inv)).rowwise().sum().cwiseQuotient(inv.rowwise().sum());
        Vector out(v.size());
        for (Index n = 0; n < n_; ++n) out.segment(n * q_, q_) = avg;
        return out;
    }

    double value(const Vector& v) const override
    {
        Eigen::Map<const Matrix> vb(v.data(), q_, n_);
        for (Index n = 1; n < n_; ++n)
            if (vb.col(n) != vb.col(0)) return kInfinity;
        return 0.0;
    }

private:
    Index n_;
    Index q_;
};

/// Sum over edges of the indicator of {(u, u)} on each edge pair. The input
/// is laid out as in EdgeOperator: per edge, slot lo then slot hi.
class EdgePairConsensus final : public ProxOracle
{
public:
    EdgePairConsensus(Index num_edges, Index block_dim) : e_(num_edges), q_(block_dim) {}
    Index dim() const override { return 2 * e_ * q_; }

    Vector prox(const DiagonalMap& w, const Vector& v) const override
    {
        detail::require_dims(dim(), v.size(), "EdgePairConsensus::prox");
        detail::require_dims(dim(), w.size(), "EdgePairConsensus::prox metric");
        Vector out(v.size());
        const Vector& wv = w.values();
        for (Index e = 0; e < e_; ++e) {
            const Index a = 2 * e * q_;
            const Index b = a + q_;
            for (Index k = 0; k < q_; ++k) {
                const double ia = 1.0 / wv[a + k];
                const double ib = 1.0 / wv[b + k];
                const double avg = (ia * v[a + k] + ib * v[b + k]) / (ia + ib);
                out[a + k] = avg;
                out[b + k] = avg;
            }
        }
        return out;
    }

    double value(const Vector& v) const override
    {
        for (Index e = 0; e < e_; ++e)
            if (v.segment(2 * e * q_, q_) != v.segment(2 * e * q_ + q_, q_)) return kInfinity;
        return 0.0;
    }

private:
    Index e_;
    Index q_;
};

/// prox_{Sigma h*}(y) = y - Sigma prox_{Sigma^{-1} h}(Sigma^{-1} y).
inline Vector prox_conjugate(const ProxOracle& prox_h, const DiagonalMap& sigma, const Vector& y)
{
    return prox_h.prox_conjugate(sigma, y);
}

} // namespace ipd
