#pragma once

#include <cmath>
#include <memory>
#include <utility>

#include "ipd/linops.hpp"

namespace ipd {

/// Convex differentiable f with a cocoercive gradient:
///   <grad f(x) - grad f(y), x - y> >= ||grad f(x) - grad f(y)||^2_{E^{-1}}
/// for the nonnegative diagonal E returned by cocoercivity_diag().
class SmoothOracle
{
public:
    virtual ~SmoothOracle() = default;
    virtual Index dim() const = 0;
    virtual double value(const Vector& x) const = 0;
    virtual Vector grad(const Vector& x) const = 0;
    virtual Vector cocoercivity_diag() const = 0;
};

using SmoothPtr = std::shared_ptr<const SmoothOracle>;

namespace detail {

/// log(1 + exp(-t)), linear branch beyond |t| > 30.
inline double log1p_exp_neg(double t)
{
    if (t > 30.0) return std::exp(-t);
    if (t < -30.0) return -t + std::exp(t);
    return std::log1p(std::exp(-t));
}

/// 1 / (1 + exp(t)), evaluated without overflow.
inline double sigmoid_neg(double t)
{
    if (t >= 0.0) {
        const double e = std::exp(-t);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(t));
}

inline void require_labels(const Vector& labels)
{
    for (Index i = 0; i < labels.size(); ++i) {
        if (labels[i] != 1.0 && labels[i] != -1.0) {
            throw ValidationError("logistic: label " + std::to_string(i) + " is not +1 or -1");
        }
    }
}

} // namespace detail

struct ValueAndGradient
{
    double value;
    Vector grad;
};

/// (1/m) sum_i log(1 + exp(-y_i a_i^T x)) and its gradient, m = rows of A.
inline ValueAndGradient logistic_oracle(const LinearMap& a, const Vector& labels, const Vector& x)
{
    detail::require_dims(a.rows(), labels.size(), "logistic_oracle labels");
    detail::require_labels(labels);
    const Vector margin = labels.cwiseProduct(a.apply(x));
    const double inv_m = 1.0 / static_cast<double>(a.rows());
    double value = 0.0;
    Vector weights(margin.size());
    for (Index i = 0; i < margin.size(); ++i) {
        value += detail::log1p_exp_neg(margin[i]);
        weights[i] = -labels[i] * detail::sigmoid_neg(margin[i]);
    }
    return {inv_m * value, inv_m * a.apply_adjoint(weights)};
}

/// E = (||A||^2 / (4m)) I.
inline DiagonalMap cocoercivity_diag_logistic(const LinearMap& a, Index m)
{
    if (m < 1) throw ValidationError("cocoercivity_diag_logistic: m must be positive");
    const double l = operator_norm_sq(a) / (4.0 * static_cast<double>(m));
    return DiagonalMap::constant(a.cols(), l);
}

/// weight * sum_i log(1 + exp(-y_i a_i^T x)). With weight = 1/m_total a row
/// subset of the data gives one batch term of the full average loss.
class LogisticLoss final : public SmoothOracle
{
public:
    LogisticLoss(LinearMapPtr a, Vector labels, double weight)
        : a_(std::move(a)), labels_(std::move(labels)), weight_(weight)
    {
        detail::require_dims(a_->rows(), labels_.size(), "LogisticLoss labels");
        detail::require_labels(labels_);
        lipschitz_ = weight_ * operator_norm_sq(*a_) / 4.0;
    }

    Index dim() const override { return a_->cols(); }

    double value(const Vector& x) const override
    {
        const Vector margin = labels_.cwiseProduct(a_->apply(x));
        double v = 0.0;
        for (Index i = 0; i < margin.size(); ++i) v += detail::log1p_exp_neg(margin[i]);
        return weight_ * v;
    }

    Vector grad(const Vector& x) const override
    {
        const Vector margin = labels_.cwiseProduct(a_->apply(x));
        Vector w(margin.size());
        for (Index i = 0; i < margin.size(); ++i) w[i] = -labels_[i] * detail::sigmoid_neg(margin[i]);
        return weight_ * a_->apply_adjoint(w);
    }

    Vector cocoercivity_diag() const override { return Vector::Constant(dim(), lipschitz_); }

private:
    LinearMapPtr a_;
    Vector labels_;
    double weight_;
    double lipschitz_ = 0.0;
};

/// (weight/2) ||A x - b||^2.
class LeastSquaresLoss final : public SmoothOracle
{
public:
    LeastSquaresLoss(LinearMapPtr a, Vector b, double weight) : a_(std::move(a)), b_(std::move(b)), weight_(weight)
    {
        detail::require_dims(a_->rows(), b_.size(), "LeastSquaresLoss targets");
        lipschitz_ = weight_ * operator_norm_sq(*a_);
    }

    Index dim() const override { return a_->cols(); }
    double value(const Vector& x) const override { return 0.5 * weight_ * (a_->apply(x) - b_).squaredNorm(); }
    Vector grad(const Vector& x) const override { return weight_ * a_->apply_adjoint(a_->apply(x) - b_); }
    Vector cocoercivity_diag() const override { return Vector::Constant(dim(), lipschitz_); }

private:
    LinearMapPtr a_;
    Vector b_;
    double weight_;
    double lipschitz_ = 0.0;
};

/// (curvature/2) ||x - c||^2.
class QuadraticLoss final : public SmoothOracle
{
public:
    explicit QuadraticLoss(Vector center, double curvature = 1.0) : c_(std::move(center)), k_(curvature) {}
    Index dim() const override { return c_.size(); }
    double value(const Vector& x) const override { return 0.5 * k_ * (x - c_).squaredNorm(); }
    Vector grad(const Vector& x) const override { return k_ * (x - c_); }
    Vector cocoercivity_diag() const override { return Vector::Constant(dim(), k_); }

private:
    Vector c_;
    double k_;
};

class ZeroSmooth final : public SmoothOracle
{
public:
    explicit ZeroSmooth(Index n) : n_(n) {}
    Index dim() const override { return n_; }
    double value(const Vector&) const override { return 0.0; }
    Vector grad(const Vector& x) const override { return Vector::Zero(x.size()); }
    Vector cocoercivity_diag() const override { return Vector::Zero(n_); }

private:
    Index n_;
};

} // namespace ipd
