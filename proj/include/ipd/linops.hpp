#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "ipd/error.hpp"
#include "ipd/graph.hpp"

namespace ipd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

namespace detail {

inline void require_finite(const Vector& v, const char* what)
{
    if (!v.allFinite()) throw Error(std::string(what) + ": non-finite entry");
}

} // namespace detail

/// Linear operator X -> Y between finite-dimensional Euclidean spaces.
///
/// Implementations provide the forward map, its adjoint and a walk over the
/// stored nonzero entries; the latter is what the diagonal preconditioner
/// needs (absolute entry powers summed per row and per column).
class LinearMap
{
public:
    virtual ~LinearMap() = default;

    /// Output dimension.
    virtual Index rows() const = 0;
    /// Input dimension.
    virtual Index cols() const = 0;

    Vector apply(const Vector& x) const
    {
        detail::require_dims(cols(), x.size(), "LinearMap::apply");
        Vector out(rows());
        apply_into(x, out);
        return out;
    }

    Vector apply_adjoint(const Vector& y) const
    {
        detail::require_dims(rows(), y.size(), "LinearMap::apply_adjoint");
        Vector out(cols());
        adjoint_into(y, out);
        return out;
    }

    /// Calls fn(i, j, D_ij) for every stored entry. Entries not visited are zero.
    virtual void for_each_nonzero(const std::function<void(Index, Index, double)>& fn) const = 0;

protected:
    virtual void apply_into(const Vector& x, Vector& out) const = 0;
    virtual void adjoint_into(const Vector& y, Vector& out) const = 0;
};

using LinearMapPtr = std::shared_ptr<const LinearMap>;

/// Returns D*y.
inline Vector apply_adjoint(const LinearMap& d, const Vector& y) { return d.apply_adjoint(y); }

/// Compressed-row sparse matrix.
class SparseMap final : public LinearMap
{
public:
    using Storage = Eigen::SparseMatrix<double, Eigen::RowMajor>;

    explicit SparseMap(Storage m) : m_(std::move(m)) { m_.makeCompressed(); }

    static SparseMap from_dense(const Matrix& dense)
    {
        return SparseMap(Storage(dense.sparseView()));
    }

    static SparseMap identity(Index n)
    {
        Storage m(n, n);
        m.setIdentity();
        return SparseMap(std::move(m));
    }

    static SparseMap zero(Index rows, Index cols) { return SparseMap(Storage(rows, cols)); }

    Index rows() const override { return m_.rows(); }
    Index cols() const override { return m_.cols(); }
    const Storage& storage() const noexcept { return m_; }

    /// Rows [start, start + count) as a new matrix.
    SparseMap row_block(Index start, Index count) const { return SparseMap(Storage(m_.middleRows(start, count))); }

    void for_each_nonzero(const std::function<void(Index, Index, double)>& fn) const override
    {
        for (Index i = 0; i < m_.outerSize(); ++i)
            for (Storage::InnerIterator it(m_, i); it; ++it) fn(it.row(), it.col(), it.value());
    }

protected:
    void apply_into(const Vector& x, Vector& out) const override { out.noalias() = m_ * x; }
    void adjoint_into(const Vector& y, Vector& out) const override { out.noalias() = m_.transpose() * y; }

private:
    Storage m_;
};

class DenseMap final : public LinearMap
{
public:
    explicit DenseMap(Matrix m) : m_(std::move(m)) {}

    Index rows() const override { return m_.rows(); }
    Index cols() const override { return m_.cols(); }
    const Matrix& matrix() const noexcept { return m_; }

    void for_each_nonzero(const std::function<void(Index, Index, double)>& fn) const override
    {
        for (Index j = 0; j < m_.cols(); ++j)
            for (Index i = 0; i < m_.rows(); ++i)
                if (m_(i, j) != 0.0) fn(i, j, m_(i, j));
    }

protected:
    void apply_into(const Vector& x, Vector& out) const override { out.noalias() = m_ * x; }
    void adjoint_into(const Vector& y, Vector& out) const override { out.noalias() = m_.transpose() * y; }

private:
    Matrix m_;
};

/// Diagonal map with strictly positive entries (step-size and metric maps).
class DiagonalMap final : public LinearMap
{
public:
    explicit DiagonalMap(Vector diag) : d_(std::move(diag))
    {
        if (d_.size() == 0) throw ValidationError("DiagonalMap: empty diagonal");
        for (Index i = 0; i < d_.size(); ++i) {
            if (!(d_[i] > 0.0) || !std::isfinite(d_[i])) {
                throw ValidationError("DiagonalMap: entry " + std::to_string(i) + " is not strictly positive");
            }
        }
    }

    static DiagonalMap constant(Index n, double value) { return DiagonalMap(Vector::Constant(n, value)); }

    Index rows() const override { return d_.size(); }
    Index cols() const override { return d_.size(); }
    Index size() const noexcept { return d_.size(); }
    const Vector& values() const noexcept { return d_; }
    double operator[](Index i) const { return d_[i]; }
    double max_entry() const { return d_.maxCoeff(); }
    double min_entry() const { return d_.minCoeff(); }

    DiagonalMap inverse() const { return DiagonalMap(d_.cwiseInverse()); }
    DiagonalMap scaled(double c) const { return DiagonalMap(c * d_); }

    /// The same diagonal repeated `times` times (block-replicated map).
    DiagonalMap replicated(Index times) const { return DiagonalMap(d_.replicate(times, 1)); }

    void for_each_nonzero(const std::function<void(Index, Index, double)>& fn) const override
    {
        for (Index i = 0; i < d_.size(); ++i) fn(i, i, d_[i]);
    }

protected:
    void apply_into(const Vector& x, Vector& out) const override { out = d_.cwiseProduct(x); }
    void adjoint_into(const Vector& y, Vector& out) const override { out = d_.cwiseProduct(y); }

private:
    Vector d_;
};

/// Edge replication D: X^N -> X^{2|E|}, block e = (x_lo, x_hi) for edge
/// e = {lo, hi}. D*D acts on node n as multiplication by its degree.
class EdgeOperator final : public LinearMap
{
public:
    EdgeOperator(std::shared_ptr<const AgentGraph> graph, Index block_dim)
        : graph_(std::move(graph)), q_(block_dim)
    {
        if (!graph_) throw ValidationError("EdgeOperator: null graph");
        if (q_ < 1) throw ValidationError("EdgeOperator: block dimension must be positive");
    }

    Index rows() const override { return 2 * static_cast<Index>(graph_->num_edges()) * q_; }
    Index cols() const override { return static_cast<Index>(graph_->num_nodes()) * q_; }
    Index block_dim() const noexcept { return q_; }
    const AgentGraph& graph() const noexcept { return *graph_; }

    void for_each_nonzero(const std::function<void(Index, Index, double)>& fn) const override
    {
        const auto& edges = graph_->edges();
        for (std::size_t e = 0; e < edges.size(); ++e) {
            const Index base = 2 * static_cast<Index>(e) * q_;
            for (Index k = 0; k < q_; ++k) {
                fn(base + k, static_cast<Index>(edges[e].lo) * q_ + k, 1.0);
                fn(base + q_ + k, static_cast<Index>(edges[e].hi) * q_ + k, 1.0);
            }
        }
    }

protected:
    void apply_into(const Vector& x, Vector& out) const override
    {
        const auto& edges = graph_->edges();
        for (std::size_t e = 0; e < edges.size(); ++e) {
            const Index base = 2 * static_cast<Index>(e) * q_;
            out.segment(base, q_) = x.segment(static_cast<Index>(edges[e].lo) * q_, q_);
            out.segment(base + q_, q_) = x.segment(static_cast<Index>(edges[e].hi) * q_, q_);
        }
    }

    void adjoint_into(const Vector& y, Vector& out) const override
    {
        out.setZero();
        const auto& edges = graph_->edges();
        for (std::size_t e = 0; e < edges.size(); ++e) {
            const Index base = 2 * static_cast<Index>(e) * q_;
            out.segment(static_cast<Index>(edges[e].lo) * q_, q_) += y.segment(base, q_);
            out.segment(static_cast<Index>(edges[e].hi) * q_, q_) += y.segment(base + q_, q_);
        }
    }

private:
    std::shared_ptr<const AgentGraph> graph_;
    Index q_;
};

/// diag(left) * D * diag(right), used to form the normalized coupling in the
/// step-size conditions without materializing it.
class ScaledMap final : public LinearMap
{
public:
    ScaledMap(const LinearMap& d, Vector left, Vector right) : d_(d), left_(std::move(left)), right_(std::move(right))
    {
        detail::require_dims(d_.rows(), left_.size(), "ScaledMap left");
        detail::require_dims(d_.cols(), right_.size(), "ScaledMap right");
    }

    Index rows() const override { return d_.rows(); }
    Index cols() const override { return d_.cols(); }

    void for_each_nonzero(const std::function<void(Index, Index, double)>& fn) const override
    {
        d_.for_each_nonzero([&](Index i, Index j, double v) { fn(i, j, left_[i] * v * right_[j]); });
    }

protected:
    void apply_into(const Vector& x, Vector& out) const override
    {
        out = left_.cwiseProduct(d_.apply(right_.cwiseProduct(x)));
    }
    void adjoint_into(const Vector& y, Vector& out) const override
    {
        out = right_.cwiseProduct(d_.apply_adjoint(left_.cwiseProduct(y)));
    }

private:
    const LinearMap& d_;
    Vector left_;
    Vector right_;
};

/// True when the map has no nonzero entry.
inline bool is_zero_map(const LinearMap& d)
{
    bool any = false;
    d.for_each_nonzero([&](Index, Index, double v) { any = any || v != 0.0; });
    return !any;
}

/// N blocks of a common dimension q, stored column-wise (column n = block n).
class BlockVector
{
public:
    BlockVector(Index num_blocks, Index block_dim) : data_(Matrix::Zero(block_dim, num_blocks))
    {
        if (num_blocks < 1 || block_dim < 1) throw ValidationError("BlockVector: needs N >= 1 blocks of dim >= 1");
    }

    explicit BlockVector(Matrix columns) : data_(std::move(columns))
    {
        if (data_.cols() < 1 || data_.rows() < 1) throw ValidationError("BlockVector: needs N >= 1 blocks of dim >= 1");
    }

    static BlockVector from_flat(const Vector& flat, Index num_blocks)
    {
        if (num_blocks < 1 || flat.size() % num_blocks != 0) {
            throw DimensionError("BlockVector::from_flat: size not divisible by block count");
        }
        return BlockVector(Eigen::Map<const Matrix>(flat.data(), flat.size() / num_blocks, num_blocks));
    }

    Index num_blocks() const noexcept { return data_.cols(); }
    Index block_dim() const noexcept { return data_.rows(); }

    auto block(Index n) { return data_.col(n); }
    auto block(Index n) const { return data_.col(n); }

    Matrix& matrix() noexcept { return data_; }
    const Matrix& matrix() const noexcept { return data_; }

    Vector mean() const { return data_.rowwise().mean(); }

    Vector flatten() const { return Eigen::Map<const Vector>(data_.data(), data_.size()); }

    bool operator==(const BlockVector& other) const { return data_ == other.data_; }

private:
    Matrix data_;
};

/// Row sums of |D_ij|^s and column sums of |D_ij|^(2-s), with 0^0 = 0.
struct PowerSums
{
    Vector row_sums;
    Vector col_sums;
};

inline PowerSums power_sums(const LinearMap& d, double s)
{
    if (!(s >= 0.0 && s <= 2.0)) throw ValidationError("power_sums: exponent s must lie in [0, 2]");
    PowerSums out{Vector::Zero(d.rows()), Vector::Zero(d.cols())};
    d.for_each_nonzero([&](Index i, Index j, double v) {
        const double a = std::abs(v);
        if (a == 0.0) return;
        out.row_sums[i] += std::pow(a, s);
        out.col_sums[j] += std::pow(a, 2.0 - s);
    });
    return out;
}

struct PowerIterationOptions
{
    double tol = 1e-9;
    int max_iters = 1000;
};

/// Estimates ||M||^2 by power iteration on M*M from the normalized all-ones
/// vector. Deterministic. Throws ConvergenceError carrying the last estimate
/// when the relative change does not drop below tol within the cap.
inline double operator_norm_sq(const LinearMap& m, PowerIterationOptions opts = {})
{
    const Index n = m.cols();
    if (n == 0 || m.rows() == 0) throw ValidationError("operator_norm_sq: empty operator");
    Vector v = Vector::Ones(n) / std::sqrt(static_cast<double>(n));
    Vector w = m.apply_adjoint(m.apply(v));
    if (w.norm() == 0.0) {
        // all-ones lies in the null space; retry from a fixed non-uniform start
        for (Index j = 0; j < n; ++j) v[j] = 1.0 + 0.5 * std::sin(1.0 + static_cast<double>(j));
        v.normalize();
        w = m.apply_adjoint(m.apply(v));
        if (w.norm() == 0.0) throw ValidationError("operator_norm_sq: operator is zero");
    }
    double lambda = v.dot(w);
    for (int it = 0; it < opts.max_iters; ++it) {
        v = w / w.norm();
        w = m.apply_adjoint(m.apply(v));
        const double next = v.dot(w);
        if (std::abs(next - lambda) <= opts.tol * std::abs(next)) return next;
        lambda = next;
    }
    throw ConvergenceError("operator_norm_sq: power iteration did not converge", lambda);
}

inline double operator_norm_sq(const LinearMap& m, double tol)
{
    return operator_norm_sq(m, PowerIterationOptions{tol, 1000});
}

/// Primal-dual pair z = (x, y).
struct PrimalDualPair
{
    Vector x;
    Vector y;
};

/// <z1, P z2> with P = [[I/tau, D*], [D, I/sigma]].
inline double p_inner(const PrimalDualPair& z1, const PrimalDualPair& z2, double tau, double sigma, const LinearMap& d)
{
    detail::require_dims(d.cols(), z1.x.size(), "p_inner x1");
    detail::require_dims(d.cols(), z2.x.size(), "p_inner x2");
    detail::require_dims(d.rows(), z1.y.size(), "p_inner y1");
    detail::require_dims(d.rows(), z2.y.size(), "p_inner y2");
    return z1.x.dot(z2.x) / tau + z1.x.dot(d.apply_adjoint(z2.y)) + z1.y.dot(d.apply(z2.x)) + z1.y.dot(z2.y) / sigma;
}

/// Dense copy assembled from the stored entries (test and validation helper).
inline Matrix to_dense(const LinearMap& d)
{
    Matrix out = Matrix::Zero(d.rows(), d.cols());
    d.for_each_nonzero([&](Index i, Index j, double v) { out(i, j) += v; });
    return out;
}

} // namespace ipd
