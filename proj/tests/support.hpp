#pragma once

#include <Eigen/Dense>
#include <memory>

#include "ipd/linops.hpp"
#include "ipd/rng.hpp"

namespace ipd::testing {

inline Vector random_vector(Rng& rng, Index n, double scale = 1.0)
{
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
    return v;
}

inline Vector random_positive(Rng& rng, Index n, double lo = 0.1, double hi = 3.0)
{
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
    return v;
}

/// Dense matrix with each entry nonzero with probability `density`.
inline Matrix random_sparse_dense(Rng& rng, Index rows, Index cols, double density)
{
    Matrix m = Matrix::Zero(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j)
            if (rng.uniform() < density) m(i, j) = rng.normal();
    return m;
}

/// Same, but every row has at least one nonzero.
inline Matrix random_sparse_no_zero_rows(Rng& rng, Index rows, Index cols, double density)
{
    Matrix m = random_sparse_dense(rng, rows, cols, density);
    for (Index i = 0; i < rows; ++i)
        if (m.row(i).isZero(0.0)) m(i, static_cast<Index>(rng.index(static_cast<std::size_t>(cols)))) = 1.0 + rng.uniform();
    return m;
}

inline double largest_eigenvalue(const Matrix& sym)
{
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
    return es.eigenvalues().maxCoeff();
}

} // namespace ipd::testing
