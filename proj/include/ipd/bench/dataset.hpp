#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "ipd/error.hpp"
#include "ipd/linops.hpp"
#include "ipd/rng.hpp"

namespace ipd::bench {

/// Feature rows a_i and labels in {-1, +1}.
struct Dataset
{
    std::shared_ptr<SparseMap> a;
    Vector labels;
    /// Human-readable remarks produced while loading (label coercion, empty rows).
    std::vector<std::string> notices;

    Index samples() const { return a ? a->rows() : 0; }
    Index features() const { return a ? a->cols() : 0; }
};

namespace detail {

[[noreturn]] inline void libsvm_error(std::size_t line, const std::string& what)
{
    throw ValidationError("libsvm line " + std::to_string(line) + ": " + what);
}

inline double parse_number(const std::string& tok, std::size_t line, const char* what)
{
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(tok, &used);
    } catch (const std::exception&) {
        libsvm_error(line, std::string("bad ") + what + " '" + tok + "'");
    }
    if (used != tok.size() || !std::isfinite(v)) libsvm_error(line, std::string("bad ") + what + " '" + tok + "'");
    return v;
}

} // namespace detail

/// Parses "label idx:val idx:val ..." lines. Indices are 1-based; the
/// feature count is the largest index seen (or `min_features` if larger).
/// With `binary_labels`, labels {0, 1} are mapped to {-1, +1} with a notice
/// and anything other than +-1 is rejected; otherwise labels are kept as is.
inline Dataset parse_libsvm(std::istream& in, Index min_features = 0, bool binary_labels = true)
{
    using Triplet = Eigen::Triplet<double>;
    std::vector<Triplet> entries;
    std::vector<double> labels;
    std::vector<std::size_t> source_line;
    Index q = min_features;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::string tok;
        if (!(ls >> tok)) continue;
        labels.push_back(detail::parse_number(tok, lineno, "label"));
        source_line.push_back(lineno);
        const Index row = static_cast<Index>(labels.size()) - 1;
        long last = 0;
        while (ls >> tok) {
            const auto colon = tok.find(':');
            if (colon == std::string::npos || colon == 0) detail::libsvm_error(lineno, "expected idx:val, got '" + tok + "'");
            const std::string idx_text = tok.substr(0, colon);
            long idx = 0;
            std::size_t used = 0;
            try {
                idx = std::stol(idx_text, &used);
            } catch (const std::exception&) {
                detail::libsvm_error(lineno, "bad feature index '" + idx_text + "'");
            }
            if (used != idx_text.size() || idx < 1) detail::libsvm_error(lineno, "bad feature index '" + idx_text + "'");
            if (idx <= last) detail::libsvm_error(lineno, "feature indices must be strictly increasing");
            last = idx;
            const double v = detail::parse_number(tok.substr(colon + 1), lineno, "feature value");
            entries.emplace_back(row, static_cast<Index>(idx - 1), v);
            q = std::max<Index>(q, idx);
        }
    }
    if (labels.empty()) throw ValidationError("libsvm: no samples");
    if (q < 1) throw ValidationError("libsvm: no features");

    Dataset ds;
    bool zero_one = binary_labels;
    for (double l : labels) zero_one = zero_one && (l == 0.0 || l == 1.0);
    const bool has_zero = std::find(labels.begin(), labels.end(), 0.0) != labels.end();
    ds.labels.resize(static_cast<Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        double l = labels[i];
        if (zero_one && has_zero) {
            l = l == 0.0 ? -1.0 : 1.0;
        } else if (binary_labels && l != 1.0 && l != -1.0) {
            detail::libsvm_error(source_line[i], "label must be +1/-1 (or 0/1), got " + std::to_string(labels[i]));
        }
        ds.labels[static_cast<Index>(i)] = l;
    }
    if (zero_one && has_zero) ds.notices.push_back("labels {0, 1} mapped to {-1, +1}");

    SparseMap::Storage m(static_cast<Index>(labels.size()), q);
    m.setFromTriplets(entries.begin(), entries.end());
    m.makeCompressed();
    std::size_t empty = 0;
    for (Index i = 0; i < m.rows(); ++i) {
        if (m.row(i).norm() == 0.0) ++empty;
    }
    if (empty) ds.notices.push_back(std::to_string(empty) + " sample(s) have no nonzero feature");
    ds.a = std::make_shared<SparseMap>(std::move(m));
    return ds;
}

inline Dataset load_libsvm(const std::string& path, Index min_features = 0, bool binary_labels = true)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset '" + path + "'");
    return parse_libsvm(in, min_features, binary_labels);
}

/// b = A x_true + noise with Gaussian A and a k-sparse x_true.
struct LassoInstance
{
    std::shared_ptr<SparseMap> a;
    Vector b;
    Vector x_true;
};

inline LassoInstance synth_lasso(std::uint64_t seed, Index m, Index q, Index k, double noise)
{
    if (m < 1 || q < 1) throw ValidationError("synth: need m >= 1 and q >= 1");
    if (k < 0 || k > q) throw ValidationError("synth: sparsity must lie in [0, q]");
    if (noise < 0.0) throw ValidationError("synth: noise must be nonnegative");
    Rng rng(seed);
    Matrix a(m, q);
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < q; ++j) a(i, j) = rng.normal();
    Vector x = Vector::Zero(q);
    std::vector<Index> idx(static_cast<std::size_t>(q));
    for (Index j = 0; j < q; ++j) idx[static_cast<std::size_t>(j)] = j;
    for (Index j = 0; j < k; ++j) {
        const auto pick = static_cast<std::size_t>(j) + rng.index(static_cast<std::size_t>(q - j));
        std::swap(idx[static_cast<std::size_t>(j)], idx[pick]);
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        x[idx[static_cast<std::size_t>(j)]] = sign * (1.0 + rng.uniform());
    }
    Vector b = a * x;
    for (Index i = 0; i < m; ++i) b[i] += noise * rng.normal();
    return {std::make_shared<SparseMap>(SparseMap::from_dense(a)), std::move(b), std::move(x)};
}

/// Classification data: Gaussian features, labels sign(a_i^T w + noise e_i)
/// for a k-sparse w. A zero score is labelled +1.
inline Dataset synth_logistic(std::uint64_t seed, Index m, Index q, Index k, double noise)
{
    const LassoInstance base = synth_lasso(seed, m, q, k, noise);
    Dataset ds;
    ds.a = base.a;
    ds.labels.resize(m);
    for (Index i = 0; i < m; ++i) ds.labels[i] = base.b[i] < 0.0 ? -1.0 : 1.0;
    return ds;
}

} // namespace ipd::bench
