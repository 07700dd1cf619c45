#pragma once

#include "aglsc/dense.hpp"
#include "aglsc/error.hpp"
#include "aglsc/rng.hpp"
#include "aglsc/sparse.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace aglsc::graphconv {

// User-item bipartite graph: nodes 0..M-1 are users, M..M+N-1 are items.
struct BipartiteGraph {
    Index users = 0;
    Index items = 0;
    SparseMatrix adjacency;
    SparseMatrix normalized;
    std::vector<double> degree;
    // mirror[k] is the stored-entry index of (c, r) for stored entry k = (r, c).
    std::vector<Index> mirror;

    Index nodes() const noexcept { return users + items; }
};

inline std::vector<Index> mirror_entries(const SparseMatrix& a) {
    std::vector<Index> mirror(a.nnz(), -1);
    const auto off = a.offsets();
    const auto ci = a.col_indices();
    // Walking rows in order visits the entries of each column in row order,
    // which is exactly the stored order of the matching transposed row.
    std::vector<Index> cursor(off.begin(), off.end() - 1);
    for (Index r = 0; r < a.rows(); ++r) {
        for (Index k = off[r]; k < off[r + 1]; ++k) {
            const Index c = ci[k];
            const Index m = cursor[c]++;
            if (m >= off[c + 1] || ci[m] != r) throw ShapeError("mirror_entries: matrix pattern is not symmetric");
            mirror[k] = m;
        }
    }
    return mirror;
}

// A = [[0, R], [R^T, 0]].
inline SparseMatrix adjacency_from(const SparseMatrix& r) {
    std::vector<Triplet> t;
    t.reserve(2 * r.nnz());
    const Index m = r.rows();
    for (Index u = 0; u < m; ++u) {
        const auto cols = r.row_cols(u);
        const auto vals = r.row_values(u);
        for (std::size_t k = 0; k < cols.size(); ++k) {
            t.push_back({u, m + cols[k], vals[k]});
            t.push_back({m + cols[k], u, vals[k]});
        }
    }
    return SparseMatrix::from_triplets(m + r.cols(), m + r.cols(), std::move(t));
}

// D^{-1/2} A D^{-1/2}; zero-degree nodes keep all-zero rows and columns.
inline SparseMatrix normalize(const SparseMatrix& a) {
    if (a.rows() != a.cols()) throw ShapeError("normalize: adjacency must be square");
    std::vector<double> inv_sqrt(static_cast<std::size_t>(a.rows()), 0.0);
    for (Index r = 0; r < a.rows(); ++r) {
        double d = 0.0;
        for (double v : a.row_values(r)) d += v;
        if (d > 0.0) inv_sqrt[static_cast<std::size_t>(r)] = 1.0 / std::sqrt(d);
    }
    std::vector<Triplet> t;
    t.reserve(a.nnz());
    for (Index r = 0; r < a.rows(); ++r) {
        const auto cols = a.row_cols(r);
        const auto vals = a.row_values(r);
        for (std::size_t k = 0; k < cols.size(); ++k)
            t.push_back({r, cols[k], vals[k] * inv_sqrt[r] * inv_sqrt[cols[k]]});
    }
    return SparseMatrix::from_triplets(a.rows(), a.cols(), std::move(t));
}

inline BipartiteGraph build_adjacency(const SparseMatrix& r) {
    BipartiteGraph g;
    g.users = r.rows();
    g.items = r.cols();
    g.adjacency = adjacency_from(r);
    g.normalized = normalize(g.adjacency);
    g.degree.assign(static_cast<std::size_t>(g.nodes()), 0.0);
    for (Index n = 0; n < g.nodes(); ++n)
        for (double v : g.adjacency.row_values(n)) g.degree[n] += v;
    g.mirror = mirror_entries(g.normalized);
    return g;
}

// [H^0 .. H^L] with H^0 = E and H^l = A_norm H^{l-1}.
inline std::vector<DenseMatrix> propagate(const SparseMatrix& a_norm, std::span<const double> values,
                                          const DenseMatrix& e, int layers) {
    detail::require_shape(a_norm.rows() == a_norm.cols() && a_norm.cols() == e.rows(), "propagate",
                          std::to_string(a_norm.rows()) + "x" + std::to_string(a_norm.cols()) + " vs " + shape_str(e));
    std::vector<DenseMatrix> out;
    out.reserve(static_cast<std::size_t>(layers) + 1);
    out.push_back(e);
    for (int l = 1; l <= layers; ++l) out.push_back(spmm(a_norm, values, out.back()));
    return out;
}

inline std::vector<DenseMatrix> propagate(const SparseMatrix& a_norm, const DenseMatrix& e, int layers) {
    return propagate(a_norm, a_norm.values(), e, layers);
}

// Elementwise mean over the layer list.
inline DenseMatrix pool(const std::vector<DenseMatrix>& layers) {
    if (layers.empty()) throw ShapeError("pool: no layers");
    DenseMatrix sum = layers.front();
    for (std::size_t l = 1; l < layers.size(); ++l) {
        detail::require_shape(layers[l].rows() == sum.rows() && layers[l].cols() == sum.cols(), "pool",
                              shape_str(layers[l]) + " vs " + shape_str(sum));
        sum += layers[l];
    }
    return sum / static_cast<double>(layers.size());
}

// P[u, i] = <e_u[u], e_v[i]>.
inline DenseMatrix score_matrix(const DenseMatrix& e_u, const DenseMatrix& e_v) {
    detail::require_shape(e_u.cols() == e_v.cols(), "score_matrix", shape_str(e_u) + " vs " + shape_str(e_v));
    return e_u * e_v.transpose();
}

// Message dropout on the normalized adjacency: each stored entry is kept with
// probability 1 - rate and rescaled by 1 / (1 - rate).
inline std::vector<double> dropout_values(const SparseMatrix& a_norm, double rate, Rng& rng) {
    std::vector<double> v(a_norm.values().begin(), a_norm.values().end());
    if (rate <= 0.0) return v;
    const double scale = 1.0 / (1.0 - rate);
    for (double& x : v) x = rng.bernoulli(rate) ? 0.0 : x * scale;
    return v;
}

// Gradient of a loss w.r.t. E given its gradient w.r.t. the pooled output,
// for propagation with per-entry `values`: dE = sum_l (A^T)^l dPooled / (L+1).
inline DenseMatrix propagate_pool_backward(const BipartiteGraph& g, std::span<const double> values,
                                           const DenseMatrix& d_pooled, int layers) {
    const DenseMatrix c = d_pooled / static_cast<double>(layers + 1);
    if (layers == 0) return c;
    std::vector<double> transposed(values.size());
    for (std::size_t k = 0; k < values.size(); ++k) transposed[k] = values[static_cast<std::size_t>(g.mirror[k])];
    DenseMatrix acc = c;
    for (int l = 0; l < layers; ++l) acc = c + spmm(g.normalized, transposed, acc);
    return acc;
}

}  // namespace aglsc::graphconv
