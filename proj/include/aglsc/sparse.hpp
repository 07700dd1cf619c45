#pragma once

#include "aglsc/dense.hpp"
#include "aglsc/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace aglsc {

struct Triplet {
    Index row;
    Index col;
    double value;
};

// Compressed sparse row matrix. Column indices are strictly increasing within
// a row and no explicit zeros are stored.
class SparseMatrix {
public:
    SparseMatrix() = default;

    SparseMatrix(Index rows, Index cols) : rows_(rows), cols_(cols), offsets_(rows + 1, 0) {}

    // Duplicate coordinates are summed; entries that end up zero are dropped.
    static SparseMatrix from_triplets(Index rows, Index cols, std::vector<Triplet> entries) {
        for (const auto& t : entries) {
            if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols)
                throw ShapeError("SparseMatrix::from_triplets: entry (" + std::to_string(t.row) + "," +
                                 std::to_string(t.col) + ") outside " + std::to_string(rows) + "x" +
                                 std::to_string(cols));
            if (!std::isfinite(t.value)) throw NumericError("SparseMatrix::from_triplets: non-finite value");
        }
        std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
            return a.row != b.row ? a.row < b.row : a.col < b.col;
        });
        SparseMatrix m(rows, cols);
        std::size_t i = 0;
        while (i < entries.size()) {
            const Index r = entries[i].row;
            const Index c = entries[i].col;
            double v = 0.0;
            while (i < entries.size() && entries[i].row == r && entries[i].col == c) v += entries[i++].value;
            if (v == 0.0) continue;
            m.cols_idx_.push_back(c);
            m.values_.push_back(v);
            ++m.offsets_[r + 1];
        }
        for (Index r = 0; r < rows; ++r) m.offsets_[r + 1] += m.offsets_[r];
        return m;
    }

    static SparseMatrix from_dense(const DenseMatrix& d) {
        std::vector<Triplet> t;
        for (Index r = 0; r < d.rows(); ++r)
            for (Index c = 0; c < d.cols(); ++c)
                if (d(r, c) != 0.0) t.push_back({r, c, d(r, c)});
        return from_triplets(d.rows(), d.cols(), std::move(t));
    }

    static SparseMatrix identity(Index n) {
        std::vector<Triplet> t;
        for (Index i = 0; i < n; ++i) t.push_back({i, i, 1.0});
        return from_triplets(n, n, std::move(t));
    }

    Index rows() const noexcept { return rows_; }
    Index cols() const noexcept { return cols_; }
    std::size_t nnz() const noexcept { return values_.size(); }

    std::span<const Index> offsets() const noexcept { return offsets_; }
    std::span<const Index> col_indices() const noexcept { return cols_idx_; }
    std::span<const double> values() const noexcept { return values_; }

    std::span<const Index> row_cols(Index r) const {
        return std::span<const Index>(cols_idx_).subspan(offsets_[r], offsets_[r + 1] - offsets_[r]);
    }
    std::span<const double> row_values(Index r) const {
        return std::span<const double>(values_).subspan(offsets_[r], offsets_[r + 1] - offsets_[r]);
    }

    // Binary search within the row; 0 when absent.
    double at(Index r, Index c) const {
        const auto cs = row_cols(r);
        const auto it = std::lower_bound(cs.begin(), cs.end(), c);
        if (it == cs.end() || *it != c) return 0.0;
        return values_[offsets_[r] + (it - cs.begin())];
    }

    Index row_nnz(Index r) const { return offsets_[r + 1] - offsets_[r]; }

    DenseMatrix to_dense() const {
        DenseMatrix d = DenseMatrix::Zero(rows_, cols_);
        for (Index r = 0; r < rows_; ++r)
            for (Index k = offsets_[r]; k < offsets_[r + 1]; ++k) d(r, cols_idx_[k]) = values_[k];
        return d;
    }

    SparseMatrix transpose() const {
        SparseMatrix t(cols_, rows_);
        t.cols_idx_.resize(nnz());
        t.values_.resize(nnz());
        for (Index c : cols_idx_) ++t.offsets_[c + 1];
        for (Index c = 0; c < cols_; ++c) t.offsets_[c + 1] += t.offsets_[c];
        std::vector<Index> next(t.offsets_.begin(), t.offsets_.end() - 1);
        // Rows visited in order, so each transposed row receives increasing columns.
        for (Index r = 0; r < rows_; ++r) {
            for (Index k = offsets_[r]; k < offsets_[r + 1]; ++k) {
                const Index dst = next[cols_idx_[k]]++;
                t.cols_idx_[dst] = r;
                t.values_[dst] = values_[k];
            }
        }
        return t;
    }

    bool operator==(const SparseMatrix&) const = default;

private:
    Index rows_ = 0;
    Index cols_ = 0;
    std::vector<Index> offsets_{0};
    std::vector<Index> cols_idx_;
    std::vector<double> values_;
};

// out = a * b using `values` in place of a's stored values (same pattern).
// Accumulation runs row by row in stored-entry order.
inline DenseMatrix spmm(const SparseMatrix& a, std::span<const double> values, const DenseMatrix& b) {
    detail::require_shape(a.cols() == b.rows(), "spmm",
                          std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " * " + shape_str(b));
    detail::require_shape(values.size() == a.nnz(), "spmm", "value override length");
    DenseMatrix out = DenseMatrix::Zero(a.rows(), b.cols());
    const auto off = a.offsets();
    const auto ci = a.col_indices();
    const auto val = values;
    for (Index r = 0; r < a.rows(); ++r) {
        auto dst = out.row(r);
        for (Index k = off[r]; k < off[r + 1]; ++k) dst.noalias() += val[k] * b.row(ci[k]);
    }
    return out;
}

inline DenseMatrix spmm(const SparseMatrix& a, const DenseMatrix& b) { return spmm(a, a.values(), b); }

// a * b for two sparse operands (Gustavson row accumulation).
inline SparseMatrix spgemm(const SparseMatrix& a, const SparseMatrix& b) {
    detail::require_shape(a.cols() == b.rows(), "spgemm",
                          std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " * " +
                              std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    std::vector<Triplet> out;
    std::vector<double> acc(static_cast<std::size_t>(b.cols()), 0.0);
    std::vector<char> seen(static_cast<std::size_t>(b.cols()), 0);
    std::vector<Index> touched;
    for (Index r = 0; r < a.rows(); ++r) {
        touched.clear();
        const auto ac = a.row_cols(r);
        const auto av = a.row_values(r);
        for (std::size_t k = 0; k < ac.size(); ++k) {
            const auto bc = b.row_cols(ac[k]);
            const auto bv = b.row_values(ac[k]);
            for (std::size_t j = 0; j < bc.size(); ++j) {
                if (!seen[bc[j]]) {
                    seen[bc[j]] = 1;
                    touched.push_back(bc[j]);
                }
                acc[bc[j]] += av[k] * bv[j];
            }
        }
        std::sort(touched.begin(), touched.end());
        for (Index c : touched) {
            out.push_back({r, c, acc[c]});
            acc[c] = 0.0;
            seen[c] = 0;
        }
    }
    return SparseMatrix::from_triplets(a.rows(), b.cols(), std::move(out));
}

}  // namespace aglsc
