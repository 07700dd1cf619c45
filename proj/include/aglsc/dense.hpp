#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>

namespace aglsc {

// Row-major so that row slices (users, items) are contiguous.
using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

inline std::string shape_str(const DenseMatrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.allFinite();
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline double log_sigmoid(double x) { return -softplus(-x); }

template <typename Derived>
DenseMatrix sigmoid(const Eigen::MatrixBase<Derived>& m) {
    return m.unaryExpr([](double x) { return sigmoid(x); });
}

template <typename Derived>
DenseMatrix softplus(const Eigen::MatrixBase<Derived>& m) {
    return m.unaryExpr([](double x) { return softplus(x); });
}

}  // namespace aglsc
