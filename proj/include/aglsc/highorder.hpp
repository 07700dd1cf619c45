#pragma once

#include "aglsc/dense.hpp"
#include "aglsc/error.hpp"
#include "aglsc/sparse.hpp"

#include <cmath>
#include <utility>

namespace aglsc::highorder {

// R_hat[i, j] = sigmoid(sum_k h_k E_U[i, k] E_V[j, k]), evaluated as one
// matrix product (E_U diag(h)) E_V^T.
inline DenseMatrix interaction_logits(const DenseMatrix& e_u, const DenseMatrix& e_v, const RowVector& h) {
    detail::require_shape(e_u.cols() == e_v.cols() && e_u.cols() == h.cols(), "interaction_head",
                          shape_str(e_u) + ", " + shape_str(e_v) + ", h of " + std::to_string(h.cols()));
    return (e_u.array().rowwise() * h.array()).matrix() * e_v.transpose();
}

inline DenseMatrix interaction_head(const DenseMatrix& e_u, const DenseMatrix& e_v, const RowVector& h) {
    return sigmoid(interaction_logits(e_u, e_v, h));
}

struct Similarity {
    DenseMatrix users;  // M x M
    DenseMatrix items;  // N x N
};

// W_hat_U = E_U (R_hat E_V)^T and W_hat_V = E_V (R_hat^T E_U)^T.
inline Similarity predicted_similarity(const DenseMatrix& e_u, const DenseMatrix& e_v, const DenseMatrix& r_hat) {
    detail::require_shape(r_hat.rows() == e_u.rows() && r_hat.cols() == e_v.rows() && e_u.cols() == e_v.cols(),
                          "predicted_similarity",
                          "E_U " + shape_str(e_u) + ", E_V " + shape_str(e_v) + ", R_hat " + shape_str(r_hat));
    Similarity s;
    s.users = e_u * (r_hat * e_v).transpose();
    s.items = e_v * (r_hat.transpose() * e_u).transpose();
    return s;
}

struct Cooccurrence {
    SparseMatrix users;  // R R^T
    SparseMatrix items;  // R^T R
};

inline Cooccurrence cooccurrence(const SparseMatrix& r) {
    const SparseMatrix rt = r.transpose();
    return {spgemm(r, rt), spgemm(rt, r)};
}

// Nonnegative transform applied to both sides before normalization.
inline double positive_part(double x) { return softplus(x); }

// Row-normalizes positive_part(m) + eps into probability rows.
inline DenseMatrix to_row_distribution(const DenseMatrix& m, double eps) {
    DenseMatrix p = m.unaryExpr([eps](double x) { return positive_part(x) + eps; });
    for (Index r = 0; r < p.rows(); ++r) p.row(r) /= p.row(r).sum();
    return p;
}

// sum over rows of KL(p_row || q_row) for row-stochastic p and q.
inline double row_kl(const DenseMatrix& p, const DenseMatrix& q) {
    detail::require_shape(p.rows() == q.rows() && p.cols() == q.cols(), "row_kl", shape_str(p) + " vs " + shape_str(q));
    double total = 0.0;
    for (Index i = 0; i < p.size(); ++i) {
        const double pi = p.data()[i];
        if (pi > 0.0) total += pi * (std::log(pi) - std::log(q.data()[i]));
    }
    return total;
}

struct KlResult {
    double value = 0.0;
    DenseMatrix d_predicted;  // dL/dW_hat
};

// sum_rows KL(normalize(W) || normalize(W_hat)) and its gradient w.r.t. W_hat.
inline KlResult constraint_kl(const DenseMatrix& observed, const DenseMatrix& predicted, double eps = 1e-8) {
    detail::require_shape(observed.rows() == predicted.rows() && observed.cols() == predicted.cols(), "constraint_loss",
                          shape_str(observed) + " vs " + shape_str(predicted));
    const DenseMatrix p = to_row_distribution(observed, eps);
    KlResult res;
    res.d_predicted.resize(predicted.rows(), predicted.cols());
    for (Index r = 0; r < predicted.rows(); ++r) {
        double total = 0.0;
        for (Index c = 0; c < predicted.cols(); ++c) total += positive_part(predicted(r, c)) + eps;
        double kl = 0.0;
        for (Index c = 0; c < predicted.cols(); ++c) {
            const double x = predicted(r, c);
            const double s = positive_part(x) + eps;
            const double pc = p(r, c);
            kl += pc * (std::log(pc) - std::log(s / total));
            res.d_predicted(r, c) = (1.0 / total - pc / s) * sigmoid(x);
        }
        res.value += kl;
    }
    return res;
}

inline double constraint_loss(const DenseMatrix& observed, const DenseMatrix& predicted, double eps = 1e-8) {
    return constraint_kl(observed, predicted, eps).value;
}

struct HeadGradients {
    double loss = 0.0;
    double loss_users = 0.0;
    double loss_items = 0.0;
    DenseMatrix d_e_u;
    DenseMatrix d_e_v;
    RowVector d_h;
};

// Full forward/backward of the high-order constraint on a (sub)graph.
// `w_users`/`w_items` are the observed co-occurrence blocks for the rows in
// e_u/e_v. The inner sums over items (users) are rescaled by item_scale
// (user_scale) so a column sample estimates the full-graph similarity. Each
// KL term is divided by its row count when `mean_rows` is set.
inline HeadGradients constraint_forward_backward(const DenseMatrix& e_u, const DenseMatrix& e_v, const RowVector& h,
                                                 const DenseMatrix& w_users, const DenseMatrix& w_items,
                                                 double eps = 1e-8, double user_scale = 1.0,
                                                 double item_scale = 1.0, bool mean_rows = false) {
    detail::require_shape(w_users.rows() == e_u.rows() && w_users.cols() == e_u.rows() &&
                              w_items.rows() == e_v.rows() && w_items.cols() == e_v.rows(),
                          "constraint_loss", "co-occurrence blocks do not match embedding rows");
    const DenseMatrix eu_h = (e_u.array().rowwise() * h.array()).matrix();
    const DenseMatrix r_hat = sigmoid(eu_h * e_v.transpose());
    const DenseMatrix a_users = item_scale * (r_hat * e_v);                // M x d
    const DenseMatrix a_items = user_scale * (r_hat.transpose() * e_u);    // N x d
    const DenseMatrix pred_users = e_u * a_users.transpose();
    const DenseMatrix pred_items = e_v * a_items.transpose();

    KlResult ku = constraint_kl(w_users, pred_users, eps);
    KlResult kv = constraint_kl(w_items, pred_items, eps);
    const double su = mean_rows ? 1.0 / static_cast<double>(std::max<Index>(1, e_u.rows())) : 1.0;
    const double sv = mean_rows ? 1.0 / static_cast<double>(std::max<Index>(1, e_v.rows())) : 1.0;
    ku.d_predicted *= su;
    kv.d_predicted *= sv;

    HeadGradients g;
    g.loss_users = ku.value * su;
    g.loss_items = kv.value * sv;
    g.loss = g.loss_users + g.loss_items;

    // pred_users = E_U A_U^T, A_U = s_v R_hat E_V
    g.d_e_u = ku.d_predicted * a_users;
    const DenseMatrix d_a_users = ku.d_predicted.transpose() * e_u;
    // pred_items = E_V A_V^T, A_V = s_u R_hat^T E_U
    g.d_e_v = kv.d_predicted * a_items;
    const DenseMatrix d_a_items = kv.d_predicted.transpose() * e_v;

    DenseMatrix d_r_hat = item_scale * (d_a_users * e_v.transpose());
    d_r_hat.noalias() += user_scale * (e_u * d_a_items.transpose());
    g.d_e_v.noalias() += item_scale * (r_hat.transpose() * d_a_users);
    g.d_e_u.noalias() += user_scale * (r_hat * d_a_items);

    const DenseMatrix d_logits = (d_r_hat.array() * r_hat.array() * (1.0 - r_hat.array())).matrix();
    const DenseMatrix d_eu_h = d_logits * e_v;
    g.d_e_u.array() += d_eu_h.array().rowwise() * h.array();
    g.d_h = (e_u.array() * d_eu_h.array()).colwise().sum().matrix();
    g.d_e_v.noalias() += d_logits.transpose() * eu_h;
    return g;
}

}  // namespace aglsc::highorder
