#include "aglsc/gradcheck.hpp"
#include "aglsc/highorder.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <cmath>

using namespace aglsc;
using namespace aglsc::highorder;

namespace {

SparseMatrix random_interactions(Rng& rng, Index m, Index n, double density) {
    std::vector<Triplet> t;
    for (Index u = 0; u < m; ++u)
        for (Index i = 0; i < n; ++i)
            if (rng.bernoulli(density)) t.push_back({u, i, 1.0});
    return SparseMatrix::from_triplets(m, n, std::move(t));
}

// Row-wise KL written directly from the definition.
double reference_kl(const DenseMatrix& w, const DenseMatrix& w_hat, double eps) {
    double total = 0.0;
    for (Index r = 0; r < w.rows(); ++r) {
        double sp = 0.0, sq = 0.0;
        for (Index c = 0; c < w.cols(); ++c) {
            sp += std::log1p(std::exp(w(r, c))) + eps;
            sq += std::log1p(std::exp(w_hat(r, c))) + eps;
        }
        for (Index c = 0; c < w.cols(); ++c) {
            const double p = (std::log1p(std::exp(w(r, c))) + eps) / sp;
            const double q = (std::log1p(std::exp(w_hat(r, c))) + eps) / sq;
            total += p * std::log(p / q);
        }
    }
    return total;
}

}  // namespace

TEST(Head, InteractionHeadIsWeightedInnerProduct) {
    Rng rng(1);
    const DenseMatrix eu = sample_gaussian(rng, 3, 4), ev = sample_gaussian(rng, 5, 4);
    const RowVector h = sample_gaussian(rng, 1, 4).row(0);
    const DenseMatrix r_hat = interaction_head(eu, ev, h);
    for (Index u = 0; u < 3; ++u)
        for (Index i = 0; i < 5; ++i) {
            double x = 0.0;
            for (Index k = 0; k < 4; ++k) x += eu(u, k) * h(k) * ev(i, k);
            EXPECT_NEAR(r_hat(u, i), 1.0 / (1.0 + std::exp(-x)), 1e-14);
        }
}

TEST(Similarity, PredictedMatchesElementwiseDefinition) {
    Rng rng(2);
    const DenseMatrix eu = sample_gaussian(rng, 4, 3), ev = sample_gaussian(rng, 6, 3);
    const DenseMatrix r_hat = interaction_head(eu, ev, RowVector::Ones(3));
    const auto s = predicted_similarity(eu, ev, r_hat);
    ASSERT_EQ(s.users.rows(), 4);
    ASSERT_EQ(s.users.cols(), 4);
    ASSERT_EQ(s.items.rows(), 6);
    ASSERT_EQ(s.items.cols(), 6);
    // W_U(a, b) = sum_i r_hat(b, i) <e_a, e_i>, W_V(i, j) = sum_u r_hat(u, j) <e_i, e_u>.
    for (Index a = 0; a < 4; ++a)
        for (Index b = 0; b < 4; ++b) {
            double want = 0.0;
            for (Index i = 0; i < 6; ++i) want += r_hat(b, i) * eu.row(a).dot(ev.row(i));
            EXPECT_NEAR(s.users(a, b), want, 1e-12);
        }
    for (Index i = 0; i < 6; ++i)
        for (Index j = 0; j < 6; ++j) {
            double want = 0.0;
            for (Index u = 0; u < 4; ++u) want += r_hat(u, j) * ev.row(i).dot(eu.row(u));
            EXPECT_NEAR(s.items(i, j), want, 1e-12);
        }
}

TEST(Cooccurrence, CountsSharedNeighbours) {
    auto r = SparseMatrix::from_triplets(3, 3, {{0, 0, 1}, {0, 1, 1}, {1, 1, 1}, {2, 2, 1}});
    const auto c = cooccurrence(r);
    EXPECT_EQ(c.users.at(0, 0), 2.0);
    EXPECT_EQ(c.users.at(0, 1), 1.0);
    EXPECT_EQ(c.users.at(0, 2), 0.0);
    EXPECT_EQ(c.items.at(0, 1), 1.0);
    EXPECT_EQ(c.items.at(1, 1), 2.0);
}

TEST(Cooccurrence, SymmetricPositiveSemidefinite) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Index m = 2 + static_cast<Index>(rng.below(19));
        const Index n = 2 + static_cast<Index>(rng.below(19));
        const auto r = random_interactions(rng, m, n, 0.3);
        const auto c = cooccurrence(r);
        for (const auto* w : {&c.users, &c.items}) {
            const DenseMatrix d = w->to_dense();
            EXPECT_EQ(d, DenseMatrix(d.transpose()));
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(d);
            EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9);
        }
        EXPECT_EQ(c.users.to_dense(), DenseMatrix(r.to_dense() * r.to_dense().transpose()));
    }
}

TEST(ConstraintLoss, MatchesDefinitionAndIsNonNegative) {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const DenseMatrix w = sample_gaussian(rng, 5, 7) * 3.0;
        const DenseMatrix w_hat = sample_gaussian(rng, 5, 7) * 3.0;
        const double got = constraint_loss(w, w_hat, 1e-8);
        EXPECT_NEAR(got, reference_kl(w, w_hat, 1e-8), 1e-10);
        EXPECT_GE(got, 0.0);
    }
}

TEST(ConstraintLoss, ZeroWhenPredictionEqualsObservation) {
    Rng rng(5);
    const DenseMatrix w = sample_gaussian(rng, 6, 6);
    EXPECT_NEAR(constraint_loss(w, w), 0.0, 1e-15);
    const DenseMatrix counts = DenseMatrix::Constant(3, 4, 2.0);
    EXPECT_NEAR(constraint_loss(counts, counts), 0.0, 1e-15);
}

TEST(ConstraintLoss, ZeroRowsStayFinite) {
    const DenseMatrix w = DenseMatrix::Zero(2, 3);
    DenseMatrix w_hat = DenseMatrix::Zero(2, 3);
    w_hat(0, 0) = -800.0;
    EXPECT_TRUE(std::isfinite(constraint_loss(w, w_hat)));
}

TEST(ConstraintLoss, GradientMatchesFiniteDifferences) {
    Rng rng(6);
    ParamStore ps;
    ps.add("w_hat", sample_gaussian(rng, 4, 5) * 2.0);
    const DenseMatrix w = sample_gaussian(rng, 4, 5) * 2.0;
    ps.grad("w_hat") = constraint_kl(w, ps.value("w_hat")).d_predicted;
    const auto loss = [&](const ParamStore& s) { return constraint_loss(w, s.value("w_hat")); };
    EXPECT_LT(finite_diff_check(loss, ps, 1e-5), 1e-4);
}

TEST(ConstraintLoss, FullForwardBackwardGradients) {
    Rng rng(7);
    const auto r = random_interactions(rng, 5, 6, 0.5);
    const auto c = cooccurrence(r);
    const DenseMatrix wu = c.users.to_dense(), wv = c.items.to_dense();
    for (bool mean_rows : {false, true}) {
        const double us = mean_rows ? 2.0 : 1.0, is = mean_rows ? 1.5 : 1.0;
        ParamStore ps;
        ps.add("eu", sample_gaussian(rng, 5, 3) * 0.7);
        ps.add("ev", sample_gaussian(rng, 6, 3) * 0.7);
        ps.add("h", sample_gaussian(rng, 1, 3));
        const auto fwd = [&](const ParamStore& s) {
            return constraint_forward_backward(s.value("eu"), s.value("ev"), s.value("h").row(0), wu, wv, 1e-8, us, is,
                                               mean_rows);
        };
        const auto g = fwd(ps);
        ps.grad("eu") = g.d_e_u;
        ps.grad("ev") = g.d_e_v;
        ps.grad("h") = g.d_h;
        EXPECT_NEAR(g.loss, g.loss_users + g.loss_items, 1e-15);
        EXPECT_LT(finite_diff_check([&](const ParamStore& s) { return fwd(s).loss; }, ps, 1e-5), 1e-4)
            << "mean_rows=" << mean_rows;

        // Independent forward from the pieces.
        const DenseMatrix eu = ps.value("eu"), ev = ps.value("ev");
        const DenseMatrix r_hat = interaction_head(eu, ev, ps.value("h").row(0));
        const DenseMatrix pu = is * eu * (r_hat * ev).transpose();
        const DenseMatrix pv = us * ev * (r_hat.transpose() * eu).transpose();
        const double want =
            reference_kl(wu, pu, 1e-8) / (mean_rows ? 5.0 : 1.0) + reference_kl(wv, pv, 1e-8) / (mean_rows ? 6.0 : 1.0);
        EXPECT_NEAR(g.loss, want, 1e-10);
    }
}

TEST(Head, ScalarExample) {
    const DenseMatrix eu = DenseMatrix::Constant(1, 1, 2.0), ev = DenseMatrix::Constant(1, 1, 1.0);
    EXPECT_NEAR(interaction_head(eu, ev, RowVector::Ones(1))(0, 0), 0.88080, 1e-5);
    EXPECT_EQ(interaction_head(eu, ev, RowVector::Zero(1))(0, 0), 0.5);
}

TEST(Similarity, HandMatrixChain) {
    DenseMatrix eu(2, 1), ev(1, 1), r_hat(2, 1);
    eu << 1, 2;
    ev << 1;
    r_hat << 0.5, 0.5;
    DenseMatrix want(2, 2);
    want << 0.5, 0.5, 1.0, 1.0;
    EXPECT_EQ(predicted_similarity(eu, ev, r_hat).users, want);
    EXPECT_EQ(predicted_similarity(eu, ev, DenseMatrix::Zero(2, 1)).users, DenseMatrix::Zero(2, 2));
}

TEST(Cooccurrence, SmallExample) {
    const auto c = cooccurrence(SparseMatrix::from_triplets(2, 2, {{0, 0, 1}, {0, 1, 1}, {1, 1, 1}}));
    DenseMatrix wu(2, 2), wv(2, 2);
    wu << 2, 1, 1, 1;
    wv << 1, 1, 1, 2;
    EXPECT_EQ(c.users.to_dense(), wu);
    EXPECT_EQ(c.items.to_dense(), wv);
    EXPECT_EQ(cooccurrence(SparseMatrix::identity(3)).users.to_dense(), DenseMatrix(DenseMatrix::Identity(3, 3)));
}

TEST(ConstraintLoss, PointMassAgainstUniformIsLnTwo) {
    // A large negative logit makes the positive part of 0 negligible.
    DenseMatrix p(1, 2), q(1, 2);
    p << 40.0, -40.0;
    q << 1.0, 1.0;
    EXPECT_NEAR(constraint_loss(p, q, 1e-12), std::log(2.0), 1e-6);
    EXPECT_NEAR(constraint_loss(q, q), 0.0, 1e-15);
}
