#pragma once

// Small fixtures shared by the unit tests and the acceptance runner.

#include "aglsc/sparse.hpp"
#include "aglsc/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>
#include <string>
#include <vector>

namespace aglsc::testing {

// 5 users x 5 items, every user and item has at least one interaction.
inline SparseMatrix toy_interactions() {
    return SparseMatrix::from_triplets(5, 5,
                                       {{0, 0, 1}, {0, 1, 1}, {0, 3, 1}, {1, 1, 1}, {1, 2, 1}, {2, 0, 1}, {2, 2, 1},
                                        {2, 4, 1}, {3, 3, 1}, {3, 4, 1}, {4, 1, 1}, {4, 4, 1}});
}

// Tiny configuration with every module active and no sampling.
inline training::TrainConfig toy_config() {
    training::TrainConfig c;
    c.dim = 4;
    c.layers = 2;
    c.hidden = 6;
    c.latent = 3;
    c.dropout = 0.2;
    c.mc_users = 0;
    c.mc_items = 0;
    c.vae_users = 0;
    c.batch_size = 4;
    c.seed = 11;
    return c;
}

// Full-participation batch with fixed noise, for gradient checks.
inline training::Batch toy_batch(const training::Model& model, Rng& rng) {
    training::Batch b;
    const auto& r = model.fit_matrix();
    for (Index u = 0; u < r.rows(); ++u)
        for (Index i : r.row_cols(u)) {
            auto negs = training::sample_negatives(r, u, 1, rng);
            b.triples.push_back({u, i, negs.at(0)});
        }
    for (Index u = 0; u < model.users(); ++u) b.vae_users.push_back(u);
    for (Index u = 0; u < model.users(); ++u) b.mc_users.push_back(u);
    for (Index i = 0; i < model.items(); ++i) b.mc_items.push_back(i);
    b.edge_values = graphconv::dropout_values(model.graph().normalized, model.config().dropout, rng);
    const auto n = static_cast<Index>(b.vae_users.size());
    b.vae_eps = sample_gaussian(rng, n, model.config().latent);
    b.vae_mask = DenseMatrix(n, model.items());
    for (Index k = 0; k < b.vae_mask.size(); ++k) b.vae_mask.data()[k] = rng.bernoulli(0.2) ? 0.0 : 1.25;
    return b;
}

// Perturbs the model's parameters away from their initialization so that
// gradient checks do not sit at a symmetric point.
inline void jitter(training::Model& model, Rng& rng, double scale = 0.3) {
    for (auto& p : model.params().params()) p.value += scale * sample_gaussian(rng, p.value.rows(), p.value.cols());
}

// Brute-force metric oracles: full sort of every non-excluded item by
// descending score, item id ascending on ties.
inline std::vector<Index> brute_top_k(const std::vector<double>& scores, const std::set<Index>& exclude, Index k) {
    std::vector<Index> order;
    for (Index i = 0; i < static_cast<Index>(scores.size()); ++i)
        if (!exclude.count(i)) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](Index a, Index b) {
        if (scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)]) return true;
        if (scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)]) return false;
        return a < b;
    });
    if (static_cast<Index>(order.size()) > k) order.resize(static_cast<std::size_t>(k));
    return order;
}

inline double brute_recall(const std::vector<Index>& top, const std::set<Index>& relevant) {
    double hits = 0;
    for (Index i : top) hits += relevant.count(i) ? 1.0 : 0.0;
    return hits / static_cast<double>(relevant.size());
}

inline double brute_ndcg(const std::vector<Index>& top, const std::set<Index>& relevant, Index k) {
    double dcg = 0.0, idcg = 0.0;
    for (std::size_t r = 0; r < top.size(); ++r)
        if (relevant.count(top[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    const auto ideal = std::min<std::size_t>(relevant.size(), static_cast<std::size_t>(k));
    for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    return dcg / idcg;
}

}  // namespace aglsc::testing
