#pragma once

#include "aglsc/checkpoint.hpp"
#include "aglsc/config.hpp"
#include "aglsc/dense.hpp"
#include "aglsc/error.hpp"
#include "aglsc/eval.hpp"
#include "aglsc/generative.hpp"
#include "aglsc/graphconv.hpp"
#include "aglsc/hash.hpp"
#include "aglsc/highorder.hpp"
#include "aglsc/ingest.hpp"
#include "aglsc/log.hpp"
#include "aglsc/param_store.hpp"
#include "aglsc/rng.hpp"
#include "aglsc/sparse.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace aglsc::training {

enum class ScoreSource { Decoder, Gnn };
enum class VaeReduction { Sum, Mean };

struct TrainConfig {
    Index dim = 128;
    int layers = 2;
    Index hidden = 200;
    Index latent = 64;
    double dropout = 0.2;
    double lr = 1e-3;
    double lambda = 0.1;  // high-order constraint weight
    double beta = 0.1;    // generative loss weight
    int max_epochs = 100;
    int patience = 10;
    Index batch_size = 1024;
    int negatives = 1;
    std::uint64_t seed = 2024;
    bool use_vae = true;
    bool use_fm = true;
    std::string variant = "full";
    double align_weight = 1.0;
    // Rows sampled per step for the high-order constraint (0 = all).
    Index mc_users = 256;
    Index mc_items = 256;
    // Users per step fed through the generative module (0 = all batch users).
    Index vae_users = 128;
    double kl_smoothing = 1e-8;
    double val_fraction = 0.1;
    ScoreSource score_source = ScoreSource::Gnn;
    // Per-user negative ELBO as is ("sum") or divided by the item count ("mean").
    VaeReduction vae_reduction = VaeReduction::Mean;

    void set(const std::string& key, const std::string& v) {
        if (key == "dim") dim = parse_int(key, v);
        else if (key == "layers") layers = static_cast<int>(parse_int(key, v));
        else if (key == "hidden") hidden = parse_int(key, v);
        else if (key == "latent") latent = parse_int(key, v);
        else if (key == "dropout") dropout = parse_double(key, v);
        else if (key == "lr") lr = parse_double(key, v);
        else if (key == "lambda") lambda = parse_double(key, v);
        else if (key == "beta") beta = parse_double(key, v);
        else if (key == "max_epochs") max_epochs = static_cast<int>(parse_int(key, v));
        else if (key == "patience") patience = static_cast<int>(parse_int(key, v));
        else if (key == "batch_size") batch_size = parse_int(key, v);
        else if (key == "negatives") negatives = static_cast<int>(parse_int(key, v));
        else if (key == "seed") seed = parse_uint(key, v);
        else if (key == "use_vae") use_vae = parse_bool(key, v);
        else if (key == "use_fm") use_fm = parse_bool(key, v);
        else if (key == "variant") variant = v;
        else if (key == "align_weight") align_weight = parse_double(key, v);
        else if (key == "mc_users") mc_users = parse_int(key, v);
        else if (key == "mc_items") mc_items = parse_int(key, v);
        else if (key == "vae_users") vae_users = parse_int(key, v);
        else if (key == "kl_smoothing") kl_smoothing = parse_double(key, v);
        else if (key == "val_fraction") val_fraction = parse_double(key, v);
        else if (key == "score_source") {
            if (v == "decoder") score_source = ScoreSource::Decoder;
            else if (v == "gnn") score_source = ScoreSource::Gnn;
            else throw ConfigError("score_source must be 'decoder' or 'gnn', got '" + v + "'");
        } else if (key == "vae_reduction") {
            if (v == "sum") vae_reduction = VaeReduction::Sum;
            else if (v == "mean") vae_reduction = VaeReduction::Mean;
            else throw ConfigError("vae_reduction must be 'sum' or 'mean', got '" + v + "'");
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }

    void validate() const {
        if (dim < 1 || hidden < 1 || latent < 1) throw ConfigError("dim, hidden and latent must be positive");
        if (layers < 0) throw ConfigError("layers must be >= 0");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
        if (lr < 0.0) throw ConfigError("lr must be >= 0");
        if (lambda < 0.0 || beta < 0.0) throw ConfigError("lambda and beta must be >= 0");
        if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
        if (patience < 1) throw ConfigError("patience must be >= 1");
        if (batch_size < 1 || negatives < 1) throw ConfigError("batch_size and negatives must be >= 1");
        if (mc_users < 0 || mc_items < 0 || vae_users < 0) throw ConfigError("sample sizes must be >= 0");
        if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in [0, 1)");
        if (kl_smoothing <= 0.0) throw ConfigError("kl_smoothing must be positive");
    }

    KeyValueFile to_kv() const {
        KeyValueFile kv;
        kv.set("dim", std::to_string(dim));
        kv.set("layers", std::to_string(layers));
        kv.set("hidden", std::to_string(hidden));
        kv.set("latent", std::to_string(latent));
        kv.set("dropout", format_double(dropout));
        kv.set("lr", format_double(lr));
        kv.set("lambda", format_double(lambda));
        kv.set("beta", format_double(beta));
        kv.set("max_epochs", std::to_string(max_epochs));
        kv.set("patience", std::to_string(patience));
        kv.set("batch_size", std::to_string(batch_size));
        kv.set("negatives", std::to_string(negatives));
        kv.set("seed", std::to_string(seed));
        kv.set("use_vae", use_vae ? "true" : "false");
        kv.set("use_fm", use_fm ? "true" : "false");
        kv.set("variant", variant);
        kv.set("align_weight", format_double(align_weight));
        kv.set("mc_users", std::to_string(mc_users));
        kv.set("mc_items", std::to_string(mc_items));
        kv.set("vae_users", std::to_string(vae_users));
        kv.set("kl_smoothing", format_double(kl_smoothing));
        kv.set("val_fraction", format_double(val_fraction));
        kv.set("score_source", score_source == ScoreSource::Decoder ? "decoder" : "gnn");
        kv.set("vae_reduction", vae_reduction == VaeReduction::Sum ? "sum" : "mean");
        return kv;
    }

    // Keys listed in `ignore` are metadata stored alongside the config.
    static TrainConfig from_kv(const KeyValueFile& kv, const std::vector<std::string>& ignore = {}) {
        TrainConfig c;
        for (const auto& k : kv.keys()) {
            if (std::find(ignore.begin(), ignore.end(), k) != ignore.end()) continue;
            c.set(k, kv.get(k));
        }
        c.validate();
        return c;
    }

    bool operator==(const TrainConfig&) const = default;
};

// Configuration for one of the four ablation variants.
inline TrainConfig ablate(TrainConfig config, const std::string& variant) {
    if (variant == "full") {
    } else if (variant == "wo_vae") {
        config.beta = 0.0;
        config.use_vae = false;
    } else if (variant == "wo_fm") {
        config.lambda = 0.0;
        config.use_fm = false;
    } else if (variant == "wo_both") {
        config.beta = 0.0;
        config.use_vae = false;
        config.lambda = 0.0;
        config.use_fm = false;
    } else {
        throw ConfigError("unknown variant '" + variant + "' (expected full, wo_vae, wo_fm or wo_both)");
    }
    config.variant = variant;
    return config;
}

inline const std::vector<std::string>& variants() {
    static const std::vector<std::string> v{"full", "wo_fm", "wo_vae", "wo_both"};
    return v;
}

// ---------------------------------------------------------------------------
// Data

struct TrainingData {
    Index users = 0;
    Index items = 0;
    SparseMatrix fit;    // positives used for gradient steps
    SparseMatrix val;    // held out from `fit` for early stopping
    SparseMatrix train;  // fit + val; excluded from test rankings
    SparseMatrix test;
};

// Splits the train pairs of `data` once more into fit/validation parts.
inline TrainingData make_training_data(const ingest::InteractionSet& data, double val_fraction, std::uint64_t seed) {
    TrainingData td;
    td.users = data.num_users();
    td.items = data.num_items();
    td.train = ingest::build_matrix(data, ingest::Split::Train);
    td.test = ingest::build_matrix(data, ingest::Split::Test);
    if (val_fraction <= 0.0) {
        td.fit = td.train;
        td.val = SparseMatrix(td.users, td.items);
        return td;
    }
    ingest::InteractionSet train_only;
    train_only.users = data.users;
    train_only.items = data.items;
    for (const auto& p : data.pairs)
        if (p.split == ingest::Split::Train) train_only.pairs.push_back({p.user, p.item, ingest::Split::Train});
    Rng rng = Rng(seed).fork(0x7661);
    const auto sub = ingest::split(train_only, val_fraction, rng, 1);
    td.fit = ingest::build_matrix(sub, ingest::Split::Train);
    // Validation pairs dropped by split (item absent from fit) are simply lost.
    td.val = ingest::build_matrix(sub, ingest::Split::Test);
    return td;
}

// `count` items the user has no train interaction with, uniform with
// replacement, by rejection against the sorted train row. Empty when the user
// has interacted with every item.
inline std::vector<Index> sample_negatives(const SparseMatrix& train, Index user, int count, Rng& rng) {
    std::vector<Index> out;
    const auto row = train.row_cols(user);
    if (static_cast<Index>(row.size()) >= train.cols()) return out;
    out.reserve(static_cast<std::size_t>(count));
    while (static_cast<int>(out.size()) < count) {
        const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(train.cols())));
        if (!std::binary_search(row.begin(), row.end(), j)) out.push_back(j);
    }
    return out;
}

// -ln sigmoid(pos - neg), stable for large margins.
inline double bpr_loss(double score_pos, double score_neg) { return softplus(score_neg - score_pos); }

// L = L_rec + lambda L_mc + beta L_vae.
inline double total_loss(double l_rec, double l_mc, double l_vae, double lambda, double beta) {
    return l_rec + lambda * l_mc + beta * l_vae;
}

// ---------------------------------------------------------------------------
// Model

namespace names {
inline const std::string embedding = "embedding";
inline const std::string head = "head";
}  // namespace names

class Model {
public:
    Model(TrainConfig config, const SparseMatrix& fit) : config_(std::move(config)), fit_(fit) {
        config_.validate();
        graph_ = graphconv::build_adjacency(fit_);
        cooc_ = highorder::cooccurrence(fit_);
        Rng rng = Rng(config_.seed).fork(0x696e6974);
        params_.add(names::embedding, glorot_uniform(rng, users() + items(), config_.dim));
        params_.add(names::head, DenseMatrix::Ones(1, config_.dim));
        generative::init_parameters(params_, {items(), config_.dim, config_.hidden, config_.latent}, rng);
    }

    const TrainConfig& config() const noexcept { return config_; }
    TrainConfig& config() noexcept { return config_; }
    const graphconv::BipartiteGraph& graph() const noexcept { return graph_; }
    const highorder::Cooccurrence& cooccurrence() const noexcept { return cooc_; }
    const SparseMatrix& fit_matrix() const noexcept { return fit_; }
    ParamStore& params() noexcept { return params_; }
    const ParamStore& params() const noexcept { return params_; }

    Index users() const noexcept { return fit_.rows(); }
    Index items() const noexcept { return fit_.cols(); }

    // Pooled embeddings over the (optionally dropout-masked) graph.
    DenseMatrix pooled(std::span<const double> edge_values) const {
        return graphconv::pool(
            graphconv::propagate(graph_.normalized, edge_values, params_.value(names::embedding), config_.layers));
    }
    DenseMatrix pooled() const { return pooled(graph_.normalized.values()); }

    bool scores_from_decoder() const { return config_.use_vae && config_.score_source == ScoreSource::Decoder; }

    // Evaluation-mode scorer: dropout off, z = mu.
    eval::ScoreFn scorer() const {
        auto e = std::make_shared<const DenseMatrix>(pooled());
        const Index m = users();
        const bool decoder = scores_from_decoder();
        const bool fm = config_.use_fm;
        return [this, e, m, decoder, fm](std::span<const Index> us) {
            DenseMatrix eu(static_cast<Index>(us.size()), e->cols());
            for (std::size_t r = 0; r < us.size(); ++r) eu.row(static_cast<Index>(r)) = e->row(us[r]);
            const auto ev = e->bottomRows(e->rows() - m);
            if (decoder) return generative::score_users(eu, ev, params_, fm);
            return DenseMatrix(eu * ev.transpose());
        };
    }

private:
    TrainConfig config_;
    SparseMatrix fit_;
    graphconv::BipartiteGraph graph_;
    highorder::Cooccurrence cooc_;
    ParamStore params_;
};

struct Triple {
    Index user;
    Index pos;
    Index neg;
};

// Everything random about one optimization step, drawn up front so the step
// itself is a deterministic function of (parameters, batch).
struct Batch {
    std::vector<Triple> triples;
    std::vector<Index> vae_users;
    std::vector<Index> mc_users;
    std::vector<Index> mc_items;
    std::vector<double> edge_values;  // empty: no message dropout
    bool train = true;
    std::vector<Rng> vae_rngs;
    // Optional fixed noise for the generative module (gradient checks).
    DenseMatrix vae_eps;
    DenseMatrix vae_mask;
};

struct LossParts {
    double rec = 0.0;
    double mc = 0.0;
    double vae = 0.0;
    double total = 0.0;
    double vae_reconstruction = 0.0;
    double vae_kl = 0.0;
    double vae_align = 0.0;
};

namespace detail {

inline DenseMatrix gather_rows(const DenseMatrix& m, std::span<const Index> rows, Index offset = 0) {
    DenseMatrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(offset + rows[r]);
    return out;
}

inline void scatter_add_rows(DenseMatrix& dst, std::span<const Index> rows, const DenseMatrix& src, Index offset = 0) {
    for (std::size_t r = 0; r < rows.size(); ++r) dst.row(offset + rows[r]) += src.row(static_cast<Index>(r));
}

// Dense block of a sparse square matrix restricted to `idx` x `idx`.
inline DenseMatrix sub_block(const SparseMatrix& s, std::span<const Index> idx) {
    std::vector<Index> pos(static_cast<std::size_t>(s.cols()), -1);
    for (std::size_t i = 0; i < idx.size(); ++i) pos[static_cast<std::size_t>(idx[i])] = static_cast<Index>(i);
    DenseMatrix out = DenseMatrix::Zero(static_cast<Index>(idx.size()), static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto cols = s.row_cols(idx[i]);
        const auto vals = s.row_values(idx[i]);
        for (std::size_t k = 0; k < cols.size(); ++k)
            if (const Index j = pos[static_cast<std::size_t>(cols[k])]; j >= 0) out(static_cast<Index>(i), j) = vals[k];
    }
    return out;
}

inline DenseMatrix dense_rows(const SparseMatrix& s, std::span<const Index> rows) {
    DenseMatrix out = DenseMatrix::Zero(static_cast<Index>(rows.size()), s.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto cols = s.row_cols(rows[r]);
        const auto vals = s.row_values(rows[r]);
        for (std::size_t k = 0; k < cols.size(); ++k) out(static_cast<Index>(r), cols[k]) = vals[k];
    }
    return out;
}

// `count` distinct indices from [0, n), sorted; all of them when count is 0 or >= n.
inline std::vector<Index> sample_sorted(Index n, Index count, Rng& rng) {
    std::vector<Index> all(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    if (count <= 0 || count >= n) return all;
    for (Index i = 0; i < count; ++i) {
        const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - i)));
        std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
    }
    all.resize(static_cast<std::size_t>(count));
    std::sort(all.begin(), all.end());
    return all;
}

}  // namespace detail

// Computes the composite objective for one batch and accumulates its
// gradient into the model's parameter store.
inline LossParts forward_backward(Model& model, const Batch& batch) {
    const TrainConfig& cfg = model.config();
    ParamStore& ps = model.params();
    const Index m = model.users();
    const Index n = model.items();
    const std::span<const double> edge_values =
        batch.edge_values.empty() ? model.graph().normalized.values() : std::span<const double>(batch.edge_values);

    const DenseMatrix e = model.pooled(edge_values);
    DenseMatrix d_e = DenseMatrix::Zero(e.rows(), e.cols());
    const RowVector head = ps.value(names::head).row(0);
    LossParts parts;

    // Pairwise ranking loss on P.
    if (!batch.triples.empty()) {
        const double inv_b = 1.0 / static_cast<double>(batch.triples.size());
        double sum = 0.0;
        for (const auto& t : batch.triples) {
            const auto eu = e.row(t.user);
            const auto ep = e.row(m + t.pos);
            const auto en = e.row(m + t.neg);
            const double margin = eu.dot(ep) - eu.dot(en);
            sum += softplus(-margin);
            const double g = -sigmoid(-margin) * inv_b;
            d_e.row(t.user) += g * (ep - en);
            d_e.row(m + t.pos) += g * eu;
            d_e.row(m + t.neg) -= g * eu;
        }
        parts.rec = sum * inv_b;
    }

    // High-order constraint on a sampled sub-graph.
    if (cfg.use_fm && cfg.lambda > 0.0 && !batch.mc_users.empty() && !batch.mc_items.empty()) {
        const DenseMatrix eu = detail::gather_rows(e, batch.mc_users);
        const DenseMatrix ev = detail::gather_rows(e, batch.mc_items, m);
        const DenseMatrix wu = detail::sub_block(model.cooccurrence().users, batch.mc_users);
        const DenseMatrix wv = detail::sub_block(model.cooccurrence().items, batch.mc_items);
        const double user_scale = static_cast<double>(m) / static_cast<double>(batch.mc_users.size());
        const double item_scale = static_cast<double>(n) / static_cast<double>(batch.mc_items.size());
        auto hg = highorder::constraint_forward_backward(eu, ev, head, wu, wv, cfg.kl_smoothing, user_scale,
                                                         item_scale, true);
        parts.mc = hg.loss;
        detail::scatter_add_rows(d_e, batch.mc_users, cfg.lambda * hg.d_e_u);
        detail::scatter_add_rows(d_e, batch.mc_items, cfg.lambda * hg.d_e_v, m);
        ps.grad(names::head).row(0) += cfg.lambda * hg.d_h;
    }

    // Generative completion.
    if (cfg.use_vae && cfg.beta > 0.0 && !batch.vae_users.empty()) {
        const DenseMatrix eu = detail::gather_rows(e, batch.vae_users);
        const DenseMatrix ev = e.bottomRows(n);
        const DenseMatrix targets = detail::dense_rows(model.fit_matrix(), batch.vae_users);
        std::vector<Rng> rngs = batch.vae_rngs;
        generative::VaeInputs in;
        in.e_u = &eu;
        in.e_v = &ev;
        in.head = &head;
        in.targets = &targets;
        in.user_rngs = rngs;
        if (batch.vae_eps.size() > 0) in.fixed_eps = &batch.vae_eps;
        if (batch.vae_mask.size() > 0) in.fixed_mask = &batch.vae_mask;
        generative::VaeOptions opt;
        opt.train = batch.train;
        opt.use_high_order = cfg.use_fm;
        opt.input_dropout = cfg.dropout;
        opt.align_weight = cfg.align_weight;
        if (cfg.vae_reduction == VaeReduction::Mean) {
            opt.reconstruction_weight = 1.0 / static_cast<double>(n);
            opt.kl_weight = 1.0 / static_cast<double>(n);
        }
        auto vr = generative::vae_loss(in, ps, opt, cfg.beta);
        parts.vae = vr.loss;
        parts.vae_reconstruction = vr.reconstruction;
        parts.vae_kl = vr.kl;
        parts.vae_align = vr.align;
        detail::scatter_add_rows(d_e, batch.vae_users, vr.d_e_u);
        d_e.bottomRows(n) += vr.d_e_v;
        ps.grad(names::head).row(0) += vr.d_h;
    }

    parts.total = total_loss(parts.rec, parts.mc, parts.vae, cfg.use_fm ? cfg.lambda : 0.0,
                             cfg.use_vae ? cfg.beta : 0.0);
    if (!std::isfinite(parts.total))
        throw NumericError("non-finite loss (rec=" + std::to_string(parts.rec) + ", mc=" + std::to_string(parts.mc) +
                           ", vae=" + std::to_string(parts.vae) + ")");
    ps.grad(names::embedding) += graphconv::propagate_pool_backward(model.graph(), edge_values, d_e, cfg.layers);
    return parts;
}

// Draws every random choice for a step over `positives`.
inline Batch make_batch(const Model& model, std::span<const std::pair<Index, Index>> positives, Rng& rng) {
    const TrainConfig& cfg = model.config();
    Batch b;
    std::vector<Index> batch_users;
    for (const auto& [u, p] : positives) {
        const auto negs = sample_negatives(model.fit_matrix(), u, cfg.negatives, rng);
        if (negs.empty()) {
            log_warn("user " + std::to_string(u) + " has interacted with every item; skipped");
            continue;
        }
        for (Index j : negs) b.triples.push_back({u, p, j});
        batch_users.push_back(u);
    }
    if (cfg.use_vae && cfg.beta > 0.0) {
        std::sort(batch_users.begin(), batch_users.end());
        batch_users.erase(std::unique(batch_users.begin(), batch_users.end()), batch_users.end());
        if (cfg.vae_users > 0 && static_cast<Index>(batch_users.size()) > cfg.vae_users) {
            const auto pick = detail::sample_sorted(static_cast<Index>(batch_users.size()), cfg.vae_users, rng);
            std::vector<Index> chosen;
            for (Index i : pick) chosen.push_back(batch_users[static_cast<std::size_t>(i)]);
            batch_users = std::move(chosen);
        }
        b.vae_users = std::move(batch_users);
        const Rng user_base = rng.fork(rng.next_u64());
        for (Index u : b.vae_users) b.vae_rngs.push_back(user_base.fork(static_cast<std::uint64_t>(u)));
    }
    if (cfg.use_fm && cfg.lambda > 0.0) {
        b.mc_users = detail::sample_sorted(model.users(), cfg.mc_users, rng);
        b.mc_items = detail::sample_sorted(model.items(), cfg.mc_items, rng);
    }
    if (cfg.dropout > 0.0) b.edge_values = graphconv::dropout_values(model.graph().normalized, cfg.dropout, rng);
    return b;
}

struct EpochSummary {
    int epoch = 0;
    double loss_rec = 0.0;
    double loss_mc = 0.0;
    double loss_vae = 0.0;
    double loss_total = 0.0;
    double val_ndcg20 = std::numeric_limits<double>::quiet_NaN();
    std::size_t steps = 0;
    double seconds = 0.0;
};

// One pass over the fit positives in seeded shuffled order.
inline EpochSummary train_epoch(Model& model, int epoch) {
    const TrainConfig& cfg = model.config();
    const auto start = std::chrono::steady_clock::now();
    Rng rng = Rng(cfg.seed).fork(0x65706f6368ULL + static_cast<std::uint64_t>(epoch));
    std::vector<std::pair<Index, Index>> positives;
    positives.reserve(model.fit_matrix().nnz());
    for (Index u = 0; u < model.users(); ++u)
        for (Index i : model.fit_matrix().row_cols(u)) positives.emplace_back(u, i);
    rng.shuffle(positives.begin(), positives.end());

    EpochSummary s;
    s.epoch = epoch;
    const AdamOptions adam{cfg.lr, 0.9, 0.999, 1e-8};
    for (std::size_t off = 0; off < positives.size(); off += static_cast<std::size_t>(cfg.batch_size)) {
        const auto len = std::min(positives.size() - off, static_cast<std::size_t>(cfg.batch_size));
        const Batch batch = make_batch(model, std::span(positives).subspan(off, len), rng);
        const LossParts parts = forward_backward(model, batch);
        adam_step(model.params(), adam);
        s.loss_rec += parts.rec;
        s.loss_mc += parts.mc;
        s.loss_vae += parts.vae;
        s.loss_total += parts.total;
        ++s.steps;
    }
    if (s.steps > 0) {
        const auto k = static_cast<double>(s.steps);
        s.loss_rec /= k;
        s.loss_mc /= k;
        s.loss_vae /= k;
        s.loss_total /= k;
    }
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return s;
}

// Tracks the best metric; `update` returns true once `patience` consecutive
// epochs fail to improve on it.
class EarlyStopping {
public:
    explicit EarlyStopping(int patience) : patience_(patience) {}

    bool update(int epoch, double metric) {
        if (!best_epoch_ || metric > best_) {
            best_ = metric;
            best_epoch_ = epoch;
            bad_ = 0;
            improved_ = true;
            return false;
        }
        improved_ = false;
        return ++bad_ >= patience_;
    }

    bool improved() const noexcept { return improved_; }
    std::optional<int> best_epoch() const noexcept { return best_epoch_; }
    double best() const noexcept { return best_; }

private:
    int patience_;
    int bad_ = 0;
    bool improved_ = false;
    std::optional<int> best_epoch_;
    double best_ = -std::numeric_limits<double>::infinity();
};

inline double validation_ndcg(const Model& model, const TrainingData& data) {
    if (data.val.nnz() == 0) return std::numeric_limits<double>::quiet_NaN();
    return eval::evaluate(model.scorer(), data.fit, data.val, {20}).ndcg.at(20);
}

struct FitResult {
    std::vector<EpochSummary> history;
    int best_epoch = 0;
    double best_metric = std::numeric_limits<double>::quiet_NaN();
    bool stopped_early = false;
};

// Trains up to max_epochs with validation NDCG@20 early stopping and leaves
// the best-scoring parameters in `model`. Without validation data the last
// epoch is kept.
inline FitResult fit(Model& model, const TrainingData& data,
                     const std::function<void(const EpochSummary&)>& on_epoch = {}) {
    const TrainConfig& cfg = model.config();
    FitResult res;
    EarlyStopping stopper(cfg.patience);
    std::optional<ParamStore> best;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        EpochSummary s = train_epoch(model, epoch);
        s.val_ndcg20 = validation_ndcg(model, data);
        res.history.push_back(s);
        if (on_epoch) on_epoch(s);
        if (std::isnan(s.val_ndcg20)) {
            res.best_epoch = epoch;
            continue;
        }
        const bool stop = stopper.update(epoch, s.val_ndcg20);
        if (stopper.improved()) {
            best = model.params();
            res.best_epoch = epoch;
            res.best_metric = s.val_ndcg20;
        }
        if (stop) {
            res.stopped_early = true;
            break;
        }
    }
    if (best) model.params() = std::move(*best);
    return res;
}

inline std::string history_csv(const std::vector<EpochSummary>& history) {
    std::string out = "epoch,loss_rec,loss_mc,loss_vae,val_ndcg20\n";
    for (const auto& s : history) {
        out += std::to_string(s.epoch) + ',' + format_double(s.loss_rec) + ',' + format_double(s.loss_mc) + ',' +
               format_double(s.loss_vae) + ',' + (std::isnan(s.val_ndcg20) ? "" : format_double(s.val_ndcg20)) + '\n';
    }
    return out;
}

// One complete experiment: validation carve-out, training, test evaluation.
struct Run {
    TrainingData data;
    std::unique_ptr<Model> model;
    FitResult fit;
    eval::MetricReport report;
};

inline Run run_experiment(const ingest::InteractionSet& split_data, const TrainConfig& config,
                          std::vector<Index> ks = {20, 40},
                          const std::function<void(const EpochSummary&)>& on_epoch = {}) {
    config.validate();
    Run run;
    run.data = make_training_data(split_data, config.val_fraction, config.seed);
    run.model = std::make_unique<Model>(config, run.data.fit);
    run.fit = fit(*run.model, run.data, on_epoch);
    run.report = eval::evaluate(run.model->scorer(), run.data.train, run.data.test, std::move(ks));
    return run;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kDatasetHashKey = "dataset_hash";

inline Checkpoint to_checkpoint(const Model& model, const std::string& dataset_hash) {
    Checkpoint ck;
    KeyValueFile kv = model.config().to_kv();
    kv.set(kDatasetHashKey, dataset_hash);
    ck.config_text = kv.to_string();
    ck.config_hash = fnv1a(ck.config_text);
    ck.seed = model.config().seed;
    ck.params = model.params();
    return ck;
}

inline TrainConfig config_from_checkpoint(const Checkpoint& ck) {
    if (fnv1a(ck.config_text) != ck.config_hash) throw IoError("checkpoint config hash does not match its config text");
    return TrainConfig::from_kv(KeyValueFile::parse_string(ck.config_text), {kDatasetHashKey});
}

inline std::string dataset_hash_of(const Checkpoint& ck) {
    return KeyValueFile::parse_string(ck.config_text).get_or(kDatasetHashKey, "");
}

// Replaces the model's parameters with the checkpoint's, checking names and shapes.
inline void load_parameters(Model& model, const Checkpoint& ck) {
    const auto& want = model.params().params();
    const auto& got = ck.params.params();
    if (want.size() != got.size()) throw ShapeError("checkpoint parameter count does not match the model");
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (want[i].name != got[i].name || want[i].value.rows() != got[i].value.rows() ||
            want[i].value.cols() != got[i].value.cols())
            throw ShapeError("checkpoint parameter '" + got[i].name + "' does not match model parameter '" +
                             want[i].name + "' " + shape_str(want[i].value));
    }
    model.params() = ck.params;
}

}  // namespace aglsc::training
