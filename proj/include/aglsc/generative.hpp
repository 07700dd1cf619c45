#pragma once

#include "aglsc/dense.hpp"
#include "aglsc/error.hpp"
#include "aglsc/param_store.hpp"
#include "aglsc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace aglsc::generative {

inline constexpr double kLogvarClamp = 10.0;
inline constexpr double kSigmaFloor = 1e-6;

// ---------------------------------------------------------------------------
// Closed-form pieces

// 1-D Wasserstein-1 distance between the empirical value distributions of
// each row pair (mean absolute difference of the sorted rows), averaged over
// rows. Gradients are filled when the outputs are non-null.
inline double wasserstein_align(const DenseMatrix& r_hat, const DenseMatrix& p, DenseMatrix* d_r_hat = nullptr,
                                DenseMatrix* d_p = nullptr) {
    detail::require_shape(r_hat.rows() == p.rows() && r_hat.cols() == p.cols(), "wasserstein_align",
                          shape_str(r_hat) + " vs " + shape_str(p));
    const Index rows = r_hat.rows();
    const Index n = r_hat.cols();
    if (d_r_hat) d_r_hat->setZero(rows, n);
    if (d_p) d_p->setZero(rows, n);
    if (rows == 0 || n == 0) return 0.0;
    const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(rows));
    std::vector<Index> ia(static_cast<std::size_t>(n));
    std::vector<Index> ib(static_cast<std::size_t>(n));
    double total = 0.0;
    for (Index r = 0; r < rows; ++r) {
        std::iota(ia.begin(), ia.end(), Index{0});
        std::iota(ib.begin(), ib.end(), Index{0});
        std::stable_sort(ia.begin(), ia.end(), [&](Index x, Index y) { return r_hat(r, x) < r_hat(r, y); });
        std::stable_sort(ib.begin(), ib.end(), [&](Index x, Index y) { return p(r, x) < p(r, y); });
        for (Index k = 0; k < n; ++k) {
            const double diff = r_hat(r, ia[k]) - p(r, ib[k]);
            total += std::abs(diff);
            const double s = diff > 0.0 ? scale : (diff < 0.0 ? -scale : 0.0);
            if (d_r_hat) (*d_r_hat)(r, ia[k]) += s;
            if (d_p) (*d_p)(r, ib[k]) -= s;
        }
    }
    return total * scale;
}

// KL(N(mu, diag sigma^2) || N(0, I)) summed over the latent dimensions.
inline double gaussian_kl(const RowVector& mu, const RowVector& sigma) {
    detail::require_shape(mu.cols() == sigma.cols(), "gaussian_kl", "mu/sigma length");
    double kl = 0.0;
    for (Index k = 0; k < mu.cols(); ++k) {
        const double s2 = sigma(k) * sigma(k);
        kl += mu(k) * mu(k) + s2 - 1.0 - std::log(s2);
    }
    return 0.5 * kl;
}

// sum_i r_i log pi_i.
inline double multinomial_loglik(const RowVector& pi, const RowVector& r) {
    detail::require_shape(pi.cols() == r.cols(), "multinomial_loglik", "pi/r length");
    double ll = 0.0;
    for (Index i = 0; i < pi.cols(); ++i)
        if (r(i) != 0.0) ll += r(i) * std::log(pi(i));
    return ll;
}

// z = mu + sigma * eps with eps ~ N(0, I).
inline RowVector reparameterize(const RowVector& mu, const RowVector& sigma, Rng& rng) {
    RowVector z(mu.cols());
    for (Index k = 0; k < mu.cols(); ++k) z(k) = mu(k) + sigma(k) * rng.normal();
    return z;
}

inline void log_softmax_rows(DenseMatrix& m) {
    for (Index r = 0; r < m.rows(); ++r) {
        const double mx = m.row(r).maxCoeff();
        const double lse = mx + std::log((m.row(r).array() - mx).exp().sum());
        m.row(r).array() -= lse;
    }
}

// ---------------------------------------------------------------------------
// Networks

// Parameter names inside a ParamStore.
namespace names {
inline const std::string enc_w1 = "encoder.w1";
inline const std::string enc_b1 = "encoder.b1";
inline const std::string enc_w2 = "encoder.w2";
inline const std::string enc_b2 = "encoder.b2";
inline const std::string gate_proj = "gate.proj";
inline const std::string gate_w_mu = "gate.w_mu";
inline const std::string gate_w_sigma = "gate.w_sigma";
inline const std::string gate_w_z = "gate.w_z";
inline const std::string dec_w1 = "decoder.w1";
inline const std::string dec_b1 = "decoder.b1";
inline const std::string dec_w2 = "decoder.w2";
inline const std::string dec_b2 = "decoder.b2";
}  // namespace names

struct Dims {
    Index items = 0;       // N, encoder input and decoder output width
    Index embedding = 0;   // d, width of the high-order feature
    Index hidden = 200;
    Index latent = 64;
};

// Adds encoder, gate and decoder parameters with scaled uniform initialization.
inline void init_parameters(ParamStore& store, const Dims& dims, Rng& rng) {
    const Index k = dims.latent;
    store.add(names::enc_w1, glorot_uniform(rng, dims.items, dims.hidden));
    store.add(names::enc_b1, DenseMatrix::Zero(1, dims.hidden));
    store.add(names::enc_w2, glorot_uniform(rng, dims.hidden, 2 * k));
    store.add(names::enc_b2, DenseMatrix::Zero(1, 2 * k));
    store.add(names::gate_proj, glorot_uniform(rng, dims.embedding, k));
    store.add(names::gate_w_mu, glorot_uniform(rng, k, k));
    store.add(names::gate_w_sigma, glorot_uniform(rng, k, k));
    store.add(names::gate_w_z, glorot_uniform(rng, 2 * k, k));
    store.add(names::dec_w1, glorot_uniform(rng, k, dims.hidden));
    store.add(names::dec_b1, DenseMatrix::Zero(1, dims.hidden));
    store.add(names::dec_w2, glorot_uniform(rng, dims.hidden, dims.items));
    store.add(names::dec_b2, DenseMatrix::Zero(1, dims.items));
}

struct EncoderOutput {
    DenseMatrix mu;      // n x k
    DenseMatrix logvar;  // n x k, clamped
    DenseMatrix sigma;   // exp(logvar / 2)
};

// Single-row and batched encoder: rows of `x` are (already normalized) inputs.
inline EncoderOutput encode(const DenseMatrix& x, const ParamStore& store) {
    const auto& w1 = store.value(names::enc_w1);
    detail::require_shape(x.cols() == w1.rows(), "encode", shape_str(x) + " into " + shape_str(w1));
    const DenseMatrix hidden = ((x * w1).rowwise() + store.value(names::enc_b1).row(0)).array().tanh().matrix();
    const DenseMatrix out = (hidden * store.value(names::enc_w2)).rowwise() + store.value(names::enc_b2).row(0);
    if (!out.allFinite()) throw NumericError("encode: non-finite activation in encoder output layer");
    const Index k = out.cols() / 2;
    EncoderOutput e;
    e.mu = out.leftCols(k);
    e.logvar = out.rightCols(k).cwiseMax(-kLogvarClamp).cwiseMin(kLogvarClamp);
    e.sigma = (0.5 * e.logvar.array()).exp().matrix();
    return e;
}

struct GateOutput {
    DenseMatrix mu;     // g * h_mu
    DenseMatrix sigma;  // softplus((1 - g) * h_sigma) + floor
    DenseMatrix gate;   // g
};

// h_mu = tanh(x_mu W_mu), h_sigma = tanh(x_sigma W_sigma),
// g = sigmoid([x_mu, x_sigma] W_z), mu = g h_mu, sigma = softplus((1-g) h_sigma).
inline GateOutput gate_fuse(const DenseMatrix& x_mu, const DenseMatrix& x_sigma, const ParamStore& store) {
    const auto& w_mu = store.value(names::gate_w_mu);
    const auto& w_sigma = store.value(names::gate_w_sigma);
    const auto& w_z = store.value(names::gate_w_z);
    detail::require_shape(x_mu.cols() == w_mu.rows() && x_sigma.cols() == w_sigma.rows() &&
                              x_mu.cols() + x_sigma.cols() == w_z.rows(),
                          "gate_fuse", "latent widths");
    const Index k = x_mu.cols();
    const DenseMatrix h_mu = (x_mu * w_mu).array().tanh().matrix();
    const DenseMatrix h_sigma = (x_sigma * w_sigma).array().tanh().matrix();
    const DenseMatrix logits = x_mu * w_z.topRows(k) + x_sigma * w_z.bottomRows(k);
    GateOutput g;
    g.gate = sigmoid(logits);
    g.mu = (g.gate.array() * h_mu.array()).matrix();
    g.sigma = ((1.0 - g.gate.array()) * h_sigma.array())
                  .unaryExpr([](double t) { return softplus(t) + kSigmaFloor; })
                  .matrix();
    return g;
}

inline DenseMatrix decode_logits(const DenseMatrix& z, const ParamStore& store) {
    const DenseMatrix hidden =
        ((z * store.value(names::dec_w1)).rowwise() + store.value(names::dec_b1).row(0)).array().tanh().matrix();
    return (hidden * store.value(names::dec_w2)).rowwise() + store.value(names::dec_b2).row(0);
}

// Softmax over items, one row per latent row.
inline DenseMatrix decode(const DenseMatrix& z, const ParamStore& store) {
    DenseMatrix logp = decode_logits(z, store);
    log_softmax_rows(logp);
    return logp.array().exp().matrix();
}

// Input conditioning: L2-normalize each row.
inline DenseMatrix normalize_rows(const DenseMatrix& p) {
    DenseMatrix x = p;
    for (Index r = 0; r < x.rows(); ++r) {
        const double n = x.row(r).norm();
        if (n > 0.0) x.row(r) /= n;
    }
    return x;
}

// ---------------------------------------------------------------------------
// Batched ELBO with hand-written backward pass

struct VaeOptions {
    bool train = true;
    bool use_high_order = true;  // gate inputs include the projected user feature
    double input_dropout = 0.2;
    double align_weight = 1.0;
    double reconstruction_weight = 1.0;
    double kl_weight = 1.0;
};

struct VaeInputs {
    const DenseMatrix* e_u = nullptr;   // n x d pooled embeddings of the batch users
    const DenseMatrix* e_v = nullptr;   // N x d pooled item embeddings
    const RowVector* head = nullptr;    // d, factorization head weights
    const DenseMatrix* targets = nullptr;  // n x N binary train rows
    std::span<Rng> user_rngs;           // one stream per batch row (training only)
    // Fixed noise overrides, used by gradient checks: n x k and n x N.
    const DenseMatrix* fixed_eps = nullptr;
    const DenseMatrix* fixed_mask = nullptr;
};

struct VaeResult {
    double loss = 0.0;            // weighted sum of the three terms below
    double reconstruction = 0.0;  // mean negative multinomial log-likelihood
    double kl = 0.0;              // mean Gaussian KL
    double align = 0.0;           // Wasserstein alignment term
    DenseMatrix d_e_u;            // n x d
    DenseMatrix d_e_v;            // N x d
    RowVector d_h;                // d
};

// Forward pass for the batch, then backward with all gradients scaled by
// `grad_scale`. Network gradients are accumulated into `store`.
inline VaeResult vae_loss(const VaeInputs& in, ParamStore& store, const VaeOptions& opt, double grad_scale = 1.0) {
    const DenseMatrix& e_u = *in.e_u;
    const DenseMatrix& e_v = *in.e_v;
    const RowVector& head = *in.head;
    const DenseMatrix& target = *in.targets;
    const Index n = e_u.rows();
    const Index items = e_v.rows();
    detail::require_shape(target.rows() == n && target.cols() == items, "vae_loss", "targets " + shape_str(target));
    const double inv_n = 1.0 / static_cast<double>(std::max<Index>(n, 1));
    const bool needs_rng = opt.train && (!in.fixed_eps || (!in.fixed_mask && opt.input_dropout > 0.0));
    if (needs_rng && in.user_rngs.size() < static_cast<std::size_t>(n))
        throw ConfigError("vae_loss: need one random stream per batch row");

    const auto& w1 = store.value(names::enc_w1);
    const auto& w2 = store.value(names::enc_w2);
    const auto& proj = store.value(names::gate_proj);
    const auto& w_mu = store.value(names::gate_w_mu);
    const auto& w_sigma = store.value(names::gate_w_sigma);
    const auto& w_z = store.value(names::gate_w_z);
    const auto& v1 = store.value(names::dec_w1);
    const auto& v2 = store.value(names::dec_w2);
    const Index k = w_mu.rows();

    // GNN latent ratings and factor-head ratings for the batch users.
    const DenseMatrix p = e_u * e_v.transpose();
    const DenseMatrix eu_h = (e_u.array().rowwise() * head.array()).matrix();
    const DenseMatrix r_hat = sigmoid(eu_h * e_v.transpose());

    // Encoder input: row-normalized P, then dropout.
    std::vector<double> norms(static_cast<std::size_t>(n));
    DenseMatrix x_norm = p;
    for (Index r = 0; r < n; ++r) {
        norms[r] = std::max(p.row(r).norm(), 1e-12);
        x_norm.row(r) /= norms[r];
    }
    DenseMatrix mask = DenseMatrix::Ones(n, items);
    if (opt.train && in.fixed_mask) {
        mask = *in.fixed_mask;
    } else if (opt.train && opt.input_dropout > 0.0) {
        const double keep = 1.0 / (1.0 - opt.input_dropout);
        for (Index r = 0; r < n; ++r) {
            Rng& rng = in.user_rngs[static_cast<std::size_t>(r)];
            for (Index c = 0; c < items; ++c) mask(r, c) = rng.bernoulli(opt.input_dropout) ? 0.0 : keep;
        }
    }
    const DenseMatrix x = (x_norm.array() * mask.array()).matrix();

    const DenseMatrix enc_h = ((x * w1).rowwise() + store.value(names::enc_b1).row(0)).array().tanh().matrix();
    const DenseMatrix enc_out = (enc_h * w2).rowwise() + store.value(names::enc_b2).row(0);
    if (!enc_out.allFinite()) throw NumericError("vae_loss: non-finite activation in encoder output layer");
    const DenseMatrix mu_phi = enc_out.leftCols(k);
    const DenseMatrix lv_raw = enc_out.rightCols(k);
    const DenseMatrix logvar = lv_raw.cwiseMax(-kLogvarClamp).cwiseMin(kLogvarClamp);

    DenseMatrix feature = DenseMatrix::Zero(n, k);
    if (opt.use_high_order) feature = e_u * proj;
    const DenseMatrix x_mu = mu_phi + feature;
    const DenseMatrix x_sigma = logvar + feature;

    const DenseMatrix h_mu = (x_mu * w_mu).array().tanh().matrix();
    const DenseMatrix h_sigma = (x_sigma * w_sigma).array().tanh().matrix();
    const DenseMatrix g = sigmoid(x_mu * w_z.topRows(k) + x_sigma * w_z.bottomRows(k));
    const DenseMatrix mu = (g.array() * h_mu.array()).matrix();
    const DenseMatrix t = ((1.0 - g.array()) * h_sigma.array()).matrix();
    const DenseMatrix sigma = t.unaryExpr([](double v) { return softplus(v) + kSigmaFloor; });

    DenseMatrix eps = DenseMatrix::Zero(n, k);
    if (opt.train && in.fixed_eps) {
        eps = *in.fixed_eps;
    } else if (opt.train) {
        for (Index r = 0; r < n; ++r) {
            Rng& rng = in.user_rngs[static_cast<std::size_t>(r)];
            for (Index c = 0; c < k; ++c) eps(r, c) = rng.normal();
        }
    }
    const DenseMatrix z = mu + (sigma.array() * eps.array()).matrix();

    const DenseMatrix dec_h = ((z * v1).rowwise() + store.value(names::dec_b1).row(0)).array().tanh().matrix();
    DenseMatrix logp = (dec_h * v2).rowwise() + store.value(names::dec_b2).row(0);
    log_softmax_rows(logp);
    if (!logp.allFinite()) throw NumericError("vae_loss: non-finite decoder output");

    VaeResult res;
    double rec = 0.0;
    double kl = 0.0;
    for (Index r = 0; r < n; ++r) {
        rec -= (target.row(r).array() * logp.row(r).array()).sum();
        for (Index c = 0; c < k; ++c) {
            const double s2 = sigma(r, c) * sigma(r, c);
            kl += 0.5 * (mu(r, c) * mu(r, c) + s2 - 1.0 - std::log(s2));
        }
    }
    res.reconstruction = rec * inv_n;
    res.kl = kl * inv_n;
    DenseMatrix d_align_rhat;
    DenseMatrix d_align_p;
    res.align = opt.align_weight != 0.0 ? wasserstein_align(r_hat, p, &d_align_rhat, &d_align_p) : 0.0;
    res.loss = opt.reconstruction_weight * res.reconstruction + opt.kl_weight * res.kl + opt.align_weight * res.align;

    // ---- backward ----
    const double s = grad_scale * inv_n;
    // d(-sum r log softmax)/dlogits = pi * sum(r) - r
    DenseMatrix d_logits = logp.array().exp().matrix();
    for (Index r = 0; r < n; ++r) d_logits.row(r) *= target.row(r).sum();
    d_logits = (d_logits - target) * (s * opt.reconstruction_weight);

    store.grad(names::dec_w2).noalias() += dec_h.transpose() * d_logits;
    store.grad(names::dec_b2) += d_logits.colwise().sum();
    const DenseMatrix d_dec_pre =
        ((d_logits * v2.transpose()).array() * (1.0 - dec_h.array().square())).matrix();
    store.grad(names::dec_w1).noalias() += z.transpose() * d_dec_pre;
    store.grad(names::dec_b1) += d_dec_pre.colwise().sum();
    const DenseMatrix d_z = d_dec_pre * v1.transpose();

    // KL: d/dmu = mu, d/dsigma = sigma - 1/sigma
    const double sk = s * opt.kl_weight;
    const DenseMatrix d_mu = d_z + sk * mu;
    const DenseMatrix d_sigma =
        (d_z.array() * eps.array() + sk * (sigma.array() - sigma.array().inverse())).matrix();
    const DenseMatrix d_t = (d_sigma.array() * t.unaryExpr([](double v) { return sigmoid(v); }).array()).matrix();

    const DenseMatrix d_g = (d_mu.array() * h_mu.array() - d_t.array() * h_sigma.array()).matrix();
    const DenseMatrix d_h_mu = (d_mu.array() * g.array()).matrix();
    const DenseMatrix d_h_sigma = (d_t.array() * (1.0 - g.array())).matrix();

    const DenseMatrix d_a_mu = (d_h_mu.array() * (1.0 - h_mu.array().square())).matrix();
    const DenseMatrix d_a_sigma = (d_h_sigma.array() * (1.0 - h_sigma.array().square())).matrix();
    const DenseMatrix d_gate_logits = (d_g.array() * g.array() * (1.0 - g.array())).matrix();

    store.grad(names::gate_w_mu).noalias() += x_mu.transpose() * d_a_mu;
    store.grad(names::gate_w_sigma).noalias() += x_sigma.transpose() * d_a_sigma;
    store.grad(names::gate_w_z).topRows(k).noalias() += x_mu.transpose() * d_gate_logits;
    store.grad(names::gate_w_z).bottomRows(k).noalias() += x_sigma.transpose() * d_gate_logits;

    DenseMatrix d_x_mu = d_a_mu * w_mu.transpose();
    d_x_mu.noalias() += d_gate_logits * w_z.topRows(k).transpose();
    DenseMatrix d_x_sigma = d_a_sigma * w_sigma.transpose();
    d_x_sigma.noalias() += d_gate_logits * w_z.bottomRows(k).transpose();

    res.d_e_u = DenseMatrix::Zero(n, e_u.cols());
    if (opt.use_high_order) {
        const DenseMatrix d_feature = d_x_mu + d_x_sigma;
        store.grad(names::gate_proj).noalias() += e_u.transpose() * d_feature;
        res.d_e_u.noalias() += d_feature * proj.transpose();
    }

    DenseMatrix d_enc_out(n, 2 * k);
    d_enc_out.leftCols(k) = d_x_mu;
    for (Index r = 0; r < n; ++r)
        for (Index c = 0; c < k; ++c) {
            const double raw = lv_raw(r, c);
            d_enc_out(r, k + c) = (raw > -kLogvarClamp && raw < kLogvarClamp) ? d_x_sigma(r, c) : 0.0;
        }
    store.grad(names::enc_w2).noalias() += enc_h.transpose() * d_enc_out;
    store.grad(names::enc_b2) += d_enc_out.colwise().sum();
    const DenseMatrix d_enc_pre =
        ((d_enc_out * w2.transpose()).array() * (1.0 - enc_h.array().square())).matrix();
    store.grad(names::enc_w1).noalias() += x.transpose() * d_enc_pre;
    store.grad(names::enc_b1) += d_enc_pre.colwise().sum();
    const DenseMatrix d_x = ((d_enc_pre * w1.transpose()).array() * mask.array()).matrix();

    // Row normalization x = p / |p|.
    DenseMatrix d_p(n, items);
    for (Index r = 0; r < n; ++r) {
        const double dot = x_norm.row(r).dot(d_x.row(r));
        d_p.row(r) = (d_x.row(r) - dot * x_norm.row(r)) / norms[r];
    }
    DenseMatrix d_rhat_logits = DenseMatrix::Zero(n, items);
    if (opt.align_weight != 0.0) {
        const double aw = grad_scale * opt.align_weight;
        d_p += aw * d_align_p;
        d_rhat_logits = (aw * d_align_rhat.array() * r_hat.array() * (1.0 - r_hat.array())).matrix();
    }

    // p = e_u e_v^T
    res.d_e_u.noalias() += d_p * e_v;
    res.d_e_v = d_p.transpose() * e_u;
    // r_hat = sigmoid((e_u . h) e_v^T)
    const DenseMatrix d_euh = d_rhat_logits * e_v;
    res.d_e_u.array() += d_euh.array().rowwise() * head.array();
    res.d_h = (e_u.array() * d_euh.array()).colwise().sum().matrix();
    res.d_e_v.noalias() += d_rhat_logits.transpose() * eu_h;
    return res;
}

// Evaluation-mode scores for a batch of users: decoder logits at z = mu.
inline DenseMatrix score_users(const DenseMatrix& e_u, const DenseMatrix& e_v, const ParamStore& store,
                               bool use_high_order) {
    const DenseMatrix x = normalize_rows(e_u * e_v.transpose());
    const EncoderOutput enc = encode(x, store);
    DenseMatrix feature = DenseMatrix::Zero(enc.mu.rows(), enc.mu.cols());
    if (use_high_order) feature = e_u * store.value(names::gate_proj);
    const GateOutput gated = gate_fuse(enc.mu + feature, enc.logvar + feature, store);
    return decode_logits(gated.mu, store);
}

}  // namespace aglsc::generative
