#include "aglsc/gradcheck.hpp"
#include "aglsc/training.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace aglsc;
using namespace aglsc::training;
using aglsc::testing::toy_batch;
using aglsc::testing::toy_config;
using aglsc::testing::toy_interactions;

namespace {

double check_objective(const TrainConfig& cfg, std::uint64_t seed) {
    Model model(cfg, toy_interactions());
    Rng rng(seed);
    aglsc::testing::jitter(model, rng);
    const Batch batch = toy_batch(model, rng);
    model.params().zero_grad();
    forward_backward(model, batch);
    const auto loss = [&](const ParamStore& s) {
        Model probe = model;
        probe.params() = s;
        return forward_backward(probe, batch).total;
    };
    const auto res = finite_diff_check_detailed(loss, model.params(), 1e-5);
    EXPECT_LT(res.max_rel_error, 1e-4) << cfg.variant << ": worst " << res.worst_param << "[" << res.worst_index
                                       << "] analytic " << res.analytic << " numeric " << res.numeric;
    return res.max_rel_error;
}

ingest::InteractionSet random_dataset(std::uint64_t seed, int users, int items, double density) {
    ingest::InteractionSet d;
    Rng rng(seed);
    for (int u = 0; u < users; ++u)
        for (int i = 0; i < items; ++i)
            if (rng.bernoulli(density) || i == u % items)
                d.pairs.push_back({d.users.intern("u" + std::to_string(u)), d.items.intern("i" + std::to_string(i)),
                                   ingest::Split::Train});
    return d;
}

}  // namespace

TEST(Config, DefaultSettings) {
    const TrainConfig c;
    EXPECT_EQ(c.dim, 128);
    EXPECT_EQ(c.layers, 2);
    EXPECT_EQ(c.hidden, 200);
    EXPECT_EQ(c.latent, 64);
    EXPECT_EQ(c.dropout, 0.2);
    EXPECT_EQ(c.lr, 0.001);
    EXPECT_EQ(c.lambda, 0.1);
    EXPECT_EQ(c.beta, 0.1);
    EXPECT_EQ(c.max_epochs, 100);
    EXPECT_EQ(c.patience, 10);
    EXPECT_EQ(c.batch_size, 1024);
    EXPECT_EQ(c.negatives, 1);
    EXPECT_TRUE(c.use_vae);
    EXPECT_TRUE(c.use_fm);
    EXPECT_EQ(c.vae_reduction, VaeReduction::Mean);
    EXPECT_EQ(c.score_source, ScoreSource::Gnn);
}

TEST(Config, KeyValueRoundTrip) {
    TrainConfig c;
    c.lambda = 0.01;
    c.seed = 7;
    c.score_source = ScoreSource::Decoder;
    c.vae_reduction = VaeReduction::Sum;
    c.variant = "wo_vae";
    EXPECT_EQ(TrainConfig::from_kv(c.to_kv()), c);
    auto kv = c.to_kv();
    kv.set("bogus", "1");
    EXPECT_THROW(TrainConfig::from_kv(kv), ConfigError);
    EXPECT_NO_THROW(TrainConfig::from_kv(kv, {"bogus"}));
    kv = c.to_kv();
    kv.set("dropout", "1.5");
    EXPECT_THROW(TrainConfig::from_kv(kv), ConfigError);
    kv = c.to_kv();
    kv.set("score_source", "blend");
    EXPECT_THROW(TrainConfig::from_kv(kv), ConfigError);
    kv = c.to_kv();
    kv.set("vae_reduction", "max");
    EXPECT_THROW(TrainConfig::from_kv(kv), ConfigError);
}

TEST(Ablation, VariantsSwitchModules) {
    const TrainConfig base;
    const auto wo_vae = ablate(base, "wo_vae");
    EXPECT_EQ(wo_vae.beta, 0.0);
    EXPECT_FALSE(wo_vae.use_vae);
    EXPECT_TRUE(wo_vae.use_fm);
    const auto wo_fm = ablate(base, "wo_fm");
    EXPECT_EQ(wo_fm.lambda, 0.0);
    EXPECT_FALSE(wo_fm.use_fm);
    EXPECT_TRUE(wo_fm.use_vae);
    const auto wo_both = ablate(base, "wo_both");
    EXPECT_FALSE(wo_both.use_vae || wo_both.use_fm);
    EXPECT_EQ(ablate(base, "full"), base);
    EXPECT_THROW(ablate(base, "wo_gnn"), ConfigError);
}

TEST(Negatives, NeverPositiveAndEmptyForSaturatedUser) {
    const auto r = SparseMatrix::from_triplets(2, 4, {{0, 0, 1}, {0, 2, 1}, {1, 0, 1}, {1, 1, 1}, {1, 2, 1}, {1, 3, 1}});
    Rng rng(1);
    for (int t = 0; t < 200; ++t) {
        const auto n = sample_negatives(r, 0, 3, rng);
        ASSERT_EQ(n.size(), 3u);
        for (Index j : n) EXPECT_TRUE(j == 1 || j == 3);
    }
    EXPECT_TRUE(sample_negatives(r, 1, 1, rng).empty());
}

TEST(Objective, BprIsStable) {
    EXPECT_NEAR(bpr_loss(0.0, 0.0), std::log(2.0), 1e-15);
    EXPECT_NEAR(bpr_loss(1000.0, 0.0), 0.0, 1e-300);
    EXPECT_NEAR(bpr_loss(0.0, 1000.0), 1000.0, 1e-9);
    EXPECT_NEAR(bpr_loss(1.3, 0.2), -std::log(1.0 / (1.0 + std::exp(-1.1))), 1e-15);
    EXPECT_DOUBLE_EQ(total_loss(1.0, 2.0, 3.0, 0.1, 0.5), 1.0 + 0.2 + 1.5);
}

TEST(Objective, GradientOfEveryVariant) {
    for (const auto& v : variants()) check_objective(ablate(toy_config(), v), 3);
}

TEST(Objective, MeanReductionScalesGenerativeTerms) {
    auto cfg = toy_config();
    cfg.vae_reduction = VaeReduction::Mean;
    check_objective(cfg, 4);

    auto sum_cfg = cfg;
    sum_cfg.vae_reduction = VaeReduction::Sum;
    check_objective(sum_cfg, 4);
    Model sum_model(sum_cfg, toy_interactions());
    Model mean_model(cfg, toy_interactions());
    Rng r1(8), r2(8);
    const auto a = forward_backward(sum_model, toy_batch(sum_model, r1));
    const auto b = forward_backward(mean_model, toy_batch(mean_model, r2));
    EXPECT_DOUBLE_EQ(b.vae_reconstruction, a.vae_reconstruction);
    EXPECT_NEAR(b.vae, a.vae_reconstruction / static_cast<double>(mean_model.items()) +
                           a.vae_kl / static_cast<double>(mean_model.items()) + a.vae_align,
                1e-12);
}

TEST(Objective, GradientWithSubsampledConstraint) {
    auto cfg = toy_config();
    Model model(cfg, toy_interactions());
    Rng rng(5);
    aglsc::testing::jitter(model, rng);
    Batch batch = toy_batch(model, rng);
    batch.mc_users = {0, 2, 3};
    batch.mc_items = {1, 4};
    batch.vae_users = {1, 3};
    batch.vae_eps = sample_gaussian(rng, 2, cfg.latent);
    batch.vae_mask = DenseMatrix::Ones(2, model.items());
    model.params().zero_grad();
    forward_backward(model, batch);
    const auto loss = [&](const ParamStore& s) {
        Model probe = model;
        probe.params() = s;
        return forward_backward(probe, batch).total;
    };
    EXPECT_LT(finite_diff_check(loss, model.params(), 1e-5), 1e-4);
}

TEST(Objective, DisabledTermsReportZero) {
    Model model(ablate(toy_config(), "wo_both"), toy_interactions());
    Rng rng(2);
    const auto parts = forward_backward(model, toy_batch(model, rng));
    EXPECT_EQ(parts.mc, 0.0);
    EXPECT_EQ(parts.vae, 0.0);
    EXPECT_EQ(parts.total, parts.rec);
}

TEST(Data, ValidationIsCarvedFromTrain) {
    ingest::InteractionSet d = random_dataset(4, 40, 30, 0.25);
    Rng rng(1);
    d = ingest::split(d, 0.2, rng);
    const auto td = make_training_data(d, 0.1, 9);
    EXPECT_EQ(td.train.nnz(), d.count(ingest::Split::Train));
    EXPECT_GT(td.val.nnz(), 0u);
    EXPECT_LE(td.fit.nnz() + td.val.nnz(), td.train.nnz());
    for (Index u = 0; u < td.users; ++u) {
        for (Index i : td.val.row_cols(u)) {
            EXPECT_EQ(td.fit.at(u, i), 0.0);
            EXPECT_EQ(td.train.at(u, i), 1.0);
        }
        for (Index i : td.fit.row_cols(u)) EXPECT_EQ(td.train.at(u, i), 1.0);
    }
    const auto none = make_training_data(d, 0.0, 9);
    EXPECT_EQ(none.fit, none.train);
    EXPECT_EQ(none.val.nnz(), 0u);
}

TEST(EarlyStop, StopsAfterPatienceEpochsWithoutImprovement) {
    EarlyStopping es(2);
    EXPECT_FALSE(es.update(1, 0.1));
    EXPECT_FALSE(es.update(2, 0.3));
    EXPECT_FALSE(es.update(3, 0.3));  // ties do not count as improvement
    EXPECT_TRUE(es.update(4, 0.2));
    EXPECT_EQ(es.best_epoch(), 2);
    EXPECT_DOUBLE_EQ(es.best(), 0.3);
}

TEST(Fit, DeterministicForFixedSeed) {
    ingest::InteractionSet d = random_dataset(6, 30, 25, 0.3);
    Rng rng(2);
    d = ingest::split(d, 0.2, rng);
    TrainConfig cfg = toy_config();
    cfg.dim = 8;
    cfg.hidden = 10;
    cfg.latent = 4;
    cfg.max_epochs = 3;
    cfg.batch_size = 32;
    cfg.mc_users = 10;
    cfg.mc_items = 10;
    cfg.vae_users = 8;
    const auto td = make_training_data(d, 0.1, cfg.seed);
    Model a(cfg, td.fit), b(cfg, td.fit);
    const auto ha = fit(a, td), hb = fit(b, td);
    EXPECT_TRUE(a.params() == b.params());
    EXPECT_EQ(history_csv(ha.history), history_csv(hb.history));
    const auto ra = eval::evaluate(a.scorer(), td.train, td.test, {5});
    const auto rb = eval::evaluate(b.scorer(), td.train, td.test, {5});
    EXPECT_EQ(ra.ndcg, rb.ndcg);

    cfg.seed += 1;
    Model c(cfg, td.fit);
    fit(c, td);
    EXPECT_FALSE(a.params() == c.params());
}

TEST(Fit, KeepsBestEpochAndWritesHistory) {
    ingest::InteractionSet d = random_dataset(8, 30, 25, 0.3);
    Rng rng(3);
    d = ingest::split(d, 0.2, rng);
    TrainConfig cfg = ablate(toy_config(), "wo_both");
    cfg.dim = 8;
    cfg.max_epochs = 6;
    cfg.patience = 1;
    cfg.lr = 0.05;
    const auto td = make_training_data(d, 0.2, cfg.seed);
    Model m(cfg, td.fit);
    const auto res = fit(m, td);
    ASSERT_FALSE(res.history.empty());
    EXPECT_EQ(validation_ndcg(m, td), res.best_metric);
    for (const auto& h : res.history) EXPECT_LE(h.val_ndcg20, res.best_metric);
    const auto csv = history_csv(res.history);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,loss_rec,loss_mc,loss_vae,val_ndcg20");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(res.history.size()) + 1);
}

TEST(Fit, LossDecreasesOnToyData) {
    ingest::InteractionSet d = random_dataset(10, 40, 30, 0.3);
    TrainConfig cfg = toy_config();
    cfg.dim = 8;
    cfg.max_epochs = 15;
    cfg.lr = 0.01;
    cfg.batch_size = 64;
    const auto td = make_training_data(d, 0.0, cfg.seed);
    Model m(cfg, td.fit);
    const auto res = fit(m, td);
    EXPECT_LT(res.history.back().loss_rec, res.history.front().loss_rec);
    EXPECT_EQ(res.best_epoch, 15);
}

TEST(Checkpoint, ModelRoundTrip) {
    TrainConfig cfg = toy_config();
    Model m(cfg, toy_interactions());
    Rng rng(1);
    aglsc::testing::jitter(m, rng);
    const auto path = (std::filesystem::temp_directory_path() / "aglsc_model.ckpt").string();
    save_checkpoint(to_checkpoint(m, "abc123"), path);
    const auto ck = load_checkpoint(path);
    EXPECT_EQ(dataset_hash_of(ck), "abc123");
    const TrainConfig back = config_from_checkpoint(ck);
    EXPECT_EQ(back, cfg);
    Model m2(back, toy_interactions());
    load_parameters(m2, ck);
    EXPECT_TRUE(m2.params() == m.params());
    const std::vector<Index> users{0, 1, 2, 3, 4};
    EXPECT_EQ(m.scorer()(users), m2.scorer()(users));

    TrainConfig wide = cfg;
    wide.dim = 5;
    Model m3(wide, toy_interactions());
    EXPECT_THROW(load_parameters(m3, ck), ShapeError);
    std::filesystem::remove(path);
}

TEST(Scorer, SourceFollowsConfig) {
    TrainConfig cfg = toy_config();
    cfg.score_source = ScoreSource::Decoder;
    Model dec(cfg, toy_interactions());
    cfg.score_source = ScoreSource::Gnn;
    Model gnn(cfg, toy_interactions());
    const std::vector<Index> users{0, 3};
    const DenseMatrix e = gnn.pooled();
    const DenseMatrix p = e.topRows(5) * e.bottomRows(5).transpose();
    const DenseMatrix got = gnn.scorer()(users);
    EXPECT_LT((got.row(1) - p.row(3)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_GT((dec.scorer()(users) - got).cwiseAbs().maxCoeff(), 1e-6);
    Model novae(ablate(toy_config(), "wo_vae"), toy_interactions());
    EXPECT_FALSE(novae.scores_from_decoder());
}

TEST(Negatives, ForcedChoiceAndUniformDraws) {
    const auto r = SparseMatrix::from_triplets(2, 10, {{0, 0, 1}, {0, 1, 1}, {0, 2, 1}, {0, 4, 1}, {0, 5, 1}, {0, 6, 1},
                                                       {0, 7, 1}, {0, 8, 1}, {0, 9, 1}, {1, 2, 1}, {1, 7, 1}});
    Rng rng(4);
    for (int t = 0; t < 100; ++t) EXPECT_EQ(sample_negatives(r, 0, 1, rng), (std::vector<Index>{3}));

    // Chi-square over the eight candidates of user 1; 24.32 is the 0.999 quantile at 7 dof.
    std::vector<double> counts(10, 0.0);
    const int draws = 100000;
    for (int t = 0; t < draws; ++t) counts[static_cast<std::size_t>(sample_negatives(r, 1, 1, rng).at(0))] += 1.0;
    EXPECT_EQ(counts[2] + counts[7], 0.0);
    double chi2 = 0.0;
    const double expected = draws / 8.0;
    for (std::size_t i = 0; i < 10; ++i)
        if (i != 2 && i != 7) chi2 += (counts[i] - expected) * (counts[i] - expected) / expected;
    EXPECT_LT(chi2, 24.32);
}

TEST(Objective, HandValues) {
    EXPECT_NEAR(bpr_loss(0.0, 1.0), 1.31326, 1e-5);
    EXPECT_NEAR(bpr_loss(0.5, 0.5), 0.69315, 1e-5);
    EXPECT_NEAR(total_loss(1.0, 1.0, 1.0, 0.1, 0.1), 1.2, 1e-15);
    EXPECT_EQ(total_loss(0.7, 5.0, 9.0, 0.0, 0.0), 0.7);
}

TEST(Epoch, ZeroLearningRateFreezesParameters) {
    auto cfg = toy_config();
    cfg.lr = 0.0;
    Model m(cfg, toy_interactions());
    const ParamStore before = m.params();
    const auto s = train_epoch(m, 1);
    EXPECT_GT(s.steps, 0u);
    for (std::size_t k = 0; k < before.params().size(); ++k)
        EXPECT_EQ(m.params().params()[k].value, before.params()[k].value) << before.params()[k].name;
}

TEST(Epoch, SameSeedSameSummary) {
    Model a(toy_config(), toy_interactions()), b(toy_config(), toy_interactions());
    const auto sa = train_epoch(a, 1), sb = train_epoch(b, 1);
    EXPECT_EQ(sa.loss_total, sb.loss_total);
    EXPECT_EQ(sa.loss_vae, sb.loss_vae);
}

TEST(EarlyStop, PatienceOneStopsAtSecondEpochOnDecline) {
    EarlyStopping es(1);
    EXPECT_FALSE(es.update(1, 0.5));
    EXPECT_TRUE(es.update(2, 0.4));
    EXPECT_EQ(es.best_epoch(), 1);
}

TEST(Fit, ZeroEpochsKeepsInitialState) {
    ingest::InteractionSet d = random_dataset(12, 20, 15, 0.3);
    Rng rng(1);
    d = ingest::split(d, 0.2, rng);
    auto cfg = toy_config();
    cfg.max_epochs = 0;
    const auto td = make_training_data(d, 0.1, cfg.seed);
    Model m(cfg, td.fit), fresh(cfg, td.fit);
    const auto res = fit(m, td);
    EXPECT_TRUE(res.history.empty());
    EXPECT_TRUE(m.params() == fresh.params());
}

TEST(Fit, TinyGraphLossFalls) {
    ingest::InteractionSet d;
    for (auto [u, i] : std::vector<std::pair<int, int>>{{0, 0}, {0, 1}, {1, 1}, {1, 2}, {2, 0}})
        d.pairs.push_back({d.users.intern("u" + std::to_string(u)), d.items.intern("i" + std::to_string(i)),
                           ingest::Split::Train});
    auto cfg = toy_config();
    cfg.max_epochs = 50;
    cfg.lr = 0.01;
    const auto td = make_training_data(d, 0.0, cfg.seed);
    Model m(cfg, td.fit);
    const auto res = fit(m, td);
    ASSERT_EQ(res.history.size(), 50u);
    EXPECT_LT(res.history.back().loss_total, res.history.front().loss_total);
    EXPECT_LT(res.history.back().loss_rec, res.history.front().loss_rec);
}

TEST(Scorer, ScalingEmbeddingsKeepsRanking) {
    auto cfg = ablate(toy_config(), "wo_vae");
    Model a(cfg, toy_interactions()), b(cfg, toy_interactions());
    b.params().value("embedding") *= 3.0;
    const std::vector<Index> users{0, 1, 2, 3, 4};
    const DenseMatrix sa = a.scorer()(users), sb = b.scorer()(users);
    for (Index u = 0; u < 5; ++u) {
        const std::vector<double> ra(sa.row(u).begin(), sa.row(u).end()), rb(sb.row(u).begin(), sb.row(u).end());
        EXPECT_EQ(eval::rank_items(ra, {}, 5).items, eval::rank_items(rb, {}, 5).items);
    }
}
