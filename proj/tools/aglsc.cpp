// Command-line driver: prepare / train / evaluate / ablate.

#include "aglsc/aglsc.hpp"

#include "CLI11.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace aglsc;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct ReferenceStats {
    const char* name;
    Index users;
    Index items;
    std::size_t interactions;
    double density_pct;  // as published, rounded to 3 decimals
};

// Published statistics of the benchmark datasets.
constexpr ReferenceStats kReferences[] = {
    {"amazon-electronics", 1435, 1522, 35931, 1.645},
    {"ml-100k", 943, 1674, 55375, 3.507},
    {"ml-1m", 6022, 3043, 995154, 5.431},
    {"yelp", 31668, 38048, 1561406, 0.130},
};

const ReferenceStats* find_reference(const std::string& name) {
    for (const auto& r : kReferences)
        if (name == r.name) return &r;
    return nullptr;
}

std::string guess_reference(const fs::path& data) {
    const auto s = data.string();
    if (s.find("ml-100k") != std::string::npos || data.filename() == "u.data") return "ml-100k";
    if (s.find("ml-1m") != std::string::npos) return "ml-1m";
    if (s.find("yelp") != std::string::npos) return "yelp";
    if (s.find("amazon") != std::string::npos) return "amazon-electronics";
    return "";
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open '" + p.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write '" + p.string() + "'");
    os << text;
}

struct Prepared {
    ingest::InteractionSet data;
    std::string hash;
};

Prepared load_prepared(const fs::path& dir) {
    const auto text = read_file(dir / "split.tsv");
    std::istringstream in(text);
    return {ingest::read_split_manifest(in), hex64(fnv1a(text))};
}

std::vector<Index> parse_ks(const std::string& s) {
    std::vector<Index> ks;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');) ks.push_back(parse_int("k", tok));
    for (Index k : ks)
        if (k < 1) throw ConfigError("K values must be positive");
    return ks;
}

std::vector<double> parse_reals(const std::string& key, const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');) out.push_back(parse_double(key, tok));
    return out;
}

std::vector<std::string> parse_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');)
        if (!tok.empty()) out.push_back(tok);
    return out;
}

// Config file first, then explicit flags, then --set overrides.
struct ConfigArgs {
    std::string file;
    std::string variant;
    std::optional<double> lambda;
    std::optional<double> beta;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::vector<std::string> sets;

    void attach(CLI::App* app) {
        app->add_option("--config", file, "key = value config file");
        app->add_option("--variant", variant, "full | wo_vae | wo_fm | wo_both");
        app->add_option("--lambda", lambda, "high-order constraint weight");
        app->add_option("--beta", beta, "generative loss weight");
        app->add_option("--seed", seed, "random seed");
        app->add_option("--epochs", epochs, "maximum epochs");
        app->add_option("--set", sets, "override any config key (key=value)");
    }

    training::TrainConfig resolve() const {
        training::TrainConfig c;
        if (!file.empty()) c = training::TrainConfig::from_kv(KeyValueFile::load(file));
        if (!variant.empty()) c = training::ablate(c, variant);
        if (lambda) c.lambda = *lambda;
        if (beta) c.beta = *beta;
        if (seed) c.seed = *seed;
        if (epochs) c.max_epochs = *epochs;
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            c.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        c.validate();
        return c;
    }
};

void print_epoch(const training::EpochSummary& s) {
    std::cerr << "epoch " << std::setw(3) << s.epoch << "  rec " << eval::fmt_real(s.loss_rec, 5) << "  mc "
              << eval::fmt_real(s.loss_mc, 5) << "  vae " << eval::fmt_real(s.loss_vae, 3) << "  val N@20 "
              << (std::isnan(s.val_ndcg20) ? std::string("-") : eval::fmt_real(s.val_ndcg20, 4)) << "  ("
              << eval::fmt_real(s.seconds, 1) << "s)\n";
}

// ---------------------------------------------------------------------------

int cmd_prepare(const std::string& data_path, const std::string& format, double threshold, double test_fraction,
                std::uint64_t seed, std::size_t min_train, std::string reference, const std::string& out) {
    const auto fmt = ingest::parse_format(format);
    if (!fmt) throw ConfigError("unknown format '" + format + "' (tsv-rating, csv-rating or pair-list)");
    const auto all = ingest::load_interactions(data_path, *fmt, threshold);
    const auto data = ingest::split_seeded(all, test_fraction, seed, min_train);

    fs::create_directories(out);
    std::ostringstream split_text;
    ingest::write_split_manifest(data, split_text);
    write_file(fs::path(out) / "split.tsv", split_text.str());
    std::ostringstream users, items;
    for (Index i = 0; i < data.num_users(); ++i) users << i << '\t' << data.users.key(i) << '\n';
    for (Index i = 0; i < data.num_items(); ++i) items << i << '\t' << data.items.key(i) << '\n';
    write_file(fs::path(out) / "users.tsv", users.str());
    write_file(fs::path(out) / "items.tsv", items.str());

    const auto st = ingest::stats(all);
    KeyValueFile kv;
    kv.set("source", data_path);
    kv.set("source_hash", hex64(hash_file(data_path)));
    kv.set("format", format);
    kv.set("rating_threshold", format_double(threshold));
    kv.set("test_fraction", format_double(test_fraction));
    kv.set("min_train", std::to_string(min_train));
    kv.set("seed", std::to_string(seed));
    kv.set("users", std::to_string(st.users));
    kv.set("items", std::to_string(st.items));
    kv.set("interactions", std::to_string(st.interactions));
    kv.set("density_pct", eval::fmt_real(100.0 * st.density, 4));
    kv.set("train", std::to_string(data.count(ingest::Split::Train)));
    kv.set("test", std::to_string(data.count(ingest::Split::Test)));
    kv.set("dropped_test", std::to_string(all.pairs.size() - data.pairs.size()));
    kv.set("dataset_hash", hex64(fnv1a(split_text.str())));
    kv.set("outputs", "split.tsv,users.tsv,items.tsv,stats.txt");
    kv.save((fs::path(out) / "stats.txt").string());
    std::cout << kv.to_string();

    if (reference == "auto") reference = guess_reference(data_path);
    if (!reference.empty()) {
        const auto* ref = find_reference(reference);
        if (!ref) throw ConfigError("unknown reference dataset '" + reference + "'");
        const double density = std::round(100000.0 * st.density) / 1000.0;
        if (st.users != ref->users || st.items != ref->items || st.interactions != ref->interactions ||
            density != ref->density_pct) {
            std::ostringstream w;
            w << "statistics differ from the published " << ref->name << " figures (" << ref->users << " users, "
              << ref->items << " items, " << ref->interactions << " interactions, " << ref->density_pct
              << "% density); got " << st.users << ", " << st.items << ", " << st.interactions << ", "
              << eval::fmt_real(density, 3) << "%";
            log_warn(w.str());
        }
    }
    return 0;
}

int cmd_train(const std::string& prepared, const ConfigArgs& args, const std::string& out) {
    const auto cfg = args.resolve();
    const auto prep = load_prepared(prepared);
    fs::create_directories(out);
    cfg.to_kv().save((fs::path(out) / "config.txt").string());
    std::vector<training::EpochSummary> seen;
    const auto on_epoch = [&](const training::EpochSummary& s) {
        seen.push_back(s);
        print_epoch(s);
    };
    training::Run run;
    try {
        run = training::run_experiment(prep.data, cfg, {20, 40}, on_epoch);
    } catch (const NumericError& e) {
        const auto diag = fs::path(out) / "diagnostic.txt";
        write_file(diag, "error: " + std::string(e.what()) + "\nepochs completed: " + std::to_string(seen.size()) +
                             "\n\n" + training::history_csv(seen) + "\n" + cfg.to_kv().to_string());
        throw NumericError(std::string(e.what()) + " (see " + diag.string() + ")");
    }

    save_checkpoint(training::to_checkpoint(*run.model, prep.hash), (fs::path(out) / "model.ckpt").string());
    write_file(fs::path(out) / "history.csv", training::history_csv(run.fit.history));
    write_file(fs::path(out) / "metrics.csv", eval::report_csv(run.report));

    KeyValueFile manifest = cfg.to_kv();
    manifest.set("dataset_hash", prep.hash);
    manifest.set("config_hash", hex64(fnv1a(cfg.to_kv().to_string())));
    manifest.set("revision", AGLSC_REVISION);
    manifest.set("prepared", prepared);
    manifest.set("outputs", "config.txt,model.ckpt,history.csv,metrics.csv,run.txt");
    manifest.set("epochs_run", std::to_string(run.fit.history.size()));
    manifest.set("best_epoch", std::to_string(run.fit.best_epoch));
    manifest.set("stopped_early", run.fit.stopped_early ? "true" : "false");
    manifest.set("parameters", std::to_string(run.model->params().parameter_count()));
    for (Index k : run.report.ks) {
        manifest.set("recall@" + std::to_string(k), eval::fmt_real(run.report.recall.at(k), 8));
        manifest.set("ndcg@" + std::to_string(k), eval::fmt_real(run.report.ndcg.at(k), 8));
    }
    manifest.save((fs::path(out) / "run.txt").string());
    std::cout << eval::report_table(run.report);
    return 0;
}

int cmd_evaluate(const std::string& prepared, const std::string& model_path, const std::string& ks_text,
                 int sparsity_groups, const std::string& sparsity_out, const std::string& heat_users,
                 const std::string& heat_items, const std::string& heat_out, const std::string& out) {
    const auto prep = load_prepared(prepared);
    const auto ck = load_checkpoint(model_path);
    const auto cfg = training::config_from_checkpoint(ck);
    if (training::dataset_hash_of(ck) != prep.hash)
        throw DatasetError("checkpoint was trained on dataset " + training::dataset_hash_of(ck) + ", but '" +
                           prepared + "' hashes to " + prep.hash);
    auto data = training::make_training_data(prep.data, cfg.val_fraction, cfg.seed);
    training::Model model(cfg, data.fit);
    training::load_parameters(model, ck);

    auto ks = parse_ks(ks_text);
    if (sparsity_groups > 0 && std::find(ks.begin(), ks.end(), 20) == ks.end()) ks.push_back(20);
    const auto rep = eval::evaluate(model.scorer(), data.train, data.test, ks);
    std::cout << eval::report_table(rep);
    if (!out.empty()) write_file(out, eval::report_csv(rep));

    if (sparsity_groups > 0) {
        const auto groups = ingest::sparsity_groups(prep.data, sparsity_groups);
        const auto csv = eval::sparsity_csv(eval::sparsity_report(rep, groups, 20));
        if (sparsity_out.empty()) std::cout << csv;
        else write_file(sparsity_out, csv);
    }
    if (!heat_out.empty()) {
        eval::export_heatmap(model.scorer(), prep.data.users, prep.data.items, parse_list(heat_users),
                             parse_list(heat_items), heat_out);
    }
    return 0;
}

struct Summary {
    double r20 = 0, n20 = 0, n40 = 0;
};

Summary mean_over_seeds(const ingest::InteractionSet& data, training::TrainConfig cfg,
                        const std::vector<std::uint64_t>& seeds, const std::string& label) {
    Summary s;
    for (auto seed : seeds) {
        cfg.seed = seed;
        const auto run = training::run_experiment(data, cfg, {20, 40});
        std::cerr << label << " seed " << seed << ": R@20 " << eval::fmt_real(run.report.recall.at(20), 4) << " N@20 "
                  << eval::fmt_real(run.report.ndcg.at(20), 4) << " (best epoch " << run.fit.best_epoch << ")\n";
        s.r20 += run.report.recall.at(20);
        s.n20 += run.report.ndcg.at(20);
        s.n40 += run.report.ndcg.at(40);
    }
    const auto n = static_cast<double>(seeds.size());
    s.r20 /= n;
    s.n20 /= n;
    s.n40 /= n;
    return s;
}

int cmd_ablate(const std::string& prepared, const ConfigArgs& args, const std::string& seeds_text, bool sweep,
               const std::string& grid_text, const std::string& out) {
    const auto base = args.resolve();
    const auto prep = load_prepared(prepared);
    std::vector<std::uint64_t> seeds;
    for (const auto& s : parse_list(seeds_text)) seeds.push_back(parse_uint("seeds", s));
    if (seeds.empty()) throw ConfigError("--seeds is empty");

    std::ostringstream csv;
    if (!sweep) {
        csv << "variant,recall20,ndcg20,ndcg40\n";
        std::cout << std::left << std::setw(10) << "variant" << std::setw(10) << "R@20" << std::setw(10) << "N@20"
                  << "N@40\n";
        for (const auto& v : training::variants()) {
            const auto s = mean_over_seeds(prep.data, training::ablate(base, v), seeds, v);
            csv << v << ',' << eval::fmt_real(s.r20, 8) << ',' << eval::fmt_real(s.n20, 8) << ','
                << eval::fmt_real(s.n40, 8) << '\n';
            std::cout << std::setw(10) << v << std::setw(10) << eval::fmt_real(s.r20, 4) << std::setw(10)
                      << eval::fmt_real(s.n20, 4) << eval::fmt_real(s.n40, 4) << std::endl;
        }
    } else {
        const auto grid = parse_reals("grid", grid_text);
        csv << "lambda,beta,recall20,ndcg20,ndcg40\n";
        std::cout << std::left << std::setw(10) << "lambda" << std::setw(10) << "beta" << std::setw(10) << "R@20"
                  << "N@20\n";
        for (double lam : grid)
            for (double beta : grid) {
                auto cfg = base;
                cfg.lambda = lam;
                cfg.beta = beta;
                const auto label = "lambda=" + format_double(lam) + " beta=" + format_double(beta);
                const auto s = mean_over_seeds(prep.data, cfg, seeds, label);
                csv << format_double(lam) << ',' << format_double(beta) << ',' << eval::fmt_real(s.r20, 8) << ','
                    << eval::fmt_real(s.n20, 8) << ',' << eval::fmt_real(s.n40, 8) << '\n';
                std::cout << std::setw(10) << format_double(lam) << std::setw(10) << format_double(beta)
                          << std::setw(10) << eval::fmt_real(s.r20, 4) << eval::fmt_real(s.n20, 4) << std::endl;
            }
    }
    if (!out.empty()) write_file(out, csv.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph recommender with high-order constraints and generative completion"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "debug logging");

    auto* prep = app.add_subcommand("prepare", "load interactions, split, write manifests");
    std::string data_path, format = "tsv-rating", reference = "auto", prep_out;
    double threshold = 1.0, test_fraction = 0.2;
    std::uint64_t prep_seed = 2024;
    std::size_t min_train = 1;
    prep->add_option("--data", data_path, "interaction file")->required();
    prep->add_option("--format", format, "tsv-rating | csv-rating | pair-list");
    prep->add_option("--threshold", threshold, "minimum rating counted as positive");
    prep->add_option("--test-fraction", test_fraction, "per-user test fraction");
    prep->add_option("--seed", prep_seed, "split seed");
    prep->add_option("--min-train", min_train, "minimum train interactions per user");
    prep->add_option("--reference", reference, "published statistics to compare against (auto, none, ml-100k, ml-1m, yelp, amazon-electronics)");
    prep->add_option("--out", prep_out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train a model on a prepared split");
    std::string train_prepared, train_out;
    ConfigArgs train_args;
    train->add_option("--prepared", train_prepared, "directory written by prepare")->required();
    train->add_option("--out", train_out, "run directory")->required();
    train_args.attach(train);

    auto* evalc = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
    std::string ev_prepared, ev_model, ev_ks = "20,40", ev_sparsity_out, heat_users, heat_items, heat_out, ev_out;
    int ev_groups = 0;
    evalc->add_option("--prepared", ev_prepared, "directory written by prepare")->required();
    evalc->add_option("--model", ev_model, "checkpoint file")->required();
    evalc->add_option("--k", ev_ks, "comma-separated cutoffs");
    evalc->add_option("--sparsity-groups", ev_groups, "report NDCG@20 per train-degree quantile group");
    evalc->add_option("--sparsity-out", ev_sparsity_out, "CSV path for the sparsity report");
    evalc->add_option("--heatmap-users", heat_users, "comma-separated raw user ids");
    evalc->add_option("--heatmap-items", heat_items, "comma-separated raw item ids");
    evalc->add_option("--heatmap-out", heat_out, "CSV path for the score heatmap");
    evalc->add_option("--out", ev_out, "CSV path for the metric report");

    auto* abl = app.add_subcommand("ablate", "compare variants or sweep lambda/beta");
    std::string ab_prepared, ab_seeds = "1,2,3", ab_grid = "0,0.001,0.01,0.1,0.5", ab_out;
    bool ab_sweep = false;
    ConfigArgs ab_args;
    abl->add_option("--prepared", ab_prepared, "directory written by prepare")->required();
    abl->add_option("--seeds", ab_seeds, "comma-separated seeds");
    abl->add_flag("--sweep", ab_sweep, "sweep lambda x beta instead of the four variants");
    abl->add_option("--grid", ab_grid, "values for the sweep");
    abl->add_option("--out", ab_out, "CSV path for the table");
    ab_args.attach(abl);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }
    if (verbose) {
        log_sink() = [](LogLevel l, const std::string& m) {
            std::cerr << (l == LogLevel::Warn ? "warning: " : l == LogLevel::Debug ? "debug: " : "") << m << '\n';
        };
    }

    try {
        if (*prep)
            return cmd_prepare(data_path, format, threshold, test_fraction, prep_seed, min_train,
                               reference == "none" ? "" : reference, prep_out);
        if (*train) return cmd_train(train_prepared, train_args, train_out);
        if (*evalc)
            return cmd_evaluate(ev_prepared, ev_model, ev_ks, ev_groups, ev_sparsity_out, heat_users, heat_items,
                                heat_out, ev_out);
        if (*abl) return cmd_ablate(ab_prepared, ab_args, ab_seeds, ab_sweep, ab_grid, ab_out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}
