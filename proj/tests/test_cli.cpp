#include "aglsc/config.hpp"
#include "aglsc/rng.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code;
    std::string out;
};

class Cli : public ::testing::Test {
protected:
    static fs::path dir;
    static const std::string small;  // fast model settings

    static void SetUpTestSuite() {
        dir = fs::temp_directory_path() / "aglsc_cli_test";
        fs::remove_all(dir);
        fs::create_directories(dir);
        aglsc::Rng rng(3);
        std::ofstream os(dir / "ratings.tsv");
        for (int u = 0; u < 40; ++u)
            for (int i = 0; i < 30; ++i)
                if (rng.bernoulli(0.3) || i == u % 30) os << 100 + u << '\t' << 500 + i << '\t' << 1 + rng.below(5) << "\t0\n";
    }
    static void TearDownTestSuite() { fs::remove_all(dir); }

    static CliResult run(const std::string& args) {
        const auto log = dir / "out.txt";
        const std::string cmd = std::string(AGLSC_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
        const int status = std::system(cmd.c_str());
        std::ifstream in(log);
        std::stringstream ss;
        ss << in.rdbuf();
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
    }

    static std::string read(const fs::path& p) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    static void prepare(const std::string& name, int seed = 1) {
        const auto r = run("prepare --data " + (dir / "ratings.tsv").string() + " --threshold 2 --seed " +
                           std::to_string(seed) + " --out " + (dir / name).string());
        ASSERT_EQ(r.code, 0) << r.out;
    }
};

fs::path Cli::dir;
const std::string Cli::small =
    " --epochs 2 --set dim=8 --set hidden=12 --set latent=4 --set batch_size=64 --set mc_users=16 --set mc_items=16";

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("prepare --out x").code, 2);
    EXPECT_EQ(run("prepare --data " + (dir / "ratings.tsv").string() + " --format xml --out " + (dir / "x").string()).code,
              2);
}

TEST_F(Cli, RuntimeFailuresExitOne) {
    const auto r = run("prepare --data /no/such/file --out " + (dir / "y").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("cannot open"), std::string::npos);
}

TEST_F(Cli, PrepareWritesManifests) {
    prepare("prep_a");
    const auto split = read(dir / "prep_a" / "split.tsv");
    std::istringstream lines(split);
    std::string line;
    std::size_t train = 0, test = 0;
    while (std::getline(lines, line)) {
        std::istringstream f(line);
        std::string u, i, s;
        f >> u >> i >> s;
        ASSERT_TRUE(s == "train" || s == "test") << line;
        (s == "train" ? train : test)++;
    }
    EXPECT_GT(test, 0u);
    const auto stats = aglsc::KeyValueFile::load((dir / "prep_a" / "stats.txt").string());
    EXPECT_EQ(stats.get("train"), std::to_string(train));
    EXPECT_EQ(stats.get("test"), std::to_string(test));
    EXPECT_EQ(stats.get("users"), "40");
    EXPECT_TRUE(fs::exists(dir / "prep_a" / "users.tsv"));
    EXPECT_TRUE(fs::exists(dir / "prep_a" / "items.tsv"));
    EXPECT_EQ(read(dir / "prep_a" / "users.tsv").substr(0, 6), "0\t100\n");
}

TEST_F(Cli, PrepareWarnsOnReferenceMismatch) {
    const auto r = run("prepare --data " + (dir / "ratings.tsv").string() + " --reference ml-100k --out " +
                       (dir / "prep_ref").string());
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("warning: statistics differ"), std::string::npos);
}

TEST_F(Cli, TrainEvaluateRoundTrip) {
    prepare("prep_b");
    prepare("prep_other", 7);
    const auto prep = (dir / "prep_b").string();
    const auto out = (dir / "run_b").string();
    auto r = run("train --prepared " + prep + " --out " + out + " --variant wo_fm --seed 5" + small);
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("N@20"), std::string::npos);
    const auto history = read(fs::path(out) / "history.csv");
    EXPECT_EQ(history.substr(0, history.find('\n')), "epoch,loss_rec,loss_mc,loss_vae,val_ndcg20");
    const auto manifest = aglsc::KeyValueFile::load((fs::path(out) / "run.txt").string());
    EXPECT_EQ(manifest.get("variant"), "wo_fm");
    EXPECT_EQ(manifest.get("lambda"), "0");
    EXPECT_EQ(manifest.get("seed"), "5");

    const auto ckpt = (fs::path(out) / "model.ckpt").string();
    r = run("evaluate --prepared " + prep + " --model " + ckpt + " --sparsity-groups 3 --sparsity-out " +
            (dir / "groups.csv").string() + " --heatmap-users 100,101 --heatmap-items 500,501,502 --heatmap-out " +
            (dir / "heat.csv").string() + " --out " + (dir / "eval.csv").string());
    ASSERT_EQ(r.code, 0) << r.out;
    // The evaluation of the stored checkpoint reproduces the training-time metrics.
    const auto metrics = read(fs::path(out) / "metrics.csv");
    EXPECT_EQ(read(dir / "eval.csv"), metrics);
    const auto groups = read(dir / "groups.csv");
    EXPECT_EQ(groups.substr(0, groups.find('\n')), "group_id,user_count,ndcg20");
    const auto heat = read(dir / "heat.csv");
    EXPECT_EQ(heat.substr(0, heat.find('\n')), "user,500,501,502");

    r = run("evaluate --prepared " + (dir / "prep_other").string() + " --model " + ckpt);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("dataset"), std::string::npos);

    r = run("evaluate --prepared " + prep + " --model " + ckpt + " --heatmap-users nobody --heatmap-items 500 "
            "--heatmap-out " + (dir / "h2.csv").string());
    EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, ConfigFileAndFlagsCompose) {
    prepare("prep_c");
    std::ofstream(dir / "cfg.txt") << "lambda = 0.25\nbeta = 0.05\nseed = 9\n";
    const auto out = (dir / "run_c").string();
    auto r = run("train --prepared " + (dir / "prep_c").string() + " --out " + out + " --config " +
                 (dir / "cfg.txt").string() + " --beta 0.3" + small);
    ASSERT_EQ(r.code, 0) << r.out;
    const auto manifest = aglsc::KeyValueFile::load((fs::path(out) / "run.txt").string());
    EXPECT_EQ(manifest.get("lambda"), "0.25");
    EXPECT_EQ(manifest.get("beta"), "0.3");
    EXPECT_EQ(manifest.get("seed"), "9");

    std::ofstream(dir / "bad.txt") << "lambda = 0.25\nwidth = 3\n";
    EXPECT_EQ(run("train --prepared " + (dir / "prep_c").string() + " --out " + out + " --config " +
                  (dir / "bad.txt").string())
                  .code,
              2);
    EXPECT_EQ(run("train --prepared " + (dir / "prep_c").string() + " --out " + out + " --variant nope").code, 2);
}

TEST_F(Cli, AblateAndSweepTables) {
    prepare("prep_d");
    const auto prep = (dir / "prep_d").string();
    auto r = run("ablate --prepared " + prep + " --seeds 1 --out " + (dir / "abl.csv").string() + small);
    ASSERT_EQ(r.code, 0) << r.out;
    const auto abl = read(dir / "abl.csv");
    for (const char* v : {"full,", "wo_fm,", "wo_vae,", "wo_both,"}) EXPECT_NE(abl.find(v), std::string::npos) << v;

    r = run("ablate --prepared " + prep + " --sweep --grid 0,0.5 --seeds 1 --out " + (dir / "sweep.csv").string() +
            small);
    ASSERT_EQ(r.code, 0) << r.out;
    const auto sweep = read(dir / "sweep.csv");
    EXPECT_EQ(std::count(sweep.begin(), sweep.end(), '\n'), 5);
    EXPECT_NE(sweep.find("\n0.5,0,"), std::string::npos);
}

TEST_F(Cli, RerunsAreByteIdentical) {
    prepare("prep_e");
    prepare("prep_e2");
    EXPECT_EQ(read(dir / "prep_e" / "split.tsv"), read(dir / "prep_e2" / "split.tsv"));
    const auto prep = (dir / "prep_e").string();
    for (const char* tag : {"run_e1", "run_e2"})
        ASSERT_EQ(run("train --prepared " + prep + " --out " + (dir / tag).string() + " --variant wo_both" + small).code,
                  0);
    EXPECT_EQ(read(dir / "run_e1" / "model.ckpt"), read(dir / "run_e2" / "model.ckpt"));
    const auto manifest = aglsc::KeyValueFile::load((dir / "run_e1" / "run.txt").string());
    EXPECT_TRUE(manifest.has("revision"));
    EXPECT_EQ(manifest.get("outputs"), "config.txt,model.ckpt,history.csv,metrics.csv,run.txt");

    // The ablated terms stay at zero in the history.
    std::istringstream hist(read(dir / "run_e1" / "history.csv"));
    std::string line;
    std::getline(hist, line);
    while (std::getline(hist, line)) {
        std::stringstream f(line);
        std::string epoch, rec, mc, vae;
        std::getline(f, epoch, ',');
        std::getline(f, rec, ',');
        std::getline(f, mc, ',');
        std::getline(f, vae, ',');
        EXPECT_EQ(std::stod(mc), 0.0) << line;
        EXPECT_EQ(std::stod(vae), 0.0) << line;
    }

    const auto ckpt = (dir / "run_e1" / "model.ckpt").string();
    for (const char* out : {"ev1.csv", "ev2.csv"})
        ASSERT_EQ(run("evaluate --prepared " + prep + " --model " + ckpt + " --sparsity-groups 5 --sparsity-out " +
                      (dir / (std::string("g_") + out)).string() + " --out " + (dir / out).string())
                      .code,
                  0);
    EXPECT_EQ(read(dir / "ev1.csv"), read(dir / "ev2.csv"));
    const auto groups = read(dir / "g_ev1.csv");
    const auto rows = std::count(groups.begin(), groups.end(), '\n') - 1;
    EXPECT_GE(rows, 1);
    EXPECT_LE(rows, 5);
}
