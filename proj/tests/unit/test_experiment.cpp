#include <doctest.h>

#include <fstream>
#include <iterator>
#include <set>
#include <string>

#include "fixtures.hpp"
#include "gradrect/checkpoint.hpp"
#include "gradrect/experiment.hpp"

using namespace gradrect;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::size_t count_fields(const std::string& line) {
    std::size_t n = 1;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') quoted = !quoted;
        if (c == ',' && !quoted) ++n;
    }
    return n;
}

ExperimentConfig quick(std::uint64_t seed = 1) {
    ExperimentConfig c = desk_preset(seed);
    c.experiment_id = "quick";
    c.output.checkpoints = false;
    return c;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("pretraining") {
    const ExperimentConfig c = quick();
    const TokenDataset d = gen_corpus(c.corpus);
    PretrainConfig none = c.pretrain;
    none.max_epochs = 0;
    const auto z = pretrain(d, c.model, none, 1);
    CHECK(z.epochs_run == 0);
    CHECK(z.model.params() == Model::tabular_bigram(32).params());

    PretrainConfig small = c.pretrain;
    small.lr = 0.1;
    small.max_epochs = 30;
    small.min_improvement = 0.0;
    const auto r = pretrain(d, c.model, small, 1);
    REQUIRE(r.epoch_nll.size() == r.epochs_run + 1);
    for (std::size_t e = 1; e < r.epoch_nll.size(); ++e) CHECK(r.epoch_nll[e] <= r.epoch_nll[e - 1]);

    PretrainConfig wild = c.pretrain;
    wild.lr = 1e6;
    CHECK_THROWS_AS(pretrain(d, c.model, wild, 1), NumericError);
}

TEST_CASE("dry run writes nothing") {
    fixture::TempDir dir("exp");
    RunOptions opt;
    opt.out_dir = dir.path();
    opt.dry_run = true;
    const RunManifest m = run_experiment(quick(), opt);
    CHECK(m.status == "dry-run");
    CHECK(m.artifacts.empty());
    CHECK(m.config_hash == config_hash(quick()));
    CHECK(m.resolved_config == to_json(quick()));
    CHECK_FALSE(std::filesystem::exists(m.run_dir));
}

TEST_CASE("completed runs are protected unless forced") {
    fixture::TempDir dir("exp");
    RunOptions opt;
    opt.out_dir = dir.path();
    const RunManifest m = run_experiment(quick(), opt);
    CHECK(m.status == "ok");
    CHECK(m.run_dir == run_directory(quick(), opt));
    CHECK(m.run_dir.filename().string() == "quick-" + m.config_hash.substr(0, 12));
    CHECK_THROWS_AS(run_experiment(quick(), opt), RunExistsError);
    opt.force = true;
    CHECK(run_experiment(quick(), opt).status == "ok");
}

TEST_CASE("manifest lists exactly the files on disk") {
    fixture::TempDir dir("exp");
    RunOptions opt;
    opt.out_dir = dir.path();
    ExperimentConfig c = quick();
    c.output.checkpoints = true;
    c.tru.enabled = true;
    const RunManifest m = run_experiment(c, opt);
    std::set<std::string> listed{kManifestFile};
    for (const auto& a : m.artifacts) {
        CHECK(std::filesystem::exists(m.run_dir / a.path));
        listed.insert(a.path);
    }
    for (const auto& e : std::filesystem::recursive_directory_iterator(m.run_dir))
        if (e.is_regular_file()) CHECK(listed.count(std::filesystem::relative(e.path(), m.run_dir).string()) == 1);

    const RunManifest back = load_manifest(m.run_dir);
    CHECK(back.artifacts == m.artifacts);
    CHECK(back.config_hash == m.config_hash);
    CHECK(sha256_hex(slurp(m.run_dir / "resolved_config.json")) == m.config_hash);
    CHECK(config_hash(load_config(m.run_dir / "resolved_config.json")) == m.config_hash);
    CHECK(load_checkpoint(m.run_dir / "checkpoints" / "original.ckpt").vocab_size() == 32);
}

TEST_CASE("a failing stage leaves a failed manifest and partial artifacts") {
    fixture::TempDir dir("exp");
    RunOptions opt;
    opt.out_dir = dir.path();
    ExperimentConfig c = quick();
    c.pretrain.lr = 1e6;
    CHECK_THROWS_AS(run_experiment(c, opt), NumericError);
    const RunManifest m = load_manifest(run_directory(c, opt));
    CHECK(m.status == "failed");
    CHECK(m.failure_stage == kStagePretrain);
    CHECK(m.failure_message.find("diverged") != std::string::npos);
    CHECK(std::filesystem::exists(m.run_dir / "dataset.bin"));
}

TEST_CASE("paired arms consume identical batches") {
    const PipelineResult r = run_pipeline(quick(3));
    for (const char* method : {"GA", "NPO"}) {
        const auto& base = r.arm(method);
        const auto& gru = r.arm(std::string(method) + "+GRU");
        REQUIRE(base.log.records.size() == gru.log.records.size());
        CHECK_FALSE(base.log.records.empty());
        for (std::size_t i = 0; i < base.log.records.size(); ++i) {
            CHECK(base.log.records[i].batch_r == gru.log.records[i].batch_r);
            if (!gru.log.records[i].degenerate) CHECK(base.log.records[i].batch_u == gru.log.records[i].batch_u);
        }
    }
    CHECK_THROWS_AS(r.arm("GD"), UsageError);
}

TEST_CASE("unlearning arm configuration") {
    const ExperimentConfig c = quick();
    const GruConfig g = make_gru_config(c, LossKind::NPO, true, 40);
    CHECK(g.steps == c.unlearn.epochs * 5);  // 40 sequences in batches of 8
    CHECK(g.lr == c.unlearn.lr);
    CHECK(g.gamma == c.unlearn.gamma);
    CHECK(g.loss.kind == LossKind::NPO);
    CHECK(g.optimizer == OptimizerKind::AdamW);
}

TEST_CASE("runs are reproducible byte for byte") {
    fixture::TempDir a("exp"), b("exp");
    RunOptions oa, ob;
    oa.out_dir = a.path();
    ob.out_dir = b.path();
    const RunManifest ma = run_experiment(quick(5), oa);
    const RunManifest mb = run_experiment(quick(5), ob);
    CHECK(ma.config_hash == mb.config_hash);
    REQUIRE(ma.artifacts == mb.artifacts);
    for (const auto& art : ma.artifacts)
        if (art.path.ends_with(".csv") || art.path.ends_with(".bin"))
            CHECK(slurp(ma.run_dir / art.path) == slurp(mb.run_dir / art.path));
}

TEST_CASE("sweeps") {
    fixture::TempDir dir("sweep");
    SweepOptions opt;
    opt.run.out_dir = dir.path();
    opt.workers = 4;

    SUBCASE("a one-point grid equals a single run") {
        const auto res = sweep(quick(), {{"unlearn.gamma", {json(0.8)}}}, opt);
        REQUIRE(res.runs.size() == 1);
        CHECK(res.runs[0].status == "ok");
        CHECK(res.runs[0].config_hash == config_hash(quick()));
        fixture::TempDir solo("solo");
        RunOptions ro;
        ro.out_dir = solo.path();
        const RunManifest m = run_experiment(quick(), ro);
        CHECK(slurp(m.run_dir / "trajectory_ga_gru.csv") == slurp(res.runs[0].run_dir / "trajectory_ga_gru.csv"));
        CHECK(lines_of(res.summary_csv).size() == 2);
    }

    SUBCASE("the gamma grid gives one table column per value") {
        std::vector<json> gammas;
        for (double g : {0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99}) gammas.emplace_back(g);
        const auto res = sweep(quick(), {{"unlearn.gamma", gammas}}, opt);
        CHECK(res.runs.size() == 12);
        for (const auto& r : res.runs) CHECK(r.status == "ok");
        const auto summary = lines_of(res.summary_csv);
        CHECK(summary.size() == 13);
        const auto table = lines_of(res.table_csv);
        REQUIRE(table.size() > 1);
        for (const auto& line : table) CHECK(count_fields(line) == 2 + 12);
    }

    SUBCASE("row count is the grid size for a product grid") {
        const auto res = sweep(quick(), {{"unlearn.gamma", {json(0.5), json(0.8)}}, {"unlearn.lr", {json(0.01), json(0.02), json(0.05)}}}, opt);
        CHECK(res.runs.size() == 6);
        CHECK(lines_of(res.summary_csv).size() == 7);
    }

    SUBCASE("empty or unknown grids are rejected") {
        CHECK_THROWS_AS(sweep(quick(), {}, opt), UsageError);
        CHECK_THROWS_AS(sweep(quick(), {{"unlearn.gamma", {}}}, opt), UsageError);
        CHECK_THROWS_AS(sweep(quick(), {{"unlearn.gama", {json(0.5)}}}, opt), ConfigError);
        CHECK_THROWS_AS(grid_from_json(json{{"unlearn.gamma", 0.5}}), ConfigError);
    }
}

}  // TEST_SUITE
