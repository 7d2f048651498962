// gradrect command-line front end.
//
// Exit codes: 0 success, 2 config/usage error, 3 numeric failure, 4 I/O failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "gradrect/calibration.hpp"
#include "gradrect/checkpoint.hpp"
#include "gradrect/config.hpp"
#include "gradrect/corpus.hpp"
#include "gradrect/errors.hpp"
#include "gradrect/experiment.hpp"
#include "gradrect/report.hpp"
#include "gradrect/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gradrect;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "runs";
    bool force = false;
    bool dry_run = false;
    bool no_svg = false;
};

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? desk_preset() : load_config(c.config);
    if (c.seed) cfg = with_seed(cfg, *c.seed);
    return cfg;
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out << j.dump(2) << '\n';
    if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

int cmd_gen_data(const Common& c) {
    const ExperimentConfig cfg = resolve(c);
    const TokenDataset ds = gen_corpus(cfg.corpus);
    fs::create_directories(c.out_dir);
    const fs::path path = fs::path(c.out_dir) / "dataset.bin";
    ds.save(path);
    write_json_file(fs::path(c.out_dir) / "corpus.json", to_json(cfg.corpus));
    std::cout << fmt::format("wrote {} ({} unlearn, {} retain, {} holdout sequences)\n", path.string(),
                             ds.count(Split::Unlearn), ds.count(Split::Retain), ds.count(Split::Holdout));
    return kExitOk;
}

int cmd_pretrain(const Common& c) {
    const ExperimentConfig cfg = resolve(c);
    const TokenDataset ds = gen_corpus(cfg.corpus);
    fs::create_directories(c.out_dir);
    const auto orig = pretrain(ds, cfg.model, cfg.pretrain, cfg.seed, false);
    const auto gold = pretrain(ds, cfg.model, cfg.pretrain, cfg.seed, true);
    ds.save(fs::path(c.out_dir) / "dataset.bin");
    save_checkpoint(orig.model, fs::path(c.out_dir) / "original.ckpt");
    save_checkpoint(gold.model, fs::path(c.out_dir) / "gold.ckpt");
    std::cout << fmt::format("original: {} epochs, train NLL {:.6f}\ngold: {} epochs, train NLL {:.6f}\n",
                             orig.epochs_run, orig.epoch_nll.back(), gold.epochs_run, gold.epoch_nll.back());
    return kExitOk;
}

int run_and_report(const Common& c, ExperimentConfig cfg) {
    RunOptions opt;
    opt.out_dir = c.out_dir;
    opt.force = c.force;
    opt.dry_run = c.dry_run;
    RunManifest m = run_experiment(cfg, opt);
    if (m.status == "dry-run") {
        std::cout << to_json(m).dump(2) << '\n';
        return kExitOk;
    }
    emit_report(m, {cfg.output.svg && !c.no_svg});
    std::cout << fmt::format("run complete: {}\n", m.run_dir.string());
    return kExitOk;
}

int cmd_calibrate(const std::string& unlearned, const std::string& original, const std::string& dataset,
                  double target, double tol, std::size_t max_iter, const std::string& proxy_name,
                  const std::string& out) {
    const RetentionProxy proxy = retention_proxy_from_string(proxy_name);
    const Model mu = load_checkpoint(unlearned);
    const Model mo = load_checkpoint(original);
    const TokenDataset ds = TokenDataset::load(dataset);
    const Batch retain = ds.select(Split::Retain);
    const auto res = calibrate_uwc(mu.params(), mo.params(), make_retention_eval(mo, retain, proxy), target,
                                   tol, max_iter);
    json j = to_json(res);
    j["retention_proxy"] = describe(proxy);
    if (!out.empty()) {
        write_json_file(out, j);
        save_checkpoint(mo.with_params(res.blended), fs::path(out).replace_extension(".ckpt"));
    }
    std::cout << j.dump(2) << '\n';
    return kExitOk;
}

int cmd_verify(std::size_t instances, std::uint64_t seed, const std::string& out) {
    theory::SuiteOptions opt;
    opt.instances = instances;
    opt.seed = seed;
    const auto t1 = theory::theorem1_suite(opt);
    const auto t1d = theory::theorem1_degenerate_suite(100, seed);
    const auto t2 = theory::theorem2_suite(opt);
    const auto t2a = theory::theorem2_adversarial(instances, seed);
    const bool adversarial_ok = t2a.condition_violated_failures >= 1;
    const json j{{"theorem1", theory::to_json(t1)},
                 {"theorem1_degenerate", theory::to_json(t1d)},
                 {"theorem2", theory::to_json(t2)},
                 {"theorem2_adversarial", theory::to_json(t2a)},
                 {"counterexample_found", adversarial_ok}};
    if (!out.empty()) write_json_file(out, j);
    std::cout << j.dump(2) << '\n';
    return t1.passed && t1d.passed && t2.passed && adversarial_ok ? kExitOk : kExitNumeric;
}

int cmd_sweep(const Common& c, const std::string& grid_path, std::size_t workers) {
    std::ifstream in(grid_path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open grid '{}'", grid_path));
    json g;
    try {
        g = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("'{}': {}", grid_path, e.what()));
    }
    SweepOptions opt;
    opt.run.out_dir = c.out_dir;
    opt.run.force = c.force;
    opt.workers = workers;
    const auto res = sweep(resolve(c), grid_from_json(g), opt);
    std::size_t failed = 0;
    for (const auto& m : res.runs) failed += m.status != "ok";
    std::cout << fmt::format("{} runs ({} failed)\nsummary: {}\ntable: {}\n", res.runs.size(), failed,
                             res.summary_csv.string(), res.table_csv.string());
    return failed ? kExitNumeric : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gradrect: gradient-rectified unlearning lab"};
    app.require_subcommand(1);
    Common common;

    auto add_common = [&](CLI::App* sub, bool run_flags) {
        sub->add_option("--config", common.config, "experiment config (JSON); desk preset if omitted");
        sub->add_option("--seed", common.seed, "override the config seed");
        sub->add_option("--out-dir", common.out_dir, "output directory");
        if (run_flags) {
            sub->add_flag("--force", common.force, "overwrite an existing run with the same config hash");
            sub->add_flag("--dry-run", common.dry_run, "resolve the config and print the manifest only");
            sub->add_flag("--no-svg", common.no_svg, "skip SVG charts");
        }
    };

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic profile corpus");
    add_common(gen, false);
    auto* pre = app.add_subcommand("pretrain", "fit the original and retrained-gold models");
    add_common(pre, false);
    auto* unl = app.add_subcommand("unlearn", "full pipeline: pretrain, unlearn with and without GRU, evaluate, calibrate");
    add_common(unl, true);
    auto* tru = app.add_subcommand("tru", "full pipeline with the task-vector arms enabled");
    add_common(tru, true);

    auto* cal = app.add_subcommand("calibrate-uwc", "blend an unlearned checkpoint back toward the original");
    std::string cal_u, cal_o, cal_d, cal_out, cal_proxy = "expected_accuracy";
    double cal_target = 0.9, cal_tol = 0.01;
    std::size_t cal_iter = 12;
    cal->add_option("--unlearned", cal_u, "unlearned checkpoint")->required();
    cal->add_option("--original", cal_o, "original checkpoint")->required();
    cal->add_option("--dataset", cal_d, "dataset file")->required();
    cal->add_option("--target", cal_target, "retention target fraction");
    cal->add_option("--tol", cal_tol, "tolerance");
    cal->add_option("--max-iter", cal_iter, "evaluation budget");
    cal->add_option("--proxy", cal_proxy, "retention proxy")
        ->check(CLI::IsMember({"expected_accuracy", "token_accuracy"}));
    cal->add_option("--out", cal_out, "write result JSON (and blended checkpoint) here");

    auto* ver = app.add_subcommand("verify-theorems", "run the quadratic test-bed suites");
    std::size_t ver_instances = 1000;
    std::uint64_t ver_seed = 0;
    std::string ver_out;
    ver->add_option("--instances", ver_instances, "random instances per suite");
    ver->add_option("--seed", ver_seed, "suite seed");
    ver->add_option("--out", ver_out, "write the JSON report here");

    auto* swp = app.add_subcommand("sweep", "one run per point of a parameter grid");
    add_common(swp, false);
    swp->add_flag("--force", common.force, "overwrite existing runs");
    std::string grid_path;
    std::size_t workers = 1;
    swp->add_option("--grid", grid_path, "grid JSON: {\"unlearn.gamma\": [0.1, 0.5], ...}")->required();
    swp->add_option("--workers", workers, "parallel runs");

    auto* rep = app.add_subcommand("report", "write report.json and charts for a finished run");
    std::string run_dir;
    bool rep_no_svg = false;
    rep->add_option("--run-dir", run_dir, "run directory")->required();
    rep->add_flag("--no-svg", rep_no_svg, "skip SVG charts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(common);
        if (pre->parsed()) return cmd_pretrain(common);
        if (unl->parsed()) return run_and_report(common, resolve(common));
        if (tru->parsed()) {
            ExperimentConfig cfg = resolve(common);
            cfg.tru.enabled = true;
            cfg.validate();
            return run_and_report(common, cfg);
        }
        if (cal->parsed()) return cmd_calibrate(cal_u, cal_o, cal_d, cal_target, cal_tol, cal_iter, cal_proxy, cal_out);
        if (ver->parsed()) return cmd_verify(ver_instances, ver_seed, ver_out);
        if (swp->parsed()) return cmd_sweep(common, grid_path, workers);
        if (rep->parsed()) {
            RunManifest m = load_manifest(run_dir);
            emit_report(m, {!rep_no_svg});
            std::cout << fmt::format("report written to {}\n", (fs::path(run_dir) / "report.json").string());
            return kExitOk;
        }
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const DomainError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const UsageError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    }
    return kExitConfig;
}
