#include "gradrect/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "gradrect/checkpoint.hpp"
#include "gradrect/corpus.hpp"
#include "gradrect/errors.hpp"

namespace gradrect {

using nlohmann::json;

PretrainResult pretrain(const TokenDataset& dataset, const ModelConfig& model_cfg,
                        const PretrainConfig& cfg, std::uint64_t seed, bool retain_only) {
    if (dataset.count(Split::Retain) == 0 || (!retain_only && dataset.count(Split::Unlearn) == 0))
        throw UsageError("pretrain: dataset lacks unlearn or retain sequences");
    if (!(cfg.lr > 0.0)) throw UsageError("pretrain: lr must be positive");
    Batch train;
    for (const auto& e : dataset.entries())
        if (e.split == Split::Retain || (!retain_only && e.split == Split::Unlearn))
            train.push_back(e.sequence);

    CounterRng init = CounterRng(seed).derive("pretrain");
    Model model = model_cfg.kind == ModelKind::TabularBigram
                      ? Model::tabular_bigram(dataset.vocab_size())
                      : Model::mlp_lm(dataset.vocab_size(), model_cfg.embed_dim, model_cfg.hidden_dim,
                                      init, model_cfg.init_scale);
    PretrainResult res{model, {mean_nll(model, train)}, 0};
    std::size_t rises = 0;
    for (std::size_t e = 0; e < cfg.max_epochs; ++e) {
        const GradientVector g = grad_nll(res.model, train);
        ParamVector next = displaced(res.model.params(), -cfg.lr, g);
        if (!next.all_finite())
            throw NumericError(fmt::format("pretraining diverged at epoch {}: non-finite parameters", e));
        res.model = res.model.with_params(std::move(next));
        const double prev = res.epoch_nll.back();
        const double cur = mean_nll(res.model, train);
        res.epoch_nll.push_back(cur);
        ++res.epochs_run;
        if (!std::isfinite(cur)) throw NumericError(fmt::format("pretraining NLL non-finite at epoch {}", e));
        rises = cur > prev ? rises + 1 : 0;
        if (rises >= 3)
            throw NumericError(fmt::format(
                "pretraining diverged: NLL rose for 3 consecutive epochs (epoch {}, {:.6g} -> {:.6g}, lr {})", e,
                prev, cur, cfg.lr));
        if (cur <= prev && prev - cur < cfg.min_improvement) break;
    }
    return res;
}

const UnlearnArm& PipelineResult::arm(const std::string& name) const {
    for (const auto& a : arms)
        if (a.name == name) return a;
    throw UsageError(fmt::format("no unlearning arm named '{}'", name));
}

namespace {

std::uint64_t stage_seed(std::uint64_t seed, const char* label) { return CounterRng(seed).derive(label)(); }

std::string arm_name(LossKind method, bool gru) {
    return gru ? fmt::format("{}+GRU", to_string(method)) : std::string(to_string(method));
}

std::string arm_slug(const std::string& name) {
    std::string s;
    for (char c : name) {
        if (c == '+') s += "_";
        else s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return s;
}

struct StageGuard {
    const PipelineHooks& hooks;
    void begin(const char* stage) const {
        if (hooks.stage) *hooks.stage = stage;
    }
    void done(const char* stage, const PipelineResult& r) const {
        if (hooks.after_stage) hooks.after_stage(stage, r);
    }
};

}  // namespace

GruConfig make_gru_config(const ExperimentConfig& cfg, LossKind method, bool gru_arm,
                          std::size_t n_unlearn) {
    const UnlearnConfig& u = cfg.unlearn;
    GruConfig g;
    g.lr = u.lr;
    g.gamma = u.gamma;
    g.tau = (gru_arm || u.clip_baseline) ? u.tau : std::nullopt;
    g.batch_u = u.batch_u;
    g.batch_r = u.batch_r;
    g.steps = u.epochs * ((n_unlearn + u.batch_u - 1) / u.batch_u);
    g.loss.kind = method;
    g.loss.lambda = u.lambda;
    g.loss.beta = u.beta;
    g.loss.length_normalized = u.length_normalized;
    g.optimizer = u.optimizer;
    g.adam = u.adam;
    // Shared by both arms: identical batches, identical probe.
    g.seed = stage_seed(cfg.seed, "unlearn");
    return g;
}

PipelineResult run_pipeline(const ExperimentConfig& cfg, const PipelineHooks& hooks) {
    cfg.validate();
    const StageGuard sg{hooks};

    sg.begin(kStageGenerate);
    PipelineResult r{gen_corpus(cfg.corpus), Model::tabular_bigram(1), Model::tabular_bigram(1), {}, {}, {}, {}, {}, {}};
    sg.done(kStageGenerate, r);

    sg.begin(kStagePretrain);
    r.original_fit = pretrain(r.dataset, cfg.model, cfg.pretrain, cfg.seed, false);
    r.original = r.original_fit.model;
    sg.done(kStagePretrain, r);

    sg.begin(kStageGold);
    r.gold_fit = pretrain(r.dataset, cfg.model, cfg.pretrain, cfg.seed, true);
    r.gold = r.gold_fit.model;
    sg.done(kStageGold, r);

    const Batch forget = r.dataset.select(Split::Unlearn);
    const Batch retain = r.dataset.select(Split::Retain);
    const Batch holdout = r.dataset.select(Split::Holdout);

    sg.begin(kStageUnlearn);
    for (LossKind method : cfg.unlearn.methods) {
        for (bool gru : {false, true}) {
            if (gru ? !cfg.unlearn.run_gru : !cfg.unlearn.run_baseline) continue;
            UnlearnArm arm;
            arm.name = arm_name(method, gru);
            arm.method = method;
            arm.gru = gru;
            GruConfig g = make_gru_config(cfg, method, gru, forget.size());
            if (is_npo_family(method)) g.loss.reference = r.original;
            auto [theta, log] = run_unlearn(r.original, g, forget, retain, gru);
            arm.model = r.original.with_params(std::move(theta));
            arm.log = std::move(log);
            r.arms.push_back(std::move(arm));
        }
    }
    sg.done(kStageUnlearn, r);

    sg.begin(kStageEvaluate);
    r.original_eval = evaluate(r.original, r.gold, forget, retain, holdout);
    r.gold_eval = evaluate(r.gold, r.gold, forget, retain, holdout);
    for (auto& arm : r.arms) arm.eval = evaluate(arm.model, r.gold, forget, retain, holdout);
    sg.done(kStageEvaluate, r);

    if (cfg.calibration.enabled) {
        sg.begin(kStageCalibrate);
        const RetainEval retention = make_retention_eval(r.original, retain, cfg.calibration.proxy);
        for (auto& arm : r.arms) {
            for (double target : cfg.calibration.targets) {
                CalibrationOutcome out;
                out.target = target;
                out.result = calibrate_uwc(arm.model.params(), r.original.params(), retention, target,
                                           cfg.calibration.tol, cfg.calibration.max_iter);
                out.eval = evaluate(r.original.with_params(out.result.blended), r.gold, forget, retain, holdout);
                arm.calibrations.push_back(std::move(out));
            }
        }
        sg.done(kStageCalibrate, r);
    }

    if (cfg.tru.enabled) {
        sg.begin(kStageTru);
        TruConfig t = cfg.tru.cfg;
        t.seed = stage_seed(cfg.seed, "tru");
        for (bool rect : {false, true}) {
            if (!rect && !cfg.tru.run_baseline) continue;
            t.rectify = rect;
            TruArm arm;
            arm.name = rect ? "TRU" : "TV";
            auto [theta, log] = tru_unlearn(r.original, forget, t);
            arm.model = r.original.with_params(std::move(theta));
            arm.log = std::move(log);
            arm.eval = evaluate(arm.model, r.gold, forget, retain, holdout);
            r.tru_arms.push_back(std::move(arm));
        }
        sg.done(kStageTru, r);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Manifests and run directories

nlohmann::json to_json(const RunManifest& m) {
    json arts = json::array();
    for (const auto& a : m.artifacts) arts.push_back({{"kind", a.kind}, {"path", a.path}});
    return {{"experiment_id", m.experiment_id},
            {"config_hash", m.config_hash},
            {"seeds", m.seeds},
            {"artifacts", arts},
            {"started_at", m.started_at},
            {"finished_at", m.finished_at},
            {"status", m.status},
            {"failure_stage", m.failure_stage},
            {"failure_message", m.failure_message},
            {"resolved_config", m.resolved_config}};
}

RunManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& run_dir) {
    RunManifest m;
    try {
        m.experiment_id = j.at("experiment_id").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        for (const auto& a : j.at("artifacts"))
            m.artifacts.push_back({a.at("kind").get<std::string>(), a.at("path").get<std::string>()});
        m.started_at = j.at("started_at").get<std::string>();
        m.finished_at = j.at("finished_at").get<std::string>();
        m.status = j.at("status").get<std::string>();
        m.failure_stage = j.at("failure_stage").get<std::string>();
        m.failure_message = j.at("failure_message").get<std::string>();
        m.resolved_config = j.at("resolved_config");
    } catch (const json::exception& e) {
        throw IoError(fmt::format("malformed manifest in '{}': {}", run_dir.string(), e.what()));
    }
    m.run_dir = run_dir;
    return m;
}

RunManifest load_manifest(const std::filesystem::path& run_dir) {
    const auto path = run_dir / kManifestFile;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open manifest '{}'", path.string()));
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw IoError(fmt::format("'{}': {}", path.string(), e.what()));
    }
    return manifest_from_json(j, run_dir);
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out << text;
    out.flush();
    if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

void save_manifest(const RunManifest& m) {
    write_text(m.run_dir / kManifestFile, to_json(m).dump(2) + "\n");
}

std::filesystem::path run_directory(const ExperimentConfig& cfg_in, const RunOptions& opt) {
    const ExperimentConfig cfg = opt.seed ? with_seed(cfg_in, *opt.seed) : cfg_in;
    return opt.out_dir / fmt::format("{}-{}", cfg.experiment_id, config_hash(cfg).substr(0, 12));
}

namespace {

json pipeline_eval_json(const ExperimentConfig& cfg, const PipelineResult& r) {
    json arms = json::object();
    for (const auto& a : r.arms) {
        json events = a.log.events;
        std::size_t rectified = 0, degenerate = 0;
        for (const auto& rec : a.log.records) {
            rectified += rec.rectified;
            degenerate += rec.degenerate;
        }
        arms[a.name] = {{"method", to_string(a.method)},
                        {"gru", a.gru},
                        {"trajectory", fmt::format("trajectory_{}.csv", arm_slug(a.name))},
                        {"eval", to_json(a.eval)},
                        {"initial_retain_risk", a.log.initial_retain_risk},
                        {"final_retain_risk", a.log.final_retain_risk},
                        {"final_unlearn_loss", a.log.records.empty() ? json() : json(a.log.records.back().unlearn_loss)},
                        {"steps", a.log.records.size()},
                        {"rectified_steps", rectified},
                        {"degenerate_steps", degenerate},
                        {"optimizer", to_string(a.log.optimizer)},
                        {"events", events}};
    }
    json tru = json::object();
    for (const auto& t : r.tru_arms)
        tru[t.name] = {{"eval", to_json(t.eval)}, {"events", t.log.events},
                       {"diagnostics", fmt::format("tru_{}.csv", arm_slug(t.name))}};
    return {{"original", to_json(r.original_eval)},
            {"gold", to_json(r.gold_eval)},
            {"pretrain_epochs", {{"original", r.original_fit.epochs_run}, {"gold", r.gold_fit.epochs_run}}},
            {"npo_reference", "model state immediately before unlearning (the pretrained original)"},
            {"experiment_id", cfg.experiment_id},
            {"arms", arms},
            {"tru_arms", tru}};
}

json calibration_json(const PipelineResult& r, RetentionProxy proxy) {
    json out = json::object();
    out["retention_proxy"] = describe(proxy);
    for (const auto& a : r.arms) {
        json list = json::array();
        for (const auto& c : a.calibrations) {
            json j = to_json(c.result);
            j["retention_proxy"] = to_string(proxy);
            j["eval"] = to_json(c.eval);
            list.push_back(j);
        }
        out[a.name] = list;
    }
    return out;
}

void write_pretrain_csv(const PipelineResult& r, const std::filesystem::path& path) {
    std::string s = "epoch,original_nll,gold_nll\n";
    const std::size_t n = std::max(r.original_fit.epoch_nll.size(), r.gold_fit.epoch_nll.size());
    for (std::size_t e = 0; e < n; ++e) {
        auto cell = [&](const std::vector<double>& v) {
            return e < v.size() ? fmt::format("{:.17g}", v[e]) : std::string();
        };
        s += fmt::format("{},{},{}\n", e, cell(r.original_fit.epoch_nll), cell(r.gold_fit.epoch_nll));
    }
    write_text(path, s);
}

}  // namespace

RunManifest run_experiment(const ExperimentConfig& cfg_in, const RunOptions& opt) {
    const ExperimentConfig cfg = opt.seed ? with_seed(cfg_in, *opt.seed) : cfg_in;
    cfg.validate();
    RunManifest m;
    m.experiment_id = cfg.experiment_id;
    m.config_hash = config_hash(cfg);
    m.seeds = {cfg.seed};
    m.resolved_config = to_json(cfg);
    m.run_dir = run_directory(cfg, {});
    m.run_dir = opt.out_dir / m.run_dir.filename();
    m.started_at = utc_now();
    if (opt.dry_run) {
        m.status = "dry-run";
        m.finished_at = m.started_at;
        return m;
    }

    namespace fs = std::filesystem;
    std::error_code ec;
    if (fs::exists(m.run_dir / kManifestFile)) {
        if (!opt.force)
            throw RunExistsError(fmt::format("run '{}' already exists for config hash {}; use --force to overwrite",
                                             m.run_dir.string(), m.config_hash));
        fs::remove_all(m.run_dir, ec);
        if (ec) throw IoError(fmt::format("cannot clear '{}': {}", m.run_dir.string(), ec.message()));
    }
    fs::create_directories(m.run_dir, ec);
    if (ec) throw IoError(fmt::format("cannot create '{}': {}", m.run_dir.string(), ec.message()));

    auto add = [&](const std::string& kind, const std::string& rel) { m.artifacts.push_back({kind, rel}); };
    write_text(m.run_dir / "resolved_config.json", canonical_config_text(cfg));
    add("config", "resolved_config.json");

    auto checkpoint = [&](const Model& model, const std::string& stem) {
        if (!cfg.output.checkpoints) return;
        const std::string rel = "checkpoints/" + stem + ".ckpt";
        fs::create_directories(m.run_dir / "checkpoints");
        save_checkpoint(model, m.run_dir / rel);
        add("checkpoint", rel);
        add("checkpoint-sidecar", rel + ".json");
    };

    std::string stage;
    PipelineHooks hooks;
    hooks.stage = &stage;
    hooks.after_stage = [&](const std::string& done, const PipelineResult& r) {
        if (done == kStageGenerate) {
            r.dataset.save(m.run_dir / "dataset.bin");
            add("dataset", "dataset.bin");
        } else if (done == kStagePretrain) {
            checkpoint(r.original, "original");
        } else if (done == kStageGold) {
            checkpoint(r.gold, "gold");
            write_pretrain_csv(r, m.run_dir / "pretrain_history.csv");
            add("pretrain-history", "pretrain_history.csv");
        } else if (done == kStageUnlearn) {
            for (const auto& a : r.arms) {
                const std::string rel = fmt::format("trajectory_{}.csv", arm_slug(a.name));
                write_trajectory_csv(a.log.records, m.run_dir / rel);
                add("trajectory", rel);
                checkpoint(a.model, "unlearn_" + arm_slug(a.name));
            }
        } else if (done == kStageEvaluate) {
            write_text(m.run_dir / "eval.json", pipeline_eval_json(cfg, r).dump(2) + "\n");
            add("eval", "eval.json");
        } else if (done == kStageCalibrate) {
            write_text(m.run_dir / "calibration.json", calibration_json(r, cfg.calibration.proxy).dump(2) + "\n");
            add("calibration", "calibration.json");
        } else if (done == kStageTru) {
            for (const auto& t : r.tru_arms) {
                const std::string rel = fmt::format("tru_{}.csv", arm_slug(t.name));
                write_tru_diagnostics_csv(t.log, m.run_dir / rel);
                add("tru-diagnostics", rel);
                checkpoint(t.model, "tru_" + arm_slug(t.name));
            }
            // eval.json gains the TRU sections.
            write_text(m.run_dir / "eval.json", pipeline_eval_json(cfg, r).dump(2) + "\n");
        }
    };

    try {
        run_pipeline(cfg, hooks);
    } catch (const std::exception& e) {
        m.status = "failed";
        m.failure_stage = stage;
        m.failure_message = e.what();
        m.finished_at = utc_now();
        save_manifest(m);
        throw;
    }
    m.status = "ok";
    m.finished_at = utc_now();
    save_manifest(m);
    return m;
}

RunManifest run_experiment(const std::filesystem::path& config_path, const RunOptions& opt) {
    return run_experiment(load_config(config_path), opt);
}

// ---------------------------------------------------------------------------
// Sweeps

ParamGrid grid_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("grid must be a JSON object of key -> list of values");
    ParamGrid g;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it.value().is_array() || it.value().empty())
            throw ConfigError(fmt::format("grid key '{}' needs a non-empty list of values", it.key()));
        g.emplace_back(it.key(), std::vector<json>(it.value().begin(), it.value().end()));
    }
    return g;
}

namespace {

std::string value_label(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

}  // namespace

SweepResult sweep(const ExperimentConfig& base, const ParamGrid& grid, const SweepOptions& opt) {
    if (grid.empty()) throw UsageError("sweep: empty grid");
    for (const auto& [key, values] : grid)
        if (values.empty()) throw UsageError(fmt::format("sweep: grid key '{}' has no values", key));

    // Cartesian product, last key varying fastest.
    std::vector<std::vector<std::size_t>> points{{}};
    for (const auto& [key, values] : grid) {
        std::vector<std::vector<std::size_t>> next;
        for (const auto& p : points)
            for (std::size_t i = 0; i < values.size(); ++i) {
                auto q = p;
                q.push_back(i);
                next.push_back(std::move(q));
            }
        points = std::move(next);
    }

    std::vector<ExperimentConfig> configs;
    for (const auto& p : points) {
        json j = to_json(base);
        for (std::size_t k = 0; k < grid.size(); ++k) apply_override(j, grid[k].first, grid[k].second[p[k]]);
        configs.push_back(config_from_json(j));
    }

    SweepResult out;
    out.runs.resize(configs.size());
    std::vector<std::string> errors(configs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < configs.size();) {
            try {
                out.runs[i] = run_experiment(configs[i], opt.run);
            } catch (const std::exception& e) {
                errors[i] = e.what();
                const auto dir = run_directory(configs[i], opt.run);
                try {
                    out.runs[i] = load_manifest(dir);
                } catch (const std::exception&) {
                    out.runs[i].experiment_id = configs[i].experiment_id;
                    out.runs[i].config_hash = config_hash(configs[i]);
                    out.runs[i].run_dir = dir;
                    out.runs[i].status = "failed";
                    out.runs[i].failure_message = e.what();
                }
            }
        }
    };
    const std::size_t n_workers = std::max<std::size_t>(1, std::min(opt.workers, configs.size()));
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w + 1 < n_workers; ++w) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();

    // Per-run metrics from each run's eval.json.
    std::vector<json> evals(configs.size());
    std::vector<std::string> arm_names;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        if (out.runs[i].status != "ok") continue;
        std::ifstream in(out.runs[i].run_dir / "eval.json", std::ios::binary);
        if (!in) continue;
        evals[i] = json::parse(in, nullptr, false);
        if (evals[i].is_discarded() || !evals[i].contains("arms")) continue;
        for (auto it = evals[i]["arms"].begin(); it != evals[i]["arms"].end(); ++it)
            if (std::find(arm_names.begin(), arm_names.end(), it.key()) == arm_names.end())
                arm_names.push_back(it.key());
        for (auto it = evals[i]["tru_arms"].begin(); it != evals[i]["tru_arms"].end(); ++it)
            if (std::find(arm_names.begin(), arm_names.end(), it.key()) == arm_names.end())
                arm_names.push_back(it.key());
    }
    auto metric = [&](std::size_t i, const std::string& arm, const char* key) -> std::string {
        const json& e = evals[i];
        if (e.is_null() || e.is_discarded()) return "";
        for (const char* section : {"arms", "tru_arms"})
            if (e.contains(section) && e[section].contains(arm))
                return fmt::format("{:.17g}", e[section][arm]["eval"][key].get<double>());
        return "";
    };
    const char* metrics[] = {"fq_proxy", "mu_proxy", "forget_nll_per_token", "retain_nll_per_token"};

    std::filesystem::create_directories(opt.run.out_dir);
    out.summary_csv = opt.run.out_dir / "sweep_summary.csv";
    out.table_csv = opt.run.out_dir / "sweep_table.csv";
    {
        std::string s = "run_dir,status,config_hash";
        for (const auto& [key, values] : grid) s += "," + csv_cell(key);
        for (const auto& a : arm_names)
            for (const char* m : metrics) s += "," + csv_cell(a + "." + m);
        s += "\n";
        for (std::size_t i = 0; i < configs.size(); ++i) {
            s += csv_cell(out.runs[i].run_dir.filename().string()) + "," + out.runs[i].status + "," +
                 out.runs[i].config_hash;
            for (std::size_t k = 0; k < grid.size(); ++k) s += "," + csv_cell(value_label(grid[k].second[points[i][k]]));
            for (const auto& a : arm_names)
                for (const char* m : metrics) s += "," + metric(i, a, m);
            s += "\n";
        }
        write_text(out.summary_csv, s);
    }
    {
        std::string s = "arm,metric";
        for (const auto& p : points) {
            std::string label;
            for (std::size_t k = 0; k < grid.size(); ++k)
                label += (k ? ";" : "") + grid[k].first + "=" + value_label(grid[k].second[p[k]]);
            s += "," + csv_cell(label);
        }
        s += "\n";
        for (const auto& a : arm_names)
            for (const char* m : {"fq_proxy", "mu_proxy"}) {
                s += csv_cell(a) + "," + m;
                for (std::size_t i = 0; i < configs.size(); ++i) s += "," + metric(i, a, m);
                s += "\n";
            }
        write_text(out.table_csv, s);
    }
    return out;
}

SweepResult sweep(const std::filesystem::path& config_path, const ParamGrid& grid, const SweepOptions& opt) {
    return sweep(load_config(config_path), grid, opt);
}

}  // namespace gradrect
