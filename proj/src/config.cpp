#include "gradrect/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

namespace gradrect {

using nlohmann::json;

nlohmann::json to_json(const CorpusSpec& s) {
    return {{"vocab_size", s.vocab_size},
            {"n_profiles", s.n_profiles},
            {"seqs_per_profile", s.seqs_per_profile},
            {"seq_len", s.seq_len},
            {"forget_fraction", s.forget_fraction},
            {"profile_concentration", s.profile_concentration},
            {"base_concentration", s.base_concentration},
            {"holdout_fraction", s.holdout_fraction},
            {"seed", s.seed}};
}

namespace {

// Overlays `user` onto `base`; every user key must exist in `base`.
void overlay(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object()) throw ConfigError(fmt::format("'{}' must be an object", prefix.empty() ? "<root>" : prefix));
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError(fmt::format("unknown config key '{}'", key));
        json& slot = base[it.key()];
        if (slot.is_object()) overlay(slot, it.value(), key);
        else slot = it.value();
    }
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("config key '{}{}{}': {}", section, *section ? "." : "", key, e.what()));
    }
}

CorpusSpec corpus_from(const json& j) {
    CorpusSpec s;
    s.vocab_size = get<std::size_t>(j, "corpus", "vocab_size");
    s.n_profiles = get<std::size_t>(j, "corpus", "n_profiles");
    s.seqs_per_profile = get<std::size_t>(j, "corpus", "seqs_per_profile");
    s.seq_len = get<std::size_t>(j, "corpus", "seq_len");
    s.forget_fraction = get<double>(j, "corpus", "forget_fraction");
    s.profile_concentration = get<double>(j, "corpus", "profile_concentration");
    s.base_concentration = get<double>(j, "corpus", "base_concentration");
    s.holdout_fraction = get<double>(j, "corpus", "holdout_fraction");
    if (j.contains("seed")) s.seed = get<std::uint64_t>(j, "corpus", "seed");
    return s;
}

template <typename F>
auto parse_enum(const json& j, const char* section, const char* key, F&& from_string) {
    const auto name = get<std::string>(j, section, key);
    try {
        return from_string(name);
    } catch (const UsageError& e) {
        throw ConfigError(fmt::format("config key '{}.{}': {}", section, key, e.what()));
    }
}

}  // namespace

CorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
    json base = to_json(CorpusSpec{});
    overlay(base, j, "corpus");
    return corpus_from(base);
}

nlohmann::json to_json(const ExperimentConfig& c) {
    json corpus = to_json(c.corpus);
    corpus.erase("seed");  // follows the top-level seed
    json methods = json::array();
    for (LossKind k : c.unlearn.methods) methods.push_back(to_string(k));
    return {
        {"schema_version", c.schema_version},
        {"experiment_id", c.experiment_id},
        {"seed", c.seed},
        {"corpus", corpus},
        {"model",
         {{"kind", to_string(c.model.kind)},
          {"embed_dim", c.model.embed_dim},
          {"hidden_dim", c.model.hidden_dim},
          {"init_scale", c.model.init_scale}}},
        {"pretrain",
         {{"max_epochs", c.pretrain.max_epochs},
          {"lr", c.pretrain.lr},
          {"min_improvement", c.pretrain.min_improvement}}},
        {"unlearn",
         {{"methods", methods},
          {"run_baseline", c.unlearn.run_baseline},
          {"run_gru", c.unlearn.run_gru},
          {"lr", c.unlearn.lr},
          {"epochs", c.unlearn.epochs},
          {"batch_u", c.unlearn.batch_u},
          {"batch_r", c.unlearn.batch_r},
          {"gamma", c.unlearn.gamma},
          {"tau", c.unlearn.tau ? json(*c.unlearn.tau) : json()},
          {"clip_baseline", c.unlearn.clip_baseline},
          {"optimizer", to_string(c.unlearn.optimizer)},
          {"adam",
           {{"beta1", c.unlearn.adam.beta1},
            {"beta2", c.unlearn.adam.beta2},
            {"eps", c.unlearn.adam.eps},
            {"weight_decay", c.unlearn.adam.weight_decay}}},
          {"lambda", c.unlearn.lambda},
          {"beta", c.unlearn.beta},
          {"length_normalized", c.unlearn.length_normalized}}},
        {"tru",
         {{"enabled", c.tru.enabled},
          {"run_baseline", c.tru.run_baseline},
          {"k_subsets", c.tru.cfg.k_subsets},
          {"ft_steps", c.tru.cfg.ft_steps},
          {"ft_lr", c.tru.cfg.ft_lr},
          {"stg", c.tru.cfg.stg},
          {"constraint_sign", to_string(c.tru.cfg.constraint_sign)}}},
        {"calibration",
         {{"enabled", c.calibration.enabled},
          {"targets", c.calibration.targets},
          {"tol", c.calibration.tol},
          {"max_iter", c.calibration.max_iter},
          {"proxy", to_string(c.calibration.proxy)}}},
        {"output", {{"svg", c.output.svg}, {"checkpoints", c.output.checkpoints}}},
    };
}

ExperimentConfig config_from_json(const nlohmann::json& user) {
    json j = to_json(ExperimentConfig{});
    overlay(j, user, "");
    ExperimentConfig c;
    c.schema_version = get<int>(j, "", "schema_version");
    if (c.schema_version != kConfigSchemaVersion)
        throw ConfigError(fmt::format("unsupported schema_version {} (expected {})", c.schema_version,
                                      kConfigSchemaVersion));
    c.experiment_id = get<std::string>(j, "", "experiment_id");
    c.seed = get<std::uint64_t>(j, "", "seed");
    c.corpus = corpus_from(j["corpus"]);
    c.corpus.seed = c.seed;

    const json& m = j["model"];
    c.model.kind = parse_enum(m, "model", "kind", model_kind_from_string);
    c.model.embed_dim = get<std::size_t>(m, "model", "embed_dim");
    c.model.hidden_dim = get<std::size_t>(m, "model", "hidden_dim");
    c.model.init_scale = get<double>(m, "model", "init_scale");

    const json& p = j["pretrain"];
    c.pretrain.max_epochs = get<std::size_t>(p, "pretrain", "max_epochs");
    c.pretrain.lr = get<double>(p, "pretrain", "lr");
    c.pretrain.min_improvement = get<double>(p, "pretrain", "min_improvement");

    const json& u = j["unlearn"];
    c.unlearn.methods.clear();
    for (const auto& name : get<std::vector<std::string>>(u, "unlearn", "methods")) {
        try {
            c.unlearn.methods.push_back(loss_kind_from_string(name));
        } catch (const UsageError& e) {
            throw ConfigError(fmt::format("config key 'unlearn.methods': {}", e.what()));
        }
    }
    c.unlearn.run_baseline = get<bool>(u, "unlearn", "run_baseline");
    c.unlearn.run_gru = get<bool>(u, "unlearn", "run_gru");
    c.unlearn.lr = get<double>(u, "unlearn", "lr");
    c.unlearn.epochs = get<std::size_t>(u, "unlearn", "epochs");
    c.unlearn.batch_u = get<std::size_t>(u, "unlearn", "batch_u");
    c.unlearn.batch_r = get<std::size_t>(u, "unlearn", "batch_r");
    c.unlearn.gamma = get<double>(u, "unlearn", "gamma");
    if (u.at("tau").is_null()) c.unlearn.tau.reset();
    else c.unlearn.tau = get<double>(u, "unlearn", "tau");
    c.unlearn.clip_baseline = get<bool>(u, "unlearn", "clip_baseline");
    c.unlearn.optimizer = parse_enum(u, "unlearn", "optimizer", optimizer_kind_from_string);
    const json& a = u["adam"];
    c.unlearn.adam.beta1 = get<double>(a, "unlearn.adam", "beta1");
    c.unlearn.adam.beta2 = get<double>(a, "unlearn.adam", "beta2");
    c.unlearn.adam.eps = get<double>(a, "unlearn.adam", "eps");
    c.unlearn.adam.weight_decay = get<double>(a, "unlearn.adam", "weight_decay");
    c.unlearn.lambda = get<double>(u, "unlearn", "lambda");
    c.unlearn.beta = get<double>(u, "unlearn", "beta");
    c.unlearn.length_normalized = get<bool>(u, "unlearn", "length_normalized");

    const json& t = j["tru"];
    c.tru.enabled = get<bool>(t, "tru", "enabled");
    c.tru.run_baseline = get<bool>(t, "tru", "run_baseline");
    c.tru.cfg.k_subsets = get<std::size_t>(t, "tru", "k_subsets");
    c.tru.cfg.ft_steps = get<std::size_t>(t, "tru", "ft_steps");
    c.tru.cfg.ft_lr = get<double>(t, "tru", "ft_lr");
    c.tru.cfg.stg = get<double>(t, "tru", "stg");
    c.tru.cfg.constraint_sign = parse_enum(t, "tru", "constraint_sign", constraint_sign_from_string);

    const json& cal = j["calibration"];
    c.calibration.enabled = get<bool>(cal, "calibration", "enabled");
    c.calibration.targets = get<std::vector<double>>(cal, "calibration", "targets");
    c.calibration.tol = get<double>(cal, "calibration", "tol");
    c.calibration.max_iter = get<std::size_t>(cal, "calibration", "max_iter");
    c.calibration.proxy = parse_enum(cal, "calibration", "proxy", retention_proxy_from_string);

    const json& o = j["output"];
    c.output.svg = get<bool>(o, "output", "svg");
    c.output.checkpoints = get<bool>(o, "output", "checkpoints");

    c.validate();
    return c;
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (experiment_id.empty()) fail("experiment_id must be non-empty");
    for (char ch : experiment_id)
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.'))
            fail("experiment_id may only contain letters, digits, '-', '_' and '.'");
    try {
        corpus.validate();
    } catch (const UsageError& e) {
        fail(e.what());
    }
    if (model.kind == ModelKind::MlpLm && (model.embed_dim == 0 || model.hidden_dim == 0))
        fail("model: mlp_lm needs positive embed_dim and hidden_dim");
    if (!(pretrain.lr > 0.0)) fail("pretrain.lr must be positive");
    if (!(pretrain.min_improvement >= 0.0)) fail("pretrain.min_improvement must be >= 0");
    if (unlearn.methods.empty()) fail("unlearn.methods must be non-empty");
    if (!unlearn.run_baseline && !unlearn.run_gru) fail("unlearn: enable at least one arm");
    if (!(unlearn.lr > 0.0)) fail("unlearn.lr must be positive");
    if (unlearn.epochs < 1) fail("unlearn.epochs must be >= 1");
    if (unlearn.batch_u < 1 || unlearn.batch_r < 1) fail("unlearn batch sizes must be >= 1");
    if (!(unlearn.gamma > 0.0 && unlearn.gamma < 1.0)) fail("unlearn.gamma must lie in (0, 1)");
    if (unlearn.tau && !(*unlearn.tau > 0.0)) fail("unlearn.tau must be positive or null");
    if (!(unlearn.lambda >= 0.0)) fail("unlearn.lambda must be >= 0");
    if (!(unlearn.beta > 0.0)) fail("unlearn.beta must be positive");
    if (!(unlearn.adam.beta1 >= 0.0 && unlearn.adam.beta1 < 1.0 && unlearn.adam.beta2 >= 0.0 &&
          unlearn.adam.beta2 < 1.0 && unlearn.adam.eps > 0.0 && unlearn.adam.weight_decay >= 0.0))
        fail("unlearn.adam: invalid parameters");
    if (tru.enabled) {
        try {
            tru.cfg.validate(corpus.forget_profiles() * corpus.seqs_per_profile);
        } catch (const UsageError& e) {
            fail(e.what());
        }
    }
    for (double t : calibration.targets)
        if (!(t > 0.0 && t <= 1.0)) fail("calibration.targets must lie in (0, 1]");
    if (!(calibration.tol > 0.0)) fail("calibration.tol must be positive");
    if (calibration.max_iter < 2) fail("calibration.max_iter must be >= 2");
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open config '{}'", path.string()));
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("'{}': {}", path.string(), e.what()));
    }
    return config_from_json(j);
}

ExperimentConfig with_seed(ExperimentConfig cfg, std::uint64_t seed) {
    cfg.seed = seed;
    cfg.corpus.seed = seed;
    return cfg;
}

std::string canonical_config_text(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 computation failed");
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
    return hex;
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(canonical_config_text(cfg)); }

void apply_override(nlohmann::json& config_json, const std::string& dotted_key, const nlohmann::json& value) {
    // Validate the path against the resolved schema, then write into the user JSON.
    const json schema = to_json(ExperimentConfig{});
    const json* node = &schema;
    json* target = &config_json;
    std::stringstream ss(dotted_key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ConfigError("empty override key");
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (!node->is_object() || !node->contains(parts[i]))
            throw ConfigError(fmt::format("unknown config key '{}'", dotted_key));
        node = &(*node)[parts[i]];
        if (!target->is_object()) *target = json::object();
        target = &(*target)[parts[i]];
    }
    if (node->is_object()) throw ConfigError(fmt::format("'{}' names a section, not a value", dotted_key));
    *target = value;
}

ExperimentConfig desk_preset(std::uint64_t seed) {
    ExperimentConfig c;
    c.experiment_id = "desk";
    c.corpus.vocab_size = 32;
    c.corpus.n_profiles = 40;
    c.corpus.forget_fraction = 0.05;
    c.model.kind = ModelKind::TabularBigram;
    return with_seed(c, seed);
}

}  // namespace gradrect
