#include "relink/config.hpp"

#include <spdlog/fmt/fmt.h>

#include "relink/error.hpp"
#include "relink/util.hpp"

namespace relink {

using nlohmann::json;

namespace {

void merge_strict(json& base, const json& patch, const std::string& where) {
    if (!patch.is_object()) throw Error(ErrorCode::Config, fmt::format("{}: expected an object", where));
    for (const auto& [key, value] : patch.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        if (!base.contains(key)) throw Error(ErrorCode::Config, fmt::format("unknown config key '{}'", path));
        if (base[key].is_object() && !base[key].empty()) merge_strict(base[key], value, path);
        else base[key] = value;
    }
}

template <class T>
void require(bool ok, const char* key, const T& value, const char* rule) {
    if (!ok) throw Error(ErrorCode::Config, fmt::format("config {} = {} must be {}", key, value, rule));
}

template <class T>
T get(const json& j, const char* section, const char* key) {
    try {
        return j.at(section).at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Config, fmt::format("config {}.{}: {}", section, key, e.what()));
    }
}

} // namespace

json PipelineConfig::to_json() const {
    json rules = json::array();
    for (const auto& r : gateway.mock.rules) rules.push_back({{"contains", r.contains}, {"reply", r.reply}});
    return {
        {"seed", seed},
        {"paths",
         {{"corpus", paths.corpus.string()},
          {"catalog", paths.catalog.string()},
          {"train_questions", paths.train_questions.string()},
          {"work_dir", paths.work_dir.string()},
          {"templates", paths.templates.string()}}},
        {"extraction", {{"workers", extraction.workers}}},
        {"pool",
         {{"tau_c", pool.tau_c},
          {"alpha", pool.alpha},
          {"max_contexts_per_pair", pool.max_contexts_per_pair},
          {"clamp_at_zero", pool.clamp_at_zero},
          {"embed_batch_size", pool.embed_batch_size},
          {"workers", pool.workers}}},
        {"semantic",
         {{"dim", semantic.dim},
          {"temperature", semantic.temperature},
          {"learning_rate", semantic.learning_rate},
          {"batch_size", semantic.batch_size}}},
        {"ranker",
         {{"hidden", ranker.hidden},
          {"margin", ranker.margin},
          {"learning_rate", ranker.learning_rate},
          {"batch_size", ranker.batch_size},
          {"negatives_per_positive", ranker.negatives_per_positive},
          {"patience", ranker.patience},
          {"max_cycles", ranker.max_cycles},
          {"val_fraction", ranker.val_fraction}}},
        {"explore",
         {{"K", explore.beam_width},
          {"M", explore.shortlist_size},
          {"L_max", explore.max_length},
          {"completeness_check", explore.completeness_check},
          {"completeness_threshold", explore.completeness_threshold},
          {"workers", explore.workers}}},
        {"eval", {{"sample_size", eval.sample_size}, {"workers", eval.workers}, {"fractions", eval.fractions}}},
        {"gateway",
         {{"backend", gateway.backend},
          {"base_url", gateway.base_url},
          {"api_key_env", gateway.api_key_env},
          {"chat_model", gateway.chat_model},
          {"embed_model", gateway.embed_model},
          {"latent_embed_model", gateway.latent_embed_model},
          {"max_retries", gateway.max_retries},
          {"timeout_ms", gateway.timeout.count()},
          {"backoff_ms", gateway.backoff.count()},
          {"max_in_flight", gateway.max_in_flight},
          {"transcript_mode", std::string(to_string(gateway.transcript_mode))},
          {"transcript_path", gateway.transcript_path.string()},
          {"mock",
           {{"rules", rules},
            {"default_reply", gateway.mock.default_reply},
            {"embed_dim", gateway.mock.embed_dim},
            {"seed", gateway.mock.seed}}}}},
    };
}

PipelineConfig PipelineConfig::from_json(const json& input) {
    json j = PipelineConfig{}.to_json();
    merge_strict(j, input, "");

    PipelineConfig c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Config, fmt::format("config seed: {}", e.what()));
    }
    c.paths.corpus = get<std::string>(j, "paths", "corpus");
    c.paths.catalog = get<std::string>(j, "paths", "catalog");
    c.paths.train_questions = get<std::string>(j, "paths", "train_questions");
    c.paths.work_dir = get<std::string>(j, "paths", "work_dir");
    c.paths.templates = get<std::string>(j, "paths", "templates");

    c.extraction.workers = get<int>(j, "extraction", "workers");
    require(c.extraction.workers >= 1, "extraction.workers", c.extraction.workers, ">= 1");

    c.pool.tau_c = get<double>(j, "pool", "tau_c");
    c.pool.alpha = get<double>(j, "pool", "alpha");
    c.pool.max_contexts_per_pair = get<int>(j, "pool", "max_contexts_per_pair");
    c.pool.clamp_at_zero = get<bool>(j, "pool", "clamp_at_zero");
    c.pool.embed_batch_size = get<int>(j, "pool", "embed_batch_size");
    c.pool.workers = get<int>(j, "pool", "workers");
    require(c.pool.alpha >= 0.0, "pool.alpha", c.pool.alpha, ">= 0");
    require(c.pool.max_contexts_per_pair >= 1, "pool.max_contexts_per_pair", c.pool.max_contexts_per_pair, ">= 1");
    require(c.pool.embed_batch_size >= 1, "pool.embed_batch_size", c.pool.embed_batch_size, ">= 1");
    require(c.pool.workers >= 1, "pool.workers", c.pool.workers, ">= 1");

    c.semantic.dim = get<int>(j, "semantic", "dim");
    c.semantic.temperature = get<double>(j, "semantic", "temperature");
    c.semantic.learning_rate = get<double>(j, "semantic", "learning_rate");
    c.semantic.batch_size = get<int>(j, "semantic", "batch_size");
    require(c.semantic.dim >= 0, "semantic.dim", c.semantic.dim, ">= 0");
    require(c.semantic.temperature > 0.0, "semantic.temperature", c.semantic.temperature, "> 0");
    require(c.semantic.learning_rate > 0.0, "semantic.learning_rate", c.semantic.learning_rate, "> 0");
    require(c.semantic.batch_size >= 2, "semantic.batch_size", c.semantic.batch_size, ">= 2");

    c.ranker.hidden = get<int>(j, "ranker", "hidden");
    c.ranker.margin = get<double>(j, "ranker", "margin");
    c.ranker.learning_rate = get<double>(j, "ranker", "learning_rate");
    c.ranker.batch_size = get<int>(j, "ranker", "batch_size");
    c.ranker.negatives_per_positive = get<int>(j, "ranker", "negatives_per_positive");
    c.ranker.patience = get<int>(j, "ranker", "patience");
    c.ranker.max_cycles = get<int>(j, "ranker", "max_cycles");
    c.ranker.val_fraction = get<double>(j, "ranker", "val_fraction");
    require(c.ranker.hidden >= 1, "ranker.hidden", c.ranker.hidden, ">= 1");
    require(c.ranker.margin > 0.0, "ranker.margin", c.ranker.margin, "> 0");
    require(c.ranker.learning_rate > 0.0, "ranker.learning_rate", c.ranker.learning_rate, "> 0");
    require(c.ranker.batch_size >= 1, "ranker.batch_size", c.ranker.batch_size, ">= 1");
    require(c.ranker.negatives_per_positive >= 1, "ranker.negatives_per_positive", c.ranker.negatives_per_positive,
            ">= 1");
    require(c.ranker.patience >= 1, "ranker.patience", c.ranker.patience, ">= 1");
    require(c.ranker.max_cycles >= 0, "ranker.max_cycles", c.ranker.max_cycles, ">= 0");
    require(c.ranker.val_fraction > 0.0 && c.ranker.val_fraction < 1.0, "ranker.val_fraction", c.ranker.val_fraction,
            "in (0, 1)");

    c.explore.beam_width = get<int>(j, "explore", "K");
    c.explore.shortlist_size = get<int>(j, "explore", "M");
    c.explore.max_length = get<int>(j, "explore", "L_max");
    c.explore.completeness_check = get<bool>(j, "explore", "completeness_check");
    c.explore.completeness_threshold = get<double>(j, "explore", "completeness_threshold");
    c.explore.workers = get<int>(j, "explore", "workers");
    require(c.explore.beam_width >= 1, "explore.K", c.explore.beam_width, ">= 1");
    require(c.explore.shortlist_size >= 1, "explore.M", c.explore.shortlist_size, ">= 1");
    require(c.explore.max_length >= 0, "explore.L_max", c.explore.max_length, ">= 0");
    require(c.explore.completeness_threshold >= 0.0 && c.explore.completeness_threshold <= 1.0,
            "explore.completeness_threshold", c.explore.completeness_threshold, "in [0, 1]");
    require(c.explore.workers >= 1, "explore.workers", c.explore.workers, ">= 1");

    c.eval.sample_size = get<int>(j, "eval", "sample_size");
    c.eval.workers = get<int>(j, "eval", "workers");
    c.eval.fractions = get<std::vector<double>>(j, "eval", "fractions");
    require(c.eval.sample_size >= 0, "eval.sample_size", c.eval.sample_size, ">= 0");
    require(c.eval.workers >= 1, "eval.workers", c.eval.workers, ">= 1");
    for (double f : c.eval.fractions) require(f >= 0.0 && f <= 1.0, "eval.fractions[]", f, "in [0, 1]");

    auto& g = c.gateway;
    g.backend = get<std::string>(j, "gateway", "backend");
    g.base_url = get<std::string>(j, "gateway", "base_url");
    g.api_key_env = get<std::string>(j, "gateway", "api_key_env");
    g.chat_model = get<std::string>(j, "gateway", "chat_model");
    g.embed_model = get<std::string>(j, "gateway", "embed_model");
    g.latent_embed_model = get<std::string>(j, "gateway", "latent_embed_model");
    g.max_retries = get<int>(j, "gateway", "max_retries");
    g.timeout = std::chrono::milliseconds(get<long>(j, "gateway", "timeout_ms"));
    g.backoff = std::chrono::milliseconds(get<long>(j, "gateway", "backoff_ms"));
    g.max_in_flight = get<int>(j, "gateway", "max_in_flight");
    try {
        g.transcript_mode = parse_transcript_mode(get<std::string>(j, "gateway", "transcript_mode"));
    } catch (const Error& e) {
        throw Error(ErrorCode::Config, e.what());
    }
    g.transcript_path = get<std::string>(j, "gateway", "transcript_path");
    require(g.backend == "mock" || g.backend == "http", "gateway.backend", g.backend, "'mock' or 'http'");
    require(g.max_retries >= 0, "gateway.max_retries", g.max_retries, ">= 0");
    require(g.max_in_flight >= 1 && g.max_in_flight <= 1024, "gateway.max_in_flight", g.max_in_flight,
            "in [1, 1024]");
    require(g.timeout.count() > 0, "gateway.timeout_ms", g.timeout.count(), "> 0");
    require(g.backoff.count() >= 0, "gateway.backoff_ms", g.backoff.count(), ">= 0");
    const json& mock = j.at("gateway").at("mock");
    try {
        g.mock.rules.clear();
        for (const auto& r : mock.at("rules"))
            g.mock.rules.push_back({r.at("contains").get<std::string>(), r.at("reply").get<std::string>()});
        g.mock.default_reply = mock.at("default_reply").get<std::string>();
        g.mock.embed_dim = mock.at("embed_dim").get<int>();
        g.mock.seed = mock.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Config, fmt::format("config gateway.mock: {}", e.what()));
    }
    require(g.mock.embed_dim >= 1, "gateway.mock.embed_dim", g.mock.embed_dim, ">= 1");
    return c;
}

std::string PipelineConfig::hash() const { return sha256_hex(to_json().dump()).substr(0, 16); }

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw Error(ErrorCode::Config, fmt::format("override '{}' is not key=value", assignment));
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    std::vector<std::string> parts;
    for (std::size_t start = 0;;) {
        const auto dot = key.find('.', start);
        parts.push_back(key.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
        if (parts.back().empty()) throw Error(ErrorCode::Config, fmt::format("override key '{}' is malformed", key));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    json* node = &j;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object()) (*node)[parts[i]] = json::object();
        node = &(*node)[parts[i]];
    }
    (*node)[parts.back()] = value;
}

PipelineConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
    json j = json::object();
    if (!file.empty()) {
        try {
            j = json::parse(read_file(file));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::Config, fmt::format("{}: {}", file.string(), e.what()));
        }
        // Relative paths inside a config file are taken relative to it.
        if (j.contains("paths") && j["paths"].is_object()) {
            const auto base = std::filesystem::absolute(file).parent_path();
            for (auto& [k, v] : j["paths"].items())
                if (v.is_string() && !v.get<std::string>().empty() && std::filesystem::path(v.get<std::string>()).is_relative())
                    v = (base / v.get<std::string>()).lexically_normal().string();
        }
        if (j.contains("gateway") && j["gateway"].is_object() && j["gateway"].contains("transcript_path")) {
            auto& v = j["gateway"]["transcript_path"];
            if (v.is_string() && !v.get<std::string>().empty() && std::filesystem::path(v.get<std::string>()).is_relative())
                v = (std::filesystem::absolute(file).parent_path() / v.get<std::string>()).lexically_normal().string();
        }
    }
    for (const auto& o : overrides) apply_override(j, o);
    return PipelineConfig::from_json(j);
}

} // namespace relink
