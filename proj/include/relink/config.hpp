#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relink/explorer.hpp"
#include "relink/kg_store.hpp"
#include "relink/latent_pool.hpp"
#include "relink/llm_gateway.hpp"

namespace relink {

struct PathsConfig {
    std::filesystem::path corpus;
    std::filesystem::path catalog;
    std::filesystem::path train_questions;
    std::filesystem::path work_dir = "work";
    std::filesystem::path templates;  // optional override directory
};

struct SemanticConfig {
    int dim = 0;  // 0: same as the provider embedding
    double temperature = 0.07;
    double learning_rate = 0.01;
    int batch_size = 32;
};

struct RankerConfig {
    int hidden = 64;
    double margin = 0.2;
    double learning_rate = 0.05;
    int batch_size = 32;
    int negatives_per_positive = 4;
    int patience = 3;
    int max_cycles = 20;
    double val_fraction = 0.2;
};

struct EvalConfig {
    int sample_size = 0;  // 0: every question
    int workers = 4;
    std::vector<double> fractions{1.0, 0.5, 0.1};
};

/// Every tunable of the pipeline. Built from defaults, then a JSON file, then
/// --set overrides; the effective JSON is hashed into every output.
struct PipelineConfig {
    std::uint64_t seed = 13;
    PathsConfig paths;
    ExtractionConfig extraction;
    PoolConfig pool;
    SemanticConfig semantic;
    RankerConfig ranker;
    ExploreConfig explore;
    EvalConfig eval;
    GatewayConfig gateway;

    nlohmann::json to_json() const;
    /// Strict: unknown keys and out-of-range values throw Config errors.
    static PipelineConfig from_json(const nlohmann::json& j);
    /// First 16 hex digits of SHA-256 over the canonical JSON.
    std::string hash() const;
};

/// Applies "a.b.c=value" to `j`. The value is parsed as JSON when possible,
/// otherwise taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// defaults <- file (if non-empty) <- overrides.
PipelineConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

} // namespace relink
