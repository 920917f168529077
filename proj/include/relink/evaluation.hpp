#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "relink/explorer.hpp"
#include "relink/path.hpp"

namespace relink {

class LlmGateway;
class PromptLibrary;

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the as whole
/// tokens, collapse whitespace.
std::string normalize_answer(std::string_view s);
int exact_match(std::string_view pred, std::string_view gold);
/// Multiset token overlap F1 over normalized strings.
double token_f1(std::string_view pred, std::string_view gold);

enum class Variant { Full, WoBackbone, WoPool, WoRanker, WoContra };

std::string_view to_string(Variant v);
/// Throws InvalidArgument for unknown names.
Variant parse_variant(std::string_view name);
const std::vector<Variant>& all_variants();

/// JSON-lines: {"query_id", "question", "answer", "topic_entities": [...],
/// "supporting": [{"from", "to", "predicate"?, "sentence_id"?}, ...]}.
std::vector<QueryRecord> load_dataset(const std::filesystem::path& path);

/// Everything a pipeline variant may draw on. The *_nocontra models are only
/// used by Variant::WoContra.
struct PipelineResources {
    const CorpusStore* store = nullptr;
    const EntityCatalog* catalog = nullptr;
    const GraphBackbone* backbone = nullptr;
    const LatentPool* pool = nullptr;
    const RankerModel* ranker = nullptr;
    const ProjectionAdapter* adapter = nullptr;
    const RankerModel* ranker_nocontra = nullptr;
    const ProjectionAdapter* adapter_nocontra = nullptr;
    LlmGateway* gateway = nullptr;
    const PromptLibrary* prompts = nullptr;
    ExploreConfig explore;
    CallCounters* counters = nullptr;
};

struct QuestionResult {
    std::string query_id;
    int em = 0;
    double f1 = 0.0;
    bool fallback_used = false;
    std::string answer;
    std::string error;
};

struct EvalResult {
    std::string dataset;
    std::string variant;
    double keep_fraction = 1.0;
    double em = 0.0;
    double f1 = 0.0;
    std::vector<QuestionResult> per_question;  // sorted by query_id
};

struct EvalOptions {
    int sample_size = 0;  // 0: all
    int workers = 4;
    std::uint64_t seed = 0;
    std::filesystem::path trace_path;  // optional JSON-lines exploration log
};

/// Answers one question end to end with the given variant.
QuestionResult answer_question(const QueryRecord& q, const PipelineResources& res, Variant variant,
                               TraceSink* trace = nullptr);

EvalResult run_eval(const std::string& dataset_name, const std::vector<QueryRecord>& records,
                    const PipelineResources& res, Variant variant, double keep_fraction, const EvalOptions& options);

/// For each keep fraction: mask the backbone, then evaluate full and wo_pool.
std::vector<EvalResult> sparsity_sweep(const std::string& dataset_name, const std::vector<QueryRecord>& records,
                                       const PipelineResources& res, const std::vector<double>& fractions,
                                       const EvalOptions& options);

/// Output files; every row carries the config hash and seed.
std::string per_question_csv(const EvalResult& r, const std::string& config_hash, std::uint64_t seed);
std::string summary_json(const std::vector<EvalResult>& results, const std::string& config_hash, std::uint64_t seed);
/// One row per (keep_fraction, variant).
std::string curve_csv(const std::vector<EvalResult>& results, const std::string& config_hash, std::uint64_t seed);

} // namespace relink
