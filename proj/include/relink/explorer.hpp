#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "relink/path.hpp"
#include "relink/ranker.hpp"
#include "relink/semantic_space.hpp"

namespace relink {

class LlmGateway;
class PromptLibrary;

struct ExploreConfig {
    int beam_width = 4;       // K
    int shortlist_size = 8;   // M
    int max_length = 4;       // L_max
    bool completeness_check = true;
    double completeness_threshold = 0.5;
    int workers = 4;
};

/// A null ranker switches coarse ranking to plain cosine similarity.
struct ExplorerModels {
    const RankerModel* ranker = nullptr;
    const ProjectionAdapter* adapter = nullptr;
};

/// Memoizes instantiation results per (latent_id, normalized query),
/// failures included.
class Instantiator {
public:
    /// Returns the stored triple or throws InstantiationFailed.
    FactTriple instantiate(const LatentRelation& latent, const std::string& question, const KnowledgeSources& sources,
                           InstantiatedOverlay& overlay, LlmGateway& gateway, const PromptLibrary& prompts);

    std::size_t prompts_sent() const;

private:
    mutable std::mutex mutex_;
    std::map<std::pair<std::string, std::string>, std::optional<FactTriple>> memo_;
    std::size_t prompts_sent_ = 0;
};

/// JSON-lines exploration log, one record per (iteration, path, candidate).
class TraceSink {
public:
    explicit TraceSink(std::ostream& out) : out_(out) {}
    void write(const nlohmann::json& record);

private:
    std::mutex mutex_;
    std::ostream& out_;
};

struct ExploreContext {
    KnowledgeSources sources;  // overlay is taken from `overlay` below
    ExplorerModels models;
    LlmGateway* gateway = nullptr;
    const PromptLibrary* prompts = nullptr;
    InstantiatedOverlay* overlay = nullptr;
    Instantiator* instantiator = nullptr;
    TraceSink* trace = nullptr;
};

/// Catalog names and aliases found in the question (longest match, first
/// occurrence order); when none match, entity names proposed by the gateway
/// and resolved against the catalog. Throws NoTopicEntity if both fail.
std::vector<std::string> identify_topic_entities(const std::string& question, const EntityCatalog& catalog,
                                                 LlmGateway& gateway, const PromptLibrary& prompts);

/// ((k - 1) * prev_avg + delta) / k; prev_avg is ignored for k = 1.
double update_path_score(double prev_avg, int k, double delta);

struct ScoredEdge {
    PathEdge edge;
    double score = 0.0;
};

/// Encodes an edge into the shared space.
EdgeVector encode_edge(const PathEdge& edge, const KnowledgeSources& sources, LlmGateway& gateway,
                       const ProjectionAdapter& adapter);

/// Top-M candidates by ranker score (or cosine without a ranker). Ties keep
/// candidate order. Candidates that fail to encode are dropped.
std::vector<ScoredEdge> coarse_rank(const std::vector<PathEdge>& candidates, const Path& path, const Vec& query_vec,
                                    const ExplorerModels& models, const KnowledgeSources& sources,
                                    LlmGateway& gateway, int top_m, int workers = 1);

/// Maps a 0-10 integer reply to [0, 1]; anything else gives nullopt.
std::optional<double> parse_relevance(const std::string& reply);

/// Path rendering used in rerank and completeness prompts.
std::string render_path(const Path& path, const EntityCatalog& catalog);

/// One LLM relevance prompt per shortlisted edge; unusable replies and
/// gateway failures give 0.
std::vector<std::pair<PathEdge, double>> fine_rerank(const std::vector<PathEdge>& shortlist, const Path& path,
                                                     const std::string& question, const KnowledgeSources& sources,
                                                     LlmGateway& gateway, const PromptLibrary& prompts,
                                                     int workers = 1);

/// Asks whether `path` answers the question; true on a "yes" reply.
bool check_complete(const Path& path, const std::string& question, const KnowledgeSources& sources,
                    LlmGateway& gateway, const PromptLibrary& prompts);

EvidenceGraph build_evidence(const std::vector<Path>& paths, const KnowledgeSources& sources,
                             const InstantiatedOverlay* overlay);

/// Query-driven beam search from the topic entities of `query`.
EvidenceGraph explore(const QueryRecord& query, const ExploreContext& ctx, const ExploreConfig& config);

} // namespace relink
