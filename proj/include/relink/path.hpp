#pragma once

#include <atomic>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relink/kg_store.hpp"
#include "relink/latent_pool.hpp"

namespace relink {

/// One hop of a gold reasoning chain, as supplied by QA datasets.
struct GoldHop {
    std::string from;
    std::string to;
    std::string predicate;    // optional
    std::string sentence_id;  // optional
};

struct QueryRecord {
    std::string query_id;
    std::string text;
    std::vector<std::string> topic_entities;
    std::optional<std::string> gold_answer;
    std::vector<GoldHop> supporting;
};

enum class EdgeOrigin { Explicit, Latent, Instantiated };

std::string_view to_string(EdgeOrigin origin);

/// A candidate or retained extension. from/to give the traversal
/// orientation; the stored triple keeps its own direction.
struct PathEdge {
    EdgeOrigin kind = EdgeOrigin::Explicit;
    std::string ref_id;  // triple_id or latent_id
    std::string from_entity;
    std::string to_entity;
    std::string display_text;

    bool operator==(const PathEdge&) const = default;
};

enum class PathStatus { Active, Complete, Dead };

std::string_view to_string(PathStatus status);

struct Path {
    std::string origin_entity;
    std::vector<PathEdge> edges;
    std::vector<double> delta_log;  // per-step ΔS
    double avg_score = 0.0;
    PathStatus status = PathStatus::Active;

    std::size_t k() const { return edges.size(); }
    const std::string& frontier() const { return edges.empty() ? origin_entity : edges.back().to_entity; }
    bool visits(const std::string& entity_id) const;
    /// Appends `edge` and folds `delta` into avg_score.
    Path extended(PathEdge edge, double delta) const;
};

/// The compact query-specific graph handed to the generator.
struct EvidenceGraph {
    std::vector<FactTriple> triples;                       // path order, then triple_id
    std::map<std::string, std::string> source_sentences;  // sentence_id -> text
    std::vector<Path> paths;

    bool empty() const { return triples.empty(); }
};

/// Instrumentation for ablation wiring checks.
struct CallCounters {
    std::atomic<long> neighbors_explicit{0};
    std::atomic<long> neighbors_latent{0};
    std::atomic<long> neighbors_overlay{0};
    std::atomic<long> ranker_scores{0};
    std::atomic<long> cosine_scores{0};
    std::atomic<long> fine_rerank_calls{0};
    std::atomic<long> instantiations{0};
    std::atomic<long> completeness_checks{0};

    void reset();
};

/// What a traversal may see. A null backbone or pool removes that edge
/// source entirely.
struct KnowledgeSources {
    const EntityCatalog* catalog = nullptr;
    const CorpusStore* store = nullptr;
    const GraphBackbone* backbone = nullptr;
    const LatentPool* pool = nullptr;
    const InstantiatedOverlay* overlay = nullptr;
    CallCounters* counters = nullptr;
};

/// "<head name> <predicate> <tail name>" for triples; for latent relations the
/// context sentence followed by the unlabeled link.
std::string describe_triple(const FactTriple& t, const EntityCatalog& catalog);
std::string describe_latent(const LatentRelation& r, const KnowledgeSources& sources);

/// One-hop extensions of `path` from its frontier: explicit edges by
/// triple_id, then overlay edges by triple_id, then latent edges by
/// descending PMI. Edges back onto the path are dropped, as are latent edges
/// whose endpoints an explicit or instantiated candidate already connects.
std::vector<PathEdge> expand_candidates(const Path& path, const KnowledgeSources& sources);

} // namespace relink
