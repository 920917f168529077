#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "relink/corpus.hpp"
#include "relink/entity.hpp"

namespace relink {

class LlmGateway;
class PromptLibrary;

enum class TripleOrigin { Explicit, Instantiated };

std::string_view to_string(TripleOrigin origin);

struct FactTriple {
    std::string triple_id;
    std::string head;
    std::string predicate;
    std::string tail;
    std::string provenance;  // sentence_id
    TripleOrigin origin = TripleOrigin::Explicit;
    double confidence = 1.0;

    bool operator==(const FactTriple&) const = default;
};

/// Content-derived id: "T-" (explicit) or "I-" (instantiated) + 16 hex digits
/// over (head, predicate, tail, provenance).
std::string make_triple_id(TripleOrigin origin, std::string_view head, std::string_view predicate,
                           std::string_view tail, std::string_view provenance);

/// Throws SelfLoop / InvalidTriple when the basic triple invariants fail.
void validate_triple(const FactTriple& t);

/// The explicit factual graph. Triples are directed; adjacency lists each
/// triple under both endpoints.
class GraphBackbone {
public:
    static constexpr int kSchemaVersion = 1;

    GraphBackbone() = default;
    explicit GraphBackbone(EntityCatalog entities) : entities_(std::move(entities)) {}

    /// Adds an explicit triple, assigning its id. Returns false when the same
    /// (head, predicate, tail) is already present (first provenance wins).
    bool add(FactTriple triple);

    const EntityCatalog& entities() const { return entities_; }
    /// Sorted by triple_id.
    const std::map<std::string, FactTriple>& triples() const { return triples_; }
    std::size_t size() const { return triples_.size(); }
    const FactTriple* find(std::string_view triple_id) const;
    /// Sorted triple ids incident to `entity_id`; empty for isolated entities.
    const std::vector<std::string>& incident(std::string_view entity_id) const;

    nlohmann::json to_json() const;
    static GraphBackbone from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static GraphBackbone load(const std::filesystem::path& path);

    bool operator==(const GraphBackbone& other) const {
        return entities_ == other.entities_ && triples_ == other.triples_;
    }

private:
    EntityCatalog entities_;
    std::map<std::string, FactTriple> triples_;
    std::unordered_map<std::string, std::vector<std::string>> adjacency_;
    std::set<std::string> hpt_keys_;
};

/// Every explicit triple incident to `entity_id`, ordered by triple_id.
/// Throws UnknownEntity for entities outside the catalog.
std::vector<FactTriple> neighbors_explicit(const GraphBackbone& g, std::string_view entity_id);

/// Keeps exactly round(keep_fraction * |triples|) triples picked by a seeded
/// shuffle. For a fixed seed, smaller fractions keep subsets of larger ones.
GraphBackbone apply_edge_mask(const GraphBackbone& g, double keep_fraction, std::uint64_t seed);

/// Returns the triples whose provenance sentence does not mention both endpoints.
std::vector<std::string> check_provenance(const GraphBackbone& g, const CorpusStore& store);

/// Append-only store of triples instantiated at query time. Safe for
/// concurrent appends; keyed by (head, predicate, tail, provenance).
class InstantiatedOverlay {
public:
    std::string add(FactTriple triple);

    std::vector<FactTriple> neighbors(std::string_view entity_id) const;
    std::optional<FactTriple> find(std::string_view triple_id) const;
    std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, FactTriple> triples_;
    std::unordered_map<std::string, std::vector<std::string>> adjacency_;
};

/// Stores `t` (origin must be instantiated) and returns its id; re-adding an
/// identical triple returns the existing id.
std::string add_instantiated(InstantiatedOverlay& overlay, FactTriple t);

struct ExtractionConfig {
    int workers = 4;
};

struct ExtractionReport {
    std::size_t sentences_prompted = 0;
    std::size_t sentences_failed = 0;
    std::size_t triples_accepted = 0;
    std::size_t triples_rejected = 0;
    std::size_t triples_duplicate = 0;
};

/// Prompts the gateway once per sentence mentioning at least two distinct
/// entities and keeps the triples that name two of those entities.
GraphBackbone extract_backbone(const CorpusStore& store, const EntityCatalog& catalog, LlmGateway& gateway,
                               const PromptLibrary& prompts, const ExtractionConfig& config,
                               ExtractionReport* report = nullptr);

/// Parses a JSON object or array of {h|head, p|relation|predicate, t|tail}
/// string triples found anywhere in `reply`. Returns false if none parse.
struct RawTriple {
    std::string head, predicate, tail;
    std::optional<double> confidence;
};
bool parse_triples(std::string_view reply, std::vector<RawTriple>& out);

} // namespace relink
