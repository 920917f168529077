#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "relink/corpus.hpp"
#include "relink/util.hpp"

namespace relink {

class LlmGateway;

/// Sentence-level co-occurrence counts. Pair keys are ordered (smaller id first).
struct CooccurrenceStats {
    std::map<std::pair<std::string, std::string>, long> pair_counts;
    std::map<std::string, long> entity_counts;
    long total_units = 0;

    long pair_count(std::string_view a, std::string_view b) const;
    bool operator==(const CooccurrenceStats&) const = default;
};

std::pair<std::string, std::string> ordered_pair(std::string_view a, std::string_view b);

/// One unit per sentence; a pair counts once per sentence regardless of how
/// often either entity is mentioned in it.
CooccurrenceStats count_cooccurrences(const CorpusStore& store);

struct PmiOptions {
    double alpha = 0.5;          // add-alpha smoothing on the pair count only
    bool clamp_at_zero = false;  // PPMI
};

/// Natural-log PMI, ln(((c_ij + alpha) / T) / ((c_i / T)(c_j / T))).
/// Throws UnknownEntity when either entity never occurs.
double pmi(const CooccurrenceStats& stats, std::string_view e_i, std::string_view e_j, const PmiOptions& options = {});

struct LatentRelation {
    std::string latent_id;
    std::string e_i;  // e_i < e_j
    std::string e_j;
    std::string context;  // sentence_id
    double pmi = 0.0;
    Vec vector;

    bool operator==(const LatentRelation& o) const {
        return latent_id == o.latent_id && e_i == o.e_i && e_j == o.e_j && context == o.context && pmi == o.pmi &&
               vector.size() == o.vector.size() && vector == o.vector;
    }
};

std::string make_latent_id(std::string_view e_i, std::string_view e_j, std::string_view context);

/// "[CLS] <context> [SEP] <e_i> [MASK] <e_j> [SEP]"
std::string render_latent_input(std::string_view context, std::string_view name_i, std::string_view name_j);

/// The high-recall candidate edge set. Relations are kept in canonical
/// (e_i, e_j, context) order.
class LatentPool {
public:
    static constexpr int kSchemaVersion = 1;

    LatentPool() = default;
    LatentPool(int dim, std::vector<LatentRelation> relations);

    int dim() const { return dim_; }
    const std::vector<LatentRelation>& relations() const { return relations_; }
    std::size_t size() const { return relations_.size(); }
    const LatentRelation* find(std::string_view latent_id) const;
    /// Relations touching `entity_id`, by descending PMI then latent_id.
    std::vector<LatentRelation> neighbors(std::string_view entity_id) const;

    /// `json_path` holds metadata; vectors go to a sibling .f32 file.
    void save(const std::filesystem::path& json_path) const;
    static LatentPool load(const std::filesystem::path& json_path);

    bool operator==(const LatentPool& o) const { return dim_ == o.dim_ && relations_ == o.relations_; }

private:
    int dim_ = 0;
    std::vector<LatentRelation> relations_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::unordered_map<std::string, std::vector<std::size_t>> by_entity_;
};

struct PoolConfig {
    double tau_c = 0.0;
    double alpha = 0.5;
    int max_contexts_per_pair = 3;
    bool clamp_at_zero = false;
    int embed_batch_size = 32;
    int workers = 4;
};

struct PoolReport {
    std::size_t pairs_considered = 0;
    std::size_t pairs_kept = 0;
    std::size_t contexts_dropped = 0;
};

LatentPool build_pool(const CorpusStore& store, const EntityCatalog& catalog, const CooccurrenceStats& stats,
                      LlmGateway& gateway, const PoolConfig& config, PoolReport* report = nullptr);

std::vector<LatentRelation> neighbors_latent(const LatentPool& pool, std::string_view entity_id);

} // namespace relink
