#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "relink/kg_store.hpp"
#include "relink/latent_pool.hpp"
#include "relink/util.hpp"

namespace relink {

class LlmGateway;

enum class SourceKind { Explicit, Latent };

/// A unit-norm vector in the shared space where the ranker compares edges.
struct EdgeVector {
    Vec vector;
    SourceKind source_kind = SourceKind::Explicit;
};

struct AffineMap {
    Mat weight;  // out x in
    Vec bias;

    Vec apply(const Vec& x) const { return weight * x + bias; }
};

/// Trainable projections from frozen provider embeddings (raw_dim) into the
/// shared space (dim): one map per source kind, plus the InfoNCE temperature.
struct ProjectionAdapter {
    static constexpr int kSchemaVersion = 1;

    AffineMap factual;
    AffineMap latent;
    double temperature = 0.07;
    std::uint64_t seed = 0;
    int epoch = 0;

    int dim() const { return static_cast<int>(factual.weight.rows()); }
    int raw_dim() const { return static_cast<int>(factual.weight.cols()); }

    /// Identity maps when dim == raw_dim, otherwise a seeded Gaussian
    /// projection scaled by 1/sqrt(raw_dim).
    static ProjectionAdapter initial(int dim, int raw_dim, double temperature, std::uint64_t seed);

    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& values);
    std::string parameter_hash() const;

    /// JSON header plus sibling .f32 weight file.
    void save(const std::filesystem::path& json_path) const;
    static ProjectionAdapter load(const std::filesystem::path& json_path);
};

/// "<head name> <predicate> <tail name>"
std::string linearize_triple(const FactTriple& t, const EntityCatalog& catalog);

/// L2-normalizes; throws DegenerateVector for (near-)zero input.
Vec normalized(const Vec& v);

EdgeVector project_factual(const Vec& raw, const ProjectionAdapter& adapter);
EdgeVector project_latent(const Vec& raw, const ProjectionAdapter& adapter);

EdgeVector encode_triple(const FactTriple& t, const EntityCatalog& catalog, LlmGateway& gateway,
                         const ProjectionAdapter& adapter);
/// Free text (queries) through the factual branch.
EdgeVector encode_text(const std::string& text, LlmGateway& gateway, const ProjectionAdapter& adapter);
EdgeVector encode_latent(const LatentRelation& r, const ProjectionAdapter& adapter);

double cosine(const Vec& a, const Vec& b);

/// Mean InfoNCE over anchors: anchor i's positive is latent[i]; every
/// latent[j], j != i, is an in-batch negative. Similarities are cosines.
double contrastive_loss(const std::vector<EdgeVector>& factual, const std::vector<EdgeVector>& latent,
                        double temperature);

/// Raw (pre-adapter) embeddings of one aligned (triple, latent relation) pair.
struct AlignmentPair {
    Vec factual_raw;
    Vec latent_raw;
};

struct AdapterGradient {
    Mat factual_weight;
    Vec factual_bias;
    Mat latent_weight;
    Vec latent_bias;

    static AdapterGradient zeros_like(const ProjectionAdapter& a);
};

/// InfoNCE of the projected batch; fills `grad` with d loss / d parameters
/// when non-null.
double alignment_loss(const ProjectionAdapter& adapter, const std::vector<AlignmentPair>& batch,
                      AdapterGradient* grad = nullptr);

struct TrainConfig {
    int epochs = 10;
    double learning_rate = 0.01;
    int batch_size = 32;
    std::uint64_t seed = 0;
};

struct TrainLog {
    std::vector<double> epoch_loss;
};

/// Mini-batch SGD on alignment_loss. Batches of size < 2 are skipped.
ProjectionAdapter train_alignment(const std::vector<AlignmentPair>& dataset, ProjectionAdapter adapter,
                                  const TrainConfig& config, TrainLog* log = nullptr);

/// Positives: same (unordered) entity pair and the triple's provenance is the
/// latent relation's context sentence.
std::vector<std::pair<FactTriple, LatentRelation>> mine_alignment_pairs(const GraphBackbone& backbone,
                                                                        const LatentPool& pool);

std::vector<AlignmentPair> materialize_alignment_pairs(
    const std::vector<std::pair<FactTriple, LatentRelation>>& pairs, const EntityCatalog& catalog,
    LlmGateway& gateway);

} // namespace relink
