#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "relink/path.hpp"
#include "relink/semantic_space.hpp"

namespace relink {

class LlmGateway;

/// Two-layer scorer: s = w2 . tanh(W1 z + b1) + b2 over the features
/// z = [q, e, q*e, path_score].
struct RankerModel {
    static constexpr int kSchemaVersion = 1;

    Mat w1;  // hidden x (3d + 1)
    Vec b1;
    Vec w2;
    double b2 = 0.0;

    int dim() const { return static_cast<int>((w1.cols() - 1) / 3); }
    int hidden() const { return static_cast<int>(w1.rows()); }
    int feature_dim() const { return static_cast<int>(w1.cols()); }

    static RankerModel zeros(int dim, int hidden);
    /// Xavier-uniform weights, zero biases.
    static RankerModel initial(int dim, int hidden, std::uint64_t seed);

    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& values);
    std::string parameter_hash() const;

    void save(const std::filesystem::path& json_path) const;
    static RankerModel load(const std::filesystem::path& json_path);
};

Vec ranker_features(const Vec& query, const Vec& edge, double path_score);

double score(const RankerModel& model, const Vec& query, const EdgeVector& edge, double path_score);

struct RankerGradient {
    Mat w1;
    Vec b1;
    Vec w2;
    double b2 = 0.0;

    static RankerGradient zeros_like(const RankerModel& m);
};

/// Score of a feature vector; adds `scale * d score / d params` into `grad`.
double score_features(const RankerModel& model, const Vec& features, RankerGradient* grad = nullptr, double scale = 1.0);

/// max(0, m - s_pos + s_neg).
double hinge(double s_pos, double s_neg, double margin);

/// (q, P+, P-) where both paths share a prefix and differ in the last edge.
struct PreferenceTuple {
    QueryRecord query;
    Path positive;
    Path negative;
};

struct EdgeInput {
    SourceKind kind = SourceKind::Explicit;
    Vec raw;
};

/// A PreferenceTuple resolved to raw provider embeddings, so the ranker and
/// the adapter can be trained against it without further gateway calls.
struct PreferenceExample {
    Vec query_raw;
    EdgeInput positive;
    EdgeInput negative;
    double prefix_score = 0.0;
};

/// Scores of both extensions under the current adapter.
std::pair<double, double> preference_scores(const RankerModel& model, const ProjectionAdapter& adapter,
                                            const PreferenceExample& ex);

double rank_loss(const RankerModel& model, const ProjectionAdapter& adapter, const PreferenceExample& ex,
                 double margin);
double rank_loss(const RankerModel& model, const ProjectionAdapter& adapter,
                 const std::vector<PreferenceExample>& batch, double margin, RankerGradient* grad = nullptr);

struct MiningConfig {
    int negatives_per_positive = 4;
    std::uint64_t seed = 0;
    bool use_explicit = true;
    bool use_latent = true;
};

/// Walks each record's gold chain; at every step P+ extends the gold prefix
/// by the gold edge and up to negatives_per_positive P- extend it by sampled
/// non-gold siblings from the same candidate set.
std::vector<PreferenceTuple> mine_preferences(const std::vector<QueryRecord>& records,
                                              const KnowledgeSources& sources, const MiningConfig& config);

std::vector<PreferenceExample> materialize_preferences(const std::vector<PreferenceTuple>& tuples,
                                                       const KnowledgeSources& sources, LlmGateway& gateway);

struct StagedConfig {
    int max_cycles = 20;
    int patience = 3;
    double val_fraction = 0.2;
    double margin = 0.2;
    double ranker_learning_rate = 0.05;
    int ranker_batch_size = 32;
    bool align_enabled = true;
    TrainConfig align{1, 0.01, 32, 0};
    std::uint64_t seed = 0;
};

struct StageRecord {
    int cycle = 0;
    std::string stage;  // "ranker" | "alignment"
    std::string ranker_hash_before, ranker_hash_after;
    std::string adapter_hash_before, adapter_hash_after;
    double loss = 0.0;
};

struct StagedResult {
    RankerModel ranker;
    ProjectionAdapter adapter;
    std::vector<StageRecord> stages;
    std::vector<double> val_accuracy;  // per cycle
    int best_cycle = 0;                // 0 = initial parameters
    double best_val_accuracy = 0.0;
};

/// Fraction of examples with S+ > S-.
double rank_accuracy(const RankerModel& model, const ProjectionAdapter& adapter,
                     const std::vector<PreferenceExample>& examples);

/// Alternates one ranker epoch (adapter frozen) with one alignment epoch
/// (ranker frozen) until validation rank-accuracy stops improving for
/// `patience` cycles; returns the best-on-validation parameters.
StagedResult staged_train(const RankerModel& ranker, const ProjectionAdapter& adapter,
                          const std::vector<PreferenceExample>& prefs, const std::vector<AlignmentPair>& align_pairs,
                          const StagedConfig& config);

} // namespace relink
