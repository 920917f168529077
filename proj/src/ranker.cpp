#include "relink/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "relink/error.hpp"
#include "relink/llm_gateway.hpp"
#include "relink/random.hpp"

namespace relink {

using nlohmann::json;

RankerModel RankerModel::zeros(int dim, int hidden) {
    if (dim < 1 || hidden < 1) throw Error(ErrorCode::InvalidArgument, "ranker dimensions must be positive");
    RankerModel m;
    m.w1 = Mat::Zero(hidden, 3 * dim + 1);
    m.b1 = Vec::Zero(hidden);
    m.w2 = Vec::Zero(hidden);
    m.b2 = 0.0;
    return m;
}

RankerModel RankerModel::initial(int dim, int hidden, std::uint64_t seed) {
    RankerModel m = zeros(dim, hidden);
    Rng rng(derive_seed(seed, 0x7261'6e6b));
    const double a1 = std::sqrt(6.0 / static_cast<double>(m.feature_dim() + hidden));
    for (int r = 0; r < hidden; ++r)
        for (int c = 0; c < m.feature_dim(); ++c) m.w1(r, c) = rng.uniform(-a1, a1);
    const double a2 = std::sqrt(6.0 / static_cast<double>(hidden + 1));
    for (int r = 0; r < hidden; ++r) m.w2[r] = rng.uniform(-a2, a2);
    return m;
}

std::vector<double> RankerModel::flatten() const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + 1));
    for (Eigen::Index r = 0; r < w1.rows(); ++r)
        for (Eigen::Index c = 0; c < w1.cols(); ++c) out.push_back(w1(r, c));
    out.insert(out.end(), b1.data(), b1.data() + b1.size());
    out.insert(out.end(), w2.data(), w2.data() + w2.size());
    out.push_back(b2);
    return out;
}

void RankerModel::unflatten(const std::vector<double>& values) {
    const auto expected = static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + 1);
    if (values.size() != expected) throw Error(ErrorCode::DimensionMismatch, "ranker weight count mismatch");
    std::size_t pos = 0;
    for (Eigen::Index r = 0; r < w1.rows(); ++r)
        for (Eigen::Index c = 0; c < w1.cols(); ++c) w1(r, c) = values[pos++];
    for (Eigen::Index i = 0; i < b1.size(); ++i) b1[i] = values[pos++];
    for (Eigen::Index i = 0; i < w2.size(); ++i) w2[i] = values[pos++];
    b2 = values[pos];
}

std::string RankerModel::parameter_hash() const { return hash_doubles(flatten()); }

void RankerModel::save(const std::filesystem::path& json_path) const {
    auto weights = json_path;
    weights.replace_extension(".f32");
    json header = {{"schema_version", kSchemaVersion},
                   {"dim", dim()},
                   {"hidden", hidden()},
                   {"activation", "tanh"},
                   {"features", "query,edge,query*edge,path_score"},
                   {"layout", {"w1", "b1", "w2", "b2"}},
                   {"weights_file", weights.filename().string()}};
    write_f32_file(weights, flatten());
    write_file(json_path, header.dump(1) + "\n");
}

RankerModel RankerModel::load(const std::filesystem::path& json_path) {
    json header;
    try {
        header = json::parse(read_file(json_path));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Parse, fmt::format("{}: {}", json_path.string(), e.what()));
    }
    if (header.value("schema_version", 0) != kSchemaVersion)
        throw Error(ErrorCode::Parse, "ranker: unsupported schema_version");
    RankerModel m = zeros(header.at("dim").get<int>(), header.at("hidden").get<int>());
    m.unflatten(read_f32_file(json_path.parent_path() / header.at("weights_file").get<std::string>()));
    return m;
}

Vec ranker_features(const Vec& query, const Vec& edge, double path_score) {
    if (query.size() != edge.size())
        throw Error(ErrorCode::DimensionMismatch,
                    fmt::format("query dimension {} does not match edge dimension {}", query.size(), edge.size()));
    const auto d = query.size();
    Vec z(3 * d + 1);
    z.segment(0, d) = query;
    z.segment(d, d) = edge;
    z.segment(2 * d, d) = query.cwiseProduct(edge);
    z[3 * d] = path_score;
    return z;
}

RankerGradient RankerGradient::zeros_like(const RankerModel& m) {
    return {Mat::Zero(m.w1.rows(), m.w1.cols()), Vec::Zero(m.b1.size()), Vec::Zero(m.w2.size()), 0.0};
}

double score_features(const RankerModel& model, const Vec& features, RankerGradient* grad, double scale) {
    if (features.size() != model.feature_dim())
        throw Error(ErrorCode::DimensionMismatch,
                    fmt::format("feature dimension {} does not match ranker input {}", features.size(),
                                model.feature_dim()));
    const Vec h = (model.w1 * features + model.b1).array().tanh().matrix();
    const double s = model.w2.dot(h) + model.b2;
    if (grad) {
        grad->b2 += scale;
        grad->w2 += scale * h;
        const Vec dpre = scale * model.w2.cwiseProduct((1.0 - h.array().square()).matrix());
        grad->b1 += dpre;
        grad->w1.noalias() += dpre * features.transpose();
    }
    return s;
}

double score(const RankerModel& model, const Vec& query, const EdgeVector& edge, double path_score) {
    return score_features(model, ranker_features(query, edge.vector, path_score));
}

double hinge(double s_pos, double s_neg, double margin) {
    const double v = margin - s_pos + s_neg;
    return std::isnan(v) ? v : std::max(0.0, v);  // NaN must reach the divergence check
}

namespace {

EdgeVector project(const EdgeInput& in, const ProjectionAdapter& adapter) {
    return in.kind == SourceKind::Latent ? project_latent(in.raw, adapter) : project_factual(in.raw, adapter);
}

struct ExampleFeatures {
    Vec pos, neg;
};

ExampleFeatures features_of(const ProjectionAdapter& adapter, const PreferenceExample& ex) {
    const Vec q = project_factual(ex.query_raw, adapter).vector;
    return {ranker_features(q, project(ex.positive, adapter).vector, ex.prefix_score),
            ranker_features(q, project(ex.negative, adapter).vector, ex.prefix_score)};
}

} // namespace

std::pair<double, double> preference_scores(const RankerModel& model, const ProjectionAdapter& adapter,
                                            const PreferenceExample& ex) {
    const auto f = features_of(adapter, ex);
    return {score_features(model, f.pos), score_features(model, f.neg)};
}

double rank_loss(const RankerModel& model, const ProjectionAdapter& adapter, const PreferenceExample& ex,
                 double margin) {
    const auto [sp, sn] = preference_scores(model, adapter, ex);
    return hinge(sp, sn, margin);
}

double rank_loss(const RankerModel& model, const ProjectionAdapter& adapter,
                 const std::vector<PreferenceExample>& batch, double margin, RankerGradient* grad) {
    if (!(margin > 0.0)) throw Error(ErrorCode::InvalidArgument, "margin must be > 0");
    if (batch.empty()) return 0.0;
    const double inv = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const auto& ex : batch) {
        const auto f = features_of(adapter, ex);
        const double sp = score_features(model, f.pos);
        const double sn = score_features(model, f.neg);
        const double l = hinge(sp, sn, margin);
        total += l;
        // Subgradient is zero at and below the kink.
        if (grad && margin - sp + sn > 0.0) {
            score_features(model, f.pos, grad, -inv);
            score_features(model, f.neg, grad, inv);
        }
    }
    return total * inv;
}

double rank_accuracy(const RankerModel& model, const ProjectionAdapter& adapter,
                     const std::vector<PreferenceExample>& examples) {
    if (examples.empty()) return 0.0;
    std::size_t ok = 0;
    for (const auto& ex : examples) {
        const auto [sp, sn] = preference_scores(model, adapter, ex);
        if (sp > sn) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(examples.size());
}

// ---- preference mining -----------------------------------------------------

namespace {

bool matches_hop(const PathEdge& e, const GoldHop& hop, const KnowledgeSources& sources) {
    if (e.to_entity != hop.to) return false;
    if (e.kind == EdgeOrigin::Latent) {
        if (hop.sentence_id.empty()) return true;
        const LatentRelation* r = sources.pool->find(e.ref_id);
        return r && r->context == hop.sentence_id;
    }
    if (hop.predicate.empty()) return true;
    const FactTriple* t = sources.backbone->find(e.ref_id);
    return t && to_lower_ascii(t->predicate) == to_lower_ascii(hop.predicate);
}

} // namespace

std::vector<PreferenceTuple> mine_preferences(const std::vector<QueryRecord>& records,
                                              const KnowledgeSources& sources, const MiningConfig& config) {
    KnowledgeSources view = sources;
    view.overlay = nullptr;
    if (!config.use_explicit) view.backbone = nullptr;
    if (!config.use_latent) view.pool = nullptr;

    std::vector<PreferenceTuple> out;
    for (std::size_t ri = 0; ri < records.size(); ++ri) {
        const QueryRecord& rec = records[ri];
        if (rec.supporting.empty() || !view.catalog->contains(rec.supporting.front().from)) continue;
        Rng rng(derive_seed(config.seed, fnv1a64(rec.query_id)));
        Path prefix;
        prefix.origin_entity = rec.supporting.front().from;
        for (const GoldHop& hop : rec.supporting) {
            if (hop.from != prefix.frontier()) break;
            const auto candidates = expand_candidates(prefix, view);
            std::vector<const PathEdge*> gold, other;
            for (const auto& c : candidates) (matches_hop(c, hop, view) ? gold : other).push_back(&c);
            if (gold.empty()) break;
            std::vector<std::size_t> order(other.size());
            std::iota(order.begin(), order.end(), 0);
            rng.shuffle(order);
            const auto n = std::min<std::size_t>(order.size(), static_cast<std::size_t>(config.negatives_per_positive));
            Path positive = prefix.extended(*gold.front(), 1.0);
            for (std::size_t i = 0; i < n; ++i)
                out.push_back({rec, positive, prefix.extended(*other[order[i]], 0.0)});
            prefix = std::move(positive);
        }
    }
    return out;
}

std::vector<PreferenceExample> materialize_preferences(const std::vector<PreferenceTuple>& tuples,
                                                       const KnowledgeSources& sources, LlmGateway& gateway) {
    auto edge_input = [&](const PathEdge& e) -> EdgeInput {
        switch (e.kind) {
        case EdgeOrigin::Latent: {
            const LatentRelation* r = sources.pool ? sources.pool->find(e.ref_id) : nullptr;
            if (!r) throw Error(ErrorCode::MissingArtifact, fmt::format("unknown latent relation {}", e.ref_id));
            return {SourceKind::Latent, r->vector};
        }
        case EdgeOrigin::Explicit:
        case EdgeOrigin::Instantiated: {
            const FactTriple* t = sources.backbone ? sources.backbone->find(e.ref_id) : nullptr;
            std::optional<FactTriple> inst;
            if (!t && sources.overlay) {
                inst = sources.overlay->find(e.ref_id);
                if (inst) t = &*inst;
            }
            if (!t) throw Error(ErrorCode::MissingArtifact, fmt::format("unknown triple {}", e.ref_id));
            return {SourceKind::Explicit, gateway.embed_one(linearize_triple(*t, *sources.catalog))};
        }
        }
        throw Error(ErrorCode::InvalidArgument, "unknown edge kind");
    };
    std::vector<PreferenceExample> out;
    out.reserve(tuples.size());
    for (const auto& tp : tuples) {
        PreferenceExample ex;
        ex.query_raw = gateway.embed_one(tp.query.text);
        ex.positive = edge_input(tp.positive.edges.back());
        ex.negative = edge_input(tp.negative.edges.back());
        Path prefix = tp.positive;
        prefix.edges.pop_back();
        prefix.delta_log.pop_back();
        ex.prefix_score = prefix.delta_log.empty()
                              ? 0.0
                              : std::accumulate(prefix.delta_log.begin(), prefix.delta_log.end(), 0.0) /
                                    static_cast<double>(prefix.delta_log.size());
        out.push_back(std::move(ex));
    }
    return out;
}

// ---- staged optimization ---------------------------------------------------

namespace {

double ranker_epoch(RankerModel& model, const ProjectionAdapter& adapter, const std::vector<PreferenceExample>& train,
                    const StagedConfig& config, Rng& rng, int cycle) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const auto bs = static_cast<std::size_t>(std::max(1, config.ranker_batch_size));
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
        std::vector<PreferenceExample> batch;
        for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(train[order[i]]);
        RankerGradient g = RankerGradient::zeros_like(model);
        const double loss = rank_loss(model, adapter, batch, config.margin, &g);
        if (!std::isfinite(loss))
            throw Error(ErrorCode::TrainingDiverged,
                        fmt::format("ranker stage diverged in cycle {} at step {}", cycle, batches));
        const double lr = config.ranker_learning_rate;
        model.w1 -= lr * g.w1;
        model.b1 -= lr * g.b1;
        model.w2 -= lr * g.w2;
        model.b2 -= lr * g.b2;
        total += loss;
        ++batches;
    }
    return batches ? total / static_cast<double>(batches) : 0.0;
}

} // namespace

StagedResult staged_train(const RankerModel& ranker, const ProjectionAdapter& adapter,
                          const std::vector<PreferenceExample>& prefs, const std::vector<AlignmentPair>& align_pairs,
                          const StagedConfig& config) {
    if (config.patience < 1) throw Error(ErrorCode::InvalidArgument, "patience must be >= 1");
    if (!(config.val_fraction > 0.0 && config.val_fraction < 1.0))
        throw Error(ErrorCode::InvalidArgument, "val_fraction must be in (0, 1)");

    StagedResult result{ranker, adapter, {}, {}, 0, 0.0};
    if (config.max_cycles <= 0 || prefs.empty()) return result;

    std::vector<std::size_t> order(prefs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(derive_seed(config.seed, 1));
    split_rng.shuffle(order);
    auto n_val = static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(prefs.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, prefs.size() > 1 ? prefs.size() - 1 : 1);
    std::vector<PreferenceExample> val, train;
    for (std::size_t i = 0; i < order.size(); ++i) (i < n_val ? val : train).push_back(prefs[order[i]]);
    if (train.empty()) train = val;

    RankerModel r = ranker;
    ProjectionAdapter a = adapter;
    Rng rng(derive_seed(config.seed, 2));
    result.best_val_accuracy = rank_accuracy(r, a, val);
    int stale = 0;
    for (int cycle = 1; cycle <= config.max_cycles; ++cycle) {
        StageRecord rs{cycle, "ranker", r.parameter_hash(), {}, a.parameter_hash(), {}, 0.0};
        rs.loss = ranker_epoch(r, a, train, config, rng, cycle);
        rs.ranker_hash_after = r.parameter_hash();
        rs.adapter_hash_after = a.parameter_hash();
        result.stages.push_back(rs);

        StageRecord as{cycle, "alignment", r.parameter_hash(), {}, a.parameter_hash(), {}, 0.0};
        if (config.align_enabled && align_pairs.size() >= 2) {
            TrainConfig tc = config.align;
            tc.epochs = 1;
            tc.seed = derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(cycle));
            TrainLog log;
            a = train_alignment(align_pairs, a, tc, &log);
            as.loss = log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back();
        }
        as.ranker_hash_after = r.parameter_hash();
        as.adapter_hash_after = a.parameter_hash();
        result.stages.push_back(as);

        const double acc = rank_accuracy(r, a, val);
        result.val_accuracy.push_back(acc);
        spdlog::debug("staged_train cycle {}: rank loss {:.6f}, align loss {:.6f}, val acc {:.4f}", cycle, rs.loss,
                      as.loss, acc);
        // Ties move the checkpoint forward but do not reset patience.
        stale = acc > result.best_val_accuracy ? 0 : stale + 1;
        if (acc >= result.best_val_accuracy) {
            result.best_val_accuracy = acc;
            result.best_cycle = cycle;
            result.ranker = r;
            result.adapter = a;
        }
        if (stale >= config.patience) break;
    }
    return result;
}

} // namespace relink
