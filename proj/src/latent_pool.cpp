#include "relink/latent_pool.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "relink/error.hpp"
#include "relink/llm_gateway.hpp"

namespace relink {

using nlohmann::json;

std::pair<std::string, std::string> ordered_pair(std::string_view a, std::string_view b) {
    return a < b ? std::pair{std::string(a), std::string(b)} : std::pair{std::string(b), std::string(a)};
}

long CooccurrenceStats::pair_count(std::string_view a, std::string_view b) const {
    auto it = pair_counts.find(ordered_pair(a, b));
    return it == pair_counts.end() ? 0 : it->second;
}

CooccurrenceStats count_cooccurrences(const CorpusStore& store) {
    CooccurrenceStats stats;
    for (const auto& s : store.sentences()) {
        ++stats.total_units;
        std::set<std::string> present;
        for (const auto& m : s.mentions) present.insert(m.entity_id);
        for (const auto& e : present) ++stats.entity_counts[e];
        for (auto a = present.begin(); a != present.end(); ++a)
            for (auto b = std::next(a); b != present.end(); ++b) ++stats.pair_counts[{*a, *b}];
    }
    return stats;
}

double pmi(const CooccurrenceStats& stats, std::string_view e_i, std::string_view e_j, const PmiOptions& options) {
    auto count_of = [&](std::string_view e) {
        auto it = stats.entity_counts.find(std::string(e));
        if (it == stats.entity_counts.end() || it->second == 0)
            throw Error(ErrorCode::UnknownEntity, fmt::format("entity '{}' has no occurrences", e));
        return static_cast<double>(it->second);
    };
    if (e_j < e_i) std::swap(e_i, e_j);  // bitwise symmetric
    const double ci = count_of(e_i);
    const double cj = count_of(e_j);
    const double cij = static_cast<double>(stats.pair_count(e_i, e_j)) + options.alpha;
    const double total = static_cast<double>(stats.total_units);
    // ln(p_ij / (p_i p_j)) with p = count / T.
    const double value = std::log(cij) + std::log(total) - std::log(ci) - std::log(cj);
    return options.clamp_at_zero ? std::max(0.0, value) : value;
}

std::string make_latent_id(std::string_view e_i, std::string_view e_j, std::string_view context) {
    std::string key;
    key.append(e_i).push_back('\x1f');
    key.append(e_j).push_back('\x1f');
    key.append(context);
    return "L-" + hex64(fnv1a64(key));
}

std::string render_latent_input(std::string_view context, std::string_view name_i, std::string_view name_j) {
    return fmt::format("[CLS] {} [SEP] {} [MASK] {} [SEP]", context, name_i, name_j);
}

// ---- pool ------------------------------------------------------------------

LatentPool::LatentPool(int dim, std::vector<LatentRelation> relations) : dim_(dim), relations_(std::move(relations)) {
    std::sort(relations_.begin(), relations_.end(), [](const LatentRelation& a, const LatentRelation& b) {
        return std::tie(a.e_i, a.e_j, a.context) < std::tie(b.e_i, b.e_j, b.context);
    });
    for (std::size_t i = 0; i < relations_.size(); ++i) {
        auto& r = relations_[i];
        if (r.e_i >= r.e_j) throw Error(ErrorCode::InvalidArgument, "latent relation endpoints must be ordered");
        if (r.vector.size() != dim_)
            throw Error(ErrorCode::DimensionMismatch,
                        fmt::format("latent {} has dimension {}, pool expects {}", r.latent_id, r.vector.size(), dim_));
        if (!by_id_.emplace(r.latent_id, i).second)
            throw Error(ErrorCode::InvalidArgument, fmt::format("duplicate latent id {}", r.latent_id));
        by_entity_[r.e_i].push_back(i);
        by_entity_[r.e_j].push_back(i);
    }
    for (auto& [_, idx] : by_entity_) {
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            const auto& ra = relations_[a];
            const auto& rb = relations_[b];
            return ra.pmi != rb.pmi ? ra.pmi > rb.pmi : ra.latent_id < rb.latent_id;
        });
    }
}

const LatentRelation* LatentPool::find(std::string_view latent_id) const {
    auto it = by_id_.find(std::string(latent_id));
    return it == by_id_.end() ? nullptr : &relations_[it->second];
}

std::vector<LatentRelation> LatentPool::neighbors(std::string_view entity_id) const {
    std::vector<LatentRelation> out;
    auto it = by_entity_.find(std::string(entity_id));
    if (it == by_entity_.end()) return out;
    out.reserve(it->second.size());
    for (std::size_t i : it->second) out.push_back(relations_[i]);
    return out;
}

std::vector<LatentRelation> neighbors_latent(const LatentPool& pool, std::string_view entity_id) {
    return pool.neighbors(entity_id);
}

void LatentPool::save(const std::filesystem::path& json_path) const {
    auto vec_path = json_path;
    vec_path.replace_extension(".f32");
    json rels = json::array();
    std::vector<double> flat;
    flat.reserve(relations_.size() * static_cast<std::size_t>(dim_));
    for (const auto& r : relations_) {
        rels.push_back({{"latent_id", r.latent_id}, {"e_i", r.e_i}, {"e_j", r.e_j}, {"context", r.context}, {"pmi", r.pmi}});
        flat.insert(flat.end(), r.vector.data(), r.vector.data() + r.vector.size());
    }
    json meta = {{"schema_version", kSchemaVersion},
                 {"dim", dim_},
                 {"rows", relations_.size()},
                 {"vectors_file", vec_path.filename().string()},
                 {"relations", rels}};
    write_f32_file(vec_path, flat);
    write_file(json_path, meta.dump(1) + "\n");
}

LatentPool LatentPool::load(const std::filesystem::path& json_path) {
    json meta;
    try {
        meta = json::parse(read_file(json_path));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Parse, fmt::format("{}: {}", json_path.string(), e.what()));
    }
    if (meta.value("schema_version", 0) != kSchemaVersion)
        throw Error(ErrorCode::Parse, "pool: unsupported schema_version");
    const int dim = meta.at("dim").get<int>();
    const auto rows = meta.at("rows").get<std::size_t>();
    const auto flat = read_f32_file(json_path.parent_path() / meta.at("vectors_file").get<std::string>());
    const auto& rels = meta.at("relations");
    if (rels.size() != rows || flat.size() != rows * static_cast<std::size_t>(dim))
        throw Error(ErrorCode::Parse, fmt::format("pool {}: row count / vector file size mismatch", json_path.string()));
    std::vector<LatentRelation> out;
    out.reserve(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const auto& r = rels[i];
        out.push_back({r.at("latent_id").get<std::string>(), r.at("e_i").get<std::string>(),
                       r.at("e_j").get<std::string>(), r.at("context").get<std::string>(), r.at("pmi").get<double>(),
                       from_std(std::span(flat).subspan(i * dim, dim))});
    }
    return LatentPool(dim, std::move(out));
}

// ---- construction ----------------------------------------------------------

LatentPool build_pool(const CorpusStore& store, const EntityCatalog& catalog, const CooccurrenceStats& stats,
                      LlmGateway& gateway, const PoolConfig& config, PoolReport* report) {
    if (config.max_contexts_per_pair < 1) throw Error(ErrorCode::Config, "max_contexts_per_pair must be >= 1");
    const PmiOptions options{config.alpha, config.clamp_at_zero};

    std::map<std::pair<std::string, std::string>, std::vector<const Sentence*>> contexts;
    for (const auto& s : store.sentences()) {
        std::set<std::string> present;
        for (const auto& m : s.mentions) present.insert(m.entity_id);
        for (auto a = present.begin(); a != present.end(); ++a)
            for (auto b = std::next(a); b != present.end(); ++b) contexts[{*a, *b}].push_back(&s);
    }

    struct Pending {
        std::string e_i, e_j, context;
        double pmi;
        std::string input;
    };
    std::vector<Pending> pending;
    PoolReport rep;
    for (const auto& [pair, count] : stats.pair_counts) {
        ++rep.pairs_considered;
        const double value = pmi(stats, pair.first, pair.second, options);
        if (!(value > config.tau_c)) continue;
        auto it = contexts.find(pair);
        if (it == contexts.end()) continue;
        ++rep.pairs_kept;
        auto sentences = it->second;
        std::sort(sentences.begin(), sentences.end(), [](const Sentence* a, const Sentence* b) {
            return a->text.size() != b->text.size() ? a->text.size() < b->text.size() : a->sentence_id < b->sentence_id;
        });
        sentences.resize(std::min<std::size_t>(sentences.size(), config.max_contexts_per_pair));
        for (const Sentence* s : sentences)
            pending.push_back({pair.first, pair.second, s->sentence_id, value,
                               render_latent_input(s->text, catalog.name_of(pair.first), catalog.name_of(pair.second))});
    }

    const std::size_t batch = static_cast<std::size_t>(std::max(1, config.embed_batch_size));
    const std::size_t batches = (pending.size() + batch - 1) / batch;
    std::vector<std::optional<Vec>> vectors(pending.size());
    parallel_for(batches, static_cast<std::size_t>(std::max(1, config.workers)), [&](std::size_t b) {
        const std::size_t lo = b * batch, hi = std::min(pending.size(), lo + batch);
        std::vector<std::string> texts;
        for (std::size_t i = lo; i < hi; ++i) texts.push_back(pending[i].input);
        try {
            auto out = gateway.embed(texts, /*mask_position_mode=*/true);
            for (std::size_t i = lo; i < hi; ++i) vectors[i] = std::move(out[i - lo]);
            return;
        } catch (const Error& e) {
            spdlog::warn("embedding batch {} failed ({}); retrying rows individually", b, e.what());
        }
        for (std::size_t i = lo; i < hi; ++i) {
            try {
                vectors[i] = gateway.embed_one(pending[i].input, true);
            } catch (const Error& e) {
                spdlog::warn("dropping latent context {} for ({}, {}): {}", pending[i].context, pending[i].e_i,
                             pending[i].e_j, e.what());
            }
        }
    });

    std::vector<LatentRelation> relations;
    int dim = 0;
    for (std::size_t i = 0; i < pending.size(); ++i) {
        if (!vectors[i]) {
            ++rep.contexts_dropped;
            continue;
        }
        // Stored at float32 precision so a save/load round trip is exact.
        Vec v = vectors[i]->cast<float>().cast<double>();
        if (dim == 0) dim = static_cast<int>(v.size());
        relations.push_back({make_latent_id(pending[i].e_i, pending[i].e_j, pending[i].context), pending[i].e_i,
                             pending[i].e_j, pending[i].context, pending[i].pmi, std::move(v)});
    }
    spdlog::info("latent pool: {} relations from {} of {} pairs ({} contexts dropped)", relations.size(),
                 rep.pairs_kept, rep.pairs_considered, rep.contexts_dropped);
    if (report) *report = rep;
    return LatentPool(dim, std::move(relations));
}

} // namespace relink
