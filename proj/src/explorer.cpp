#include "relink/explorer.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "relink/corpus.hpp"
#include "relink/error.hpp"
#include "relink/llm_gateway.hpp"
#include "relink/prompts.hpp"

namespace relink {

using nlohmann::json;

namespace {

std::optional<FactTriple> lookup_triple(const std::string& id, const KnowledgeSources& sources,
                                        const InstantiatedOverlay* overlay) {
    if (sources.backbone)
        if (const FactTriple* t = sources.backbone->find(id)) return *t;
    if (overlay) return overlay->find(id);
    return std::nullopt;
}

std::string normalize_question(const std::string& q) { return collapse_whitespace(to_lower_ascii(trim(q))); }

} // namespace

// ---- topic entities --------------------------------------------------------

std::vector<std::string> identify_topic_entities(const std::string& question, const EntityCatalog& catalog,
                                                 LlmGateway& gateway, const PromptLibrary& prompts) {
    if (catalog.size() == 0) throw Error(ErrorCode::InvalidArgument, "entity catalog is empty");
    std::vector<std::string> out;
    auto push = [&](const std::string& id) {
        if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
    };
    for (const auto& m : MentionMatcher(catalog).match(question)) push(m.entity_id);
    if (!out.empty()) return out;

    std::string reply;
    try {
        reply = gateway.chat(prompts.render(PromptLibrary::kTopic, {{"question", question}}));
    } catch (const Error& e) {
        spdlog::warn("topic entity prompt failed: {}", e.what());
    }
    std::istringstream lines(reply);
    std::string line;
    while (std::getline(lines, line)) {
        std::string name = trim(line);
        while (!name.empty() && (name.front() == '-' || name.front() == '*')) name = trim(name.substr(1));
        if (name.empty()) continue;
        if (auto id = catalog.resolve(name)) push(*id);
    }
    if (out.empty()) throw Error(ErrorCode::NoTopicEntity, fmt::format("no topic entity found in '{}'", question));
    return out;
}

double update_path_score(double prev_avg, int k, double delta) {
    if (k < 1) throw Error(ErrorCode::InvalidArgument, "path step count must be >= 1");
    if (k == 1) return delta;
    return ((k - 1) * prev_avg + delta) / k;
}

// ---- coarse stage ----------------------------------------------------------

EdgeVector encode_edge(const PathEdge& edge, const KnowledgeSources& sources, LlmGateway& gateway,
                       const ProjectionAdapter& adapter) {
    if (edge.kind == EdgeOrigin::Latent) {
        const LatentRelation* r = sources.pool ? sources.pool->find(edge.ref_id) : nullptr;
        if (!r) throw Error(ErrorCode::MissingArtifact, fmt::format("unknown latent relation {}", edge.ref_id));
        return encode_latent(*r, adapter);
    }
    auto t = lookup_triple(edge.ref_id, sources, sources.overlay);
    if (!t) throw Error(ErrorCode::MissingArtifact, fmt::format("unknown triple {}", edge.ref_id));
    return encode_triple(*t, *sources.catalog, gateway, adapter);
}

std::vector<ScoredEdge> coarse_rank(const std::vector<PathEdge>& candidates, const Path& path, const Vec& query_vec,
                                    const ExplorerModels& models, const KnowledgeSources& sources,
                                    LlmGateway& gateway, int top_m, int workers) {
    if (top_m < 1) throw Error(ErrorCode::InvalidArgument, "shortlist size must be >= 1");
    if (!models.adapter) throw Error(ErrorCode::MissingArtifact, "coarse ranking needs a projection adapter");
    std::vector<std::optional<double>> scores(candidates.size());
    parallel_for(candidates.size(), static_cast<std::size_t>(std::max(1, workers)), [&](std::size_t i) {
        try {
            const EdgeVector ev = encode_edge(candidates[i], sources, gateway, *models.adapter);
            if (models.ranker) {
                if (sources.counters) ++sources.counters->ranker_scores;
                scores[i] = score(*models.ranker, query_vec, ev, path.avg_score);
            } else {
                if (sources.counters) ++sources.counters->cosine_scores;
                scores[i] = cosine(query_vec, ev.vector);
            }
        } catch (const Error& e) {
            spdlog::warn("dropping candidate {}: {}", candidates[i].ref_id, e.what());
        }
    });
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (scores[i]) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return *scores[a] > *scores[b]; });
    if (order.size() > static_cast<std::size_t>(top_m)) order.resize(static_cast<std::size_t>(top_m));
    std::vector<ScoredEdge> out;
    for (auto i : order) out.push_back({candidates[i], *scores[i]});
    return out;
}

// ---- fine stage ------------------------------------------------------------

std::optional<double> parse_relevance(const std::string& reply) {
    std::optional<int> found;
    std::istringstream words(reply);
    std::string w;
    while (words >> w) {
        auto first = w.find_first_not_of(".,:;!?()[]\"'*");
        auto last = w.find_last_not_of(".,:;!?()[]\"'*");
        if (first == std::string::npos) continue;
        w = w.substr(first, last - first + 1);
        if (w.empty() || w.size() > 2 || !std::all_of(w.begin(), w.end(), [](char c) { return c >= '0' && c <= '9'; }))
            continue;
        if (found) return std::nullopt;  // ambiguous
        found = std::stoi(w);
    }
    if (!found || *found > 10) return std::nullopt;
    return *found / 10.0;
}

std::string render_path(const Path& path, const EntityCatalog& catalog) {
    std::string out = fmt::format("Start: {}", catalog.name_of(path.origin_entity));
    for (std::size_t i = 0; i < path.edges.size(); ++i)
        out += fmt::format("\n{}. {}", i + 1, path.edges[i].display_text);
    return out;
}

std::vector<std::pair<PathEdge, double>> fine_rerank(const std::vector<PathEdge>& shortlist, const Path& path,
                                                     const std::string& question, const KnowledgeSources& sources,
                                                     LlmGateway& gateway, const PromptLibrary& prompts,
                                                     int workers) {
    const std::string rendered = render_path(path, *sources.catalog);
    std::vector<std::pair<PathEdge, double>> out(shortlist.size());
    parallel_for(shortlist.size(), static_cast<std::size_t>(std::max(1, workers)), [&](std::size_t i) {
        const PathEdge& e = shortlist[i];
        out[i] = {e, 0.0};
        if (sources.counters) ++sources.counters->fine_rerank_calls;
        const std::string prompt = prompts.render(PromptLibrary::kRerank,
                                                  {{"question", question},
                                                   {"path", rendered},
                                                   {"from", sources.catalog->name_of(e.from_entity)},
                                                   {"to", sources.catalog->name_of(e.to_entity)},
                                                   {"candidate", e.display_text}});
        try {
            const std::string reply = gateway.chat(prompt);
            if (auto v = parse_relevance(reply)) out[i].second = *v;
            else spdlog::warn("unusable relevance reply for {}: '{}'", e.ref_id, reply);
        } catch (const Error& err) {
            if (err.code() == ErrorCode::ReplayMiss) throw;
            spdlog::warn("relevance prompt failed for {}: {}", e.ref_id, err.what());
        }
    });
    return out;
}

bool check_complete(const Path& path, const std::string& question, const KnowledgeSources& sources,
                    LlmGateway& gateway, const PromptLibrary& prompts) {
    if (sources.counters) ++sources.counters->completeness_checks;
    const std::string prompt =
        prompts.render(PromptLibrary::kComplete, {{"question", question},
                                                  {"path", render_path(path, *sources.catalog)},
                                                  {"frontier", sources.catalog->name_of(path.frontier())}});
    try {
        const std::string reply = to_lower_ascii(trim(gateway.chat(prompt)));
        return reply.rfind("yes", 0) == 0;
    } catch (const Error& err) {
        if (err.code() == ErrorCode::ReplayMiss) throw;
        spdlog::warn("completeness prompt failed: {}", err.what());
        return false;
    }
}

// ---- instantiation ---------------------------------------------------------

FactTriple Instantiator::instantiate(const LatentRelation& latent, const std::string& question,
                                     const KnowledgeSources& sources, InstantiatedOverlay& overlay,
                                     LlmGateway& gateway, const PromptLibrary& prompts) {
    const auto key = std::make_pair(latent.latent_id, normalize_question(question));
    {
        std::lock_guard lock(mutex_);
        auto it = memo_.find(key);
        if (it != memo_.end()) {
            if (!it->second)
                throw Error(ErrorCode::InstantiationFailed, fmt::format("{} could not be instantiated", latent.latent_id));
            return *it->second;
        }
    }
    const Sentence* context = sources.store ? sources.store->find_sentence(latent.context) : nullptr;
    if (!context)
        throw Error(ErrorCode::MissingArtifact, fmt::format("context sentence {} not in corpus", latent.context));
    const EntityCatalog& catalog = *sources.catalog;
    if (sources.counters) ++sources.counters->instantiations;

    std::optional<FactTriple> result;
    std::string failure;
    try {
        const std::string reply = gateway.chat(prompts.render(PromptLibrary::kInstantiate,
                                                              {{"entity_a", catalog.name_of(latent.e_i)},
                                                               {"entity_b", catalog.name_of(latent.e_j)},
                                                               {"sentence", context->text},
                                                               {"question", question}}));
        std::vector<RawTriple> raw;
        if (!parse_triples(reply, raw)) failure = "unparseable reply";
        for (const auto& r : raw) {
            auto h = catalog.resolve(r.head);
            auto t = catalog.resolve(r.tail);
            const std::string p = collapse_whitespace(trim(r.predicate));
            if (!h || !t || p.empty() || *h == *t) continue;
            if (!((*h == latent.e_i && *t == latent.e_j) || (*h == latent.e_j && *t == latent.e_i))) continue;
            FactTriple ft;
            ft.head = *h;
            ft.predicate = p;
            ft.tail = *t;
            ft.provenance = latent.context;
            ft.origin = TripleOrigin::Instantiated;
            ft.confidence = r.confidence.value_or(1.0);
            ft.triple_id = add_instantiated(overlay, ft);
            result = ft;
            break;
        }
        if (!result && failure.empty()) failure = "reply names a different entity pair";
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ReplayMiss) throw;
        failure = e.what();
    }
    {
        std::lock_guard lock(mutex_);
        ++prompts_sent_;
        memo_.emplace(key, result);
    }
    if (!result)
        throw Error(ErrorCode::InstantiationFailed, fmt::format("{} could not be instantiated: {}", latent.latent_id, failure));
    return *result;
}

std::size_t Instantiator::prompts_sent() const {
    std::lock_guard lock(mutex_);
    return prompts_sent_;
}

void TraceSink::write(const json& record) {
    std::lock_guard lock(mutex_);
    out_ << record.dump() << '\n';
}

// ---- evidence --------------------------------------------------------------

EvidenceGraph build_evidence(const std::vector<Path>& paths, const KnowledgeSources& sources,
                             const InstantiatedOverlay* overlay) {
    EvidenceGraph ev;
    ev.paths = paths;
    std::set<std::string> seen;
    for (const auto& p : paths) {
        for (const auto& e : p.edges) {
            if (e.kind == EdgeOrigin::Latent) continue;
            if (!seen.insert(e.ref_id).second) continue;
            auto t = lookup_triple(e.ref_id, sources, overlay);
            if (!t) throw Error(ErrorCode::MissingArtifact, fmt::format("unknown triple {}", e.ref_id));
            const Sentence* s = sources.store ? sources.store->find_sentence(t->provenance) : nullptr;
            if (!s) throw Error(ErrorCode::MissingArtifact, fmt::format("provenance {} not in corpus", t->provenance));
            ev.source_sentences.emplace(t->provenance, s->text);
            ev.triples.push_back(std::move(*t));
        }
    }
    return ev;
}

// ---- beam search -----------------------------------------------------------

namespace {

struct Proposal {
    std::size_t parent = 0;
    std::size_t rank = 0;  // position in the parent's shortlist
    PathEdge edge;
    double coarse = 0.0;
    double delta = 0.0;
    double avg = 0.0;
};

json trace_record(const std::string& qid, int iteration, std::size_t parent, const Proposal& p, bool retained,
                  const std::string& note) {
    return {{"query_id", qid},     {"iteration", iteration},  {"path", parent},
            {"edge", p.edge.ref_id}, {"kind", to_string(p.edge.kind)}, {"to", p.edge.to_entity},
            {"coarse", p.coarse},  {"delta", p.delta},        {"avg", p.avg},
            {"retained", retained}, {"note", note}};
}

} // namespace

EvidenceGraph explore(const QueryRecord& query, const ExploreContext& ctx, const ExploreConfig& config) {
    if (!ctx.gateway || !ctx.prompts || !ctx.overlay || !ctx.instantiator || !ctx.sources.catalog)
        throw Error(ErrorCode::InvalidArgument, "explore: incomplete context");
    if (config.beam_width < 1 || config.shortlist_size < 1 || config.max_length < 0)
        throw Error(ErrorCode::InvalidArgument, "explore: K and M must be >= 1, L_max >= 0");
    KnowledgeSources sources = ctx.sources;
    sources.overlay = ctx.overlay;
    LlmGateway& gateway = *ctx.gateway;
    const EntityCatalog& catalog = *sources.catalog;

    std::vector<std::string> topics;
    for (const auto& id : query.topic_entities) {
        if (catalog.contains(id)) {
            if (std::find(topics.begin(), topics.end(), id) == topics.end()) topics.push_back(id);
        } else {
            spdlog::warn("query {}: unknown topic entity {}", query.query_id, id);
        }
    }
    if (topics.empty()) topics = identify_topic_entities(query.text, catalog, gateway, *ctx.prompts);
    if (config.max_length == 0) return {};

    const Vec query_vec = encode_text(query.text, gateway, *ctx.models.adapter).vector;
    const auto workers = std::max(1, config.workers);

    std::vector<Path> beam;
    for (const auto& t : topics) beam.push_back(Path{t, {}, {}, 0.0, PathStatus::Active});
    std::vector<Path> complete;

    for (int iteration = 1; iteration <= config.max_length && !beam.empty(); ++iteration) {
        std::vector<std::vector<Proposal>> per_path(beam.size());
        for (std::size_t pi = 0; pi < beam.size(); ++pi) {
            const Path& path = beam[pi];
            const auto candidates = expand_candidates(path, sources);
            if (candidates.empty()) continue;
            const auto shortlist =
                coarse_rank(candidates, path, query_vec, ctx.models, sources, gateway, config.shortlist_size, workers);
            if (shortlist.empty()) continue;
            std::vector<PathEdge> edges;
            for (const auto& s : shortlist) edges.push_back(s.edge);
            const auto fine = fine_rerank(edges, path, query.text, sources, gateway, *ctx.prompts, workers);
            for (std::size_t i = 0; i < fine.size(); ++i) {
                Proposal p{pi, i, fine[i].first, shortlist[i].score, fine[i].second, 0.0};
                p.avg = update_path_score(path.avg_score, static_cast<int>(path.k()) + 1, p.delta);
                per_path[pi].push_back(std::move(p));
            }
        }

        std::vector<const Proposal*> ranked;
        for (const auto& v : per_path)
            for (const auto& p : v) ranked.push_back(&p);
        std::stable_sort(ranked.begin(), ranked.end(), [](const Proposal* a, const Proposal* b) {
            if (a->avg != b->avg) return a->avg > b->avg;
            if (a->parent != b->parent) return a->parent < b->parent;
            return a->rank < b->rank;
        });

        std::vector<Path> next;
        std::set<std::tuple<std::size_t, std::string, std::string>> taken;  // (parent, to, triple)
        for (const Proposal* p : ranked) {
            std::string note;
            bool retained = false;
            if (next.size() < static_cast<std::size_t>(config.beam_width)) {
                PathEdge edge = p->edge;
                bool viable = true;
                if (edge.kind == EdgeOrigin::Latent) {
                    const LatentRelation* r = sources.pool->find(edge.ref_id);
                    try {
                        FactTriple t = ctx.instantiator->instantiate(*r, query.text, sources, *ctx.overlay, gateway,
                                                                     *ctx.prompts);
                        edge.kind = EdgeOrigin::Instantiated;
                        edge.ref_id = t.triple_id;
                        edge.display_text = describe_triple(t, catalog);
                        note = "instantiated " + t.triple_id;
                    } catch (const Error& e) {
                        if (e.code() != ErrorCode::InstantiationFailed) throw;
                        viable = false;
                        note = "instantiation failed";
                    }
                }
                if (viable && !taken.insert({p->parent, edge.to_entity, edge.ref_id}).second) {
                    viable = false;
                    note = "duplicate extension";
                }
                if (viable) {
                    next.push_back(beam[p->parent].extended(std::move(edge), p->delta));
                    retained = true;
                }
            }
            if (ctx.trace) ctx.trace->write(trace_record(query.query_id, iteration, p->parent, *p, retained, note));
        }

        std::vector<Path> active;
        for (auto& path : next) {
            const bool ask = config.completeness_check && path.delta_log.back() >= config.completeness_threshold;
            if (ask && check_complete(path, query.text, sources, gateway, *ctx.prompts)) {
                path.status = PathStatus::Complete;
                complete.push_back(std::move(path));
            } else {
                active.push_back(std::move(path));
            }
        }
        beam = std::move(active);
    }

    return build_evidence(complete.empty() ? beam : complete, sources, ctx.overlay);
}

} // namespace relink
