#include "relink/path.hpp"

#include <algorithm>
#include <set>

#include <spdlog/fmt/fmt.h>

#include "relink/error.hpp"

namespace relink {

std::string_view to_string(EdgeOrigin origin) {
    switch (origin) {
    case EdgeOrigin::Explicit: return "explicit";
    case EdgeOrigin::Latent: return "latent";
    case EdgeOrigin::Instantiated: return "instantiated";
    }
    return "unknown";
}

std::string_view to_string(PathStatus status) {
    switch (status) {
    case PathStatus::Active: return "active";
    case PathStatus::Complete: return "complete";
    case PathStatus::Dead: return "dead";
    }
    return "unknown";
}

bool Path::visits(const std::string& entity_id) const {
    if (origin_entity == entity_id) return true;
    return std::any_of(edges.begin(), edges.end(), [&](const PathEdge& e) { return e.to_entity == entity_id; });
}

Path Path::extended(PathEdge edge, double delta) const {
    Path next = *this;
    next.edges.push_back(std::move(edge));
    next.delta_log.push_back(delta);
    const auto k = static_cast<double>(next.edges.size());
    const double prev = next.edges.size() == 1 ? 0.0 : avg_score;
    next.avg_score = ((k - 1.0) * prev + delta) / k;
    return next;
}

void CallCounters::reset() {
    neighbors_explicit = 0;
    neighbors_latent = 0;
    neighbors_overlay = 0;
    ranker_scores = 0;
    cosine_scores = 0;
    fine_rerank_calls = 0;
    instantiations = 0;
    completeness_checks = 0;
}

std::string describe_triple(const FactTriple& t, const EntityCatalog& catalog) {
    return fmt::format("{} {} {}", catalog.name_of(t.head), t.predicate, catalog.name_of(t.tail));
}

std::string describe_latent(const LatentRelation& r, const KnowledgeSources& sources) {
    std::string context;
    if (sources.store)
        if (const Sentence* s = sources.store->find_sentence(r.context)) context = s->text;
    return fmt::format("{} (unlabeled link between {} and {})", context, sources.catalog->name_of(r.e_i),
                       sources.catalog->name_of(r.e_j));
}

namespace {

PathEdge triple_edge(const FactTriple& t, const std::string& from, EdgeOrigin kind, const EntityCatalog& catalog) {
    PathEdge e;
    e.kind = kind;
    e.ref_id = t.triple_id;
    e.from_entity = from;
    e.to_entity = t.head == from ? t.tail : t.head;
    e.display_text = describe_triple(t, catalog);
    return e;
}

} // namespace

std::vector<PathEdge> expand_candidates(const Path& path, const KnowledgeSources& sources) {
    if (!sources.catalog) throw Error(ErrorCode::InvalidArgument, "expand_candidates: no entity catalog");
    const std::string& frontier = path.frontier();
    std::vector<PathEdge> out;
    std::set<std::string> covered;  // far endpoints reached by labeled edges

    if (sources.backbone) {
        if (sources.counters) ++sources.counters->neighbors_explicit;
        for (const auto& t : neighbors_explicit(*sources.backbone, frontier)) {
            auto e = triple_edge(t, frontier, EdgeOrigin::Explicit, *sources.catalog);
            if (path.visits(e.to_entity)) continue;
            covered.insert(e.to_entity);
            out.push_back(std::move(e));
        }
    }
    if (sources.overlay) {
        if (sources.counters) ++sources.counters->neighbors_overlay;
        for (const auto& t : sources.overlay->neighbors(frontier)) {
            auto e = triple_edge(t, frontier, EdgeOrigin::Instantiated, *sources.catalog);
            if (path.visits(e.to_entity)) continue;
            covered.insert(e.to_entity);
            out.push_back(std::move(e));
        }
    }
    if (sources.pool) {
        if (sources.counters) ++sources.counters->neighbors_latent;
        for (const auto& r : neighbors_latent(*sources.pool, frontier)) {
            PathEdge e;
            e.kind = EdgeOrigin::Latent;
            e.ref_id = r.latent_id;
            e.from_entity = frontier;
            e.to_entity = r.e_i == frontier ? r.e_j : r.e_i;
            if (path.visits(e.to_entity) || covered.count(e.to_entity)) continue;
            e.display_text = describe_latent(r, sources);
            out.push_back(std::move(e));
        }
    }
    return out;
}

} // namespace relink
