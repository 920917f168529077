#include "relink/kg_store.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "relink/error.hpp"
#include "relink/llm_gateway.hpp"
#include "relink/prompts.hpp"
#include "relink/random.hpp"
#include "relink/util.hpp"

namespace relink {

using nlohmann::json;

std::string_view to_string(TripleOrigin origin) {
    return origin == TripleOrigin::Explicit ? "explicit" : "instantiated";
}

static TripleOrigin parse_origin(std::string_view s) {
    if (s == "explicit") return TripleOrigin::Explicit;
    if (s == "instantiated") return TripleOrigin::Instantiated;
    throw Error(ErrorCode::Parse, fmt::format("unknown triple origin '{}'", s));
}

std::string make_triple_id(TripleOrigin origin, std::string_view head, std::string_view predicate,
                           std::string_view tail, std::string_view provenance) {
    std::string key;
    key.append(head).push_back('\x1f');
    key.append(predicate).push_back('\x1f');
    key.append(tail).push_back('\x1f');
    key.append(provenance);
    return (origin == TripleOrigin::Explicit ? "T-" : "I-") + hex64(fnv1a64(key));
}

void validate_triple(const FactTriple& t) {
    if (t.head == t.tail) throw Error(ErrorCode::SelfLoop, fmt::format("triple has head == tail ({})", t.head));
    if (t.head.empty() || t.tail.empty()) throw Error(ErrorCode::InvalidTriple, "triple endpoints must be non-empty");
    if (trim(t.predicate).empty()) throw Error(ErrorCode::InvalidTriple, "triple predicate must be non-empty");
    if (t.provenance.empty()) throw Error(ErrorCode::InvalidTriple, "triple provenance must be non-empty");
    if (!(t.confidence >= 0.0 && t.confidence <= 1.0))
        throw Error(ErrorCode::InvalidTriple, "triple confidence must lie in [0, 1]");
}

static void insert_sorted(std::vector<std::string>& ids, const std::string& id) {
    ids.insert(std::lower_bound(ids.begin(), ids.end(), id), id);
}

// ---- backbone --------------------------------------------------------------

bool GraphBackbone::add(FactTriple t) {
    t.origin = TripleOrigin::Explicit;
    validate_triple(t);
    if (!entities_.contains(t.head) || !entities_.contains(t.tail))
        throw Error(ErrorCode::UnknownEntity, fmt::format("triple endpoint not in catalog: {} / {}", t.head, t.tail));
    const std::string key = t.head + '\x1f' + t.predicate + '\x1f' + t.tail;
    if (!hpt_keys_.insert(key).second) return false;
    t.triple_id = make_triple_id(t.origin, t.head, t.predicate, t.tail, t.provenance);
    insert_sorted(adjacency_[t.head], t.triple_id);
    insert_sorted(adjacency_[t.tail], t.triple_id);
    triples_.emplace(t.triple_id, std::move(t));
    return true;
}

const FactTriple* GraphBackbone::find(std::string_view triple_id) const {
    auto it = triples_.find(std::string(triple_id));
    return it == triples_.end() ? nullptr : &it->second;
}

const std::vector<std::string>& GraphBackbone::incident(std::string_view entity_id) const {
    static const std::vector<std::string> kEmpty;
    auto it = adjacency_.find(std::string(entity_id));
    return it == adjacency_.end() ? kEmpty : it->second;
}

json GraphBackbone::to_json() const {
    json triples = json::array();
    for (const auto& [id, t] : triples_)
        triples.push_back({{"id", id},
                           {"h", t.head},
                           {"p", t.predicate},
                           {"t", t.tail},
                           {"provenance", t.provenance},
                           {"origin", to_string(t.origin)},
                           {"confidence", t.confidence}});
    return {{"schema_version", kSchemaVersion}, {"entities", entities_.to_json()}, {"triples", triples}};
}

GraphBackbone GraphBackbone::from_json(const json& j) {
    if (j.value("schema_version", 0) != kSchemaVersion)
        throw Error(ErrorCode::Parse, "graph: unsupported schema_version");
    GraphBackbone g(EntityCatalog::from_json(j.at("entities")));
    for (const auto& jt : j.at("triples")) {
        FactTriple t;
        t.head = jt.at("h").get<std::string>();
        t.predicate = jt.at("p").get<std::string>();
        t.tail = jt.at("t").get<std::string>();
        t.provenance = jt.at("provenance").get<std::string>();
        t.origin = parse_origin(jt.value("origin", std::string("explicit")));
        t.confidence = jt.value("confidence", 1.0);
        if (t.origin != TripleOrigin::Explicit)
            throw Error(ErrorCode::Parse, "graph file may only contain explicit triples");
        if (!g.add(t)) throw Error(ErrorCode::Parse, "graph file contains a duplicate (h, p, t) triple");
    }
    return g;
}

void GraphBackbone::save(const std::filesystem::path& path) const { write_file(path, to_json().dump(1) + "\n"); }

GraphBackbone GraphBackbone::load(const std::filesystem::path& path) {
    try {
        return from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Parse, fmt::format("{}: {}", path.string(), e.what()));
    }
}

std::vector<FactTriple> neighbors_explicit(const GraphBackbone& g, std::string_view entity_id) {
    if (!g.entities().contains(entity_id))
        throw Error(ErrorCode::UnknownEntity, fmt::format("unknown entity '{}'", entity_id));
    std::vector<FactTriple> out;
    for (const auto& id : g.incident(entity_id)) out.push_back(*g.find(id));
    return out;
}

GraphBackbone apply_edge_mask(const GraphBackbone& g, double keep_fraction, std::uint64_t seed) {
    if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0))
        throw Error(ErrorCode::InvalidArgument, "keep_fraction must lie in [0, 1]");
    std::vector<const FactTriple*> order;
    for (const auto& [_, t] : g.triples()) order.push_back(&t);
    Rng rng(seed);
    rng.shuffle(order);
    const auto keep = static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(order.size())));
    GraphBackbone out(g.entities());
    for (std::size_t i = 0; i < keep; ++i) out.add(*order[i]);
    return out;
}

std::vector<std::string> check_provenance(const GraphBackbone& g, const CorpusStore& store) {
    std::vector<std::string> bad;
    for (const auto& [id, t] : g.triples()) {
        const Sentence* s = store.find_sentence(t.provenance);
        if (!s || !s->mentions_entity(t.head) || !s->mentions_entity(t.tail)) bad.push_back(id);
    }
    return bad;
}

// ---- overlay ---------------------------------------------------------------

std::string InstantiatedOverlay::add(FactTriple t) {
    if (t.origin != TripleOrigin::Instantiated)
        throw Error(ErrorCode::InvalidTriple, "overlay only accepts instantiated triples");
    validate_triple(t);
    t.triple_id = make_triple_id(t.origin, t.head, t.predicate, t.tail, t.provenance);
    std::lock_guard lock(mutex_);
    if (triples_.count(t.triple_id)) return t.triple_id;
    insert_sorted(adjacency_[t.head], t.triple_id);
    insert_sorted(adjacency_[t.tail], t.triple_id);
    std::string id = t.triple_id;
    triples_.emplace(id, std::move(t));
    return id;
}

std::vector<FactTriple> InstantiatedOverlay::neighbors(std::string_view entity_id) const {
    std::lock_guard lock(mutex_);
    std::vector<FactTriple> out;
    auto it = adjacency_.find(std::string(entity_id));
    if (it == adjacency_.end()) return out;
    for (const auto& id : it->second) out.push_back(triples_.at(id));
    return out;
}

std::optional<FactTriple> InstantiatedOverlay::find(std::string_view triple_id) const {
    std::lock_guard lock(mutex_);
    auto it = triples_.find(std::string(triple_id));
    if (it == triples_.end()) return std::nullopt;
    return it->second;
}

std::size_t InstantiatedOverlay::size() const {
    std::lock_guard lock(mutex_);
    return triples_.size();
}

std::string add_instantiated(InstantiatedOverlay& overlay, FactTriple t) { return overlay.add(std::move(t)); }

// ---- extraction ------------------------------------------------------------

static std::optional<std::string> string_field(const json& o, std::initializer_list<const char*> keys) {
    for (const char* k : keys)
        if (o.contains(k) && o.at(k).is_string()) return o.at(k).get<std::string>();
    return std::nullopt;
}

bool parse_triples(std::string_view reply, std::vector<RawTriple>& out) {
    auto try_parse = [](std::string_view text) -> std::optional<json> {
        try {
            return json::parse(text);
        } catch (const json::exception&) {
            return std::nullopt;
        }
    };
    std::optional<json> parsed = try_parse(trim(reply));
    if (!parsed) {
        const auto ab = reply.find('['), ae = reply.rfind(']');
        if (ab != std::string_view::npos && ae != std::string_view::npos && ae > ab)
            parsed = try_parse(reply.substr(ab, ae - ab + 1));
    }
    if (!parsed) {
        const auto ob = reply.find('{'), oe = reply.rfind('}');
        if (ob != std::string_view::npos && oe != std::string_view::npos && oe > ob)
            parsed = try_parse(reply.substr(ob, oe - ob + 1));
    }
    if (!parsed) return false;
    json items = parsed->is_array() ? *parsed : json::array({*parsed});
    for (const auto& o : items) {
        if (!o.is_object()) continue;
        auto h = string_field(o, {"h", "head"});
        auto p = string_field(o, {"p", "relation", "predicate"});
        auto t = string_field(o, {"t", "tail"});
        if (!h || !p || !t) continue;
        RawTriple r{*h, collapse_whitespace(*p), *t, std::nullopt};
        if (o.contains("confidence") && o.at("confidence").is_number()) r.confidence = o.at("confidence").get<double>();
        out.push_back(std::move(r));
    }
    return true;
}

namespace {

// Resolves a surface to one of the entities mentioned in the sentence.
std::optional<std::string> resolve_in_sentence(const std::string& surface, const Sentence& s,
                                               const EntityCatalog& catalog) {
    for (const auto& m : s.mentions) {
        if (m.entity_id == surface) return m.entity_id;
        const Entity& e = catalog.at(m.entity_id);
        if (iequals_ascii(trim(surface), e.name) || iequals_ascii(trim(surface), m.surface)) return m.entity_id;
        for (const auto& a : e.aliases)
            if (iequals_ascii(trim(surface), a)) return m.entity_id;
    }
    return std::nullopt;
}

} // namespace

GraphBackbone extract_backbone(const CorpusStore& store, const EntityCatalog& catalog, LlmGateway& gateway,
                               const PromptLibrary& prompts, const ExtractionConfig& config,
                               ExtractionReport* report) {
    std::vector<const Sentence*> eligible;
    for (const auto& s : store.sentences()) {
        std::set<std::string> distinct;
        for (const auto& m : s.mentions) distinct.insert(m.entity_id);
        if (distinct.size() >= 2) eligible.push_back(&s);
    }

    struct Outcome {
        bool failed = false;
        std::vector<FactTriple> accepted;
        std::size_t rejected = 0;
    };
    std::vector<Outcome> outcomes(eligible.size());
    parallel_for(eligible.size(), static_cast<std::size_t>(std::max(1, config.workers)), [&](std::size_t i) {
        const Sentence& s = *eligible[i];
        std::vector<std::string> names;
        std::set<std::string> seen;
        for (const auto& m : s.mentions)
            if (seen.insert(m.entity_id).second) names.push_back(catalog.name_of(m.entity_id));
        std::string entity_list;
        for (const auto& n : names) entity_list += (entity_list.empty() ? "" : "; ") + n;
        const std::string prompt =
            prompts.render(PromptLibrary::kExtract, {{"entities", entity_list}, {"sentence", s.text}});
        std::string reply;
        try {
            reply = gateway.chat(prompt);
        } catch (const Error& e) {
            spdlog::warn("extraction skipped sentence {}: {}", s.sentence_id, e.what());
            outcomes[i].failed = true;
            return;
        }
        std::vector<RawTriple> raw;
        if (!parse_triples(reply, raw)) {
            spdlog::warn("extraction reply for {} is not parseable", s.sentence_id);
            outcomes[i].failed = true;
            return;
        }
        for (const auto& r : raw) {
            auto h = resolve_in_sentence(r.head, s, catalog);
            auto t = resolve_in_sentence(r.tail, s, catalog);
            if (!h || !t || *h == *t || r.predicate.empty()) {
                ++outcomes[i].rejected;
                continue;
            }
            outcomes[i].accepted.push_back(
                FactTriple{"", *h, r.predicate, *t, s.sentence_id, TripleOrigin::Explicit, 1.0});
        }
    });

    GraphBackbone g(catalog);
    ExtractionReport rep;
    rep.sentences_prompted = eligible.size();
    for (auto& o : outcomes) {
        rep.sentences_failed += o.failed ? 1 : 0;
        rep.triples_rejected += o.rejected;
        for (auto& t : o.accepted) {
            if (g.add(std::move(t)))
                ++rep.triples_accepted;
            else
                ++rep.triples_duplicate;
        }
    }
    spdlog::info("extracted {} triples from {} sentences ({} failed, {} rejected, {} duplicate)",
                 rep.triples_accepted, rep.sentences_prompted, rep.sentences_failed, rep.triples_rejected,
                 rep.triples_duplicate);
    if (report) *report = rep;
    return g;
}

} // namespace relink
