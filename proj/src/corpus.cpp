#include "relink/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <thread>
#include <unordered_set>

#include <spdlog/fmt/fmt.h>

#include "relink/error.hpp"
#include "relink/util.hpp"

namespace relink {

using nlohmann::json;

// ---- EntityCatalog ---------------------------------------------------------

void EntityCatalog::add(Entity entity) {
    if (entity.entity_id.empty())
        throw Error(ErrorCode::InvalidArgument, "entity_id must be non-empty");
    if (trim(entity.name).empty())
        throw Error(ErrorCode::InvalidArgument, fmt::format("entity {} has an empty name", entity.entity_id));
    if (by_id_.count(entity.entity_id))
        throw Error(ErrorCode::InvalidArgument, fmt::format("duplicate entity_id {}", entity.entity_id));
    const std::string lname = to_lower_ascii(entity.name);
    if (by_name_.count(lname))
        throw Error(ErrorCode::InvalidArgument, fmt::format("duplicate entity name '{}'", entity.name));

    const std::size_t pos = entities_.size();
    by_id_.emplace(entity.entity_id, pos);
    by_name_.emplace(lname, pos);
    for (const auto& alias : entity.aliases) by_alias_.emplace(to_lower_ascii(alias), pos);
    entities_.push_back(std::move(entity));
}

bool EntityCatalog::contains(std::string_view entity_id) const {
    return by_id_.count(std::string(entity_id)) != 0;
}

const Entity* EntityCatalog::find(std::string_view entity_id) const {
    auto it = by_id_.find(std::string(entity_id));
    return it == by_id_.end() ? nullptr : &entities_[it->second];
}

const Entity& EntityCatalog::at(std::string_view entity_id) const {
    if (const Entity* e = find(entity_id)) return *e;
    throw Error(ErrorCode::UnknownEntity, fmt::format("unknown entity '{}'", entity_id));
}

const std::string& EntityCatalog::name_of(std::string_view entity_id) const { return at(entity_id).name; }

std::optional<std::string> EntityCatalog::resolve(std::string_view surface) const {
    const std::string key = to_lower_ascii(trim(surface));
    if (auto it = by_name_.find(key); it != by_name_.end()) return entities_[it->second].entity_id;
    if (auto it = by_alias_.find(key); it != by_alias_.end()) return entities_[it->second].entity_id;
    return std::nullopt;
}

json EntityCatalog::to_json() const {
    json arr = json::array();
    for (const auto& e : entities_)
        arr.push_back({{"entity_id", e.entity_id}, {"name", e.name}, {"aliases", e.aliases}});
    return arr;
}

static Entity entity_from_json(const json& j) {
    Entity e;
    e.entity_id = j.at("entity_id").get<std::string>();
    e.name = j.at("name").get<std::string>();
    if (j.contains("aliases")) e.aliases = j.at("aliases").get<std::vector<std::string>>();
    return e;
}

EntityCatalog EntityCatalog::from_json(const json& j) {
    EntityCatalog c;
    for (const auto& item : j) c.add(entity_from_json(item));
    return c;
}

EntityCatalog load_entity_catalog(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open entity catalog {}", path.string()));
    EntityCatalog catalog;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            catalog.add(entity_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::Parse, fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        } catch (const Error& e) {
            throw Error(e.code(), fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    return catalog;
}

// ---- segmentation ----------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 26> kAbbreviations = {
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "e.g", "i.e", "mt", "ft",
    "inc", "ltd", "co", "gen", "col", "lt", "sgt", "capt", "rev", "u.s", "approx", "fig", "dept"};

bool is_space_byte(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

// The word immediately before a period, e.g. "Dr" in "Dr.".
bool ends_with_abbreviation(std::string_view text, std::size_t period) {
    std::size_t b = period;
    while (b > 0 && !is_space_byte(text[b - 1]) && text[b - 1] != '(' && text[b - 1] != '"') --b;
    const std::string word = to_lower_ascii(text.substr(b, period - b));
    return std::find(kAbbreviations.begin(), kAbbreviations.end(), word) != kAbbreviations.end();
}

} // namespace

std::vector<std::pair<std::size_t, std::size_t>> segment_sentences(std::string_view text) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        while (i < n && is_space_byte(text[i])) ++i;
        if (i >= n) break;
        const std::size_t start = i;
        std::size_t end = n;
        for (std::size_t j = i; j < n; ++j) {
            if (!is_terminal(text[j])) continue;
            std::size_t k = j;
            while (k + 1 < n && is_terminal(text[k + 1])) ++k;
            while (k + 1 < n && is_closer(text[k + 1])) ++k;
            if (k + 1 < n && !is_space_byte(text[k + 1])) continue;
            if (text[j] == '.' && k == j && ends_with_abbreviation(text, j)) continue;
            end = k + 1;
            break;
        }
        std::size_t e = end;
        while (e > start && is_space_byte(text[e - 1])) --e;
        spans.emplace_back(start, e);
        i = end;
    }
    return spans;
}

// ---- store -----------------------------------------------------------------

bool Sentence::mentions_entity(std::string_view entity_id) const {
    return std::any_of(mentions.begin(), mentions.end(),
                       [&](const EntityMention& m) { return m.entity_id == entity_id; });
}

void CorpusStore::index_sentence(std::size_t pos) { sentence_index_.emplace(sentences_[pos].sentence_id, pos); }

void CorpusStore::add_document(const std::string& doc_id, const std::string& title, std::string_view text) {
    if (doc_id.empty()) throw Error(ErrorCode::InvalidDocument, "doc_id must be non-empty");
    if (doc_index_.count(doc_id))
        throw Error(ErrorCode::DuplicateDocument, fmt::format("duplicate doc_id '{}'", doc_id));
    Document doc{doc_id, title, {}};
    std::vector<Sentence> added;
    for (auto [b, e] : segment_sentences(text)) {
        std::string normalized = collapse_whitespace(text.substr(b, e - b));
        if (normalized.empty()) continue;
        Sentence s;
        s.ordinal = added.size();
        s.sentence_id = fmt::format("{}#{}", doc_id, s.ordinal);
        s.doc_id = doc_id;
        s.text = std::move(normalized);
        doc.sentences.push_back(s.sentence_id);
        added.push_back(std::move(s));
    }
    if (added.empty())
        throw Error(ErrorCode::InvalidDocument, fmt::format("document '{}' has no sentence content", doc_id));
    doc_index_.emplace(doc_id, documents_.size());
    documents_.push_back(std::move(doc));
    for (auto& s : added) {
        sentences_.push_back(std::move(s));
        index_sentence(sentences_.size() - 1);
    }
}

const Sentence* CorpusStore::find_sentence(std::string_view sentence_id) const {
    auto it = sentence_index_.find(std::string(sentence_id));
    return it == sentence_index_.end() ? nullptr : &sentences_[it->second];
}

const Sentence& CorpusStore::sentence(std::string_view sentence_id) const {
    if (const Sentence* s = find_sentence(sentence_id)) return *s;
    throw Error(ErrorCode::InvalidArgument, fmt::format("unknown sentence '{}'", sentence_id));
}

json CorpusStore::to_json() const {
    json docs = json::array();
    for (const auto& d : documents_) {
        json sents = json::array();
        for (const auto& sid : d.sentences) {
            const Sentence& s = sentence(sid);
            json mentions = json::array();
            for (const auto& m : s.mentions)
                mentions.push_back(
                    {{"entity_id", m.entity_id}, {"surface", m.surface}, {"start", m.start}, {"end", m.end}});
            sents.push_back({{"sentence_id", s.sentence_id}, {"text", s.text}, {"mentions", mentions}});
        }
        docs.push_back({{"doc_id", d.doc_id}, {"title", d.title}, {"sentences", sents}});
    }
    return {{"schema_version", kSchemaVersion}, {"documents", docs}};
}

CorpusStore CorpusStore::from_json(const json& j) {
    if (j.value("schema_version", 0) != kSchemaVersion)
        throw Error(ErrorCode::Parse, "corpus store: unsupported schema_version");
    CorpusStore store;
    for (const auto& jd : j.at("documents")) {
        Document doc{jd.at("doc_id").get<std::string>(), jd.value("title", std::string{}), {}};
        if (store.doc_index_.count(doc.doc_id))
            throw Error(ErrorCode::DuplicateDocument, fmt::format("duplicate doc_id '{}'", doc.doc_id));
        std::size_t ordinal = 0;
        for (const auto& js : jd.at("sentences")) {
            Sentence s;
            s.sentence_id = js.at("sentence_id").get<std::string>();
            s.doc_id = doc.doc_id;
            s.ordinal = ordinal++;
            s.text = js.at("text").get<std::string>();
            for (const auto& jm : js.at("mentions")) {
                EntityMention m{jm.at("entity_id").get<std::string>(), jm.at("surface").get<std::string>(),
                                jm.at("start").get<std::size_t>(), jm.at("end").get<std::size_t>()};
                if (m.end > s.text.size() || m.start >= m.end ||
                    s.text.compare(m.start, m.end - m.start, m.surface) != 0)
                    throw Error(ErrorCode::Parse,
                                fmt::format("mention '{}' does not match its span in {}", m.surface, s.sentence_id));
                s.mentions.push_back(std::move(m));
            }
            doc.sentences.push_back(s.sentence_id);
            store.sentences_.push_back(std::move(s));
            store.index_sentence(store.sentences_.size() - 1);
        }
        store.doc_index_.emplace(doc.doc_id, store.documents_.size());
        store.documents_.push_back(std::move(doc));
    }
    return store;
}

void CorpusStore::save(const std::filesystem::path& path) const { write_file(path, to_json().dump(1) + "\n"); }

CorpusStore CorpusStore::load(const std::filesystem::path& path) {
    try {
        return from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Parse, fmt::format("{}: {}", path.string(), e.what()));
    }
}

CorpusStore ingest_corpus(const std::filesystem::path& path, CorpusFormat format) {
    if (format != CorpusFormat::JsonLines) throw Error(ErrorCode::InvalidArgument, "unsupported corpus format");
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open corpus {}", path.string()));
    CorpusStore store;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
            if (!j.is_object() || !j.contains("doc_id") || !j.at("doc_id").is_string() || !j.contains("text") ||
                !j.at("text").is_string())
                throw Error(ErrorCode::Parse, "expected object with string fields doc_id and text");
            store.add_document(j.at("doc_id").get<std::string>(), j.value("title", std::string{}),
                               j.at("text").get<std::string>());
        } catch (const json::exception& e) {
            throw Error(ErrorCode::Parse, fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        } catch (const Error& e) {
            throw Error(e.code(), fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    return store;
}

// ---- mention annotation ----------------------------------------------------

MentionMatcher::MentionMatcher(const EntityCatalog& catalog) {
    nodes_.emplace_back();
    auto insert = [&](const std::string& surface, int entity, bool canonical) {
        const std::string key = to_lower_ascii(trim(surface));
        if (key.empty()) return;
        std::uint32_t node = 0;
        for (unsigned char c : key) {
            std::uint32_t next = child(node, c);
            if (next == 0) {
                next = static_cast<std::uint32_t>(nodes_.size());
                nodes_.emplace_back();
                auto& kids = nodes_[node].children;
                kids.insert(std::lower_bound(kids.begin(), kids.end(), std::make_pair(c, 0u)),
                            std::make_pair(c, next));
            }
            node = next;
        }
        if (nodes_[node].entity < 0 || canonical) nodes_[node].entity = entity;
    };
    const auto& entities = catalog.entities();
    for (std::size_t i = 0; i < entities.size(); ++i) ids_.push_back(entities[i].entity_id);
    for (std::size_t i = 0; i < entities.size(); ++i)
        for (const auto& alias : entities[i].aliases) insert(alias, static_cast<int>(i), false);
    for (std::size_t i = 0; i < entities.size(); ++i) insert(entities[i].name, static_cast<int>(i), true);
}

std::uint32_t MentionMatcher::child(std::uint32_t node, unsigned char c) const {
    const auto& kids = nodes_[node].children;
    auto it = std::lower_bound(kids.begin(), kids.end(), std::make_pair(c, 0u),
                               [](const auto& a, const auto& b) { return a.first < b.first; });
    return (it != kids.end() && it->first == c) ? it->second : 0;
}

std::vector<EntityMention> MentionMatcher::match(std::string_view text) const {
    struct Candidate {
        std::size_t start, end;
        int entity;
    };
    const std::size_t n = text.size();
    auto word = [&](std::size_t i) { return is_word_byte(static_cast<unsigned char>(text[i])); };
    std::vector<Candidate> found;
    for (std::size_t s = 0; s < n; ++s) {
        if (s > 0 && word(s - 1) && word(s)) continue;
        std::uint32_t node = 0;
        for (std::size_t e = s; e < n; ++e) {
            node = child(node, static_cast<unsigned char>(std::tolower(static_cast<unsigned char>(text[e]))));
            if (node == 0) break;
            const std::size_t end = e + 1;
            if (nodes_[node].entity >= 0 && (end == n || !word(end) || !word(e)))
                found.push_back({s, end, nodes_[node].entity});
        }
    }
    std::sort(found.begin(), found.end(), [](const Candidate& a, const Candidate& b) {
        const auto la = a.end - a.start, lb = b.end - b.start;
        return la != lb ? la > lb : a.start < b.start;
    });
    std::vector<Candidate> kept;
    for (const auto& c : found) {
        bool overlaps = std::any_of(kept.begin(), kept.end(),
                                    [&](const Candidate& k) { return c.start < k.end && k.start < c.end; });
        if (!overlaps) kept.push_back(c);
    }
    std::sort(kept.begin(), kept.end(), [](const Candidate& a, const Candidate& b) { return a.start < b.start; });
    std::vector<EntityMention> out;
    out.reserve(kept.size());
    for (const auto& c : kept)
        out.push_back({ids_[static_cast<std::size_t>(c.entity)], std::string(text.substr(c.start, c.end - c.start)),
                       c.start, c.end});
    return out;
}

CorpusStore annotate_mentions(CorpusStore store, const EntityCatalog& catalog) {
    const MentionMatcher matcher(catalog);
    auto& sentences = store.mutable_sentences();
    parallel_for(sentences.size(), std::max(1u, std::thread::hardware_concurrency()),
                 [&](std::size_t i) { sentences[i].mentions = matcher.match(sentences[i].text); });
    return store;
}

} // namespace relink
