#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "relink/entity.hpp"

namespace relink {

struct EntityMention {
    std::string entity_id;
    std::string surface;
    std::size_t start = 0;  // byte offsets into Sentence::text
    std::size_t end = 0;

    bool operator==(const EntityMention&) const = default;
};

struct Sentence {
    std::string sentence_id;  // "<doc_id>#<ordinal>"
    std::string doc_id;
    std::size_t ordinal = 0;
    std::string text;
    std::vector<EntityMention> mentions;

    bool mentions_entity(std::string_view entity_id) const;

    bool operator==(const Sentence&) const = default;
};

struct Document {
    std::string doc_id;
    std::string title;
    std::vector<std::string> sentences;

    bool operator==(const Document&) const = default;
};

enum class CorpusFormat { JsonLines };

class CorpusStore {
public:
    static constexpr int kSchemaVersion = 1;

    /// Segments `text` and appends the document. Throws DuplicateDocument or
    /// InvalidDocument (no sentence content).
    void add_document(const std::string& doc_id, const std::string& title, std::string_view text);

    const std::vector<Document>& documents() const { return documents_; }
    /// All sentences in corpus order (document order, then ordinal).
    const std::vector<Sentence>& sentences() const { return sentences_; }
    std::vector<Sentence>& mutable_sentences() { return sentences_; }

    const Sentence& sentence(std::string_view sentence_id) const;
    const Sentence* find_sentence(std::string_view sentence_id) const;

    nlohmann::json to_json() const;
    static CorpusStore from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static CorpusStore load(const std::filesystem::path& path);

    bool operator==(const CorpusStore& other) const {
        return documents_ == other.documents_ && sentences_ == other.sentences_;
    }

private:
    void index_sentence(std::size_t pos);

    std::vector<Document> documents_;
    std::vector<Sentence> sentences_;
    std::unordered_map<std::string, std::size_t> doc_index_;
    std::unordered_map<std::string, std::size_t> sentence_index_;
};

/// Rule-based splitter on terminal punctuation with an abbreviation whitelist.
/// Returns [start, end) byte spans with surrounding whitespace trimmed.
std::vector<std::pair<std::size_t, std::size_t>> segment_sentences(std::string_view text);

CorpusStore ingest_corpus(const std::filesystem::path& path, CorpusFormat format = CorpusFormat::JsonLines);

/// Dictionary mention detection: maximal, case-insensitive, whole-token matches
/// of names and aliases. Overlaps resolve longest first, then earliest start.
CorpusStore annotate_mentions(CorpusStore store, const EntityCatalog& catalog);

/// Reusable matcher behind annotate_mentions (a byte trie over lowercased
/// names and aliases).
class MentionMatcher {
public:
    explicit MentionMatcher(const EntityCatalog& catalog);

    std::vector<EntityMention> match(std::string_view text) const;

private:
    struct Node {
        std::vector<std::pair<unsigned char, std::uint32_t>> children;  // sorted by byte
        int entity = -1;
    };
    std::uint32_t child(std::uint32_t node, unsigned char c) const;

    std::vector<Node> nodes_;
    std::vector<std::string> ids_;
};

} // namespace relink
