#include "relink/generation.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "relink/error.hpp"
#include "relink/llm_gateway.hpp"
#include "relink/prompts.hpp"

namespace relink {

std::string render_evidence(const EvidenceGraph& ev, const EntityCatalog& catalog) {
    std::string out;
    for (const auto& t : ev.triples) {
        auto it = ev.source_sentences.find(t.provenance);
        if (it == ev.source_sentences.end())
            throw Error(ErrorCode::MissingArtifact, fmt::format("triple {} has no source sentence", t.triple_id));
        if (!out.empty()) out += '\n';
        out += fmt::format("{} — {} — {} [source: {}]", catalog.name_of(t.head), t.predicate,
                           catalog.name_of(t.tail), it->second);
    }
    return out;
}

std::string build_generation_prompt(const std::string& question, const EvidenceGraph& ev,
                                    const EntityCatalog& catalog, const PromptLibrary& prompts) {
    if (ev.empty()) return prompts.render(PromptLibrary::kGenerateFallback, {{"question", question}});
    return prompts.render(PromptLibrary::kGenerate,
                          {{"evidence", render_evidence(ev, catalog)}, {"question", question}});
}

AnswerRecord generate_answer(const QueryRecord& query, const EvidenceGraph& ev, const EntityCatalog& catalog,
                             LlmGateway& gateway, const PromptLibrary& prompts) {
    AnswerRecord rec;
    rec.query_id = query.query_id;
    rec.evidence = ev;
    rec.fallback_used = ev.empty();
    const std::string prompt = build_generation_prompt(query.text, ev, catalog, prompts);
    try {
        rec.raw_reply = gateway.chat(prompt);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ReplayMiss) throw;
        rec.error = e.what();
        return rec;
    }
    rec.answer = extract_answer_string(rec.raw_reply, query.text, gateway, prompts);
    return rec;
}

std::string extract_answer_string(const std::string& raw_reply, const std::string& question, LlmGateway& gateway,
                                  const PromptLibrary& prompts) {
    const std::string fallback = trim(raw_reply);
    if (fallback.empty()) return fallback;
    try {
        std::string span =
            trim(gateway.chat(prompts.render(PromptLibrary::kExtractAnswer, {{"question", question}, {"reply", fallback}})));
        return span.empty() ? fallback : span;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ReplayMiss) throw;
        spdlog::warn("answer extraction failed: {}", e.what());
        return fallback;
    }
}

} // namespace relink
