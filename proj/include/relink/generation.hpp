#pragma once

#include <string>

#include "relink/path.hpp"

namespace relink {

class LlmGateway;
class PromptLibrary;

struct AnswerRecord {
    std::string query_id;
    std::string raw_reply;
    std::string answer;
    EvidenceGraph evidence;
    bool fallback_used = false;
    std::string error;  // set when the gateway failed
};

/// One line per triple: head, predicate and tail joined by U+2014 separators,
/// then "[source: <sentence text>]".
std::string render_evidence(const EvidenceGraph& ev, const EntityCatalog& catalog);

/// The exact prompt generate_answer sends; closed-book when `ev` is empty.
std::string build_generation_prompt(const std::string& question, const EvidenceGraph& ev,
                                    const EntityCatalog& catalog, const PromptLibrary& prompts);

AnswerRecord generate_answer(const QueryRecord& query, const EvidenceGraph& ev, const EntityCatalog& catalog,
                             LlmGateway& gateway, const PromptLibrary& prompts);

/// Minimal answer span via the gateway; falls back to the trimmed reply.
std::string extract_answer_string(const std::string& raw_reply, const std::string& question, LlmGateway& gateway,
                                  const PromptLibrary& prompts);

} // namespace relink
