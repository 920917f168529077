#include "relink/prompts.hpp"

#include <spdlog/fmt/fmt.h>

#include "relink/error.hpp"
#include "relink/util.hpp"

namespace relink {

namespace {

constexpr std::string_view kDefaultExtract =
    R"(Extract factual relations between entities mentioned in the sentence.
Use only these entities: {{entities}}
Sentence: {{sentence}}
Reply with a JSON array of objects {"h": "<entity>", "p": "<relation>", "t": "<entity>"}. Reply [] if the sentence states no relation between them.
)";

constexpr std::string_view kDefaultTopic =
    R"(List the named entities that the question is about, one per line, with no other text.
Question: {{question}}
)";

constexpr std::string_view kDefaultRerank =
    R"(You are judging one step of a reasoning path built to answer a question.
Question: {{question}}
Path so far:
{{path}}
Candidate step: from {{from}} to {{to}}
{{candidate}}
How much does this step contribute to answering the question? Reply with a single integer from 0 (irrelevant) to 10 (essential).
)";

constexpr std::string_view kDefaultInstantiate =
    R"(Two entities co-occur in a source sentence but no relation between them has been recorded.
Entity A: {{entity_a}}
Entity B: {{entity_b}}
Sentence: {{sentence}}
Question: {{question}}
State the relation between A and B that the sentence supports and that is most useful for the question. Reply with JSON {"h": "<entity>", "p": "<relation>", "t": "<entity>"} where h and t are A and B in either order.
)";

constexpr std::string_view kDefaultComplete =
    R"(Question: {{question}}
Reasoning path:
{{path}}
Current entity: {{frontier}}
Does this path contain enough information to answer the question? Reply yes or no.
)";

constexpr std::string_view kDefaultGenerate =
    R"(Answer the question using the evidence below. Each fact is followed by the sentence it was taken from.
Evidence:
{{evidence}}
Question: {{question}}
Answer:
)";

constexpr std::string_view kDefaultGenerateFallback =
    R"(Answer the question.
Question: {{question}}
Answer:
)";

constexpr std::string_view kDefaultExtractAnswer =
    R"(Extract the minimal answer span from the response below. Reply with the answer only.
Question: {{question}}
Response: {{reply}}
)";

} // namespace

PromptLibrary::PromptLibrary() {
    templates_.emplace(kExtract, kDefaultExtract);
    templates_.emplace(kTopic, kDefaultTopic);
    templates_.emplace(kRerank, kDefaultRerank);
    templates_.emplace(kInstantiate, kDefaultInstantiate);
    templates_.emplace(kComplete, kDefaultComplete);
    templates_.emplace(kGenerate, kDefaultGenerate);
    templates_.emplace(kGenerateFallback, kDefaultGenerateFallback);
    templates_.emplace(kExtractAnswer, kDefaultExtractAnswer);
}

PromptLibrary PromptLibrary::from_directory(const std::filesystem::path& dir) {
    PromptLibrary lib;
    for (auto& [name, text] : lib.templates_) {
        const auto file = dir / (name + ".txt");
        if (std::filesystem::exists(file)) text = read_file(file);
    }
    return lib;
}

const std::string& PromptLibrary::text(std::string_view name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw Error(ErrorCode::InvalidArgument, fmt::format("no prompt template '{}'", name));
    return it->second;
}

std::string PromptLibrary::render(std::string_view name, const std::map<std::string, std::string>& values) const {
    const std::string& tpl = text(name);
    std::string out;
    std::map<std::string, bool> used;
    std::size_t pos = 0;
    while (pos < tpl.size()) {
        const auto open = tpl.find("{{", pos);
        if (open == std::string::npos) {
            out.append(tpl, pos);
            break;
        }
        const auto close = tpl.find("}}", open + 2);
        if (close == std::string::npos) throw Error(ErrorCode::Parse, fmt::format("template '{}': unclosed placeholder", name));
        out.append(tpl, pos, open - pos);
        const std::string key = tpl.substr(open + 2, close - open - 2);
        auto it = values.find(key);
        if (it == values.end())
            throw Error(ErrorCode::InvalidArgument, fmt::format("template '{}': no value for '{}'", name, key));
        out += it->second;
        used[key] = true;
        pos = close + 2;
    }
    for (const auto& [key, _] : values)
        if (!used.count(key))
            throw Error(ErrorCode::InvalidArgument, fmt::format("template '{}' has no placeholder '{}'", name, key));
    return out;
}

} // namespace relink
