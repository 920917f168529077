#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace relink {

/// Plain-text prompt templates with {{name}} placeholders. Built-in defaults
/// can be overridden per file from a template directory (<name>.txt).
class PromptLibrary {
public:
    static constexpr std::string_view kExtract = "extract";
    static constexpr std::string_view kTopic = "topic";
    static constexpr std::string_view kRerank = "rerank";
    static constexpr std::string_view kInstantiate = "instantiate";
    static constexpr std::string_view kComplete = "complete";
    static constexpr std::string_view kGenerate = "generate";
    static constexpr std::string_view kGenerateFallback = "generate_fallback";
    static constexpr std::string_view kExtractAnswer = "extract_answer";

    PromptLibrary();
    static PromptLibrary from_directory(const std::filesystem::path& dir);

    const std::string& text(std::string_view name) const;
    const std::map<std::string, std::string, std::less<>>& templates() const { return templates_; }

    /// Substitutes every {{key}}. Unknown templates, unfilled placeholders and
    /// unused values are errors.
    std::string render(std::string_view name, const std::map<std::string, std::string>& values) const;

private:
    std::map<std::string, std::string, std::less<>> templates_;
};

} // namespace relink
