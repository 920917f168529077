#include "relink/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "relink/error.hpp"
#include "relink/generation.hpp"
#include "relink/llm_gateway.hpp"
#include "relink/random.hpp"

namespace relink {

using nlohmann::json;

// ---- metrics ---------------------------------------------------------------

namespace {

bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

std::vector<std::string> tokens(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in{std::string(s)};
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

} // namespace

std::string normalize_answer(std::string_view s) {
    std::string lowered = to_lower_ascii(s);
    std::string stripped;
    for (char ch : lowered)
        if (!is_ascii_punct(static_cast<unsigned char>(ch))) stripped += ch;
    std::string out;
    for (const auto& w : tokens(stripped)) {
        if (w == "a" || w == "an" || w == "the") continue;
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

int exact_match(std::string_view pred, std::string_view gold) {
    return normalize_answer(pred) == normalize_answer(gold) ? 1 : 0;
}

double token_f1(std::string_view pred, std::string_view gold) {
    const auto p = tokens(normalize_answer(pred));
    const auto g = tokens(normalize_answer(gold));
    if (p.empty() && g.empty()) return 1.0;
    if (p.empty() || g.empty()) return 0.0;
    std::map<std::string, int> counts;
    for (const auto& t : g) ++counts[t];
    int common = 0;
    for (const auto& t : p) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    if (common == 0) return 0.0;
    const double precision = static_cast<double>(common) / static_cast<double>(p.size());
    const double recall = static_cast<double>(common) / static_cast<double>(g.size());
    return 2.0 * precision * recall / (precision + recall);
}

// ---- variants --------------------------------------------------------------

std::string_view to_string(Variant v) {
    switch (v) {
    case Variant::Full: return "full";
    case Variant::WoBackbone: return "wo_backbone";
    case Variant::WoPool: return "wo_pool";
    case Variant::WoRanker: return "wo_ranker";
    case Variant::WoContra: return "wo_contra";
    }
    return "unknown";
}

Variant parse_variant(std::string_view name) {
    for (Variant v : all_variants())
        if (to_string(v) == name) return v;
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("unknown variant '{}' (expected full, wo_backbone, wo_pool, wo_ranker or wo_contra)", name));
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v{Variant::Full, Variant::WoBackbone, Variant::WoPool, Variant::WoRanker,
                                        Variant::WoContra};
    return v;
}

// ---- dataset ---------------------------------------------------------------

std::vector<QueryRecord> load_dataset(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::vector<QueryRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            const json j = json::parse(line);
            QueryRecord q;
            q.query_id = j.at("query_id").get<std::string>();
            q.text = j.at("question").get<std::string>();
            if (j.contains("answer") && !j["answer"].is_null()) q.gold_answer = j["answer"].get<std::string>();
            if (j.contains("topic_entities")) q.topic_entities = j["topic_entities"].get<std::vector<std::string>>();
            if (j.contains("supporting"))
                for (const auto& h : j["supporting"])
                    q.supporting.push_back({h.at("from").get<std::string>(), h.at("to").get<std::string>(),
                                            h.value("predicate", std::string()), h.value("sentence_id", std::string())});
            if (q.query_id.empty()) throw Error(ErrorCode::Parse, "empty query_id");
            out.push_back(std::move(q));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::Parse, fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        } catch (const Error& e) {
            throw Error(e.code(), fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    return out;
}

// ---- running ---------------------------------------------------------------

QuestionResult answer_question(const QueryRecord& q, const PipelineResources& res, Variant variant,
                               TraceSink* trace) {
    QuestionResult r;
    r.query_id = q.query_id;
    try {
        ExploreContext ctx;
        ctx.sources.catalog = res.catalog;
        ctx.sources.store = res.store;
        ctx.sources.backbone = variant == Variant::WoBackbone ? nullptr : res.backbone;
        ctx.sources.pool = variant == Variant::WoPool ? nullptr : res.pool;
        ctx.sources.counters = res.counters;
        ctx.models.ranker = variant == Variant::WoRanker ? nullptr : res.ranker;
        ctx.models.adapter = res.adapter;
        if (variant == Variant::WoContra) {
            ctx.models.ranker = res.ranker_nocontra;
            ctx.models.adapter = res.adapter_nocontra;
        }
        if (!ctx.models.adapter || (variant != Variant::WoRanker && !ctx.models.ranker))
            throw Error(ErrorCode::MissingArtifact,
                        fmt::format("variant {} needs trained checkpoints (run `relink train`)", to_string(variant)));
        InstantiatedOverlay overlay;
        Instantiator instantiator;
        ctx.gateway = res.gateway;
        ctx.prompts = res.prompts;
        ctx.overlay = &overlay;
        ctx.instantiator = &instantiator;
        ctx.trace = trace;
        const EvidenceGraph ev = explore(q, ctx, res.explore);
        const AnswerRecord ans = generate_answer(q, ev, *res.catalog, *res.gateway, *res.prompts);
        r.fallback_used = ans.fallback_used;
        r.answer = ans.answer;
        r.error = ans.error;
    } catch (const Error& e) {
        r.error = fmt::format("{}: {}", to_string(e.code()), e.what());
    } catch (const std::exception& e) {
        r.error = e.what();
    }
    if (r.error.empty() && q.gold_answer) {
        r.em = exact_match(r.answer, *q.gold_answer);
        r.f1 = token_f1(r.answer, *q.gold_answer);
    }
    return r;
}

EvalResult run_eval(const std::string& dataset_name, const std::vector<QueryRecord>& records,
                    const PipelineResources& res, Variant variant, double keep_fraction, const EvalOptions& options) {
    if (records.empty()) throw Error(ErrorCode::EmptyDataset, fmt::format("dataset '{}' has no questions", dataset_name));
    std::vector<std::size_t> idx(records.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (options.sample_size > 0 && static_cast<std::size_t>(options.sample_size) < records.size()) {
        Rng rng(derive_seed(options.seed, 0x5a3d));
        rng.shuffle(idx);
        idx.resize(static_cast<std::size_t>(options.sample_size));
    }

    std::ofstream trace_file;
    std::unique_ptr<TraceSink> trace;
    if (!options.trace_path.empty()) {
        trace_file.open(options.trace_path, std::ios::app);
        trace = std::make_unique<TraceSink>(trace_file);
    }

    EvalResult out;
    out.dataset = dataset_name;
    out.variant = std::string(to_string(variant));
    out.keep_fraction = keep_fraction;
    out.per_question.resize(idx.size());
    parallel_for(idx.size(), static_cast<std::size_t>(std::max(1, options.workers)), [&](std::size_t i) {
        out.per_question[i] = answer_question(records[idx[i]], res, variant, trace.get());
        if (!out.per_question[i].error.empty())
            spdlog::warn("question {} failed: {}", out.per_question[i].query_id, out.per_question[i].error);
    });
    std::sort(out.per_question.begin(), out.per_question.end(),
              [](const QuestionResult& a, const QuestionResult& b) { return a.query_id < b.query_id; });
    double em = 0.0, f1 = 0.0;
    for (const auto& q : out.per_question) {
        em += q.em;
        f1 += q.f1;
    }
    out.em = em / static_cast<double>(out.per_question.size());
    out.f1 = f1 / static_cast<double>(out.per_question.size());
    return out;
}

std::vector<EvalResult> sparsity_sweep(const std::string& dataset_name, const std::vector<QueryRecord>& records,
                                       const PipelineResources& res, const std::vector<double>& fractions,
                                       const EvalOptions& options) {
    if (!res.backbone) throw Error(ErrorCode::MissingArtifact, "sparsity sweep needs a backbone graph");
    std::vector<EvalResult> out;
    for (double f : fractions) {
        if (!(f >= 0.0 && f <= 1.0))
            throw Error(ErrorCode::InvalidArgument, fmt::format("keep fraction {} outside [0, 1]", f));
        const GraphBackbone masked = apply_edge_mask(*res.backbone, f, options.seed);
        PipelineResources r = res;
        r.backbone = &masked;
        for (Variant v : {Variant::Full, Variant::WoPool}) out.push_back(run_eval(dataset_name, records, r, v, f, options));
    }
    return out;
}

// ---- output ----------------------------------------------------------------

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

} // namespace

std::string per_question_csv(const EvalResult& r, const std::string& config_hash, std::uint64_t seed) {
    std::string out = "config_hash,seed,dataset,variant,keep_fraction,query_id,em,f1,fallback_used,answer,error\n";
    for (const auto& q : r.per_question)
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", config_hash, seed, csv_field(r.dataset), r.variant,
                           format_fixed(r.keep_fraction, 4), csv_field(q.query_id), q.em, format_fixed(q.f1),
                           q.fallback_used ? 1 : 0, csv_field(q.answer), csv_field(q.error));
    return out;
}

std::string summary_json(const std::vector<EvalResult>& results, const std::string& config_hash, std::uint64_t seed) {
    json rows = json::array();
    for (const auto& r : results) {
        std::size_t fallback = 0, errors = 0;
        for (const auto& q : r.per_question) {
            fallback += q.fallback_used ? 1 : 0;
            errors += q.error.empty() ? 0 : 1;
        }
        rows.push_back({{"dataset", r.dataset},
                        {"variant", r.variant},
                        {"keep_fraction", format_fixed(r.keep_fraction, 4)},
                        {"questions", r.per_question.size()},
                        {"em", format_fixed(r.em)},
                        {"f1", format_fixed(r.f1)},
                        {"fallback_used", fallback},
                        {"errors", errors}});
    }
    json j = {{"config_hash", config_hash}, {"seed", seed}, {"results", rows}};
    return j.dump(2) + "\n";
}

std::string curve_csv(const std::vector<EvalResult>& results, const std::string& config_hash, std::uint64_t seed) {
    std::string out = "config_hash,seed,dataset,keep_fraction,variant,em,f1\n";
    for (const auto& r : results)
        out += fmt::format("{},{},{},{},{},{},{}\n", config_hash, seed, csv_field(r.dataset), format_fixed(r.keep_fraction, 4),
                           r.variant, format_fixed(r.em), format_fixed(r.f1));
    return out;
}

} // namespace relink
