#pragma once

#include <atomic>
#include <memory>
#include <vector>

#include "planted.hpp"
#include "relink/llm_gateway.hpp"
#include "relink/random.hpp"
#include "relink/ranker.hpp"

namespace fixtures {

inline relink::Vec gaussian(relink::Rng& rng, int n) {
    relink::Vec v(n);
    for (int k = 0; k < n; ++k) v[k] = rng.normal();
    return v;
}

/// Preferences separable by the query-edge dot product: P+ is the query plus
/// a little noise, P- an independent direction.
inline std::vector<relink::PreferenceExample> separable_preferences(int n, int dim, std::uint64_t seed) {
    relink::Rng rng(seed);
    std::vector<relink::PreferenceExample> out;
    for (int i = 0; i < n; ++i) {
        relink::PreferenceExample ex;
        ex.query_raw = gaussian(rng, dim);
        ex.positive = {relink::SourceKind::Explicit, ex.query_raw + 0.3 * gaussian(rng, dim)};
        ex.negative = {i % 3 == 0 ? relink::SourceKind::Latent : relink::SourceKind::Explicit, gaussian(rng, dim)};
        ex.prefix_score = rng.uniform();
        out.push_back(std::move(ex));
    }
    return out;
}

/// Raw embedding pairs whose latent side is a noisy copy of the factual side.
inline std::vector<relink::AlignmentPair> noisy_alignment_pairs(int n, int dim, std::uint64_t seed) {
    relink::Rng rng(seed);
    std::vector<relink::AlignmentPair> out;
    for (int i = 0; i < n; ++i) {
        relink::Vec f = gaussian(rng, dim);
        out.push_back({f, f + 0.5 * gaussian(rng, dim)});
    }
    return out;
}

/// Mock gateway whose chat replies come from `fn`; `calls` counts them.
inline std::unique_ptr<relink::LlmGateway> scripted_gateway(relink::ChatFn fn, std::atomic<int>* calls = nullptr,
                                                            int embed_dim = 16) {
    auto cfg = planted::mock_gateway_config(embed_dim);
    auto counted = [fn = std::move(fn), calls](const relink::ChatRequest& r) {
        if (calls) ++*calls;
        return fn(r);
    };
    return std::make_unique<relink::LlmGateway>(cfg, std::make_unique<relink::MockBackend>(cfg.mock, counted));
}

/// Text between `open` and the end of that line.
inline std::string line_after(const std::string& text, const std::string& open) {
    const auto b = text.find(open);
    if (b == std::string::npos) return {};
    const auto start = b + open.size();
    const auto e = text.find('\n', start);
    return text.substr(start, e == std::string::npos ? std::string::npos : e - start);
}

} // namespace fixtures
