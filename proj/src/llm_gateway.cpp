#include "relink/llm_gateway.hpp"

#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "relink/random.hpp"

namespace relink {

using nlohmann::json;

TranscriptMode parse_transcript_mode(std::string_view s) {
    if (s == "off") return TranscriptMode::Off;
    if (s == "record") return TranscriptMode::Record;
    if (s == "replay") return TranscriptMode::Replay;
    throw Error(ErrorCode::Config, fmt::format("unknown transcript mode '{}'", s));
}

std::string_view to_string(TranscriptMode mode) {
    switch (mode) {
        case TranscriptMode::Off: return "off";
        case TranscriptMode::Record: return "record";
        case TranscriptMode::Replay: return "replay";
    }
    return "off";
}

// ---- HTTP ------------------------------------------------------------------

HttpBackend::HttpBackend(GatewayConfig config) : config_(std::move(config)) {
    const std::string& url = config_.base_url;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error(ErrorCode::Config, fmt::format("bad base_url '{}'", url));
    const auto path_start = url.find('/', scheme_end + 3);
    scheme_host_port_ = url.substr(0, path_start);
    path_prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

json HttpBackend::post(const std::string& endpoint, const json& body) {
    httplib::Client client(scheme_host_port_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout).count();
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout).count() % 1000000;
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!config_.api_key_env.empty()) {
        if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    auto res = client.Post(path_prefix_ + endpoint, headers, body.dump(), "application/json");
    if (!res) throw TransientGatewayError(fmt::format("POST {}: {}", endpoint, httplib::to_string(res.error())));
    if (res->status == 429 || res->status >= 500)
        throw TransientGatewayError(fmt::format("POST {}: HTTP {}", endpoint, res->status));
    if (res->status != 200)
        throw Error(ErrorCode::Gateway, fmt::format("POST {}: HTTP {}: {}", endpoint, res->status, res->body));
    try {
        return json::parse(res->body);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Gateway, fmt::format("POST {}: malformed JSON: {}", endpoint, e.what()));
    }
}

std::string HttpBackend::chat(const ChatRequest& request) {
    json body = {{"model", request.model},
                 {"messages", json::array({{{"role", "user"}, {"content", request.prompt}}})},
                 {"temperature", request.params.temperature},
                 {"max_tokens", request.params.max_tokens}};
    json reply = post("/chat/completions", body);
    try {
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Gateway, fmt::format("chat reply missing content: {}", e.what()));
    }
}

std::vector<Vec> HttpBackend::embed(const EmbedRequest& request) {
    json reply = post("/embeddings", {{"model", request.model}, {"input", request.texts}});
    std::vector<Vec> out(request.texts.size());
    try {
        for (const auto& item : reply.at("data")) {
            const auto index = item.value("index", std::size_t{0});
            if (index >= out.size()) throw Error(ErrorCode::Gateway, "embedding index out of range");
            out[index] = from_std(item.at("embedding").get<std::vector<double>>());
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Gateway, fmt::format("embedding reply malformed: {}", e.what()));
    }
    for (const auto& v : out)
        if (v.size() == 0) throw Error(ErrorCode::Gateway, "embedding reply is missing rows");
    return out;
}

// ---- mock ------------------------------------------------------------------

Vec HashEmbedder::embed(std::string_view text, bool mask_position_mode) const {
    const std::uint64_t family = mask_position_mode ? derive_seed(seed_, 0x6d61736b) : seed_;
    Vec v = Vec::Zero(dim_);
    auto add_gaussian = [&](std::uint64_t key, double weight) {
        Rng rng(derive_seed(family, key));
        for (int i = 0; i < dim_; ++i) v[i] += weight * rng.normal();
    };
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && !is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) add_gaussian(fnv1a64(to_lower_ascii(text.substr(i, j - i))), 1.0);
        i = j;
    }
    add_gaussian(fnv1a64(text, 0x84222325cbf29ce4ULL), 0.25);
    return v / v.norm();
}

MockBackend::MockBackend(MockConfig config)
    : config_(std::move(config)), embedder_(config_.embed_dim, config_.seed) {}

MockBackend::MockBackend(MockConfig config, ChatFn chat_fn)
    : config_(std::move(config)), chat_fn_(std::move(chat_fn)), embedder_(config_.embed_dim, config_.seed) {}

std::string MockBackend::chat(const ChatRequest& request) {
    if (chat_fn_) return chat_fn_(request);
    for (const auto& rule : config_.rules)
        if (request.prompt.find(rule.contains) != std::string::npos) return rule.reply;
    return config_.default_reply;
}

std::vector<Vec> MockBackend::embed(const EmbedRequest& request) {
    std::vector<Vec> out;
    out.reserve(request.texts.size());
    for (const auto& t : request.texts) out.push_back(embedder_.embed(t, request.mask_position_mode));
    return out;
}

std::unique_ptr<Backend> make_backend(const GatewayConfig& config) {
    if (config.backend == "mock") return std::make_unique<MockBackend>(config.mock);
    if (config.backend == "http") return std::make_unique<HttpBackend>(config);
    throw Error(ErrorCode::Config, fmt::format("unknown gateway backend '{}'", config.backend));
}

// ---- transcript ------------------------------------------------------------

Transcript Transcript::load(const std::filesystem::path& path) {
    Transcript t;
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open transcript {}", path.string()));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            json j = json::parse(line);
            t.entries_[j.at("hash").get<std::string>()] = {j.at("request"), j.at("response")};
        } catch (const json::exception& e) {
            throw Error(ErrorCode::Parse, fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    return t;
}

void Transcript::save(const std::filesystem::path& path) const {
    std::lock_guard lock(mutex_);
    std::string out;
    for (const auto& [hash, entry] : entries_)
        out += json{{"hash", hash}, {"request", entry.first}, {"response", entry.second}}.dump() + "\n";
    write_file(path, out);
}

std::optional<json> Transcript::lookup(const std::string& hash) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(hash);
    std::optional<json> out;
    if (it != entries_.end()) out.emplace(it->second.second);
    return out;
}

void Transcript::record(const std::string& hash, const json& request, const json& response) {
    std::lock_guard lock(mutex_);
    entries_[hash] = {request, response};
}

std::size_t Transcript::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

// ---- gateway ---------------------------------------------------------------

LlmGateway::LlmGateway(GatewayConfig config, std::unique_ptr<Backend> backend)
    : config_(std::move(config)), backend_(std::move(backend)),
      slots_(std::clamp(config_.max_in_flight, 1, 1024)) {
    if (config_.max_retries < 0) throw Error(ErrorCode::Config, "max_retries must be >= 0");
    if (config_.max_in_flight < 1) throw Error(ErrorCode::Config, "max_in_flight must be >= 1");
    if (config_.transcript_mode == TranscriptMode::Replay) {
        if (config_.transcript_path.empty()) throw Error(ErrorCode::Config, "replay mode requires a transcript path");
        transcript_ = Transcript::load(config_.transcript_path);
    } else if (config_.transcript_mode == TranscriptMode::Record) {
        if (config_.transcript_path.empty()) throw Error(ErrorCode::Config, "record mode requires a transcript path");
        if (std::filesystem::exists(config_.transcript_path))
            transcript_ = Transcript::load(config_.transcript_path);
    }
    if (!backend_ && config_.transcript_mode != TranscriptMode::Replay)
        throw Error(ErrorCode::Config, "a backend is required unless replaying a transcript");
}

LlmGateway::~LlmGateway() {
    try {
        flush_transcript();
    } catch (const std::exception& e) {
        spdlog::error("failed to flush transcript: {}", e.what());
    }
}

void LlmGateway::flush_transcript() {
    if (config_.transcript_mode == TranscriptMode::Record) transcript_.save(config_.transcript_path);
}

GatewayStats LlmGateway::stats() const {
    return {chat_calls_.load(), embed_calls_.load(), backend_calls_.load(),
            retries_.load(),    replay_hits_.load(), peak_in_flight_.load()};
}

json LlmGateway::call(const json& request, const std::function<json()>& live, bool record) {
    const std::string hash = sha256_hex(request.dump());
    if (config_.transcript_mode == TranscriptMode::Replay) {
        if (auto hit = transcript_.lookup(hash)) {
            ++replay_hits_;
            return *hit;
        }
        throw Error(ErrorCode::ReplayMiss, fmt::format("transcript has no entry for request {}", hash));
    }
    for (int attempt = 0;; ++attempt) {
        try {
            slots_.acquire();
            const long now = ++in_flight_;
            long peak = peak_in_flight_.load();
            while (now > peak && !peak_in_flight_.compare_exchange_weak(peak, now)) {
            }
            ++backend_calls_;
            json response;
            try {
                response = live();
            } catch (...) {
                --in_flight_;
                slots_.release();
                throw;
            }
            --in_flight_;
            slots_.release();
            if (record && config_.transcript_mode == TranscriptMode::Record) transcript_.record(hash, request, response);
            return response;
        } catch (const TransientGatewayError& e) {
            if (attempt >= config_.max_retries)
                throw Error(ErrorCode::Gateway,
                            fmt::format("gave up after {} attempts: {}", attempt + 1, e.what()));
            ++retries_;
            spdlog::warn("transient gateway failure (attempt {}): {}", attempt + 1, e.what());
            std::this_thread::sleep_for(config_.backoff * (1 << std::min(attempt, 10)));
        }
    }
}

std::string LlmGateway::chat(const std::string& prompt, const ChatParams& params) {
    ++chat_calls_;
    const json request = {{"kind", "chat"},
                          {"model", config_.chat_model},
                          {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                          {"temperature", params.temperature},
                          {"max_tokens", params.max_tokens}};
    json response = call(request, [&] {
        return json(backend_->chat(ChatRequest{config_.chat_model, prompt, params}));
    });
    if (!response.is_string()) throw Error(ErrorCode::Gateway, "chat response is not a string");
    return response.get<std::string>();
}

std::vector<Vec> LlmGateway::embed(const std::vector<std::string>& texts, bool mask_position_mode) {
    if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "embed: no texts");
    ++embed_calls_;
    const std::string model = mask_position_mode && !config_.latent_embed_model.empty()
                                  ? config_.latent_embed_model
                                  : config_.embed_model;
    auto request_for = [&](const std::string& text) {
        return json{{"kind", "embed"}, {"model", model}, {"input", text}, {"mask_position_mode", mask_position_mode}};
    };

    std::vector<Vec> out(texts.size());
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const json request = request_for(texts[i]);
        const std::string hash = sha256_hex(request.dump());
        {
            std::lock_guard lock(cache_mutex_);
            if (auto it = embed_cache_.find(hash); it != embed_cache_.end()) {
                out[i] = it->second;
                continue;
            }
        }
        if (config_.transcript_mode == TranscriptMode::Replay) {
            out[i] = from_std(call(request, {}).get<std::vector<double>>());
            std::lock_guard lock(cache_mutex_);
            embed_cache_.emplace(hash, out[i]);
        } else {
            missing.push_back(i);
        }
    }
    if (missing.empty()) return out;

    // One backend request for everything uncached; transcript entries stay per text
    // so replays do not depend on how requests happened to be batched.
    EmbedRequest batch{model, {}, mask_position_mode};
    for (std::size_t i : missing) batch.texts.push_back(texts[i]);
    const json batch_request = {{"kind", "embed_batch"}, {"model", model}, {"input", batch.texts},
                                {"mask_position_mode", mask_position_mode}};
    json rows = call(batch_request, [&] {
        json arr = json::array();
        for (const auto& v : backend_->embed(batch)) arr.push_back(to_std(v));
        return arr;
    }, /*record=*/false);
    if (!rows.is_array() || rows.size() != missing.size())
        throw Error(ErrorCode::Gateway, "embedding backend returned the wrong number of rows");
    std::lock_guard lock(cache_mutex_);
    for (std::size_t k = 0; k < missing.size(); ++k) {
        const std::size_t i = missing[k];
        out[i] = from_std(rows[k].get<std::vector<double>>());
        const json request = request_for(texts[i]);
        const std::string hash = sha256_hex(request.dump());
        if (config_.transcript_mode == TranscriptMode::Record) transcript_.record(hash, request, rows[k]);
        embed_cache_.emplace(hash, out[i]);
    }
    return out;
}

Vec LlmGateway::embed_one(const std::string& text, bool mask_position_mode) {
    return embed({text}, mask_position_mode).front();
}

} // namespace relink
