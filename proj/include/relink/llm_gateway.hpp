#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "relink/error.hpp"
#include "relink/util.hpp"

namespace relink {

enum class TranscriptMode { Off, Record, Replay };

TranscriptMode parse_transcript_mode(std::string_view s);
std::string_view to_string(TranscriptMode mode);

struct MockRule {
    std::string contains;
    std::string reply;
};

struct MockConfig {
    std::vector<MockRule> rules;
    std::string default_reply;
    int embed_dim = 64;
    std::uint64_t seed = 17;
};

struct GatewayConfig {
    std::string backend = "mock";  // "mock" | "http"
    std::string base_url = "http://127.0.0.1:8000/v1";
    std::string api_key_env = "OPENAI_API_KEY";
    std::string chat_model = "deepseek-v3-0324";
    std::string embed_model = "text-embedding";
    /// Model used for [MASK]-formatted latent encodings; empty means embed_model.
    std::string latent_embed_model;
    int max_retries = 3;
    std::chrono::milliseconds timeout{60000};
    std::chrono::milliseconds backoff{200};
    int max_in_flight = 4;
    TranscriptMode transcript_mode = TranscriptMode::Off;
    std::filesystem::path transcript_path;
    MockConfig mock;
};

struct ChatParams {
    double temperature = 0.0;
    int max_tokens = 512;
};

struct ChatRequest {
    std::string model;
    std::string prompt;
    ChatParams params;
};

struct EmbedRequest {
    std::string model;
    std::vector<std::string> texts;
    bool mask_position_mode = false;
};

/// Thrown by backends for failures worth retrying (timeouts, 429, 5xx).
class TransientGatewayError : public Error {
public:
    explicit TransientGatewayError(const std::string& message) : Error(ErrorCode::Gateway, message) {}
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string chat(const ChatRequest& request) = 0;
    virtual std::vector<Vec> embed(const EmbedRequest& request) = 0;
};

/// OpenAI-compatible chat/completions and embeddings over HTTP(S).
class HttpBackend final : public Backend {
public:
    explicit HttpBackend(GatewayConfig config);
    std::string chat(const ChatRequest& request) override;
    std::vector<Vec> embed(const EmbedRequest& request) override;

private:
    nlohmann::json post(const std::string& endpoint, const nlohmann::json& body);

    GatewayConfig config_;
    std::string scheme_host_port_;
    std::string path_prefix_;
};

/// Deterministic text embedder: a hashed bag of lowercase word tokens plus a
/// small whole-string component, unit-normalized. [MASK]-mode encodings draw
/// from a different hash family, standing in for a separate latent encoder.
class HashEmbedder {
public:
    HashEmbedder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}
    Vec embed(std::string_view text, bool mask_position_mode) const;
    int dim() const { return dim_; }

private:
    int dim_;
    std::uint64_t seed_;
};

using ChatFn = std::function<std::string(const ChatRequest&)>;

/// Rule-based chat ("prompt contains X -> reply Y", first match wins) or a
/// scripted callback, plus HashEmbedder.
class MockBackend final : public Backend {
public:
    explicit MockBackend(MockConfig config);
    MockBackend(MockConfig config, ChatFn chat_fn);

    std::string chat(const ChatRequest& request) override;
    std::vector<Vec> embed(const EmbedRequest& request) override;

private:
    MockConfig config_;
    ChatFn chat_fn_;
    HashEmbedder embedder_;
};

std::unique_ptr<Backend> make_backend(const GatewayConfig& config);

/// Request-hash keyed store of recorded responses. JSON-lines on disk, one
/// {hash, request, response} object per line, sorted by hash.
class Transcript {
public:
    Transcript() = default;
    Transcript(Transcript&& o) noexcept : entries_(std::move(o.entries_)) {}
    Transcript& operator=(Transcript&& o) noexcept {
        std::scoped_lock lock(mutex_, o.mutex_);
        entries_ = std::move(o.entries_);
        return *this;
    }

    static Transcript load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::optional<nlohmann::json> lookup(const std::string& hash) const;
    void record(const std::string& hash, const nlohmann::json& request, const nlohmann::json& response);
    std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::pair<nlohmann::json, nlohmann::json>> entries_;
};

struct GatewayStats {
    long chat_calls = 0;
    long embed_calls = 0;
    long backend_calls = 0;
    long retries = 0;
    long replay_hits = 0;
    long peak_in_flight = 0;
};

/// The only component that talks to model providers. Shareable across
/// threads; backend calls are bounded by max_in_flight.
class LlmGateway {
public:
    /// `backend` may be null in replay mode.
    LlmGateway(GatewayConfig config, std::unique_ptr<Backend> backend);
    ~LlmGateway();
    LlmGateway(const LlmGateway&) = delete;
    LlmGateway& operator=(const LlmGateway&) = delete;

    std::string chat(const std::string& prompt, const ChatParams& params = {});
    std::vector<Vec> embed(const std::vector<std::string>& texts, bool mask_position_mode = false);
    Vec embed_one(const std::string& text, bool mask_position_mode = false);

    /// Persists recorded entries (record mode only).
    void flush_transcript();

    const GatewayConfig& config() const { return config_; }
    GatewayStats stats() const;

private:
    nlohmann::json call(const nlohmann::json& request, const std::function<nlohmann::json()>& live,
                        bool record = true);

    GatewayConfig config_;
    std::unique_ptr<Backend> backend_;
    Transcript transcript_;
    std::counting_semaphore<1024> slots_;
    std::mutex cache_mutex_;
    std::unordered_map<std::string, Vec> embed_cache_;

    std::atomic<long> chat_calls_{0};
    std::atomic<long> embed_calls_{0};
    std::atomic<long> backend_calls_{0};
    std::atomic<long> retries_{0};
    std::atomic<long> replay_hits_{0};
    std::atomic<long> in_flight_{0};
    std::atomic<long> peak_in_flight_{0};
};

} // namespace relink
