#include "relink/util.hpp"
#include "relink/error.hpp"

#include <atomic>
#include <bit>
#include <cctype>
#include <cstring>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <openssl/evp.h>
#include <spdlog/fmt/fmt.h>

namespace relink {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::Parse: return "ParseError";
        case ErrorCode::Io: return "IoError";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::DuplicateDocument: return "DuplicateDocument";
        case ErrorCode::InvalidDocument: return "InvalidDocument";
        case ErrorCode::UnknownEntity: return "UnknownEntity";
        case ErrorCode::SelfLoop: return "SelfLoop";
        case ErrorCode::InvalidTriple: return "InvalidTriple";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::DegenerateVector: return "DegenerateVector";
        case ErrorCode::Gateway: return "GatewayError";
        case ErrorCode::ReplayMiss: return "ReplayMiss";
        case ErrorCode::NoTopicEntity: return "NoTopicEntity";
        case ErrorCode::InstantiationFailed: return "InstantiationFailed";
        case ErrorCode::TrainingDiverged: return "TrainingDiverged";
        case ErrorCode::MissingArtifact: return "MissingArtifact";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::Config: return "ConfigError";
        case ErrorCode::Locked: return "Locked";
    }
    return "Unknown";
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) { return fmt::format("{:016x}", value); }

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error(ErrorCode::Io, "sha256 failed");
    }
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
    return out;
}

std::string hash_doubles(std::span<const double> values) {
    return sha256_hex(std::string_view(reinterpret_cast<const char*>(values.data()),
                                       values.size() * sizeof(double)));
}

std::string to_lower_ascii(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

static bool is_space(unsigned char c) { return std::isspace(c) != 0; }

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending = false;
    for (unsigned char c : s) {
        if (is_space(c)) {
            pending = !out.empty();
            continue;
        }
        if (pending) out += ' ';
        pending = false;
        out += static_cast<char>(c);
    }
    return out;
}

// Non-ASCII bytes count as word characters so multi-byte letters never split a token.
bool is_word_byte(unsigned char c) { return c >= 0x80 || std::isalnum(c) != 0; }

bool iequals_ascii(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(a[i])) !=
            std::tolower(static_cast<unsigned char>(b[i])))
            return false;
    }
    return true;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open {}", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::Io, fmt::format("cannot write {}", tmp.string()));
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw Error(ErrorCode::Io, fmt::format("short write to {}", tmp.string()));
    }
    std::filesystem::rename(tmp, path);
}

void write_f32_file(const std::filesystem::path& path, std::span<const double> values) {
    std::string bytes(values.size() * 4, '\0');
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
        for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    write_file(path, bytes);
}

std::vector<double> read_f32_file(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() % 4 != 0) {
        throw Error(ErrorCode::Parse, fmt::format("{}: size {} is not a multiple of 4",
                                                  path.string(), bytes.size()));
    }
    std::vector<double> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
        out[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    return out;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    workers = std::max<std::size_t>(1, std::min(workers, n));
    std::vector<std::exception_ptr> errors(n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::vector<double> to_std(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec from_std(std::span<const double> v) {
    Vec out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
    return out;
}

std::string format_fixed(double value, int decimals) {
    if (value == 0.0) value = 0.0;  // drop negative zero
    return fmt::format("{:.{}f}", value, decimals);
}

} // namespace relink
