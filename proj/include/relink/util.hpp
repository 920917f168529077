#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace relink {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ---- hashing ---------------------------------------------------------------

/// 64-bit FNV-1a. Used for content-derived identifiers, not for security.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t value);

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// Content hash over the raw bytes of a parameter block.
std::string hash_doubles(std::span<const double> values);

// ---- text ------------------------------------------------------------------

std::string to_lower_ascii(std::string_view s);
std::string trim(std::string_view s);
/// Collapses every run of ASCII whitespace to a single space and trims.
std::string collapse_whitespace(std::string_view s);
bool is_word_byte(unsigned char c);
bool iequals_ascii(std::string_view a, std::string_view b);

// ---- files -----------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);
/// Writes atomically via a sibling temp file and rename.
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Flat little-endian float32 vector file.
void write_f32_file(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f32_file(const std::filesystem::path& path);

// ---- concurrency -----------------------------------------------------------

/// Runs fn(0..n-1) on up to `workers` threads. Exceptions from any task are
/// rethrown (the first one by index) after all tasks finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

// ---- numerics --------------------------------------------------------------

std::vector<double> to_std(const Vec& v);
Vec from_std(std::span<const double> v);

/// Fixed-precision rendering for result files, so reruns are byte-identical.
std::string format_fixed(double value, int decimals = 6);

} // namespace relink
