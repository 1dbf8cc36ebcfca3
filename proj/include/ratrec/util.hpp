#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace ratrec {

using json = nlohmann::json;

// Hashing ------------------------------------------------------------------

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// Text ---------------------------------------------------------------------

/// Unicode NFC of a UTF-8 string. Invalid sequences are replaced with U+FFFD.
std::string to_nfc(std::string_view utf8);

/// Number of code points in a UTF-8 string.
std::size_t utf8_length(std::string_view utf8);

/// First max_code_points code points of s.
std::string utf8_prefix(std::string_view utf8, std::size_t max_code_points);

/// Strips ASCII whitespace from both ends.
std::string_view trim(std::string_view s);

// Files --------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);

/// Writes through a sibling temporary file and rename, so readers never see a torn file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Calls fn(line_number, line) for every non-blank line; line numbers are 1-based.
void for_each_line(const std::filesystem::path& path,
                   const std::function<void(std::size_t, std::string_view)>& fn);

std::string to_jsonl(const std::vector<json>& rows);

// Deterministic randomness -------------------------------------------------

/// Random stream keyed by an integer seed and a string key (typically a user id).
/// Uses only standard-specified engines so draws are identical across platforms.
class SeededStream {
 public:
  SeededStream(std::int64_t seed, std::string_view key);

  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound);

  /// Uniform double in [0, 1).
  double unit();

 private:
  std::mt19937_64 engine_;
};

}  // namespace ratrec
