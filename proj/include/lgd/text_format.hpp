// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace lgd {

/// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double v);
double parse_double(std::string_view text);
long long parse_int(std::string_view text);

std::string_view trim(std::string_view s) noexcept;
std::vector<std::string> split(std::string_view s, char sep);

/// 64-bit FNV-1a digest as 16 lowercase hex digits. Used for content and
/// config hashes; not a cryptographic hash.
std::string fnv1a_hex(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames, so readers never see partial content.
void write_file(const std::filesystem::path& path, std::string_view content);

/// Minimal CSV table: a header row and rows of raw cells (no quoting; the
/// library never emits commas inside cells).
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace lgd
