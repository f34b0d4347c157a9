#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace klg {

// Writes to a sibling temp file, then renames over the target.
void atomic_write_file(const std::filesystem::path& path,
                       const std::string& content);

std::string read_file(const std::filesystem::path& path);

// FNV-1a 64-bit over raw bytes, as a 16-hex-digit string.
std::string fnv1a_hex(const std::string& bytes);

std::string digest_file(const std::filesystem::path& path);

// Digest of a directory: FNV-1a over the sorted list of
// "<relative path>:<file digest>" lines.
std::string digest_path(const std::filesystem::path& path);

}  // namespace klg
