#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace mfb {

std::string read_file(const std::filesystem::path& path);

/// Writes via a sibling temp file plus rename so readers never observe a
/// partially written file.
void atomic_write_file(const std::filesystem::path& path, const std::string& content);

uint64_t fnv1a64(const std::string& s);

/// 16-hex-digit FNV-1a digest, used for content-addressed run directories.
std::string hash_hex(const std::string& s);

/// Shortest round-trip decimal form of a double; stable across runs and
/// platforms with IEEE doubles, so emitted CSV/JSON is byte-reproducible.
std::string fmt_double(double v);

} // namespace mfb
