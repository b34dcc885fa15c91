#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace interloc::fileio {

/// Writes to a temporary sibling and renames it into place.
void write_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Throws DataError if the file cannot be read.
std::string read_all(const std::filesystem::path& path);

/// zlib CRC-32 as 8 lowercase hex digits.
std::string crc32_hex(std::string_view bytes);

}  // namespace interloc::fileio
