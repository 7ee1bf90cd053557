#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace flowmil {

/// 64-bit FNV-1a over raw bytes; the manifest integrity digest.
inline std::uint64_t fnv1a64(const void* data, std::size_t size) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string digest_hex(std::uint64_t h);
std::string digest_file(const std::filesystem::path& path);

}  // namespace flowmil
