#include "flowmil/util/digest.hpp"

#include <cstdio>

#include "flowmil/util/io.hpp"

namespace flowmil {

std::string digest_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string digest_file(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    return digest_hex(fnv1a64(bytes.data(), bytes.size()));
}

}  // namespace flowmil
