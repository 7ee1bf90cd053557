#include "flowmil/util/io.hpp"

#include <cstdio>
#include <fstream>

#include "flowmil/util/error.hpp"

namespace flowmil::io {

const std::uint8_t* ByteReader::take(std::size_t n) {
    require(n);
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
}

void ByteReader::require(std::size_t n) const {
    if (pos_ + n > size_) {
        throw Error("truncated", source_ + ": truncated file, expected at least " +
                                      std::to_string(pos_ + n) + " bytes but file has " +
                                      std::to_string(size_));
    }
}

std::string ByteReader::str() {
    const std::uint32_t len = u32();
    const auto* p = take(len);
    return std::string(reinterpret_cast<const char*>(p), len);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("io", "cannot open " + path.string());
    f.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(f.tellg());
    f.seekg(0);
    std::vector<std::uint8_t> buf(size);
    if (size > 0) f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
    if (!f) throw Error("io", "read failed for " + path.string());
    return buf;
}

std::string read_text_file(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    return std::string(bytes.begin(), bytes.end());
}

void atomic_write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("io", "cannot open " + tmp.string() + " for writing");
        f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!f) throw Error("io", "write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void atomic_write_file(const std::filesystem::path& path, const std::string& text) {
    atomic_write_file(path, text.data(), text.size());
}

void atomic_write_file(const std::filesystem::path& path, const ByteWriter& w) {
    atomic_write_file(path, w.data().data(), w.data().size());
}

std::string format_g9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace flowmil::io
