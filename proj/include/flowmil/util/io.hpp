#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

namespace flowmil::io {

static_assert(sizeof(float) == 4, "32-bit IEEE floats required");

/// Append-only little-endian byte buffer used by the binary file writers.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { raw(&v, 2); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void f32(float v) { raw(&v, 4); }
    void bytes(const void* p, std::size_t n) { raw(p, n); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void f32_array(const float* p, std::size_t n) { raw(p, n * 4); }

    const std::vector<std::uint8_t>& data() const { return buf_; }

private:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader over an in-memory file image.
class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size, std::string source)
        : data_(data), size_(size), source_(std::move(source)) {}

    std::uint8_t u8() { return *take(1); }
    std::uint16_t u16() { return load<std::uint16_t>(); }
    std::uint32_t u32() { return load<std::uint32_t>(); }
    std::uint64_t u64() { return load<std::uint64_t>(); }
    float f32() { return load<float>(); }
    std::string str();
    void f32_array(float* out, std::size_t n) { std::memcpy(out, take(n * 4), n * 4); }
    void bytes(void* out, std::size_t n) { std::memcpy(out, take(n), n); }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return size_ - pos_; }
    bool at_end() const { return pos_ == size_; }
    const std::string& source() const { return source_; }

    /// Throws a truncation error naming expected vs actual byte counts.
    void require(std::size_t n) const;

private:
    template <typename T>
    T load() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    const std::uint8_t* take(std::size_t n);

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::string source_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

/// Writes to "<path>.tmp" then renames, so readers never observe partial files.
void atomic_write_file(const std::filesystem::path& path, const void* data, std::size_t size);
void atomic_write_file(const std::filesystem::path& path, const std::string& text);
void atomic_write_file(const std::filesystem::path& path, const ByteWriter& w);

/// Formats a double with 9 significant digits (report precision).
std::string format_g9(double v);

}  // namespace flowmil::io
