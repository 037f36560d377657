#pragma once

// Little-endian byte buffers with a trailing CRC-32, shared by the checkpoint
// and index file formats.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cps {

std::uint32_t crc32(std::string_view bytes);

class ByteWriter {
public:
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f64(double v);
    void raw(std::string_view bytes);
    /// u32 length prefix followed by the bytes.
    void str(std::string_view s);

    const std::string& bytes() const { return buf_; }
    /// Appends CRC-32 of everything written so far and returns the finished buffer.
    std::string finish_with_crc();

private:
    std::string buf_;
};

/// Bounds-checked reader; every overrun raises DataError mentioning `context`.
class ByteReader {
public:
    ByteReader(std::string_view bytes, std::string context);

    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    double f64();
    std::string_view raw(std::size_t n);
    std::string str();

    std::size_t remaining() const { return bytes_.size() - pos_; }
    std::size_t position() const { return pos_; }

private:
    void need(std::size_t n) const;

    std::string_view bytes_;
    std::size_t pos_ = 0;
    std::string context_;
};

/// Verifies and strips the trailing CRC-32; returns the body.
std::string_view check_crc(std::string_view file_bytes, const std::string& context);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace cps
