#include "cpsearch/binary_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cpsearch/errors.hpp"

namespace cps {

static_assert(std::endian::native == std::endian::little,
              "byte layout assumes a little-endian host");

std::uint32_t crc32(std::string_view bytes) {
    uLong c = ::crc32(0L, Z_NULL, 0);
    c = ::crc32(c, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(c);
}

template <typename T>
static void put(std::string& buf, T v) {
    char tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    buf.append(tmp, sizeof(T));
}

void ByteWriter::u32(std::uint32_t v) { put(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put(buf_, v); }
void ByteWriter::f32(float v) { put(buf_, v); }
void ByteWriter::f64(double v) { put(buf_, v); }
void ByteWriter::raw(std::string_view bytes) { buf_.append(bytes); }

void ByteWriter::str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
}

std::string ByteWriter::finish_with_crc() {
    const std::uint32_t c = crc32(buf_);
    u32(c);
    return std::move(buf_);
}

ByteReader::ByteReader(std::string_view bytes, std::string context)
    : bytes_(bytes), context_(std::move(context)) {}

void ByteReader::need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError(context_ + ": truncated data");
}

template <typename T>
static T get(std::string_view bytes, std::size_t& pos) {
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

std::uint32_t ByteReader::u32() { need(4); return get<std::uint32_t>(bytes_, pos_); }
std::uint64_t ByteReader::u64() { need(8); return get<std::uint64_t>(bytes_, pos_); }
float ByteReader::f32() { need(4); return get<float>(bytes_, pos_); }
double ByteReader::f64() { need(8); return get<double>(bytes_, pos_); }

std::string_view ByteReader::raw(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
}

std::string ByteReader::str() {
    const std::uint32_t n = u32();
    return std::string(raw(n));
}

std::string_view check_crc(std::string_view file_bytes, const std::string& context) {
    if (file_bytes.size() < 4) throw DataError(context + ": truncated data");
    const auto body = file_bytes.substr(0, file_bytes.size() - 4);
    std::uint32_t stored;
    std::memcpy(&stored, file_bytes.data() + body.size(), 4);
    if (stored != crc32(body)) throw DataError(context + ": checksum mismatch");
    return body;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace cps
