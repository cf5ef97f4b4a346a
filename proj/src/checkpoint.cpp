#include "sva/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <limits>

#include "sva/error.hpp"

namespace sva {

namespace {

constexpr char kMagic[4] = {'S', 'V', 'A', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::ostream& os, std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    os.write(b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

void put_f64(std::ostream& os, double d) {
    const auto u = std::bit_cast<std::uint64_t>(d);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
    os.write(b, 8);
}

std::uint8_t get_u8(std::istream& is) {
    char b;
    if (!is.read(&b, 1)) throw DataError("checkpoint truncated");
    return static_cast<std::uint8_t>(b);
}

std::uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2)) throw DataError("checkpoint truncated");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("checkpoint truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("checkpoint truncated");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(u);
}

} // namespace

void write_checkpoint(const std::string& path, const Records& records) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(records.size()));
    for (const auto& [name, tensor] : records) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max())
            throw DataError("checkpoint record name too long: " + name);
        put_u16(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(tensor.rank()));
        for (int d = 0; d < tensor.rank(); ++d)
            put_u32(os, static_cast<std::uint32_t>(tensor.dim(d)));
        for (Index i = 0; i < tensor.size(); ++i) put_f64(os, tensor[i]);
    }
    if (!os) throw DataError("write failed for checkpoint: " + path);
}

Records read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != std::string(kMagic, 4))
        throw DataError("not a checkpoint file: " + path);
    const std::uint32_t version = get_u32(is);
    if (version != kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = get_u32(is);
    Records records;
    records.reserve(count);
    for (std::uint32_t r = 0; r < count; ++r) {
        const std::uint16_t name_len = get_u16(is);
        std::string name(name_len, '\0');
        if (name_len > 0 && !is.read(name.data(), name_len))
            throw DataError("checkpoint truncated");
        const int rank = get_u8(is);
        std::vector<int> shape;
        shape.reserve(static_cast<std::size_t>(rank));
        for (int d = 0; d < rank; ++d) shape.push_back(static_cast<int>(get_u32(is)));
        Tensor tensor(shape);
        for (Index i = 0; i < tensor.size(); ++i) tensor[i] = get_f64(is);
        records.emplace_back(std::move(name), std::move(tensor));
    }
    return records;
}

} // namespace sva
