#ifndef SCDL_CHECKPOINT_HPP
#define SCDL_CHECKPOINT_HPP

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "scdl/tensor.hpp"

namespace scdl {

// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320)
inline std::uint32_t crc32(const void* bytes, std::size_t len, std::uint32_t crc = 0) {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    const auto* p = static_cast<const unsigned char*>(bytes);
    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i)
        crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

inline std::uint32_t crc32(const std::string& s) { return crc32(s.data(), s.size()); }

// Checkpoint container: magic "SCDL", version u32, tensor count u32, then per
// tensor: name-length u32, UTF-8 name, dtype u8 (0=f64, 1=f32), rank u8,
// dims u64[], row-major payload. All little-endian. Trailing CRC32 over the
// concatenated payload bytes.
enum class CheckpointDtype : std::uint8_t { f64 = 0, f32 = 1 };

namespace detail_ckpt {

template <typename T>
void write_le(std::ostream& os, T v) {
    unsigned char b[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
        b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char b[sizeof(T)];
    is.read(reinterpret_cast<char*>(b), sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return static_cast<T>(v);
}

} // namespace detail_ckpt

inline void save_checkpoint(const std::vector<std::pair<std::string, Tensor>>& tensors,
                            const std::string& path,
                            CheckpointDtype dtype = CheckpointDtype::f64) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write("SCDL", 4);
    detail_ckpt::write_le<std::uint32_t>(os, 1);
    detail_ckpt::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    std::uint32_t crc = 0;
    for (const auto& [name, t] : tensors) {
        detail_ckpt::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(dtype));
        os.put(static_cast<char>(t.shape().size()));
        for (auto d : t.shape())
            detail_ckpt::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(d));
        if (dtype == CheckpointDtype::f64) {
            std::vector<unsigned char> payload(t.data().size() * 8);
            for (std::size_t i = 0; i < t.data().size(); ++i) {
                std::uint64_t bits;
                std::memcpy(&bits, &t.data()[i], 8);
                for (int k = 0; k < 8; ++k)
                    payload[i * 8 + k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xFF);
            }
            crc = crc32(payload.data(), payload.size(), crc);
            os.write(reinterpret_cast<const char*>(payload.data()),
                     static_cast<std::streamsize>(payload.size()));
        } else {
            std::vector<unsigned char> payload(t.data().size() * 4);
            for (std::size_t i = 0; i < t.data().size(); ++i) {
                float f = static_cast<float>(t.data()[i]);
                std::uint32_t bits;
                std::memcpy(&bits, &f, 4);
                for (int k = 0; k < 4; ++k)
                    payload[i * 4 + k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xFF);
            }
            crc = crc32(payload.data(), payload.size(), crc);
            os.write(reinterpret_cast<const char*>(payload.data()),
                     static_cast<std::streamsize>(payload.size()));
        }
    }
    detail_ckpt::write_le<std::uint32_t>(os, crc);
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SCDL", 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    std::uint32_t version = detail_ckpt::read_le<std::uint32_t>(is);
    if (version != 1)
        throw std::runtime_error("load_checkpoint: unsupported version");
    std::uint32_t count = detail_ckpt::read_le<std::uint32_t>(is);
    std::map<std::string, Tensor> out;
    std::uint32_t crc = 0;
    for (std::uint32_t t = 0; t < count; ++t) {
        std::uint32_t name_len = detail_ckpt::read_le<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        auto dtype = static_cast<CheckpointDtype>(is.get());
        int rank = is.get();
        Shape shape;
        for (int r = 0; r < rank; ++r)
            shape.push_back(static_cast<std::int64_t>(detail_ckpt::read_le<std::uint64_t>(is)));
        std::int64_t n = shape_numel(shape);
        std::size_t width = dtype == CheckpointDtype::f64 ? 8 : 4;
        std::vector<unsigned char> payload(static_cast<std::size_t>(n) * width);
        is.read(reinterpret_cast<char*>(payload.data()),
                static_cast<std::streamsize>(payload.size()));
        if (!is) throw std::runtime_error("load_checkpoint: truncated tensor payload");
        crc = crc32(payload.data(), payload.size(), crc);
        std::vector<double> values(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            if (dtype == CheckpointDtype::f64) {
                std::uint64_t bits = 0;
                for (int k = 0; k < 8; ++k)
                    bits |= static_cast<std::uint64_t>(payload[i * 8 + k]) << (8 * k);
                double v;
                std::memcpy(&v, &bits, 8);
                values[i] = v;
            } else {
                std::uint32_t bits = 0;
                for (int k = 0; k < 4; ++k)
                    bits |= static_cast<std::uint32_t>(payload[i * 4 + k]) << (8 * k);
                float v;
                std::memcpy(&v, &bits, 4);
                values[i] = static_cast<double>(v);
            }
        }
        out.emplace(name, Tensor::from_data(std::move(shape), std::move(values)));
    }
    std::uint32_t stored = detail_ckpt::read_le<std::uint32_t>(is);
    if (!is) throw std::runtime_error("load_checkpoint: missing CRC trailer");
    if (stored != crc)
        throw std::runtime_error("load_checkpoint: CRC mismatch, checkpoint corrupted");
    return out;
}

} // namespace scdl

#endif
