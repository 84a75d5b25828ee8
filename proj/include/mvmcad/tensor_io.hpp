#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "mvmcad/tensor.hpp"

namespace mvmcad {

// MVTN tensor dump: magic "MVTN", u32 version=1, u32 rank, u64 dims[rank],
// u8 dtype (0=f32, 1=f64), little-endian payload. Bit-exact round trip.
namespace mvtn {

inline constexpr char kMagic[4] = {'M', 'V', 'T', 'N'};
inline constexpr std::uint32_t kVersion = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
    // Little-endian host assumed; all supported targets are.
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("truncated MVTN stream");
    return v;
}

}  // namespace detail

template <typename Real>
void write(std::ostream& os, const Tensor<Real>& t) {
    static_assert(std::is_same_v<Real, float> || std::is_same_v<Real, double>);
    os.write(kMagic, 4);
    detail::write_le<std::uint32_t>(os, kVersion);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape) detail::write_le<std::uint64_t>(os, d);
    detail::write_le<std::uint8_t>(os, std::is_same_v<Real, float> ? 0 : 1);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(Real)));
    if (!os) throw IoError("failed writing MVTN stream");
}

template <typename Real>
Tensor<Real> read(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw IoError("bad MVTN magic");
    auto version = detail::read_le<std::uint32_t>(is);
    if (version != kVersion) throw IoError("unsupported MVTN version " + std::to_string(version));
    auto rank = detail::read_le<std::uint32_t>(is);
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i)
        shape[i] = static_cast<std::size_t>(detail::read_le<std::uint64_t>(is));
    auto dtype = detail::read_le<std::uint8_t>(is);
    Tensor<Real> out(shape);
    if (dtype == 0) {
        for (auto& v : out.data) v = static_cast<Real>(detail::read_le<float>(is));
    } else if (dtype == 1) {
        for (auto& v : out.data) v = static_cast<Real>(detail::read_le<double>(is));
    } else {
        throw IoError("unknown MVTN dtype " + std::to_string(dtype));
    }
    return out;
}

template <typename Real>
void save(const std::string& path, const Tensor<Real>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    write(os, t);
}

template <typename Real>
Tensor<Real> load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    return read<Real>(is);
}

}  // namespace mvtn
}  // namespace mvmcad
