#pragma once

// Binary tensor container shared by every module that touches disk.
//
// Layout (little-endian throughout):
//   8 bytes   magic "LHTENSOR"
//   u8        dtype tag: 0 = f32le, 1 = f64le
//   u8        rank
//   rank*u64  dims
//   payload   prod(dims) elements
//   u32       CRC32 (IEEE, zlib) of the payload bytes
//
// write/read round-trips are bit-identical; any payload corruption is
// caught by the checksum.

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lh/grid.hpp"

namespace lh {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

struct TensorData {
    Dtype dtype = Dtype::f32;
    std::vector<std::uint64_t> dims;
    std::vector<float> f32;
    std::vector<double> f64;

    std::uint64_t count() const {
        std::uint64_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

namespace detail {

inline constexpr char kTensorMagic[8] = {'L', 'H', 'T', 'E', 'N', 'S', 'O', 'R'};

template <typename T>
void put_le(std::string& buf, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        buf.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return static_cast<T>(v);
}

template <typename Elem>
void write_tensor_impl(const std::filesystem::path& path, const std::vector<std::uint64_t>& dims,
                       const Elem* data, std::uint64_t n, Dtype tag) {
    for (std::uint64_t i = 0; i < n; ++i)
        if (!std::isfinite(static_cast<double>(data[i])))
            throw std::invalid_argument("write_tensor: non-finite value at index " +
                                        std::to_string(i));
    std::uint64_t prod = 1;
    for (auto d : dims) prod *= d;
    if (prod != n) throw std::invalid_argument("write_tensor: dims do not match element count");

    std::string header;
    header.append(kTensorMagic, 8);
    header.push_back(static_cast<char>(tag));
    header.push_back(static_cast<char>(dims.size()));
    for (auto d : dims) put_le(header, d);

    // Payload is written as raw little-endian IEEE; on the (universal today)
    // little-endian hosts this is a memcpy of the element array.
    static_assert(sizeof(float) == 4 && sizeof(double) == 8);
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    const std::size_t nbytes = static_cast<std::size_t>(n) * sizeof(Elem);
    const std::uint32_t crc =
        static_cast<std::uint32_t>(::crc32(0L, nbytes ? bytes : Z_NULL, static_cast<uInt>(nbytes)));

    std::string tail;
    put_le(tail, crc);

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("write_tensor: cannot open " + tmp.string());
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        if (nbytes) out.write(reinterpret_cast<const char*>(bytes), static_cast<std::streamsize>(nbytes));
        out.write(tail.data(), static_cast<std::streamsize>(tail.size()));
        if (!out) throw std::runtime_error("write_tensor: I/O failure writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline void write_tensor(const std::filesystem::path& path, const std::vector<std::uint64_t>& dims,
                         const std::vector<float>& data) {
    detail::write_tensor_impl(path, dims, data.data(), data.size(), Dtype::f32);
}

inline void write_tensor(const std::filesystem::path& path, const std::vector<std::uint64_t>& dims,
                         const std::vector<double>& data) {
    detail::write_tensor_impl(path, dims, data.data(), data.size(), Dtype::f64);
}

inline TensorData read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_tensor: cannot open " + path.string());
    std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());

    const std::size_t min_size = 8 + 1 + 1 + 4;
    if (raw.size() < min_size || std::memcmp(raw.data(), detail::kTensorMagic, 8) != 0)
        throw std::runtime_error("read_tensor: bad magic in " + path.string());

    TensorData t;
    const std::uint8_t tag = raw[8];
    if (tag > 1) throw std::runtime_error("read_tensor: unknown dtype tag in " + path.string());
    t.dtype = static_cast<Dtype>(tag);
    const std::size_t rank = raw[9];
    std::size_t off = 10;
    if (raw.size() < off + rank * 8 + 4)
        throw std::runtime_error("read_tensor: truncated header in " + path.string());
    t.dims.resize(rank);
    for (std::size_t i = 0; i < rank; ++i, off += 8)
        t.dims[i] = detail::get_le<std::uint64_t>(raw.data() + off);

    const std::uint64_t n = t.count();
    const std::size_t elem = t.dtype == Dtype::f32 ? 4 : 8;
    const std::size_t nbytes = static_cast<std::size_t>(n) * elem;
    if (raw.size() != off + nbytes + 4)
        throw std::runtime_error("read_tensor: size mismatch in " + path.string());

    const std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0L, nbytes ? raw.data() + off : Z_NULL, static_cast<uInt>(nbytes)));
    const std::uint32_t stored = detail::get_le<std::uint32_t>(raw.data() + off + nbytes);
    if (crc != stored)
        throw std::runtime_error("read_tensor: checksum mismatch in " + path.string());

    if (t.dtype == Dtype::f32) {
        t.f32.resize(n);
        if (nbytes) std::memcpy(t.f32.data(), raw.data() + off, nbytes);
    } else {
        t.f64.resize(n);
        if (nbytes) std::memcpy(t.f64.data(), raw.data() + off, nbytes);
    }
    return t;
}

/// Convenience: any supported dtype, widened to double.
inline std::vector<double> read_tensor_f64(const std::filesystem::path& path,
                                           std::vector<std::uint64_t>* dims_out = nullptr) {
    TensorData t = read_tensor(path);
    if (dims_out) *dims_out = t.dims;
    if (t.dtype == Dtype::f64) return std::move(t.f64);
    std::vector<double> out(t.f32.begin(), t.f32.end());
    return out;
}

/// Fields are stored 32-bit (training-data convention); doubles are
/// narrowed on write and widened on read.
inline void write_field_f32(const std::filesystem::path& path, const Field& f) {
    std::vector<float> data(f.v.size());
    for (std::size_t i = 0; i < f.v.size(); ++i) data[i] = static_cast<float>(f.v[i]);
    write_tensor(path, {f.rows, f.cols}, data);
}

inline Field read_field(const std::filesystem::path& path) {
    std::vector<std::uint64_t> dims;
    std::vector<double> v = read_tensor_f64(path, &dims);
    if (dims.size() != 2) throw std::runtime_error("read_field: expected rank-2 tensor in " + path.string());
    Field f(dims[0], dims[1]);
    f.v = std::move(v);
    return f;
}

}  // namespace lh
