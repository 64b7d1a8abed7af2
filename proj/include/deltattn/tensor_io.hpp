// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "deltattn/detail/bytes.hpp"
#include "deltattn/errors.hpp"
#include "deltattn/matrix.hpp"

namespace deltattn {

// On-disk tensor layout:
//   magic "DTNS" (4 bytes), version u16, ndim u16, dims ndim x u64,
//   payload: prod(dims) f32 scalars, little-endian, row-major.
inline constexpr char kTensorMagic[4] = {'D', 'T', 'N', 'S'};
inline constexpr std::uint16_t kTensorVersion = 1;

// In-memory tensor of small rank. Rank 2 maps straight onto MatrixF; rank 3
// is used for per-head stacks (heads x rows x cols).
struct TensorData {
    std::vector<std::size_t> dims;
    std::vector<float> data;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (std::size_t d : dims)
            n *= d;
        return dims.empty() ? 0 : n;
    }

    MatrixF as_matrix() const {
        if (dims.size() != 2)
            throw ShapeError("as_matrix: tensor rank is not 2");
        MatrixF m(dims[0], dims[1]);
        m.data() = data;
        return m;
    }

    // Slice (index, :, :) of a rank-3 tensor.
    MatrixF matrix_at(std::size_t index) const {
        if (dims.size() != 3)
            throw ShapeError("matrix_at: tensor rank is not 3");
        if (index >= dims[0])
            throw BoundsError("matrix_at: slice index out of range");
        MatrixF m(dims[1], dims[2]);
        const std::size_t stride = dims[1] * dims[2];
        std::copy(data.begin() + index * stride, data.begin() + (index + 1) * stride,
                  m.data().begin());
        return m;
    }

    static TensorData from_matrix(const MatrixF& m) {
        return TensorData{{m.rows(), m.cols()}, m.data()};
    }

    friend bool operator==(const TensorData& a, const TensorData& b) {
        return a.dims == b.dims && a.data == b.data;
    }
};

inline void save_tensor(const TensorData& t, const std::string& path) {
    if (t.dims.empty())
        throw ShapeError("save_tensor: tensor has no dimensions");
    if (t.data.size() != t.element_count())
        throw ShapeError("save_tensor: payload size differs from dims");
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw IoError("save_tensor: cannot open " + path);
    os.write(kTensorMagic, 4);
    detail::write_u16(os, kTensorVersion);
    detail::write_u16(os, static_cast<std::uint16_t>(t.dims.size()));
    for (std::size_t d : t.dims)
        detail::write_u64(os, d);
    for (float v : t.data)
        detail::write_f32(os, v);
    if (!os)
        throw IoError("save_tensor: write failed for " + path);
}

// Loads and validates a tensor file. Magic, version, payload-size, and
// data-validity failures raise IoError with distinct messages; a payload is
// rejected if any entry is NaN or infinite, since no pipeline stage can do
// anything meaningful with such a tensor.
inline TensorData load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError("load_tensor: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != std::string(kTensorMagic, 4))
        throw IoError("load_tensor: bad magic in " + path);
    const std::uint16_t version = detail::read_u16(is, "version");
    if (version != kTensorVersion)
        throw IoError("load_tensor: unsupported version " + std::to_string(version) + " in " +
                      path);
    const std::uint16_t ndim = detail::read_u16(is, "ndim");
    if (ndim == 0 || ndim > 8)
        throw IoError("load_tensor: unsupported rank in " + path);
    TensorData t;
    t.dims.resize(ndim);
    for (auto& d : t.dims)
        d = detail::read_u64(is, "dims");
    const std::size_t count = t.element_count();
    t.data.resize(count);
    for (float& v : t.data) {
        std::uint32_t bits;
        {
            unsigned char b[4];
            if (!is.read(reinterpret_cast<char*>(b), 4))
                throw IoError("load_tensor: size mismatch (truncated payload) in " + path);
            bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                   (static_cast<std::uint32_t>(b[2]) << 16) |
                   (static_cast<std::uint32_t>(b[3]) << 24);
        }
        v = std::bit_cast<float>(bits);
    }
    is.peek();
    if (!is.eof())
        throw IoError("load_tensor: size mismatch (trailing bytes) in " + path);
    for (float v : t.data)
        if (!std::isfinite(v))
            throw IoError("load_tensor: non-finite entry in " + path);
    return t;
}

inline void save_matrix(const MatrixF& m, const std::string& path) {
    save_tensor(TensorData::from_matrix(m), path);
}

inline MatrixF load_matrix(const std::string& path) {
    return load_tensor(path).as_matrix();
}

} // namespace deltattn
