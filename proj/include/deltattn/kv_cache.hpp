// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deltattn/delta_encoding.hpp"
#include "deltattn/detail/bytes.hpp"
#include "deltattn/errors.hpp"

namespace deltattn {

// Delta-augmented KV cache for one (sequence, head) pair. The full key
// history is held as basis + sparse delta columns; only the last w_d keys
// are kept exactly, in a small ring the decode window reads from. Values
// stay dense. Cache size therefore tracks delta nonzeros instead of n * d.
template <typename T>
struct DeltaKVCache {
    std::vector<T> basis;
    std::vector<SparseDeltaColumn<T>> delta_columns;
    std::vector<std::pair<std::size_t, std::vector<T>>> exact_ring; // ascending positions
    std::vector<std::vector<T>> values;
    DeltaState<T> state;
    std::size_t w_d = 0;

    bool initialized() const { return w_d > 0 && !basis.empty(); }
    std::size_t d_head() const { return basis.size(); }
    std::size_t positions() const { return values.size(); }

    std::span<const T> ring_key(std::size_t position) const {
        for (const auto& [pos, key] : exact_ring)
            if (pos == position)
                return key;
        throw BoundsError("ring_key: position not held exactly");
    }

    friend bool operator==(const DeltaKVCache& a, const DeltaKVCache& b) {
        return a.w_d == b.w_d && a.basis == b.basis && a.delta_columns == b.delta_columns &&
               a.exact_ring == b.exact_ring && a.values == b.values && a.state == b.state;
    }
};

template <typename T>
DeltaKVCache<T> cache_init(std::span<const T> basis_key, std::span<const T> first_value,
                           std::size_t w_d) {
    if (w_d == 0)
        throw ConfigError("cache_init: decode window must be >= 1");
    if (basis_key.empty())
        throw ShapeError("cache_init: empty basis key");
    DeltaKVCache<T> c;
    c.w_d = w_d;
    c.basis.assign(basis_key.begin(), basis_key.end());
    c.state = init_state(basis_key);
    c.exact_ring.emplace_back(0, c.basis);
    c.values.emplace_back(first_value.begin(), first_value.end());
    return c;
}

// Appends one position. The delta must have been produced by advancing
// cache.state through delta_encode_step (the caller stores the advanced
// state back first); this keeps encoder and cache in lockstep.
template <typename T>
void cache_append(DeltaKVCache<T>& cache, SparseDeltaColumn<T> delta,
                  std::span<const T> k_new, std::span<const T> v_new) {
    if (!cache.initialized())
        throw StateError("cache_append: cache not initialized");
    if (k_new.size() != cache.d_head())
        throw ShapeError("cache_append: key length differs from cache");
    if (delta.index != cache.positions())
        throw StateError("cache_append: delta index is not the next position");
    if (cache.state.step != delta.index)
        throw StateError("cache_append: encoder state not advanced to this position");
    const std::size_t pos = delta.index;
    cache.delta_columns.push_back(std::move(delta));
    cache.exact_ring.emplace_back(pos, std::vector<T>(k_new.begin(), k_new.end()));
    if (cache.exact_ring.size() > cache.w_d)
        cache.exact_ring.erase(cache.exact_ring.begin());
    cache.values.emplace_back(v_new.begin(), v_new.end());
}

// Decoder-side view of key `position`: basis plus the prefix sum of delta
// columns up to it. This is what the score recursion implicitly uses for
// positions outside the exact ring.
template <typename T>
std::vector<T> reconstruct_key(const DeltaKVCache<T>& cache, std::size_t position) {
    if (position >= cache.positions())
        throw BoundsError("reconstruct_key: position past cache");
    std::vector<T> key = cache.basis;
    for (std::size_t t = 1; t <= position; ++t)
        for (const auto& en : cache.delta_columns[t - 1].entries)
            key[en.elem] += en.value;
    return key;
}

struct CacheMemoryReport {
    std::uint64_t delta_scalars = 0;
    std::uint64_t exact_scalars = 0;
    std::uint64_t value_scalars = 0;
    std::uint64_t dense_equivalent = 0; // keys stored densely would cost n * d_head
};

template <typename T>
CacheMemoryReport cache_memory_report(const DeltaKVCache<T>& cache) {
    CacheMemoryReport r;
    for (const auto& col : cache.delta_columns)
        r.delta_scalars += col.nnz();
    r.exact_scalars = static_cast<std::uint64_t>(cache.basis.size());
    for (const auto& [pos, key] : cache.exact_ring)
        r.exact_scalars += key.size();
    for (const auto& v : cache.values)
        r.value_scalars += v.size();
    r.dense_equivalent =
        static_cast<std::uint64_t>(cache.positions()) * static_cast<std::uint64_t>(cache.d_head());
    return r;
}

// Checkpoint format: "DKVC", version u16, then w_d, d_head, value width,
// counts, and the raw little-endian payloads. Round trip is bit-exact.
inline constexpr char kCacheMagic[4] = {'D', 'K', 'V', 'C'};
inline constexpr std::uint16_t kCacheVersion = 1;

inline void save_cache(const DeltaKVCache<float>& cache, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw IoError("save_cache: cannot open " + path);
    os.write(kCacheMagic, 4);
    detail::write_u16(os, kCacheVersion);
    detail::write_u64(os, cache.w_d);
    detail::write_u64(os, cache.d_head());
    const std::size_t d_value = cache.values.empty() ? 0 : cache.values.front().size();
    detail::write_u64(os, d_value);
    detail::write_u64(os, cache.positions());
    detail::write_u64(os, cache.exact_ring.size());
    for (float v : cache.basis)
        detail::write_f32(os, v);
    for (const auto& col : cache.delta_columns) {
        detail::write_u64(os, col.index);
        detail::write_u64(os, col.nnz());
        for (const auto& en : col.entries) {
            detail::write_u32(os, en.elem);
            detail::write_f32(os, en.value);
        }
    }
    for (const auto& [pos, key] : cache.exact_ring) {
        detail::write_u64(os, pos);
        for (float v : key)
            detail::write_f32(os, v);
    }
    for (const auto& val : cache.values)
        for (float v : val)
            detail::write_f32(os, v);
    for (float v : cache.state.reference)
        detail::write_f32(os, v);
    detail::write_u64(os, cache.state.step);
    if (!os)
        throw IoError("save_cache: write failed for " + path);
}

inline DeltaKVCache<float> load_cache(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError("load_cache: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != std::string(kCacheMagic, 4))
        throw IoError("load_cache: bad magic in " + path);
    if (detail::read_u16(is, "version") != kCacheVersion)
        throw IoError("load_cache: unsupported version in " + path);
    DeltaKVCache<float> c;
    c.w_d = detail::read_u64(is, "w_d");
    const std::size_t d_head = detail::read_u64(is, "d_head");
    const std::size_t d_value = detail::read_u64(is, "d_value");
    const std::size_t positions = detail::read_u64(is, "positions");
    const std::size_t ring_size = detail::read_u64(is, "ring size");
    if (positions == 0 || d_head == 0)
        throw IoError("load_cache: empty cache in " + path);
    c.basis.resize(d_head);
    for (float& v : c.basis)
        v = detail::read_f32(is, "basis");
    c.delta_columns.resize(positions - 1);
    for (auto& col : c.delta_columns) {
        col.index = detail::read_u64(is, "column index");
        const std::size_t nnz = detail::read_u64(is, "column nnz");
        if (nnz > d_head)
            throw IoError("load_cache: column nnz exceeds d_head in " + path);
        col.entries.resize(nnz);
        for (auto& en : col.entries) {
            en.elem = detail::read_u32(is, "entry elem");
            en.value = detail::read_f32(is, "entry value");
        }
    }
    c.exact_ring.resize(ring_size);
    for (auto& [pos, key] : c.exact_ring) {
        pos = detail::read_u64(is, "ring position");
        key.resize(d_head);
        for (float& v : key)
            v = detail::read_f32(is, "ring key");
    }
    c.values.resize(positions);
    for (auto& val : c.values) {
        val.resize(d_value);
        for (float& v : val)
            v = detail::read_f32(is, "value");
    }
    c.state.reference.resize(d_head);
    for (float& v : c.state.reference)
        v = detail::read_f32(is, "state reference");
    c.state.step = detail::read_u64(is, "state step");
    is.peek();
    if (!is.eof())
        throw IoError("load_cache: trailing bytes in " + path);
    return c;
}

} // namespace deltattn
