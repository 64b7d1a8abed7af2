// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "deltattn/errors.hpp"
#include "deltattn/matrix.hpp"
#include "deltattn/rng.hpp"

namespace deltattn {

// Key generation process. Random-walk keys drift slowly between positions,
// which is the temporal similarity the delta encoding exploits; iid keys are
// the adversarial baseline with no similarity at all.
enum class KeyProcess : std::uint8_t { IidGaussian, RandomWalk, File };

enum class Scenario : std::uint8_t { PrefillOnly, EndToEnd };

namespace detail {

// Stream index layout: 3 streams per head, one per tensor role.
enum class TensorRole : std::uint64_t { Query = 0, Key = 1, Value = 2 };

inline std::uint64_t stream_index(std::size_t head, TensorRole role) {
    return static_cast<std::uint64_t>(head) * 3 + static_cast<std::uint64_t>(role);
}

} // namespace detail

// One head's worth of iid standard normal entries, row-major generation
// order. Deterministic in (seed, head, role).
inline MatrixF gen_gaussian_matrix(std::uint64_t seed, std::size_t head,
                                   detail::TensorRole role, std::size_t rows,
                                   std::size_t cols) {
    Xoshiro256pp rng(derive_stream_seed(seed, detail::stream_index(head, role)));
    MatrixF m(rows, cols);
    for (auto& v : m.data())
        v = static_cast<float>(rng.gaussian());
    return m;
}

// Random-walk keys: row 0 is standard normal, then each element performs an
// independent gaussian walk with step deviation sigma. Accumulation happens
// in float so the walk is exactly what downstream f32 consumers see. A zero
// sigma degenerates to constant keys (the step contribution is exactly 0).
inline MatrixF gen_random_walk_keys(std::uint64_t seed, std::size_t head, std::size_t rows,
                                    std::size_t cols, double sigma) {
    if (sigma < 0.0)
        throw ConfigError("gen_random_walk_keys: sigma must be >= 0");
    Xoshiro256pp rng(derive_stream_seed(seed, detail::stream_index(head, detail::TensorRole::Key)));
    MatrixF m(rows, cols);
    for (std::size_t e = 0; e < cols; ++e)
        m(0, e) = static_cast<float>(rng.gaussian());
    for (std::size_t t = 1; t < rows; ++t)
        for (std::size_t e = 0; e < cols; ++e)
            m(t, e) = m(t - 1, e) + static_cast<float>(sigma * rng.gaussian());
    return m;
}

} // namespace deltattn
