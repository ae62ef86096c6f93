// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

#include "lgd/tensor.hpp"

namespace lgd {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Counter-based seed derivation: a master seed, a stream name and a tuple of
/// indices map to an independent 64-bit seed. Subsystems derive their own
/// streams so results never depend on the order in which streams are consumed.
///
///   seed = mix(mix(master ^ fnv1a(name)) ^ i0) ... ^ ik)
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                          std::initializer_list<std::uint64_t> indices = {}) noexcept;

/// Seeded generator with the handful of draws the library needs.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }
    nn::Tensor2 normal_tensor(std::size_t rows, std::size_t cols);
    void fill_normal(std::span<double> out);
    std::vector<std::size_t> permutation(std::size_t n);

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace lgd
