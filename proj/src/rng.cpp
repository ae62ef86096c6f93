// SPDX-License-Identifier: Apache-2.0
#include "lgd/rng.hpp"

#include <algorithm>
#include <numeric>

namespace lgd {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                          std::initializer_list<std::uint64_t> indices) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : stream) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    std::uint64_t s = splitmix64(master ^ h);
    for (std::uint64_t i : indices) s = splitmix64(s ^ splitmix64(i + 0x632be59bd9b4e019ULL));
    return s;
}

nn::Tensor2 Rng::normal_tensor(std::size_t rows, std::size_t cols) {
    nn::Tensor2 t(rows, cols);
    fill_normal(t.values());
    return t;
}

void Rng::fill_normal(std::span<double> out) {
    for (double& v : out) v = normal();
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[below(i)]);
    return idx;
}

}  // namespace lgd
