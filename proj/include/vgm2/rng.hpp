//
// Copyright 2026 The VGM2 Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#ifndef VGM2_RNG_HPP
#define VGM2_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>

namespace vgm2 {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a list of tags
/// (round, client id, purpose, ...). Every stochastic step takes its RNG
/// from here so reruns are exact.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = mix64(base);
    for (auto t : tags) {
        h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
    }
    return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> tags) { return Rng(derive_seed(base, tags)); }

/// Purpose tags used with derive_seed.
enum class Stream : std::uint64_t {
    partition = 1,
    encoder_init = 2,
    pairs = 3,
    negatives = 4,
    client_sampling = 5,
    dp_noise = 6,
    mask = 7,
    attack = 8,
    data = 9,
    split = 10,
};

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

} // namespace vgm2

#endif
