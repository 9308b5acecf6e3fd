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

#ifndef VGM2_PAYLOAD_HPP
#define VGM2_PAYLOAD_HPP

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "markers.hpp"

/**
 * @file payload.hpp
 *
 * @brief The per-client upload and its byte layout.
 *
 * Layout (all little-endian):
 *
 *     offset  size  field
 *     0       4     magic "VGM2"
 *     4       1     format version (1)
 *     5       1     flag bits: 0x01 masked, 0x02 dp-noised
 *     6       2     K (u16)
 *     8       8     client weight n_k (u64)
 *     16      8*10K slots
 *
 * Slots hold IEEE-754 doubles in the flat posterior order, except for masked
 * payloads, whose slots are two's-complement fixed-point integers of the
 * weighted aggregation coordinates (see privacy.hpp).
 */

namespace vgm2 {

inline constexpr std::size_t kPayloadHeaderBytes = 16;
inline constexpr std::uint8_t kPayloadVersion = 1;

enum PayloadFlag : std::uint8_t {
    kFlagMasked = 0x01,
    kFlagDpNoised = 0x02,
};

struct SufficientStatsPayload {
    std::uint8_t flags = 0;
    std::uint16_t K = 0;
    std::uint64_t weight = 0; ///< n_k
    std::vector<std::uint64_t> slots;

    bool operator==(const SufficientStatsPayload&) const = default;

    bool masked() const { return (flags & kFlagMasked) != 0; }
    bool dp_noised() const { return (flags & kFlagDpNoised) != 0; }

    std::size_t scalar_count() const { return slots.size(); }
    std::size_t byte_size() const { return kPayloadHeaderBytes + 8 * slots.size(); }

    double value(std::size_t i) const { return std::bit_cast<double>(slots[i]); }
    std::vector<double> values() const {
        std::vector<double> out(slots.size());
        for (std::size_t i = 0; i < slots.size(); ++i) {
            out[i] = value(i);
        }
        return out;
    }
    void set_values(std::span<const double> v) {
        slots.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            slots[i] = std::bit_cast<std::uint64_t>(v[i]);
        }
    }
};

inline SufficientStatsPayload make_payload(const RelationMarkerPosterior& q, std::uint64_t weight) {
    if (q.K > 0xFFFF) {
        throw FormatError("make_payload: K does not fit in 16 bits");
    }
    SufficientStatsPayload p;
    p.K = static_cast<std::uint16_t>(q.K);
    p.weight = weight;
    p.set_values(to_sufficient_stats(q));
    return p;
}

inline RelationMarkerPosterior payload_posterior(const SufficientStatsPayload& p) {
    if (p.masked()) {
        throw FormatError("payload_posterior: masked payloads carry no individual posterior");
    }
    return from_sufficient_stats(p.values(), p.K);
}

namespace detail {

inline void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
    for (int b = 0; b < bytes; ++b) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
    }
}

inline std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t off, int bytes) {
    std::uint64_t v = 0;
    for (int b = 0; b < bytes; ++b) {
        v |= static_cast<std::uint64_t>(in[off + b]) << (8 * b);
    }
    return v;
}

} // namespace detail

inline std::vector<std::uint8_t> encode_payload(const SufficientStatsPayload& p) {
    if (p.slots.size() != RelationMarkerPosterior::scalar_count(p.K)) {
        throw FormatError("encode_payload: " + std::to_string(p.slots.size()) + " slots for K=" + std::to_string(p.K));
    }
    std::vector<std::uint8_t> out;
    out.reserve(p.byte_size());
    out.insert(out.end(), {'V', 'G', 'M', '2'});
    out.push_back(kPayloadVersion);
    out.push_back(p.flags);
    detail::put_le(out, p.K, 2);
    detail::put_le(out, p.weight, 8);
    for (auto s : p.slots) {
        detail::put_le(out, s, 8);
    }
    return out;
}

inline SufficientStatsPayload decode_payload(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kPayloadHeaderBytes) {
        throw FormatError("decode_payload: " + std::to_string(bytes.size()) + " bytes is shorter than the header");
    }
    if (std::memcmp(bytes.data(), "VGM2", 4) != 0) {
        throw FormatError("decode_payload: bad magic");
    }
    if (bytes[4] != kPayloadVersion) {
        throw FormatError("decode_payload: unsupported version " + std::to_string(bytes[4]));
    }
    SufficientStatsPayload p;
    p.flags = bytes[5];
    p.K = static_cast<std::uint16_t>(detail::get_le(bytes, 6, 2));
    p.weight = detail::get_le(bytes, 8, 8);
    const std::size_t n = RelationMarkerPosterior::scalar_count(p.K);
    if (p.K == 0 || bytes.size() != kPayloadHeaderBytes + 8 * n) {
        throw FormatError("decode_payload: length " + std::to_string(bytes.size()) + " does not match K=" +
                          std::to_string(p.K));
    }
    p.slots.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        p.slots[i] = detail::get_le(bytes, kPayloadHeaderBytes + 8 * i, 8);
    }
    return p;
}

} // namespace vgm2

#endif
