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

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "gtest/gtest.h"
#include "vgm2/attack.hpp"
#include "vgm2/privacy.hpp"

namespace vgm2 {
namespace {

RelationMarkerPosterior random_posterior(std::size_t K, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.3, 4.0);
    RelationMarkerPosterior q;
    q.K = K;
    for (auto& rel : q.relation) {
        for (std::size_t c = 0; c < K; ++c) {
            rel.concentration.push_back(u(rng));
            rel.components.push_back(NigParams{u(rng) - 1.0, u(rng), 1.0 + u(rng), u(rng)});
        }
    }
    return q;
}

TEST(PayloadTest, EncodeDecodeRoundTrip) {
    std::mt19937_64 rng(1);
    auto p = make_payload(random_posterior(3, rng), 123456789012ULL);
    p.flags = kFlagDpNoised;
    const auto bytes = encode_payload(p);
    EXPECT_EQ(bytes.size(), 16u + 240u);
    EXPECT_EQ(bytes[0], 'V');
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[5], kFlagDpNoised);
    EXPECT_EQ(bytes[6], 3);
    EXPECT_EQ(decode_payload(bytes), p);
}

TEST(PayloadTest, SizesFollowScalarFormula) {
    std::mt19937_64 rng(2);
    for (std::size_t K : {1u, 2u, 3u, 5u}) {
        const auto p = make_payload(random_posterior(K, rng), 1);
        EXPECT_EQ(p.scalar_count(), 10 * K);
        EXPECT_EQ(encode_payload(p).size(), 16 + 80 * K);
    }
}

TEST(PayloadTest, RejectsMalformedBytes) {
    std::mt19937_64 rng(3);
    auto bytes = encode_payload(make_payload(random_posterior(2, rng), 1));
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_payload(bad), FormatError);
    bad = bytes;
    bad.pop_back();
    EXPECT_THROW(decode_payload(bad), FormatError);
    bad = bytes;
    bad[4] = 9;
    EXPECT_THROW(decode_payload(bad), FormatError);
    EXPECT_THROW(decode_payload(std::vector<std::uint8_t>(5)), FormatError);
}

TEST(MaskTest, MaskIsAntisymmetric) {
    const auto ab = pair_mask(77, 3, 8, 10);
    const auto ba = pair_mask(77, 8, 3, 10);
    EXPECT_EQ(ab, ba); // same stream; the sign is applied by the owner
    SufficientStatsPayload zero;
    zero.K = 1;
    zero.set_values(std::vector<double>(10, 0.0));
    const std::vector<std::uint64_t> cohort{3, 8};
    const auto m3 = mask_payload(zero, 3, cohort, 77).payload;
    const auto m8 = mask_payload(zero, 8, cohort, 77).payload;
    for (std::size_t i = 0; i < 10; ++i) {
        EXPECT_EQ(m3.slots[i] + m8.slots[i], 0u);
    }
}

TEST(MaskTest, MaskedSumEqualsPlainSumBitExactly) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        for (std::size_t n = 2; n <= 8; ++n) {
            std::vector<std::uint64_t> cohort(n);
            std::iota(cohort.begin(), cohort.end(), 100);
            std::vector<SufficientStatsPayload> plain, masked;
            for (auto id : cohort) {
                plain.push_back(weighted_coordinates_payload(random_posterior(3, rng), 10 + id,
                                                             AggregationMode::moment_match));
                masked.push_back(mask_payload(plain.back(), id, cohort, seed * 31 + n).payload);
            }
            std::vector<std::uint64_t> fixed_sum(30, 0);
            for (const auto& p : plain) {
                for (std::size_t i = 0; i < 30; ++i) {
                    fixed_sum[i] += to_fixed(p.value(i));
                }
            }
            const auto s = sum_masked(masked);
            for (std::size_t i = 0; i < 30; ++i) {
                EXPECT_EQ(s.values[i], from_fixed(fixed_sum[i]));
            }
        }
    }
}

TEST(MaskTest, MaskedSlotsDifferFromPlaintext) {
    std::size_t differ = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        const auto plain = make_payload(random_posterior(3, rng), 5);
        const std::vector<std::uint64_t> cohort{0, 1, 2};
        const auto m = mask_payload(plain, 1, cohort, seed);
        for (std::size_t i = 0; i < 30; ++i) {
            differ += m.payload.slots[i] != to_fixed(plain.value(i));
            ++total;
        }
    }
    EXPECT_GE(static_cast<double>(differ) / static_cast<double>(total), 0.99);
}

TEST(MaskTest, DropoutLeavesGarbage) {
    std::mt19937_64 rng(4);
    const std::vector<std::uint64_t> cohort{0, 1, 2, 3};
    std::vector<SufficientStatsPayload> plain, masked;
    for (auto id : cohort) {
        plain.push_back(make_payload(random_posterior(2, rng), 1));
        masked.push_back(mask_payload(plain.back(), id, cohort, 9).payload);
    }
    masked.pop_back();
    const auto s = sum_masked(masked);
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < 20; ++i) {
        double plain_sum = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            plain_sum += plain[k].value(i);
        }
        mismatches += std::abs(s.values[i] - plain_sum) > 1e-6;
    }
    EXPECT_GT(mismatches, 15u);
}

TEST(MaskTest, CohortOfOneIsVacuous) {
    std::mt19937_64 rng(5);
    const auto plain = make_payload(random_posterior(1, rng), 1);
    const std::vector<std::uint64_t> cohort{4};
    const auto m = mask_payload(plain, 4, cohort, 1);
    EXPECT_TRUE(m.vacuous);
    EXPECT_EQ(sum_masked(std::vector<SufficientStatsPayload>{m.payload}).values[0],
              from_fixed(to_fixed(plain.value(0))));
}

TEST(MaskTest, SecureAggregationMatchesPlainAggregation) {
    std::mt19937_64 rng(6);
    const std::vector<std::uint64_t> cohort{2, 5, 7};
    std::vector<SufficientStatsPayload> plain, masked;
    for (auto id : cohort) {
        const auto q = random_posterior(2, rng);
        plain.push_back(make_payload(q, 10 * id));
        masked.push_back(
            mask_payload(weighted_coordinates_payload(q, 10 * id, AggregationMode::moment_match), id, cohort, 3)
                .payload);
    }
    const auto s = sum_masked(masked);
    const auto secure = aggregate_from_sum(s.values, s.total_weight, 2, AggregationMode::moment_match).posterior;
    const auto direct = aggregate(plain).posterior;
    const auto a = to_sufficient_stats(secure), b = to_sufficient_stats(direct);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_NEAR(a[i], b[i], 1e-6 * std::max(1.0, std::abs(b[i])));
    }
}

TEST(DpTest, ZeroNoiseOnlyClips) {
    std::mt19937_64 rng(7);
    const auto q = random_posterior(2, rng);
    const auto plain = make_payload(q, 1);
    DPConfig cfg;
    cfg.noise_multiplier = 0.0;
    cfg.clip_norm = 1e6;
    Rng r(1);
    const auto out = dp_noise(plain, cfg, r);
    EXPECT_TRUE(out.dp_noised());
    const auto a = out.values(), b = plain.values();
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_NEAR(a[i], b[i], 1e-12 * std::max(1.0, std::abs(b[i])));
    }
}

TEST(DpTest, ClipHalvesALongVector) {
    std::vector<double> v{3.0, 4.0}; // norm 5 = 2C
    clip_l2(v, 2.5);
    EXPECT_NEAR(std::hypot(v[0], v[1]), 2.5, 1e-15);
    std::vector<double> short_v{0.3, 0.4};
    clip_l2(short_v, 2.5);
    EXPECT_EQ(short_v, (std::vector<double>{0.3, 0.4}));
}

TEST(DpTest, NoiseStandardDeviation) {
    const double sigma = 0.7, C = 2.0;
    Rng rng(8);
    const std::vector<double> zero(5, 0.0);
    double ss = 0.0;
    std::size_t n = 0;
    for (int t = 0; t < 2000; ++t) { // 10^4 draws
        for (double x : gaussian_mechanism(zero, C, sigma, rng)) {
            ss += x * x;
            ++n;
        }
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    EXPECT_NEAR(sd, sigma * C, 0.03 * sigma * C);
}

// Averaging N noised vectors equals averaging first and adding noise of std sigma C / sqrt(N).
TEST(DpTest, NoiseCommutesWithAveraging) {
    const double sigma = 1.0, C = 1.5;
    const std::vector<std::vector<double>> clients{{0.2, -0.1, 0.3}, {0.5, 0.0, -0.4}, {-0.3, 0.2, 0.1}};
    Rng rng(9);
    const int trials = 10000;
    std::vector<double> s(3, 0.0), ss(3, 0.0);
    for (int t = 0; t < trials; ++t) {
        std::vector<double> avg(3, 0.0);
        for (const auto& v : clients) {
            const auto nv = gaussian_mechanism(v, C, sigma, rng);
            for (int i = 0; i < 3; ++i) {
                avg[i] += nv[i] / 3.0;
            }
        }
        for (int i = 0; i < 3; ++i) {
            s[i] += avg[i];
            ss[i] += avg[i] * avg[i];
        }
    }
    const double expected_sd = sigma * C / std::sqrt(3.0);
    for (int i = 0; i < 3; ++i) {
        const double exact_mean = (clients[0][i] + clients[1][i] + clients[2][i]) / 3.0;
        const double mean = s[i] / trials;
        const double sd = std::sqrt(ss[i] / trials - mean * mean);
        EXPECT_NEAR(mean, exact_mean, 0.05 * expected_sd);
        EXPECT_NEAR(sd, expected_sd, 0.05 * expected_sd);
    }
}

TEST(DpTest, NoisedPayloadStaysValid) {
    std::mt19937_64 rng(10);
    DPConfig cfg;
    cfg.noise_multiplier = 1.0;
    Rng r(2);
    for (int t = 0; t < 50; ++t) {
        const auto out = dp_noise(make_payload(random_posterior(3, rng), 1), cfg, r);
        EXPECT_NO_THROW(payload_posterior(out).validate());
    }
}

// Large noise in log space must not round a shape parameter down to exactly 1.
TEST(DpTest, HeavyNoiseStaysInsideTheFamily) {
    std::mt19937_64 rng(11);
    DPConfig cfg;
    cfg.noise_multiplier = 8.0;
    Rng r(3);
    for (int t = 0; t < 200; ++t) {
        const auto q = payload_posterior(dp_noise(make_payload(random_posterior(3, rng), 1), cfg, r));
        EXPECT_NO_THROW(q.validate());
        for (const auto& rel : q.relation) {
            for (const auto& n : rel.components) {
                EXPECT_GE(n.alpha, kShapeMin * (1 - 1e-12));
                EXPECT_NO_THROW(check_nig(n));
            }
        }
    }
}

TEST(AccountantTest, EdgeCases) {
    DPConfig cfg;
    cfg.noise_multiplier = 1.0;
    EXPECT_EQ(privacy_accountant(cfg, 0).first, 0.0);
    cfg.noise_multiplier = 0.0;
    EXPECT_TRUE(std::isinf(privacy_accountant(cfg, 3).first));
}

TEST(AccountantTest, SingleGaussianReleaseMatchesAnalyticBound) {
    DPConfig cfg;
    cfg.noise_multiplier = 1.0;
    cfg.delta = 1e-5;
    // continuous minimum of a/(2 s^2) + log(1/delta)/(a-1) at s = 1
    const double L = std::log(1.0 / cfg.delta);
    const double analytic = 0.5 + std::sqrt(2.0 * L);
    const double eps = privacy_accountant(cfg, 1).first;
    EXPECT_NEAR(eps, analytic, 0.05 * analytic);
    EXPECT_NEAR(eps, 5.30, 0.01);
}

TEST(AccountantTest, MonotoneOnGrid) {
    for (double sigma : {0.8, 1.0, 2.0}) {
        for (double q : {0.1, 0.3, 1.0}) {
            DPConfig cfg;
            cfg.noise_multiplier = sigma;
            cfg.sampling_rate = q;
            double prev = 0.0;
            for (std::size_t T : {1u, 10u, 100u}) {
                const double e = privacy_accountant(cfg, T).first;
                EXPECT_GE(e, prev);
                EXPECT_GE(privacy_accountant(cfg, 2 * T).first, e);
                prev = e;
                DPConfig louder = cfg;
                louder.noise_multiplier *= 1.5;
                EXPECT_LT(privacy_accountant(louder, T).first, e);
                if (q < 1.0) {
                    DPConfig denser = cfg;
                    denser.sampling_rate = std::min(1.0, q * 2);
                    EXPECT_GT(privacy_accountant(denser, T).first, e);
                }
            }
        }
    }
}

TEST(AccountantTest, SubsampledMatchesFullAtRateOne) {
    for (int order : {2, 5, 17}) {
        EXPECT_NEAR(rdp_subsampled_gaussian(0.999999999, 1.3, order), order / (2 * 1.3 * 1.3), 1e-6);
    }
}

TEST(AttackTest, AucBasics) {
    EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
    EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{0, 0, 1, 1}), 0.0);
    EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<int>{0, 1, 0, 1}), 0.5);
    EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ConfigError);
}

TEST(AttackTest, ShuffledLabelsGiveChance) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> nd;
        std::vector<AttackExample> ex;
        for (int i = 0; i < 2000; ++i) {
            ex.push_back({{nd(rng), nd(rng), nd(rng)}, i % 2});
        }
        Rng arng(seed);
        const double auc = mi_attack(ex, arng);
        EXPECT_GE(auc, 0.45);
        EXPECT_LE(auc, 0.55);
        total += auc;
    }
    EXPECT_NEAR(total / 5, 0.5, 0.03);
}

TEST(AttackTest, SeparableFeaturesAreDetected) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd;
    std::vector<AttackExample> ex;
    for (int i = 0; i < 200; ++i) {
        const int m = i % 2;
        ex.push_back({{nd(rng) + 3.0 * m, nd(rng)}, m});
    }
    Rng arng(1);
    EXPECT_GT(mi_attack(ex, arng), 0.95);
}

TEST(AttackTest, SingleClassTargetsAreRejected) {
    std::vector<AttackExample> ex(6, AttackExample{{1.0}, 1});
    Rng rng(1);
    EXPECT_THROW(mi_attack(ex, rng), ConfigError);
}

TEST(AttackTest, FeaturesFromPosterior) {
    std::mt19937_64 rng(12);
    const auto q = random_posterior(3, rng);
    const auto f = summary_features(q);
    ASSERT_EQ(f.size(), 18u);
    EXPECT_DOUBLE_EQ(f[0], q.relation[0].components[0].m);
    EXPECT_DOUBLE_EQ(f[1], q.relation[0].components[0].beta / (q.relation[0].components[0].alpha - 1));
}

} // namespace
} // namespace vgm2
