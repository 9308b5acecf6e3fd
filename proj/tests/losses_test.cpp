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
#include <limits>
#include <random>
#include <vector>

#include "gradcheck.hpp"
#include "gtest/gtest.h"
#include "vgm2/geometry.hpp"
#include "vgm2/losses.hpp"
#include "vgm2/markers.hpp"

namespace vgm2 {
namespace {

double logit_of(double p) { return std::log(p) - std::log1p(-p); }

TEST(SimLossTest, PerfectPredictionsCostAlmostNothing) {
    const std::vector<int> u{1, 0, 0, 1, 1};
    std::vector<double> logits;
    for (int v : u) {
        logits.push_back(logit_of(v ? 1.0 - 1e-7 : 1e-7));
    }
    ad::Tape tape;
    EXPECT_NEAR(sim_loss(tape.constant(logits, 5, 1), u).item(), 0.0, 1e-6);
}

TEST(SimLossTest, CoinFlipCostsLog2PerPair) {
    const std::vector<int> u{1, 0, 1, 0, 0, 0, 1};
    ad::Tape tape;
    EXPECT_NEAR(sim_loss(tape.constant(std::vector<double>(7, 0.0), 7, 1), u).item(), 7 * std::log(2.0), 1e-12);
}

TEST(SimLossTest, FourPairsMatchHandSum) {
    const std::vector<double> p{0.9, 0.2, 0.6, 0.35};
    const std::vector<int> u{1, 0, 0, 1};
    double oracle = 0.0;
    std::vector<double> logits;
    for (std::size_t i = 0; i < p.size(); ++i) {
        oracle -= u[i] * std::log(p[i]) + (1 - u[i]) * std::log(1 - p[i]);
        logits.push_back(logit_of(p[i]));
    }
    ad::Tape tape;
    EXPECT_NEAR(sim_loss(tape.constant(logits, 4, 1), u).item(), oracle, 1e-10);
}

TEST(SimLossTest, EmptyBatchIsAnError) {
    ad::Tape tape;
    auto empty = tape.constant(std::vector<double>{}, 0, 1);
    EXPECT_THROW(sim_loss(empty, std::vector<int>{}), ShapeError);
}

ad::Var soft_ece_of(ad::Tape& tape, const std::vector<double>& c, const std::vector<int>& u, CalibrationBins cfg = {}) {
    return soft_ece(tape.constant(c, c.size(), 1), u, cfg);
}

TEST(SoftEceTest, CalibratedSetScoresBelowTolerance) {
    std::vector<double> c;
    std::vector<int> u;
    for (int b = 0; b < 15; ++b) {
        const double center = (b + 0.5) / 15.0;
        for (int i = 0; i < 30; ++i) {
            c.push_back(center);
            u.push_back(i < 2 * b + 1 ? 1 : 0); // 30 * center positives
        }
    }
    ASSERT_NEAR(hard_ece(c, u), 0.0, 1e-12);
    ad::Tape tape;
    EXPECT_LT(soft_ece_of(tape, c, u).item(), 0.02);
}

TEST(SoftEceTest, BalancedAtOneHalfIsZero) {
    std::vector<double> c(100, 0.5);
    std::vector<int> u(100, 0);
    std::fill(u.begin(), u.begin() + 50, 1);
    ad::Tape tape;
    EXPECT_NEAR(soft_ece_of(tape, c, u).item(), 0.0, 2e-4);
}

TEST(SoftEceTest, ConfidentAndWrong) {
    std::vector<double> c(40, 0.9);
    std::vector<int> u(40, 0);
    ad::Tape tape;
    EXPECT_NEAR(soft_ece_of(tape, c, u).item(), 0.9, 1e-6);
    EXPECT_NEAR(hard_ece(c, u), 0.9, 1e-12);
}

TEST(SoftEceTest, ApproachesHardEceAsTemperatureShrinks) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> unif(0.02, 0.98);
    // The miscalibration changes sign along [0,1]. With a one-signed gap the
    // ECE is mean(c - u) for any bin assignment and tau has no effect.
    std::vector<double> c(2000);
    std::vector<int> u(2000);
    for (std::size_t i = 0; i < c.size(); ++i) {
        c[i] = unif(rng);
        u[i] = unif(rng) < c[i] + 0.15 * std::sin(6.0 * std::numbers::pi * c[i]) ? 1 : 0;
    }
    const double hard = hard_ece(c, u);
    double prev = std::numeric_limits<double>::infinity();
    for (double tau : {0.2, 0.05, 0.01}) {
        ad::Tape tape;
        CalibrationBins cfg;
        cfg.tau = tau;
        const double gap = std::abs(soft_ece_of(tape, c, u, cfg).item() - hard);
        EXPECT_LT(gap, prev) << "tau=" << tau;
        prev = gap;
    }
}

TEST(SoftEceTest, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(32);
    std::uniform_real_distribution<double> unif(0.05, 0.95);
    for (int t = 0; t < 5; ++t) {
        std::vector<double> c(12);
        std::vector<int> u(12);
        for (std::size_t i = 0; i < c.size(); ++i) {
            c[i] = unif(rng);
            u[i] = unif(rng) < 0.5;
        }
        auto build = [&](ad::Tape&, const ad::Var& x) { return soft_ece(x, u); };
        EXPECT_LT(testing::check_gradient(build, c, 12, 1).relative_error(), 1e-4);
    }
}

TEST(SoftEceTest, NonNegative) {
    std::mt19937_64 rng(33);
    std::uniform_real_distribution<double> unif(0.001, 0.999);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> c(20);
        std::vector<int> u(20);
        for (std::size_t i = 0; i < c.size(); ++i) {
            c[i] = unif(rng);
            u[i] = unif(rng) < 0.3;
        }
        ad::Tape tape;
        EXPECT_GE(soft_ece_of(tape, c, u).item(), 0.0);
    }
}

TEST(ReliabilityTest, BinsAndEceAgree) {
    const std::vector<double> c{0.05, 0.06, 0.5, 0.51, 0.99, 1.0};
    const std::vector<int> u{0, 0, 1, 0, 1, 1};
    const auto bins = reliability_bins(c, u);
    std::size_t populated = 0;
    double ece = 0.0;
    for (const auto& b : bins) {
        populated += b.count > 0;
        ece += b.mass * std::abs(b.accuracy - b.confidence);
    }
    EXPECT_EQ(populated, 3u);
    EXPECT_NEAR(hard_ece(c, u), ece, 1e-15);
    EXPECT_THROW(reliability_bins(std::vector<double>{}, std::vector<int>{}), ShapeError);
}

TEST(ScheduleTest, CosineEndpoints) {
    LossWeights w;
    w.lambda0 = 0.4;
    w.horizon = 30;
    EXPECT_DOUBLE_EQ(w.lambda_at(0), 0.4);
    EXPECT_NEAR(w.lambda_at(15), 0.2, 1e-15);
    EXPECT_NEAR(w.lambda_at(30), 0.0, 1e-15);
    w.schedule = LambdaSchedule::constant;
    EXPECT_DOUBLE_EQ(w.lambda_at(30), 0.4);
}

TEST(TotalLossTest, ZeroWeightsLeaveUmap) {
    ad::Tape tape;
    LossTerms t{tape.constant(1.25), tape.constant(3.0), tape.constant(0.2), tape.constant(7.0)};
    LossWeights w;
    w.gamma = w.eta = w.lambda0 = 0.0;
    EXPECT_DOUBLE_EQ(total_loss(t, w, 3).item(), 1.25);
    w.gamma = 2.0;
    w.eta = 0.5;
    w.lambda0 = 1.0;
    w.schedule = LambdaSchedule::constant;
    EXPECT_DOUBLE_EQ(total_loss(t, w, 3).item(), 1.25 + 6.0 + 0.1 + 7.0);
}

TEST(TotalLossTest, NonFiniteTermIsNamed) {
    ad::Tape tape;
    LossTerms t{tape.constant(1.0), tape.constant(std::numeric_limits<double>::infinity()), tape.constant(0.0),
                tape.constant(0.0)};
    try {
        (void)total_loss(t, LossWeights{}, 0);
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("sim"), std::string::npos);
    }
}

// Every parameter group of a small client: encoder weights and raw marker values.
TEST(TotalLossTest, GradientMatchesFiniteDifferences) {
    Rng rng(41);
    std::normal_distribution<double> nd;
    Matrix x(8, 3);
    for (auto& v : x.data) {
        v = nd(rng);
    }
    const std::vector<int> y{0, 0, 0, 1, 1, 1, 2, 2};
    const auto graph = build_knn_graph(x, 3);
    auto edges = graph.edges;
    auto neg = sample_negative_edges(graph, 2, rng);
    edges.insert(edges.end(), neg.begin(), neg.end());
    const auto pairs = sample_pairs(y, 12, 0.5, rng);
    auto enc = make_encoder(3, {5}, 2, rng);
    std::vector<double> diff, same;
    const auto z0 = encode(enc, x);
    for (std::size_t t = 0; t < pairs.size(); ++t) {
        const double d = std::sqrt(squared_distance(z0.row(pairs.pairs[t].first), z0.row(pairs.pairs[t].second)));
        (pairs.same[t] ? same : diff).push_back(d);
    }
    const auto q0 = init_posterior_from_distances(2, diff, same);
    auto prior = q0;
    prior.relation[0].components[1].m += 0.5;
    prior.relation[1].concentration[0] = 2.0;

    std::vector<double> flat;
    for (const auto& p : enc.layers) {
        flat.insert(flat.end(), p.value.begin(), p.value.end());
    }
    const std::size_t n_enc = flat.size();
    const auto raw = to_unconstrained(q0);
    flat.insert(flat.end(), raw.begin(), raw.end());

    LossWeights w;
    w.schedule = LambdaSchedule::constant;
    w.lambda0 = 0.3;
    auto build = [&](ad::Tape& tape, const ad::Var& theta) {
        std::vector<ad::Var> leaves;
        std::size_t off = 0;
        for (const auto& p : enc.layers) {
            leaves.push_back(ad::reshape(ad::slice(theta, off, p.value.size()), p.rows, p.cols));
            off += p.value.size();
        }
        auto z = encoder_forward(leaves, tape.constant(x.data, x.rows, x.cols));
        const auto mv = constrain(ad::slice(theta, n_enc, 20), 2);
        auto s = pair_distances(z, pairs);
        auto logit = pi1_logit(s, mv, RelationPriors::from_frequency(pairs.same_fraction()));
        LossTerms terms{umap_loss(edges, z, 1.577, 0.895), sim_loss(logit, pairs.same),
                        soft_ece(ad::sigmoid(logit), pairs.same), total_kl(mv, prior)};
        return total_loss(terms, w, 0);
    };
    const auto r = testing::check_gradient(build, flat, 1, flat.size());
    EXPECT_LT(r.relative_error(), 1e-4);
}

} // namespace
} // namespace vgm2
