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

#ifndef VGM2_RUNTIME_HPP
#define VGM2_RUNTIME_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "adam.hpp"
#include "aggregation.hpp"
#include "attack.hpp"
#include "config.hpp"
#include "data.hpp"
#include "error.hpp"
#include "geometry.hpp"
#include "losses.hpp"
#include "markers.hpp"
#include "payload.hpp"
#include "privacy.hpp"
#include "rng.hpp"

/**
 * @file runtime.hpp
 *
 * @brief Round-based federation: client local training, payload upload,
 * server aggregation, evaluation, and the two baselines.
 *
 * One round: the server samples a cohort, broadcasts the current prior,
 * each cohort member trains locally for E epochs and uploads its marker
 * posterior, and the server pools the uploads into the next prior. Clients
 * in a round train on separate threads; every random draw comes from a
 * stream derived from (seed, purpose, round, client), so the thread
 * schedule does not affect results.
 */

namespace vgm2 {

/// One client's local data after the train/test split.
struct ClientData {
    std::size_t id = 0;
    Matrix x_train;
    std::vector<int> y_train;
    Matrix x_test;
    std::vector<int> y_test;
    std::vector<int> classes; ///< labels present in the training split, sorted
};

struct ClientState {
    ClientData data;
    EncoderParams encoder;
    std::vector<AdamState> encoder_opt;
    std::size_t K = 0;
    Parameter markers{"markers", 1, 1, {0.0}}; ///< unconstrained (1 x 10K)
    AdamState marker_opt;
    Parameter prior_logit{"prior_logit", 1, 1, {0.0}};
    AdamState prior_opt;
    RelationPriors priors{};
    NeighborGraph graph;
    bool skipped = false;
    std::string skip_reason;
    std::size_t participations = 0;

    RelationMarkerPosterior posterior() const { return from_unconstrained(markers.value, K); }

    void set_posterior(const RelationMarkerPosterior& q) {
        markers = Parameter{"markers", 1, 10 * q.K, to_unconstrained(q)};
        marker_opt = AdamState{};
    }
};

/// Loss values of the last local step.
struct StepValues {
    double umap = 0.0;
    double sim = 0.0;
    double cal = 0.0;
    double kl = 0.0;
    double total = 0.0;
    std::size_t underflow = 0;
    bool single_class = false;
};

/// Optional hook that edits the sampled pair batch (used by the attack harness).
using PairHook = std::function<void(PairIndexSet&, std::span<const int> labels)>;

struct ClientEval {
    double f1 = 0.0;
    double ece = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> confidences; ///< pi_1 of each (test, support) pair
    std::vector<int> same;
    std::size_t underflow = 0;
};

/// Per-client entry of a round record.
struct ClientRoundEntry {
    std::size_t client = 0;
    std::size_t n_train = 0;
    StepValues loss;
    std::size_t bytes_up = 0;
    std::size_t bytes_down = 0;
    double f1 = 0.0;
    double ece = 0.0;
    std::size_t eval_underflow = 0;
    std::size_t saturated = 0; ///< slots clamped into the fixed-point range before masking
};

struct RoundRecord {
    std::size_t round = 0;
    std::vector<std::size_t> cohort;
    std::vector<std::pair<std::size_t, std::string>> skipped;
    std::vector<ClientRoundEntry> clients;
    double lambda = 0.0;
    std::size_t dirichlet_repairs = 0;
    std::size_t nig_repairs = 0;
    bool vacuous_mask = false;
    double epsilon = 0.0;
    double wall_seconds = 0.0; ///< kept out of the digest
};

/// Final per-client metrics after the last round.
struct ClientMetrics {
    std::size_t client = 0;
    bool skipped = false;
    bool single_class = false;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    double f1 = 0.0;
    double ece = 0.0;
    std::size_t bytes_up = 0;
    std::size_t bytes_down = 0;
};

struct RunResult {
    Method method = Method::vgm2;
    std::uint64_t seed = 0;
    std::string dataset;
    std::vector<RoundRecord> rounds;
    std::vector<ClientMetrics> clients;
    std::vector<double> confidences; ///< pooled evaluation pairs, all clients
    std::vector<int> same;
    RelationMarkerPosterior final_prior;
    RdpAccountant accountant;
    double epsilon = 0.0;
    std::size_t payload_scalars = 0;
    std::size_t payload_bytes = 0;
    double wall_seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Data

inline Dataset load_dataset(const RunConfig& cfg, std::uint64_t seed) {
    auto rng = make_rng(seed, {tag(Stream::data)});
    if (cfg.dataset == "blobs") {
        return make_blobs(BlobSpec{cfg.classes, cfg.modes_per_class, cfg.per_class, cfg.input_dim, cfg.blob_box,
                                   cfg.blob_noise},
                          rng);
    }
    if (cfg.dataset == "spirals") {
        return make_spirals(CurveSpec{cfg.classes, cfg.per_class, cfg.input_dim, cfg.spiral_noise, cfg.spiral_turns},
                            rng);
    }
    if (cfg.dataset == "csv") {
        return load_csv(cfg.data_path);
    }
    return load_idx(cfg.data_path, cfg.labels_path, cfg.data_limit);
}

namespace detail {

inline Matrix gather(const Matrix& x, std::span<const std::size_t> idx) { return x.select_rows(idx); }

inline std::vector<int> gather_labels(const std::vector<int>& y, std::span<const std::size_t> idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) {
        out.push_back(y[i]);
    }
    return out;
}

inline double distance(std::span<const double> a, std::span<const double> b) {
    return std::sqrt(squared_distance(a, b));
}

} // namespace detail

/// Quantile initialization of a client's markers from its current embedding.
inline RelationMarkerPosterior quantile_markers(const ClientState& c, const RunConfig& cfg, Rng& rng) {
    const Matrix z = encode(c.encoder, c.data.x_train);
    const auto pairs = sample_pairs(c.data.y_train, cfg.pair_budget, cfg.balance_ratio, rng);
    std::vector<double> diff, same;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto [i, j] = pairs.pairs[p];
        (pairs.same[p] ? same : diff).push_back(detail::distance(z.row(i), z.row(j)));
    }
    return init_posterior_from_distances(cfg.K, diff, same);
}

/// Builds one client: split, encoder, neighbor graph and initial markers.
inline ClientState make_client(const Dataset& data, const ShardPartition& part, std::size_t k, const RunConfig& cfg,
                               std::uint64_t seed) {
    ClientState c;
    c.K = cfg.K;
    c.data.id = k;
    auto split_rng = make_rng(seed, {tag(Stream::split), k});
    const auto split = split_client(part, k, cfg.train_fraction, split_rng);
    c.data.x_train = detail::gather(data.x, split.train);
    c.data.y_train = detail::gather_labels(data.y, split.train);
    c.data.x_test = detail::gather(data.x, split.test);
    c.data.y_test = detail::gather_labels(data.y, split.test);
    c.data.classes = c.data.y_train;
    std::sort(c.data.classes.begin(), c.data.classes.end());
    c.data.classes.erase(std::unique(c.data.classes.begin(), c.data.classes.end()), c.data.classes.end());

    auto enc_rng = make_rng(seed, {tag(Stream::encoder_init), k});
    c.encoder = make_encoder(data.x.cols, cfg.hidden, cfg.latent_dim, enc_rng);
    c.encoder_opt.assign(c.encoder.layers.size(), AdamState{});

    if (c.data.y_train.size() < cfg.n_neighbors + 1) {
        c.skipped = true;
        c.skip_reason = "client " + std::to_string(k) + " has " + std::to_string(c.data.y_train.size()) +
                        " training samples, fewer than n_neighbors + 1 = " + std::to_string(cfg.n_neighbors + 1);
        return c;
    }
    if (c.data.y_test.empty()) {
        c.skipped = true;
        c.skip_reason = "client " + std::to_string(k) + " has no test samples";
        return c;
    }
    c.graph = build_knn_graph(c.data.x_train, cfg.n_neighbors);
    auto init_rng = make_rng(seed, {tag(Stream::pairs), k, ~std::uint64_t{0}});
    c.set_posterior(quantile_markers(c, cfg, init_rng));
    c.priors = RelationPriors::from_frequency(cfg.balance_ratio);
    c.prior_logit.value[0] = std::log(c.priors.same / c.priors.diff);
    return c;
}

// ---------------------------------------------------------------------------
// Local training

/// Server-side state the client sees during a step.
struct StepContext {
    Method method = Method::vgm2;
    const RelationMarkerPosterior* prior = nullptr; ///< p_t for the KL term
    double lambda = 0.0;
    AbFit ab{};
    const Matrix* prototypes = nullptr; ///< (C x d); NaN rows are absent classes
    const PairHook* hook = nullptr;
};

/**
 * One full-batch Adam step on a client: UMAP on the kNN edges plus sampled
 * negatives, then either the relation-marker terms (sim, cal, kl) or the
 * prototype pull term.
 */
inline StepValues local_step(ClientState& c, const RunConfig& cfg, const StepContext& ctx, Rng& pair_rng,
                             Rng& neg_rng) {
    ad::Tape tape;
    auto leaves = encoder_leaves(tape, c.encoder);
    auto x = tape.constant(c.data.x_train.data, c.data.x_train.rows, c.data.x_train.cols);
    auto z = encoder_forward(leaves, x);

    LossTerms terms;
    LossWeights w = cfg.resolved_weights();
    StepValues out;
    if (cfg.use_umap) {
        std::vector<Edge> edges = c.graph.edges;
        auto neg = sample_negative_edges(c.graph, cfg.negatives_per_edge, neg_rng);
        edges.insert(edges.end(), neg.begin(), neg.end());
        terms.umap = umap_loss(edges, z, ctx.ab.a, ctx.ab.b);
    }

    ad::Var raw, prior_var;
    if (ctx.method == Method::prototype) {
        w = LossWeights{cfg.proto_beta, 0.0, 0.0, LambdaSchedule::constant, 1};
        if (ctx.prototypes != nullptr) {
            std::vector<std::size_t> rows;
            std::vector<double> targets;
            for (std::size_t i = 0; i < c.data.y_train.size(); ++i) {
                const auto cls = static_cast<std::size_t>(c.data.y_train[i]);
                const auto proto = ctx.prototypes->row(cls);
                if (std::isnan(proto[0])) {
                    continue;
                }
                rows.push_back(i);
                targets.insert(targets.end(), proto.begin(), proto.end());
            }
            if (!rows.empty()) {
                const std::size_t n = rows.size();
                auto zi = ad::gather_rows(z, std::move(rows));
                terms.sim = ad::sum(ad::square(ad::sub(zi, tape.constant(targets, n, cfg.latent_dim))));
            }
        }
    } else {
        auto pairs = sample_pairs(c.data.y_train, cfg.pair_budget, cfg.balance_ratio, pair_rng);
        if (ctx.hook != nullptr) {
            (*ctx.hook)(pairs, c.data.y_train);
        }
        out.single_class = pairs.single_class;
        auto s = pair_distances(z, pairs);
        raw = tape.variable(c.markers.value, 1, c.markers.size());
        auto mv = constrain(raw, c.K);
        auto l1 = mixture_logpdf(s, mv, kRelSame);
        auto l0 = mixture_logpdf(s, mv, kRelDiff);
        const double floor = std::log(std::numeric_limits<double>::min());
        for (std::size_t p = 0; p < l1.size(); ++p) {
            out.underflow += (l1.value(p) < floor && l0.value(p) < floor);
        }
        ad::Var logit;
        if (cfg.learn_priors) {
            prior_var = tape.variable(c.prior_logit.value, 1, 1);
            logit = ad::add(ad::sub(l1, l0), prior_var);
        } else {
            c.priors = RelationPriors::from_frequency(pairs.same_fraction());
            logit = ad::add_scalar(ad::sub(l1, l0), std::log(c.priors.same) - std::log(c.priors.diff));
        }
        terms.sim = sim_loss(logit, pairs.same);
        if (w.eta > 0.0) {
            terms.cal = soft_ece(ad::sigmoid(logit), pairs.same);
        }
        if (ctx.method == Method::vgm2 && ctx.prior != nullptr && ctx.lambda > 0.0) {
            terms.kl = total_kl(mv, *ctx.prior);
        }
        w.schedule = LambdaSchedule::constant;
        w.lambda0 = ctx.lambda;
    }
    if (!terms.umap.valid() && !terms.sim.valid()) {
        return out; // nothing to fit (prototype baseline without UMAP in round 0)
    }
    auto loss = total_loss(terms, w, 0);
    out.umap = terms.umap.valid() ? terms.umap.item() : 0.0;
    out.sim = terms.sim.valid() ? terms.sim.item() : 0.0;
    out.cal = terms.cal.valid() ? terms.cal.item() : 0.0;
    out.kl = terms.kl.valid() ? terms.kl.item() : 0.0;
    out.total = loss.item();
    if (!std::isfinite(out.total)) {
        throw NumericalError("client " + std::to_string(c.data.id) + ": loss is not finite");
    }

    auto grads = tape.backward(loss);
    const AdamConfig enc_cfg{cfg.lr};
    for (std::size_t l = 0; l < leaves.size(); ++l) {
        adam_step(c.encoder.layers[l], grads.of(leaves[l]), c.encoder_opt[l], enc_cfg);
    }
    if (raw.valid()) {
        adam_step(c.markers, grads.of(raw), c.marker_opt, AdamConfig{cfg.marker_lr});
    }
    if (prior_var.valid()) {
        adam_step(c.prior_logit, grads.of(prior_var), c.prior_opt, AdamConfig{cfg.marker_lr});
        const double s = special::sigmoid(c.prior_logit.value[0]);
        c.priors = RelationPriors::from_frequency(s);
    }
    return out;
}

/// E local epochs of `steps_per_epoch` full-batch steps. `stream` keys the RNGs.
inline StepValues train_client(ClientState& c, const RunConfig& cfg, const StepContext& ctx, std::uint64_t seed,
                               std::uint64_t stream) {
    StepValues last;
    std::size_t underflow = 0;
    bool single = false;
    for (std::size_t e = 0; e < cfg.local_epochs; ++e) {
        for (std::size_t s = 0; s < cfg.steps_per_epoch; ++s) {
            const std::uint64_t step = e * cfg.steps_per_epoch + s;
            auto pair_rng = make_rng(seed, {tag(Stream::pairs), c.data.id, stream, step});
            auto neg_rng = make_rng(seed, {tag(Stream::negatives), c.data.id, stream, step});
            last = local_step(c, cfg, ctx, pair_rng, neg_rng);
            underflow += last.underflow;
            single = single || last.single_class;
        }
    }
    last.underflow = underflow;
    last.single_class = single;
    ++c.participations;
    return last;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Macro-averaged F1 over `classes`; a class with no TP, FP or FN scores 0.
inline double macro_f1(std::span<const int> truth, std::span<const int> pred, std::span<const int> classes) {
    if (truth.size() != pred.size()) {
        throw ShapeError("macro_f1: " + std::to_string(truth.size()) + " labels, " + std::to_string(pred.size()) +
                         " predictions");
    }
    if (classes.empty()) {
        throw ConfigError("macro_f1: no classes");
    }
    double acc = 0.0;
    for (int c : classes) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            tp += (pred[i] == c && truth[i] == c);
            fp += (pred[i] == c && truth[i] != c);
            fn += (pred[i] != c && truth[i] == c);
        }
        const std::size_t denom = 2 * tp + fp + fn;
        acc += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    }
    return acc / static_cast<double>(classes.size());
}

namespace detail {

inline std::vector<int> eval_classes(const ClientData& d) {
    std::vector<int> cls = d.classes;
    cls.insert(cls.end(), d.y_test.begin(), d.y_test.end());
    std::sort(cls.begin(), cls.end());
    cls.erase(std::unique(cls.begin(), cls.end()), cls.end());
    return cls;
}

} // namespace detail

/**
 * Scores each test point against the client's training (support) points.
 * Marker methods: class score = mean pi_1 over that class's support
 * points; ECE uses every (test, support) pair with label "same class".
 * Prototype baseline: nearest class mean of the support embeddings; no
 * pair confidences, so ECE is NaN.
 */
inline ClientEval evaluate_client(const ClientState& c, Method method) {
    ClientEval out;
    const auto& d = c.data;
    const Matrix zs = encode(c.encoder, d.x_train);
    const Matrix zt = encode(c.encoder, d.x_test);
    std::vector<int> pred(d.y_test.size(), d.classes.front());
    if (method == Method::prototype) {
        const std::size_t dim = zs.cols;
        std::map<int, std::vector<double>> means;
        std::map<int, std::size_t> counts;
        for (std::size_t j = 0; j < d.y_train.size(); ++j) {
            auto& m = means[d.y_train[j]];
            m.resize(dim, 0.0);
            for (std::size_t k = 0; k < dim; ++k) {
                m[k] += zs(j, k);
            }
            ++counts[d.y_train[j]];
        }
        for (auto& [cls, m] : means) {
            for (double& v : m) {
                v /= static_cast<double>(counts[cls]);
            }
        }
        for (std::size_t i = 0; i < d.y_test.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& [cls, m] : means) {
                const double dist = squared_distance(zt.row(i), m);
                if (dist < best) {
                    best = dist;
                    pred[i] = cls;
                }
            }
        }
        out.f1 = macro_f1(d.y_test, pred, detail::eval_classes(d));
        return out;
    }
    const auto q = c.posterior();
    out.confidences.reserve(d.y_test.size() * d.y_train.size());
    for (std::size_t i = 0; i < d.y_test.size(); ++i) {
        std::map<int, std::pair<double, std::size_t>> score;
        for (std::size_t j = 0; j < d.y_train.size(); ++j) {
            const auto r = pi1_detail(detail::distance(zt.row(i), zs.row(j)), q, c.priors);
            out.underflow += r.underflow;
            out.confidences.push_back(r.same);
            out.same.push_back(d.y_test[i] == d.y_train[j]);
            auto& sc = score[d.y_train[j]];
            sc.first += r.same;
            ++sc.second;
        }
        double best = -1.0;
        for (const auto& [cls, sc] : score) {
            const double mean = sc.first / static_cast<double>(sc.second);
            if (mean > best) {
                best = mean;
                pred[i] = cls;
            }
        }
    }
    out.f1 = macro_f1(d.y_test, pred, detail::eval_classes(d));
    out.ece = hard_ece(out.confidences, out.same, 15);
    return out;
}

// ---------------------------------------------------------------------------
// Federation

/// Bytes of a prototype upload: C x d doubles plus the payload header.
inline std::size_t prototype_payload_bytes(std::size_t classes, std::size_t dim) {
    return kPayloadHeaderBytes + 8 * classes * dim;
}

struct Federation {
    RunConfig cfg;
    Method method = Method::vgm2;
    std::uint64_t seed = 0;
    Dataset data;
    std::vector<ClientState> clients;
    GlobalPrior prior;
    AbFit ab;
    RdpAccountant accountant;
    Matrix prototypes; ///< global class prototypes; NaN rows until a class is seen
    std::size_t round = 0;
};

inline Federation make_federation(const RunConfig& cfg, Method method, std::uint64_t seed) {
    cfg.validate();
    Federation f;
    f.cfg = cfg;
    f.method = method;
    f.seed = seed;
    f.data = load_dataset(cfg, seed);
    auto part_rng = make_rng(seed, {tag(Stream::partition)});
    const auto part = partition_shards(f.data.y, cfg.clients, cfg.shards, part_rng);
    for (std::size_t k = 0; k < cfg.clients; ++k) {
        f.clients.push_back(make_client(f.data, part, k, cfg, seed));
    }
    f.prior = initial_prior(cfg.K);
    f.ab = fit_ab_from_min_dist(cfg.min_dist);
    f.accountant = RdpAccountant(cfg.dp.noise_multiplier,
                                 static_cast<double>(cfg.clients_per_round) / static_cast<double>(cfg.clients));
    f.prototypes = Matrix(f.data.num_classes, cfg.latent_dim,
                          std::vector<double>(f.data.num_classes * cfg.latent_dim, std::numeric_limits<double>::quiet_NaN()));
    return f;
}

/// Cohort for round t: clients_per_round distinct ids, sorted.
inline std::vector<std::size_t> sample_cohort(std::size_t clients, std::size_t per_round, std::uint64_t seed,
                                              std::size_t round) {
    std::vector<std::size_t> ids(clients);
    std::iota(ids.begin(), ids.end(), 0);
    auto rng = make_rng(seed, {tag(Stream::client_sampling), round});
    detail::partial_shuffle(ids, per_round, rng);
    std::sort(ids.begin(), ids.end());
    return ids;
}

/// Runs `jobs` on up to `threads` workers (0: one per job) and rethrows the first failure.
inline void parallel_for(std::size_t jobs, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    if (jobs == 0) {
        return;
    }
    const std::size_t workers = std::min(jobs, threads == 0 ? jobs : threads);
    if (workers == 1) {
        for (std::size_t j = 0; j < jobs; ++j) {
            fn(j);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(jobs);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t j = next++; j < jobs; j = next++) {
                try {
                    fn(j);
                } catch (...) {
                    errors[j] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

/// Client-side upload for the marker methods: optional DP, then optional masking.
inline SufficientStatsPayload client_upload(const ClientState& c, const Federation& f, std::size_t round,
                                            std::span<const std::uint64_t> cohort, bool& vacuous,
                                            std::size_t& saturated) {
    auto payload = make_payload(c.posterior(), c.data.y_train.size());
    if (f.cfg.dp.noise_multiplier > 0.0) {
        auto rng = make_rng(f.seed, {tag(Stream::dp_noise), round, c.data.id});
        payload = dp_noise(payload, f.cfg.dp, rng);
    }
    if (!f.cfg.secure_agg) {
        return payload;
    }
    auto coords = weighted_coordinates_payload(payload_posterior(payload), payload.weight, f.cfg.aggregation);
    coords.flags = static_cast<std::uint8_t>(coords.flags | (payload.flags & kFlagDpNoised));
    // DP noise can push moments past the fixed-point range; project and count
    saturated = saturate_for_masking(coords, cohort.size());
    const auto masked = mask_payload(coords, c.data.id, cohort, derive_seed(f.seed, {tag(Stream::mask), round}));
    vacuous = masked.vacuous;
    return masked.payload;
}

namespace detail {
inline RoundRecord run_round_impl(Federation& f);
}

/// One federated round; advances f.round. Numerical failures name the round.
inline RoundRecord run_round(Federation& f) {
    try {
        return detail::run_round_impl(f);
    } catch (const NumericalError& e) {
        throw NumericalError("round " + std::to_string(f.round) + ": " + e.what());
    }
}

inline RoundRecord detail::run_round_impl(Federation& f) {
    const auto start = std::chrono::steady_clock::now();
    const std::size_t t = f.round;
    const auto& cfg = f.cfg;
    RoundRecord rec;
    rec.round = t;
    rec.cohort = sample_cohort(cfg.clients, cfg.clients_per_round, f.seed, t);
    // no KL before the first aggregate; p_0 carries no client information
    rec.lambda = (f.method == Method::vgm2 && t > 0) ? cfg.resolved_weights().lambda_at(t) : 0.0;

    std::vector<std::size_t> active;
    for (auto k : rec.cohort) {
        if (f.clients[k].skipped) {
            rec.skipped.emplace_back(k, f.clients[k].skip_reason);
        } else {
            active.push_back(k);
        }
    }
    const std::size_t scalars = RelationMarkerPosterior::scalar_count(cfg.K);
    const std::size_t marker_bytes = kPayloadHeaderBytes + 8 * scalars;
    const std::size_t proto_bytes = prototype_payload_bytes(f.data.num_classes, cfg.latent_dim);
    const bool have_prototypes = std::any_of(f.prototypes.data.begin(), f.prototypes.data.end(),
                                             [](double v) { return !std::isnan(v); });

    rec.clients.resize(active.size());
    std::vector<std::uint64_t> cohort_ids(active.begin(), active.end());
    std::vector<SufficientStatsPayload> uploads(active.size());
    std::vector<char> vacuous(active.size(), 0);
    std::vector<ClientEval> evals(active.size());

    parallel_for(active.size(), cfg.threads, [&](std::size_t j) {
        ClientState& c = f.clients[active[j]];
        StepContext ctx;
        ctx.method = f.method;
        ctx.ab = f.ab;
        ctx.lambda = rec.lambda;
        if (f.method == Method::vgm2) {
            // warm start from the prior only while the KL term is active, so that lambda = 0
            // leaves every client isolated from the others
            if (rec.lambda > 0.0) {
                c.set_posterior(f.prior.posterior);
            }
            ctx.prior = &f.prior.posterior;
        }
        if (f.method == Method::prototype && have_prototypes) {
            ctx.prototypes = &f.prototypes;
        }
        auto& entry = rec.clients[j];
        entry.client = c.data.id;
        entry.n_train = c.data.y_train.size();
        entry.loss = train_client(c, cfg, ctx, f.seed, t);
        if (f.method == Method::vgm2) {
            bool vac = false;
            uploads[j] = client_upload(c, f, t, cohort_ids, vac, entry.saturated);
            vacuous[j] = vac;
            entry.bytes_up = uploads[j].byte_size();
            entry.bytes_down = marker_bytes;
        } else if (f.method == Method::prototype) {
            entry.bytes_up = proto_bytes;
            entry.bytes_down = have_prototypes ? proto_bytes : 0;
        }
        evals[j] = evaluate_client(c, f.method);
        entry.f1 = evals[j].f1;
        entry.ece = evals[j].ece;
        entry.eval_underflow = evals[j].underflow;
    });

    if (f.method == Method::vgm2 && !active.empty()) {
        AggregateResult agg;
        if (cfg.secure_agg) {
            const auto sum = sum_masked(uploads);
            agg = aggregate_from_sum(sum.values, sum.total_weight, cfg.K, cfg.aggregation);
        } else {
            agg = aggregate(uploads, cfg.aggregation);
        }
        rec.dirichlet_repairs = agg.repairs.dirichlet;
        rec.nig_repairs = agg.repairs.nig;
        rec.vacuous_mask = std::any_of(vacuous.begin(), vacuous.end(), [](char v) { return v != 0; });
        f.prior = GlobalPrior{agg.posterior, t + 1};
        if (cfg.dp.noise_multiplier > 0.0) {
            f.accountant.step();
        }
    }
    if (f.method == Method::prototype && !active.empty()) {
        const std::size_t C = f.data.num_classes, dim = cfg.latent_dim;
        std::vector<double> sum(C * dim, 0.0), weight(C, 0.0);
        for (auto k : active) {
            const auto& c = f.clients[k];
            const Matrix z = encode(c.encoder, c.data.x_train);
            for (std::size_t i = 0; i < c.data.y_train.size(); ++i) {
                const auto cls = static_cast<std::size_t>(c.data.y_train[i]);
                for (std::size_t d = 0; d < dim; ++d) {
                    sum[cls * dim + d] += z(i, d);
                }
                weight[cls] += 1.0;
            }
        }
        for (std::size_t cls = 0; cls < C; ++cls) {
            if (weight[cls] > 0.0) {
                for (std::size_t d = 0; d < dim; ++d) {
                    f.prototypes(cls, d) = sum[cls * dim + d] / weight[cls];
                }
            }
        }
    }
    rec.epsilon = cfg.dp.noise_multiplier > 0.0 ? f.accountant.epsilon(cfg.dp.delta)
                                                : (f.method == Method::vgm2 ? std::numeric_limits<double>::infinity() : 0.0);
    ++f.round;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

/// Full run of one method and seed.
inline RunResult run_federation(const RunConfig& cfg, Method method, std::uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    Federation f = make_federation(cfg, method, seed);
    RunResult res;
    res.method = method;
    res.seed = seed;
    res.dataset = f.data.name;
    std::vector<std::size_t> up(cfg.clients, 0), down(cfg.clients, 0);
    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        res.rounds.push_back(run_round(f));
        for (const auto& e : res.rounds.back().clients) {
            up[e.client] += e.bytes_up;
            down[e.client] += e.bytes_down;
        }
    }
    for (const auto& c : f.clients) {
        ClientMetrics m;
        m.client = c.data.id;
        m.skipped = c.skipped;
        m.n_train = c.data.y_train.size();
        m.n_test = c.data.y_test.size();
        m.single_class = c.data.classes.size() < 2;
        m.bytes_up = up[c.data.id];
        m.bytes_down = down[c.data.id];
        if (!c.skipped) {
            auto ev = evaluate_client(c, method);
            m.f1 = ev.f1;
            m.ece = ev.ece;
            res.confidences.insert(res.confidences.end(), ev.confidences.begin(), ev.confidences.end());
            res.same.insert(res.same.end(), ev.same.begin(), ev.same.end());
        } else {
            m.f1 = m.ece = std::numeric_limits<double>::quiet_NaN();
        }
        res.clients.push_back(m);
    }
    res.final_prior = f.prior.posterior;
    res.accountant = f.accountant;
    res.epsilon = res.rounds.empty() ? 0.0 : res.rounds.back().epsilon;
    if (method == Method::prototype) {
        res.payload_scalars = f.data.num_classes * cfg.latent_dim;
        res.payload_bytes = prototype_payload_bytes(f.data.num_classes, cfg.latent_dim);
    } else if (method == Method::vgm2) {
        res.payload_scalars = RelationMarkerPosterior::scalar_count(cfg.K);
        res.payload_bytes = kPayloadHeaderBytes + 8 * res.payload_scalars;
    }
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

/// Mean F1 / ECE over non-skipped clients.
inline std::pair<double, double> mean_client_metrics(const RunResult& r) {
    double f1 = 0.0, ece = 0.0;
    std::size_t n = 0;
    for (const auto& c : r.clients) {
        if (!c.skipped) {
            f1 += c.f1;
            ece += c.ece;
            ++n;
        }
    }
    if (n == 0) {
        return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    }
    return {f1 / static_cast<double>(n), ece / static_cast<double>(n)};
}

// ---------------------------------------------------------------------------
// Membership-inference harness

struct AttackReport {
    std::uint64_t seed = 0;
    std::size_t trials = 0;
    std::size_t target_client = 0;
    double dp_sigma = 0.0;
    double auc_client = 0.5;       ///< per-client upload, no noise
    double auc_aggregate = 0.5;    ///< pooled with a second client, no noise
    double auc_client_dp = 0.5;    ///< per-client upload with the Gaussian mechanism
    double auc_aggregate_dp = 0.5; ///< pooled, both uploads noised
};

/**
 * Pair-level membership inference against released marker summaries.
 *
 * The federation is first trained for the configured rounds. Then, for
 * each trial, a copy of the target client trains for `attack_rounds`
 * further participations from the current prior with fresh randomness;
 * members have a target pair forced into every pair batch, non-members
 * have it excluded. The attacker sees the released summaries of those
 * participations and fits a logistic classifier on half of the trials.
 */
inline AttackReport run_attack(const RunConfig& cfg, std::uint64_t seed) {
    Federation f = make_federation(cfg, Method::vgm2, seed);
    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        run_round(f);
    }
    std::vector<std::size_t> eligible;
    for (const auto& c : f.clients) {
        if (!c.skipped) {
            eligible.push_back(c.data.id);
        }
    }
    if (eligible.size() < 2) {
        throw ConfigError("run_attack: need two usable clients");
    }
    std::size_t target = eligible[0];
    for (auto k : eligible) {
        if (f.clients[k].data.classes.size() >= 2) {
            target = k;
            break;
        }
    }
    const std::size_t other = target == eligible[0] ? eligible[1] : eligible[0];
    if (cfg.attack_trials < 4) {
        throw ConfigError("run_attack: attack_trials must be at least 4");
    }

    const auto& tc = f.clients[target];
    const std::size_t n = tc.data.y_train.size();
    std::vector<std::pair<std::size_t, std::size_t>> pool;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            pool.emplace_back(i, j);
        }
    }
    auto pool_rng = make_rng(seed, {tag(Stream::attack), 0});
    detail::partial_shuffle(pool, cfg.attack_trials, pool_rng);
    if (pool.size() < cfg.attack_trials) {
        throw ConfigError("run_attack: target client has only " + std::to_string(pool.size()) + " pairs");
    }

    DPConfig dp = cfg.dp;
    dp.noise_multiplier = cfg.attack_dp_sigma;
    AttackReport rep;
    rep.seed = seed;
    rep.trials = cfg.attack_trials;
    rep.target_client = target;
    rep.dp_sigma = dp.noise_multiplier;

    // the co-member's uploads stay fixed across trials
    std::vector<SufficientStatsPayload> other_plain, other_dp;
    {
        ClientState oc = f.clients[other];
        for (std::size_t r = 0; r < cfg.attack_rounds; ++r) {
            oc.set_posterior(f.prior.posterior);
            StepContext ctx{Method::vgm2, &f.prior.posterior, cfg.resolved_weights().lambda_at(cfg.rounds), f.ab};
            train_client(oc, cfg, ctx, derive_seed(seed, {tag(Stream::attack), 1}), r);
            other_plain.push_back(make_payload(oc.posterior(), oc.data.y_train.size()));
            auto rng = make_rng(seed, {tag(Stream::attack), 2, r});
            other_dp.push_back(dp_noise(other_plain.back(), dp, rng));
        }
    }

    std::vector<AttackExample> client_ex(cfg.attack_trials), agg_ex(cfg.attack_trials), client_dp_ex(cfg.attack_trials),
        agg_dp_ex(cfg.attack_trials);
    parallel_for(cfg.attack_trials, cfg.threads == 0 ? 1 : cfg.threads, [&](std::size_t trial) {
        const int member = static_cast<int>(trial % 2 == 0);
        const auto target_pair = pool[trial];
        const PairHook hook = [&](PairIndexSet& pairs, std::span<const int> labels) {
            const auto [ti, tj] = target_pair;
            auto it = std::find(pairs.pairs.begin(), pairs.pairs.end(), target_pair);
            const int u = labels[ti] == labels[tj];
            if (member) {
                if (it == pairs.pairs.end() && !pairs.pairs.empty()) {
                    pairs.pairs.back() = target_pair;
                    pairs.same.back() = u;
                }
            } else if (it != pairs.pairs.end()) {
                // swap in the first pool pair that is not the target and not already present
                const auto pos = static_cast<std::size_t>(it - pairs.pairs.begin());
                for (std::size_t a = 0; a < labels.size(); ++a) {
                    bool done = false;
                    for (std::size_t b = a + 1; b < labels.size() && !done; ++b) {
                        const std::pair<std::size_t, std::size_t> cand{a, b};
                        if (cand != target_pair &&
                            std::find(pairs.pairs.begin(), pairs.pairs.end(), cand) == pairs.pairs.end()) {
                            pairs.pairs[pos] = cand;
                            pairs.same[pos] = labels[a] == labels[b];
                            done = true;
                        }
                    }
                    if (done) {
                        break;
                    }
                }
            }
        };
        ClientState c = f.clients[target];
        std::vector<double> fc, fa, fcd, fad;
        for (std::size_t r = 0; r < cfg.attack_rounds; ++r) {
            c.set_posterior(f.prior.posterior);
            StepContext ctx{Method::vgm2, &f.prior.posterior, cfg.resolved_weights().lambda_at(cfg.rounds), f.ab,
                            nullptr, &hook};
            train_client(c, cfg, ctx, derive_seed(seed, {tag(Stream::attack), 3, trial}), r);
            const auto plain = make_payload(c.posterior(), c.data.y_train.size());
            auto rng = make_rng(seed, {tag(Stream::attack), 4, trial, r});
            const auto noised = dp_noise(plain, dp, rng);
            auto append = [](std::vector<double>& dst, const std::vector<double>& src) {
                dst.insert(dst.end(), src.begin(), src.end());
            };
            append(fc, summary_features(plain));
            append(fcd, summary_features(noised));
            const std::vector<SufficientStatsPayload> pooled{plain, other_plain[r]};
            const std::vector<SufficientStatsPayload> pooled_dp{noised, other_dp[r]};
            append(fa, summary_features(aggregate(pooled, cfg.aggregation).posterior));
            append(fad, summary_features(aggregate(pooled_dp, cfg.aggregation).posterior));
        }
        client_ex[trial] = AttackExample{fc, member};
        agg_ex[trial] = AttackExample{fa, member};
        client_dp_ex[trial] = AttackExample{fcd, member};
        agg_dp_ex[trial] = AttackExample{fad, member};
    });
    auto auc = [&](std::vector<AttackExample> ex) {
        auto rng = make_rng(seed, {tag(Stream::attack), 5});
        return mi_attack(std::move(ex), rng);
    };
    rep.auc_client = auc(client_ex);
    rep.auc_aggregate = auc(agg_ex);
    rep.auc_client_dp = auc(client_dp_ex);
    rep.auc_aggregate_dp = auc(agg_dp_ex);
    return rep;
}

} // namespace vgm2

#endif
