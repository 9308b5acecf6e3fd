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

#ifndef VGM2_DATA_HPP
#define VGM2_DATA_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "matrix.hpp"
#include "rng.hpp"

/**
 * @file data.hpp
 *
 * @brief Datasets, synthetic generators, file loaders and label-shard
 * partitioning.
 */

namespace vgm2 {

struct Dataset {
    std::string name;
    Matrix x;
    std::vector<int> y;
    std::size_t num_classes = 0;

    std::size_t size() const { return y.size(); }
};

/// Relabels to 0..C-1 in order of first appearance of the sorted label values.
inline std::size_t compact_labels(std::vector<int>& y) {
    std::map<int, int> remap;
    for (int v : y) {
        remap.emplace(v, 0);
    }
    int next = 0;
    for (auto& [k, v] : remap) {
        v = next++;
    }
    for (int& v : y) {
        v = remap[v];
    }
    return remap.size();
}

// ---------------------------------------------------------------------------
// Synthetic generators

struct BlobSpec {
    std::size_t classes = 6;
    std::size_t modes_per_class = 2;
    std::size_t per_class = 200;
    std::size_t dim = 10;
    double box = 10.0;  ///< mode centers uniform in [-box/2, box/2]^dim
    double noise = 1.0; ///< isotropic std around each mode
};

/// Gaussian blobs; each class is an equal-weight mixture of `modes_per_class` blobs.
inline Dataset make_blobs(const BlobSpec& spec, Rng& rng) {
    Dataset d;
    d.name = "blobs";
    d.num_classes = spec.classes;
    const std::size_t n = spec.classes * spec.per_class;
    d.x = Matrix(n, spec.dim);
    d.y.resize(n);
    std::uniform_real_distribution<double> center(-spec.box / 2.0, spec.box / 2.0);
    std::normal_distribution<double> noise(0.0, spec.noise);
    std::vector<std::vector<double>> centers(spec.classes * spec.modes_per_class, std::vector<double>(spec.dim));
    for (auto& c : centers) {
        for (auto& v : c) {
            v = center(rng);
        }
    }
    std::size_t row = 0;
    for (std::size_t c = 0; c < spec.classes; ++c) {
        for (std::size_t i = 0; i < spec.per_class; ++i, ++row) {
            const auto& mu = centers[c * spec.modes_per_class + (i % spec.modes_per_class)];
            for (std::size_t j = 0; j < spec.dim; ++j) {
                d.x(row, j) = mu[j] + noise(rng);
            }
            d.y[row] = static_cast<int>(c);
        }
    }
    return d;
}

struct CurveSpec {
    std::size_t classes = 4;
    std::size_t per_class = 200;
    std::size_t dim = 10;
    double noise = 0.15;
    double turns = 1.5;
};

/**
 * Interleaved spiral arms, one per class, embedded in `dim` dimensions by a
 * random orthonormal map. Euclidean neighbors in the input are mostly on
 * the same arm, while arms wrap around each other.
 */
inline Dataset make_spirals(const CurveSpec& spec, Rng& rng) {
    Dataset d;
    d.name = "spirals";
    d.num_classes = spec.classes;
    const std::size_t n = spec.classes * spec.per_class;
    d.x = Matrix(n, spec.dim);
    d.y.resize(n);
    // random orthonormal 2 -> dim map (Gram-Schmidt on two gaussian vectors)
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> u(spec.dim), v(spec.dim);
    for (auto& x : u) {
        x = g(rng);
    }
    for (auto& x : v) {
        x = g(rng);
    }
    auto norm = [](std::vector<double>& a) {
        double s = 0.0;
        for (double x : a) {
            s += x * x;
        }
        s = std::sqrt(s);
        for (double& x : a) {
            x /= s;
        }
    };
    norm(u);
    double dot = 0.0;
    for (std::size_t j = 0; j < spec.dim; ++j) {
        dot += u[j] * v[j];
    }
    for (std::size_t j = 0; j < spec.dim; ++j) {
        v[j] -= dot * u[j];
    }
    norm(v);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, spec.noise);
    std::size_t row = 0;
    for (std::size_t c = 0; c < spec.classes; ++c) {
        const double phase = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(spec.classes);
        for (std::size_t i = 0; i < spec.per_class; ++i, ++row) {
            const double t = 0.5 + spec.turns * 2.0 * std::numbers::pi * unif(rng);
            const double r = t / (2.0 * std::numbers::pi);
            const double px = r * std::cos(t + phase), py = r * std::sin(t + phase);
            for (std::size_t j = 0; j < spec.dim; ++j) {
                d.x(row, j) = px * u[j] + py * v[j] + noise(rng);
            }
            d.y[row] = static_cast<int>(c);
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Loaders

/**
 * CSV with numeric feature columns followed by an integer label column. A
 * first line that does not parse as numbers is treated as a header.
 */
inline Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("load_csv: cannot open " + path);
    }
    Dataset d;
    d.name = path;
    std::vector<double> values;
    std::size_t cols = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cell, &used));
            } catch (const std::exception&) {
                numeric = false;
                break;
            }
        }
        if (!numeric) {
            if (d.y.empty() && lineno == 1) {
                continue;
            }
            throw ConfigError("load_csv: non-numeric value on line " + std::to_string(lineno) + " of " + path);
        }
        if (row.size() < 2) {
            throw ConfigError("load_csv: line " + std::to_string(lineno) + " needs features and a label");
        }
        if (cols == 0) {
            cols = row.size() - 1;
        } else if (row.size() - 1 != cols) {
            throw ConfigError("load_csv: ragged row on line " + std::to_string(lineno));
        }
        values.insert(values.end(), row.begin(), row.end() - 1);
        d.y.push_back(static_cast<int>(std::llround(row.back())));
    }
    if (d.y.empty()) {
        throw ConfigError("load_csv: no rows in " + path);
    }
    d.x = Matrix(d.y.size(), cols, std::move(values));
    d.num_classes = compact_labels(d.y);
    return d;
}

namespace detail {

inline std::uint32_t read_be32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) {
        throw ConfigError("IDX: truncated header");
    }
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

} // namespace detail

/// IDX (MNIST-style) image + label files; pixels scaled to [0, 1]. `limit` = 0 reads all.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t limit = 0) {
    std::ifstream img(images_path, std::ios::binary), lab(labels_path, std::ios::binary);
    if (!img) {
        throw ConfigError("load_idx: cannot open " + images_path);
    }
    if (!lab) {
        throw ConfigError("load_idx: cannot open " + labels_path);
    }
    const auto img_magic = detail::read_be32(img);
    if ((img_magic & 0xFFFF0000u) != 0 || ((img_magic >> 8) & 0xFF) != 0x08) {
        throw ConfigError("load_idx: " + images_path + " is not an unsigned-byte IDX file");
    }
    const std::size_t ndims = img_magic & 0xFF;
    std::size_t count = detail::read_be32(img);
    std::size_t features = 1;
    for (std::size_t k = 1; k < ndims; ++k) {
        features *= detail::read_be32(img);
    }
    const auto lab_magic = detail::read_be32(lab);
    if (lab_magic != 0x00000801u) {
        throw ConfigError("load_idx: " + labels_path + " is not an IDX label file");
    }
    const std::size_t lcount = detail::read_be32(lab);
    if (lcount != count) {
        throw ConfigError("load_idx: image and label counts differ");
    }
    if (limit > 0) {
        count = std::min(count, limit);
    }
    Dataset d;
    d.name = images_path;
    d.x = Matrix(count, features);
    d.y.resize(count);
    std::vector<unsigned char> buf(features);
    for (std::size_t i = 0; i < count; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(features));
        char label = 0;
        lab.read(&label, 1);
        if (!img || !lab) {
            throw ConfigError("load_idx: truncated data");
        }
        for (std::size_t j = 0; j < features; ++j) {
            d.x(i, j) = buf[j] / 255.0;
        }
        d.y[i] = static_cast<unsigned char>(label);
    }
    d.num_classes = compact_labels(d.y);
    return d;
}

// ---------------------------------------------------------------------------
// Label shards

struct Shard {
    int label = 0;           ///< majority label of the shard
    std::size_t begin = 0;   ///< range in ShardPartition::order
    std::size_t end = 0;
};

struct ShardPartition {
    std::vector<std::size_t> order;          ///< sample indices sorted by label
    std::vector<std::vector<Shard>> clients; ///< S shards per client

    /// Sample indices held by a client.
    std::vector<std::size_t> indices(std::size_t client) const {
        std::vector<std::size_t> out;
        for (const auto& s : clients[client]) {
            out.insert(out.end(), order.begin() + static_cast<std::ptrdiff_t>(s.begin),
                       order.begin() + static_cast<std::ptrdiff_t>(s.end));
        }
        return out;
    }
};

/**
 * Sorts samples by label (stable), cuts the sequence into N*S equal shards
 * and deals S shards to each client uniformly at random without
 * replacement. Trailing samples that do not fill a shard are dropped.
 */
inline ShardPartition partition_shards(std::span<const int> labels, std::size_t num_clients, std::size_t shards_per_client,
                                       Rng& rng) {
    const std::size_t total_shards = num_clients * shards_per_client;
    if (total_shards == 0) {
        throw ConfigError("partition_shards: N and S must be positive");
    }
    if (labels.size() < total_shards) {
        throw ConfigError("partition_shards: " + std::to_string(labels.size()) + " samples, need at least " +
                          std::to_string(total_shards) + " (N*S)");
    }
    ShardPartition part;
    part.order.resize(labels.size());
    std::iota(part.order.begin(), part.order.end(), 0);
    std::stable_sort(part.order.begin(), part.order.end(), [&](std::size_t a, std::size_t b) { return labels[a] < labels[b]; });
    // boundaries at floor(i n / NS): sizes differ by at most one and every sample is dealt
    const std::size_t n = labels.size();
    std::vector<std::size_t> ids(total_shards);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    part.clients.resize(num_clients);
    for (std::size_t k = 0; k < num_clients; ++k) {
        for (std::size_t s = 0; s < shards_per_client; ++s) {
            const std::size_t id = ids[k * shards_per_client + s];
            Shard shard{0, id * n / total_shards, (id + 1) * n / total_shards};
            std::map<int, std::size_t> counts;
            for (std::size_t p = shard.begin; p < shard.end; ++p) {
                ++counts[labels[part.order[p]]];
            }
            shard.label = std::max_element(counts.begin(), counts.end(), [](auto& a, auto& b) {
                              return a.second < b.second;
                          })->first;
            part.clients[k].push_back(shard);
        }
    }
    return part;
}

/// Train/test indices for one client: each shard split 80/20 after a shuffle.
struct ClientSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

inline ClientSplit split_client(const ShardPartition& part, std::size_t client, double train_fraction, Rng& rng) {
    ClientSplit out;
    for (const auto& s : part.clients[client]) {
        std::vector<std::size_t> idx(part.order.begin() + static_cast<std::ptrdiff_t>(s.begin),
                                     part.order.begin() + static_cast<std::ptrdiff_t>(s.end));
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto ntrain = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
        out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(ntrain));
        out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(ntrain), idx.end());
    }
    return out;
}

} // namespace vgm2

#endif
