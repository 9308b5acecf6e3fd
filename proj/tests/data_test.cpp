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

#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "gtest/gtest.h"
#include "vgm2/data.hpp"

namespace vgm2 {
namespace {

std::vector<int> labels_of(std::size_t classes, std::size_t per_class) {
    std::vector<int> y;
    for (std::size_t i = 0; i < classes * per_class; ++i) {
        y.push_back(static_cast<int>(i % classes)); // interleaved on purpose
    }
    return y;
}

TEST(PartitionTest, TwoClientsTwoClassesOneShardEach) {
    const auto y = labels_of(2, 50);
    Rng rng(1);
    const auto part = partition_shards(y, 2, 1, rng);
    std::set<int> seen;
    for (std::size_t k = 0; k < 2; ++k) {
        std::set<int> classes;
        for (auto i : part.indices(k)) {
            classes.insert(y[i]);
        }
        EXPECT_EQ(classes.size(), 1u);
        seen.insert(*classes.begin());
    }
    EXPECT_EQ(seen.size(), 2u);
}

TEST(PartitionTest, AtMostSClassesPerClient) {
    const auto y = labels_of(10, 60);
    Rng rng(2);
    const auto part = partition_shards(y, 30, 2, rng);
    for (std::size_t k = 0; k < 30; ++k) {
        std::set<int> classes;
        for (auto i : part.indices(k)) {
            classes.insert(y[i]);
        }
        EXPECT_LE(classes.size(), 2u);
        EXPECT_EQ(part.clients[k].size(), 2u);
    }
}

TEST(PartitionTest, IsATruePartition) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        for (auto [N, S, n] : {std::tuple{3u, 2u, 61u}, std::tuple{10u, 2u, 1200u}, std::tuple{7u, 3u, 100u}}) {
            const auto y = labels_of(4, n / 4 + 1);
            Rng rng(seed);
            const auto part = partition_shards(y, N, S, rng);
            std::vector<int> hits(y.size(), 0);
            for (std::size_t k = 0; k < N; ++k) {
                for (auto i : part.indices(k)) {
                    ++hits[i];
                }
            }
            for (int h : hits) {
                EXPECT_EQ(h, 1);
            }
        }
    }
}

TEST(PartitionTest, InsufficientSamples) {
    const auto y = labels_of(2, 2);
    Rng rng(3);
    try {
        partition_shards(y, 3, 2, rng);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("at least 6"), std::string::npos);
    }
}

TEST(PartitionTest, SplitKeepsShardClasses) {
    const auto y = labels_of(4, 100);
    Rng rng(4);
    const auto part = partition_shards(y, 4, 2, rng);
    const auto split = split_client(part, 0, 0.8, rng);
    EXPECT_EQ(split.train.size() + split.test.size(), part.indices(0).size());
    std::set<int> train_classes, test_classes;
    for (auto i : split.train) {
        train_classes.insert(y[i]);
    }
    for (auto i : split.test) {
        test_classes.insert(y[i]);
    }
    EXPECT_EQ(train_classes, test_classes);
}

TEST(GeneratorTest, BlobsShapeAndDeterminism) {
    BlobSpec spec;
    spec.per_class = 20;
    Rng a(5), b(5);
    const auto d1 = make_blobs(spec, a), d2 = make_blobs(spec, b);
    EXPECT_EQ(d1.size(), 120u);
    EXPECT_EQ(d1.x.cols, 10u);
    EXPECT_EQ(d1.num_classes, 6u);
    EXPECT_EQ(d1.x.data, d2.x.data);
}

TEST(GeneratorTest, Spirals) {
    CurveSpec spec;
    spec.per_class = 30;
    Rng rng(6);
    const auto d = make_spirals(spec, rng);
    EXPECT_EQ(d.size(), 120u);
    for (double v : d.x.data) {
        EXPECT_TRUE(std::isfinite(v));
    }
}

TEST(LoaderTest, CsvWithHeader) {
    const auto path = std::filesystem::temp_directory_path() / "vgm2_loader_test.csv";
    {
        std::ofstream out(path);
        out << "f0,f1,label\n1.0,2.0,7\n3.0,4.0,3\n5.0,6.0,7\n";
    }
    const auto d = load_csv(path.string());
    EXPECT_EQ(d.size(), 3u);
    EXPECT_EQ(d.x.cols, 2u);
    EXPECT_EQ(d.y, (std::vector<int>{1, 0, 1}));
    EXPECT_EQ(d.num_classes, 2u);
    {
        std::ofstream out(path);
        out << "1.0,2.0,1\n3.0,1\n";
    }
    EXPECT_THROW(load_csv(path.string()), ConfigError);
    std::filesystem::remove(path);
}

TEST(LoaderTest, IdxRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path();
    const auto img = dir / "vgm2-images.idx", lab = dir / "vgm2-labels.idx";
    {
        std::ofstream out(img, std::ios::binary);
        const unsigned char header[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2};
        out.write(reinterpret_cast<const char*>(header), sizeof header);
        const unsigned char px[] = {0, 255, 51, 102, 255, 0, 0, 0};
        out.write(reinterpret_cast<const char*>(px), sizeof px);
        std::ofstream l(lab, std::ios::binary);
        const unsigned char lh[] = {0, 0, 8, 1, 0, 0, 0, 2, 4, 9};
        l.write(reinterpret_cast<const char*>(lh), sizeof lh);
    }
    const auto d = load_idx(img.string(), lab.string());
    EXPECT_EQ(d.size(), 2u);
    EXPECT_EQ(d.x.cols, 4u);
    EXPECT_DOUBLE_EQ(d.x(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(d.x(0, 2), 0.2);
    EXPECT_EQ(d.y, (std::vector<int>{0, 1}));
    EXPECT_THROW(load_idx((dir / "missing.idx").string(), lab.string()), ConfigError);
    std::filesystem::remove(img);
    std::filesystem::remove(lab);
}

} // namespace
} // namespace vgm2
