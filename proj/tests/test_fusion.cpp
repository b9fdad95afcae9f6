// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "smld/fusion.hpp"
#include "support.hpp"

using namespace smld;
using smld::testing::random_tensor;

namespace {

// One pass per row: accumulate sum and sum of squares in double, then
// standardize the style row with those moments.
std::vector<double> fuse_oracle(const Tensor& content, const Tensor& style, double gamma, double eta) {
    const std::size_t rows = content.rows(), cols = content.cols();
    std::vector<double> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0, s2 = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = content.at(r, c);
            s += v;
            s2 += v * v;
        }
        const double mu = s / static_cast<double>(cols);
        const double var = std::max(0.0, s2 / static_cast<double>(cols) - mu * mu);
        for (std::size_t c = 0; c < cols; ++c)
            out[r * cols + c] = content.at(r, c) + gamma * (style.at(r, c) - mu) / std::sqrt(var + eta);
    }
    return out;
}

}  // namespace

TEST_CASE("fuse matches a single-pass oracle on random inputs") {
    double worst = 0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        const Tensor content = random_tensor({4, 8}, 1000 + trial, real(1 + trial % 5));
        const Tensor style = random_tensor({4, 8}, 2000 + trial);
        FusionConfig config;
        config.gamma = real(0.2 * static_cast<double>(trial % 7));
        const auto expected = fuse_oracle(content, style, config.gamma, config.eta);
        const auto got = fuse(content, style, config).to_vector();
        for (std::size_t i = 0; i < got.size(); ++i)
            worst = std::max(worst, std::abs(static_cast<double>(got[i]) - expected[i]));
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("content statistics are per-row mean and biased variance") {
    const Tensor content = Tensor::from({2, 4}, {1, 2, 3, 4, -1, -1, -1, -1});
    const auto stats = content_stats(content);
    CHECK(stats.mean.to_vector()[0] == doctest::Approx(2.5));
    CHECK(stats.variance.to_vector()[0] == doctest::Approx(1.25));
    CHECK(stats.mean.to_vector()[1] == doctest::Approx(-1));
    CHECK(stats.variance.to_vector()[1] == doctest::Approx(0));
}

TEST_CASE("cross normalization of constant content rows stays finite") {
    const Tensor content = Tensor::full({3, 5}, real(2));
    const Tensor style = random_tensor({3, 5}, 7);
    const auto out = cross_normalize(style, content_stats(content), real(1e-5)).to_vector();
    for (real v : out) CHECK(std::isfinite(v));
}

TEST_CASE("gamma zero returns the content tensor itself") {
    const Tensor content = random_tensor({4, 8}, 3);
    const Tensor style = random_tensor({4, 8}, 4);
    FusionConfig config;
    config.gamma = 0;
    const Tensor out = fuse(content, style, config);
    CHECK(out.same_node(content));
}

TEST_CASE("fused rows shift by gamma times the normalized style") {
    // With style equal to content, the normalized style is the standardized
    // content row, which has zero mean.
    const Tensor content = random_tensor({3, 16}, 5);
    FusionConfig config;
    config.gamma = real(1);
    const auto out = fuse(content, content, config);
    const auto in_mean = content_stats(content).mean.to_vector();
    const auto out_mean = content_stats(out).mean.to_vector();
    for (std::size_t r = 0; r < 3; ++r) CHECK(out_mean[r] == doctest::Approx(in_mean[r]).epsilon(1e-4));
}

TEST_CASE("fusion owns no parameters and validates its config") {
    CHECK(kFusionParameterCount == 0);
    FusionConfig config;
    config.gamma = real(-0.1);
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config.gamma = real(0.6);
    config.eta = 0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("shape mismatches are dimension errors") {
    FusionConfig config;
    CHECK_THROWS_AS(fuse(random_tensor({4, 8}, 1), random_tensor({4, 6}, 2), config), DimensionError);
    CHECK_THROWS_AS(cross_normalize(random_tensor({3, 8}, 1), content_stats(random_tensor({4, 8}, 2)), real(1e-5)),
                    DimensionError);
}
