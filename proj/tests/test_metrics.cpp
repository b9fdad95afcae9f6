// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "smld/metrics.hpp"
#include "smld/motion.hpp"
#include "support.hpp"

using namespace smld;

namespace {

FeatureMatrix gaussian_rows(std::size_t rows, std::size_t cols, std::uint64_t seed, double shift = 0) {
    std::mt19937_64 engine(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    FeatureMatrix m{rows, cols, std::vector<double>(rows * cols)};
    for (double& v : m.values) v = n(engine) + shift;
    return m;
}

double euclid(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

GaussianFit diagonal_fit(std::vector<double> mean, std::vector<double> variances) {
    GaussianFit g;
    const std::size_t d = mean.size();
    g.mean = std::move(mean);
    g.covariance.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) g.covariance[i * d + i] = variances[i];
    return g;
}

// Frames with every joint fixed in the heading frame; root motion as given.
MotionSequence rigid_motion(double forward, double turn, double foot_x, double foot_slide) {
    MotionSequence m;
    m.frames = 40;
    m.data.assign(m.frames * kFeatureDim, 0.0f);
    for (std::size_t f = 0; f < m.frames; ++f) {
        auto row = m.row(f);
        row[layout::kAngularVelocity] = static_cast<float>(turn);
        row[layout::kLinearVelocity + 1] = static_cast<float>(forward);
        row[layout::kRootHeight] = 0.95f;
        for (Joint foot : {Joint::left_foot, Joint::right_foot}) {
            const std::size_t j = static_cast<std::size_t>(foot);
            const double side = foot == Joint::left_foot ? 1.0 : -1.0;
            row[layout::kPositions + 3 * j] = static_cast<float>(side * foot_x);
            row[layout::kPositions + 3 * j + 2] = static_cast<float>(-foot_slide * static_cast<double>(f));
            row[layout::kVelocities + 3 * j + 2] = static_cast<float>(-foot_slide);
        }
    }
    return m;
}

}  // namespace

TEST_CASE("fid of a distribution with itself is zero") {
    const auto fit = GaussianFit::fit(gaussian_rows(200, 8, 1));
    CHECK(std::abs(fid(fit, fit)) < 1e-6);
}

TEST_CASE("fid closed forms for one-dimensional Gaussians") {
    CHECK(fid(diagonal_fit({0}, {1}), diagonal_fit({1}, {1})) == doctest::Approx(1.0).epsilon(1e-9));
    // (σa − σb)² with σ = 1 and 2.
    CHECK(fid(diagonal_fit({0}, {1}), diagonal_fit({0}, {4})) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(fid(diagonal_fit({2}, {9}), diagonal_fit({-1}, {1})) == doctest::Approx(9.0 + 4.0).epsilon(1e-9));
}

TEST_CASE("fid of diagonal Gaussians sums per-axis terms") {
    const auto a = diagonal_fit({0, 1, 2}, {1, 4, 0.25});
    const auto b = diagonal_fit({1, 1, 0}, {9, 1, 1});
    const double expected = (1 + 0 + 4) + std::pow(1 - 3, 2) + std::pow(2 - 1, 2) + std::pow(0.5 - 1, 2);
    CHECK(fid(a, b) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("fid of full 2x2 covariances matches the trace formula") {
    // tr sqrt(A^½ B A^½) = Σ sqrt(λ(AB)) = sqrt(tr(AB) + 2 sqrt(det(AB))) in 2-d.
    GaussianFit a{{0.5, -1}, {2.0, 0.6, 0.6, 1.0}};
    GaussianFit b{{0, 0}, {1.5, -0.4, -0.4, 0.8}};
    const double ab00 = 2.0 * 1.5 + 0.6 * -0.4, ab01 = 2.0 * -0.4 + 0.6 * 0.8;
    const double ab10 = 0.6 * 1.5 + 1.0 * -0.4, ab11 = 0.6 * -0.4 + 1.0 * 0.8;
    const double tr = ab00 + ab11, det = ab00 * ab11 - ab01 * ab10;
    const double cross = std::sqrt(tr + 2 * std::sqrt(det));
    const double expected = 0.25 + 1 + (3.0 + 2.3) - 2 * cross;
    CHECK(fid(a, b) == doctest::Approx(expected).epsilon(1e-9));
    CHECK(fid(a, b) == doctest::Approx(fid(b, a)).epsilon(1e-9));
}

TEST_CASE("fid grows with a mean shift and rejects mismatched dimensions") {
    const auto base = GaussianFit::fit(gaussian_rows(300, 4, 2));
    const auto near = GaussianFit::fit(gaussian_rows(300, 4, 3, 0.2));
    const auto far = GaussianFit::fit(gaussian_rows(300, 4, 4, 1.0));
    CHECK(fid(base, near) < fid(base, far));
    CHECK_THROWS_AS(fid(base, diagonal_fit({0}, {1})), ContractError);
    CHECK_THROWS_AS(GaussianFit::fit(gaussian_rows(1, 4, 5)), ContractError);
}

TEST_CASE("gaussian fit uses the unbiased covariance") {
    const FeatureMatrix m{3, 1, {1, 2, 6}};
    const auto g = GaussianFit::fit(m);
    CHECK(g.mean[0] == doctest::Approx(3.0));
    CHECK(g.covariance[0] == doctest::Approx(7.0));  // (4 + 1 + 9) / 2
}

TEST_CASE("mm distance matches a loop over matched rows") {
    const auto text = gaussian_rows(50, 6, 10);
    const auto motion = gaussian_rows(50, 6, 11);
    double expected = 0;
    for (std::size_t i = 0; i < 50; ++i) expected += euclid(text.row(i), motion.row(i));
    CHECK(mm_distance(text, motion) == doctest::Approx(expected / 50).epsilon(1e-12));
    CHECK(mm_distance(text, text) == 0.0);
    CHECK_THROWS_AS(mm_distance(text, gaussian_rows(49, 6, 12)), ContractError);
}

TEST_CASE("r-precision of random features is near chance") {
    // 3 of 32 candidates; 3σ binomial bound over the evaluated rows.
    const std::size_t rows = 1024;
    const auto text = gaussian_rows(rows, 8, 20);
    const auto motion = gaussian_rows(rows, 8, 21);
    const double p = 3.0 / 32.0;
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(rows));
    const double got = r_precision(text, motion, 32, 3, 22);
    CHECK(std::abs(got - p) < 3 * sigma);
}

TEST_CASE("r-precision of perfectly matched features is one") {
    const auto text = gaussian_rows(64, 8, 30);
    CHECK(r_precision(text, text, 32, 3, 31) == 1.0);
    CHECK_THROWS_AS(r_precision(text, text, 3, 1, 1), ContractError);
    CHECK_THROWS_AS(r_precision(text, text, 32, 32, 1), ContractError);
    CHECK_THROWS_AS(r_precision(gaussian_rows(16, 8, 1), gaussian_rows(16, 8, 2), 32, 3, 1), ContractError);
}

TEST_CASE("diversity") {
    SUBCASE("identical motions have zero diversity") {
        FeatureMatrix same{40, 5, {}};
        for (std::size_t i = 0; i < 40; ++i)
            for (double v : {0.1, -0.2, 0.3, 0.0, 1.5}) same.values.push_back(v);
        CHECK(diversity(same, 16, 1) == 0.0);
    }
    SUBCASE("two rows give their distance") {
        const FeatureMatrix two{2, 2, {0, 0, 3, 4}};
        CHECK(diversity(two, 10, 1) == doctest::Approx(5.0));
    }
    SUBCASE("i.i.d. standard normal rows approach sqrt(2 d)") {
        const auto m = gaussian_rows(4000, 16, 40);
        CHECK(diversity(m, 2000, 41) == doctest::Approx(std::sqrt(32.0)).epsilon(0.03));
    }
    CHECK_THROWS_AS(diversity(FeatureMatrix{1, 2, {0, 0}}, 1, 1), ContractError);
}

TEST_CASE("foot skate") {
    SUBCASE("a static pose does not skate") {
        const MotionSequence still = rigid_motion(0, 0, 0.1, 0);
        CHECK(foot_skate_frames(still) == 0.0);
        const std::vector<const MotionSequence*> one = {&still};
        CHECK(foot_skate_ratio(one) == 0.0);
    }
    SUBCASE("grounded feet dragged along by the root skate every frame") {
        CHECK(foot_skate_frames(rigid_motion(0.05, 0, 0.1, 0)) == 1.0);
    }
    SUBCASE("feet moving back at the root speed stay planted") {
        CHECK(foot_skate_frames(rigid_motion(0.05, 0, 0.1, 0.05)) == 0.0);
    }
    SUBCASE("turning in place swings wide feet through the world") {
        CHECK(foot_skate_frames(rigid_motion(0, 0.1, 0.5, 0)) == 1.0);
        CHECK(foot_skate_frames(rigid_motion(0, 0.01, 0.1, 0)) == 0.0);
    }
    SUBCASE("lifted feet never count") {
        MotionSequence m = rigid_motion(0.05, 0, 0.1, 0);
        for (std::size_t f = 0; f < m.frames; ++f)
            for (Joint foot : {Joint::left_foot, Joint::right_foot})
                m.row(f)[layout::kPositions + 3 * static_cast<std::size_t>(foot) + 1] = 0.2f;
        CHECK(foot_skate_frames(m) == 0.0);
    }
    const std::vector<const MotionSequence*> none;
    CHECK_THROWS_AS(foot_skate_ratio(none), ContractError);
}

TEST_CASE("accuracy") {
    const std::vector<std::size_t> p = {0, 1, 2, 3};
    const std::vector<std::size_t> t = {0, 1, 0, 0};
    CHECK(accuracy_percent(p, t) == 50.0);
    CHECK_THROWS_AS(accuracy_percent({}, {}), ContractError);
    CHECK_THROWS_AS(accuracy_percent(p, std::vector<std::size_t>{0}), ContractError);
}

TEST_CASE("feature classifier learns separable clusters") {
    Rng rng(3);
    std::vector<real> values;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < 120; ++i) {
        const std::size_t y = i % 3;
        for (std::size_t k = 0; k < 6; ++k) values.push_back((k == y ? real(2) : real(0)) + real(0.3) * rng.normal());
        labels.push_back(y);
    }
    const Tensor features = Tensor::from({120, 6}, values);
    Rng init(4);
    FeatureClassifier classifier(6, 3, init, 16);
    ClassifierTrainConfig config;
    config.epochs = 60;
    train_classifier(classifier, features, labels, config);
    CHECK(accuracy_percent(classifier.predict(features), labels) > 95.0);
    for (const auto& t : classifier.params().tensors()) CHECK_FALSE(t.requires_grad());
}

TEST_CASE("parameter report totals") {
    ParamReport report{{{"a", 10, 0}, {"b", 5, 5}, {"c", 0, 0}}};
    CHECK(report.total() == 15);
    CHECK(report.learnable() == 5);
    CHECK(report.at("b").learnable == 5);
    CHECK_THROWS_AS(report.at("missing"), ContractError);
}
