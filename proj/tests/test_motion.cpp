// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "smld/checkpoint.hpp"
#include "smld/motion.hpp"
#include "smld/nn.hpp"
#include "support.hpp"

using namespace smld;

namespace {

// Rotation about +y with x lateral and z forward.
std::array<double, 2> rotate_y(double x, double z, double angle) {
    return {x * std::cos(angle) + z * std::sin(angle), -x * std::sin(angle) + z * std::cos(angle)};
}

// World-space reconstruction: integrate heading and root, place feet, and
// difference world positions. Frame −1 is the state implied by frame 0's
// stored velocities.
double skate_oracle(const MotionSequence& m, double h_eps, double v_eps) {
    struct State {
        double heading;
        double x, z;
    };
    std::vector<State> root(m.frames);
    State s{0, 0, 0};
    for (std::size_t f = 0; f < m.frames; ++f) {
        if (f > 0) {
            s.heading += m.at(f, layout::kAngularVelocity);
            const auto step = rotate_y(m.at(f, layout::kLinearVelocity), m.at(f, layout::kLinearVelocity + 1), s.heading);
            s.x += step[0];
            s.z += step[1];
        }
        root[f] = s;
    }
    auto world_foot = [](const State& r, double px, double pz) {
        const auto w = rotate_y(px, pz, r.heading);
        return std::array<double, 2>{r.x + w[0], r.z + w[1]};
    };
    std::size_t skating = 0;
    for (std::size_t f = 0; f < m.frames; ++f) {
        bool skate = false;
        for (Joint foot : {Joint::left_foot, Joint::right_foot}) {
            const auto p = m.joint_position(f, foot);
            std::array<double, 2> now = world_foot(root[f], p[0], p[2]), before{};
            if (f > 0) {
                const auto q = m.joint_position(f - 1, foot);
                before = world_foot(root[f - 1], q[0], q[2]);
            } else {
                const auto v = m.joint_velocity(0, foot);
                // Root state 0 has heading 0, so its step needs no rotation.
                const State prev{-static_cast<double>(m.at(0, layout::kAngularVelocity)),
                                 -static_cast<double>(m.at(0, layout::kLinearVelocity)),
                                 -static_cast<double>(m.at(0, layout::kLinearVelocity + 1))};
                before = world_foot(prev, p[0] - v[0], p[2] - v[2]);
            }
            const double speed = std::hypot(now[0] - before[0], now[1] - before[1]);
            if (p[1] < h_eps && speed > v_eps) skate = true;
        }
        skating += skate ? 1 : 0;
    }
    return static_cast<double>(skating) / static_cast<double>(m.frames);
}

double mean_forward_speed(const MotionSequence& m) {
    double total = 0;
    for (std::size_t f = 0; f < m.frames; ++f)
        total += std::hypot(m.at(f, layout::kLinearVelocity), m.at(f, layout::kLinearVelocity + 1));
    return total / static_cast<double>(m.frames);
}

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("skeleton and vocabularies") {
    CHECK(Skeleton::standard().is_tree());
    CHECK(kFeatureDim == 54);
    CHECK(content_labels().size() == 4);
    CHECK(style_labels().size() == 8);
    for (const auto& c : content_labels()) CHECK(content_from_sentence(content_sentence(c)) == c);
    CHECK_THROWS_AS(content_index("swim"), VocabularyError);
    CHECK_THROWS_AS(style_index("sleepy"), VocabularyError);
    CHECK_THROWS_AS(content_from_sentence("a person is swimming"), VocabularyError);
}

TEST_CASE("distinct styles differ in at least two parameters") {
    const auto& styles = style_labels();
    for (std::size_t a = 0; a < styles.size(); ++a)
        for (std::size_t b = a + 1; b < styles.size(); ++b) {
            const auto pa = style_params(styles[a]).as_array();
            const auto pb = style_params(styles[b]).as_array();
            int differing = 0;
            for (std::size_t k = 0; k < pa.size(); ++k) differing += pa[k] != pb[k] ? 1 : 0;
            CHECK_MESSAGE(differing >= 2, styles[a] << " vs " << styles[b]);
        }
}

TEST_CASE("generated motions satisfy the representation invariants") {
    for (const auto& c : content_labels())
        for (const auto& s : style_labels()) {
            const MotionSequence m = generate_motion(c, s, 17, 80);
            REQUIRE(m.frames == 80);
            REQUIRE(m.data.size() == 80 * kFeatureDim);
            CHECK(m.content == c);
            CHECK(m.style == s);
            CHECK(velocity_consistency_error(m) < 1e-5);
            for (std::size_t f = 0; f < m.frames; ++f) {
                for (float v : m.row(f)) REQUIRE(std::isfinite(v));
                for (std::size_t k = 0; k < 2; ++k) {
                    const float flag = m.at(f, layout::kContacts + k);
                    CHECK((flag == 0.0f || flag == 1.0f));
                }
            }
        }
}

TEST_CASE("generation is deterministic and seed-dependent") {
    const auto a = generate_motion("walk", "neutral", 0, 80);
    const auto b = generate_motion("walk", "neutral", 0, 80);
    const auto c = generate_motion("walk", "neutral", 1, 80);
    CHECK(a.data == b.data);
    CHECK(a.data != c.data);
    CHECK_THROWS_AS(generate_motion("swim", "neutral", 0, 80), VocabularyError);
    CHECK_THROWS_AS(generate_motion("walk", "neutral", 0, 39), ContractError);
    CHECK_THROWS_AS(generate_motion("walk", "neutral", 0, 201), ContractError);
}

TEST_CASE("circle walks return near their start") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto m = generate_motion("circle_walk", "neutral", seed, 80);
        const auto path = integrate_root_trajectory(m);
        CHECK(std::hypot(path.back()[0] - path.front()[0], path.back()[1] - path.front()[1]) < 0.5);
    }
}

TEST_CASE("style speed ordering") {
    CHECK(mean_forward_speed(generate_motion("walk", "old", 3, 80)) <
          mean_forward_speed(generate_motion("walk", "fast", 3, 80)));
}

TEST_CASE("foot skate matches a world-space reconstruction") {
    for (const auto& c : content_labels())
        for (const auto& s : {"neutral", "old", "tiptoe"}) {
            const auto m = generate_motion(c, s, 11, 80);
            CHECK_MESSAGE(foot_skate_frames(m) == skate_oracle(m, 0.05, 0.01), c << "/" << s);
        }
}

TEST_CASE("corpus split is stratified and sized by the test fraction") {
    CorpusConfig config;
    config.samples_per_cell = 5;
    config.num_frames = 40;
    const Corpus corpus = build_corpus(config);
    CHECK(corpus.size() == 32 * 5);
    CHECK(corpus.test.size() == 32);  // round(160 · 0.2)

    std::set<std::pair<std::string, std::string>> train_cells, test_cells;
    std::set<std::string> ids;
    for (const auto& r : corpus.train) {
        train_cells.insert({r.content, r.style});
        ids.insert(r.id);
        CHECK(r.sentence == content_sentence(r.content));
    }
    for (const auto& r : corpus.test) {
        test_cells.insert({r.content, r.style});
        ids.insert(r.id);
    }
    CHECK(train_cells.size() == 32);
    CHECK(test_cells.size() == 32);
    CHECK(ids.size() == corpus.size());

    CorpusConfig bad = config;
    bad.samples_per_cell = 3;
    CHECK_THROWS_AS(build_corpus(bad), ConfigError);
    bad = config;
    bad.test_fraction = 1.0;
    CHECK_THROWS_AS(build_corpus(bad), ConfigError);
}

TEST_CASE("default corpus is 512 sequences split 80/20") {
    CorpusConfig config;
    const Corpus corpus = build_corpus(config);
    CHECK(corpus.size() == 512);
    CHECK(corpus.test.size() == 102);  // round(512 · 0.2)
}

TEST_CASE("style is linearly separable from per-sequence mean features") {
    CorpusConfig config;
    config.samples_per_cell = 10;
    const Corpus corpus = build_corpus(config);
    auto features = [](const std::vector<CorpusRecord>& records, std::vector<int>& labels) {
        std::vector<real> values;
        for (const auto& r : records) {
            std::vector<double> mean(kFeatureDim, 0.0);
            for (std::size_t f = 0; f < r.motion.frames; ++f)
                for (std::size_t k = 0; k < kFeatureDim; ++k) mean[k] += r.motion.at(f, k);
            for (double& v : mean) values.push_back(static_cast<real>(v / static_cast<double>(r.motion.frames)));
            labels.push_back(static_cast<int>(style_index(r.style)));
        }
        return Tensor::from({records.size(), kFeatureDim}, values);
    };
    std::vector<int> train_labels, test_labels;
    Tensor train = features(corpus.train, train_labels);
    Tensor test = features(corpus.test, test_labels);

    // Standardize with training statistics, then fit multinomial logistic regression.
    std::vector<double> mu(kFeatureDim, 0), sd(kFeatureDim, 0);
    for (std::size_t i = 0; i < train.rows(); ++i)
        for (std::size_t k = 0; k < kFeatureDim; ++k) mu[k] += train.at(i, k) / static_cast<double>(train.rows());
    for (std::size_t i = 0; i < train.rows(); ++i)
        for (std::size_t k = 0; k < kFeatureDim; ++k)
            sd[k] += std::pow(train.at(i, k) - mu[k], 2) / static_cast<double>(train.rows());
    auto standardize = [&](Tensor& t) {
        auto v = t.mutable_data();
        for (std::size_t i = 0; i < t.rows(); ++i)
            for (std::size_t k = 0; k < kFeatureDim; ++k)
                v[i * kFeatureDim + k] = static_cast<real>((v[i * kFeatureDim + k] - mu[k]) / (std::sqrt(sd[k]) + 1e-6));
    };
    standardize(train);
    standardize(test);

    ParameterStore store;
    Rng rng(1);
    const Linear logistic = Linear::create(store, "w", kFeatureDim, 8, rng);
    AdamW optimizer(store.tensors(), AdamWConfig{.lr = real(0.05)});
    for (int step = 0; step < 300; ++step) {
        optimizer.zero_grad();
        backward(cross_entropy(logistic(train), train_labels));
        optimizer.step();
    }
    NoGradGuard no_grad;
    const Tensor logits = logistic(test);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < 8; ++k)
            if (logits.at(i, k) > logits.at(i, best)) best = k;
        hits += static_cast<int>(best) == test_labels[i] ? 1 : 0;
    }
    CHECK(100.0 * static_cast<double>(hits) / static_cast<double>(logits.rows()) >= 95.0);
}

TEST_CASE("motion files and manifests round-trip byte-stably") {
    const auto dir = smld::testing::scratch_dir("motion_io");
    const auto m = generate_motion("hop", "proud", 5, 48);
    write_motion(dir / "a.smot", m);
    write_motion(dir / "b.smot", m);
    CHECK(file_bytes(dir / "a.smot") == file_bytes(dir / "b.smot"));
    CHECK(file_fingerprint(dir / "a.smot") == file_fingerprint(dir / "b.smot"));
    const auto back = read_motion(dir / "a.smot");
    CHECK(back.frames == m.frames);
    CHECK(back.content == "hop");
    CHECK(back.style == "proud");
    CHECK(back.data == m.data);

    std::ofstream(dir / "junk.smot") << "not a motion";
    CHECK_THROWS_AS(read_motion(dir / "junk.smot"), LoadError);
    CHECK_THROWS_AS(read_motion(dir / "missing.smot"), LoadError);

    const std::vector<ManifestEntry> entries = {{"x", "motions/x.smot", "a person is walking", "old", Split::train},
                                                {"y", "motions/y.smot", "a person is running", "wide", Split::test}};
    write_manifest(dir / "manifest.jsonl", entries);
    const auto read = read_manifest(dir / "manifest.jsonl");
    REQUIRE(read.size() == 2);
    CHECK(read[1].id == "y");
    CHECK(read[1].style == "wide");
    CHECK(read[1].split == Split::test);
    CHECK(read[0].content_text == "a person is walking");
}
