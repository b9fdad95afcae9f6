// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "smld/vae.hpp"
#include "support.hpp"

using namespace smld;
using smld::testing::pointers;
using smld::testing::random_tensor;
using smld::testing::small_motion_set;
using smld::testing::tiny_vae_config;

TEST_CASE("kl divergence matches a Monte-Carlo estimate") {
    const Tensor mean = random_tensor({2, 3}, 1, real(0.8));
    const Tensor logvar = random_tensor({2, 3}, 2, real(0.5));
    const double closed = kl_divergence(mean, logvar, 1).item();

    std::mt19937_64 engine(3);
    std::normal_distribution<double> n(0.0, 1.0);
    const std::size_t samples = 10000;
    double estimate = 0;
    for (std::size_t s = 0; s < samples; ++s) {
        double log_ratio = 0;
        for (std::size_t i = 0; i < mean.numel(); ++i) {
            const double mu = mean.data()[i], sigma = std::exp(0.5 * logvar.data()[i]);
            const double eps = n(engine);
            const double z = mu + sigma * eps;
            // log q(z) − log p(z); the 2π terms cancel.
            log_ratio += -0.5 * eps * eps - std::log(sigma) + 0.5 * z * z;
        }
        estimate += log_ratio / static_cast<double>(samples);
    }
    CHECK(std::abs(estimate - closed) / closed < 0.02);
}

TEST_CASE("kl is zero at the prior and averages over the batch") {
    const Tensor zero = Tensor::zeros({4, 3});
    CHECK(kl_divergence(zero, zero, 2).item() == 0);
    const Tensor mean = Tensor::full({4, 3}, real(1));
    CHECK(kl_divergence(mean, zero, 2).item() == doctest::Approx(0.5 * 12 / 2));
}

TEST_CASE("reparameterize is mean plus scaled noise") {
    const Tensor mean = Tensor::from({1, 2}, {1, -1});
    const Tensor logvar = Tensor::from({1, 2}, {0, std::log(real(4))});
    const Tensor eps = Tensor::from({1, 2}, {0.5, 0.5});
    const auto z = reparameterize(mean, logvar, eps).to_vector();
    CHECK(z[0] == doctest::Approx(1.5));
    CHECK(z[1] == doctest::Approx(0.0));
}

TEST_CASE("vae config validation") {
    VaeConfig config = tiny_vae_config();
    CHECK_NOTHROW(config.validate());
    CHECK_THROWS(config.check_frames(44));  // not a multiple of the patch
    CHECK_THROWS(config.check_frames(32));  // below the minimum
    CHECK_NOTHROW(config.check_frames(48));
    config.hidden = 9;  // not divisible by the head count
    CHECK_THROWS(config.validate());
}

TEST_CASE("encoder and decoder shapes") {
    const auto motions = small_motion_set(3);
    const auto ptrs = pointers(motions);
    Rng rng(1);
    VaeModel model(tiny_vae_config(), rng);
    model.normalizer() = FeatureNormalizer::fit(ptrs);
    const LatentSeq latent = model.encode(ptrs);
    CHECK(latent.batch == 3);
    CHECK(latent.mean.shape() == Shape{6, 4});
    CHECK(latent.logvar.shape() == Shape{6, 4});
    const auto decoded = model.decode(latent.mean, 3, 40);
    REQUIRE(decoded.size() == 3);
    CHECK(decoded[0].frames == 40);
    CHECK(decoded[0].data.size() == 40 * kFeatureDim);
    for (float v : decoded[2].data) REQUIRE(std::isfinite(v));
}

TEST_CASE("style encoder shapes hold for every valid frame count") {
    Rng rng(2);
    VaeModel model(tiny_vae_config(), rng);
    const auto fit_set = small_motion_set(2);
    model.normalizer() = FeatureNormalizer::fit(pointers(fit_set));
    const StyleEncoder encoder(model, 8, rng);
    for (std::size_t frames : {40, 48, 96, 200}) {
        const std::vector<MotionSequence> motions = {generate_motion("walk", "old", 1, frames),
                                                     generate_motion("run", "wide", 2, frames)};
        const auto features = encoder.encode(pointers(motions));
        CHECK(features.tokens.shape() == Shape{4, 4});
        CHECK(features.pooled.shape() == Shape{2, 4});
        const Tensor unit = encoder.embed(pointers(motions));
        for (std::size_t r = 0; r < 2; ++r) {
            double norm = 0;
            for (std::size_t c = 0; c < 4; ++c) norm += unit.at(r, c) * unit.at(r, c);
            CHECK(std::sqrt(norm) == doctest::Approx(1.0));
        }
        CHECK(encoder.fusion_features(unit).shape() == Shape{4, 8});
    }
}

TEST_CASE("the style encoder keeps the encoder and drops the decoder") {
    Rng rng(3);
    VaeModel model(tiny_vae_config(), rng);
    const StyleEncoder encoder(model, 8, rng);
    for (const auto& name : encoder.params().names()) CHECK(name.find("decoder") == std::string::npos);
    // Encoder weights are copied from the VAE; the adapter is the only addition.
    const std::size_t adapter = 4 * 8 + 8;
    CHECK(encoder.parameter_count() == model.encoder().params().count() + adapter);
    CHECK(encoder.parameter_count() < model.parameter_count());
}

TEST_CASE("training reduces the loss and is reproducible") {
    const auto motions = small_motion_set(8);
    const auto ptrs = pointers(motions);
    VaeTrainConfig train;
    train.epochs = 6;
    train.batch_size = 4;
    train.warmup_epochs = 2;
    train.seed = 9;

    auto run = [&] {
        Rng rng(4);
        VaeModel model(tiny_vae_config(), rng);
        model.normalizer() = FeatureNormalizer::fit(ptrs);
        const auto curve = train_vae(model, ptrs, train);
        return std::make_pair(curve, model.to_table());
    };
    const auto [curve, table] = run();
    const auto [curve2, table2] = run();
    CHECK(curve.epoch_loss.back() < curve.epoch_loss.front());
    CHECK(curve.epoch_loss == curve2.epoch_loss);
    REQUIRE(table.entries().size() == table2.entries().size());
    for (std::size_t i = 0; i < table.entries().size(); ++i) CHECK(table.entries()[i].values == table2.entries()[i].values);
}

TEST_CASE("vae and style encoder tables round-trip") {
    const auto motions = small_motion_set(2);
    const auto ptrs = pointers(motions);
    Rng rng(5);
    VaeModel model(tiny_vae_config(), rng);
    model.normalizer() = FeatureNormalizer::fit(ptrs);
    const VaeModel restored = VaeModel::from_table(model.to_table());
    CHECK(restored.encode(ptrs).mean.to_vector() == model.encode(ptrs).mean.to_vector());

    const StyleEncoder encoder(model, 8, rng);
    const StyleEncoder back = StyleEncoder::from_table(encoder.to_table());
    CHECK(back.embed(ptrs).to_vector() == encoder.embed(ptrs).to_vector());
    CHECK(hash_store(back.params()) == hash_store(encoder.params()));
}

TEST_CASE("normalizer inverts itself") {
    const auto motions = small_motion_set(3);
    const auto ptrs = pointers(motions);
    const auto norm = FeatureNormalizer::fit(ptrs);
    for (real s : norm.stddev) CHECK(s >= real(0.01));
    const auto back = norm.denormalize(norm.normalize(ptrs), 3);
    for (std::size_t i = 0; i < motions[1].data.size(); ++i)
        REQUIRE(back[1].data[i] == doctest::Approx(motions[1].data[i]).epsilon(1e-4).scale(1));
}
