// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "smld/diffusion.hpp"
#include "support.hpp"

using namespace smld;
using smld::testing::pointers;
using smld::testing::random_tensor;
using smld::testing::small_motion_set;
using smld::testing::tiny_vae_config;

namespace {

DenoiserConfig tiny_denoiser() {
    DenoiserConfig c;
    c.latent_tokens = 2;
    c.latent_dim = 4;
    c.width = 8;
    c.blocks = 2;
    c.heads = 2;
    c.ff_mult = 1;
    return c;
}

struct TinySetup {
    std::vector<MotionSequence> motions = small_motion_set(4);
    Rng rng{21};
    VaeModel vae{tiny_vae_config(), rng};
    Denoiser denoiser{tiny_denoiser(), rng};
    std::optional<StyleEncoder> stylizer;
    DiffusionSchedule schedule = DiffusionSchedule::linear(20, 1e-4, 0.1);
    Tensor latents = random_tensor({8, 4}, 22);
    std::vector<std::size_t> contents = {0, 1, 2, 3};

    TinySetup() {
        vae.normalizer() = FeatureNormalizer::fit(pointers(motions));
        stylizer.emplace(vae, 8, rng);
    }
};

}  // namespace

TEST_CASE("linear schedule invariants") {
    const auto s = DiffusionSchedule::linear(100, 1e-4, 0.1);
    CHECK(s.steps() == 100);
    CHECK(s.alpha_bar()[0] > 0.99);
    for (std::size_t t = 0; t < s.steps(); ++t) {
        CHECK(s.betas()[t] > 0);
        CHECK(s.betas()[t] < 1);
        if (t > 0) CHECK(s.alpha_bar()[t] < s.alpha_bar()[t - 1]);
    }
    const auto steps = s.sampling_steps(50);
    CHECK(steps.size() == 50);
    CHECK(steps.back() == 0);
    for (std::size_t i = 1; i < steps.size(); ++i) CHECK(steps[i] < steps[i - 1]);
    CHECK_THROWS(DiffusionSchedule::linear(10, 0.2, 0.1));
}

TEST_CASE("forward diffusion mixes signal and noise by alpha-bar") {
    const auto s = DiffusionSchedule::linear(100, 1e-4, 0.1);
    const Tensor z0 = random_tensor({4, 6}, 1);
    const Tensor noise = random_tensor({4, 6}, 2);
    const std::size_t t = 37;
    const auto zt = forward_diffuse(z0, t, noise, s).to_vector();
    const double ab = s.alpha_bar()[t];
    for (std::size_t i = 0; i < zt.size(); ++i)
        CHECK(zt[i] == doctest::Approx(std::sqrt(ab) * z0.data()[i] + std::sqrt(1 - ab) * noise.data()[i]));

    // Unit-variance data stays unit-variance.
    const Tensor big0 = random_tensor({2000, 8}, 3);
    const Tensor bign = random_tensor({2000, 8}, 4);
    const auto v = forward_diffuse(big0, 80, bign, s).to_vector();
    double m2 = 0;
    for (real x : v) m2 += static_cast<double>(x) * x / static_cast<double>(v.size());
    CHECK(m2 == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("per-sample steps diffuse each row group independently") {
    const auto s = DiffusionSchedule::linear(50, 1e-4, 0.1);
    const Tensor z0 = random_tensor({4, 3}, 5);
    const Tensor noise = random_tensor({4, 3}, 6);
    const std::vector<std::size_t> steps = {3, 40};
    const auto mixed = forward_diffuse(z0, steps, noise, s, 2).to_vector();
    const auto first = forward_diffuse(z0, 3, noise, s).to_vector();
    const auto second = forward_diffuse(z0, 40, noise, s).to_vector();
    for (std::size_t i = 0; i < 6; ++i) CHECK(mixed[i] == first[i]);
    for (std::size_t i = 6; i < 12; ++i) CHECK(mixed[i] == second[i]);
}

TEST_CASE("a denoiser without style equals fusion at gamma zero") {
    TinySetup s;
    const Tensor zt = random_tensor({8, 4}, 7);
    const std::vector<std::size_t> steps = {1, 5, 9, 19};
    const Tensor style = style_features(*s.stylizer, pointers(s.motions));
    FusionConfig off;
    off.gamma = 0;
    off.hook_block = 1;
    const auto plain = s.denoiser(zt, steps, s.contents, Tensor(), off).to_vector();
    const auto zero = s.denoiser(zt, steps, s.contents, style, off).to_vector();
    CHECK(plain == zero);

    FusionConfig on = off;
    on.gamma = real(0.6);
    CHECK(s.denoiser(zt, steps, s.contents, style, on).to_vector() != plain);
}

TEST_CASE("the null content entry differs from every label") {
    TinySetup s;
    CHECK(s.denoiser.null_content() == 4);
    const Tensor zt = random_tensor({2, 4}, 8);
    const std::vector<std::size_t> steps = {5};
    FusionConfig fusion;
    const std::vector<std::size_t> null_id = {s.denoiser.null_content()};
    const auto uncond = s.denoiser(zt, steps, null_id, Tensor(), fusion).to_vector();
    for (std::size_t c = 0; c < 4; ++c) {
        const std::vector<std::size_t> id = {c};
        CHECK(s.denoiser(zt, steps, id, Tensor(), fusion).to_vector() != uncond);
    }
    const std::vector<std::size_t> bad = {5};
    CHECK_THROWS(s.denoiser(zt, steps, bad, Tensor(), fusion));
}

TEST_CASE("stylized steps require a frozen denoiser") {
    TinySetup s;
    DiffusionBatch batch{s.latents, s.contents, pointers(s.motions)};
    AdamW optimizer(s.stylizer->params().tensors(), AdamWConfig{});
    Rng rng(9);
    CHECK_THROWS_AS(train_step(s.denoiser, s.schedule, batch, TrainMode::stylized, &*s.stylizer, FusionConfig{},
                               real(0), optimizer, rng),
                    ContractError);
}

TEST_CASE("stylized training updates exactly the style encoder") {
    TinySetup s;
    DiffusionTrainConfig train;
    train.epochs = 2;
    train.batch_size = 2;
    train.min_step = 5;
    FusionConfig fusion;
    fusion.hook_block = 1;
    const auto denoiser_before = hash_store(s.denoiser.params());
    const auto encoder_before = s.stylizer->params().tensors();
    std::vector<std::vector<real>> before;
    for (const auto& t : encoder_before) before.push_back(t.to_vector());

    train_stylized_model(s.denoiser, *s.stylizer, s.schedule, s.latents, s.contents, pointers(s.motions), fusion, train);

    CHECK(hash_store(s.denoiser.params()) == denoiser_before);
    for (const auto& t : s.denoiser.params().tensors()) CHECK_FALSE(t.requires_grad());
    for (const auto& t : s.stylizer->params().tensors()) CHECK(t.requires_grad());
    std::size_t changed = 0;
    for (std::size_t i = 0; i < encoder_before.size(); ++i) changed += encoder_before[i].to_vector() != before[i] ? 1 : 0;
    CHECK(changed > 0);
}

TEST_CASE("content training is reproducible and reduces the loss") {
    auto run = [] {
        TinySetup s;
        DiffusionTrainConfig train;
        train.epochs = 8;
        train.batch_size = 2;
        train.lr = real(3e-3);
        const auto curve = train_content_model(s.denoiser, s.schedule, s.latents, s.contents, train);
        return std::make_pair(curve.epoch_loss, hash_store(s.denoiser.params()));
    };
    const auto a = run();
    const auto b = run();
    CHECK(a == b);
    CHECK(a.first.back() < a.first.front());
}

TEST_CASE("sampling is deterministic and independent of the batch") {
    TinySetup s;
    SamplerConfig config;
    config.steps = 10;
    config.fusion.hook_block = 1;
    const std::vector<std::uint64_t> seeds = {11, 12, 13, 14};
    const Tensor style = style_features(*s.stylizer, pointers(s.motions));
    const auto all = sample_latents(s.denoiser, s.schedule, s.contents, seeds, style, config).to_vector();
    CHECK(all == sample_latents(s.denoiser, s.schedule, s.contents, seeds, style, config).to_vector());
    for (real v : all) REQUIRE(std::isfinite(v));

    const std::vector<std::size_t> one_content = {s.contents[2]};
    const std::vector<std::uint64_t> one_seed = {seeds[2]};
    const std::vector<std::size_t> rows = {4, 5};
    const auto single =
        sample_latents(s.denoiser, s.schedule, one_content, one_seed, gather_rows(style, rows), config).to_vector();
    for (std::size_t i = 0; i < single.size(); ++i) CHECK(single[i] == all[2 * 2 * 4 + i]);
}

TEST_CASE("sampling at gamma zero equals content-only sampling") {
    TinySetup s;
    SamplerConfig config;
    config.steps = 10;
    config.fusion.gamma = 0;
    config.fusion.hook_block = 1;
    const std::vector<std::uint64_t> seeds = {1, 2, 3, 4};
    const Tensor style = style_features(*s.stylizer, pointers(s.motions));
    for (bool guide_style : {true, false}) {
        config.guide_style = guide_style;
        CHECK(sample_latents(s.denoiser, s.schedule, s.contents, seeds, style, config).to_vector() ==
              sample_latents(s.denoiser, s.schedule, s.contents, seeds, Tensor(), config).to_vector());
    }
}

TEST_CASE("classifier guidance needs a classifier and targets") {
    TinySetup s;
    SamplerConfig config;
    config.steps = 4;
    config.w_cls = real(1);
    const std::vector<std::uint64_t> seeds = {1, 2, 3, 4};
    CHECK_THROWS_AS(sample_latents(s.denoiser, s.schedule, s.contents, seeds, Tensor(), config), ContractError);

    LatentStyleClassifier classifier(2, 4, 8, s.rng);
    const std::vector<std::size_t> targets = {0, 1, 2, 3};
    const auto guided =
        sample_latents(s.denoiser, s.schedule, s.contents, seeds, Tensor(), config, &classifier, targets).to_vector();
    config.w_cls = 0;
    CHECK(guided != sample_latents(s.denoiser, s.schedule, s.contents, seeds, Tensor(), config).to_vector());
}

TEST_CASE("latent statistics standardize and restore") {
    const Tensor latents = random_tensor({12, 4}, 30, real(3));
    const auto stats = LatentStats::fit(latents, 2);
    CHECK(stats.mean.size() == 8);
    const auto restored = stats.restore(stats.standardize(latents)).to_vector();
    for (std::size_t i = 0; i < restored.size(); ++i)
        CHECK(restored[i] == doctest::Approx(latents.data()[i]).epsilon(1e-5));
}

TEST_CASE("diffusion model tables round-trip") {
    TinySetup s;
    DiffusionModel model{tiny_denoiser(), 20, 1e-4, 0.1, s.denoiser, LatentStats::fit(s.latents, 2), std::nullopt};
    const DiffusionModel back = DiffusionModel::from_table(model.to_table());
    CHECK(back.schedule_steps == 20);
    CHECK(back.beta_end == doctest::Approx(0.1));
    CHECK(hash_store(back.denoiser.params()) == hash_store(model.denoiser.params()));
    CHECK(back.stats.mean == model.stats.mean);
    CHECK_FALSE(back.classifier.has_value());
}
