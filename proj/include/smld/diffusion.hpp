// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0
//
// Latent diffusion over VAE tokens.
//
// Each sample is a row group [condition token; n latent tokens]. The condition
// token carries the content embedding plus the timestep embedding. Style enters
// only through `fuse`, applied once to the latent rows after `hook_block`
// blocks. Latents are standardized per element before diffusion.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smld/checkpoint.hpp"
#include "smld/fusion.hpp"
#include "smld/nn.hpp"
#include "smld/tensor.hpp"
#include "smld/vae.hpp"

SMLD_NAMESPACE_BEGIN

class DiffusionSchedule {
  public:
    /// Linear betas from beta_start to beta_end over `steps`.
    static DiffusionSchedule linear(std::size_t steps, double beta_start, double beta_end);

    std::size_t steps() const { return betas_.size(); }
    std::span<const double> betas() const { return betas_; }
    std::span<const double> alphas() const { return alphas_; }
    std::span<const double> alpha_bar() const { return alpha_bar_; }
    /// `count` evenly strided steps in descending order, ending at 0.
    std::vector<std::size_t> sampling_steps(std::size_t count) const;

  private:
    std::vector<double> betas_, alphas_, alpha_bar_;
};

/// sqrt(ᾱ_t)·z0 + sqrt(1 − ᾱ_t)·noise.
Tensor forward_diffuse(const Tensor& z0, std::size_t step, const Tensor& noise, const DiffusionSchedule& schedule);
/// Per-sample steps: z0 and noise are [(B·rows) × d] with `rows` per sample.
Tensor forward_diffuse(const Tensor& z0, std::span<const std::size_t> steps, const Tensor& noise,
                       const DiffusionSchedule& schedule, std::size_t rows);

struct DenoiserConfig {
    std::size_t latent_tokens = 2;
    std::size_t latent_dim = 32;
    std::size_t width = 64;
    std::size_t blocks = 4;
    std::size_t heads = 4;
    std::size_t ff_mult = 2;
    std::size_t content_vocab = 4;

    void validate() const;
    std::map<std::string, std::string> to_metadata(const std::string& prefix) const;
    static DenoiserConfig from_metadata(const std::map<std::string, std::string>& meta, const std::string& prefix);
};

/// Learned embeddings for the closed content vocabulary plus one null entry
/// (index == vocab size) used for classifier-free guidance.
struct ContentEncoder {
    Tensor table;  // [(V + 1) × width]
    std::size_t vocab = 0;

    std::size_t null_index() const { return vocab; }
    Tensor operator()(std::span<const std::size_t> ids) const;
};

class Denoiser {
  public:
    Denoiser(const DenoiserConfig& config, Rng& rng);

    /// Predicts the noise in z_t [(B·n) × d]. `style` is either undefined (no
    /// fusion) or [(B·n) × width].
    Tensor operator()(const Tensor& z_t, std::span<const std::size_t> steps, std::span<const std::size_t> content_ids,
                      const Tensor& style, const FusionConfig& fusion) const;

    const DenoiserConfig& config() const { return config_; }
    std::size_t null_content() const { return content_.null_index(); }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }

  private:
    DenoiserConfig config_;
    ParameterStore store_;
    ContentEncoder content_;
    Linear time_in_, time_out_;
    Linear latent_in_;
    Tensor latent_pos_;
    std::vector<TransformerBlock> blocks_;
    LayerNorm out_norm_;
    Linear out_;
};

/// Per-element standardization of flattened latent samples [n·d].
struct LatentStats {
    std::vector<real> mean;
    std::vector<real> stddev;

    static LatentStats fit(const Tensor& latents, std::size_t rows_per_sample);
    Tensor standardize(const Tensor& latents) const;
    Tensor restore(const Tensor& standardized) const;
};

/// Small MLP over standardized latents predicting the style label; the
/// optional classifier-guidance term differentiates its log-probability.
class LatentStyleClassifier {
  public:
    LatentStyleClassifier(std::size_t latent_tokens, std::size_t latent_dim, std::size_t classes, Rng& rng);
    /// latents [(B·n) × d] → logits [B × classes]
    Tensor operator()(const Tensor& latents) const;
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }
    std::size_t classes() const { return classes_; }

  private:
    std::size_t tokens_, dim_, classes_;
    ParameterStore store_;
    Linear hidden_, out_;
};

/// Cross-entropy training on standardized latents [(N·n) × d]. The
/// classifier is frozen on return.
TrainCurve train_latent_classifier(LatentStyleClassifier& classifier, const Tensor& latents,
                                   std::span<const std::size_t> labels, std::size_t epochs, real lr,
                                   std::uint64_t seed);

enum class TrainMode { content_only, stylized };

/// Inputs of one diffusion training step. `z0` holds standardized latents
/// [(B·n) × d]. In stylized mode `style_refs` pairs each sample with a style
/// reference motion and `style_encoder` supplies the fusion features.
struct DiffusionBatch {
    Tensor z0;
    std::vector<std::size_t> content_ids;
    std::vector<const MotionSequence*> style_refs;
};

/// ε-prediction MSE with steps drawn uniformly from [min_step, T). Draws, in
/// order: one step per sample, the noise, one condition-dropout coin per
/// sample; identical consumption in both modes.
Tensor diffusion_loss(const Denoiser& denoiser, const DiffusionSchedule& schedule, const DiffusionBatch& batch,
                      TrainMode mode, const StyleEncoder* style_encoder, const FusionConfig& fusion,
                      real cond_dropout, Rng& rng, std::size_t min_step = 0);

/// Style features for fusion from reference motions: unit pooled embedding,
/// tiled over the latent rows and adapted to the denoiser width.
Tensor style_features(const StyleEncoder& encoder, std::span<const MotionSequence* const> refs);

/// One optimizer step on `optimizer`'s parameters. In stylized mode every
/// denoiser parameter must be frozen. Throws TrainingError on a non-finite
/// loss, leaving parameters untouched.
double train_step(const Denoiser& denoiser, const DiffusionSchedule& schedule, const DiffusionBatch& batch,
                  TrainMode mode, const StyleEncoder* style_encoder, const FusionConfig& fusion, real cond_dropout,
                  AdamW& optimizer, Rng& rng, std::size_t min_step = 0);

struct DiffusionTrainConfig {
    std::size_t epochs = 150;
    std::size_t batch_size = 32;
    real lr = real(1e-3);
    real cond_dropout = real(0.1);
    std::size_t min_step = 0;  // lower bound of the sampled diffusion step
    std::uint64_t seed = 1;
};

/// Content-only training of every denoiser parameter.
TrainCurve train_content_model(Denoiser& denoiser, const DiffusionSchedule& schedule, const Tensor& latents,
                               std::span<const std::size_t> content_ids, const DiffusionTrainConfig& config,
                               const std::function<void(std::size_t, double)>& on_epoch = {});

/// Stylized training: the denoiser is frozen and only the style encoder
/// learns. Sample i uses style_refs[i] as its style reference.
TrainCurve train_stylized_model(Denoiser& denoiser, StyleEncoder& style_encoder, const DiffusionSchedule& schedule,
                                const Tensor& latents, std::span<const std::size_t> content_ids,
                                std::span<const MotionSequence* const> style_refs, const FusionConfig& fusion,
                                const DiffusionTrainConfig& config,
                                const std::function<void(std::size_t, double)>& on_epoch = {});

struct SamplerConfig {
    std::size_t steps = 50;
    real w_cfg = real(3.0);
    real w_cls = real(0);
    /// When set, the unconditional branch drops the style as well as the
    /// content, so guidance extrapolates along both.
    bool guide_style = true;
    FusionConfig fusion;
};

/// Deterministic DDIM sampling (eta = 0). Sample i starts from noise seeded by
/// seeds[i], so a sample does not depend on the rest of its batch. `style` is
/// undefined or [(B·n) × width]. Classifier guidance is applied only when
/// w_cls > 0, which requires `classifier` and one target per sample.
Tensor sample_latents(const Denoiser& denoiser, const DiffusionSchedule& schedule,
                      std::span<const std::size_t> content_ids, std::span<const std::uint64_t> seeds,
                      const Tensor& style, const SamplerConfig& config,
                      const LatentStyleClassifier* classifier = nullptr,
                      std::span<const std::size_t> target_styles = {});

/// Denoiser, latent statistics, schedule and (optional) latent classifier.
struct DiffusionModel {
    DenoiserConfig config;
    std::size_t schedule_steps = 100;
    double beta_start = 1e-4;
    double beta_end = 0.1;
    Denoiser denoiser;
    LatentStats stats;
    std::optional<LatentStyleClassifier> classifier;

    DiffusionSchedule schedule() const { return DiffusionSchedule::linear(schedule_steps, beta_start, beta_end); }
    TensorTable to_table() const;
    static DiffusionModel from_table(const TensorTable& table);
};

SMLD_NAMESPACE_END
