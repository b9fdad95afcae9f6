// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0
//
// Token-latent motion VAE and the style encoder derived from its encoder.
//
// Frames are grouped into fixed-size temporal patches. The encoder attends
// over [n learned query tokens; patch tokens] and reads the posterior from the
// query rows; the decoder attends over [n latent tokens; positional queries]
// and reads frames back from the query rows.

#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "smld/checkpoint.hpp"
#include "smld/motion.hpp"
#include "smld/nn.hpp"
#include "smld/tensor.hpp"

SMLD_NAMESPACE_BEGIN

struct VaeConfig {
    std::size_t latent_tokens = 2;  // n
    std::size_t latent_dim = 32;    // d
    std::size_t blocks = 2;         // P, per half
    std::size_t hidden = 64;
    std::size_t heads = 4;
    std::size_t patch = 4;  // frames per token
    std::size_t ff_mult = 2;
    std::size_t min_frames = kMinFrames;
    std::size_t max_frames = kMaxFrames;

    void validate() const;
    /// Throws ContractError unless `frames` is in range and a multiple of patch.
    void check_frames(std::size_t frames) const;
    std::map<std::string, std::string> to_metadata(const std::string& prefix) const;
    static VaeConfig from_metadata(const std::map<std::string, std::string>& meta, const std::string& prefix);
};

/// Per-feature standardization fitted on a motion set. Spreads are floored at
/// 0.01 so near-constant features are not amplified.
struct FeatureNormalizer {
    std::vector<real> mean;
    std::vector<real> stddev;

    static FeatureNormalizer fit(std::span<const MotionSequence* const> motions);
    /// Stacks the motions (equal frame counts) into a [(B·F) × D] tensor.
    Tensor normalize(std::span<const MotionSequence* const> motions) const;
    /// Inverse of normalize for a [(B·F) × D] tensor.
    std::vector<MotionSequence> denormalize(const Tensor& frames, std::size_t batch) const;
    void export_to(TensorTable& table, const std::string& prefix) const;
    static FeatureNormalizer import_from(const TensorTable& table, const std::string& prefix);
};

/// Posterior over latent tokens for a batch: [(B·n) × d] each.
struct LatentSeq {
    Tensor tokens;  // a sample (or the mean when not sampled)
    Tensor mean;
    Tensor logvar;  // clamped to [-10, 10]
    std::size_t batch = 0;
};

class MotionEncoder {
  public:
    MotionEncoder(const VaeConfig& config, Rng& rng);
    /// frames: normalized [(B·F) × D]. Returns the posterior with tokens = mean.
    LatentSeq operator()(const Tensor& frames, std::size_t batch) const;
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }
    const VaeConfig& config() const { return config_; }

  private:
    VaeConfig config_;
    ParameterStore store_;
    Linear input_;
    Tensor queries_;
    std::vector<TransformerBlock> blocks_;
    LayerNorm out_norm_;
    Linear head_;
};

class MotionDecoder {
  public:
    MotionDecoder(const VaeConfig& config, Rng& rng);
    /// z: [(B·n) × d]. Returns normalized frames [(B·F) × D].
    Tensor operator()(const Tensor& z, std::size_t batch, std::size_t frames) const;
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }

  private:
    VaeConfig config_;
    ParameterStore store_;
    Linear latent_in_;
    Tensor latent_pos_;
    Linear query_in_;
    std::vector<TransformerBlock> blocks_;
    LayerNorm out_norm_;
    Linear out_;
};

/// z = μ + exp(½ logvar) · ε
Tensor reparameterize(const Tensor& mean, const Tensor& logvar, const Tensor& eps);

/// Closed-form KL(N(μ, σ²) ‖ N(0, I)) summed over latent elements, averaged
/// over `batch`.
Tensor kl_divergence(const Tensor& mean, const Tensor& logvar, std::size_t batch);

class VaeModel {
  public:
    VaeModel(const VaeConfig& config, Rng& rng);

    const VaeConfig& config() const { return config_; }
    FeatureNormalizer& normalizer() { return normalizer_; }
    const FeatureNormalizer& normalizer() const { return normalizer_; }
    MotionEncoder& encoder() { return encoder_; }
    const MotionEncoder& encoder() const { return encoder_; }
    MotionDecoder& decoder() { return decoder_; }
    const MotionDecoder& decoder() const { return decoder_; }

    /// Deterministic posterior (tokens = mean).
    LatentSeq encode(std::span<const MotionSequence* const> motions) const;
    /// Denormalized motions from latent tokens [(B·n) × d].
    std::vector<MotionSequence> decode(const Tensor& z, std::size_t batch, std::size_t frames) const;

    std::vector<Tensor> trainable() const;
    std::size_t parameter_count() const;
    TensorTable to_table() const;
    static VaeModel from_table(const TensorTable& table);

  private:
    VaeConfig config_;
    FeatureNormalizer normalizer_;
    MotionEncoder encoder_;
    MotionDecoder decoder_;
};

struct VaeLoss {
    Tensor total;
    Tensor reconstruction;
    Tensor kl;
};

/// Reconstruction MSE (normalized space) + β · KL, with ε drawn from `rng`.
VaeLoss vae_loss(const VaeModel& model, std::span<const MotionSequence* const> motions, real beta, Rng& rng);
/// Same, with explicit noise ε of shape [(B·n) × d].
VaeLoss vae_loss(const VaeModel& model, std::span<const MotionSequence* const> motions, real beta,
                 const Tensor& eps);

struct VaeTrainConfig {
    std::size_t epochs = 60;
    std::size_t batch_size = 16;
    real lr = real(1e-3);
    real beta = real(1e-4);
    std::size_t warmup_epochs = 10;  // linear β warm-up
    std::uint64_t seed = 1;
};

struct TrainCurve {
    std::vector<double> epoch_loss;
};

/// Trains every VAE parameter on `motions`. On a non-finite loss the model is
/// restored to the end of the last completed epoch and TrainingError thrown.
TrainCurve train_vae(VaeModel& model, std::span<const MotionSequence* const> motions, const VaeTrainConfig& config,
                     const std::function<void(std::size_t, double)>& on_epoch = {});

/// Encoder half of a trained VAE with a mean-over-tokens pooling head and a
/// linear adapter from d to the denoiser width (used only for fusion).
class StyleEncoder {
  public:
    StyleEncoder(const VaeModel& source, std::size_t fusion_width, Rng& rng);

    struct Features {
        Tensor tokens;  // [(B·n) × d] posterior means
        Tensor pooled;  // [B × d]
    };

    Features encode(std::span<const MotionSequence* const> motions) const;
    /// L2-normalized pooled features: the unit style embedding.
    Tensor embed(std::span<const MotionSequence* const> motions) const;
    /// Style features for fusion from unit pooled embeddings [B × d]:
    /// tiled across the n token rows, then mapped to the fusion width.
    Tensor fusion_features(const Tensor& unit_pooled) const;

    const VaeConfig& config() const { return config_; }
    std::size_t fusion_width() const { return fusion_width_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }
    std::size_t parameter_count() const { return store_.count(); }

    TensorTable to_table() const;
    static StyleEncoder from_table(const TensorTable& table);

  private:
    StyleEncoder(const VaeConfig& config, std::size_t fusion_width, Rng& rng);

    VaeConfig config_;
    std::size_t fusion_width_;
    FeatureNormalizer normalizer_;
    MotionEncoder encoder_;
    ParameterStore store_;  // encoder params (prefixed "encoder.") + adapter
    Linear adapter_;
};

enum class PretrainStrategy { two_stage, style_only };

struct PretrainResult {
    VaeModel vae;
    TrainCurve content_curve;
    TrainCurve style_curve;
};

/// Stage 1 fits the VAE on the content corpus, stage 2 fine-tunes it on the
/// style corpus (skipped when stage2.epochs == 0). With style_only the VAE is
/// trained from scratch on the style corpus alone.
PretrainResult pretrain_vae(const VaeConfig& config, std::span<const MotionSequence* const> content_corpus,
                            std::span<const MotionSequence* const> style_corpus, const VaeTrainConfig& stage1,
                            const VaeTrainConfig& stage2, PretrainStrategy strategy);

StyleEncoder pretrain_style_encoder(const VaeConfig& config, std::span<const MotionSequence* const> content_corpus,
                                    std::span<const MotionSequence* const> style_corpus,
                                    const VaeTrainConfig& stage1, const VaeTrainConfig& stage2,
                                    PretrainStrategy strategy, std::size_t fusion_width);

SMLD_NAMESPACE_END
