// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation suite over frozen motion features.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "smld/checkpoint.hpp"
#include "smld/motion.hpp"
#include "smld/nn.hpp"
#include "smld/vae.hpp"

SMLD_NAMESPACE_BEGIN

/// Row-major feature rows in double precision.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    static FeatureMatrix from_tensor(const Tensor& t);
    std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
};

/// Frozen pretrained style encoder used as the evaluator's feature space.
/// Features are unit pooled style embeddings.
class FeatureExtractor {
  public:
    explicit FeatureExtractor(StyleEncoder encoder);
    FeatureMatrix features(std::span<const MotionSequence* const> motions) const;
    Tensor feature_tensor(std::span<const MotionSequence* const> motions) const;
    std::size_t dim() const { return encoder_.config().latent_dim; }
    std::uint64_t fingerprint() const { return hash_store(encoder_.params()); }

  private:
    StyleEncoder encoder_;
};

/// Two-layer MLP over features.
class FeatureClassifier {
  public:
    FeatureClassifier(std::size_t feature_dim, std::size_t classes, Rng& rng, std::size_t hidden = 64);
    Tensor logits(const Tensor& features) const;
    std::vector<std::size_t> predict(const Tensor& features) const;
    std::size_t classes() const { return classes_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }

  private:
    std::size_t classes_;
    ParameterStore store_;
    Linear hidden_, out_;
};

struct ClassifierTrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 32;
    real lr = real(3e-3);
    std::uint64_t seed = 1;
};

/// Cross-entropy training; the classifier is frozen on return.
TrainCurve train_classifier(FeatureClassifier& classifier, const Tensor& features,
                            std::span<const std::size_t> labels, const ClassifierTrainConfig& config);

/// Percentage of predictions equal to their targets. Throws ContractError on
/// empty or mismatched input.
double accuracy_percent(std::span<const std::size_t> predicted, std::span<const std::size_t> targets);

struct GaussianFit {
    std::vector<double> mean;
    std::vector<double> covariance;  // dim × dim, symmetric
    std::size_t dim() const { return mean.size(); }

    /// Unbiased covariance; needs at least two rows.
    static GaussianFit fit(const FeatureMatrix& features);
};

/// |μa − μb|² + tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½), with eigenvalues below
/// −1e-8 rejected and the rest clipped to 0 inside the square roots.
double fid(const GaussianFit& a, const GaussianFit& b);

/// Mean Euclidean distance between matched rows.
double mm_distance(const FeatureMatrix& text, const FeatureMatrix& motion);

/// Fraction of motion rows whose own text row is among the `top_k` nearest of
/// a pool made of it and pool − 1 distractor texts drawn from other rows.
/// Distractors at exactly the true distance do not outrank it.
double r_precision(const FeatureMatrix& text, const FeatureMatrix& motion, std::size_t pool, std::size_t top_k,
                   std::uint64_t seed);

/// Mean distance over `pairs` disjoint random pairs (fewer when rows < 2·pairs).
double diversity(const FeatureMatrix& features, std::size_t pairs, std::uint64_t seed);

/// Mean per-motion foot skate ratio.
double foot_skate_ratio(std::span<const MotionSequence* const> motions, double h_eps = 0.05,
                        double v_eps = 0.01);

struct ParamEntry {
    std::string module;
    std::size_t total = 0;
    std::size_t learnable = 0;  // trained during stylized training
};

struct ParamReport {
    std::vector<ParamEntry> entries;
    std::size_t total() const;
    std::size_t learnable() const;
    const ParamEntry& at(const std::string& module) const;
};

SMLD_NAMESPACE_END
