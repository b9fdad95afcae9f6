// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-modal style alignment: a frozen modality embedder, a trainable linear
// projection into the style-feature space, a symmetric InfoNCE objective, and
// a cosine retrieval index over style embeddings.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smld/nn.hpp"
#include "smld/tensor.hpp"
#include "smld/vae.hpp"

SMLD_NAMESPACE_BEGIN

enum class Modality { text, image, audio };

/// Parses "text", "stub-image"/"image", "stub-audio"/"audio"; throws UsageError.
Modality parse_modality(std::string_view name);
std::string_view modality_name(Modality m);

/// Frozen stand-in for a pre-aligned joint embedding space. Every vocabulary
/// entry gets a seeded unit vector b; text maps to b, and each stub modality to
/// 0.96·b + 0.28·u with u a unit vector orthogonal to b, fixed per
/// (modality, entry). Cross-modal cosine for one entry is therefore >= 0.92.
class ModalityEmbedder {
  public:
    static constexpr std::size_t kDim = 64;

    /// Vocabulary: style words followed by content sentences.
    explicit ModalityEmbedder(std::uint64_t seed = 20240611);

    /// [1 × kDim] unit vector; throws VocabularyError for unknown entries.
    Tensor embed(Modality modality, std::string_view entry) const;
    /// Rows of embed(modality, entries[i]).
    Tensor embed_all(Modality modality, std::span<const std::string> entries) const;

    const std::vector<std::string>& vocabulary() const { return vocabulary_; }
    /// The frozen tables (text, image, audio), for freeze checks.
    std::uint64_t fingerprint() const;
    std::size_t parameter_count() const { return 0; }

  private:
    std::size_t index_of(std::string_view entry) const;

    std::vector<std::string> vocabulary_;
    std::vector<Tensor> tables_;  // one [V × kDim] table per modality
};

/// Symmetric InfoNCE over a batch of paired rows. Rows are L2-normalized,
/// S = Ft·Fsᵀ / tau, and the loss is the mean of the row-wise and column-wise
/// cross entropies with the diagonal as positives.
Tensor align_loss(const Tensor& text_features, const Tensor& style_features, real tau);

struct AlignConfig {
    real tau = real(0.07);
    std::size_t epochs = 60;
    real lr = real(3e-3);
    real weight_decay = real(1e-4);
    std::uint64_t seed = 1;

    void validate() const;
};

/// Single linear map from the embedder space to the style-feature space.
class Projection {
  public:
    Projection(std::size_t in, std::size_t out, Rng& rng);
    Tensor operator()(const Tensor& x) const { return layer_(x); }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }

  private:
    ParameterStore store_;
    Linear layer_;
};

/// One (label, unit style embedding) pair used for alignment training.
struct AlignExample {
    std::string label;
    std::vector<real> embedding;
};

/// Trains `projection` so that text embeddings of labels match the unit style
/// embeddings of their motions. Every batch holds one example per label, so
/// no batch contains two positives for the same text.
TrainCurve train_alignment(Projection& projection, const ModalityEmbedder& embedder,
                           std::span<const AlignExample> examples, const AlignConfig& config,
                           const std::function<void(std::size_t, double)>& on_epoch = {});

struct IndexRecord {
    std::string label;
    std::string motion_id;
    std::vector<real> embedding;  // unit norm
};

struct RetrievalHit {
    std::size_t position;  // insertion order in the index
    std::string label;
    std::string motion_id;
    double similarity;
    std::vector<real> embedding;
};

class AlignmentIndex {
  public:
    /// Normalizes and appends; throws DimensionError on width mismatch.
    void add(std::string label, std::string motion_id, std::span<const real> embedding);
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    const std::vector<IndexRecord>& records() const { return records_; }
    std::size_t dim() const { return dim_; }

    /// Top-k by cosine similarity; ties keep insertion order. k is clamped to
    /// the index size. Throws StateError on an empty index.
    std::vector<RetrievalHit> search(std::span<const real> query, std::size_t k) const;

    /// Tensor table at `path` plus a JSON-lines label manifest at `labels`.
    void save(const std::filesystem::path& path, const std::filesystem::path& labels) const;
    static AlignmentIndex load(const std::filesystem::path& path, const std::filesystem::path& labels);

  private:
    std::vector<IndexRecord> records_;
    std::size_t dim_ = 0;
};

/// Projects modality queries into the index space and searches it.
class Retriever {
  public:
    Retriever(const ModalityEmbedder& embedder, const Projection& projection, const AlignmentIndex& index)
        : embedder_(embedder), projection_(projection), index_(index) {}

    /// Unit query vector π(embed(modality, entry)).
    std::vector<real> query_vector(Modality modality, std::string_view entry) const;
    std::vector<RetrievalHit> retrieve(Modality modality, std::string_view entry, std::size_t k) const;

  private:
    const ModalityEmbedder& embedder_;
    const Projection& projection_;
    const AlignmentIndex& index_;
};

struct StyleQuery {
    Modality modality = Modality::text;
    std::string entry;
};

struct Interpolation {
    std::vector<real> embedding;        // Σ wᵢ · top1ᵢ
    std::vector<double> weights;        // normalized
    std::vector<RetrievalHit> sources;  // top-1 hit per query
};

/// Weighted sum of the top-1 retrieved embeddings with weights normalized to
/// sum to 1. Throws ContractError on negative or all-zero weights.
Interpolation interpolate_styles(const Retriever& retriever, std::span<const StyleQuery> queries,
                                 std::span<const double> weights);

SMLD_NAMESPACE_END
