// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0
//
// Staged training, sampling and evaluation over an on-disk workspace.
//
//   <root>/data/manifest.jsonl, data/motions/*.smot       main corpus
//   <root>/data/judge/manifest.jsonl, data/judge/motions  judge corpus
//   <root>/checkpoints/{vae,style_encoder,diffusion,stylizer,align,judge}.ckpt
//   <root>/checkpoints/index.ckpt + index_labels.jsonl     retrieval index
//   <root>/logs/<stage>.log, <root>/reports/*
//
// Each stage writes its resolved config next to its outputs and fails with
// DependencyError naming the first missing upstream artifact.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "smld/align.hpp"
#include "smld/config.hpp"
#include "smld/diffusion.hpp"
#include "smld/metrics.hpp"
#include "smld/motion.hpp"
#include "smld/vae.hpp"

SMLD_NAMESPACE_BEGIN

using Json = nlohmann::ordered_json;
using Progress = std::function<void(const std::string&)>;

class Workspace {
  public:
    explicit Workspace(std::filesystem::path root) : root_(std::move(root)) {}
    const std::filesystem::path& root() const { return root_; }

    std::filesystem::path data_dir() const { return root_ / "data"; }
    std::filesystem::path manifest() const { return data_dir() / "manifest.jsonl"; }
    std::filesystem::path judge_manifest() const { return data_dir() / "judge" / "manifest.jsonl"; }
    std::filesystem::path checkpoint_dir() const { return root_ / "checkpoints"; }
    std::filesystem::path checkpoint(std::string_view name) const {
        return checkpoint_dir() / (std::string(name) + ".ckpt");
    }
    std::filesystem::path index_labels() const { return checkpoint_dir() / "index_labels.jsonl"; }
    std::filesystem::path log(std::string_view stage) const { return root_ / "logs" / (std::string(stage) + ".log"); }
    std::filesystem::path report_dir() const { return root_ / "reports"; }

    /// Throws DependencyError(artifact) unless `path` exists.
    static void require(const std::filesystem::path& path, const std::string& artifact);

  private:
    std::filesystem::path root_;
};

struct Dataset {
    std::vector<CorpusRecord> train;
    std::vector<CorpusRecord> test;
};

/// Reads a manifest and its motion files.
Dataset load_dataset(const std::filesystem::path& manifest);
std::vector<const MotionSequence*> motion_pointers(const std::vector<CorpusRecord>& records);

/// Accepts a content label ("walk") or its sentence ("a person is walking").
std::string resolve_content(std::string_view content);

/// Sampler settings from the config, with an optional γ override.
SamplerConfig sampler_config(const RunConfig& config, std::optional<double> gamma = std::nullopt);
FusionConfig fusion_config(const RunConfig& config, std::optional<double> gamma = std::nullopt);
VaeConfig vae_config(const RunConfig& config);
DenoiserConfig denoiser_config(const RunConfig& config);

// ---- stages -----------------------------------------------------------------

Json gen_data(const RunConfig& config, const Workspace& ws, const Progress& progress = {});
Json train_vae_stage(const RunConfig& config, const Workspace& ws, const Progress& progress = {});
Json train_style_encoder_stage(const RunConfig& config, const Workspace& ws, const Progress& progress = {});
Json train_diffusion_stage(const RunConfig& config, const Workspace& ws, const Progress& progress = {});
Json train_align_stage(const RunConfig& config, const Workspace& ws, const Progress& progress = {});
Json train_classifier_stage(const RunConfig& config, const Workspace& ws, const Progress& progress = {});

// ---- generation ---------------------------------------------------------------

/// Trained models needed for sampling.
struct Generator {
    VaeModel vae;
    DiffusionModel diffusion;
    StyleEncoder stylizer;
    std::size_t frames;

    static Generator load(const RunConfig& config, const Workspace& ws);

    /// One motion per (content id, seed). `unit_style` is undefined (no
    /// stylization) or [B × d] unit style embeddings; `targets` are needed
    /// only when classifier guidance is on.
    std::vector<MotionSequence> generate(std::span<const std::size_t> content_ids,
                                         std::span<const std::uint64_t> seeds, const Tensor& unit_style,
                                         const SamplerConfig& sampler,
                                         std::span<const std::size_t> targets = {}) const;
};

/// Projection, embedder and serving index.
struct AlignmentModel {
    ModalityEmbedder embedder;
    Projection projection;
    AlignmentIndex index;

    static AlignmentModel load(const Workspace& ws);
    Retriever retriever() const { return Retriever(embedder, projection, index); }
};

/// Frozen evaluators trained on the judge corpus.
struct Judges {
    FeatureExtractor extractor;
    FeatureClassifier style;
    FeatureClassifier content;
    Projection text;  // content sentence → feature space

    static Judges load(const Workspace& ws);
    /// Unit projected text features of the given content labels.
    FeatureMatrix text_features(std::span<const std::string> contents, const ModalityEmbedder& embedder) const;
};

struct StylizeRequest {
    std::string content;
    std::string modality = "text";  // motion | text | stub-image | stub-audio
    std::string input;              // path for motion, entry otherwise
    std::optional<double> gamma;
    std::optional<std::uint64_t> seed;
    std::filesystem::path output;
};

/// Writes the motion file, `<output>.json` provenance and `<output>.cfg`.
Json stylize(const RunConfig& config, const Workspace& ws, const StylizeRequest& request);

struct InterpolateRequest {
    std::string content;
    std::vector<std::pair<double, std::string>> styles;  // (weight, entry)
    std::string modality = "text";
    std::optional<double> gamma;
    std::optional<std::uint64_t> seed;
    std::filesystem::path output;
};

Json interpolate(const RunConfig& config, const Workspace& ws, const InterpolateRequest& request);

// ---- evaluation ----------------------------------------------------------------

/// Writes reports/metrics.json and returns it.
Json evaluate(const RunConfig& config, const Workspace& ws, const Progress& progress = {});

/// Parses "0,0.2,..."; throws UsageError on an empty or malformed grid.
std::vector<double> parse_grid(std::string_view text);

/// Writes reports/gamma_sweep.csv (gamma,sra,fid,fid_vs_baseline,content_accuracy)
/// and returns the rows.
Json ablate_gamma(const RunConfig& config, const Workspace& ws, const std::vector<double>& grid,
                  const Progress& progress = {});

/// Per-module parameter accounting over the trained checkpoints. `learnable`
/// counts parameters updated after the content model is frozen.
ParamReport param_report(const Workspace& ws);
Json to_json(const ParamReport& report);

SMLD_NAMESPACE_END
