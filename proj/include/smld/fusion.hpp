// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameter-free style injection by cross normalization: style features are
// standardized with the content features' own per-token statistics and added
// back, scaled by gamma.

#pragma once

#include <cstddef>

#include "smld/tensor.hpp"

SMLD_NAMESPACE_BEGIN

struct FusionConfig {
    real gamma = real(0.6);
    real eta = real(1e-5);
    std::size_t hook_block = 2;  // fuse after this many denoiser blocks

    /// Throws ConfigError unless gamma >= 0 and eta > 0.
    void validate() const;
};

/// Per-row mean and biased variance over the feature dimension.
struct ContentStats {
    Tensor mean;      // [n × 1]
    Tensor variance;  // [n × 1]
};

ContentStats content_stats(const Tensor& content);

/// (style − mean) / sqrt(variance + eta), row by row.
Tensor cross_normalize(const Tensor& style, const ContentStats& stats, real eta);

/// content + gamma · cross_normalize(style, content_stats(content), eta).
/// Returns `content` itself when gamma == 0.
Tensor fuse(const Tensor& content, const Tensor& style, const FusionConfig& config);

/// Learnable parameters owned by the fusion operation.
inline constexpr std::size_t kFusionParameterCount = 0;

SMLD_NAMESPACE_END
