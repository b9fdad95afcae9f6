// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#include "smld/fusion.hpp"

#include "smld/errors.hpp"

SMLD_NAMESPACE_BEGIN

void FusionConfig::validate() const {
    if (!(gamma >= real(0))) throw ConfigError("fusion gamma must be >= 0");
    if (!(eta > real(0))) throw ConfigError("fusion eta must be > 0");
    if (hook_block == 0) throw ConfigError("fusion hook block must be >= 1");
}

ContentStats content_stats(const Tensor& content) {
    if (content.rank() != 2 || content.cols() == 0)
        throw DimensionError("content_stats expects a non-empty rank-2 tensor, got " + shape_string(content.shape()));
    Tensor mean = row_mean(content);
    Tensor variance = row_mean(square(sub_col(content, mean)));
    return {mean, variance};
}

Tensor cross_normalize(const Tensor& style, const ContentStats& stats, real eta) {
    if (style.rank() != 2 || style.rows() != stats.mean.numel())
        throw DimensionError("cross_normalize: style " + shape_string(style.shape()) + " does not match " +
                             std::to_string(stats.mean.numel()) + " content rows");
    Tensor inv_std = pow_scalar(add_scalar(stats.variance, eta), real(-0.5));
    return mul_col(sub_col(style, stats.mean), inv_std);
}

Tensor fuse(const Tensor& content, const Tensor& style, const FusionConfig& config) {
    config.validate();
    if (style.shape() != content.shape())
        throw DimensionError("fuse: style " + shape_string(style.shape()) + " vs content " +
                             shape_string(content.shape()));
    if (config.gamma == real(0)) return content;
    return add(content, scale(cross_normalize(style, content_stats(content), config.eta), config.gamma));
}

SMLD_NAMESPACE_END
