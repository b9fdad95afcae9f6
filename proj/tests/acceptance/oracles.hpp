// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference computations for the acceptance checks. Plain double loops over
// row-major buffers; nothing here touches the library.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace smld_acceptance {

/// content + gamma · (style − μ) / sqrt(σ² + eta), μ and σ² taken per row of
/// content in a single pass of sum and sum of squares.
inline std::vector<double> fuse_reference(const std::vector<double>& content, const std::vector<double>& style,
                                          std::size_t rows, std::size_t cols, double gamma, double eta) {
    std::vector<double> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0, s2 = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = content[r * cols + c];
            s += v;
            s2 += v * v;
        }
        const double mu = s / static_cast<double>(cols);
        const double var = std::max(0.0, s2 / static_cast<double>(cols) - mu * mu);
        for (std::size_t c = 0; c < cols; ++c)
            out[r * cols + c] = content[r * cols + c] + gamma * (style[r * cols + c] - mu) / std::sqrt(var + eta);
    }
    return out;
}

/// Symmetric InfoNCE by explicit double loops: every pairwise cosine over tau,
/// cross entropy with the diagonal as positives, in both directions.
inline double infonce_reference(const std::vector<double>& text, const std::vector<double>& style, std::size_t rows,
                                std::size_t cols, double tau) {
    auto norm = [&](const std::vector<double>& m, std::size_t r) {
        double s = 0;
        for (std::size_t c = 0; c < cols; ++c) s += m[r * cols + c] * m[r * cols + c];
        return std::sqrt(s);
    };
    std::vector<double> sim(rows * rows);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < rows; ++j) {
            double dot = 0;
            for (std::size_t c = 0; c < cols; ++c) dot += text[i * cols + c] * style[j * cols + c];
            sim[i * rows + j] = dot / (norm(text, i) * norm(style, j)) / tau;
        }
    double row_loss = 0, col_loss = 0;
    for (std::size_t i = 0; i < rows; ++i) {
        double row_sum = 0, col_sum = 0;
        for (std::size_t j = 0; j < rows; ++j) {
            row_sum += std::exp(sim[i * rows + j]);
            col_sum += std::exp(sim[j * rows + i]);
        }
        row_loss += std::log(row_sum) - sim[i * rows + i];
        col_loss += std::log(col_sum) - sim[i * rows + i];
    }
    return 0.5 * (row_loss + col_loss) / static_cast<double>(rows);
}

}  // namespace smld_acceptance
