// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit suites. Compiled into both the float and the
// double test binaries.

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "smld/motion.hpp"
#include "smld/nn.hpp"
#include "smld/tensor.hpp"
#include "smld/vae.hpp"

namespace smld::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, real scale = real(1)) {
    Rng rng(seed);
    std::vector<real> values(shape_numel(shape));
    for (auto& v : values) v = scale * rng.normal();
    return Tensor::from(std::move(shape), std::move(values));
}

/// A tiny VAE shape that keeps finite-difference sweeps cheap.
inline VaeConfig tiny_vae_config() {
    VaeConfig c;
    c.latent_tokens = 2;
    c.latent_dim = 4;
    c.blocks = 1;
    c.hidden = 8;
    c.heads = 2;
    c.patch = 8;
    c.ff_mult = 1;
    return c;
}

/// One motion per (content, style) pair, 40 frames each.
inline std::vector<MotionSequence> small_motion_set(std::size_t count, std::uint64_t seed = 3) {
    std::vector<MotionSequence> out;
    const auto& contents = content_labels();
    const auto& styles = style_labels();
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(generate_motion(contents[i % contents.size()], styles[(i / contents.size()) % styles.size()],
                                      seed + i, 40));
    return out;
}

inline std::vector<const MotionSequence*> pointers(const std::vector<MotionSequence>& motions) {
    std::vector<const MotionSequence*> out;
    for (const auto& m : motions) out.push_back(&m);
    return out;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("smld_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace smld::testing
