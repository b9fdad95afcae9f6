// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameter registry, layers and the optimizer shared by every trained model.

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "smld/checkpoint.hpp"
#include "smld/tensor.hpp"

SMLD_NAMESPACE_BEGIN

/// Stable 64-bit seed derivation (FNV-1a over the tag, mixed with splitmix64).
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    real normal();
    real uniform();
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n);
    bool bernoulli(double p);
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[index(i)]);
    }
    std::mt19937_64& engine() { return engine_; }

  private:
    std::mt19937_64 engine_;
};

/// Ordered name → tensor registry. Insertion order is the canonical order for
/// optimizer state and checkpoint tables.
class ParameterStore {
  public:
    Tensor create(const std::string& name, Shape shape, real init_scale, Rng& rng);
    Tensor create_constant(const std::string& name, Shape shape, real value);
    Tensor add(const std::string& name, Tensor value);

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::vector<Tensor> tensors() const;
    std::vector<std::string> names() const;
    std::size_t count() const;
    Tensor get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    void set_trainable(bool trainable);
    void zero_grad();

    /// Appends every tensor under `prefix`.
    void export_to(TensorTable& table, const std::string& prefix) const;
    /// Overwrites values in place from `table`; every name must be present
    /// with the same shape.
    void import_from(const TensorTable& table, const std::string& prefix);

  private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::map<std::string, std::size_t> index_;
};

struct Linear {
    Tensor weight;  // [in × out]
    Tensor bias;    // [out]
    static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                         Rng& rng);
    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct LayerNorm {
    Tensor gain;
    Tensor bias;
    static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t width);
    Tensor operator()(const Tensor& x) const;
};

/// Pre-norm transformer block over grouped rows (one group per sequence).
struct TransformerBlock {
    LayerNorm norm1, norm2;
    Linear query, key, value, out;
    Linear ff_in, ff_out;
    std::size_t heads = 1;

    static TransformerBlock create(ParameterStore& store, const std::string& name, std::size_t width,
                                   std::size_t heads, std::size_t ff_mult, Rng& rng);
    Tensor operator()(const Tensor& x, std::size_t group) const;
};

/// Fixed sinusoidal embedding of an integer position, width `dim`.
std::vector<real> sinusoid(std::size_t position, std::size_t dim);
/// Rows of sinusoid(start..start+count-1).
Tensor sinusoid_table(std::size_t count, std::size_t dim, std::size_t start = 0);

/// Rows p = 0..count-1 of [sin(ω_k p) ‖ cos(ω_k p)] with ω_k spaced linearly
/// in (0, π]. Spans every sequence of length ≤ dim, so attention can express
/// arbitrary per-position patterns as a bilinear form in position and content.
Tensor harmonic_table(std::size_t count, std::size_t dim);

/// Interleaves consecutive row-groups of `a` (size ga) and `b` (size gb) into
/// groups [a_i; b_i]. Both must hold the same number of groups.
std::vector<std::size_t> interleave_index(std::size_t groups, std::size_t ga, std::size_t gb);
/// Row indices selecting rows [offset, offset+count) of each group of `group`.
std::vector<std::size_t> group_slice_index(std::size_t groups, std::size_t group, std::size_t offset,
                                           std::size_t count);
/// Tiles the rows of x `times` times.
Tensor tile_rows(const Tensor& x, std::size_t times);
/// Repeats each row of x `times` times consecutively.
Tensor repeat_rows(const Tensor& x, std::size_t times);

struct AdamWConfig {
    real lr = real(1e-3);
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real eps = real(1e-8);
    real weight_decay = real(0);
    real clip_norm = real(1.0);  // <= 0 disables clipping
};

class AdamW {
  public:
    AdamW(std::vector<Tensor> params, AdamWConfig config);
    void step();
    void zero_grad();
    void set_lr(real lr) { config_.lr = lr; }
    const std::vector<Tensor>& params() const { return params_; }

  private:
    std::vector<Tensor> params_;
    AdamWConfig config_;
    std::vector<std::vector<real>> m_, v_;
    std::size_t t_ = 0;
};

/// Deterministic FNV-1a hash over tensor bytes (used for freeze checks).
std::uint64_t hash_values(std::span<const real> values, std::uint64_t seed = 1469598103934665603ull);
std::uint64_t hash_store(const ParameterStore& store);

SMLD_NAMESPACE_END
