// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#include "smld/nn.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

SMLD_NAMESPACE_BEGIN

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::uint64_t z = master ^ h;
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

real Rng::normal() {
    std::normal_distribution<real> dist(real(0), real(1));
    return dist(engine_);
}

real Rng::uniform() {
    std::uniform_real_distribution<real> dist(real(0), real(1));
    return dist(engine_);
}

std::size_t Rng::index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(engine_);
}

bool Rng::bernoulli(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_) < p; }

// ---- ParameterStore -------------------------------------------------------

Tensor ParameterStore::create(const std::string& name, Shape shape, real init_scale, Rng& rng) {
    std::vector<real> values(shape_numel(shape));
    for (auto& v : values) v = rng.normal() * init_scale;
    return add(name, Tensor::from(std::move(shape), std::move(values), true));
}

Tensor ParameterStore::create_constant(const std::string& name, Shape shape, real value) {
    return add(name, Tensor::full(std::move(shape), value, true));
}

Tensor ParameterStore::add(const std::string& name, Tensor value) {
    if (contains(name)) throw ContractError("duplicate parameter " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, value);
    return value;
}

std::vector<Tensor> ParameterStore::tensors() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const auto& [_, t] : items_) out.push_back(t);
    return out;
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    for (const auto& [n, _] : items_) out.push_back(n);
    return out;
}

std::size_t ParameterStore::count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items_) n += t.numel();
    return n;
}

Tensor ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return items_[it->second].second;
}

void ParameterStore::set_trainable(bool trainable) {
    for (auto& [_, t] : items_) t.set_requires_grad(trainable);
}

void ParameterStore::zero_grad() {
    for (auto& [_, t] : items_) t.zero_grad();
}

void ParameterStore::export_to(TensorTable& table, const std::string& prefix) const {
    for (const auto& [name, t] : items_) table.put_values(prefix + name, t.shape(), t.to_vector());
}

void ParameterStore::import_from(const TensorTable& table, const std::string& prefix) {
    for (auto& [name, t] : items_) {
        const auto& entry = table.at(prefix + name);
        if (entry.shape != t.shape())
            throw LoadError("shape mismatch for " + prefix + name + ": checkpoint " + shape_string(entry.shape) +
                            " vs model " + shape_string(t.shape()));
        auto dst = t.mutable_data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<real>(entry.values[i]);
    }
}

// ---- layers ---------------------------------------------------------------

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    Linear l;
    l.weight = store.create(name + ".weight", {in, out}, real(1) / std::sqrt(static_cast<real>(in)), rng);
    l.bias = store.create_constant(name + ".bias", {out}, real(0));
    return l;
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::size_t width) {
    LayerNorm n;
    n.gain = store.create_constant(name + ".gain", {width}, real(1));
    n.bias = store.create_constant(name + ".bias", {width}, real(0));
    return n;
}

Tensor LayerNorm::operator()(const Tensor& x) const {
    return add_row(mul_row(layer_norm(x, real(1e-5)), gain), bias);
}

TransformerBlock TransformerBlock::create(ParameterStore& store, const std::string& name, std::size_t width,
                                          std::size_t heads, std::size_t ff_mult, Rng& rng) {
    TransformerBlock b;
    b.heads = heads;
    b.norm1 = LayerNorm::create(store, name + ".norm1", width);
    b.query = Linear::create(store, name + ".query", width, width, rng);
    b.key = Linear::create(store, name + ".key", width, width, rng);
    b.value = Linear::create(store, name + ".value", width, width, rng);
    b.out = Linear::create(store, name + ".out", width, width, rng);
    b.norm2 = LayerNorm::create(store, name + ".norm2", width);
    b.ff_in = Linear::create(store, name + ".ff_in", width, width * ff_mult, rng);
    b.ff_out = Linear::create(store, name + ".ff_out", width * ff_mult, width, rng);
    return b;
}

Tensor TransformerBlock::operator()(const Tensor& x, std::size_t group) const {
    Tensor h = norm1(x);
    Tensor a = attention(query(h), key(h), value(h), group, heads);
    Tensor y = add(x, out(a));
    return add(y, ff_out(gelu(ff_in(norm2(y)))));
}

std::vector<real> sinusoid(std::size_t position, std::size_t dim) {
    std::vector<real> out(dim);
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        out[i] = static_cast<real>(std::sin(static_cast<double>(position) * freq));
        out[half + i] = static_cast<real>(std::cos(static_cast<double>(position) * freq));
    }
    return out;
}

Tensor sinusoid_table(std::size_t count, std::size_t dim, std::size_t start) {
    std::vector<real> values;
    values.reserve(count * dim);
    for (std::size_t i = 0; i < count; ++i) {
        auto row = sinusoid(start + i, dim);
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor::from({count, dim}, std::move(values));
}

Tensor harmonic_table(std::size_t count, std::size_t dim) {
    const std::size_t half = dim / 2;
    std::vector<real> values(count * dim, real(0));
    for (std::size_t p = 0; p < count; ++p)
        for (std::size_t k = 0; k < half; ++k) {
            const double w = std::numbers::pi * static_cast<double>(k + 1) / static_cast<double>(half);
            values[p * dim + k] = static_cast<real>(std::sin(w * static_cast<double>(p)));
            values[p * dim + half + k] = static_cast<real>(std::cos(w * static_cast<double>(p)));
        }
    return Tensor::from({count, dim}, std::move(values));
}

std::vector<std::size_t> interleave_index(std::size_t groups, std::size_t ga, std::size_t gb) {
    // Rows of concat([a, b]): a occupies [0, groups*ga), b follows.
    std::vector<std::size_t> idx;
    idx.reserve(groups * (ga + gb));
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t i = 0; i < ga; ++i) idx.push_back(g * ga + i);
        for (std::size_t i = 0; i < gb; ++i) idx.push_back(groups * ga + g * gb + i);
    }
    return idx;
}

std::vector<std::size_t> group_slice_index(std::size_t groups, std::size_t group, std::size_t offset,
                                           std::size_t count) {
    std::vector<std::size_t> idx;
    idx.reserve(groups * count);
    for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t i = 0; i < count; ++i) idx.push_back(g * group + offset + i);
    return idx;
}

Tensor tile_rows(const Tensor& x, std::size_t times) {
    std::vector<std::size_t> idx;
    idx.reserve(x.rows() * times);
    for (std::size_t t = 0; t < times; ++t)
        for (std::size_t r = 0; r < x.rows(); ++r) idx.push_back(r);
    return gather_rows(x, idx);
}

Tensor repeat_rows(const Tensor& x, std::size_t times) {
    std::vector<std::size_t> idx;
    idx.reserve(x.rows() * times);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t t = 0; t < times; ++t) idx.push_back(r);
    return gather_rows(x, idx);
}

// ---- AdamW ----------------------------------------------------------------

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), real(0));
        v_.emplace_back(p.numel(), real(0));
    }
}

void AdamW::step() {
    ++t_;
    real clip = real(1);
    if (config_.clip_norm > 0) {
        double sq = 0;
        for (const auto& p : params_)
            for (real g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
        const double norm = std::sqrt(sq);
        if (norm > config_.clip_norm) clip = static_cast<real>(config_.clip_norm / norm);
    }
    const real bc1 = real(1) - std::pow(config_.beta1, static_cast<real>(t_));
    const real bc2 = real(1) - std::pow(config_.beta2, static_cast<real>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor& p = params_[k];
        if (!p.has_grad()) continue;
        auto w = p.mutable_data();
        auto g = p.grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const real gi = g[i] * clip;
            m[i] = config_.beta1 * m[i] + (real(1) - config_.beta1) * gi;
            v[i] = config_.beta2 * v[i] + (real(1) - config_.beta2) * gi * gi;
            const real mhat = m[i] / bc1;
            const real vhat = v[i] / bc2;
            w[i] -= config_.lr * (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * w[i]);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

std::uint64_t hash_values(std::span<const real> values, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (real v : values) {
        const float f = static_cast<float>(v);
        unsigned char bytes[sizeof(float)];
        std::memcpy(bytes, &f, sizeof(float));
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 1099511628211ull;
        }
    }
    return h;
}

std::uint64_t hash_store(const ParameterStore& store) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& [_, t] : store.items()) h = hash_values(t.data(), h);
    return h;
}

SMLD_NAMESPACE_END
