// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#include "smld/align.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "smld/errors.hpp"
#include "smld/motion.hpp"

SMLD_NAMESPACE_BEGIN

namespace {

constexpr double kAnchorWeight = 0.96;
constexpr double kOffsetWeight = 0.28;

std::vector<double> unit_gaussian(std::uint64_t seed, std::size_t dim) {
    Rng rng(seed);
    std::vector<double> v(dim);
    double norm = 0;
    for (double& x : v) {
        x = static_cast<double>(rng.normal());
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

std::vector<real> normalized(std::span<const real> v) {
    double norm = 0;
    for (real x : v) norm += static_cast<double>(x) * x;
    norm = std::sqrt(norm);
    if (!(norm > 0) || !std::isfinite(norm)) throw ContractError("cannot normalize a zero or non-finite vector");
    std::vector<real> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<real>(v[i] / norm);
    return out;
}

}  // namespace

Modality parse_modality(std::string_view name) {
    if (name == "text") return Modality::text;
    if (name == "stub-image" || name == "image") return Modality::image;
    if (name == "stub-audio" || name == "audio") return Modality::audio;
    throw UsageError("unknown modality '" + std::string(name) + "' (expected text, stub-image or stub-audio)");
}

std::string_view modality_name(Modality m) {
    switch (m) {
        case Modality::text:
            return "text";
        case Modality::image:
            return "stub-image";
        case Modality::audio:
            return "stub-audio";
    }
    return "text";
}

// ---- embedder ---------------------------------------------------------------

ModalityEmbedder::ModalityEmbedder(std::uint64_t seed) {
    vocabulary_ = style_labels();
    for (const auto& content : content_labels()) vocabulary_.push_back(content_sentence(content));

    const std::size_t count = vocabulary_.size();
    std::vector<std::vector<real>> data(3, std::vector<real>(count * kDim));
    for (std::size_t v = 0; v < count; ++v) {
        const auto anchor = unit_gaussian(derive_seed(seed, "text/" + vocabulary_[v]), kDim);
        for (std::size_t k = 0; k < kDim; ++k) data[0][v * kDim + k] = static_cast<real>(anchor[k]);
        for (Modality m : {Modality::image, Modality::audio}) {
            auto offset = unit_gaussian(derive_seed(seed, std::string(modality_name(m)) + "/" + vocabulary_[v]), kDim);
            const double along = std::inner_product(offset.begin(), offset.end(), anchor.begin(), 0.0);
            double norm = 0;
            for (std::size_t k = 0; k < kDim; ++k) {
                offset[k] -= along * anchor[k];
                norm += offset[k] * offset[k];
            }
            norm = std::sqrt(norm);
            auto& table = data[static_cast<std::size_t>(m)];
            for (std::size_t k = 0; k < kDim; ++k)
                table[v * kDim + k] = static_cast<real>(kAnchorWeight * anchor[k] + kOffsetWeight * offset[k] / norm);
        }
    }
    for (auto& d : data) tables_.push_back(Tensor::from({count, kDim}, std::move(d)));
}

std::size_t ModalityEmbedder::index_of(std::string_view entry) const {
    const auto it = std::find(vocabulary_.begin(), vocabulary_.end(), entry);
    if (it == vocabulary_.end()) throw VocabularyError("entry '" + std::string(entry) + "' is not in the vocabulary");
    return static_cast<std::size_t>(it - vocabulary_.begin());
}

Tensor ModalityEmbedder::embed(Modality modality, std::string_view entry) const {
    const std::size_t row = index_of(entry);
    return gather_rows(tables_[static_cast<std::size_t>(modality)], std::span<const std::size_t>(&row, 1));
}

Tensor ModalityEmbedder::embed_all(Modality modality, std::span<const std::string> entries) const {
    if (entries.empty()) throw ContractError("embed_all needs at least one entry");
    std::vector<std::size_t> rows;
    rows.reserve(entries.size());
    for (const auto& e : entries) rows.push_back(index_of(e));
    return gather_rows(tables_[static_cast<std::size_t>(modality)], rows);
}

std::uint64_t ModalityEmbedder::fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& t : tables_) h = hash_values(t.data(), h);
    return h;
}

// ---- objective ----------------------------------------------------------------

Tensor align_loss(const Tensor& text_features, const Tensor& style_features, real tau) {
    if (text_features.rank() != 2 || style_features.rank() != 2 ||
        text_features.shape() != style_features.shape())
        throw DimensionError("align_loss needs equal [B × d] inputs, got " + shape_string(text_features.shape()) +
                             " and " + shape_string(style_features.shape()));
    if (text_features.rows() == 0) throw ContractError("align_loss needs a non-empty batch");
    if (!(tau > 0)) throw ContractError("align_loss temperature must be positive");
    const std::size_t batch = text_features.rows();
    const Tensor text = l2_normalize_rows(text_features);
    const Tensor style = l2_normalize_rows(style_features);
    const Tensor logits = scale(matmul(text, transpose(style)), real(1) / tau);
    std::vector<int> diagonal(batch);
    std::iota(diagonal.begin(), diagonal.end(), 0);
    return scale(add(cross_entropy(logits, diagonal), cross_entropy(transpose(logits), diagonal)), real(0.5));
}

void AlignConfig::validate() const {
    if (!(tau > 0)) throw ConfigError("align.tau must be positive");
    if (epochs == 0) throw ConfigError("align.epochs must be positive");
    if (!(lr > 0)) throw ConfigError("align.lr must be positive");
    if (weight_decay < 0) throw ConfigError("align.weight_decay must be non-negative");
}

Projection::Projection(std::size_t in, std::size_t out, Rng& rng) : layer_(Linear::create(store_, "proj", in, out, rng)) {}

TrainCurve train_alignment(Projection& projection, const ModalityEmbedder& embedder,
                           std::span<const AlignExample> examples, const AlignConfig& config,
                           const std::function<void(std::size_t, double)>& on_epoch) {
    config.validate();
    std::map<std::string, std::vector<std::size_t>> groups;
    std::size_t dim = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (dim == 0) dim = examples[i].embedding.size();
        if (examples[i].embedding.size() != dim) throw DimensionError("alignment examples differ in width");
        groups[examples[i].label].push_back(i);
    }
    if (groups.size() < 2) throw ContractError("alignment needs at least two distinct labels");

    projection.params().set_trainable(true);
    AdamW optimizer(projection.params().tensors(), AdamWConfig{.lr = config.lr, .weight_decay = config.weight_decay});
    Rng rng(config.seed);
    std::size_t rounds = 0;
    for (const auto& [_, members] : groups) rounds = std::max(rounds, members.size());

    TrainCurve curve;
    double last_good = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (auto& [_, members] : groups) rng.shuffle(members);
        double total = 0;
        for (std::size_t round = 0; round < rounds; ++round) {
            std::vector<std::string> labels;
            std::vector<real> targets;
            for (const auto& [label, members] : groups) {
                const auto& ex = examples[members[round % members.size()]];
                labels.push_back(label);
                targets.insert(targets.end(), ex.embedding.begin(), ex.embedding.end());
            }
            const Tensor style = Tensor::from({labels.size(), dim}, std::move(targets));
            const Tensor loss = align_loss(projection(embedder.embed_all(Modality::text, labels)), style, config.tau);
            const double value = loss.item();
            if (!std::isfinite(value)) throw TrainingError("non-finite alignment loss", last_good);
            optimizer.zero_grad();
            backward(loss);
            optimizer.step();
            total += value;
            last_good = value;
        }
        curve.epoch_loss.push_back(total / static_cast<double>(rounds));
        if (on_epoch) on_epoch(epoch, curve.epoch_loss.back());
    }
    projection.params().set_trainable(false);
    return curve;
}

// ---- index --------------------------------------------------------------------

void AlignmentIndex::add(std::string label, std::string motion_id, std::span<const real> embedding) {
    if (embedding.empty()) throw DimensionError("index embedding is empty");
    if (dim_ != 0 && embedding.size() != dim_)
        throw DimensionError("index embedding has width " + std::to_string(embedding.size()) + ", expected " +
                             std::to_string(dim_));
    dim_ = embedding.size();
    records_.push_back({std::move(label), std::move(motion_id), normalized(embedding)});
}

std::vector<RetrievalHit> AlignmentIndex::search(std::span<const real> query, std::size_t k) const {
    if (records_.empty()) throw StateError("retrieval from an empty index");
    if (query.size() != dim_)
        throw DimensionError("query has width " + std::to_string(query.size()) + ", expected " + std::to_string(dim_));
    const auto unit = normalized(query);
    std::vector<double> similarity(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        double dot = 0;
        for (std::size_t c = 0; c < dim_; ++c) dot += static_cast<double>(unit[c]) * records_[i].embedding[c];
        similarity[i] = dot;
    }
    std::vector<std::size_t> order(records_.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return similarity[a] > similarity[b]; });
    order.resize(std::min(k, order.size()));

    std::vector<RetrievalHit> hits;
    hits.reserve(order.size());
    for (std::size_t i : order)
        hits.push_back({i, records_[i].label, records_[i].motion_id, similarity[i], records_[i].embedding});
    return hits;
}

void AlignmentIndex::save(const std::filesystem::path& path, const std::filesystem::path& labels) const {
    TensorTable table;
    table.metadata()["kind"] = "align_index";
    table.metadata()["count"] = std::to_string(records_.size());
    std::vector<real> flat;
    flat.reserve(records_.size() * dim_);
    for (const auto& r : records_) flat.insert(flat.end(), r.embedding.begin(), r.embedding.end());
    table.put_values("embeddings", {records_.size(), dim_}, flat);
    table.save(path);

    std::ofstream out(labels, std::ios::binary);
    if (!out) throw LoadError("cannot write label manifest " + labels.string());
    for (std::size_t i = 0; i < records_.size(); ++i)
        out << nlohmann::json{{"position", i}, {"label", records_[i].label}, {"motion_id", records_[i].motion_id}}.dump()
            << '\n';
}

AlignmentIndex AlignmentIndex::load(const std::filesystem::path& path, const std::filesystem::path& labels) {
    const TensorTable table = TensorTable::load(path);
    if (!table.metadata().contains("kind") || table.meta("kind") != "align_index")
        throw LoadError(path.string() + " is not an alignment index");
    const auto& entry = table.at("embeddings");
    if (entry.shape.size() != 2) throw LoadError("index embeddings must be rank 2");

    std::ifstream in(labels);
    if (!in) throw LoadError("cannot read label manifest " + labels.string());
    std::vector<std::pair<std::string, std::string>> names;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            names.emplace_back(j.at("label").get<std::string>(), j.at("motion_id").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw LoadError("malformed label manifest line: " + std::string(e.what()));
        }
    }
    if (names.size() != entry.shape[0])
        throw LoadError("label manifest has " + std::to_string(names.size()) + " entries, index has " +
                        std::to_string(entry.shape[0]));

    AlignmentIndex index;
    const std::size_t dim = entry.shape[1];
    for (std::size_t i = 0; i < names.size(); ++i) {
        std::vector<real> row(entry.values.begin() + static_cast<std::ptrdiff_t>(i * dim),
                              entry.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
        index.add(names[i].first, names[i].second, row);
    }
    return index;
}

// ---- retrieval ------------------------------------------------------------------

std::vector<real> Retriever::query_vector(Modality modality, std::string_view entry) const {
    NoGradGuard guard;
    const Tensor projected = projection_(embedder_.embed(modality, entry));
    return normalized(projected.data());
}

std::vector<RetrievalHit> Retriever::retrieve(Modality modality, std::string_view entry, std::size_t k) const {
    return index_.search(query_vector(modality, entry), k);
}

Interpolation interpolate_styles(const Retriever& retriever, std::span<const StyleQuery> queries,
                                 std::span<const double> weights) {
    if (queries.empty() || queries.size() != weights.size())
        throw ContractError("interpolation needs one weight per query");
    double total = 0;
    for (double w : weights) {
        if (!(w >= 0) || !std::isfinite(w)) throw ContractError("interpolation weights must be finite and >= 0");
        total += w;
    }
    if (!(total > 0)) throw ContractError("interpolation weights must not all be zero");

    Interpolation result;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        auto hits = retriever.retrieve(queries[i].modality, queries[i].entry, 1);
        const double w = weights[i] / total;
        if (result.embedding.empty()) result.embedding.assign(hits.front().embedding.size(), real(0));
        for (std::size_t c = 0; c < result.embedding.size(); ++c)
            result.embedding[c] += static_cast<real>(w * hits.front().embedding[c]);
        result.weights.push_back(w);
        result.sources.push_back(std::move(hits.front()));
    }
    return result;
}

SMLD_NAMESPACE_END
