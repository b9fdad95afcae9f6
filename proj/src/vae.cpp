// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#include "smld/vae.hpp"

#include <cmath>
#include <numeric>

#include "smld/errors.hpp"

SMLD_NAMESPACE_BEGIN

namespace {

// Spreads below this are treated as noise and not amplified.
constexpr double kStdFloor = 0.01;

std::size_t meta_size(const std::map<std::string, std::string>& meta, const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw LoadError("checkpoint metadata lacks " + key);
    try {
        return static_cast<std::size_t>(std::stoull(it->second));
    } catch (const std::exception&) {
        throw LoadError("checkpoint metadata " + key + " is not an integer: " + it->second);
    }
}

std::vector<std::vector<real>> snapshot(const std::vector<Tensor>& params) {
    std::vector<std::vector<real>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.to_vector());
    return out;
}

void restore(std::vector<Tensor>& params, const std::vector<std::vector<real>>& values) {
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto dst = params[k].mutable_data();
        std::copy(values[k].begin(), values[k].end(), dst.begin());
    }
}

}  // namespace

// ---- config ---------------------------------------------------------------

void VaeConfig::validate() const {
    if (latent_tokens == 0 || latent_dim == 0 || blocks == 0 || hidden == 0 || heads == 0 || patch == 0 ||
        ff_mult == 0)
        throw ConfigError("vae sizes must be positive");
    if (hidden % heads != 0) throw ConfigError("vae hidden width must be divisible by heads");
    if (min_frames > max_frames) throw ConfigError("vae min_frames exceeds max_frames");
}

void VaeConfig::check_frames(std::size_t frames) const {
    if (frames < min_frames || frames > max_frames)
        throw ContractError("frame count " + std::to_string(frames) + " outside [" + std::to_string(min_frames) +
                            ", " + std::to_string(max_frames) + "]");
    if (frames % patch != 0)
        throw ContractError("frame count " + std::to_string(frames) + " is not a multiple of the patch size " +
                            std::to_string(patch));
}

std::map<std::string, std::string> VaeConfig::to_metadata(const std::string& prefix) const {
    return {
        {prefix + "latent_tokens", std::to_string(latent_tokens)},
        {prefix + "latent_dim", std::to_string(latent_dim)},
        {prefix + "blocks", std::to_string(blocks)},
        {prefix + "hidden", std::to_string(hidden)},
        {prefix + "heads", std::to_string(heads)},
        {prefix + "patch", std::to_string(patch)},
        {prefix + "ff_mult", std::to_string(ff_mult)},
        {prefix + "min_frames", std::to_string(min_frames)},
        {prefix + "max_frames", std::to_string(max_frames)},
    };
}

VaeConfig VaeConfig::from_metadata(const std::map<std::string, std::string>& meta, const std::string& prefix) {
    VaeConfig c;
    c.latent_tokens = meta_size(meta, prefix + "latent_tokens");
    c.latent_dim = meta_size(meta, prefix + "latent_dim");
    c.blocks = meta_size(meta, prefix + "blocks");
    c.hidden = meta_size(meta, prefix + "hidden");
    c.heads = meta_size(meta, prefix + "heads");
    c.patch = meta_size(meta, prefix + "patch");
    c.ff_mult = meta_size(meta, prefix + "ff_mult");
    c.min_frames = meta_size(meta, prefix + "min_frames");
    c.max_frames = meta_size(meta, prefix + "max_frames");
    c.validate();
    return c;
}

// ---- normalization --------------------------------------------------------

FeatureNormalizer FeatureNormalizer::fit(std::span<const MotionSequence* const> motions) {
    if (motions.empty()) throw ContractError("cannot fit a normalizer on an empty motion set");
    std::vector<double> sum(kFeatureDim, 0.0), sq(kFeatureDim, 0.0);
    std::size_t count = 0;
    for (const auto* m : motions) {
        for (std::size_t f = 0; f < m->frames; ++f) {
            auto row = m->row(f);
            for (std::size_t c = 0; c < kFeatureDim; ++c) {
                sum[c] += row[c];
                sq[c] += static_cast<double>(row[c]) * row[c];
            }
        }
        count += m->frames;
    }
    FeatureNormalizer n;
    n.mean.resize(kFeatureDim);
    n.stddev.resize(kFeatureDim);
    for (std::size_t c = 0; c < kFeatureDim; ++c) {
        const double mu = sum[c] / static_cast<double>(count);
        const double var = std::max(0.0, sq[c] / static_cast<double>(count) - mu * mu);
        const double sd = std::sqrt(var);
        n.mean[c] = static_cast<real>(mu);
        n.stddev[c] = static_cast<real>(std::max(sd, kStdFloor));
    }
    return n;
}

Tensor FeatureNormalizer::normalize(std::span<const MotionSequence* const> motions) const {
    if (motions.empty()) throw ContractError("normalize: empty batch");
    const std::size_t frames = motions.front()->frames;
    std::vector<real> values;
    values.reserve(motions.size() * frames * kFeatureDim);
    for (const auto* m : motions) {
        if (m->frames != frames) throw DimensionError("normalize: batch mixes frame counts");
        if (m->data.size() != frames * kFeatureDim)
            throw DimensionError("normalize: motion data does not match " + std::to_string(kFeatureDim) +
                                 " features per frame");
        for (std::size_t f = 0; f < frames; ++f) {
            auto row = m->row(f);
            for (std::size_t c = 0; c < kFeatureDim; ++c) values.push_back((row[c] - mean[c]) / stddev[c]);
        }
    }
    return Tensor::from({motions.size() * frames, kFeatureDim}, std::move(values));
}

std::vector<MotionSequence> FeatureNormalizer::denormalize(const Tensor& frames, std::size_t batch) const {
    if (frames.rank() != 2 || frames.cols() != kFeatureDim || batch == 0 || frames.rows() % batch != 0)
        throw DimensionError("denormalize: expected [(B·F) × " + std::to_string(kFeatureDim) + "], got " +
                             shape_string(frames.shape()));
    const std::size_t count = frames.rows() / batch;
    auto src = frames.data();
    std::vector<MotionSequence> out(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        auto& m = out[b];
        m.frames = count;
        m.data.resize(count * kFeatureDim);
        for (std::size_t f = 0; f < count; ++f)
            for (std::size_t c = 0; c < kFeatureDim; ++c) {
                const std::size_t i = (b * count + f) * kFeatureDim + c;
                m.data[f * kFeatureDim + c] = static_cast<float>(src[i] * stddev[c] + mean[c]);
            }
    }
    return out;
}

void FeatureNormalizer::export_to(TensorTable& table, const std::string& prefix) const {
    table.put_values(prefix + "mean", {kFeatureDim}, mean);
    table.put_values(prefix + "std", {kFeatureDim}, stddev);
}

FeatureNormalizer FeatureNormalizer::import_from(const TensorTable& table, const std::string& prefix) {
    FeatureNormalizer n;
    const auto& m = table.at(prefix + "mean");
    const auto& s = table.at(prefix + "std");
    if (m.values.size() != kFeatureDim || s.values.size() != kFeatureDim)
        throw LoadError("normalizer statistics have the wrong feature count");
    n.mean.assign(m.values.begin(), m.values.end());
    n.stddev.assign(s.values.begin(), s.values.end());
    return n;
}

// ---- encoder / decoder ----------------------------------------------------

MotionEncoder::MotionEncoder(const VaeConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const std::size_t h = config_.hidden;
    input_ = Linear::create(store_, "input", kFeatureDim * config_.patch, h, rng);
    queries_ = store_.create("queries", {config_.latent_tokens, h}, real(0.02), rng);
    for (std::size_t i = 0; i < config_.blocks; ++i)
        blocks_.push_back(
            TransformerBlock::create(store_, "block" + std::to_string(i), h, config_.heads, config_.ff_mult, rng));
    out_norm_ = LayerNorm::create(store_, "out_norm", h);
    head_ = Linear::create(store_, "head", h, 2 * config_.latent_dim, rng);
}

LatentSeq MotionEncoder::operator()(const Tensor& frames, std::size_t batch) const {
    const std::size_t n = config_.latent_tokens;
    const std::size_t d = config_.latent_dim;
    if (frames.rank() != 2 || frames.cols() != kFeatureDim || batch == 0 || frames.rows() % batch != 0)
        throw DimensionError("encoder expects [(B·F) × " + std::to_string(kFeatureDim) + "], got " +
                             shape_string(frames.shape()));
    const std::size_t count = frames.rows() / batch;
    config_.check_frames(count);
    const std::size_t patches = count / config_.patch;

    Tensor x = reshape(frames, {batch * patches, kFeatureDim * config_.patch});
    x = add(input_(x), tile_rows(harmonic_table(patches, config_.hidden), batch));
    Tensor tokens = concat_rows({tile_rows(queries_, batch), x});
    const auto order = interleave_index(batch, n, patches);
    tokens = gather_rows(tokens, order);
    for (const auto& block : blocks_) tokens = block(tokens, n + patches);
    const auto pick = group_slice_index(batch, n + patches, 0, n);
    Tensor stats = head_(out_norm_(gather_rows(tokens, pick)));

    LatentSeq out;
    out.batch = batch;
    out.mean = slice_cols(stats, 0, d);
    out.logvar = clamp(slice_cols(stats, d, d), real(-10), real(10));
    out.tokens = out.mean;
    return out;
}

MotionDecoder::MotionDecoder(const VaeConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const std::size_t h = config_.hidden;
    latent_in_ = Linear::create(store_, "latent_in", config_.latent_dim, h, rng);
    latent_pos_ = store_.create("latent_pos", {config_.latent_tokens, h}, real(0.02), rng);
    query_in_ = Linear::create(store_, "query_in", h, h, rng);
    for (std::size_t i = 0; i < config_.blocks; ++i)
        blocks_.push_back(
            TransformerBlock::create(store_, "block" + std::to_string(i), h, config_.heads, config_.ff_mult, rng));
    out_norm_ = LayerNorm::create(store_, "out_norm", h);
    out_ = Linear::create(store_, "out", h, kFeatureDim * config_.patch, rng);
}

Tensor MotionDecoder::operator()(const Tensor& z, std::size_t batch, std::size_t frames) const {
    const std::size_t n = config_.latent_tokens;
    if (z.rank() != 2 || z.cols() != config_.latent_dim || z.rows() != batch * n)
        throw DimensionError("decoder expects [" + std::to_string(batch * n) + " × " +
                             std::to_string(config_.latent_dim) + "] latents, got " + shape_string(z.shape()));
    config_.check_frames(frames);
    const std::size_t patches = frames / config_.patch;

    Tensor lat = add(latent_in_(z), tile_rows(latent_pos_, batch));
    Tensor queries = tile_rows(query_in_(harmonic_table(patches, config_.hidden)), batch);
    Tensor tokens = gather_rows(concat_rows({lat, queries}), interleave_index(batch, n, patches));
    for (const auto& block : blocks_) tokens = block(tokens, n + patches);
    const auto pick = group_slice_index(batch, n + patches, n, patches);
    Tensor out = out_(out_norm_(gather_rows(tokens, pick)));
    return reshape(out, {batch * frames, kFeatureDim});
}

Tensor reparameterize(const Tensor& mean, const Tensor& logvar, const Tensor& eps) {
    if (eps.shape() != mean.shape() || logvar.shape() != mean.shape())
        throw DimensionError("reparameterize: shape mismatch");
    return add(mean, mul(exp(scale(logvar, real(0.5))), eps));
}

Tensor kl_divergence(const Tensor& mean, const Tensor& logvar, std::size_t batch) {
    if (batch == 0) throw ContractError("kl_divergence: empty batch");
    Tensor terms = sub(add_scalar(add(square(mean), exp(logvar)), real(-1)), logvar);
    return scale(sum(terms), real(0.5) / static_cast<real>(batch));
}

// ---- model ----------------------------------------------------------------

VaeModel::VaeModel(const VaeConfig& config, Rng& rng)
    : config_(config),
      normalizer_{std::vector<real>(kFeatureDim, real(0)), std::vector<real>(kFeatureDim, real(1))},
      encoder_(config, rng),
      decoder_(config, rng) {}

LatentSeq VaeModel::encode(std::span<const MotionSequence* const> motions) const {
    return encoder_(normalizer_.normalize(motions), motions.size());
}

std::vector<MotionSequence> VaeModel::decode(const Tensor& z, std::size_t batch, std::size_t frames) const {
    return normalizer_.denormalize(decoder_(z, batch, frames), batch);
}

std::vector<Tensor> VaeModel::trainable() const {
    auto out = encoder_.params().tensors();
    auto dec = decoder_.params().tensors();
    out.insert(out.end(), dec.begin(), dec.end());
    return out;
}

std::size_t VaeModel::parameter_count() const { return encoder_.params().count() + decoder_.params().count(); }

TensorTable VaeModel::to_table() const {
    TensorTable table;
    table.metadata() = config_.to_metadata("vae.");
    table.metadata()["kind"] = "vae";
    normalizer_.export_to(table, "norm.");
    encoder_.params().export_to(table, "encoder.");
    decoder_.params().export_to(table, "decoder.");
    return table;
}

VaeModel VaeModel::from_table(const TensorTable& table) {
    Rng rng(0);
    VaeModel model(VaeConfig::from_metadata(table.metadata(), "vae."), rng);
    model.normalizer_ = FeatureNormalizer::import_from(table, "norm.");
    model.encoder_.params().import_from(table, "encoder.");
    model.decoder_.params().import_from(table, "decoder.");
    return model;
}

// ---- loss / training ------------------------------------------------------

VaeLoss vae_loss(const VaeModel& model, std::span<const MotionSequence* const> motions, real beta,
                 const Tensor& eps) {
    Tensor frames = model.normalizer().normalize(motions);
    LatentSeq post = model.encoder()(frames, motions.size());
    Tensor z = reparameterize(post.mean, post.logvar, eps);
    Tensor recon = model.decoder()(z, motions.size(), motions.front()->frames);
    VaeLoss loss;
    loss.reconstruction = mse_loss(recon, frames);
    loss.kl = kl_divergence(post.mean, post.logvar, motions.size());
    loss.total = beta == real(0) ? loss.reconstruction : add(loss.reconstruction, scale(loss.kl, beta));
    return loss;
}

VaeLoss vae_loss(const VaeModel& model, std::span<const MotionSequence* const> motions, real beta, Rng& rng) {
    if (motions.empty()) throw ContractError("vae_loss: empty batch");
    const auto& c = model.config();
    std::vector<real> eps(motions.size() * c.latent_tokens * c.latent_dim);
    for (auto& e : eps) e = rng.normal();
    return vae_loss(model, motions, beta, Tensor::from({motions.size() * c.latent_tokens, c.latent_dim}, eps));
}

TrainCurve train_vae(VaeModel& model, std::span<const MotionSequence* const> motions, const VaeTrainConfig& config,
                     const std::function<void(std::size_t, double)>& on_epoch) {
    if (motions.empty()) throw ContractError("train_vae: empty motion set");
    if (config.batch_size == 0) throw ConfigError("train_vae: batch size must be positive");
    for (const auto* m : motions) model.config().check_frames(m->frames);

    auto params = model.trainable();
    for (auto& p : params) p.set_requires_grad(true);
    AdamW optimizer(params, AdamWConfig{.lr = config.lr});
    Rng rng(config.seed);
    std::vector<std::size_t> order(motions.size());
    std::iota(order.begin(), order.end(), 0);

    TrainCurve curve;
    double last_good = std::numeric_limits<double>::quiet_NaN();
    auto good = snapshot(params);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const real warm = config.warmup_epochs == 0
                              ? real(1)
                              : std::min(real(1), static_cast<real>(epoch + 1) / static_cast<real>(config.warmup_epochs));
        const real beta = config.beta * warm;
        rng.shuffle(order);
        double total = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<const MotionSequence*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(motions[order[i]]);
            optimizer.zero_grad();
            VaeLoss loss = vae_loss(model, batch, beta, rng);
            const double value = loss.total.item();
            if (!std::isfinite(value)) {
                restore(params, good);
                throw TrainingError("vae loss became non-finite at epoch " + std::to_string(epoch), last_good);
            }
            backward(loss.total);
            optimizer.step();
            total += value;
            ++batches;
        }
        const double epoch_loss = total / static_cast<double>(batches);
        curve.epoch_loss.push_back(epoch_loss);
        last_good = epoch_loss;
        good = snapshot(params);
        if (on_epoch) on_epoch(epoch, epoch_loss);
    }
    return curve;
}

// ---- style encoder --------------------------------------------------------

StyleEncoder::StyleEncoder(const VaeConfig& config, std::size_t fusion_width, Rng& rng)
    : config_(config), fusion_width_(fusion_width), encoder_(config, rng) {
    if (fusion_width == 0) throw ConfigError("style encoder fusion width must be positive");
    for (const auto& [name, t] : encoder_.params().items()) store_.add("encoder." + name, t);
    adapter_ = Linear::create(store_, "adapter", config.latent_dim, fusion_width, rng);
}

StyleEncoder::StyleEncoder(const VaeModel& source, std::size_t fusion_width, Rng& rng)
    : StyleEncoder(source.config(), fusion_width, rng) {
    normalizer_ = source.normalizer();
    TensorTable table;
    source.encoder().params().export_to(table, "");
    encoder_.params().import_from(table, "");
}

StyleEncoder::Features StyleEncoder::encode(std::span<const MotionSequence* const> motions) const {
    LatentSeq post = encoder_(normalizer_.normalize(motions), motions.size());
    return {post.mean, group_mean_rows(post.mean, config_.latent_tokens)};
}

Tensor StyleEncoder::embed(std::span<const MotionSequence* const> motions) const {
    return l2_normalize_rows(encode(motions).pooled);
}

Tensor StyleEncoder::fusion_features(const Tensor& unit_pooled) const {
    if (unit_pooled.rank() != 2 || unit_pooled.cols() != config_.latent_dim)
        throw DimensionError("fusion_features expects [B × " + std::to_string(config_.latent_dim) + "], got " +
                             shape_string(unit_pooled.shape()));
    return adapter_(repeat_rows(unit_pooled, config_.latent_tokens));
}

TensorTable StyleEncoder::to_table() const {
    TensorTable table;
    table.metadata() = config_.to_metadata("vae.");
    table.metadata()["kind"] = "style_encoder";
    table.metadata()["fusion_width"] = std::to_string(fusion_width_);
    normalizer_.export_to(table, "norm.");
    store_.export_to(table, "");
    return table;
}

StyleEncoder StyleEncoder::from_table(const TensorTable& table) {
    if (!table.metadata().count("kind") || table.meta("kind") != "style_encoder")
        throw LoadError("checkpoint does not hold a style encoder");
    Rng rng(0);
    StyleEncoder enc(VaeConfig::from_metadata(table.metadata(), "vae."),
                     meta_size(table.metadata(), "fusion_width"), rng);
    enc.normalizer_ = FeatureNormalizer::import_from(table, "norm.");
    enc.store_.import_from(table, "");
    return enc;
}

PretrainResult pretrain_vae(const VaeConfig& config, std::span<const MotionSequence* const> content_corpus,
                            std::span<const MotionSequence* const> style_corpus, const VaeTrainConfig& stage1,
                            const VaeTrainConfig& stage2, PretrainStrategy strategy) {
    Rng rng(derive_seed(stage1.seed, "vae.init"));
    VaeModel model(config, rng);
    PretrainResult result{std::move(model), {}, {}};
    if (strategy == PretrainStrategy::two_stage) {
        result.vae.normalizer() = FeatureNormalizer::fit(content_corpus);
        result.content_curve = train_vae(result.vae, content_corpus, stage1);
        if (stage2.epochs > 0) result.style_curve = train_vae(result.vae, style_corpus, stage2);
    } else {
        result.vae.normalizer() = FeatureNormalizer::fit(style_corpus);
        VaeTrainConfig combined = stage2;
        combined.epochs = stage1.epochs + stage2.epochs;
        result.style_curve = train_vae(result.vae, style_corpus, combined);
    }
    return result;
}

StyleEncoder pretrain_style_encoder(const VaeConfig& config, std::span<const MotionSequence* const> content_corpus,
                                    std::span<const MotionSequence* const> style_corpus,
                                    const VaeTrainConfig& stage1, const VaeTrainConfig& stage2,
                                    PretrainStrategy strategy, std::size_t fusion_width) {
    auto result = pretrain_vae(config, content_corpus, style_corpus, stage1, stage2, strategy);
    Rng rng(derive_seed(stage2.seed, "style_encoder.adapter"));
    return StyleEncoder(result.vae, fusion_width, rng);
}

SMLD_NAMESPACE_END
