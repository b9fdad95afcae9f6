// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#include "smld/diffusion.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "smld/errors.hpp"

SMLD_NAMESPACE_BEGIN

namespace {

std::size_t meta_size(const std::map<std::string, std::string>& meta, const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw LoadError("checkpoint metadata lacks " + key);
    try {
        return static_cast<std::size_t>(std::stoull(it->second));
    } catch (const std::exception&) {
        throw LoadError("checkpoint metadata " + key + " is not an integer: " + it->second);
    }
}

double meta_double(const std::map<std::string, std::string>& meta, const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw LoadError("checkpoint metadata lacks " + key);
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        throw LoadError("checkpoint metadata " + key + " is not a number: " + it->second);
    }
}

std::string exact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::size_t> sample_rows(std::span<const std::size_t> samples, std::size_t rows) {
    std::vector<std::size_t> idx;
    idx.reserve(samples.size() * rows);
    for (std::size_t s : samples)
        for (std::size_t r = 0; r < rows; ++r) idx.push_back(s * rows + r);
    return idx;
}

std::vector<std::vector<real>> snapshot(const std::vector<Tensor>& params) {
    std::vector<std::vector<real>> out;
    for (const auto& p : params) out.push_back(p.to_vector());
    return out;
}

void restore(const std::vector<Tensor>& params, const std::vector<std::vector<real>>& values) {
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor p = params[k];
        auto dst = p.mutable_data();
        std::copy(values[k].begin(), values[k].end(), dst.begin());
    }
}

}  // namespace

// ---- schedule -------------------------------------------------------------

DiffusionSchedule DiffusionSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
    if (steps < 2) throw ConfigError("diffusion needs at least 2 steps");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || !(beta_start < beta_end))
        throw ConfigError("diffusion betas must satisfy 0 < beta_start < beta_end < 1");
    DiffusionSchedule s;
    s.betas_.resize(steps);
    s.alphas_.resize(steps);
    s.alpha_bar_.resize(steps);
    double prod = 1.0;
    for (std::size_t t = 0; t < steps; ++t) {
        const double frac = static_cast<double>(t) / static_cast<double>(steps - 1);
        s.betas_[t] = beta_start + (beta_end - beta_start) * frac;
        s.alphas_[t] = 1.0 - s.betas_[t];
        prod *= s.alphas_[t];
        s.alpha_bar_[t] = prod;
    }
    return s;
}

std::vector<std::size_t> DiffusionSchedule::sampling_steps(std::size_t count) const {
    if (count == 0 || count > steps())
        throw ContractError("sampling step count must be in [1, " + std::to_string(steps()) + "]");
    const std::size_t stride = steps() / count;
    std::vector<std::size_t> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = (count - 1 - i) * stride;
    return out;
}

Tensor forward_diffuse(const Tensor& z0, std::size_t step, const Tensor& noise, const DiffusionSchedule& schedule) {
    if (step >= schedule.steps())
        throw ContractError("diffusion step " + std::to_string(step) + " outside [0, " +
                            std::to_string(schedule.steps()) + ")");
    if (noise.shape() != z0.shape())
        throw DimensionError("forward_diffuse: noise " + shape_string(noise.shape()) + " vs latents " +
                             shape_string(z0.shape()));
    const double ab = schedule.alpha_bar()[step];
    return add(scale(z0, static_cast<real>(std::sqrt(ab))), scale(noise, static_cast<real>(std::sqrt(1.0 - ab))));
}

Tensor forward_diffuse(const Tensor& z0, std::span<const std::size_t> steps, const Tensor& noise,
                       const DiffusionSchedule& schedule, std::size_t rows) {
    if (noise.shape() != z0.shape())
        throw DimensionError("forward_diffuse: noise " + shape_string(noise.shape()) + " vs latents " +
                             shape_string(z0.shape()));
    if (z0.rank() != 2 || z0.rows() != steps.size() * rows)
        throw DimensionError("forward_diffuse: expected " + std::to_string(steps.size() * rows) + " rows, got " +
                             shape_string(z0.shape()));
    std::vector<real> signal(z0.rows()), spread(z0.rows());
    for (std::size_t b = 0; b < steps.size(); ++b) {
        if (steps[b] >= schedule.steps())
            throw ContractError("diffusion step " + std::to_string(steps[b]) + " outside [0, " +
                                std::to_string(schedule.steps()) + ")");
        const double ab = schedule.alpha_bar()[steps[b]];
        for (std::size_t r = 0; r < rows; ++r) {
            signal[b * rows + r] = static_cast<real>(std::sqrt(ab));
            spread[b * rows + r] = static_cast<real>(std::sqrt(1.0 - ab));
        }
    }
    return add(mul_col(z0, Tensor::from({z0.rows()}, std::move(signal))),
               mul_col(noise, Tensor::from({z0.rows()}, std::move(spread))));
}

// ---- denoiser -------------------------------------------------------------

void DenoiserConfig::validate() const {
    if (latent_tokens == 0 || latent_dim == 0 || width == 0 || blocks == 0 || heads == 0 || ff_mult == 0 ||
        content_vocab == 0)
        throw ConfigError("denoiser sizes must be positive");
    if (width % heads != 0) throw ConfigError("denoiser width must be divisible by heads");
}

std::map<std::string, std::string> DenoiserConfig::to_metadata(const std::string& prefix) const {
    return {
        {prefix + "latent_tokens", std::to_string(latent_tokens)},
        {prefix + "latent_dim", std::to_string(latent_dim)},
        {prefix + "width", std::to_string(width)},
        {prefix + "blocks", std::to_string(blocks)},
        {prefix + "heads", std::to_string(heads)},
        {prefix + "ff_mult", std::to_string(ff_mult)},
        {prefix + "content_vocab", std::to_string(content_vocab)},
    };
}

DenoiserConfig DenoiserConfig::from_metadata(const std::map<std::string, std::string>& meta,
                                             const std::string& prefix) {
    DenoiserConfig c;
    c.latent_tokens = meta_size(meta, prefix + "latent_tokens");
    c.latent_dim = meta_size(meta, prefix + "latent_dim");
    c.width = meta_size(meta, prefix + "width");
    c.blocks = meta_size(meta, prefix + "blocks");
    c.heads = meta_size(meta, prefix + "heads");
    c.ff_mult = meta_size(meta, prefix + "ff_mult");
    c.content_vocab = meta_size(meta, prefix + "content_vocab");
    c.validate();
    return c;
}

Tensor ContentEncoder::operator()(std::span<const std::size_t> ids) const {
    for (std::size_t id : ids)
        if (id > vocab) throw VocabularyError("content id " + std::to_string(id) + " outside the vocabulary");
    return gather_rows(table, ids);
}

Denoiser::Denoiser(const DenoiserConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const std::size_t w = config_.width;
    content_.vocab = config_.content_vocab;
    content_.table = store_.create("content.table", {config_.content_vocab + 1, w}, real(1), rng);
    time_in_ = Linear::create(store_, "time_in", w, w, rng);
    time_out_ = Linear::create(store_, "time_out", w, w, rng);
    latent_in_ = Linear::create(store_, "latent_in", config_.latent_dim, w, rng);
    latent_pos_ = store_.create("latent_pos", {config_.latent_tokens, w}, real(0.02), rng);
    for (std::size_t i = 0; i < config_.blocks; ++i)
        blocks_.push_back(
            TransformerBlock::create(store_, "block" + std::to_string(i), w, config_.heads, config_.ff_mult, rng));
    out_norm_ = LayerNorm::create(store_, "out_norm", w);
    out_ = Linear::create(store_, "out", w, config_.latent_dim, rng);
}

Tensor Denoiser::operator()(const Tensor& z_t, std::span<const std::size_t> steps,
                            std::span<const std::size_t> content_ids, const Tensor& style,
                            const FusionConfig& fusion) const {
    const std::size_t batch = content_ids.size();
    const std::size_t n = config_.latent_tokens;
    const std::size_t w = config_.width;
    if (batch == 0 || steps.size() != batch)
        throw DimensionError("denoiser: need one step and one content id per sample");
    if (z_t.rank() != 2 || z_t.rows() != batch * n || z_t.cols() != config_.latent_dim)
        throw DimensionError("denoiser: latents " + shape_string(z_t.shape()) + " do not match " +
                             std::to_string(batch) + " samples of " + std::to_string(n) + " × " +
                             std::to_string(config_.latent_dim));
    if (style.defined()) {
        fusion.validate();
        if (fusion.hook_block > config_.blocks)
            throw ConfigError("fusion hook block " + std::to_string(fusion.hook_block) + " exceeds " +
                              std::to_string(config_.blocks) + " denoiser blocks");
        if (style.rank() != 2 || style.rows() != batch * n || style.cols() != w)
            throw DimensionError("denoiser: style features " + shape_string(style.shape()) + " do not match [" +
                                 std::to_string(batch * n) + " × " + std::to_string(w) + "]");
    }

    std::vector<real> tvals;
    tvals.reserve(batch * w);
    for (std::size_t t : steps) {
        auto row = sinusoid(t, w);
        tvals.insert(tvals.end(), row.begin(), row.end());
    }
    Tensor temb = time_out_(gelu(time_in_(Tensor::from({batch, w}, std::move(tvals)))));
    Tensor cond = add(content_(content_ids), temb);
    Tensor lat = add(add(latent_in_(z_t), tile_rows(latent_pos_, batch)), repeat_rows(temb, n));

    const std::size_t group = 1 + n;
    const auto order = interleave_index(batch, 1, n);
    const auto cond_rows = group_slice_index(batch, group, 0, 1);
    const auto lat_rows = group_slice_index(batch, group, 1, n);
    Tensor x = gather_rows(concat_rows({cond, lat}), order);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        x = blocks_[i](x, group);
        if (style.defined() && i + 1 == fusion.hook_block) {
            Tensor fused = fuse(gather_rows(x, lat_rows), style, fusion);
            x = gather_rows(concat_rows({gather_rows(x, cond_rows), fused}), order);
        }
    }
    return out_(out_norm_(gather_rows(x, lat_rows)));
}

// ---- latent statistics ----------------------------------------------------

LatentStats LatentStats::fit(const Tensor& latents, std::size_t rows_per_sample) {
    if (latents.rank() != 2 || rows_per_sample == 0 || latents.rows() % rows_per_sample != 0 || latents.rows() == 0)
        throw DimensionError("LatentStats::fit: bad latent shape " + shape_string(latents.shape()));
    const std::size_t width = rows_per_sample * latents.cols();
    const std::size_t count = latents.numel() / width;
    auto v = latents.data();
    std::vector<double> sum(width, 0.0), sq(width, 0.0);
    for (std::size_t s = 0; s < count; ++s)
        for (std::size_t k = 0; k < width; ++k) {
            const double x = v[s * width + k];
            sum[k] += x;
            sq[k] += x * x;
        }
    LatentStats stats;
    stats.mean.resize(width);
    stats.stddev.resize(width);
    for (std::size_t k = 0; k < width; ++k) {
        const double mu = sum[k] / static_cast<double>(count);
        const double var = std::max(0.0, sq[k] / static_cast<double>(count) - mu * mu);
        stats.mean[k] = static_cast<real>(mu);
        stats.stddev[k] = static_cast<real>(std::max(std::sqrt(var), 1e-4));
    }
    return stats;
}

Tensor LatentStats::standardize(const Tensor& latents) const {
    if (latents.numel() % mean.size() != 0) throw DimensionError("LatentStats: latent size mismatch");
    std::vector<real> out = latents.to_vector();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::size_t k = i % mean.size();
        out[i] = (out[i] - mean[k]) / stddev[k];
    }
    return Tensor::from(latents.shape(), std::move(out));
}

Tensor LatentStats::restore(const Tensor& standardized) const {
    if (standardized.numel() % mean.size() != 0) throw DimensionError("LatentStats: latent size mismatch");
    std::vector<real> out = standardized.to_vector();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::size_t k = i % mean.size();
        out[i] = out[i] * stddev[k] + mean[k];
    }
    return Tensor::from(standardized.shape(), std::move(out));
}

// ---- latent classifier ----------------------------------------------------

LatentStyleClassifier::LatentStyleClassifier(std::size_t latent_tokens, std::size_t latent_dim, std::size_t classes,
                                             Rng& rng)
    : tokens_(latent_tokens), dim_(latent_dim), classes_(classes) {
    hidden_ = Linear::create(store_, "hidden", tokens_ * dim_, 64, rng);
    out_ = Linear::create(store_, "out", 64, classes_, rng);
}

Tensor LatentStyleClassifier::operator()(const Tensor& latents) const {
    if (latents.rank() != 2 || latents.cols() != dim_ || latents.rows() % tokens_ != 0)
        throw DimensionError("latent classifier: bad input " + shape_string(latents.shape()));
    return out_(gelu(hidden_(reshape(latents, {latents.rows() / tokens_, tokens_ * dim_}))));
}

TrainCurve train_latent_classifier(LatentStyleClassifier& classifier, const Tensor& latents,
                                   std::span<const std::size_t> labels, std::size_t epochs, real lr,
                                   std::uint64_t seed) {
    const std::size_t rows = latents.rows() / labels.size();
    if (labels.empty() || latents.rows() != labels.size() * rows)
        throw DimensionError("train_latent_classifier: one label per latent sample required");
    auto params = classifier.params().tensors();
    classifier.params().set_trainable(true);
    AdamW optimizer(params, AdamWConfig{.lr = lr, .weight_decay = real(1e-4)});
    Rng rng(seed);
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    TrainCurve curve;
    const std::size_t batch_size = 32;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(order.size(), start + batch_size);
            std::span<const std::size_t> pick(order.data() + start, end - start);
            std::vector<int> y;
            for (std::size_t s : pick) y.push_back(static_cast<int>(labels[s]));
            optimizer.zero_grad();
            Tensor loss = cross_entropy(classifier(gather_rows(latents, sample_rows(pick, rows))), y);
            if (!std::isfinite(loss.item())) {
                classifier.params().set_trainable(false);
                throw TrainingError("latent classifier loss became non-finite",
                                    curve.epoch_loss.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                             : curve.epoch_loss.back());
            }
            backward(loss);
            optimizer.step();
            total += loss.item();
            ++batches;
        }
        curve.epoch_loss.push_back(total / static_cast<double>(batches));
    }
    classifier.params().set_trainable(false);
    return curve;
}

// ---- training -------------------------------------------------------------

Tensor style_features(const StyleEncoder& encoder, std::span<const MotionSequence* const> refs) {
    return encoder.fusion_features(l2_normalize_rows(encoder.encode(refs).pooled));
}

Tensor diffusion_loss(const Denoiser& denoiser, const DiffusionSchedule& schedule, const DiffusionBatch& batch,
                      TrainMode mode, const StyleEncoder* style_encoder, const FusionConfig& fusion,
                      real cond_dropout, Rng& rng, std::size_t min_step) {
    const std::size_t count = batch.content_ids.size();
    const std::size_t n = denoiser.config().latent_tokens;
    if (count == 0) throw ContractError("diffusion_loss: empty batch");
    if (mode == TrainMode::stylized && (style_encoder == nullptr || batch.style_refs.size() != count))
        throw ContractError("stylized training needs a style encoder and one style reference per sample");
    if (min_step >= schedule.steps())
        throw ConfigError("minimum training step " + std::to_string(min_step) + " outside the schedule");

    std::vector<std::size_t> steps(count);
    for (auto& t : steps) t = min_step + rng.index(schedule.steps() - min_step);
    std::vector<real> noise(batch.z0.numel());
    for (auto& e : noise) e = rng.normal();
    std::vector<std::size_t> ids(batch.content_ids.begin(), batch.content_ids.end());
    for (auto& id : ids)
        if (rng.bernoulli(cond_dropout)) id = denoiser.null_content();

    Tensor eps = Tensor::from(batch.z0.shape(), std::move(noise));
    Tensor z_t = forward_diffuse(batch.z0, steps, eps, schedule, n);
    Tensor style = mode == TrainMode::stylized ? style_features(*style_encoder, batch.style_refs) : Tensor();
    return mse_loss(denoiser(z_t, steps, ids, style, fusion), eps);
}

double train_step(const Denoiser& denoiser, const DiffusionSchedule& schedule, const DiffusionBatch& batch,
                  TrainMode mode, const StyleEncoder* style_encoder, const FusionConfig& fusion, real cond_dropout,
                  AdamW& optimizer, Rng& rng, std::size_t min_step) {
    if (mode == TrainMode::stylized)
        for (const auto& [name, p] : denoiser.params().items())
            if (p.requires_grad()) throw ContractError("stylized training requires a frozen denoiser (" + name + ")");
    optimizer.zero_grad();
    Tensor loss =
        diffusion_loss(denoiser, schedule, batch, mode, style_encoder, fusion, cond_dropout, rng, min_step);
    const double value = loss.item();
    if (!std::isfinite(value))
        throw TrainingError("diffusion loss became non-finite", std::numeric_limits<double>::quiet_NaN());
    backward(loss);
    optimizer.step();
    return value;
}

namespace {

TrainCurve run_diffusion_training(const Denoiser& denoiser, const StyleEncoder* style_encoder, TrainMode mode,
                                  const DiffusionSchedule& schedule, const Tensor& latents,
                                  std::span<const std::size_t> content_ids,
                                  std::span<const MotionSequence* const> style_refs, const FusionConfig& fusion,
                                  const DiffusionTrainConfig& config, AdamW& optimizer,
                                  const std::function<void(std::size_t, double)>& on_epoch) {
    const std::size_t n = denoiser.config().latent_tokens;
    const std::size_t count = content_ids.size();
    if (count == 0 || latents.rows() != count * n)
        throw DimensionError("diffusion training: latents do not match the content ids");
    if (config.batch_size == 0) throw ConfigError("diffusion batch size must be positive");
    Rng rng(config.seed);
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    TrainCurve curve;
    auto good = snapshot(optimizer.params());
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < count; start += config.batch_size) {
            const std::size_t end = std::min(count, start + config.batch_size);
            std::span<const std::size_t> pick(order.data() + start, end - start);
            DiffusionBatch batch;
            batch.z0 = gather_rows(latents, sample_rows(pick, n));
            for (std::size_t s : pick) {
                batch.content_ids.push_back(content_ids[s]);
                if (mode == TrainMode::stylized) batch.style_refs.push_back(style_refs[s]);
            }
            try {
                total += train_step(denoiser, schedule, batch, mode, style_encoder, fusion, config.cond_dropout,
                                    optimizer, rng, config.min_step);
            } catch (const TrainingError&) {
                restore(optimizer.params(), good);
                throw TrainingError("diffusion loss became non-finite at epoch " + std::to_string(epoch),
                                    curve.epoch_loss.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                             : curve.epoch_loss.back());
            }
            ++batches;
        }
        curve.epoch_loss.push_back(total / static_cast<double>(batches));
        good = snapshot(optimizer.params());
        if (on_epoch) on_epoch(epoch, curve.epoch_loss.back());
    }
    return curve;
}

}  // namespace

TrainCurve train_content_model(Denoiser& denoiser, const DiffusionSchedule& schedule, const Tensor& latents,
                               std::span<const std::size_t> content_ids, const DiffusionTrainConfig& config,
                               const std::function<void(std::size_t, double)>& on_epoch) {
    denoiser.params().set_trainable(true);
    AdamW optimizer(denoiser.params().tensors(), AdamWConfig{.lr = config.lr});
    return run_diffusion_training(denoiser, nullptr, TrainMode::content_only, schedule, latents, content_ids, {}, {},
                                  config, optimizer, on_epoch);
}

TrainCurve train_stylized_model(Denoiser& denoiser, StyleEncoder& style_encoder, const DiffusionSchedule& schedule,
                                const Tensor& latents, std::span<const std::size_t> content_ids,
                                std::span<const MotionSequence* const> style_refs, const FusionConfig& fusion,
                                const DiffusionTrainConfig& config,
                                const std::function<void(std::size_t, double)>& on_epoch) {
    if (style_refs.size() != content_ids.size())
        throw DimensionError("stylized training needs one style reference per latent sample");
    denoiser.params().set_trainable(false);
    style_encoder.params().set_trainable(true);
    AdamW optimizer(style_encoder.params().tensors(), AdamWConfig{.lr = config.lr});
    return run_diffusion_training(denoiser, &style_encoder, TrainMode::stylized, schedule, latents, content_ids,
                                  style_refs, fusion, config, optimizer, on_epoch);
}

// ---- sampling -------------------------------------------------------------

Tensor sample_latents(const Denoiser& denoiser, const DiffusionSchedule& schedule,
                      std::span<const std::size_t> content_ids, std::span<const std::uint64_t> seeds,
                      const Tensor& style, const SamplerConfig& config, const LatentStyleClassifier* classifier,
                      std::span<const std::size_t> target_styles) {
    const std::size_t batch = content_ids.size();
    const std::size_t n = denoiser.config().latent_tokens;
    const std::size_t d = denoiser.config().latent_dim;
    if (batch == 0 || seeds.size() != batch) throw ContractError("sample_latents: one seed per sample required");
    const bool guided = config.w_cls > real(0);
    if (guided && (classifier == nullptr || target_styles.size() != batch))
        throw ContractError("classifier guidance needs a latent classifier and one target style per sample");

    std::vector<real> x(batch * n * d);
    for (std::size_t b = 0; b < batch; ++b) {
        Rng rng(seeds[b]);
        for (std::size_t i = 0; i < n * d; ++i) x[b * n * d + i] = rng.normal();
    }

    const std::vector<std::size_t> null_ids(batch, denoiser.null_content());
    const Tensor uncond_style = config.guide_style ? Tensor() : style;
    const auto ts = schedule.sampling_steps(config.steps);
    const std::size_t half = batch * n * d;

    for (std::size_t k = 0; k < ts.size(); ++k) {
        const std::size_t t = ts[k];
        const double ab = schedule.alpha_bar()[t];
        const double ab_prev = k + 1 < ts.size() ? schedule.alpha_bar()[ts[k + 1]] : 1.0;
        std::vector<real> eps(half);
        {
            NoGradGuard no_grad;
            Tensor xt = Tensor::from({batch * n, d}, x);
            const std::vector<std::size_t> steps(batch, t);
            Tensor cond = denoiser(xt, steps, content_ids, style, config.fusion);
            Tensor uncond = denoiser(xt, steps, null_ids, uncond_style, config.fusion);
            auto ec = cond.data();
            auto eu = uncond.data();
            for (std::size_t i = 0; i < half; ++i) eps[i] = eu[i] + config.w_cfg * (ec[i] - eu[i]);
        }
        const real root_ab = static_cast<real>(std::sqrt(ab));
        const real root_1mab = static_cast<real>(std::sqrt(1.0 - ab));
        std::vector<real> x0(half);
        for (std::size_t i = 0; i < half; ++i) x0[i] = (x[i] - root_1mab * eps[i]) / root_ab;

        if (guided) {
            Tensor leaf = Tensor::from({batch * n, d}, x0, true);
            std::vector<int> y(target_styles.begin(), target_styles.end());
            backward(cross_entropy((*classifier)(leaf), y));
            // cross_entropy is the batch mean of −log p; scale back to per-sample ∇ log p wrt x_t.
            auto g = leaf.grad();
            const real factor = static_cast<real>(batch) / root_ab;
            for (std::size_t i = 0; i < half; ++i) {
                const real grad_logp = -g[i] * factor;
                eps[i] -= config.w_cls * root_1mab * grad_logp;
                x0[i] = (x[i] - root_1mab * eps[i]) / root_ab;
            }
        }

        const real a_prev = static_cast<real>(std::sqrt(ab_prev));
        const real s_prev = static_cast<real>(std::sqrt(1.0 - ab_prev));
        for (std::size_t i = 0; i < half; ++i) x[i] = a_prev * x0[i] + s_prev * eps[i];
    }
    return Tensor::from({batch * n, d}, std::move(x));
}

// ---- checkpoint -----------------------------------------------------------

TensorTable DiffusionModel::to_table() const {
    TensorTable table;
    table.metadata() = config.to_metadata("denoiser.");
    table.metadata()["kind"] = "diffusion";
    table.metadata()["schedule.steps"] = std::to_string(schedule_steps);
    table.metadata()["schedule.beta_start"] = exact(beta_start);
    table.metadata()["schedule.beta_end"] = exact(beta_end);
    table.metadata()["classifier"] = classifier ? "1" : "0";
    denoiser.params().export_to(table, "denoiser.");
    table.put_values("latent.mean", {stats.mean.size()}, stats.mean);
    table.put_values("latent.std", {stats.stddev.size()}, stats.stddev);
    if (classifier) classifier->params().export_to(table, "classifier.");
    return table;
}

DiffusionModel DiffusionModel::from_table(const TensorTable& table) {
    if (!table.metadata().count("kind") || table.meta("kind") != "diffusion")
        throw LoadError("checkpoint does not hold a diffusion model");
    const auto config = DenoiserConfig::from_metadata(table.metadata(), "denoiser.");
    Rng rng(0);
    DiffusionModel model{config,
                         meta_size(table.metadata(), "schedule.steps"),
                         meta_double(table.metadata(), "schedule.beta_start"),
                         meta_double(table.metadata(), "schedule.beta_end"),
                         Denoiser(config, rng),
                         {},
                         std::nullopt};
    model.denoiser.params().import_from(table, "denoiser.");
    const auto& mean = table.at("latent.mean");
    const auto& sd = table.at("latent.std");
    model.stats.mean.assign(mean.values.begin(), mean.values.end());
    model.stats.stddev.assign(sd.values.begin(), sd.values.end());
    if (model.stats.mean.size() != config.latent_tokens * config.latent_dim ||
        model.stats.stddev.size() != model.stats.mean.size())
        throw LoadError("latent statistics do not match the denoiser configuration");
    if (table.meta("classifier") == "1") {
        model.classifier.emplace(config.latent_tokens, config.latent_dim, style_labels().size(), rng);
        model.classifier->params().import_from(table, "classifier.");
        model.classifier->params().set_trainable(false);
    }
    return model;
}

SMLD_NAMESPACE_END
