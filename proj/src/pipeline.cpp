// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#include "smld/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "smld/errors.hpp"
#include "smld/fusion.hpp"

SMLD_NAMESPACE_BEGIN

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kEncodeChunk = 64;

/// Collects log lines for one stage, echoing them to the progress callback.
class StageLog {
  public:
    StageLog(const Workspace& ws, std::string stage, const Progress& progress)
        : path_(ws.log(stage)), stage_(std::move(stage)), progress_(progress) {}

    void line(const std::string& text) {
        lines_ += text + "\n";
        if (progress_) progress_("[" + stage_ + "] " + text);
    }
    void curve(const std::string& name, std::size_t epoch, double loss) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%s epoch %zu loss %.6f", name.c_str(), epoch, loss);
        line(buf);
    }
    std::function<void(std::size_t, double)> epoch_logger(const std::string& name) {
        return [this, name](std::size_t epoch, double loss) { curve(name, epoch, loss); };
    }
    void flush() const {
        fs::create_directories(path_.parent_path());
        std::ofstream out(path_, std::ios::binary);
        out << lines_;
    }

  private:
    fs::path path_;
    std::string stage_;
    const Progress& progress_;
    std::string lines_;
};

void write_json(const fs::path& path, const Json& value) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write " + path.string());
    out << value.dump(2) << '\n';
}

void save_stage_config(const RunConfig& config, const fs::path& dir, const std::string& stage) {
    config.save(dir / (stage + ".cfg"));
}

VaeTrainConfig vae_train_config(const RunConfig& config, std::size_t epochs, std::string_view tag) {
    VaeTrainConfig t;
    t.epochs = epochs;
    t.batch_size = config.count("vae.batch_size");
    t.lr = static_cast<real>(config.number("vae.lr"));
    t.beta = static_cast<real>(config.number("vae.beta"));
    t.warmup_epochs = config.count("vae.warmup_epochs");
    t.seed = derive_seed(config.seed("seed"), tag);
    return t;
}

PretrainStrategy parse_strategy(const std::string& name) {
    if (name == "two_stage") return PretrainStrategy::two_stage;
    if (name == "style_only") return PretrainStrategy::style_only;
    throw ConfigError("vae.strategy must be two_stage or style_only, got '" + name + "'");
}

std::vector<std::size_t> label_ids(const std::vector<CorpusRecord>& records, bool style) {
    std::vector<std::size_t> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(style ? style_index(r.style) : content_index(r.content));
    return out;
}

Tensor embed_motions(const StyleEncoder& encoder, std::span<const MotionSequence* const> motions) {
    NoGradGuard guard;
    std::vector<Tensor> parts;
    for (std::size_t start = 0; start < motions.size(); start += kEncodeChunk)
        parts.push_back(encoder.embed(motions.subspan(start, std::min(kEncodeChunk, motions.size() - start))));
    return parts.size() == 1 ? parts.front() : concat_rows(parts);
}

Tensor encode_latents(const VaeModel& vae, std::span<const MotionSequence* const> motions) {
    NoGradGuard guard;
    std::vector<Tensor> parts;
    for (std::size_t start = 0; start < motions.size(); start += kEncodeChunk)
        parts.push_back(vae.encode(motions.subspan(start, std::min(kEncodeChunk, motions.size() - start))).mean);
    return parts.size() == 1 ? parts.front() : concat_rows(parts);
}

std::vector<real> row_of(const Tensor& t, std::size_t r) {
    const auto data = t.data();
    return {data.begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
            data.begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols())};
}

Tensor rows_tensor(const std::vector<std::vector<real>>& rows) {
    std::vector<real> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor::from({rows.size(), rows.front().size()}, std::move(flat));
}

double cosine(std::span<const real> a, std::span<const real> b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    return dot / std::sqrt(na * nb);
}

AlignConfig align_config(const RunConfig& config, std::size_t epochs, std::string_view tag) {
    AlignConfig a;
    a.tau = static_cast<real>(config.number("align.tau"));
    a.epochs = epochs;
    a.lr = static_cast<real>(config.number("align.lr"));
    a.weight_decay = static_cast<real>(config.number("align.weight_decay"));
    a.seed = derive_seed(config.seed("seed"), tag);
    return a;
}

TensorTable load_checkpoint(const Workspace& ws, const std::string& name) {
    const fs::path path = ws.checkpoint(name);
    Workspace::require(path, name);
    return TensorTable::load(path);
}

void write_provenance(const fs::path& output, const Json& record, const RunConfig& config) {
    write_json(fs::path(output.string() + ".json"), record);
    config.save(fs::path(output.string() + ".cfg"));
}

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

void Workspace::require(const fs::path& path, const std::string& artifact) {
    if (!fs::exists(path)) throw DependencyError(artifact, path.string() + " not found");
}

// ---- data -------------------------------------------------------------------

Dataset load_dataset(const fs::path& manifest) {
    const auto entries = read_manifest(manifest);
    const fs::path base = manifest.parent_path();
    Dataset ds;
    for (const auto& e : entries) {
        CorpusRecord r;
        r.id = e.id;
        r.sentence = e.content_text;
        r.content = content_from_sentence(e.content_text);
        r.style = e.style;
        r.split = e.split;
        r.motion = read_motion(base / e.path);
        (e.split == Split::train ? ds.train : ds.test).push_back(std::move(r));
    }
    return ds;
}

std::vector<const MotionSequence*> motion_pointers(const std::vector<CorpusRecord>& records) {
    std::vector<const MotionSequence*> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(&r.motion);
    return out;
}

std::string resolve_content(std::string_view content) {
    for (const auto& label : content_labels())
        if (label == content || content_sentence(label) == content) return label;
    throw VocabularyError("unknown content '" + std::string(content) + "'");
}

FusionConfig fusion_config(const RunConfig& config, std::optional<double> gamma) {
    FusionConfig f;
    f.gamma = static_cast<real>(gamma.value_or(config.number("fusion.gamma")));
    f.eta = static_cast<real>(config.number("fusion.eta"));
    f.hook_block = config.count("fusion.hook_block");
    f.validate();
    return f;
}

SamplerConfig sampler_config(const RunConfig& config, std::optional<double> gamma) {
    SamplerConfig s;
    s.steps = config.count("sample.steps");
    s.w_cfg = static_cast<real>(config.number("sample.w_cfg"));
    s.w_cls = static_cast<real>(config.number("sample.w_cls"));
    s.guide_style = config.flag("sample.guide_style");
    s.fusion = fusion_config(config, gamma);
    return s;
}

VaeConfig vae_config(const RunConfig& config) {
    VaeConfig v;
    v.latent_tokens = config.count("vae.latent_tokens");
    v.latent_dim = config.count("vae.latent_dim");
    v.blocks = config.count("vae.blocks");
    v.hidden = config.count("vae.hidden");
    v.heads = config.count("vae.heads");
    v.patch = config.count("vae.patch");
    v.ff_mult = config.count("vae.ff_mult");
    v.validate();
    v.check_frames(config.count("data.frames"));
    return v;
}

DenoiserConfig denoiser_config(const RunConfig& config) {
    DenoiserConfig d;
    d.latent_tokens = config.count("vae.latent_tokens");
    d.latent_dim = config.count("vae.latent_dim");
    d.width = config.count("diffusion.width");
    d.blocks = config.count("diffusion.blocks");
    d.heads = config.count("diffusion.heads");
    d.ff_mult = config.count("diffusion.ff_mult");
    d.content_vocab = content_labels().size();
    d.validate();
    return d;
}

Json gen_data(const RunConfig& config, const Workspace& ws, const Progress& progress) {
    StageLog log(ws, "gen-data", progress);
    auto write_corpus = [&](const CorpusConfig& cc, const fs::path& manifest) {
        const Corpus corpus = build_corpus(cc);
        const fs::path dir = manifest.parent_path();
        fs::create_directories(dir / "motions");
        std::vector<ManifestEntry> entries;
        for (const auto* part : {&corpus.train, &corpus.test}) {
            for (const auto& r : *part) {
                const std::string rel = "motions/" + r.id + ".smot";
                write_motion(dir / rel, r.motion);
                entries.push_back({r.id, rel, r.sentence, r.style, r.split});
            }
        }
        write_manifest(manifest, entries);
        log.line(cc.tag + ": " + std::to_string(corpus.train.size()) + " train, " +
                 std::to_string(corpus.test.size()) + " test");
        return Json{{"train", corpus.train.size()}, {"test", corpus.test.size()}};
    };

    CorpusConfig main;
    main.samples_per_cell = config.count("data.samples_per_cell");
    main.num_frames = config.count("data.frames");
    main.test_fraction = config.number("data.test_fraction");
    main.master_seed = config.seed("seed");
    main.tag = "main";
    CorpusConfig judge = main;
    judge.samples_per_cell = config.count("data.judge_samples_per_cell");
    judge.master_seed = config.seed("data.judge_seed");
    judge.tag = "judge";

    Json summary;
    summary["main"] = write_corpus(main, ws.manifest());
    summary["judge"] = write_corpus(judge, ws.judge_manifest());
    save_stage_config(config, ws.data_dir(), "gen-data");
    log.flush();
    return summary;
}

// ---- training stages -----------------------------------------------------------

Json train_vae_stage(const RunConfig& config, const Workspace& ws, const Progress& progress) {
    Workspace::require(ws.manifest(), "data");
    StageLog log(ws, "train-vae", progress);
    const Dataset data = load_dataset(ws.manifest());
    const auto content_corpus = motion_pointers(data.train);

    Rng rng(derive_seed(config.seed("seed"), "vae.init"));
    VaeModel vae(vae_config(config), rng);
    vae.normalizer() = FeatureNormalizer::fit(content_corpus);
    const auto curve = train_vae(vae, content_corpus, vae_train_config(config, config.count("vae.stage1_epochs"), "vae.stage1"),
                                 log.epoch_logger("stage1"));

    fs::create_directories(ws.checkpoint_dir());
    vae.to_table().save(ws.checkpoint("vae"));
    save_stage_config(config, ws.checkpoint_dir(), "train-vae");
    log.flush();
    return Json{{"parameters", vae.parameter_count()}, {"final_loss", curve.epoch_loss.back()}};
}

Json train_style_encoder_stage(const RunConfig& config, const Workspace& ws, const Progress& progress) {
    Workspace::require(ws.manifest(), "data");
    const auto strategy = parse_strategy(config.text("vae.strategy"));
    StageLog log(ws, "train-style-encoder", progress);
    const Dataset data = load_dataset(ws.manifest());
    const auto style_corpus = motion_pointers(data.train);

    std::optional<VaeModel> vae;
    if (strategy == PretrainStrategy::two_stage) {
        vae.emplace(VaeModel::from_table(load_checkpoint(ws, "vae")));
        train_vae(*vae, style_corpus, vae_train_config(config, config.count("vae.stage2_epochs"), "vae.stage2"),
                  log.epoch_logger("stage2"));
    } else {
        Rng init(derive_seed(config.seed("seed"), "vae.style_only.init"));
        vae.emplace(vae_config(config), init);
        vae->normalizer() = FeatureNormalizer::fit(style_corpus);
        train_vae(*vae, style_corpus,
                  vae_train_config(config, config.count("vae.stage1_epochs") + config.count("vae.stage2_epochs"),
                                   "vae.style_only"),
                  log.epoch_logger("style_only"));
    }
    Rng adapter(derive_seed(config.seed("seed"), "style_encoder.adapter"));
    StyleEncoder encoder(*vae, config.count("diffusion.width"), adapter);

    fs::create_directories(ws.checkpoint_dir());
    encoder.to_table().save(ws.checkpoint("style_encoder"));
    save_stage_config(config, ws.checkpoint_dir(), "train-style-encoder");
    log.flush();
    return Json{{"strategy", config.text("vae.strategy")}, {"parameters", encoder.parameter_count()}};
}

Json train_diffusion_stage(const RunConfig& config, const Workspace& ws, const Progress& progress) {
    Workspace::require(ws.manifest(), "data");
    const VaeModel vae = VaeModel::from_table(load_checkpoint(ws, "vae"));
    StyleEncoder stylizer = StyleEncoder::from_table(load_checkpoint(ws, "style_encoder"));
    StageLog log(ws, "train-diffusion", progress);
    const Dataset data = load_dataset(ws.manifest());
    const auto motions = motion_pointers(data.train);
    const std::uint64_t seed = config.seed("seed");

    const DenoiserConfig dconf = denoiser_config(config);
    if (stylizer.fusion_width() != dconf.width)
        throw ConfigError("style encoder width " + std::to_string(stylizer.fusion_width()) +
                          " does not match diffusion.width " + std::to_string(dconf.width));
    Rng init(derive_seed(seed, "denoiser.init"));
    DiffusionModel model{dconf,
                         config.count("diffusion.steps"),
                         config.number("diffusion.beta_start"),
                         config.number("diffusion.beta_end"),
                         Denoiser(dconf, init),
                         {},
                         std::nullopt};
    const DiffusionSchedule schedule = model.schedule();

    const Tensor latents = encode_latents(vae, motions);
    model.stats = LatentStats::fit(latents, dconf.latent_tokens);
    const Tensor z = model.stats.standardize(latents);
    const auto content_ids = label_ids(data.train, false);
    const auto style_ids = label_ids(data.train, true);

    DiffusionTrainConfig content_cfg;
    content_cfg.epochs = config.count("diffusion.epochs");
    content_cfg.batch_size = config.count("diffusion.batch_size");
    content_cfg.lr = static_cast<real>(config.number("diffusion.lr"));
    content_cfg.cond_dropout = static_cast<real>(config.number("diffusion.cond_dropout"));
    content_cfg.seed = derive_seed(seed, "diffusion.content");
    const auto content_curve =
        train_content_model(model.denoiser, schedule, z, content_ids, content_cfg, log.epoch_logger("content"));

    // Each sample's style reference is another training motion of the same style.
    Rng pick(derive_seed(seed, "diffusion.style_refs"));
    std::map<std::string, std::vector<std::size_t>> by_style;
    for (std::size_t i = 0; i < data.train.size(); ++i) by_style[data.train[i].style].push_back(i);
    std::vector<const MotionSequence*> refs;
    for (const auto& r : data.train) {
        const auto& pool = by_style[r.style];
        refs.push_back(&data.train[pool[pick.index(pool.size())]].motion);
    }

    DiffusionTrainConfig style_cfg = content_cfg;
    style_cfg.epochs = config.count("diffusion.style_epochs");
    style_cfg.lr = static_cast<real>(config.number("diffusion.style_lr"));
    style_cfg.min_step = config.count("diffusion.style_min_step");
    style_cfg.seed = derive_seed(seed, "diffusion.stylized");
    const auto style_curve = train_stylized_model(model.denoiser, stylizer, schedule, z, content_ids, refs,
                                                  fusion_config(config), style_cfg, log.epoch_logger("stylized"));
    stylizer.params().set_trainable(false);

    if (config.count("diffusion.classifier_epochs") > 0) {
        Rng crng(derive_seed(seed, "latent_classifier.init"));
        model.classifier.emplace(dconf.latent_tokens, dconf.latent_dim, style_labels().size(), crng);
        const auto curve = train_latent_classifier(*model.classifier, z, style_ids,
                                                   config.count("diffusion.classifier_epochs"), real(3e-3),
                                                   derive_seed(seed, "latent_classifier.train"));
        log.curve("latent_classifier", curve.epoch_loss.size() - 1, curve.epoch_loss.back());
    }

    fs::create_directories(ws.checkpoint_dir());
    model.to_table().save(ws.checkpoint("diffusion"));
    stylizer.to_table().save(ws.checkpoint("stylizer"));
    save_stage_config(config, ws.checkpoint_dir(), "train-diffusion");
    log.flush();
    return Json{{"content_final_loss", content_curve.epoch_loss.back()},
                {"stylized_final_loss", style_curve.epoch_loss.back()},
                {"denoiser_parameters", model.denoiser.params().count()},
                {"style_encoder_parameters", stylizer.parameter_count()}};
}

Json train_align_stage(const RunConfig& config, const Workspace& ws, const Progress& progress) {
    Workspace::require(ws.manifest(), "data");
    const StyleEncoder stylizer = StyleEncoder::from_table(load_checkpoint(ws, "stylizer"));
    StageLog log(ws, "train-align", progress);
    const Dataset data = load_dataset(ws.manifest());
    const std::uint64_t seed = config.seed("seed");

    const ModalityEmbedder embedder(config.seed("align.embedder_seed"));
    const auto embedder_hash = embedder.fingerprint();
    const Tensor train_emb = embed_motions(stylizer, motion_pointers(data.train));
    std::vector<AlignExample> examples;
    for (std::size_t i = 0; i < data.train.size(); ++i) examples.push_back({data.train[i].style, row_of(train_emb, i)});

    Rng init(derive_seed(seed, "align.init"));
    Projection projection(ModalityEmbedder::kDim, stylizer.config().latent_dim, init);
    const auto curve = train_alignment(projection, embedder, examples,
                                       align_config(config, config.count("align.epochs"), "align.train"),
                                       log.epoch_logger("align"));
    if (embedder.fingerprint() != embedder_hash) throw StateError("modality embedder changed during alignment");

    AlignmentIndex index;
    for (std::size_t i = 0; i < data.train.size(); ++i)
        index.add(data.train[i].style, data.train[i].id, examples[i].embedding);

    // Held-out evaluation: each test motion against the projected label queries.
    const Tensor test_emb = embed_motions(stylizer, motion_pointers(data.test));
    const Retriever retriever(embedder, projection, index);
    Json accuracy;
    double positive = 0, negative = 0;
    std::size_t npos = 0, nneg = 0;
    for (Modality m : {Modality::text, Modality::image, Modality::audio}) {
        std::vector<std::vector<real>> queries;
        for (const auto& s : style_labels()) queries.push_back(retriever.query_vector(m, s));
        std::size_t hits = 0;
        for (std::size_t i = 0; i < data.test.size(); ++i) {
            const auto e = row_of(test_emb, i);
            std::size_t best = 0;
            double best_sim = -2;
            for (std::size_t q = 0; q < queries.size(); ++q) {
                const double sim = cosine(e, queries[q]);
                if (sim > best_sim) {
                    best_sim = sim;
                    best = q;
                }
                if (m == Modality::text) {
                    (style_labels()[q] == data.test[i].style ? positive : negative) += sim;
                    ++(style_labels()[q] == data.test[i].style ? npos : nneg);
                }
            }
            hits += style_labels()[best] == data.test[i].style ? 1 : 0;
        }
        accuracy[std::string(modality_name(m))] = 100.0 * static_cast<double>(hits) / static_cast<double>(data.test.size());
    }
    // Query → index direction: top-1 label for each style word over the serving index.
    std::size_t word_hits = 0;
    for (const auto& s : style_labels()) word_hits += retriever.retrieve(Modality::text, s, 1).front().label == s ? 1 : 0;
    for (const auto& [name, value] : accuracy.items())
        log.line("held-out retrieval accuracy " + name + " " + format_number(value.get<double>()));

    fs::create_directories(ws.checkpoint_dir());
    TensorTable table;
    table.metadata()["kind"] = "align";
    table.metadata()["embedder_seed"] = config.text("align.embedder_seed");
    table.metadata()["in"] = std::to_string(ModalityEmbedder::kDim);
    table.metadata()["out"] = std::to_string(stylizer.config().latent_dim);
    projection.params().export_to(table, "projection.");
    table.save(ws.checkpoint("align"));
    index.save(ws.checkpoint("index"), ws.index_labels());
    save_stage_config(config, ws.checkpoint_dir(), "train-align");
    log.flush();
    return Json{{"final_loss", curve.epoch_loss.back()},
                {"heldout_accuracy", accuracy},
                {"word_top1", 100.0 * static_cast<double>(word_hits) / static_cast<double>(style_labels().size())},
                {"mean_positive_cosine", positive / static_cast<double>(npos)},
                {"mean_negative_cosine", negative / static_cast<double>(nneg)},
                {"index_size", index.size()}};
}

Json train_classifier_stage(const RunConfig& config, const Workspace& ws, const Progress& progress) {
    Workspace::require(ws.manifest(), "data");
    Workspace::require(ws.judge_manifest(), "data");
    const FeatureExtractor extractor(StyleEncoder::from_table(load_checkpoint(ws, "style_encoder")));
    StageLog log(ws, "train-classifier", progress);
    const std::uint64_t seed = config.seed("seed");
    const Dataset judge = load_dataset(ws.judge_manifest());
    std::vector<CorpusRecord> records;
    for (const auto* part : {&judge.train, &judge.test})
        for (const auto& r : *part) records.push_back(r);
    const Tensor features = extractor.feature_tensor(motion_pointers(records));
    const std::size_t dim = extractor.dim();

    ClassifierTrainConfig cc;
    cc.epochs = config.count("judge.epochs");
    cc.lr = static_cast<real>(config.number("judge.lr"));
    Rng init(derive_seed(seed, "judge.init"));
    FeatureClassifier style(dim, style_labels().size(), init);
    FeatureClassifier content(dim, content_labels().size(), init);
    cc.seed = derive_seed(seed, "judge.style");
    auto curve = train_classifier(style, features, label_ids(records, true), cc);
    log.curve("style_judge", cc.epochs - 1, curve.epoch_loss.back());
    cc.seed = derive_seed(seed, "judge.content");
    curve = train_classifier(content, features, label_ids(records, false), cc);
    log.curve("content_judge", cc.epochs - 1, curve.epoch_loss.back());

    // Text evaluator: content sentences aligned to the evaluator feature space.
    const ModalityEmbedder embedder(config.seed("align.embedder_seed"));
    std::vector<AlignExample> examples;
    for (std::size_t i = 0; i < records.size(); ++i) examples.push_back({records[i].sentence, row_of(features, i)});
    Projection text(ModalityEmbedder::kDim, dim, init);
    curve = train_alignment(text, embedder, examples, align_config(config, config.count("judge.text_epochs"), "judge.text"));
    log.curve("text_evaluator", config.count("judge.text_epochs") - 1, curve.epoch_loss.back());

    // Calibration on real held-out motions of the main corpus.
    const Dataset main = load_dataset(ws.manifest());
    const Tensor test_features = extractor.feature_tensor(motion_pointers(main.test));
    const double style_acc = accuracy_percent(style.predict(test_features), label_ids(main.test, true));
    const double content_acc = accuracy_percent(content.predict(test_features), label_ids(main.test, false));
    log.line("calibration style " + format_number(style_acc) + " content " + format_number(content_acc));

    TensorTable table;
    table.metadata()["kind"] = "judge";
    table.metadata()["feature_dim"] = std::to_string(dim);
    table.metadata()["calibration.style"] = format_number(style_acc);
    table.metadata()["calibration.content"] = format_number(content_acc);
    style.params().export_to(table, "style.");
    content.params().export_to(table, "content.");
    text.params().export_to(table, "text.");
    fs::create_directories(ws.checkpoint_dir());
    table.save(ws.checkpoint("judge"));
    save_stage_config(config, ws.checkpoint_dir(), "train-classifier");
    log.flush();
    return Json{{"calibration_style", style_acc}, {"calibration_content", content_acc}, {"judge_samples", records.size()}};
}

// ---- loading ------------------------------------------------------------------------

Generator Generator::load(const RunConfig& config, const Workspace& ws) {
    VaeModel vae = VaeModel::from_table(load_checkpoint(ws, "vae"));
    DiffusionModel diffusion = DiffusionModel::from_table(load_checkpoint(ws, "diffusion"));
    StyleEncoder stylizer = StyleEncoder::from_table(load_checkpoint(ws, "stylizer"));
    const std::size_t frames = config.count("data.frames");
    vae.config().check_frames(frames);
    return Generator{std::move(vae), std::move(diffusion), std::move(stylizer), frames};
}

std::vector<MotionSequence> Generator::generate(std::span<const std::size_t> content_ids,
                                                std::span<const std::uint64_t> seeds, const Tensor& unit_style,
                                                const SamplerConfig& sampler,
                                                std::span<const std::size_t> targets) const {
    Tensor style;
    if (unit_style.defined()) {
        if (unit_style.rows() != content_ids.size())
            throw ContractError("one style embedding per generated sample required");
        NoGradGuard guard;
        style = stylizer.fusion_features(unit_style);
    }
    const LatentStyleClassifier* classifier = diffusion.classifier ? &*diffusion.classifier : nullptr;
    if (sampler.w_cls > real(0) && classifier == nullptr)
        throw DependencyError("classifier", "classifier guidance requested but the diffusion checkpoint has no latent classifier");
    const Tensor z = sample_latents(diffusion.denoiser, diffusion.schedule(), content_ids, seeds, style, sampler,
                                    classifier, targets);
    NoGradGuard guard;
    auto motions = vae.decode(diffusion.stats.restore(z), content_ids.size(), frames);
    for (std::size_t i = 0; i < motions.size(); ++i) {
        motions[i].content = content_labels()[content_ids[i]];
        motions[i].style = targets.empty() ? std::string() : style_labels()[targets[i]];
    }
    return motions;
}

AlignmentModel AlignmentModel::load(const Workspace& ws) {
    const TensorTable table = load_checkpoint(ws, "align");
    Workspace::require(ws.index_labels(), "align");
    if (!table.metadata().count("kind") || table.meta("kind") != "align")
        throw LoadError("checkpoint does not hold an alignment projection");
    Rng rng(0);
    Projection projection(std::stoul(table.meta("in")), std::stoul(table.meta("out")), rng);
    projection.params().import_from(table, "projection.");
    projection.params().set_trainable(false);
    return AlignmentModel{ModalityEmbedder(std::stoull(table.meta("embedder_seed"))), std::move(projection),
                          AlignmentIndex::load(ws.checkpoint("index"), ws.index_labels())};
}

Judges Judges::load(const Workspace& ws) {
    const TensorTable table = load_checkpoint(ws, "judge");
    if (!table.metadata().count("kind") || table.meta("kind") != "judge")
        throw LoadError("checkpoint does not hold the evaluation judges");
    FeatureExtractor extractor(StyleEncoder::from_table(load_checkpoint(ws, "style_encoder")));
    const std::size_t dim = std::stoul(table.meta("feature_dim"));
    Rng rng(0);
    Judges judges{std::move(extractor), FeatureClassifier(dim, style_labels().size(), rng),
                  FeatureClassifier(dim, content_labels().size(), rng), Projection(ModalityEmbedder::kDim, dim, rng)};
    judges.style.params().import_from(table, "style.");
    judges.content.params().import_from(table, "content.");
    judges.text.params().import_from(table, "text.");
    judges.style.params().set_trainable(false);
    judges.content.params().set_trainable(false);
    judges.text.params().set_trainable(false);
    return judges;
}

FeatureMatrix Judges::text_features(std::span<const std::string> contents, const ModalityEmbedder& embedder) const {
    std::vector<std::string> sentences;
    for (const auto& c : contents) sentences.push_back(content_sentence(c));
    NoGradGuard guard;
    return FeatureMatrix::from_tensor(l2_normalize_rows(text(embedder.embed_all(Modality::text, sentences))));
}

// ---- sampling commands ------------------------------------------------------------------

namespace {

struct ResolvedStyle {
    std::vector<real> embedding;  // unit pooled, or an interpolation of unit vectors
    std::optional<std::size_t> label;
    Json provenance;
};

ResolvedStyle resolve_style(const Generator& gen, const Workspace& ws, const std::string& modality,
                            const std::string& input) {
    ResolvedStyle out;
    if (modality == "motion") {
        const MotionSequence ref = read_motion(input);
        const MotionSequence* ptr = &ref;
        const Tensor e = embed_motions(gen.stylizer, std::span<const MotionSequence* const>(&ptr, 1));
        out.embedding = row_of(e, 0);
        if (!ref.style.empty()) out.label = style_index(ref.style);
        out.provenance = Json{{"modality", "motion"}, {"input", input}, {"reference_style", ref.style}};
        return out;
    }
    const Modality m = parse_modality(modality);
    const AlignmentModel align = AlignmentModel::load(ws);
    const auto hit = align.retriever().retrieve(m, input, 1).front();
    out.embedding = hit.embedding;
    out.label = style_index(hit.label);
    out.provenance = Json{{"modality", std::string(modality_name(m))},
                          {"input", input},
                          {"retrieved_label", hit.label},
                          {"retrieved_motion", hit.motion_id},
                          {"similarity", hit.similarity}};
    return out;
}

Json judge_record(const Workspace& ws, const MotionSequence& motion) {
    if (!fs::exists(ws.checkpoint("judge"))) return nullptr;
    const Judges judges = Judges::load(ws);
    const MotionSequence* ptr = &motion;
    const Tensor f = judges.extractor.feature_tensor(std::span<const MotionSequence* const>(&ptr, 1));
    return Json{{"style", style_labels()[judges.style.predict(f).front()]},
                {"content", content_labels()[judges.content.predict(f).front()]}};
}

Json sample_and_write(const RunConfig& config, const Workspace& ws, const Generator& gen, const std::string& content,
                      const std::vector<real>& embedding, std::optional<std::size_t> label,
                      std::optional<double> gamma, std::optional<std::uint64_t> seed, const fs::path& output,
                      Json provenance) {
    if (output.empty()) throw UsageError("an output path is required");
    const SamplerConfig sampler = sampler_config(config, gamma);
    const std::size_t content_id = content_index(content);
    const std::uint64_t sample_seed = seed.value_or(config.seed("sample.seed"));
    std::vector<std::size_t> targets;
    if (sampler.w_cls > real(0)) {
        if (!label) throw UsageError("classifier guidance needs a style label for the reference");
        targets.push_back(*label);
    }
    const Tensor style = rows_tensor({embedding});
    auto motions = gen.generate(std::span<const std::size_t>(&content_id, 1),
                                std::span<const std::uint64_t>(&sample_seed, 1), style, sampler, targets);
    MotionSequence& motion = motions.front();
    motion.style = label ? style_labels()[*label] : std::string();
    if (output.has_parent_path()) fs::create_directories(output.parent_path());
    write_motion(output, motion);

    provenance["content"] = content;
    provenance["content_text"] = content_sentence(content);
    provenance["gamma"] = static_cast<double>(sampler.fusion.gamma);
    provenance["seed"] = sample_seed;
    provenance["w_cfg"] = static_cast<double>(sampler.w_cfg);
    provenance["w_cls"] = static_cast<double>(sampler.w_cls);
    provenance["judge"] = judge_record(ws, motion);
    provenance["output"] = output.filename().string();
    write_provenance(output, provenance, config);
    return provenance;
}

}  // namespace

Json stylize(const RunConfig& config, const Workspace& ws, const StylizeRequest& request) {
    const std::string content = resolve_content(request.content);
    if (request.modality != "motion") parse_modality(request.modality);
    const Generator gen = Generator::load(config, ws);
    const ResolvedStyle style = resolve_style(gen, ws, request.modality, request.input);
    Json provenance{{"command", "stylize"}, {"style", style.provenance}};
    return sample_and_write(config, ws, gen, content, style.embedding, style.label, request.gamma, request.seed,
                            request.output, provenance);
}

Json interpolate(const RunConfig& config, const Workspace& ws, const InterpolateRequest& request) {
    const std::string content = resolve_content(request.content);
    if (request.styles.size() < 2) throw UsageError("interpolate needs at least two weighted styles");
    const Modality modality = parse_modality(request.modality);
    std::vector<StyleQuery> queries;
    std::vector<double> weights;
    for (const auto& [w, entry] : request.styles) {
        queries.push_back({modality, entry});
        weights.push_back(w);
    }
    const Generator gen = Generator::load(config, ws);
    const AlignmentModel align = AlignmentModel::load(ws);
    Interpolation mix;
    try {
        mix = interpolate_styles(align.retriever(), queries, weights);
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    }
    Json sources = Json::array();
    for (std::size_t i = 0; i < mix.sources.size(); ++i)
        sources.push_back(Json{{"input", queries[i].entry},
                               {"weight", mix.weights[i]},
                               {"retrieved_label", mix.sources[i].label},
                               {"retrieved_motion", mix.sources[i].motion_id},
                               {"similarity", mix.sources[i].similarity}});
    // The dominant source labels the output (first on ties).
    std::size_t dominant = 0;
    for (std::size_t i = 1; i < mix.weights.size(); ++i)
        if (mix.weights[i] > mix.weights[dominant]) dominant = i;
    Json provenance{{"command", "interpolate"},
                    {"style", Json{{"modality", std::string(modality_name(modality))}, {"sources", sources}}},
                    {"weights", mix.weights}};
    return sample_and_write(config, ws, gen, content, mix.embedding, style_index(mix.sources[dominant].label),
                            request.gamma, request.seed, request.output, provenance);
}

// ---- evaluation ----------------------------------------------------------------------

namespace {

/// The evaluation generation set: every (content, style) pair × samples.
struct EvalPlan {
    std::vector<std::size_t> contents, styles;
    std::vector<std::uint64_t> seeds;
    std::vector<std::size_t> ref_index;  // into the test split
};

EvalPlan make_plan(const RunConfig& config, const Dataset& data) {
    EvalPlan plan;
    const std::size_t per_pair = config.count("eval.samples_per_pair");
    const std::size_t nc = content_labels().size(), ns = style_labels().size();
    const std::uint64_t base = derive_seed(config.seed("seed"), "eval.samples");
    for (std::size_t c = 0; c < nc; ++c) {
        for (std::size_t s = 0; s < ns; ++s) {
            for (std::size_t k = 0; k < per_pair; ++k) {
                plan.contents.push_back(c);
                plan.styles.push_back(s);
                plan.seeds.push_back(base + plan.seeds.size());
                // Reference of the target style, preferring another content.
                const std::size_t want = (c + 1 + k) % nc;
                std::optional<std::size_t> ref, fallback;
                for (std::size_t i = 0; i < data.test.size(); ++i) {
                    if (style_index(data.test[i].style) != s) continue;
                    if (!fallback) fallback = i;
                    if (content_index(data.test[i].content) == want) {
                        ref = i;
                        break;
                    }
                }
                if (!fallback) throw ContractError("test split lacks style " + style_labels()[s]);
                plan.ref_index.push_back(ref.value_or(*fallback));
            }
        }
    }
    return plan;
}

struct GeneratedSet {
    std::vector<MotionSequence> motions;
    FeatureMatrix features;
    Tensor feature_tensor;
};

GeneratedSet generate_set(const Generator& gen, const Judges& judges, const EvalPlan& plan, const Tensor& style,
                          const SamplerConfig& sampler) {
    GeneratedSet out;
    out.motions = gen.generate(plan.contents, plan.seeds, style, sampler,
                               sampler.w_cls > real(0) ? std::span<const std::size_t>(plan.styles)
                                                       : std::span<const std::size_t>());
    std::vector<const MotionSequence*> ptrs;
    for (const auto& m : out.motions) ptrs.push_back(&m);
    out.feature_tensor = judges.extractor.feature_tensor(ptrs);
    out.features = FeatureMatrix::from_tensor(out.feature_tensor);
    return out;
}

Json score_set(const RunConfig& config, const Judges& judges, const ModalityEmbedder& embedder,
               const EvalPlan& plan, const GeneratedSet& set, const GaussianFit& real_fit) {
    std::vector<std::string> contents;
    for (std::size_t c : plan.contents) contents.push_back(content_labels()[c]);
    const FeatureMatrix text = judges.text_features(contents, embedder);
    std::vector<const MotionSequence*> ptrs;
    for (const auto& m : set.motions) ptrs.push_back(&m);
    const std::uint64_t seed = config.seed("seed");
    return Json{
        {"sra", accuracy_percent(judges.style.predict(set.feature_tensor), plan.styles)},
        {"content_accuracy", accuracy_percent(judges.content.predict(set.feature_tensor), plan.contents)},
        {"fid", fid(GaussianFit::fit(set.features), real_fit)},
        {"mm_dist", mm_distance(text, set.features)},
        {"r_precision_top3", r_precision(text, set.features, config.count("eval.rprecision_pool"),
                                         config.count("eval.rprecision_top_k"), derive_seed(seed, "eval.rprecision"))},
        {"diversity", diversity(set.features, config.count("eval.diversity_pairs"), derive_seed(seed, "eval.diversity"))},
        {"foot_skate_ratio", foot_skate_ratio(ptrs)},
        {"samples", set.motions.size()}};
}

Tensor reference_styles(const Generator& gen, const Dataset& data, const EvalPlan& plan) {
    std::vector<const MotionSequence*> refs;
    for (std::size_t i : plan.ref_index) refs.push_back(&data.test[i].motion);
    return embed_motions(gen.stylizer, refs);
}

}  // namespace

Json evaluate(const RunConfig& config, const Workspace& ws, const Progress& progress) {
    Workspace::require(ws.manifest(), "data");
    const Generator gen = Generator::load(config, ws);
    const AlignmentModel align = AlignmentModel::load(ws);
    const Judges judges = Judges::load(ws);
    StageLog log(ws, "evaluate", progress);
    const Dataset data = load_dataset(ws.manifest());
    const EvalPlan plan = make_plan(config, data);
    const SamplerConfig sampler = sampler_config(config);

    // Real held-out motions: judge calibration and the FID reference.
    const Tensor real_tensor = judges.extractor.feature_tensor(motion_pointers(data.test));
    const FeatureMatrix real_features = FeatureMatrix::from_tensor(real_tensor);
    const GaussianFit real_fit = GaussianFit::fit(real_features);
    std::vector<std::string> real_contents;
    for (const auto& r : data.test) real_contents.push_back(r.content);
    const FeatureMatrix real_text = judges.text_features(real_contents, align.embedder);
    const std::uint64_t seed = config.seed("seed");
    Json real_scores{{"style_accuracy", accuracy_percent(judges.style.predict(real_tensor), label_ids(data.test, true))},
              {"content_accuracy", accuracy_percent(judges.content.predict(real_tensor), label_ids(data.test, false))},
              {"mm_dist", mm_distance(real_text, real_features)},
              {"r_precision_top3",
               r_precision(real_text, real_features, config.count("eval.rprecision_pool"),
                           config.count("eval.rprecision_top_k"), derive_seed(seed, "eval.rprecision"))},
              {"diversity", diversity(real_features, config.count("eval.diversity_pairs"),
                                      derive_seed(seed, "eval.diversity"))},
              {"foot_skate_ratio", foot_skate_ratio(motion_pointers(data.test))},
              {"samples", data.test.size()}};
    log.line("real: " + real_scores.dump());

    const GeneratedSet motion_guided = generate_set(gen, judges, plan, reference_styles(gen, data, plan), sampler);
    Json motion_scores = score_set(config, judges, align.embedder, plan, motion_guided, real_fit);
    log.line("motion-guided: " + motion_scores.dump());

    const Retriever retriever = align.retriever();
    std::vector<std::vector<real>> per_style;
    for (const auto& s : style_labels()) per_style.push_back(retriever.retrieve(Modality::text, s, 1).front().embedding);
    std::vector<std::vector<real>> text_rows;
    for (std::size_t s : plan.styles) text_rows.push_back(per_style[s]);
    const GeneratedSet text_guided = generate_set(gen, judges, plan, rows_tensor(text_rows), sampler);
    Json text_scores = score_set(config, judges, align.embedder, plan, text_guided, real_fit);
    log.line("text-guided: " + text_scores.dump());

    const GeneratedSet baseline = generate_set(gen, judges, plan, Tensor(), sampler);
    Json baseline_scores = score_set(config, judges, align.embedder, plan, baseline, real_fit);
    log.line("unstylized: " + baseline_scores.dump());

    Json report;
    report["settings"] = Json{{"gamma", static_cast<double>(sampler.fusion.gamma)},
                              {"w_cfg", static_cast<double>(sampler.w_cfg)},
                              {"w_cls", static_cast<double>(sampler.w_cls)},
                              {"sampling_steps", sampler.steps},
                              {"samples_per_pair", config.count("eval.samples_per_pair")}};
    report["real"] = real_scores;
    report["motion_guided"] = motion_scores;
    report["text_guided"] = text_scores;
    report["unstylized"] = baseline_scores;
    report["parameters"] = to_json(param_report(ws));
    write_json(ws.report_dir() / "metrics.json", report);
    save_stage_config(config, ws.report_dir(), "evaluate");
    log.flush();
    return report;
}

std::vector<double> parse_grid(std::string_view text) {
    std::vector<double> out;
    std::string item;
    std::istringstream in{std::string(text)};
    while (std::getline(in, item, ',')) {
        const auto first = item.find_first_not_of(" \t");
        if (first == std::string::npos) throw UsageError("empty entry in gamma grid");
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            throw UsageError("malformed gamma grid entry '" + item + "'");
        }
        if (item.find_first_not_of(" \t", used) != std::string::npos || !std::isfinite(v) || v < 0)
            throw UsageError("malformed gamma grid entry '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw UsageError("gamma grid is empty");
    return out;
}

Json ablate_gamma(const RunConfig& config, const Workspace& ws, const std::vector<double>& grid,
                  const Progress& progress) {
    if (grid.empty()) throw UsageError("gamma grid is empty");
    Workspace::require(ws.manifest(), "data");
    const Generator gen = Generator::load(config, ws);
    const Judges judges = Judges::load(ws);
    StageLog log(ws, "ablate-gamma", progress);
    const Dataset data = load_dataset(ws.manifest());
    const EvalPlan plan = make_plan(config, data);
    const GaussianFit real_fit = GaussianFit::fit(judges.extractor.features(motion_pointers(data.test)));
    const Tensor refs = reference_styles(gen, data, plan);

    const GeneratedSet baseline = generate_set(gen, judges, plan, Tensor(), sampler_config(config));
    const GaussianFit baseline_fit = GaussianFit::fit(baseline.features);

    Json rows = Json::array();
    std::string csv = "gamma,sra,fid,fid_vs_baseline,content_accuracy\n";
    for (double gamma : grid) {
        const GeneratedSet set = generate_set(gen, judges, plan, refs, sampler_config(config, gamma));
        const double sra = accuracy_percent(judges.style.predict(set.feature_tensor), plan.styles);
        const double content = accuracy_percent(judges.content.predict(set.feature_tensor), plan.contents);
        const GaussianFit fit = GaussianFit::fit(set.features);
        const double real_fid = fid(fit, real_fit);
        const double base_fid = fid(fit, baseline_fit);
        rows.push_back(Json{{"gamma", gamma}, {"sra", sra}, {"fid", real_fid}, {"fid_vs_baseline", base_fid},
                            {"content_accuracy", content}});
        csv += format_number(gamma) + "," + format_number(sra) + "," + format_number(real_fid) + "," +
               format_number(base_fid) + "," + format_number(content) + "\n";
        log.line("gamma " + format_number(gamma) + " sra " + format_number(sra) + " fid " + format_number(real_fid));
    }
    fs::create_directories(ws.report_dir());
    std::ofstream(ws.report_dir() / "gamma_sweep.csv", std::ios::binary) << csv;
    save_stage_config(config, ws.report_dir(), "ablate-gamma");
    log.flush();
    return rows;
}

// ---- parameter accounting ------------------------------------------------------------

ParamReport param_report(const Workspace& ws) {
    const TensorTable vae = load_checkpoint(ws, "vae");
    const TensorTable stylizer = load_checkpoint(ws, "stylizer");
    const TensorTable diffusion = load_checkpoint(ws, "diffusion");
    const TensorTable align = load_checkpoint(ws, "align");

    auto prefixed = [](const TensorTable& table, std::string_view prefix) {
        std::size_t n = 0;
        for (const auto& e : table.entries())
            if (e.name.starts_with(prefix)) n += e.values.size();
        return n;
    };
    const std::size_t style_params = StyleEncoder::from_table(stylizer).parameter_count();
    const std::size_t projection = prefixed(align, "projection.");

    ParamReport report;
    report.entries.push_back({"vae", vae.total_elements(), 0});
    report.entries.push_back({"denoiser", prefixed(diffusion, "denoiser."), 0});
    report.entries.push_back({"latent_stats", prefixed(diffusion, "latent."), 0});
    report.entries.push_back({"latent_classifier", prefixed(diffusion, "classifier."), 0});
    report.entries.push_back({"style_encoder", stylizer.total_elements(), style_params});
    report.entries.push_back({"cross_fusion", kFusionParameterCount, 0});
    report.entries.push_back({"modality_embedder", 0, 0});
    report.entries.push_back({"projection", projection, projection});
    return report;
}

Json to_json(const ParamReport& report) {
    Json modules = Json::array();
    for (const auto& e : report.entries)
        modules.push_back(Json{{"module", e.module}, {"total", e.total}, {"learnable", e.learnable}});
    return Json{{"modules", modules}, {"total", report.total()}, {"learnable", report.learnable()}};
}

SMLD_NAMESPACE_END
