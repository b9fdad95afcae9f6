// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#include "smld/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "smld/errors.hpp"

SMLD_NAMESPACE_BEGIN

namespace {

constexpr double kEigenFloor = -1e-8;
constexpr std::size_t kExtractBatch = 64;

double distance(std::span<const double> a, std::span<const double> b) {
    double sum = 0;
    for (std::size_t c = 0; c < a.size(); ++c) sum += (a[c] - b[c]) * (a[c] - b[c]);
    return std::sqrt(sum);
}

Eigen::MatrixXd as_matrix(const std::vector<double>& values, std::size_t dim) {
    return Eigen::Map<const Eigen::MatrixXd>(values.data(), static_cast<Eigen::Index>(dim),
                                             static_cast<Eigen::Index>(dim));
}

/// Square root of a symmetric PSD matrix via its eigendecomposition.
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
    Eigen::VectorXd values = solver.eigenvalues();
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        if (values[i] < kEigenFloor * std::max(1.0, values.cwiseAbs().maxCoeff()))
            throw ContractError("covariance has a significantly negative eigenvalue");
        values[i] = std::sqrt(std::max(values[i], 0.0));
    }
    return solver.eigenvectors() * values.asDiagonal() * solver.eigenvectors().transpose();
}

}  // namespace

FeatureMatrix FeatureMatrix::from_tensor(const Tensor& t) {
    if (t.rank() != 2) throw DimensionError("feature matrix needs a rank-2 tensor");
    FeatureMatrix m;
    m.rows = t.rows();
    m.cols = t.cols();
    m.values.assign(t.data().begin(), t.data().end());
    return m;
}

// ---- feature extractor ----------------------------------------------------------

FeatureExtractor::FeatureExtractor(StyleEncoder encoder) : encoder_(std::move(encoder)) {
    encoder_.params().set_trainable(false);
}

Tensor FeatureExtractor::feature_tensor(std::span<const MotionSequence* const> motions) const {
    if (motions.empty()) throw ContractError("feature extraction needs at least one motion");
    NoGradGuard guard;
    std::vector<Tensor> parts;
    for (std::size_t start = 0; start < motions.size(); start += kExtractBatch) {
        const std::size_t count = std::min(kExtractBatch, motions.size() - start);
        parts.push_back(encoder_.embed(motions.subspan(start, count)));
    }
    return parts.size() == 1 ? parts.front() : concat_rows(parts);
}

FeatureMatrix FeatureExtractor::features(std::span<const MotionSequence* const> motions) const {
    return FeatureMatrix::from_tensor(feature_tensor(motions));
}

// ---- classifiers ------------------------------------------------------------------

FeatureClassifier::FeatureClassifier(std::size_t feature_dim, std::size_t classes, Rng& rng, std::size_t hidden)
    : classes_(classes) {
    if (classes < 2) throw ConfigError("a classifier needs at least two classes");
    hidden_ = Linear::create(store_, "hidden", feature_dim, hidden, rng);
    out_ = Linear::create(store_, "out", hidden, classes, rng);
}

Tensor FeatureClassifier::logits(const Tensor& features) const { return out_(gelu(hidden_(features))); }

std::vector<std::size_t> FeatureClassifier::predict(const Tensor& features) const {
    NoGradGuard guard;
    const Tensor scores = logits(features);
    std::vector<std::size_t> out(scores.rows());
    for (std::size_t r = 0; r < scores.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes_; ++c)
            if (scores.at(r, c) > scores.at(r, best)) best = c;
        out[r] = best;
    }
    return out;
}

TrainCurve train_classifier(FeatureClassifier& classifier, const Tensor& features,
                            std::span<const std::size_t> labels, const ClassifierTrainConfig& config) {
    if (labels.empty() || features.rows() != labels.size())
        throw DimensionError("train_classifier: one label per feature row required");
    for (std::size_t y : labels)
        if (y >= classifier.classes()) throw ContractError("classifier label out of range");
    classifier.params().set_trainable(true);
    AdamW optimizer(classifier.params().tensors(), AdamWConfig{.lr = config.lr, .weight_decay = real(1e-4)});
    Rng rng(config.seed);
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);

    TrainCurve curve;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<std::size_t> pick(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<int> y;
            for (std::size_t s : pick) y.push_back(static_cast<int>(labels[s]));
            const Tensor loss = cross_entropy(classifier.logits(gather_rows(features, pick)), y);
            if (!std::isfinite(loss.item())) {
                classifier.params().set_trainable(false);
                throw TrainingError("classifier loss became non-finite",
                                    curve.epoch_loss.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                             : curve.epoch_loss.back());
            }
            optimizer.zero_grad();
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

double accuracy_percent(std::span<const std::size_t> predicted, std::span<const std::size_t> targets) {
    if (predicted.empty()) throw ContractError("accuracy of an empty set");
    if (predicted.size() != targets.size()) throw ContractError("accuracy needs one target per prediction");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == targets[i] ? 1 : 0;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(predicted.size());
}

// ---- distribution metrics ----------------------------------------------------------

GaussianFit GaussianFit::fit(const FeatureMatrix& features) {
    if (features.rows < 2) throw ContractError("a Gaussian fit needs at least two rows");
    const std::size_t dim = features.cols;
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
        features.values.data(), static_cast<Eigen::Index>(features.rows), static_cast<Eigen::Index>(dim));
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - mu;
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(features.rows - 1);
    cov = 0.5 * (cov + cov.transpose());

    GaussianFit g;
    g.mean.assign(mu.data(), mu.data() + dim);
    g.covariance.assign(cov.data(), cov.data() + dim * dim);
    return g;
}

double fid(const GaussianFit& a, const GaussianFit& b) {
    if (a.dim() != b.dim()) throw ContractError("fid needs fits of the same dimension");
    if (a.covariance.size() != a.dim() * a.dim() || b.covariance.size() != b.dim() * b.dim())
        throw ContractError("fid: malformed covariance");
    const std::size_t dim = a.dim();
    double mean_term = 0;
    for (std::size_t i = 0; i < dim; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);

    const Eigen::MatrixXd cov_a = as_matrix(a.covariance, dim);
    const Eigen::MatrixXd cov_b = as_matrix(b.covariance, dim);
    const Eigen::MatrixXd root_a = sqrt_psd(cov_a);
    const Eigen::MatrixXd cross = sqrt_psd(root_a * cov_b * root_a);
    const double value = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    return std::max(value, 0.0);
}

double mm_distance(const FeatureMatrix& text, const FeatureMatrix& motion) {
    if (text.rows != motion.rows || text.cols != motion.cols)
        throw ContractError("mm_distance needs matched text and motion rows");
    if (text.rows == 0) throw ContractError("mm_distance of an empty set");
    double total = 0;
    for (std::size_t i = 0; i < text.rows; ++i) total += distance(text.row(i), motion.row(i));
    return total / static_cast<double>(text.rows);
}

double r_precision(const FeatureMatrix& text, const FeatureMatrix& motion, std::size_t pool, std::size_t top_k,
                   std::uint64_t seed) {
    if (pool < 4) throw ContractError("r_precision pool must hold at least 4 candidates");
    if (top_k == 0 || top_k >= pool) throw ContractError("r_precision top_k must be in [1, pool)");
    if (text.rows != motion.rows || text.cols != motion.cols)
        throw ContractError("r_precision needs matched text and motion rows");
    if (text.rows < pool) throw ContractError("r_precision needs at least `pool` rows");

    Rng rng(seed);
    std::vector<std::size_t> others(text.rows - 1);
    std::size_t matched = 0;
    for (std::size_t i = 0; i < motion.rows; ++i) {
        std::iota(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(i), 0);
        std::iota(others.begin() + static_cast<std::ptrdiff_t>(i), others.end(), i + 1);
        // Partial Fisher-Yates: the first pool − 1 entries are the distractors.
        for (std::size_t k = 0; k + 1 < pool; ++k) std::swap(others[k], others[k + rng.index(others.size() - k)]);

        const double truth = distance(motion.row(i), text.row(i));
        std::size_t closer = 0;
        for (std::size_t k = 0; k + 1 < pool; ++k)
            if (distance(motion.row(i), text.row(others[k])) < truth) ++closer;
        if (closer < top_k) ++matched;
    }
    return static_cast<double>(matched) / static_cast<double>(motion.rows);
}

double diversity(const FeatureMatrix& features, std::size_t pairs, std::uint64_t seed) {
    if (features.rows < 2) throw ContractError("diversity needs at least two rows");
    pairs = std::min(pairs, features.rows / 2);
    if (pairs == 0) throw ContractError("diversity needs at least one pair");
    Rng rng(seed);
    std::vector<std::size_t> order(features.rows);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    double total = 0;
    for (std::size_t k = 0; k < pairs; ++k) total += distance(features.row(order[2 * k]), features.row(order[2 * k + 1]));
    return total / static_cast<double>(pairs);
}

double foot_skate_ratio(std::span<const MotionSequence* const> motions, double h_eps, double v_eps) {
    if (motions.empty()) throw ContractError("foot_skate_ratio of an empty set");
    double total = 0;
    for (const auto* m : motions) total += foot_skate_frames(*m, h_eps, v_eps);
    return total / static_cast<double>(motions.size());
}

std::size_t ParamReport::total() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.total;
    return n;
}

std::size_t ParamReport::learnable() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.learnable;
    return n;
}

const ParamEntry& ParamReport::at(const std::string& module) const {
    for (const auto& e : entries)
        if (e.module == module) return e;
    throw ContractError("no parameter entry for module '" + module + "'");
}

SMLD_NAMESPACE_END
