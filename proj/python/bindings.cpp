// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0
//
// Python extension module. Reports cross the boundary as JSON text; the
// package's __init__ turns them into dicts.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "smld/errors.hpp"
#include "smld/fusion.hpp"
#include "smld/pipeline.hpp"

namespace py = pybind11;
using namespace smld;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    if (a.ndim() != 2) throw DimensionError("expected a 2-d array");
    const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
    std::vector<real> values(a.data(), a.data() + rows * cols);
    return Tensor::from({rows, cols}, std::move(values));
}

Array to_array(const Tensor& t) {
    Array out({t.rows(), t.cols()});
    const auto v = t.to_vector();
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

FeatureMatrix to_features(const Array& a) {
    if (a.ndim() != 2) throw DimensionError("expected a 2-d array");
    FeatureMatrix m{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)), {}};
    m.values.assign(a.data(), a.data() + m.rows * m.cols);
    return m;
}

Array motion_array(const MotionSequence& m) {
    Array out({m.frames, kFeatureDim});
    std::copy(m.data.begin(), m.data.end(), out.mutable_data());
    return out;
}

MotionSequence motion_from(const Array& a, const std::string& content, const std::string& style) {
    if (a.ndim() != 2 || static_cast<std::size_t>(a.shape(1)) != kFeatureDim)
        throw DimensionError("motion arrays are frames × " + std::to_string(kFeatureDim));
    MotionSequence m;
    m.frames = static_cast<std::size_t>(a.shape(0));
    m.content = content;
    m.style = style;
    m.data.assign(a.data(), a.data() + m.frames * kFeatureDim);
    return m;
}

template <typename F>
std::string stage(F&& run, const RunConfig& config, const std::filesystem::path& root) {
    py::gil_scoped_release release;
    return run(config, Workspace(root), Progress{}).dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Stylized motion generation with parameter-free style fusion.";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
    py::register_exception<VocabularyError>(m, "VocabularyError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<DependencyError>(m, "DependencyError", PyExc_RuntimeError);
    py::register_exception<LoadError>(m, "LoadError", PyExc_OSError);
    py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
    py::register_exception<StateError>(m, "StateError", PyExc_RuntimeError);

    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_static("load", &RunConfig::load, py::arg("path"))
        .def("merge_text", [](RunConfig& c, const std::string& text) { c.merge_text(text); }, py::arg("text"))
        .def("set", &RunConfig::set, py::arg("key"), py::arg("value"))
        .def("get", &RunConfig::text, py::arg("key"))
        .def("number", &RunConfig::number, py::arg("key"))
        .def("keys", &RunConfig::keys)
        .def("render", &RunConfig::render)
        .def("save", &RunConfig::save, py::arg("path"))
        .def("__contains__", &RunConfig::contains);

    m.def("content_labels", &content_labels);
    m.def("style_labels", &style_labels);
    m.def("feature_dim", [] { return kFeatureDim; });

    // ---- stages --------------------------------------------------------------
    m.def("_gen_data", [](const RunConfig& c, const std::filesystem::path& r) { return stage(gen_data, c, r); });
    m.def("_train_vae", [](const RunConfig& c, const std::filesystem::path& r) { return stage(train_vae_stage, c, r); });
    m.def("_train_style_encoder",
          [](const RunConfig& c, const std::filesystem::path& r) { return stage(train_style_encoder_stage, c, r); });
    m.def("_train_diffusion",
          [](const RunConfig& c, const std::filesystem::path& r) { return stage(train_diffusion_stage, c, r); });
    m.def("_train_align", [](const RunConfig& c, const std::filesystem::path& r) { return stage(train_align_stage, c, r); });
    m.def("_train_classifier",
          [](const RunConfig& c, const std::filesystem::path& r) { return stage(train_classifier_stage, c, r); });
    m.def("_evaluate", [](const RunConfig& c, const std::filesystem::path& r) { return stage(evaluate, c, r); });
    m.def("_ablate_gamma", [](const RunConfig& c, const std::filesystem::path& r, const std::vector<double>& grid) {
        py::gil_scoped_release release;
        return ablate_gamma(c, Workspace(r), grid).dump();
    });
    m.def("_param_report", [](const std::filesystem::path& r) { return to_json(param_report(Workspace(r))).dump(); });

    m.def(
        "_stylize",
        [](const RunConfig& c, const std::filesystem::path& r, const std::string& content, const std::string& modality,
           const std::string& input, const std::filesystem::path& output, std::optional<double> gamma,
           std::optional<std::uint64_t> seed) {
            py::gil_scoped_release release;
            return stylize(c, Workspace(r), StylizeRequest{content, modality, input, gamma, seed, output}).dump();
        },
        py::arg("config"), py::arg("root"), py::arg("content"), py::arg("modality"), py::arg("input"),
        py::arg("output"), py::arg("gamma") = py::none(), py::arg("seed") = py::none());
    m.def(
        "_interpolate",
        [](const RunConfig& c, const std::filesystem::path& r, const std::string& content,
           const std::vector<std::pair<double, std::string>>& styles, const std::string& modality,
           const std::filesystem::path& output, std::optional<double> gamma, std::optional<std::uint64_t> seed) {
            py::gil_scoped_release release;
            return interpolate(c, Workspace(r), InterpolateRequest{content, styles, modality, gamma, seed, output})
                .dump();
        },
        py::arg("config"), py::arg("root"), py::arg("content"), py::arg("styles"), py::arg("modality"),
        py::arg("output"), py::arg("gamma") = py::none(), py::arg("seed") = py::none());

    // ---- fusion and alignment ------------------------------------------------
    m.def(
        "fuse",
        [](const Array& content, const Array& style, double gamma, double eta) {
            FusionConfig config;
            config.gamma = static_cast<real>(gamma);
            config.eta = static_cast<real>(eta);
            config.validate();
            return to_array(fuse(to_tensor(content), to_tensor(style), config));
        },
        py::arg("content"), py::arg("style"), py::arg("gamma") = 0.6, py::arg("eta") = 1e-5,
        "content + gamma · (style − μ) / sqrt(σ² + eta), with μ, σ² per row of content.");
    m.def(
        "align_loss",
        [](const Array& text, const Array& style, double tau) {
            return static_cast<double>(align_loss(to_tensor(text), to_tensor(style), static_cast<real>(tau)).item());
        },
        py::arg("text"), py::arg("style"), py::arg("tau") = 0.07);

    // ---- motions and metrics -------------------------------------------------
    m.def(
        "generate_motion",
        [](const std::string& content, const std::string& style, std::uint64_t seed, std::size_t frames) {
            return motion_array(generate_motion(content, style, seed, frames));
        },
        py::arg("content"), py::arg("style"), py::arg("seed") = 0, py::arg("frames") = 64);
    m.def(
        "read_motion",
        [](const std::filesystem::path& path) {
            const MotionSequence motion = read_motion(path);
            return py::make_tuple(motion_array(motion), motion.content, motion.style);
        },
        py::arg("path"));
    m.def(
        "write_motion",
        [](const std::filesystem::path& path, const Array& frames, const std::string& content,
           const std::string& style) { write_motion(path, motion_from(frames, content, style)); },
        py::arg("path"), py::arg("frames"), py::arg("content") = "", py::arg("style") = "");
    m.def(
        "foot_skate_ratio",
        [](const std::vector<Array>& motions, double h_eps, double v_eps) {
            std::vector<MotionSequence> owned;
            for (const auto& a : motions) owned.push_back(motion_from(a, "", ""));
            std::vector<const MotionSequence*> ptrs;
            for (const auto& motion : owned) ptrs.push_back(&motion);
            return foot_skate_ratio(ptrs, h_eps, v_eps);
        },
        py::arg("motions"), py::arg("h_eps") = 0.05, py::arg("v_eps") = 0.01);
    m.def(
        "fid",
        [](const Array& a, const Array& b) {
            return fid(GaussianFit::fit(to_features(a)), GaussianFit::fit(to_features(b)));
        },
        py::arg("a"), py::arg("b"), "Fréchet distance between Gaussian fits of two feature sets.");
    m.def(
        "fid_gaussian",
        [](std::vector<double> mean_a, std::vector<double> cov_a, std::vector<double> mean_b,
           std::vector<double> cov_b) {
            return fid(GaussianFit{std::move(mean_a), std::move(cov_a)}, GaussianFit{std::move(mean_b), std::move(cov_b)});
        },
        py::arg("mean_a"), py::arg("cov_a"), py::arg("mean_b"), py::arg("cov_b"));
    m.def(
        "diversity",
        [](const Array& features, std::size_t pairs, std::uint64_t seed) {
            return diversity(to_features(features), pairs, seed);
        },
        py::arg("features"), py::arg("pairs") = 300, py::arg("seed") = 1);
    m.def(
        "r_precision",
        [](const Array& text, const Array& motion, std::size_t pool, std::size_t top_k, std::uint64_t seed) {
            return r_precision(to_features(text), to_features(motion), pool, top_k, seed);
        },
        py::arg("text"), py::arg("motion"), py::arg("pool") = 32, py::arg("top_k") = 3, py::arg("seed") = 1);
    m.def(
        "mm_distance", [](const Array& text, const Array& motion) { return mm_distance(to_features(text), to_features(motion)); },
        py::arg("text"), py::arg("motion"));
}
