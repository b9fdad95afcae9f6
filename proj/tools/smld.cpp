// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end for the staged pipeline.
//
// Exit codes: 0 success, 1 other failure, 2 usage or configuration error,
// 3 missing dependency, 4 numerical failure during training.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "smld/errors.hpp"
#include "smld/pipeline.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitDependency = 3;
constexpr int kExitNumerical = 4;

std::vector<std::pair<double, std::string>> parse_weighted_styles(const std::vector<std::string>& items) {
    std::vector<std::pair<double, std::string>> out;
    for (const auto& item : items) {
        const auto colon = item.find(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 == item.size())
            throw smld::UsageError("style '" + item + "' must look like weight:style");
        std::size_t used = 0;
        double weight = 0;
        const std::string number = item.substr(0, colon);
        try {
            weight = std::stod(number, &used);
        } catch (const std::exception&) {
            throw smld::UsageError("bad weight in '" + item + "'");
        }
        if (used != number.size()) throw smld::UsageError("bad weight in '" + item + "'");
        out.emplace_back(weight, item.substr(colon + 1));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stylized motion latent diffusion: data, training, sampling and evaluation"};
    app.require_subcommand(1);

    std::string workdir = ".";
    std::string config_file;
    std::vector<std::string> overrides;
    bool quiet = false;
    app.add_option("-w,--workdir", workdir, "Workspace directory")->capture_default_str();
    app.add_option("-c,--config", config_file, "Config file (key = value lines)");
    app.add_option("-s,--set", overrides, "Override a config entry, key=value")->take_all();
    app.add_flag("-q,--quiet", quiet, "Suppress progress output");

    auto* gen_data = app.add_subcommand("gen-data", "Generate the synthetic main and judge corpora");
    auto* train_vae = app.add_subcommand("train-vae", "Train the motion VAE on the content corpus");
    auto* train_style = app.add_subcommand("train-style-encoder", "Fine-tune the style encoder on the style corpus");
    auto* train_align = app.add_subcommand("train-align", "Align modality embeddings with style features");
    auto* train_cls = app.add_subcommand("train-classifier", "Train the evaluation judges");
    auto* train_diff = app.add_subcommand("train-diffusion", "Train the content model, then the stylized encoder");

    smld::StylizeRequest stylize;
    std::optional<double> stylize_gamma;
    std::optional<std::uint64_t> stylize_seed;
    auto* stylize_cmd = app.add_subcommand("stylize", "Generate one stylized motion");
    stylize_cmd->add_option("--content", stylize.content, "Content text or label")->required();
    stylize_cmd->add_option("--style-modality", stylize.modality, "motion | text | stub-image | stub-audio")
        ->required();
    stylize_cmd->add_option("--style-input", stylize.input, "Motion file path or style word")->required();
    stylize_cmd->add_option("--gamma", stylize_gamma, "Fusion scaling ratio");
    stylize_cmd->add_option("--seed", stylize_seed, "Sampling seed");
    stylize_cmd->add_option("-o,--output", stylize.output, "Output motion file")->required();

    smld::InterpolateRequest interp;
    std::vector<std::string> styles;
    std::optional<double> interp_gamma;
    std::optional<std::uint64_t> interp_seed;
    auto* interp_cmd = app.add_subcommand("interpolate", "Generate a motion from a weighted blend of styles");
    interp_cmd->add_option("--content", interp.content, "Content text or label")->required();
    interp_cmd->add_option("--styles", styles, "Weighted styles, weight:style")->required();
    interp_cmd->add_option("--style-modality", interp.modality, "text | stub-image | stub-audio")
        ->capture_default_str();
    interp_cmd->add_option("--gamma", interp_gamma, "Fusion scaling ratio");
    interp_cmd->add_option("--seed", interp_seed, "Sampling seed");
    interp_cmd->add_option("-o,--output", interp.output, "Output motion file")->required();

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Compute the metrics report");
    std::string grid_text;
    auto* ablate_cmd = app.add_subcommand("ablate-gamma", "Sweep the fusion scaling ratio");
    ablate_cmd->add_option("--grid", grid_text, "Comma-separated gamma values (default from config)");
    auto* params_cmd = app.add_subcommand("param-report", "Print the parameter accounting");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        smld::RunConfig config;
        if (!config_file.empty()) config.merge_file(config_file);
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw smld::UsageError("--set expects key=value, got '" + kv + "'");
            config.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        const smld::Workspace ws(workdir);
        const smld::Progress progress = [quiet](const std::string& line) {
            if (!quiet) std::cerr << line << '\n';
        };

        smld::Json result;
        if (*gen_data) {
            result = smld::gen_data(config, ws, progress);
        } else if (*train_vae) {
            result = smld::train_vae_stage(config, ws, progress);
        } else if (*train_style) {
            result = smld::train_style_encoder_stage(config, ws, progress);
        } else if (*train_diff) {
            result = smld::train_diffusion_stage(config, ws, progress);
        } else if (*train_align) {
            result = smld::train_align_stage(config, ws, progress);
        } else if (*train_cls) {
            result = smld::train_classifier_stage(config, ws, progress);
        } else if (*stylize_cmd) {
            stylize.gamma = stylize_gamma;
            stylize.seed = stylize_seed;
            result = smld::stylize(config, ws, stylize);
        } else if (*interp_cmd) {
            interp.styles = parse_weighted_styles(styles);
            interp.gamma = interp_gamma;
            interp.seed = interp_seed;
            result = smld::interpolate(config, ws, interp);
        } else if (*evaluate_cmd) {
            result = smld::evaluate(config, ws, progress);
        } else if (*ablate_cmd) {
            const auto grid = smld::parse_grid(ablate_cmd->count("--grid") ? grid_text : config.text("eval.gamma_grid"));
            result = smld::ablate_gamma(config, ws, grid, progress);
        } else if (*params_cmd) {
            result = smld::to_json(smld::param_report(ws));
        }
        std::cout << result.dump(2) << '\n';
        return 0;
    } catch (const smld::DependencyError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitDependency;
    } catch (const smld::TrainingError& e) {
        std::cerr << "error: " << e.what() << " (last finite loss " << e.last_good_loss() << ")\n";
        return kExitNumerical;
    } catch (const smld::UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const smld::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const smld::VocabularyError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return EXIT_FAILURE;
    }
}
