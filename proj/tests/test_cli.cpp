// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0
//
// Runs the command-line tool end to end on a tiny configuration.

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "smld/checkpoint.hpp"
#include "support.hpp"

#ifndef SMLD_CLI_PATH
#error "SMLD_CLI_PATH must name the smld executable"
#endif

namespace fs = std::filesystem;

namespace {

constexpr const char* kTinyConfig = R"(# Small enough for a unit test.
[data]
samples_per_cell = 4
frames = 40
judge_samples_per_cell = 4
[vae]
latent_dim = 8
hidden = 16
patch = 8
stage1_epochs = 2
stage2_epochs = 1
warmup_epochs = 1
[diffusion]
steps = 20
width = 16
blocks = 2
epochs = 2
style_epochs = 1
style_min_step = 5
classifier_epochs = 1
[sample]
steps = 5
[align]
epochs = 2
[judge]
epochs = 2
text_epochs = 2
[eval]
samples_per_pair = 1
diversity_pairs = 8
rprecision_pool = 8
)";

struct Result {
    int code;
    std::string out;
};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Result run(const std::string& args) {
    const auto out = fs::temp_directory_path() / "smld_test_cli_stdout.txt";
    const std::string cmd = std::string(SMLD_CLI_PATH) + " -q " + args + " > " + out.string() + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(out)};
}

/// A fully trained tiny workspace, built once per process.
const fs::path& trained_workspace() {
    static const fs::path root = [] {
        const fs::path dir = smld::testing::scratch_dir("cli_ws");
        std::ofstream(dir / "tiny.cfg") << kTinyConfig;
        const std::string base = "-w " + dir.string() + " -c " + (dir / "tiny.cfg").string() + " ";
        for (const char* stage : {"gen-data", "train-vae", "train-style-encoder", "train-diffusion", "train-align",
                                  "train-classifier"}) {
            const Result r = run(base + stage);
            REQUIRE_MESSAGE(r.code == 0, stage);
        }
        return dir;
    }();
    return root;
}

std::string base_args() {
    const auto& dir = trained_workspace();
    return "-w " + dir.string() + " -c " + (dir / "tiny.cfg").string() + " ";
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    CHECK(run("").code == 2);
    CHECK(run("no-such-command").code == 2);
    CHECK(run("-w /tmp gen-data --bogus-flag").code == 2);
    CHECK(run("-s fusion.gama=1 gen-data").code == 2);
    CHECK(run("-s seed=abc gen-data").code == 2);
    CHECK(run("-s seed gen-data").code == 2);
    CHECK(run("-c /nonexistent.cfg gen-data").code == 2);
}

TEST_CASE("missing upstream artifacts exit with code 3") {
    const auto empty = smld::testing::scratch_dir("cli_empty");
    const std::string w = "-w " + empty.string() + " ";
    CHECK(run(w + "train-vae").code == 3);
    CHECK(run(w + "train-diffusion").code == 3);
    CHECK(run(w + "train-align").code == 3);
    CHECK(run(w + "evaluate").code == 3);
    CHECK(run(w + "stylize --content walk --style-modality text --style-input old -o x.smot").code == 3);
}

TEST_CASE("stages write checkpoints, resolved configs and logs") {
    const auto& dir = trained_workspace();
    for (const char* name : {"vae", "style_encoder", "diffusion", "stylizer", "align", "index", "judge"})
        CHECK_MESSAGE(fs::exists(dir / "checkpoints" / (std::string(name) + ".ckpt")), name);
    for (const char* stage : {"train-vae", "train-style-encoder", "train-diffusion", "train-align", "train-classifier"}) {
        CHECK_MESSAGE(fs::exists(dir / "logs" / (std::string(stage) + ".log")), stage);
        CHECK_MESSAGE(fs::exists(dir / "checkpoints" / (std::string(stage) + ".cfg")), stage);
    }
    // The resolved config records the overrides.
    CHECK(read_file(dir / "checkpoints" / "train-vae.cfg").find("vae.hidden = 16") != std::string::npos);
}

TEST_CASE("stylize from every modality writes motion, provenance and config") {
    const auto out = trained_workspace() / "out";
    for (const char* modality : {"text", "stub-image", "stub-audio"}) {
        const fs::path file = out / (std::string(modality) + ".smot");
        const Result r = run(base_args() + "stylize --content 'a person is running' --style-modality " + modality +
                             " --style-input proud -o " + file.string());
        REQUIRE(r.code == 0);
        CHECK(fs::exists(file));
        CHECK(fs::exists(file.string() + ".json"));
        CHECK(fs::exists(file.string() + ".cfg"));
        const auto prov = nlohmann::json::parse(read_file(file.string() + ".json"));
        CHECK(prov.at("content") == "run");
        CHECK(prov.at("style").at("input") == "proud");
    }
    const auto motion_ref = trained_workspace() / "data" / "motions";
    const fs::path any_ref = fs::directory_iterator(motion_ref)->path();
    CHECK(run(base_args() + "stylize --content walk --style-modality motion --style-input " + any_ref.string() +
              " -o " + (out / "motion.smot").string())
              .code == 0);
}

TEST_CASE("stylize and interpolate reject bad requests with code 2") {
    const auto out = (trained_workspace() / "bad.smot").string();
    CHECK(run(base_args() + "stylize --content swim --style-modality text --style-input old -o " + out).code == 2);
    CHECK(run(base_args() + "stylize --content walk --style-modality video --style-input old -o " + out).code == 2);
    CHECK(run(base_args() + "stylize --content walk --style-modality text --style-input sleepy -o " + out).code == 2);
    CHECK(run(base_args() + "interpolate --content walk --styles 1:old -o " + out).code == 2);
    CHECK(run(base_args() + "interpolate --content walk --styles 1:old -1:proud -o " + out).code == 2);
    CHECK(run(base_args() + "interpolate --content walk --styles 0:old 0:proud -o " + out).code == 2);
    CHECK(run(base_args() + "interpolate --content walk --styles x:old 1:proud -o " + out).code == 2);
    CHECK(run(base_args() + "ablate-gamma --grid ''").code == 2);
    CHECK(run(base_args() + "ablate-gamma --grid 0,,1").code == 2);
}

TEST_CASE("interpolation records normalized weights") {
    const auto file = trained_workspace() / "out" / "mix.smot";
    const Result r = run(base_args() + "interpolate --content hop --styles 3:old 1:tiptoe -o " + file.string());
    REQUIRE(r.code == 0);
    const auto prov = nlohmann::json::parse(read_file(file.string() + ".json"));
    CHECK(prov.at("weights")[0].get<double>() == doctest::Approx(0.75));
    CHECK(prov.at("weights")[1].get<double>() == doctest::Approx(0.25));
}

TEST_CASE("sampling commands are byte-reproducible") {
    const auto out = trained_workspace() / "repeat";
    const std::string args = "stylize --content walk --style-modality text --style-input wide --seed 5 -o ";
    REQUIRE(run(base_args() + args + (out / "a.smot").string()).code == 0);
    REQUIRE(run(base_args() + args + (out / "b.smot").string()).code == 0);
    CHECK(read_file(out / "a.smot") == read_file(out / "b.smot"));
    REQUIRE(run(base_args() + "stylize --content walk --style-modality text --style-input wide --seed 6 -o " +
                (out / "c.smot").string())
                .code == 0);
    CHECK(read_file(out / "a.smot") != read_file(out / "c.smot"));
}

TEST_CASE("evaluate, gamma sweep and parameter report") {
    REQUIRE(run(base_args() + "evaluate").code == 0);
    const auto report = nlohmann::json::parse(read_file(trained_workspace() / "reports" / "metrics.json"));
    for (const char* section : {"real", "motion_guided", "text_guided", "unstylized", "parameters"})
        CHECK_MESSAGE(report.contains(section), section);
    CHECK(report.at("motion_guided").at("samples") == 32);

    const Result sweep = run(base_args() + "ablate-gamma --grid 0,0.6");
    REQUIRE(sweep.code == 0);
    const auto csv = read_file(trained_workspace() / "reports" / "gamma_sweep.csv");
    CHECK(csv.rfind("gamma,sra,fid,fid_vs_baseline,content_accuracy\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    const auto rows = nlohmann::json::parse(sweep.out);
    CHECK(rows[0].at("fid_vs_baseline").get<double>() < 1e-9);

    const Result params = run(base_args() + "param-report");
    REQUIRE(params.code == 0);
    const auto p = nlohmann::json::parse(params.out);
    std::size_t listed = 0;
    for (const auto& m : p.at("modules")) {
        listed += m.at("total").get<std::size_t>();
        if (m.at("module") == "cross_fusion") {
            CHECK(m.at("total") == 0);
            CHECK(m.at("learnable") == 0);
        }
    }
    CHECK(listed == p.at("total").get<std::size_t>());
}
