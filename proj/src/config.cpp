// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#include "smld/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "smld/errors.hpp"

SMLD_NAMESPACE_BEGIN

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

bool parse_integer(const std::string& s, long long& out) {
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

bool parse_number(const std::string& s, double& out) {
    if (s.empty()) return false;
    std::size_t used = 0;
    try {
        out = std::stod(s, &used);
    } catch (const std::exception&) {
        return false;
    }
    return used == s.size() && std::isfinite(out);
}

bool parse_flag(const std::string& s, bool& out) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") {
        out = true;
        return true;
    }
    if (s == "false" || s == "0" || s == "no" || s == "off") {
        out = false;
        return true;
    }
    return false;
}

}  // namespace

RunConfig::RunConfig() {
    using K = Kind;
    define("seed", K::integer, "7");

    define("data.samples_per_cell", K::integer, "16");
    define("data.frames", K::integer, "64");
    define("data.test_fraction", K::number, "0.2");
    define("data.judge_samples_per_cell", K::integer, "8");
    define("data.judge_seed", K::integer, "99");

    define("vae.latent_tokens", K::integer, "2");
    define("vae.latent_dim", K::integer, "32");
    define("vae.blocks", K::integer, "2");
    define("vae.hidden", K::integer, "64");
    define("vae.heads", K::integer, "4");
    define("vae.patch", K::integer, "4");
    define("vae.ff_mult", K::integer, "2");
    define("vae.batch_size", K::integer, "16");
    define("vae.lr", K::number, "0.001");
    define("vae.beta", K::number, "0.0001");
    define("vae.warmup_epochs", K::integer, "10");
    define("vae.stage1_epochs", K::integer, "60");
    define("vae.stage2_epochs", K::integer, "20");
    define("vae.strategy", K::text, "two_stage");

    define("diffusion.steps", K::integer, "100");
    define("diffusion.beta_start", K::number, "0.0001");
    define("diffusion.beta_end", K::number, "0.1");
    define("diffusion.width", K::integer, "64");
    define("diffusion.blocks", K::integer, "4");
    define("diffusion.heads", K::integer, "4");
    define("diffusion.ff_mult", K::integer, "2");
    define("diffusion.epochs", K::integer, "150");
    define("diffusion.batch_size", K::integer, "32");
    define("diffusion.lr", K::number, "0.001");
    define("diffusion.cond_dropout", K::number, "0.1");
    define("diffusion.style_epochs", K::integer, "80");
    define("diffusion.style_lr", K::number, "0.003");
    define("diffusion.style_min_step", K::integer, "50");
    define("diffusion.classifier_epochs", K::integer, "100");

    define("fusion.gamma", K::number, "0.6");
    define("fusion.eta", K::number, "0.00001");
    define("fusion.hook_block", K::integer, "2");

    define("sample.steps", K::integer, "50");
    define("sample.w_cfg", K::number, "3");
    define("sample.w_cls", K::number, "0");
    define("sample.guide_style", K::boolean, "true");
    define("sample.seed", K::integer, "1234");

    define("align.tau", K::number, "0.07");
    define("align.epochs", K::integer, "60");
    define("align.lr", K::number, "0.003");
    define("align.weight_decay", K::number, "0.0001");
    define("align.embedder_seed", K::integer, "20240611");

    define("judge.epochs", K::integer, "300");
    define("judge.lr", K::number, "0.003");
    define("judge.text_epochs", K::integer, "60");

    define("eval.samples_per_pair", K::integer, "4");
    define("eval.diversity_pairs", K::integer, "32");
    define("eval.rprecision_pool", K::integer, "32");
    define("eval.rprecision_top_k", K::integer, "3");
    define("eval.gamma_grid", K::text, "0,0.2,0.4,0.6,0.8,1.0,1.2");
}

void RunConfig::define(const std::string& key, Kind kind, std::string value) {
    entries_[key] = Entry{kind, std::move(value)};
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    RunConfig config;
    config.merge_file(path);
    return config;
}

void RunConfig::merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    merge_text(buffer.str(), path.string());
}

void RunConfig::merge_text(std::string_view text, std::string_view origin) {
    std::istringstream in{std::string(text)};
    std::string line, section;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) continue;
        if (body.front() == '[') {
            if (body.back() != ']') throw ConfigError(std::string(origin) + ":" + std::to_string(number) + ": bad section");
            section = trim(body.substr(1, body.size() - 2));
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError(std::string(origin) + ":" + std::to_string(number) + ": expected key = value");
        std::string key = trim(body.substr(0, eq));
        if (!section.empty()) key = section + "." + key;
        set(key, trim(body.substr(eq + 1)));
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
    long long i = 0;
    double d = 0;
    bool b = false;
    bool ok = true;
    switch (it->second.kind) {
        case Kind::integer:
            ok = parse_integer(value, i) && i >= 0;
            break;
        case Kind::number:
            ok = parse_number(value, d);
            break;
        case Kind::boolean:
            ok = parse_flag(value, b);
            break;
        case Kind::text:
            ok = true;
            break;
    }
    if (!ok) throw ConfigError("invalid value '" + value + "' for config key '" + key + "'");
    it->second.value = value;
}

const RunConfig::Entry& RunConfig::entry(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

const std::string& RunConfig::text(const std::string& key) const { return entry(key).value; }

long long RunConfig::integer(const std::string& key) const {
    long long out = 0;
    if (!parse_integer(entry(key).value, out)) throw ConfigError("config key '" + key + "' is not an integer");
    return out;
}

std::size_t RunConfig::count(const std::string& key) const { return static_cast<std::size_t>(integer(key)); }

std::uint64_t RunConfig::seed(const std::string& key) const { return static_cast<std::uint64_t>(integer(key)); }

double RunConfig::number(const std::string& key) const {
    double out = 0;
    if (!parse_number(entry(key).value, out)) throw ConfigError("config key '" + key + "' is not a number");
    return out;
}

bool RunConfig::flag(const std::string& key) const {
    bool out = false;
    if (!parse_flag(entry(key).value, out)) throw ConfigError("config key '" + key + "' is not a boolean");
    return out;
}

std::vector<std::string> RunConfig::keys() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : entries_) out.push_back(k);
    return out;
}

std::string RunConfig::render() const {
    std::string out;
    for (const auto& [k, e] : entries_) out += k + " = " + e.value + "\n";
    return out;
}

void RunConfig::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write config file " + path.string());
    out << render();
}

SMLD_NAMESPACE_END
