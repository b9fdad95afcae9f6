// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#include "smld/motion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

#include "smld/binary_io.hpp"
#include "smld/errors.hpp"
#include "smld/nn.hpp"

SMLD_NAMESPACE_BEGIN

namespace {

const std::vector<std::string> kContents = {"walk", "run", "hop", "circle_walk"};
const std::vector<std::string> kSentences = {"a person is walking", "a person is running",
                                             "a person is hopping forward", "a person walks in a circle"};
const std::vector<std::string> kStyles = {"neutral", "old",    "proud", "crouched",
                                          "fast",    "tiptoe", "wide",  "phone_left"};

// speed, stride, pitch, asymmetry, step height, sway
const std::vector<StyleParams> kStyleParams = {
    {1.00f, 1.00f, 0.00f, 0.0f, 1.0f, 0.00f},   // neutral
    {0.55f, 0.60f, 0.35f, 0.0f, 0.5f, 0.03f},   // old
    {1.00f, 1.15f, -0.20f, 0.0f, 1.2f, 0.00f},  // proud
    {0.75f, 0.80f, 0.60f, 0.0f, 0.7f, 0.00f},   // crouched
    {1.70f, 1.30f, 0.15f, 0.0f, 1.3f, 0.00f},   // fast
    {0.60f, 0.45f, 0.00f, 0.0f, 2.0f, 0.00f},   // tiptoe
    {0.90f, 1.00f, 0.00f, 0.0f, 1.0f, 0.12f},   // wide
    {0.85f, 0.90f, 0.10f, 1.0f, 1.0f, 0.00f},   // phone_left
};

struct ContentGait {
    double speed;   // m/s
    double stride;  // half step length, m
    double duty;    // stance fraction of the cycle
    double lift;    // swing foot apex, m
    double bounce;  // root vertical oscillation, m
    double arm;     // arm swing angle, rad
    bool in_phase;  // both feet together (hop)
    bool turning;   // closes a full circle over the sequence
};

const std::vector<ContentGait> kGaits = {
    {1.3, 0.30, 0.60, 0.10, 0.02, 0.35, false, false},  // walk
    {3.0, 0.55, 0.35, 0.22, 0.06, 0.60, false, false},  // run
    {0.9, 0.22, 0.50, 0.16, 0.14, 0.15, true, false},   // hop
    {1.1, 0.28, 0.60, 0.10, 0.02, 0.30, false, true},   // circle_walk
};

constexpr float kPositionNoise = 0.0005f;
constexpr float kRootNoise = 0.0003f;
constexpr float kContactHeight = 0.05f;

std::size_t lookup(const std::vector<std::string>& vocab, std::string_view label, const char* what) {
    auto it = std::find(vocab.begin(), vocab.end(), label);
    if (it == vocab.end()) throw VocabularyError(std::string("unknown ") + what + " label '" + std::string(label) + "'");
    return static_cast<std::size_t>(it - vocab.begin());
}

// Rotates (x, z) by heading θ: R(θ)(0, 1) = (sin θ, cos θ).
std::array<double, 2> rotate(double x, double z, double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    return {x * c + z * s, -x * s + z * c};
}

struct FootState {
    double z;
    double y;
};

FootState foot_state(double phase, const ContentGait& g, double stride, double lift) {
    const double s = phase - std::floor(phase);
    if (s < g.duty) {
        const double u = s / g.duty;
        return {stride - 2.0 * stride * u, 0.0};
    }
    const double u = (s - g.duty) / (1.0 - g.duty);
    return {-stride + stride * (1.0 - std::cos(std::numbers::pi * u)), lift * std::sin(std::numbers::pi * u)};
}

}  // namespace

// ---- skeleton / vocabulary ------------------------------------------------

const Skeleton& Skeleton::standard() {
    static const Skeleton s{
        {-1, 0, 1, 2, 2, 2, 1, 1},
        {{{0.0f, 0.95f, 0.0f},
          {0.0f, -0.05f, 0.0f},
          {0.0f, 0.45f, 0.0f},
          {0.0f, 0.25f, 0.0f},
          {0.18f, -0.60f, 0.0f},
          {-0.18f, -0.60f, 0.0f},
          {0.10f, -0.90f, 0.0f},
          {-0.10f, -0.90f, 0.0f}}},
        {"root", "pelvis", "spine", "head", "left_hand", "right_hand", "left_foot", "right_foot"},
    };
    return s;
}

bool Skeleton::is_tree() const {
    std::size_t roots = 0;
    for (std::size_t j = 0; j < kJointCount; ++j) {
        if (parents[j] < 0) {
            ++roots;
            continue;
        }
        if (static_cast<std::size_t>(parents[j]) >= j) return false;  // parents precede children
    }
    for (const auto& o : offsets)
        for (float v : o)
            if (!std::isfinite(v)) return false;
    return roots == 1;
}

std::array<float, 6> StyleParams::as_array() const {
    return {speed_scale, stride_amplitude, posture_pitch_offset, arm_swing_asymmetry, step_height, torso_sway};
}

const std::vector<std::string>& content_labels() { return kContents; }
const std::vector<std::string>& style_labels() { return kStyles; }
std::size_t content_index(std::string_view content) { return lookup(kContents, content, "content"); }
std::size_t style_index(std::string_view style) { return lookup(kStyles, style, "style"); }
const std::string& content_sentence(std::string_view content) { return kSentences[content_index(content)]; }
const std::string& content_from_sentence(std::string_view sentence) {
    return kContents[lookup(kSentences, sentence, "content sentence")];
}
const StyleParams& style_params(std::string_view style) { return kStyleParams[style_index(style)]; }

std::array<float, 3> MotionSequence::joint_position(std::size_t f, Joint j) const {
    const std::size_t base = f * kFeatureDim + layout::kPositions + 3 * static_cast<std::size_t>(j);
    return {data[base], data[base + 1], data[base + 2]};
}

std::array<float, 3> MotionSequence::joint_velocity(std::size_t f, Joint j) const {
    const std::size_t base = f * kFeatureDim + layout::kVelocities + 3 * static_cast<std::size_t>(j);
    return {data[base], data[base + 1], data[base + 2]};
}

// ---- generation -----------------------------------------------------------

MotionSequence generate_motion(std::string_view content, std::string_view style, std::uint64_t seed,
                               std::size_t num_frames) {
    const std::size_t ci = content_index(content);
    const StyleParams& sp = style_params(style);
    if (num_frames < kMinFrames || num_frames > kMaxFrames)
        throw ContractError("generate_motion: num_frames must lie in [40, 200], got " + std::to_string(num_frames));

    const ContentGait& g = kGaits[ci];
    std::mt19937_64 engine(derive_seed(seed, std::string(content) + "/" + std::string(style)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    const double speed_jitter = 1.0 + 0.04 * gauss(engine);
    const double phase0 = unif(engine);
    const double heading0 = (unif(engine) - 0.5) * 2.0 * std::numbers::pi;

    const double v = g.speed * sp.speed_scale * speed_jitter / kFps;  // m/frame
    const double stride = g.stride * sp.stride_amplitude;
    const double lift = g.lift * sp.step_height;
    const double period = 2.0 * stride / (v * g.duty);  // frames per gait cycle
    const double pitch = sp.posture_pitch_offset;
    const double sway = 0.02 + sp.torso_sway;
    const double foot_width = 0.10 + 0.5 * sp.torso_sway;
    const double base_height = 0.95 - 0.30 * std::max(0.0, pitch);
    const double turn_rate = g.turning ? 2.0 * std::numbers::pi / static_cast<double>(num_frames - 1) : 0.0;

    const std::size_t F = num_frames;
    std::vector<double> heading(F);
    std::vector<std::array<double, 2>> root(F);
    std::vector<std::array<std::array<double, 3>, kJointCount>> local(F);

    for (std::size_t f = 0; f < F; ++f) {
        heading[f] = heading0 + turn_rate * static_cast<double>(f) + 0.0005 * gauss(engine);
        if (f == 0) {
            root[f] = {0.0, 0.0};
        } else {
            const auto step = rotate(kRootNoise * gauss(engine), v + kRootNoise * gauss(engine), heading[f]);
            root[f] = {root[f - 1][0] + step[0], root[f - 1][1] + step[1]};
        }

        const double phase = phase0 + static_cast<double>(f) / period;
        const double cyc = 2.0 * std::numbers::pi * phase;
        double bounce = 0.0;
        if (g.in_phase) {
            bounce = g.bounce * std::max(0.0, std::sin(cyc));
        } else {
            bounce = g.bounce * (0.5 - 0.5 * std::cos(2.0 * cyc));
        }
        const double h = base_height + bounce;

        auto& J = local[f];
        J[0] = {0.0, h, 0.0};
        J[1] = {sway * std::sin(cyc), h - 0.05, 0.0};
        J[2] = {J[1][0] * 1.2, J[1][1] + 0.45 * std::cos(pitch), 0.45 * std::sin(pitch)};
        J[3] = {J[2][0], J[2][1] + 0.25 * std::cos(1.3 * pitch), J[2][2] + 0.25 * std::sin(1.3 * pitch)};

        // Arms swing opposite to the same-side leg.
        const double arm = g.arm * sp.stride_amplitude;
        const double asym = sp.arm_swing_asymmetry;
        for (int side = 0; side < 2; ++side) {
            const double sign = side == 0 ? 1.0 : -1.0;
            const double swing = (side == 0 ? -1.0 : 1.0) * arm * (1.0 + 0.3 * asym * side) * std::sin(cyc);
            const std::array<double, 3> shoulder = {J[2][0] + sign * 0.18, J[2][1] - 0.05, J[2][2]};
            std::array<double, 3> hand = {shoulder[0], shoulder[1] - 0.55 * std::cos(swing),
                                          shoulder[2] + 0.55 * std::sin(swing)};
            if (side == 0 && asym > 0) {
                const std::array<double, 3> phone = {J[3][0] + 0.12, J[3][1] - 0.12, J[3][2] + 0.15};
                for (int a = 0; a < 3; ++a) hand[static_cast<std::size_t>(a)] = (1.0 - asym) * hand[static_cast<std::size_t>(a)] + asym * phone[static_cast<std::size_t>(a)];
            }
            J[4 + static_cast<std::size_t>(side)] = hand;
        }

        for (int side = 0; side < 2; ++side) {
            const double offset = g.in_phase ? 0.0 : 0.5 * side;
            const FootState fs = foot_state(phase + offset, g, stride, lift);
            const double sign = side == 0 ? 1.0 : -1.0;
            J[6 + static_cast<std::size_t>(side)] = {sign * foot_width + J[1][0] * 0.3, fs.y, fs.z};
        }

        for (std::size_t j = 0; j < kJointCount; ++j) {
            for (std::size_t a = 0; a < 3; ++a) J[j][a] += kPositionNoise * gauss(engine);
            if (j == 0) J[j][0] = J[j][2] = 0.0;  // root sits at the origin of its own frame
        }
        for (std::size_t j = 6; j < 8; ++j) J[j][1] = std::max(0.0, J[j][1]);
    }

    MotionSequence m;
    m.frames = F;
    m.content = std::string(content);
    m.style = std::string(style);
    m.data.assign(F * kFeatureDim, 0.0f);
    for (std::size_t f = 0; f < F; ++f) {
        auto row = m.row(f);
        const std::size_t a = std::max<std::size_t>(f, 1);
        row[layout::kAngularVelocity] = static_cast<float>(heading[a] - heading[a - 1]);
        const auto lv = rotate(root[a][0] - root[a - 1][0], root[a][1] - root[a - 1][1], -heading[a]);
        row[layout::kLinearVelocity] = static_cast<float>(lv[0]);
        row[layout::kLinearVelocity + 1] = static_cast<float>(lv[1]);
        row[layout::kRootHeight] = static_cast<float>(local[f][0][1]);
        for (std::size_t j = 0; j < kJointCount; ++j)
            for (std::size_t c = 0; c < 3; ++c) row[layout::kPositions + 3 * j + c] = static_cast<float>(local[f][j][c]);
        row[layout::kContacts] = local[f][6][1] < kContactHeight ? 1.0f : 0.0f;
        row[layout::kContacts + 1] = local[f][7][1] < kContactHeight ? 1.0f : 0.0f;
    }
    // Velocities are differences of the stored (rounded) positions so the
    // consistency invariant holds to float precision.
    for (std::size_t f = 0; f < F; ++f) {
        const std::size_t a = std::max<std::size_t>(f, 1);
        for (std::size_t k = 0; k < 3 * kJointCount; ++k) {
            m.data[f * kFeatureDim + layout::kVelocities + k] =
                m.data[a * kFeatureDim + layout::kPositions + k] - m.data[(a - 1) * kFeatureDim + layout::kPositions + k];
        }
    }
    return m;
}

double velocity_consistency_error(const MotionSequence& m) {
    double worst = 0;
    for (std::size_t f = 1; f < m.frames; ++f)
        for (std::size_t k = 0; k < 3 * kJointCount; ++k) {
            const double fd = static_cast<double>(m.at(f, layout::kPositions + k)) -
                              static_cast<double>(m.at(f - 1, layout::kPositions + k));
            worst = std::max(worst, std::abs(fd - static_cast<double>(m.at(f, layout::kVelocities + k))));
        }
    return worst;
}

std::vector<std::array<double, 2>> integrate_root_trajectory(const MotionSequence& m) {
    std::vector<std::array<double, 2>> out(m.frames, {0.0, 0.0});
    double heading = 0;
    for (std::size_t f = 1; f < m.frames; ++f) {
        heading += m.at(f, layout::kAngularVelocity);
        const auto step = rotate(m.at(f, layout::kLinearVelocity), m.at(f, layout::kLinearVelocity + 1), heading);
        out[f] = {out[f - 1][0] + step[0], out[f - 1][1] + step[1]};
    }
    return out;
}

double foot_skate_frames(const MotionSequence& m, double h_eps, double v_eps) {
    if (m.frames == 0) return 0.0;
    std::size_t skating = 0;
    for (std::size_t f = 0; f < m.frames; ++f) {
        const double omega = m.at(f, layout::kAngularVelocity);
        const double lx = m.at(f, layout::kLinearVelocity);
        const double lz = m.at(f, layout::kLinearVelocity + 1);
        bool skate = false;
        for (Joint foot : {Joint::left_foot, Joint::right_foot}) {
            const auto p = m.joint_position(f, foot);
            const auto vel = m.joint_velocity(f, foot);
            // World displacement since the previous frame, in this frame's heading.
            const auto prev = rotate(p[0] - vel[0], p[2] - vel[2], -omega);
            const double dx = p[0] + lx - prev[0];
            const double dz = p[2] + lz - prev[1];
            if (p[1] < h_eps && std::hypot(dx, dz) > v_eps) skate = true;
        }
        skating += skate ? 1 : 0;
    }
    return static_cast<double>(skating) / static_cast<double>(m.frames);
}

// ---- corpus ---------------------------------------------------------------

std::string_view split_name(Split s) { return s == Split::train ? "train" : "test"; }

void CorpusConfig::validate() const {
    if (samples_per_cell < 4) throw ConfigError("corpus: samples_per_cell must be >= 4");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("corpus: test_fraction must lie in (0, 1)");
    if (num_frames < kMinFrames || num_frames > kMaxFrames) throw ConfigError("corpus: num_frames must lie in [40, 200]");
}

Corpus build_corpus(const CorpusConfig& config) {
    config.validate();
    const std::size_t cells = kContents.size() * kStyles.size();
    const std::size_t total = cells * config.samples_per_cell;
    const auto total_test = static_cast<std::size_t>(std::llround(static_cast<double>(total) * config.test_fraction));
    const std::size_t base = total_test / cells;
    std::size_t extra = total_test % cells;

    // Cells receiving one extra test sample are chosen by a seeded permutation.
    std::vector<std::size_t> order(cells);
    for (std::size_t i = 0; i < cells; ++i) order[i] = i;
    Rng rng(derive_seed(config.master_seed, config.tag + "/split"));
    rng.shuffle(order);
    std::vector<std::size_t> test_count(cells, base);
    for (std::size_t i = 0; i < extra; ++i) ++test_count[order[i]];
    for (auto& t : test_count) t = std::clamp<std::size_t>(t, 1, config.samples_per_cell - 1);

    Corpus corpus;
    for (std::size_t c = 0; c < kContents.size(); ++c) {
        for (std::size_t s = 0; s < kStyles.size(); ++s) {
            const std::size_t cell = c * kStyles.size() + s;
            for (std::size_t k = 0; k < config.samples_per_cell; ++k) {
                CorpusRecord rec;
                rec.content = kContents[c];
                rec.sentence = kSentences[c];
                rec.style = kStyles[s];
                rec.id = config.tag + "_" + rec.content + "_" + rec.style + "_" + std::to_string(k);
                rec.seed = derive_seed(config.master_seed, rec.id);
                rec.split = k < config.samples_per_cell - test_count[cell] ? Split::train : Split::test;
                rec.motion = generate_motion(rec.content, rec.style, rec.seed, config.num_frames);
                (rec.split == Split::train ? corpus.train : corpus.test).push_back(std::move(rec));
            }
        }
    }
    return corpus;
}

// ---- files ----------------------------------------------------------------

namespace {
constexpr char kMotionMagic[4] = {'S', 'M', 'O', 'T'};
}

void write_motion(const std::filesystem::path& path, const MotionSequence& m) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write motion file " + path.string());
    binio::write_bytes(out, kMotionMagic, sizeof(kMotionMagic));
    binio::write_u32(out, kMotionFormatVersion);
    binio::write_u32(out, static_cast<std::uint32_t>(kJointCount));
    binio::write_u32(out, static_cast<std::uint32_t>(m.frames));
    binio::write_u32(out, static_cast<std::uint32_t>(kFeatureDim));
    binio::write_u32(out, static_cast<std::uint32_t>(m.fps));
    binio::write_string(out, m.content);
    binio::write_string(out, m.style);
    binio::write_f32s(out, m.data);
    if (!out) throw LoadError("failed writing motion file " + path.string());
}

MotionSequence read_motion(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open motion file " + path.string());
    char magic[4];
    binio::read_bytes(in, magic, sizeof(magic));
    if (std::memcmp(magic, kMotionMagic, sizeof(magic)) != 0) throw LoadError(path.string() + " is not a motion file");
    if (binio::read_u32(in) != kMotionFormatVersion) throw LoadError("unsupported motion file version");
    const auto joints = binio::read_u32(in);
    const auto frames = binio::read_u32(in);
    const auto dim = binio::read_u32(in);
    const auto fps = binio::read_u32(in);
    if (joints != kJointCount || dim != kFeatureDim) throw LoadError("motion file layout mismatch");
    MotionSequence m;
    m.frames = frames;
    m.fps = static_cast<int>(fps);
    m.content = binio::read_string(in);
    m.style = binio::read_string(in);
    m.data = binio::read_f32s(in, static_cast<std::size_t>(frames) * dim);
    return m;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw LoadError("cannot write manifest " + path.string());
    for (const auto& e : entries) {
        nlohmann::ordered_json j;
        j["id"] = e.id;
        j["path"] = e.path;
        j["content"] = e.content_text;
        j["style"] = e.style;
        j["split"] = std::string(split_name(e.split));
        out << j.dump() << '\n';
    }
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open manifest " + path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        ManifestEntry e;
        e.id = j.at("id").get<std::string>();
        e.path = j.at("path").get<std::string>();
        e.content_text = j.at("content").get<std::string>();
        e.style = j.at("style").get<std::string>();
        const auto split = j.at("split").get<std::string>();
        if (split != "train" && split != "test") throw LoadError("manifest: bad split '" + split + "'");
        e.split = split == "train" ? Split::train : Split::test;
        entries.push_back(std::move(e));
    }
    return entries;
}

SMLD_NAMESPACE_END
