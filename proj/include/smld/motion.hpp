// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural stylized locomotion in a root-velocity representation.
//
// Frame layout (D = 54 for the 8-joint skeleton), all in the root heading
// frame (x lateral, y up, z forward):
//
//   [0]        root angular velocity about +y      rad/frame
//   [1, 2]     root linear velocity (x, z)          m/frame
//   [3]        root height                          m
//   [4, 28)    joint positions relative to root xz  m   (joint-major, xyz)
//   [28, 52)   joint velocities                      m/frame
//   [52, 54)   left / right foot contact flags       {0, 1}
//
// Velocities at frame f are the difference of frames f and f-1; frame 0
// repeats frame 1.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smld/precision.hpp"

SMLD_NAMESPACE_BEGIN

inline constexpr std::size_t kJointCount = 8;
inline constexpr std::size_t kFeatureDim = 4 + 6 * kJointCount + 2;
inline constexpr int kFps = 20;
inline constexpr std::uint32_t kMotionFormatVersion = 1;

namespace layout {
inline constexpr std::size_t kAngularVelocity = 0;
inline constexpr std::size_t kLinearVelocity = 1;
inline constexpr std::size_t kRootHeight = 3;
inline constexpr std::size_t kPositions = 4;
inline constexpr std::size_t kVelocities = kPositions + 3 * kJointCount;
inline constexpr std::size_t kContacts = kVelocities + 3 * kJointCount;
}  // namespace layout

enum class Joint : std::size_t { root, pelvis, spine, head, left_hand, right_hand, left_foot, right_foot };

struct Skeleton {
    std::array<int, kJointCount> parents;
    std::array<std::array<float, 3>, kJointCount> offsets;  // rest offsets from parent, meters
    std::array<std::string_view, kJointCount> names;

    static const Skeleton& standard();
    bool is_tree() const;
};

/// Style modulation of the gait. Ranges:
///   speed_scale          [0.4, 2.0]   multiplies forward speed
///   stride_amplitude     [0.3, 1.5]   multiplies step length
///   posture_pitch_offset [-0.4, 0.8]  forward torso lean, rad (negative leans back)
///   arm_swing_asymmetry  [0, 1]       0 symmetric swing, 1 left hand held at the head
///   step_height          [0.3, 2.5]   multiplies swing-foot lift
///   torso_sway           [0, 0.2]     lateral pelvis sway amplitude and stance widening, m
struct StyleParams {
    float speed_scale;
    float stride_amplitude;
    float posture_pitch_offset;
    float arm_swing_asymmetry;
    float step_height;
    float torso_sway;

    std::array<float, 6> as_array() const;
};

const std::vector<std::string>& content_labels();
const std::vector<std::string>& style_labels();
/// Throws VocabularyError for unknown labels.
std::size_t content_index(std::string_view content);
std::size_t style_index(std::string_view style);
/// Canonical single-sentence text for a content label ("a person is walking").
const std::string& content_sentence(std::string_view content);
/// Inverse of content_sentence; throws VocabularyError.
const std::string& content_from_sentence(std::string_view sentence);
const StyleParams& style_params(std::string_view style);

struct MotionSequence {
    std::size_t frames = 0;
    int fps = kFps;
    std::string content;
    std::string style;
    std::vector<float> data;  // frames × kFeatureDim, row-major

    std::span<const float> row(std::size_t f) const { return {data.data() + f * kFeatureDim, kFeatureDim}; }
    std::span<float> row(std::size_t f) { return {data.data() + f * kFeatureDim, kFeatureDim}; }
    float at(std::size_t f, std::size_t c) const { return data[f * kFeatureDim + c]; }
    /// Position of joint j at frame f (heading frame, y absolute).
    std::array<float, 3> joint_position(std::size_t f, Joint j) const;
    std::array<float, 3> joint_velocity(std::size_t f, Joint j) const;
};

inline constexpr std::size_t kMinFrames = 40;
inline constexpr std::size_t kMaxFrames = 200;

MotionSequence generate_motion(std::string_view content, std::string_view style, std::uint64_t seed,
                               std::size_t num_frames);

/// Largest |stored velocity − finite difference of stored positions|.
double velocity_consistency_error(const MotionSequence& m);

/// Root xz trajectory integrated from the stored velocities (world frame,
/// starting at the origin with heading 0).
std::vector<std::array<double, 2>> integrate_root_trajectory(const MotionSequence& m);

/// Fraction of frames in which some foot is below `h_eps` while moving
/// horizontally faster than `v_eps` in the world frame.
double foot_skate_frames(const MotionSequence& m, double h_eps = 0.05, double v_eps = 0.01);

// ---- corpus ---------------------------------------------------------------

enum class Split { train, test };
std::string_view split_name(Split s);

struct CorpusConfig {
    std::size_t samples_per_cell = 16;
    std::size_t num_frames = 64;
    double test_fraction = 0.2;
    std::uint64_t master_seed = 7;
    std::string tag = "main";

    void validate() const;
};

struct CorpusRecord {
    std::string id;
    std::string content;   // label, e.g. "walk"
    std::string sentence;  // content text, e.g. "a person is walking"
    std::string style;     // single-word style text
    Split split = Split::train;
    std::uint64_t seed = 0;
    MotionSequence motion;
};

struct Corpus {
    std::vector<CorpusRecord> train;
    std::vector<CorpusRecord> test;
    std::size_t size() const { return train.size() + test.size(); }
};

/// Stratified over every (content, style) cell; each cell appears in both
/// splits. The test count is round(N · test_fraction), distributed as evenly
/// as possible over cells.
Corpus build_corpus(const CorpusConfig& config);

// ---- files ----------------------------------------------------------------

/// Motion file: "SMOT" magic, u32 version, u32 J, u32 F, u32 D, u32 fps,
/// length-prefixed content and style labels, then F × D little-endian f32.
void write_motion(const std::filesystem::path& path, const MotionSequence& m);
MotionSequence read_motion(const std::filesystem::path& path);

struct ManifestEntry {
    std::string id;
    std::string path;  // relative to the manifest directory
    std::string content_text;
    std::string style;
    Split split = Split::train;
};

/// One JSON object per line: {"id", "path", "content", "style", "split"}.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

SMLD_NAMESPACE_END
