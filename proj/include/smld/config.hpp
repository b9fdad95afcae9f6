// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat key=value run configuration. Keys carry their section as a dotted
// prefix ("vae.hidden"). Every key has a typed default; unknown keys and
// malformed values are rejected with ConfigError.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "smld/precision.hpp"

SMLD_NAMESPACE_BEGIN

class RunConfig {
  public:
    enum class Kind { integer, number, boolean, text };

    /// All defaults.
    RunConfig();

    /// Defaults overridden by the file's entries.
    static RunConfig load(const std::filesystem::path& path);
    /// Applies "key = value" lines; '#' starts a comment, blank lines and
    /// "[section]" headers (which prefix following keys) are allowed.
    void merge_text(std::string_view text, std::string_view origin = "<text>");
    void merge_file(const std::filesystem::path& path);

    /// Throws ConfigError for unknown keys or values of the wrong kind.
    void set(const std::string& key, const std::string& value);
    bool contains(const std::string& key) const { return entries_.count(key) != 0; }

    const std::string& text(const std::string& key) const;
    long long integer(const std::string& key) const;
    std::size_t count(const std::string& key) const;
    std::uint64_t seed(const std::string& key) const;
    double number(const std::string& key) const;
    bool flag(const std::string& key) const;

    std::vector<std::string> keys() const;
    /// Sorted "key = value" lines; parsing the rendering reproduces the config.
    std::string render() const;
    void save(const std::filesystem::path& path) const;

  private:
    struct Entry {
        Kind kind;
        std::string value;
    };
    void define(const std::string& key, Kind kind, std::string value);
    const Entry& entry(const std::string& key) const;

    std::map<std::string, Entry> entries_;
};

SMLD_NAMESPACE_END
