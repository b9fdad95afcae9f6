// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0
//
// Repo-wide checkpoint format. Little-endian throughout:
//
//   magic    "SMLDCKPT"                         8 bytes
//   version  u32 (= 1)
//   nmeta    u32, then nmeta × { u32 len, key bytes, u32 len, value bytes }
//   ntensor  u32, then ntensor × {
//              u32 len, name bytes,
//              u32 rank, rank × u64 dims,
//              product(dims) × f32 values }
//
// Tensors keep insertion order, so writing the same table twice yields the
// same bytes.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "smld/precision.hpp"

SMLD_NAMESPACE_BEGIN

struct TableEntry {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> values;
};

class TensorTable {
  public:
    void put(std::string name, std::vector<std::size_t> shape, std::vector<float> values);
    template <typename T>
    void put_values(std::string name, std::vector<std::size_t> shape, const std::vector<T>& values) {
        put(std::move(name), std::move(shape), std::vector<float>(values.begin(), values.end()));
    }
    const TableEntry& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const std::vector<TableEntry>& entries() const { return entries_; }
    std::size_t total_elements() const;

    std::map<std::string, std::string>& metadata() { return metadata_; }
    const std::map<std::string, std::string>& metadata() const { return metadata_; }
    const std::string& meta(const std::string& key) const;

    void save(const std::filesystem::path& path) const;
    static TensorTable load(const std::filesystem::path& path);

  private:
    std::vector<TableEntry> entries_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, std::string> metadata_;
};

/// SHA-free content fingerprint of a file (FNV-1a 64), hex encoded.
std::string file_fingerprint(const std::filesystem::path& path);

SMLD_NAMESPACE_END
