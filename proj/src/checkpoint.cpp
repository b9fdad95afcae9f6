// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#include "smld/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "smld/binary_io.hpp"
#include "smld/errors.hpp"

SMLD_NAMESPACE_BEGIN

namespace {
constexpr char kMagic[8] = {'S', 'M', 'L', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void TensorTable::put(std::string name, std::vector<std::size_t> shape, std::vector<float> values) {
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    if (n != values.size()) throw ContractError("TensorTable::put: shape/value mismatch for " + name);
    if (contains(name)) throw ContractError("TensorTable::put: duplicate tensor " + name);
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), std::move(shape), std::move(values)});
}

const TableEntry& TensorTable::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw LoadError("checkpoint has no tensor named '" + name + "'");
    return entries_[it->second];
}

std::size_t TensorTable::total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.values.size();
    return n;
}

const std::string& TensorTable::meta(const std::string& key) const {
    auto it = metadata_.find(key);
    if (it == metadata_.end()) throw LoadError("checkpoint has no metadata key '" + key + "'");
    return it->second;
}

void TensorTable::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write checkpoint " + path.string());
    binio::write_bytes(out, kMagic, sizeof(kMagic));
    binio::write_u32(out, kVersion);
    binio::write_u32(out, static_cast<std::uint32_t>(metadata_.size()));
    for (const auto& [k, v] : metadata_) {
        binio::write_string(out, k);
        binio::write_string(out, v);
    }
    binio::write_u32(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
        binio::write_string(out, e.name);
        binio::write_u32(out, static_cast<std::uint32_t>(e.shape.size()));
        for (std::size_t d : e.shape) binio::write_u64(out, d);
        binio::write_f32s(out, e.values);
    }
    if (!out) throw LoadError("failed writing checkpoint " + path.string());
}

TensorTable TensorTable::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint " + path.string());
    char magic[8];
    binio::read_bytes(in, magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw LoadError(path.string() + " is not a checkpoint");
    const auto version = binio::read_u32(in);
    if (version != kVersion) throw LoadError("unsupported checkpoint version " + std::to_string(version));
    TensorTable table;
    const auto nmeta = binio::read_u32(in);
    for (std::uint32_t i = 0; i < nmeta; ++i) {
        auto k = binio::read_string(in);
        table.metadata_[k] = binio::read_string(in);
    }
    const auto count = binio::read_u32(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name = binio::read_string(in);
        const auto rank = binio::read_u32(in);
        if (rank > 8) throw LoadError("corrupt checkpoint: rank " + std::to_string(rank));
        std::vector<std::size_t> shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(binio::read_u64(in));
            n *= d;
        }
        table.put(std::move(name), std::move(shape), binio::read_f32s(in, n));
    }
    return table;
}

std::string file_fingerprint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    std::uint64_t h = 1469598103934665603ull;
    char buf[1 << 14];
    while (in) {
        in.read(buf, sizeof(buf));
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

SMLD_NAMESPACE_END
