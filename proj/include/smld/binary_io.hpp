// Copyright (c) 2026, The smld Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "smld/errors.hpp"

SMLD_NAMESPACE_BEGIN

// Little-endian primitives for the on-disk formats.
namespace binio {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

inline void write_bytes(std::ostream& out, const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& in, void* data, std::size_t n) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw LoadError("unexpected end of file");
}

inline void write_u32(std::ostream& out, std::uint32_t v) { write_bytes(out, &v, sizeof(v)); }
inline void write_u64(std::ostream& out, std::uint64_t v) { write_bytes(out, &v, sizeof(v)); }

inline std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v;
    read_bytes(in, &v, sizeof(v));
    return v;
}

inline std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v;
    read_bytes(in, &v, sizeof(v));
    return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    write_bytes(out, s.data(), s.size());
}

inline std::string read_string(std::istream& in) {
    const auto n = read_u32(in);
    if (n > (1u << 24)) throw LoadError("corrupt string length");
    std::string s(n, '\0');
    read_bytes(in, s.data(), n);
    return s;
}

inline void write_f32s(std::ostream& out, const std::vector<float>& v) {
    write_bytes(out, v.data(), v.size() * sizeof(float));
}

inline std::vector<float> read_f32s(std::istream& in, std::size_t n) {
    std::vector<float> v(n);
    read_bytes(in, v.data(), n * sizeof(float));
    return v;
}

}  // namespace binio

SMLD_NAMESPACE_END
