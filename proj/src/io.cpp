// SPDX-License-Identifier: Apache-2.0
#include "mcevae/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace mcevae::io {

namespace {

std::uint64_t to_le(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
        return r;
    }
}

}  // namespace

void write_f64_le(std::ostream& os, std::span<const double> values) {
    std::vector<std::uint64_t> buf(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) buf[i] = to_le(std::bit_cast<std::uint64_t>(values[i]));
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 8));
}

void read_f64_le(std::istream& is, std::span<double> out, const std::string& what) {
    std::vector<std::uint64_t> buf(out.size());
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 8));
    if (static_cast<std::size_t>(is.gcount()) != buf.size() * 8) {
        throw IoError("truncated binary data while reading " + what);
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<double>(to_le(buf[i]));
}

void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
    if (!os) throw IoError("write failed for " + path.string());
}

KeyValues read_key_values(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read " + path.string());
    KeyValues kv;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("malformed line '" + line + "' in " + path.string());
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

const std::string& require(const KeyValues& kv, const std::string& key, const std::string& source) {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError("missing key '" + key + "' in " + source);
    return it->second;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace mcevae::io
