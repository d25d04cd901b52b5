// SPDX-License-Identifier: Apache-2.0
#include "mcevae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "mcevae/io.hpp"

namespace mcevae::checkpoint {

namespace fs = std::filesystem;

void save(const graph::ParameterStore& store, const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream manifest(dir / "params.manifest");
    std::ofstream blob(dir / "params.bin", std::ios::binary);
    if (!manifest || !blob) throw io::IoError("checkpoint: cannot write to " + dir.string());
    manifest << "mcevae-params " << kFormatVersion << '\n';
    std::size_t offset = 0;
    for (const auto& p : store.all()) {
        manifest << p.name << ' ' << p.value.rank();
        for (auto d : p.value.shape()) manifest << ' ' << d;
        manifest << ' ' << offset << '\n';
        io::write_f64_le(blob, p.value.data());
        offset += p.value.size() * sizeof(double);
    }
    if (!manifest || !blob) throw io::IoError("checkpoint: write failed in " + dir.string());
}

void load(graph::ParameterStore& store, const fs::path& dir) {
    std::ifstream manifest(dir / "params.manifest");
    if (!manifest) throw io::IoError("checkpoint: missing " + (dir / "params.manifest").string());
    std::string magic;
    int version = 0;
    manifest >> magic >> version;
    if (magic != "mcevae-params" || version != kFormatVersion) {
        throw io::IoError("checkpoint: unsupported manifest header '" + magic + " " + std::to_string(version) + "'");
    }
    struct Entry {
        Shape shape;
        std::size_t offset;
    };
    std::unordered_map<std::string, Entry> entries;
    std::string line;
    std::getline(manifest, line);
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name;
        std::size_t rank = 0;
        ls >> name >> rank;
        Entry e;
        e.shape.resize(rank);
        for (auto& d : e.shape) ls >> d;
        ls >> e.offset;
        if (!ls) throw io::IoError("checkpoint: malformed manifest line '" + line + "'");
        entries.emplace(std::move(name), std::move(e));
    }
    std::ifstream blob(dir / "params.bin", std::ios::binary);
    if (!blob) throw io::IoError("checkpoint: missing " + (dir / "params.bin").string());
    for (auto& p : store.all()) {
        auto it = entries.find(p.name);
        if (it == entries.end()) throw io::IoError("checkpoint: parameter '" + p.name + "' not in manifest");
        if (it->second.shape != p.value.shape()) {
            throw io::IoError("checkpoint: parameter '" + p.name + "' has shape " + shape_str(it->second.shape) +
                              " in checkpoint but " + shape_str(p.value.shape()) + " in model");
        }
        blob.seekg(static_cast<std::streamoff>(it->second.offset));
        io::read_f64_le(blob, p.value.data(), p.name);
        entries.erase(it);
    }
    if (!entries.empty()) {
        throw io::IoError("checkpoint: unexpected parameter '" + entries.begin()->first + "' in manifest");
    }
    store.zero_grad();
}

}  // namespace mcevae::checkpoint
