#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "promptfence/core.hpp"

namespace pfence {

// Flat binary tensor archive: a magic line, one JSON manifest line listing
// tensor names/shapes/offsets plus the blob hash, then raw doubles in
// manifest order. Writes go through a temp file and rename, so a checkpoint
// on disk is always complete.
namespace archive {

inline constexpr const char* kMagic = "PFTA1";

struct Entry {
    std::string name;
    Mat value;
};

inline std::uint64_t blob_hash(const std::vector<Entry>& entries) {
    std::uint64_t h = fnv1a_init();
    for (const auto& e : entries) {
        h = fnv1a(h, e.name);
        h = fnv1a(h, e.value);
    }
    return h;
}

inline void save(const std::string& path, const std::vector<Entry>& entries) {
    nlohmann::json manifest;
    manifest["tensors"] = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& e : entries) {
        manifest["tensors"].push_back({{"name", e.name},
                                       {"rows", e.value.rows()},
                                       {"cols", e.value.cols()},
                                       {"offset", offset}});
        offset += static_cast<std::size_t>(e.value.size());
    }
    manifest["blob_hash"] = hash_hex(blob_hash(entries));

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("archive: cannot write " + tmp);
        out << kMagic << "\n" << manifest.dump() << "\n";
        for (const auto& e : entries)
            out.write(reinterpret_cast<const char*>(e.value.data()),
                      static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(e.value.size())));
        if (!out) throw DataError("archive: short write to " + tmp);
    }
    std::remove(path.c_str());
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw DataError("archive: cannot move " + tmp + " into place");
}

inline std::vector<Entry> load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("archive: cannot open " + path);
    std::string magic, header;
    std::getline(in, magic);
    if (magic != kMagic) throw DataError("archive: bad magic in " + path);
    std::getline(in, header);
    nlohmann::json manifest = nlohmann::json::parse(header, nullptr, false);
    if (manifest.is_discarded()) throw DataError("archive: corrupt manifest in " + path);

    std::vector<Entry> entries;
    for (const auto& t : manifest.at("tensors")) {
        Entry e;
        e.name = t.at("name").get<std::string>();
        e.value.resize(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
        entries.push_back(std::move(e));
    }
    for (auto& e : entries) {
        in.read(reinterpret_cast<char*>(e.value.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(e.value.size())));
        if (!in) throw DataError("archive: truncated blob in " + path);
    }
    if (manifest.at("blob_hash").get<std::string>() != hash_hex(blob_hash(entries)))
        throw DataError("archive: blob hash mismatch in " + path);
    return entries;
}

inline std::uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("archive: cannot open " + path);
    std::uint64_t h = fnv1a_init();
    char buf[65536];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h = fnv1a(h, buf, static_cast<std::size_t>(in.gcount()));
    return h;
}

}  // namespace archive
}  // namespace pfence
