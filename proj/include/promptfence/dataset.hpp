#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptfence/backbone.hpp"
#include "promptfence/core.hpp"

namespace pfence {

namespace fs = std::filesystem;

struct Sample {
    Image image;
    int label = 0;
    std::string provenance;  // e.g. "original", "augmented", "augmented+watermark"
};

struct Dataset {
    std::string name;
    std::vector<std::string> class_names;
    std::vector<Sample> samples;
    DomainTag tag = DomainTag::authorized;

    std::size_t size() const { return samples.size(); }
    int n_classes() const { return static_cast<int>(class_names.size()); }

    ImageBatch batch(const std::vector<std::size_t>& idx) const {
        ImageBatch b;
        b.domain_tag = tag;
        b.images.reserve(idx.size());
        b.labels.reserve(idx.size());
        for (std::size_t i : idx) {
            b.images.push_back(&samples[i].image);
            b.labels.push_back(samples[i].label);
        }
        return b;
    }

    ImageBatch all() const {
        std::vector<std::size_t> idx(samples.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        return batch(idx);
    }

    std::uint64_t content_hash() const {
        std::uint64_t h = fnv1a_init();
        for (const auto& cn : class_names) h = fnv1a(h, cn);
        for (const auto& s : samples) {
            h = fnv1a(h, &s.label, sizeof s.label);
            h = fnv1a(h, &s.image.h, sizeof s.image.h);
            h = fnv1a(h, &s.image.w, sizeof s.image.w);
            h = fnv1a(h, s.image.data.data(), s.image.data.size() * sizeof(double));
        }
        return h;
    }

    std::vector<int> class_histogram() const {
        std::vector<int> hist(static_cast<std::size_t>(n_classes()), 0);
        for (const auto& s : samples) hist[static_cast<std::size_t>(s.label)]++;
        return hist;
    }

    void validate() const {
        for (const auto& s : samples) {
            if (s.label < 0 || s.label >= n_classes())
                throw DataError("dataset " + name + ": label out of range");
            for (double v : s.image.data)
                if (!std::isfinite(v)) throw DataError("dataset " + name + ": non-finite pixel");
        }
    }
};

// ---------------------------------------------------------------------------
// PPM (P6, 8-bit) image files. No external decoder needed and fully
// deterministic byte-wise, which the manifest hashing relies on.
// ---------------------------------------------------------------------------
inline void write_ppm(const std::string& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_ppm: cannot write " + path);
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(img.w) * 3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
                row[static_cast<std::size_t>(x * 3 + c)] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw DataError("write_ppm: short write to " + path);
}

inline Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_ppm: cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255 || w < 1 || h < 1)
        throw DataError("read_ppm: unsupported or corrupt file " + path);
    in.get();  // single whitespace after header
    Image img(h, w);
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!in) throw DataError("read_ppm: truncated file " + path);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = row[static_cast<std::size_t>(x * 3 + c)] / 255.0;
    }
    return img;
}

// ---------------------------------------------------------------------------
// Disk layout: root/domain/class/image.ppm, the layout shared by the common
// domain-shift benchmarks. Class order is the sorted class-name set; every
// domain must carry the identical set.
// ---------------------------------------------------------------------------
struct DatasetIndex {
    std::vector<std::string> domains;
    std::vector<std::string> class_names;
    std::map<std::string, std::map<std::string, std::vector<std::string>>> files;
    std::size_t n_images = 0;

    std::uint64_t index_hash() const {
        std::uint64_t h = fnv1a_init();
        for (const auto& d : domains) h = fnv1a(h, d);
        for (const auto& c : class_names) h = fnv1a(h, c);
        for (const auto& [d, classes] : files)
            for (const auto& [c, paths] : classes)
                for (const auto& p : paths) h = fnv1a(h, p);
        return h;
    }
};

inline DatasetIndex ingest_dataset(const std::string& root) {
    if (!fs::is_directory(root)) throw DataError("ingest: dataset root not found: " + root);
    DatasetIndex index;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) index.domains.push_back(e.path().filename().string());
    std::sort(index.domains.begin(), index.domains.end());
    if (index.domains.empty()) throw DataError("ingest: no domain directories under " + root);

    std::map<std::string, std::set<std::string>> classes_of;
    for (const auto& d : index.domains) {
        for (const auto& e : fs::directory_iterator(fs::path(root) / d))
            if (e.is_directory()) classes_of[d].insert(e.path().filename().string());
    }
    const std::set<std::string>& reference = classes_of[index.domains[0]];
    for (const auto& d : index.domains) {
        for (const auto& c : reference)
            if (!classes_of[d].count(c))
                throw DataError("ingest: domain '" + d + "' is missing class '" + c + "'");
        for (const auto& c : classes_of[d])
            if (!reference.count(c))
                throw DataError("ingest: domain '" + d + "' has extra class '" + c +
                                "' absent from domain '" + index.domains[0] + "'");
    }
    index.class_names.assign(reference.begin(), reference.end());

    for (const auto& d : index.domains)
        for (const auto& c : index.class_names) {
            std::vector<std::string> paths;
            for (const auto& e : fs::directory_iterator(fs::path(root) / d / c))
                if (e.is_regular_file() && e.path().extension() == ".ppm")
                    paths.push_back(e.path().string());
            std::sort(paths.begin(), paths.end());
            index.n_images += paths.size();
            index.files[d][c] = std::move(paths);
        }
    return index;
}

inline Dataset load_domain(const DatasetIndex& index, const std::string& domain, DomainTag tag) {
    auto it = index.files.find(domain);
    if (it == index.files.end()) throw ConfigError("load_domain: unknown domain '" + domain + "'");
    Dataset ds;
    ds.name = domain;
    ds.tag = tag;
    ds.class_names = index.class_names;
    struct Item {
        const std::string* path;
        int label;
    };
    std::vector<Item> items;
    for (std::size_t k = 0; k < index.class_names.size(); ++k)
        for (const auto& p : it->second.at(index.class_names[k]))
            items.push_back({&p, static_cast<int>(k)});
    ds.samples.resize(items.size());
    parallel_for(items.size(), [&](std::size_t i) {
        ds.samples[i].image = read_ppm(*items[i].path);
        ds.samples[i].label = items[i].label;
        ds.samples[i].provenance = "disk";
    });
    ds.validate();
    return ds;
}

inline void write_domain(const std::string& root, const Dataset& ds,
                         const nlohmann::json& manifest_extra = {}) {
    fs::path dir = fs::path(root) / ds.name;
    std::vector<int> counter(static_cast<std::size_t>(ds.n_classes()), 0);
    for (const auto& c : ds.class_names) fs::create_directories(dir / c);
    for (const auto& s : ds.samples) {
        const std::string& cls = ds.class_names[static_cast<std::size_t>(s.label)];
        int id = counter[static_cast<std::size_t>(s.label)]++;
        char name[32];
        std::snprintf(name, sizeof name, "%05d.ppm", id);
        write_ppm((dir / cls / name).string(), s.image);
    }
    nlohmann::json manifest = manifest_extra;
    manifest["domain"] = ds.name;
    manifest["n_images"] = ds.samples.size();
    manifest["content_hash"] = hash_hex(ds.content_hash());
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << "\n";
}

}  // namespace pfence
