#pragma once

#include <map>
#include <string>
#include <vector>

#include "promptfence/backbone.hpp"
#include "promptfence/dataset.hpp"
#include "promptfence/scenarios.hpp"

namespace pfence {

// Desk-scale synthetic task. The frozen backbone is random, so class content
// cannot come from real-world semantics; instead each class gets a prototype
// image searched (seeded hill climb) to give its zero-shot template a clear
// cosine margin. Samples are noisy variants of the prototypes; the shifted
// domain re-styles the same content with a channel affine plus a periodic
// texture, which moves the batch statistics without destroying the content
// direction.
struct ToyTaskConfig {
    int n_classes = 4;
    int image_hw = 32;
    int train_per_class = 150;
    int test_per_class = 100;
    std::uint64_t seed = 1;

    int search_iters = 400;
    double target_margin = 0.30;

    double content_noise = 0.10;   // low-frequency jitter amplitude
    double pixel_noise = 0.02;     // per-pixel gaussian sigma
    double brightness_jitter = 0.04;

    double style_affine = 0.18;    // channel gain deviation from 1
    double style_offset = 0.08;    // channel bias magnitude
    double style_texture = 0.06;   // periodic texture amplitude
};

namespace toy_detail {

// low-frequency field: a seeded coarse grid, bilinearly upsampled
inline Image low_freq_field(Rng& rng, int hw, double amplitude, int grid = 4) {
    Image out(hw, hw);
    std::vector<double> coarse(static_cast<std::size_t>(3 * grid * grid));
    for (auto& v : coarse) v = rng.uniform(-amplitude, amplitude);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < hw; ++y)
            for (int x = 0; x < hw; ++x) {
                double gy = static_cast<double>(y) / (hw - 1) * (grid - 1);
                double gx = static_cast<double>(x) / (hw - 1) * (grid - 1);
                int y0 = std::min(static_cast<int>(gy), grid - 2);
                int x0 = std::min(static_cast<int>(gx), grid - 2);
                double dy = gy - y0, dx = gx - x0;
                auto at = [&](int yy, int xx) {
                    return coarse[static_cast<std::size_t>((c * grid + yy) * grid + xx)];
                };
                out.at(c, y, x) = (1 - dy) * ((1 - dx) * at(y0, x0) + dx * at(y0, x0 + 1)) +
                                  dy * ((1 - dx) * at(y0 + 1, x0) + dx * at(y0 + 1, x0 + 1));
            }
    return out;
}

inline void add_clamped(Image& img, const Image& delta, double scale = 1.0) {
    for (std::size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = std::clamp(img.data[i] + scale * delta.data[i], 0.0, 1.0);
}

inline RowVec encode_single(const Backbone& bb, const Image& img) {
    ImageBatch batch;
    batch.images.push_back(&img);
    batch.labels.push_back(0);
    return bb.encode_image_multiscale(batch).final.row(0);
}

inline double margin_of(const RowVec& feature, const Mat& text_features, int cls) {
    double own = feature.dot(text_features.row(cls));
    double best_other = -2.0;
    for (Eigen::Index k = 0; k < text_features.rows(); ++k)
        if (k != cls) best_other = std::max(best_other, feature.dot(text_features.row(k)));
    return own - best_other;
}

inline Image search_prototype(const Backbone& bb, const Mat& text_features, int cls,
                              const ToyTaskConfig& cfg, Rng& rng) {
    Image proto(cfg.image_hw, cfg.image_hw);
    for (auto& v : proto.data) v = 0.5;
    add_clamped(proto, low_freq_field(rng, cfg.image_hw, 0.3));

    double margin = margin_of(encode_single(bb, proto), text_features, cls);
    double step = 0.30;
    int rejects = 0;
    for (int it = 0; it < cfg.search_iters && margin < cfg.target_margin; ++it) {
        Image candidate = proto;
        add_clamped(candidate, low_freq_field(rng, cfg.image_hw, step));
        double m = margin_of(encode_single(bb, candidate), text_features, cls);
        if (m > margin) {
            proto = candidate;
            margin = m;
            rejects = 0;
        } else if (++rejects >= 12) {
            step = std::max(0.05, step * 0.8);
            rejects = 0;
        }
    }
    return proto;
}

struct StyleShift {
    double gain[3];
    double bias[3];
    double tex_amp[3];
    double tex_fy, tex_fx, tex_phase;

    static StyleShift sample(Rng& rng, const ToyTaskConfig& cfg) {
        StyleShift s;
        for (int c = 0; c < 3; ++c) {
            double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            s.gain[c] = 1.0 + sign * cfg.style_affine * rng.uniform(0.7, 1.0);
            s.bias[c] = rng.uniform(-cfg.style_offset, cfg.style_offset);
            s.tex_amp[c] = cfg.style_texture * rng.uniform(0.6, 1.0);
        }
        s.tex_fy = rng.uniform(2.0, 5.0);
        s.tex_fx = rng.uniform(2.0, 5.0);
        s.tex_phase = rng.uniform(0.0, 2.0 * M_PI);
        return s;
    }

    Image apply(const Image& img) const {
        Image out = img;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x) {
                    double t = tex_amp[c] *
                               std::sin(2.0 * M_PI *
                                            (tex_fy * y / img.h + tex_fx * x / img.w) +
                                        tex_phase);
                    out.at(c, y, x) =
                        std::clamp(gain[c] * img.at(c, y, x) + bias[c] + t, 0.0, 1.0);
                }
        return out;
    }
};

inline Image sample_around(const Image& proto, const ToyTaskConfig& cfg, Rng& rng) {
    Image img = proto;
    add_clamped(img, low_freq_field(rng, cfg.image_hw, cfg.content_noise));
    double brightness = rng.uniform(-cfg.brightness_jitter, cfg.brightness_jitter);
    for (auto& v : img.data)
        v = std::clamp(v + brightness + cfg.pixel_noise * rng.normal(), 0.0, 1.0);
    return img;
}

}  // namespace toy_detail

inline std::vector<std::string> toy_class_names(int n) {
    static const char* kNames[] = {"ember", "tide", "moss", "dune", "frost", "slate",
                                   "coral", "storm", "fern", "ash"};
    if (n > static_cast<int>(std::size(kNames)))
        throw ConfigError("toy task: at most 10 classes supported");
    return std::vector<std::string>(kNames, kNames + n);
}

// Builds four domains keyed for build_scenario: "authorized" /
// "authorized.test" and a style-shifted pair "shifted" / "shifted.test".
inline std::map<std::string, Dataset> make_toy_domains(const Backbone& bb,
                                                       const ToyTaskConfig& cfg) {
    std::vector<std::string> classes = toy_class_names(cfg.n_classes);
    Mat text = zero_shot_text_features(bb, classes);

    std::vector<Image> prototypes;
    for (int k = 0; k < cfg.n_classes; ++k) {
        Rng rng(cfg.seed ^ (0xA0761D6478BD642FULL * static_cast<std::uint64_t>(k + 1)));
        prototypes.push_back(toy_detail::search_prototype(bb, text, k, cfg, rng));
    }
    Rng style_rng(cfg.seed ^ 0xE7037ED1A0B428DBULL);
    toy_detail::StyleShift shift = toy_detail::StyleShift::sample(style_rng, cfg);

    auto make_split = [&](const std::string& name, int per_class, std::uint64_t salt,
                          bool shifted, DomainTag tag) {
        Dataset ds;
        ds.name = name;
        ds.tag = tag;
        ds.class_names = classes;
        ds.samples.resize(static_cast<std::size_t>(per_class * cfg.n_classes));
        parallel_for(ds.samples.size(), [&](std::size_t i) {
            int cls = static_cast<int>(i) % cfg.n_classes;
            Rng rng(cfg.seed ^ salt ^ (0x8BB84B93962EACC9ULL * (i + 1)));
            Image img = toy_detail::sample_around(prototypes[static_cast<std::size_t>(cls)], cfg, rng);
            if (shifted) img = shift.apply(img);
            ds.samples[i].image = std::move(img);
            ds.samples[i].label = cls;
            ds.samples[i].provenance = shifted ? "toy:shifted" : "toy:authorized";
        });
        return ds;
    };

    std::map<std::string, Dataset> domains;
    domains["authorized"] =
        make_split("authorized", cfg.train_per_class, 0x1111, false, DomainTag::authorized);
    domains["authorized.test"] =
        make_split("authorized.test", cfg.test_per_class, 0x2222, false, DomainTag::test);
    domains["shifted"] =
        make_split("shifted", cfg.train_per_class, 0x3333, true, DomainTag::unauthorized);
    domains["shifted.test"] =
        make_split("shifted.test", cfg.test_per_class, 0x4444, true, DomainTag::test);
    return domains;
}

}  // namespace pfence
