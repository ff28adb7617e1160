#pragma once

#include <algorithm>
#include <array>
#include <string>

#include "promptfence/backbone.hpp"
#include "promptfence/core.hpp"

namespace pfence {

// The style-augmentation pool: label-preserving, content-preserving ops that
// only move image statistics. Geometric ops sample with clamp-to-edge
// bilinear interpolation so no synthetic black borders appear.
enum class AugKind {
    AutoContrast,
    Brightness,
    Color,
    Contrast,
    Equalize,
    Identity,
    Posterize,
    Rotate,
    Sharpness,
    ShearX,
    ShearY,
    Solarize,
    TranslateX,
    TranslateY,
};

inline constexpr int kAugPoolSize = 14;

// One row per op: the documented magnitude range. Ops without a knob use
// [0, 0].
struct AugInfo {
    AugKind kind;
    const char* name;
    double lo, hi;
};

inline constexpr std::array<AugInfo, kAugPoolSize> kAugTable = {{
    {AugKind::AutoContrast, "AutoContrast", 0.0, 0.0},
    {AugKind::Brightness, "Brightness", 0.5, 1.5},    // multiplicative factor
    {AugKind::Color, "Color", 0.5, 1.5},              // saturation blend factor
    {AugKind::Contrast, "Contrast", 0.5, 1.5},        // contrast blend factor
    {AugKind::Equalize, "Equalize", 0.0, 0.0},
    {AugKind::Identity, "Identity", 0.0, 0.0},
    {AugKind::Posterize, "Posterize", 3.0, 8.0},      // bits kept
    {AugKind::Rotate, "Rotate", -30.0, 30.0},         // degrees
    {AugKind::Sharpness, "Sharpness", 0.5, 1.5},      // blend factor vs smoothed
    {AugKind::ShearX, "ShearX", -0.3, 0.3},           // shear coefficient
    {AugKind::ShearY, "ShearY", -0.3, 0.3},
    {AugKind::Solarize, "Solarize", 0.5, 1.0},        // inversion threshold
    {AugKind::TranslateX, "TranslateX", -0.3, 0.3},   // fraction of width
    {AugKind::TranslateY, "TranslateY", -0.3, 0.3},   // fraction of height
}};

inline const AugInfo& aug_info(AugKind kind) {
    for (const auto& row : kAugTable)
        if (row.kind == kind) return row;
    throw ConfigError("augment: unknown op kind");
}

inline AugKind aug_kind_from_name(const std::string& name) {
    for (const auto& row : kAugTable)
        if (name == row.name) return row.kind;
    throw ConfigError("augment: unknown op name '" + name + "'");
}

struct AugmentationOp {
    AugKind kind = AugKind::Identity;
    double magnitude = 0.0;
    std::uint64_t seed = 0;
};

// Uniformly pick an op kind and a magnitude inside its documented range.
inline AugmentationOp sample_augmentation(Rng& rng) {
    const AugInfo& info = kAugTable[static_cast<std::size_t>(rng.below(kAugPoolSize))];
    AugmentationOp op;
    op.kind = info.kind;
    op.magnitude = info.lo == info.hi ? info.lo : rng.uniform(info.lo, info.hi);
    return op;
}

namespace detail {

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

inline double luma(const Image& img, int y, int x) {
    return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

inline double sample_clamped(const Image& img, int c, double fy, double fx) {
    fy = std::clamp(fy, 0.0, static_cast<double>(img.h - 1));
    fx = std::clamp(fx, 0.0, static_cast<double>(img.w - 1));
    int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
    int y1 = std::min(y0 + 1, img.h - 1), x1 = std::min(x0 + 1, img.w - 1);
    double dy = fy - y0, dx = fx - x0;
    return (1 - dy) * ((1 - dx) * img.at(c, y0, x0) + dx * img.at(c, y0, x1)) +
           dy * ((1 - dx) * img.at(c, y1, x0) + dx * img.at(c, y1, x1));
}

// inverse-map an affine transform around the image center
template <typename MapFn>
Image warp(const Image& img, MapFn&& source_of) {
    Image out(img.h, img.w);
    const double cy = (img.h - 1) / 2.0, cx = (img.w - 1) / 2.0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            auto [sy, sx] = source_of(y - cy, x - cx);
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = sample_clamped(img, c, sy + cy, sx + cx);
        }
    return out;
}

inline Image smoothed(const Image& img) {
    // PIL-style SMOOTH kernel
    static const double k[9] = {1, 1, 1, 1, 5, 1, 1, 1, 1};
    Image out(img.h, img.w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                double acc = 0, wsum = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int sy = y + dy, sx = x + dx;
                        if (sy < 0 || sy >= img.h || sx < 0 || sx >= img.w) continue;
                        double wk = k[(dy + 1) * 3 + (dx + 1)];
                        acc += wk * img.at(c, sy, sx);
                        wsum += wk;
                    }
                out.at(c, y, x) = acc / wsum;
            }
    return out;
}

}  // namespace detail

inline Image apply_augmentation(const Image& img, const AugmentationOp& op) {
    using detail::clamp01;
    Image out = img;
    switch (op.kind) {
        case AugKind::Identity:
            return out;
        case AugKind::AutoContrast: {
            for (int c = 0; c < 3; ++c) {
                double lo = 1.0, hi = 0.0;
                for (int y = 0; y < img.h; ++y)
                    for (int x = 0; x < img.w; ++x) {
                        lo = std::min(lo, img.at(c, y, x));
                        hi = std::max(hi, img.at(c, y, x));
                    }
                double span = hi - lo;
                for (int y = 0; y < img.h; ++y)
                    for (int x = 0; x < img.w; ++x)
                        out.at(c, y, x) = span < 1e-12 ? img.at(c, y, x)
                                                       : clamp01((img.at(c, y, x) - lo) / span);
            }
            return out;
        }
        case AugKind::Brightness: {
            for (auto& v : out.data) v = clamp01(v * op.magnitude);
            return out;
        }
        case AugKind::Color: {
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x) {
                    double g = detail::luma(img, y, x);
                    for (int c = 0; c < 3; ++c)
                        out.at(c, y, x) = clamp01(g + op.magnitude * (img.at(c, y, x) - g));
                }
            return out;
        }
        case AugKind::Contrast: {
            double mean = 0;
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x) mean += detail::luma(img, y, x);
            mean /= static_cast<double>(img.h * img.w);
            for (auto& v : out.data) v = clamp01(mean + op.magnitude * (v - mean));
            return out;
        }
        case AugKind::Equalize: {
            for (int c = 0; c < 3; ++c) {
                std::array<int, 256> hist{};
                for (int y = 0; y < img.h; ++y)
                    for (int x = 0; x < img.w; ++x)
                        hist[static_cast<std::size_t>(std::lround(clamp01(img.at(c, y, x)) * 255.0))]++;
                std::array<double, 256> cdf{};
                double acc = 0, total = static_cast<double>(img.h * img.w);
                for (int b = 0; b < 256; ++b) {
                    acc += hist[static_cast<std::size_t>(b)];
                    cdf[static_cast<std::size_t>(b)] = acc / total;
                }
                for (int y = 0; y < img.h; ++y)
                    for (int x = 0; x < img.w; ++x) {
                        int b = static_cast<int>(std::lround(clamp01(img.at(c, y, x)) * 255.0));
                        out.at(c, y, x) = clamp01(cdf[static_cast<std::size_t>(b)]);
                    }
            }
            return out;
        }
        case AugKind::Posterize: {
            int bits = std::clamp(static_cast<int>(std::lround(op.magnitude)), 1, 8);
            int shift = 8 - bits;
            for (auto& v : out.data) {
                int byte = static_cast<int>(std::lround(clamp01(v) * 255.0));
                v = ((byte >> shift) << shift) / 255.0;
            }
            return out;
        }
        case AugKind::Rotate: {
            double rad = op.magnitude * M_PI / 180.0;
            double cs = std::cos(rad), sn = std::sin(rad);
            // inverse map: source = R(-theta) * dest
            return detail::warp(img, [&](double y, double x) {
                return std::pair{cs * y - sn * x, sn * y + cs * x};
            });
        }
        case AugKind::Sharpness: {
            Image blur = detail::smoothed(img);
            for (std::size_t i = 0; i < out.data.size(); ++i)
                out.data[i] = clamp01(blur.data[i] + op.magnitude * (img.data[i] - blur.data[i]));
            return out;
        }
        case AugKind::ShearX: {
            double k = op.magnitude;
            return detail::warp(img, [&](double y, double x) { return std::pair{y, x - k * y}; });
        }
        case AugKind::ShearY: {
            double k = op.magnitude;
            return detail::warp(img, [&](double y, double x) { return std::pair{y - k * x, x}; });
        }
        case AugKind::Solarize: {
            for (auto& v : out.data)
                if (v >= op.magnitude) v = clamp01(1.0 - v);
            return out;
        }
        case AugKind::TranslateX: {
            double shift = op.magnitude * img.w;
            return detail::warp(img, [&](double y, double x) { return std::pair{y, x - shift}; });
        }
        case AugKind::TranslateY: {
            double shift = op.magnitude * img.h;
            return detail::warp(img, [&](double y, double x) { return std::pair{y - shift, x}; });
        }
    }
    throw ConfigError("augment: unknown op kind");
}

inline Image apply_augmentation_chain(const Image& img, const std::vector<AugmentationOp>& ops) {
    Image out = img;
    for (const auto& op : ops) out = apply_augmentation(out, op);
    return out;
}

// ---------------------------------------------------------------------------
// Watermark: an opaque seeded noise patch replacing one corner region.
// Replacement (not blending) makes the operation idempotent.
// ---------------------------------------------------------------------------
enum class Corner { top_left, top_right, bottom_left, bottom_right };

struct WatermarkSpec {
    int patch_size = 16;
    Corner position = Corner::bottom_right;
    std::uint64_t seed = 1;

    void validate(int h, int w) const {
        if (patch_size < 1) throw ConfigError("watermark: patch size must be positive");
        if (patch_size > h || patch_size > w)
            throw DataError("watermark: patch larger than image");
        if (10 * patch_size * patch_size >= h * w)
            throw DataError("watermark: patch area must stay below 10% of the image");
    }
};

inline Image apply_watermark(const Image& img, const WatermarkSpec& spec) {
    spec.validate(img.h, img.w);
    Image out = img;
    int y0 = (spec.position == Corner::bottom_left || spec.position == Corner::bottom_right)
                 ? img.h - spec.patch_size
                 : 0;
    int x0 = (spec.position == Corner::top_right || spec.position == Corner::bottom_right)
                 ? img.w - spec.patch_size
                 : 0;
    Rng rng(spec.seed ^ 0xB5297A4D3F84D5B5ULL);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < spec.patch_size; ++y)
            for (int x = 0; x < spec.patch_size; ++x)
                out.at(c, y0 + y, x0 + x) = rng.uniform();
    return out;
}

}  // namespace pfence
