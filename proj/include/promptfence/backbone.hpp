#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "promptfence/autodiff.hpp"
#include "promptfence/core.hpp"

namespace pfence {

// ---------------------------------------------------------------------------
// Images and batches
// ---------------------------------------------------------------------------

// RGB image, channels-first, values in [0,1]. index = (c*h + y)*w + x
struct Image {
    int h = 0, w = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), data(static_cast<std::size_t>(3 * h_ * w_), 0.0) {}

    double& at(int c, int y, int x) { return data[static_cast<std::size_t>((c * h + y) * w + x)]; }
    double at(int c, int y, int x) const { return data[static_cast<std::size_t>((c * h + y) * w + x)]; }
};

struct ImageBatch {
    std::vector<const Image*> images;
    std::vector<int> labels;
    DomainTag domain_tag = DomainTag::test;

    std::size_t size() const { return images.size(); }
};

// ---------------------------------------------------------------------------
// Backbone contract
// ---------------------------------------------------------------------------

struct MultiScaleFeatures {
    std::vector<Mat> per_layer;  // layer m: [B, C_m], raw (un-normalized)
    Mat final;                   // [B, C], rows unit-norm
};

enum class BackboneKind { toy, external_adapter };

struct BackboneSpec {
    BackboneKind kind = BackboneKind::toy;
    int M = 3;                              // number of tapped layers
    std::vector<int> layer_dims = {16, 32, 64};
    int C = 64;                             // final embedding dim
    int d_t = 32;                           // token embedding dim
    std::uint64_t seed = 1;

    void validate() const {
        if (M < 2) throw ConfigError("backbone: M must be >= 2");
        if (static_cast<int>(layer_dims.size()) != M)
            throw ConfigError("backbone: layer_dims size must equal M");
        if (layer_dims.back() != C)
            throw ConfigError("backbone: last layer dim must equal C");
        for (int d : layer_dims)
            if (d < 1) throw ConfigError("backbone: layer dims must be positive");
        if (d_t < 1) throw ConfigError("backbone: d_t must be positive");
    }
};

// Frozen encoder pair. Implementations must be pure functions after
// construction (no mutation in any encode call) so concurrent use is safe.
class Backbone {
public:
    virtual ~Backbone() = default;

    virtual const BackboneSpec& spec() const = 0;

    // Multi-scale taps plus the unit-normalized final feature.
    virtual MultiScaleFeatures encode_image_multiscale(const ImageBatch& batch) const = 0;

    // prompt: [len, d_t] token rows -> unit-norm [1, C] text feature.
    virtual Mat encode_text(const Mat& prompt_tokens) const = 0;

    // Differentiable route of encode_text; gradients flow to the prompt rows.
    virtual ad::Var encode_text_tape(ad::Tape& tape, ad::Var prompt_tokens) const = 0;

    // Frozen lookup: token string -> [1, d_t] embedding.
    virtual Mat token_embedding(const std::string& token) const = 0;
};

// ---------------------------------------------------------------------------
// Toy backbone: three stride-2 conv stages with seeded frozen weights,
// spatially mean-pooled per stage. The text side is a mean over token rows
// followed by a frozen linear map and normalization -- small, smooth, and
// differentiable, which is all the desk-scale pipeline needs.
// ---------------------------------------------------------------------------
class ToyBackbone final : public Backbone {
    struct ConvStage {
        int in_ch, out_ch;
        std::vector<double> w;  // [out][in][3][3]
        std::vector<double> b;  // [out]
    };

public:
    explicit ToyBackbone(BackboneSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        Rng rng(spec_.seed * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL);
        int in_ch = 3;
        for (int m = 0; m < spec_.M; ++m) {
            ConvStage st;
            st.in_ch = in_ch;
            st.out_ch = spec_.layer_dims[static_cast<std::size_t>(m)];
            st.w.resize(static_cast<std::size_t>(st.out_ch * st.in_ch * 9));
            st.b.resize(static_cast<std::size_t>(st.out_ch));
            double scale = 1.0 / std::sqrt(static_cast<double>(st.in_ch) * 9.0);
            for (auto& v : st.w) v = rng.normal() * scale;
            for (auto& v : st.b) v = rng.normal() * 0.1;
            stages_.push_back(std::move(st));
            in_ch = st.out_ch;
        }
        // text projection d_t -> C
        text_w_.resize(spec_.d_t, spec_.C);
        double ts = 1.0 / std::sqrt(static_cast<double>(spec_.d_t));
        for (Eigen::Index i = 0; i < text_w_.rows(); ++i)
            for (Eigen::Index j = 0; j < text_w_.cols(); ++j) text_w_(i, j) = rng.normal() * ts;
    }

    const BackboneSpec& spec() const override { return spec_; }

    MultiScaleFeatures encode_image_multiscale(const ImageBatch& batch) const override {
        if (batch.size() == 0) throw DataError("encode_image_multiscale: empty batch");
        const int B = static_cast<int>(batch.size());
        MultiScaleFeatures out;
        out.per_layer.reserve(static_cast<std::size_t>(spec_.M));
        for (int m = 0; m < spec_.M; ++m)
            out.per_layer.emplace_back(B, spec_.layer_dims[static_cast<std::size_t>(m)]);
        out.final.resize(B, spec_.C);

        parallel_for(static_cast<std::size_t>(B), [&](std::size_t i) {
            encode_one(*batch.images[i], out, static_cast<int>(i));
        });
        return out;
    }

    Mat encode_text(const Mat& prompt_tokens) const override {
        if (prompt_tokens.cols() != spec_.d_t)
            throw ConfigError("encode_text: token dimension does not match backbone d_t");
        if (prompt_tokens.rows() < 1) throw ConfigError("encode_text: empty prompt");
        Mat pooled = prompt_tokens.colwise().mean();  // [1, d_t]
        Mat t = pooled * text_w_;                     // [1, C]
        double n = t.row(0).norm();
        if (n == 0.0) throw NumericError("encode_text: degenerate zero feature");
        return t / n;
    }

    ad::Var encode_text_tape(ad::Tape& tape, ad::Var prompt_tokens) const override {
        if (tape.value(prompt_tokens).cols() != spec_.d_t)
            throw ConfigError("encode_text: token dimension does not match backbone d_t");
        ad::Var pooled = tape.mean_rows(prompt_tokens);
        ad::Var proj = tape.matmul(pooled, tape.leaf(text_w_));
        return tape.normalize_rows(proj);
    }

    Mat token_embedding(const std::string& token) const override {
        std::uint64_t h = fnv1a(fnv1a_init(), token);
        Rng rng(h ^ (spec_.seed * 0xA24BAED4963EE407ULL));
        Mat e(1, spec_.d_t);
        double s = 1.0 / std::sqrt(static_cast<double>(spec_.d_t));
        for (Eigen::Index j = 0; j < e.cols(); ++j) e(0, j) = rng.normal() * s;
        return e;
    }

    // Content hash over all frozen weights; trainer uses it to prove the
    // backbone was untouched by a run.
    std::uint64_t weights_hash() const {
        std::uint64_t h = fnv1a_init();
        for (const auto& st : stages_) {
            h = fnv1a(h, st.w.data(), st.w.size() * sizeof(double));
            h = fnv1a(h, st.b.data(), st.b.size() * sizeof(double));
        }
        h = fnv1a(h, text_w_);
        return h;
    }

private:
    BackboneSpec spec_;
    std::vector<ConvStage> stages_;
    Mat text_w_;  // [d_t, C]

    // stride-2 3x3 conv with zero padding, tanh activation
    static void conv_stage(const ConvStage& st, const std::vector<double>& in, int h, int w,
                           std::vector<double>& out, int& oh, int& ow) {
        oh = (h + 1) / 2;
        ow = (w + 1) / 2;
        out.assign(static_cast<std::size_t>(st.out_ch * oh * ow), 0.0);
        for (int o = 0; o < st.out_ch; ++o) {
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x) {
                    double acc = st.b[static_cast<std::size_t>(o)];
                    for (int c = 0; c < st.in_ch; ++c) {
                        const double* wp = &st.w[static_cast<std::size_t>(((o * st.in_ch) + c) * 9)];
                        for (int dy = 0; dy < 3; ++dy) {
                            int sy = 2 * y + dy - 1;
                            if (sy < 0 || sy >= h) continue;
                            for (int dx = 0; dx < 3; ++dx) {
                                int sx = 2 * x + dx - 1;
                                if (sx < 0 || sx >= w) continue;
                                acc += wp[dy * 3 + dx] *
                                       in[static_cast<std::size_t>((c * h + sy) * w + sx)];
                            }
                        }
                    }
                    out[static_cast<std::size_t>((o * oh + y) * ow + x)] = std::tanh(acc);
                }
            }
        }
    }

    void encode_one(const Image& img, MultiScaleFeatures& out, int row) const {
        if (img.h < (1 << spec_.M) || img.w < (1 << spec_.M))
            throw ConfigError("encode_image_multiscale: image too small for configured taps");
        std::vector<double> cur = img.data, next;
        int h = img.h, w = img.w;
        for (int m = 0; m < spec_.M; ++m) {
            const ConvStage& st = stages_[static_cast<std::size_t>(m)];
            int oh = 0, ow = 0;
            conv_stage(st, cur, h, w, next, oh, ow);
            // global mean pool per channel
            double inv = 1.0 / static_cast<double>(oh * ow);
            for (int c = 0; c < st.out_ch; ++c) {
                double s = 0.0;
                const double* p = &next[static_cast<std::size_t>(c * oh * ow)];
                for (int k = 0; k < oh * ow; ++k) s += p[k];
                out.per_layer[static_cast<std::size_t>(m)](row, c) = s * inv;
            }
            cur.swap(next);
            h = oh;
            w = ow;
        }
        double n = out.per_layer.back().row(row).norm();
        if (n == 0.0) throw NumericError("encode_image_multiscale: zero final feature");
        out.final.row(row) = out.per_layer.back().row(row) / n;
    }
};

// ---------------------------------------------------------------------------
// Factory. External adapters register themselves; the toy backbone is built
// directly from the spec.
// ---------------------------------------------------------------------------
using BackboneFactory = std::function<std::unique_ptr<Backbone>(const BackboneSpec&)>;

inline BackboneFactory& external_backbone_factory() {
    static BackboneFactory factory;
    return factory;
}

inline std::unique_ptr<Backbone> make_backbone(const BackboneSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case BackboneKind::toy:
            return std::make_unique<ToyBackbone>(spec);
        case BackboneKind::external_adapter:
            if (!external_backbone_factory())
                throw ConfigError("backbone kind 'external-adapter' requires a registered factory");
            return external_backbone_factory()(spec);
    }
    throw ConfigError("backbone: unknown kind");
}

// ---------------------------------------------------------------------------
// Zero-shot classification with a fixed template prompt per class. Rows of
// the result are softmax probabilities; argmax is the pseudo-label and the
// max entry the confidence score.
// ---------------------------------------------------------------------------
inline Mat zero_shot_text_features(const Backbone& bb, const std::vector<std::string>& class_names) {
    if (class_names.empty()) throw ConfigError("zero_shot: empty class list");
    static const char* kTemplate[] = {"a", "photo", "of", "a"};
    const int d_t = bb.spec().d_t;
    Mat feats(static_cast<Eigen::Index>(class_names.size()), bb.spec().C);
    for (std::size_t k = 0; k < class_names.size(); ++k) {
        Mat prompt(5, d_t);
        for (int r = 0; r < 4; ++r) prompt.row(r) = bb.token_embedding(kTemplate[r]).row(0);
        prompt.row(4) = bb.token_embedding(class_names[k]).row(0);
        feats.row(static_cast<Eigen::Index>(k)) = bb.encode_text(prompt).row(0);
    }
    return feats;
}

inline Mat zero_shot_probabilities(const Mat& final_features, const Mat& text_features, double tau) {
    if (tau <= 0.0) throw ConfigError("zero_shot: temperature must be positive");
    Mat logits = (final_features * text_features.transpose()) / tau;
    Mat probs(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        double mx = logits.row(i).maxCoeff();
        Eigen::ArrayXd e = (logits.row(i).array() - mx).exp();
        probs.row(i) = (e / e.sum()).matrix();
    }
    return probs;
}

inline Mat zero_shot_classify(const Backbone& bb, const ImageBatch& batch,
                              const std::vector<std::string>& class_names, double tau = 0.07) {
    Mat text = zero_shot_text_features(bb, class_names);
    MultiScaleFeatures ms = bb.encode_image_multiscale(batch);
    return zero_shot_probabilities(ms.final, text, tau);
}

}  // namespace pfence
