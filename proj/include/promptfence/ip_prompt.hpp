#pragma once

#include <string>
#include <utility>
#include <vector>

#include "promptfence/autodiff.hpp"
#include "promptfence/backbone.hpp"
#include "promptfence/core.hpp"

namespace pfence {

// Batch-wise style statistics: [mu_1; sigma_1; ...; mu_M; sigma_M] over the
// batch dimension, concatenated in layer order. sigma is the population
// standard deviation.
struct StyleStats {
    Mat concat;  // [1, sum_m 2*C_m]
};

struct DomainToken {
    Mat t;  // [1, d_t]
};

struct ImageTokens {
    Mat v;  // [L, d_t]
};

// Prompt row layout: row 0 domain token, rows 1..L image tokens, final row
// the class-name embedding.
struct Prompt {
    Mat tokens;  // [L+2, d_t]
    int class_index = 0;
};

// The only trainable parameters besides the attention enhancer: a two-layer
// style head (stats -> domain token) and one affine content head per tapped
// layer (layer mean -> one image token, so L == M).
struct ProjectorParams {
    Mat style_w1, style_b1;  // [S, 2*d_t], [1, 2*d_t]
    Mat style_w2, style_b2;  // [2*d_t, d_t], [1, d_t]
    std::vector<Mat> content_w;  // per layer: [C_m, d_t]
    std::vector<Mat> content_b;  // per layer: [1, d_t]

    static ProjectorParams init(const BackboneSpec& spec, std::uint64_t seed) {
        ProjectorParams p;
        int S = 0;
        for (int d : spec.layer_dims) S += 2 * d;
        const int H = 2 * spec.d_t;
        Rng rng(seed ^ 0xC2B2AE3D27D4EB4FULL);
        p.style_w1 = gaussian(rng, S, H, 1.0 / std::sqrt(static_cast<double>(S)));
        p.style_b1 = Mat::Zero(1, H);
        p.style_w2 = gaussian(rng, H, spec.d_t, 1.0 / std::sqrt(static_cast<double>(H)));
        p.style_b2 = Mat::Zero(1, spec.d_t);
        for (int d : spec.layer_dims) {
            p.content_w.push_back(gaussian(rng, d, spec.d_t, 1.0 / std::sqrt(static_cast<double>(d))));
            p.content_b.push_back(Mat::Zero(1, spec.d_t));
        }
        return p;
    }

    int stats_dim() const { return static_cast<int>(style_w1.rows()); }
    int token_count() const { return static_cast<int>(content_w.size()); }

    std::vector<std::pair<std::string, Mat*>> named() {
        std::vector<std::pair<std::string, Mat*>> out = {
            {"projector.style_w1", &style_w1}, {"projector.style_b1", &style_b1},
            {"projector.style_w2", &style_w2}, {"projector.style_b2", &style_b2}};
        for (std::size_t m = 0; m < content_w.size(); ++m) {
            out.emplace_back("projector.content_w" + std::to_string(m), &content_w[m]);
            out.emplace_back("projector.content_b" + std::to_string(m), &content_b[m]);
        }
        return out;
    }

private:
    static Mat gaussian(Rng& rng, int r, int c, double scale) {
        Mat m(r, c);
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal() * scale;
        return m;
    }
};

inline StyleStats style_statistics(const MultiScaleFeatures& ms) {
    if (ms.per_layer.empty()) throw ConfigError("style_statistics: no layers");
    const Eigen::Index B = ms.per_layer[0].rows();
    if (B < 2) throw DataError("style_statistics: degenerate batch (B < 2)");
    Eigen::Index S = 0;
    for (const Mat& layer : ms.per_layer) S += 2 * layer.cols();
    StyleStats out;
    out.concat.resize(1, S);
    Eigen::Index at = 0;
    for (const Mat& layer : ms.per_layer) {
        if (layer.rows() != B) throw ConfigError("style_statistics: inconsistent batch size");
        RowVec mu = layer.colwise().mean();
        RowVec var = (layer.rowwise() - mu).array().square().colwise().mean();
        out.concat.block(0, at, 1, layer.cols()) = mu;
        out.concat.block(0, at + layer.cols(), 1, layer.cols()) = var.array().sqrt().matrix();
        at += 2 * layer.cols();
    }
    return out;
}

// Batch-mean content features per layer, the input of the content heads.
inline std::vector<Mat> content_means(const MultiScaleFeatures& ms) {
    std::vector<Mat> out;
    out.reserve(ms.per_layer.size());
    for (const Mat& layer : ms.per_layer) out.push_back(layer.colwise().mean());
    return out;
}

inline DomainToken project_domain_token(const StyleStats& stats, const ProjectorParams& p) {
    if (stats.concat.cols() != p.style_w1.rows())
        throw ConfigError("project_domain_token: stats dimension does not match projector");
    Mat h = ((stats.concat * p.style_w1).rowwise() + p.style_b1.row(0)).array().tanh().matrix();
    return DomainToken{(h * p.style_w2).rowwise() + p.style_b2.row(0)};
}

inline Mat tokens_from_means(const std::vector<Mat>& means, const ProjectorParams& p) {
    if (means.size() != p.content_w.size())
        throw ConfigError("project_image_tokens: layer count does not match projector");
    Mat v(static_cast<Eigen::Index>(means.size()), p.content_w[0].cols());
    for (std::size_t m = 0; m < means.size(); ++m) {
        if (means[m].cols() != p.content_w[m].rows())
            throw ConfigError("project_image_tokens: layer dimension does not match projector");
        v.row(static_cast<Eigen::Index>(m)) =
            ((means[m] * p.content_w[m]).rowwise() + p.content_b[m].row(0)).row(0);
    }
    return v;
}

inline ImageTokens project_image_tokens(const MultiScaleFeatures& ms, const ProjectorParams& p) {
    if (ms.per_layer.size() != p.content_w.size())
        throw ConfigError("project_image_tokens: layer count does not match projector");
    return ImageTokens{tokens_from_means(content_means(ms), p)};
}

inline std::vector<Prompt> assemble_prompts(const DomainToken& t, const ImageTokens& v,
                                            const Mat& class_embeddings) {
    if (t.t.cols() != v.v.cols() || t.t.cols() != class_embeddings.cols())
        throw ConfigError("assemble_prompts: token dimension mismatch");
    std::vector<Prompt> prompts;
    prompts.reserve(static_cast<std::size_t>(class_embeddings.rows()));
    for (Eigen::Index k = 0; k < class_embeddings.rows(); ++k) {
        Prompt pr;
        pr.class_index = static_cast<int>(k);
        pr.tokens.resize(v.v.rows() + 2, t.t.cols());
        pr.tokens.row(0) = t.t.row(0);
        pr.tokens.middleRows(1, v.v.rows()) = v.v;
        pr.tokens.row(v.v.rows() + 1) = class_embeddings.row(k);
        prompts.push_back(std::move(pr));
    }
    return prompts;
}

// ---------------------------------------------------------------------------
// Tape builders. Parameter leaves are created once per step by the caller so
// gradients can be read back; the stats/means enter as constants (the frozen
// encoder does not require gradients).
// ---------------------------------------------------------------------------
struct ProjectorVars {
    ad::Var style_w1, style_b1, style_w2, style_b2;
    std::vector<ad::Var> content_w, content_b;

    static ProjectorVars leaves(ad::Tape& tape, const ProjectorParams& p, bool trainable = true) {
        ProjectorVars v;
        v.style_w1 = tape.leaf(p.style_w1, trainable);
        v.style_b1 = tape.leaf(p.style_b1, trainable);
        v.style_w2 = tape.leaf(p.style_w2, trainable);
        v.style_b2 = tape.leaf(p.style_b2, trainable);
        for (std::size_t m = 0; m < p.content_w.size(); ++m) {
            v.content_w.push_back(tape.leaf(p.content_w[m], trainable));
            v.content_b.push_back(tape.leaf(p.content_b[m], trainable));
        }
        return v;
    }

    // order matches ProjectorParams::named()
    std::vector<ad::Var> all() const {
        std::vector<ad::Var> out = {style_w1, style_b1, style_w2, style_b2};
        for (std::size_t m = 0; m < content_w.size(); ++m) {
            out.push_back(content_w[m]);
            out.push_back(content_b[m]);
        }
        return out;
    }
};

inline ad::Var domain_token_tape(ad::Tape& tape, ad::Var stats, const ProjectorVars& p) {
    ad::Var h = tape.tanh(tape.add_rowvec(tape.matmul(stats, p.style_w1), p.style_b1));
    return tape.add_rowvec(tape.matmul(h, p.style_w2), p.style_b2);
}

inline ad::Var image_tokens_tape(ad::Tape& tape, const std::vector<ad::Var>& means,
                                 const ProjectorVars& p) {
    std::vector<ad::Var> rows;
    rows.reserve(means.size());
    for (std::size_t m = 0; m < means.size(); ++m)
        rows.push_back(tape.add_rowvec(tape.matmul(means[m], p.content_w[m]), p.content_b[m]));
    return tape.vconcat(rows);
}

inline ad::Var prompt_tape(ad::Tape& tape, ad::Var domain_token, ad::Var image_tokens,
                           ad::Var class_embedding) {
    return tape.vconcat({domain_token, image_tokens, class_embedding});
}

}  // namespace pfence
