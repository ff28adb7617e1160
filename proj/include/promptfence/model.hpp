#pragma once

#include <string>
#include <vector>

#include "promptfence/backbone.hpp"
#include "promptfence/dataset.hpp"
#include "promptfence/ip_prompt.hpp"
#include "promptfence/objective.hpp"
#include "promptfence/style_bank.hpp"
#include "promptfence/tensor_archive.hpp"

namespace pfence {

// Encoded dataset: the frozen encoder's outputs for every sample, computed
// once per run. Training and evaluation never touch pixels again.
struct FeatureSet {
    std::vector<Mat> per_layer;  // layer m: [S, C_m]
    Mat final;                   // [S, C]
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }

    MultiScaleFeatures slice(const std::vector<std::size_t>& idx) const {
        MultiScaleFeatures ms;
        ms.per_layer.reserve(per_layer.size());
        for (const Mat& layer : per_layer) {
            Mat sub(static_cast<Eigen::Index>(idx.size()), layer.cols());
            for (std::size_t i = 0; i < idx.size(); ++i)
                sub.row(static_cast<Eigen::Index>(i)) = layer.row(static_cast<Eigen::Index>(idx[i]));
            ms.per_layer.push_back(std::move(sub));
        }
        ms.final.resize(static_cast<Eigen::Index>(idx.size()), final.cols());
        for (std::size_t i = 0; i < idx.size(); ++i)
            ms.final.row(static_cast<Eigen::Index>(i)) = final.row(static_cast<Eigen::Index>(idx[i]));
        return ms;
    }

    std::vector<int> labels_at(const std::vector<std::size_t>& idx) const {
        std::vector<int> out;
        out.reserve(idx.size());
        for (std::size_t i : idx) out.push_back(labels[i]);
        return out;
    }
};

inline FeatureSet encode_dataset(const Backbone& bb, const Dataset& ds) {
    FeatureSet fs;
    MultiScaleFeatures ms = bb.encode_image_multiscale(ds.all());
    fs.per_layer = std::move(ms.per_layer);
    fs.final = std::move(ms.final);
    fs.labels.reserve(ds.size());
    for (const auto& s : ds.samples) fs.labels.push_back(s.label);
    return fs;
}

// Trainable state: projector plus STAM. The backbone stays outside on
// purpose -- nothing here may mutate it.
struct PromptModel {
    ProjectorParams projector;
    StamParams stam;

    static PromptModel init(const BackboneSpec& spec, std::uint64_t seed) {
        return PromptModel{ProjectorParams::init(spec, seed), StamParams::init(spec.C, seed)};
    }

    std::vector<std::pair<std::string, Mat*>> named() {
        auto out = projector.named();
        for (auto& kv : stam.named()) out.push_back(kv);
        return out;
    }

    std::uint64_t params_hash() {
        std::uint64_t h = fnv1a_init();
        for (auto& [name, m] : named()) {
            h = fnv1a(h, name);
            h = fnv1a(h, *m);
        }
        return h;
    }

    void save(const std::string& path) {
        std::vector<archive::Entry> entries;
        for (auto& [name, m] : named()) entries.push_back({name, *m});
        archive::save(path, entries);
    }

    void load(const std::string& path) {
        auto entries = archive::load(path);
        auto names = named();
        if (entries.size() != names.size()) throw DataError("checkpoint: tensor count mismatch");
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].name != names[i].first)
                throw DataError("checkpoint: unexpected tensor '" + entries[i].name + "'");
            if (entries[i].value.rows() != names[i].second->rows() ||
                entries[i].value.cols() != names[i].second->cols())
                throw DataError("checkpoint: shape mismatch for '" + entries[i].name + "'");
            *names[i].second = entries[i].value;
        }
    }
};

inline Mat class_embedding_matrix(const Backbone& bb, const std::vector<std::string>& class_names) {
    if (class_names.empty()) throw ConfigError("class_embedding_matrix: empty class list");
    Mat emb(static_cast<Eigen::Index>(class_names.size()), bb.spec().d_t);
    for (std::size_t k = 0; k < class_names.size(); ++k)
        emb.row(static_cast<Eigen::Index>(k)) = bb.token_embedding(class_names[k]).row(0);
    return emb;
}

// Plain forward: batch features -> class text features [N, C]. The domain
// and image tokens come from the batch itself, which is exactly what happens
// at inference time.
inline Mat text_features_for_batch(const PromptModel& model, const Backbone& bb,
                                   const MultiScaleFeatures& ms, const Mat& class_embeddings) {
    DomainToken t = project_domain_token(style_statistics(ms), model.projector);
    ImageTokens v = project_image_tokens(ms, model.projector);
    std::vector<Prompt> prompts = assemble_prompts(t, v, class_embeddings);
    Mat f_t(class_embeddings.rows(), bb.spec().C);
    for (const Prompt& p : prompts)
        f_t.row(p.class_index) = bb.encode_text(p.tokens).row(0);
    return f_t;
}

// Inference rule: argmax over classes of cosine similarity between the
// sample's visual feature and each class's prompt-derived text feature.
// Ties break to the lowest class index.
inline std::vector<int> predict(const PromptModel& model, const Backbone& bb,
                                const MultiScaleFeatures& ms, const Mat& class_embeddings) {
    Mat f_t = text_features_for_batch(model, bb, ms, class_embeddings);
    Mat sims = ms.final * f_t.transpose();
    std::vector<int> out(static_cast<std::size_t>(sims.rows()), 0);
    for (Eigen::Index i = 0; i < sims.rows(); ++i) {
        int best = 0;
        for (Eigen::Index k = 1; k < sims.cols(); ++k)
            if (sims(i, k) > sims(i, best)) best = static_cast<int>(k);
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training-step graph. One domain branch: style stats -> domain token ->
// per-class prompts -> text features; plus the attention-enhanced visual
// route against that domain's bank.
// ---------------------------------------------------------------------------
struct BranchVars {
    ad::Var text_features;    // [N, C]
    ad::Var sims;             // cosine(f_v, f_t) [B, N]
    ad::Var sims_enhanced;    // cosine(normalized s_v, f_t) [B, N]
    ad::Var domain_token;     // [1, d_t]
};

struct StepGraph {
    ProjectorVars projector;
    StamVars stam;
    BranchVars a, u;
    losses::TotalVars parts;
    ad::Var total;
};

namespace detail {

inline ad::Var branch_text_features(ad::Tape& tape, const Backbone& bb, ad::Var domain_token,
                                    ad::Var image_tokens, ad::Var class_embeddings) {
    const Mat& emb = tape.value(class_embeddings);
    std::vector<ad::Var> rows;
    rows.reserve(static_cast<std::size_t>(emb.rows()));
    for (Eigen::Index k = 0; k < emb.rows(); ++k) {
        // per-class slice as a constant leaf; class embeddings are frozen
        ad::Var cls = tape.leaf(emb.row(k));
        ad::Var prompt = prompt_tape(tape, domain_token, image_tokens, cls);
        rows.push_back(bb.encode_text_tape(tape, prompt));
    }
    return tape.vconcat(rows);
}

inline BranchVars build_branch(ad::Tape& tape, const Backbone& bb, const MultiScaleFeatures& ms,
                               ad::Var image_tokens, const ProjectorVars& pv, const StamVars& sv,
                               const FeatureBank* bank, ad::Var class_embeddings) {
    BranchVars br;
    ad::Var stats = tape.leaf(style_statistics(ms).concat);
    br.domain_token = domain_token_tape(tape, stats, pv);
    br.text_features = branch_text_features(tape, bb, br.domain_token, image_tokens, class_embeddings);
    ad::Var fv = tape.leaf(ms.final);
    br.sims = tape.matmul(fv, tape.transpose(br.text_features));
    if (bank != nullptr) {
        bank->verify();
        ad::Var s = stam_tape(tape, fv, tape.leaf(bank->centroids), sv);
        br.sims_enhanced = tape.matmul(tape.normalize_rows(s), tape.transpose(br.text_features));
    }
    return br;
}

}  // namespace detail

// Joint graph for one optimizer step over a paired (authorized, unauthorized)
// micro-batch. Image tokens are shared between the two prompts and come from
// the union of both batches' content features.
inline StepGraph build_protection_graph(ad::Tape& tape, const Backbone& bb, const PromptModel& model,
                                        const MultiScaleFeatures& ms_a, const std::vector<int>& y_a,
                                        const MultiScaleFeatures& ms_u, const std::vector<int>& y_u,
                                        const FeatureBank& bank_a, const FeatureBank& bank_u,
                                        const Mat& class_embeddings, const ObjectiveConfig& cfg) {
    const int n_classes = static_cast<int>(class_embeddings.rows());
    StepGraph g;
    g.projector = ProjectorVars::leaves(tape, model.projector);
    g.stam = StamVars::leaves(tape, model.stam);
    ad::Var emb = tape.leaf(class_embeddings);

    std::vector<ad::Var> union_means;
    for (std::size_t m = 0; m < ms_a.per_layer.size(); ++m) {
        Mat stacked(ms_a.per_layer[m].rows() + ms_u.per_layer[m].rows(), ms_a.per_layer[m].cols());
        stacked << ms_a.per_layer[m], ms_u.per_layer[m];
        union_means.push_back(tape.leaf(stacked.colwise().mean()));
    }
    ad::Var image_tokens = image_tokens_tape(tape, union_means, g.projector);

    g.a = detail::build_branch(tape, bb, ms_a, image_tokens, g.projector, g.stam, &bank_a, emb);
    g.u = detail::build_branch(tape, bb, ms_u, image_tokens, g.projector, g.stam, &bank_u, emb);

    g.parts.l_m = losses::mse(tape, g.a.domain_token, g.u.domain_token);
    g.parts.l_a = losses::contrastive_sims(tape, g.a.sims, y_a, cfg.tau);
    g.parts.l_u = losses::contrastive_sims(tape, g.u.sims, y_u, cfg.tau);
    g.parts.l_ai = losses::contrastive_sims(tape, g.a.sims_enhanced, y_a, cfg.tau);
    g.parts.l_ui = losses::contrastive_sims(tape, g.u.sims_enhanced, y_u, cfg.tau);
    g.parts.l_kl = losses::kl_rows(tape, g.a.text_features, g.u.text_features);
    g.parts.l_en = losses::entropy(tape, g.u.sims, cfg.tau);

    LossCaps caps{cfg.effective_cap_ce(n_classes), cfg.effective_cap_kl(n_classes), cfg.cap_m};
    g.total = losses::combine(tape, g.parts, cfg.lambda1, cfg.lambda2, caps);
    return g;
}

// Supervised-baseline graph: authorized branch only, aligned with plain
// cross-entropy on both the raw and enhanced routes. No protection terms.
inline StepGraph build_baseline_graph(ad::Tape& tape, const Backbone& bb, const PromptModel& model,
                                      const MultiScaleFeatures& ms_a, const std::vector<int>& y_a,
                                      const FeatureBank& bank_a, const Mat& class_embeddings,
                                      const ObjectiveConfig& cfg) {
    StepGraph g;
    g.projector = ProjectorVars::leaves(tape, model.projector);
    g.stam = StamVars::leaves(tape, model.stam);
    ad::Var emb = tape.leaf(class_embeddings);

    std::vector<ad::Var> means;
    for (const Mat& layer : ms_a.per_layer) means.push_back(tape.leaf(layer.colwise().mean()));
    ad::Var image_tokens = image_tokens_tape(tape, means, g.projector);

    g.a = detail::build_branch(tape, bb, ms_a, image_tokens, g.projector, g.stam, &bank_a, emb);
    g.parts.l_a = losses::contrastive_sims(tape, g.a.sims, y_a, cfg.tau);
    g.parts.l_ai = losses::contrastive_sims(tape, g.a.sims_enhanced, y_a, cfg.tau);
    g.total = tape.add(g.parts.l_a, g.parts.l_ai);
    g.parts.total = g.total;
    return g;
}

inline LossBreakdown read_breakdown(const ad::Tape& tape, const StepGraph& g,
                                    const ObjectiveConfig& cfg) {
    LossBreakdown b;
    auto get = [&](ad::Var v) { return v.valid() ? tape.value(v)(0, 0) : 0.0; };
    b.l_m = get(g.parts.l_m);
    b.l_a = get(g.parts.l_a);
    b.l_u = get(g.parts.l_u);
    b.l_ai = get(g.parts.l_ai);
    b.l_ui = get(g.parts.l_ui);
    b.l_kl = get(g.parts.l_kl);
    b.l_en = get(g.parts.l_en);
    b.total = get(g.total);
    b.lambda1 = cfg.lambda1;
    b.lambda2 = cfg.lambda2;
    return b;
}

}  // namespace pfence
