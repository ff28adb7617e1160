#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptfence/metrics.hpp"
#include "promptfence/model.hpp"
#include "promptfence/scenarios.hpp"

namespace pfence {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 64;
    double lr = 1e-5;  // published default; toy-scale runs override in config
    double lambda1 = 0.1;
    double lambda2 = 0.1;
    double tau = 0.07;
    double cap_m = 10.0;
    int bank_shots = 5;  // K
    double zero_shot_tau = 0.07;
    std::uint64_t seed = 1;

    void validate() const {
        if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
        if (batch_size < 2) throw ConfigError("train: batch size must be >= 2");
        if (lr <= 0) throw ConfigError("train: learning rate must be positive");
        if (tau <= 0) throw ConfigError("train: tau must be positive");
        if (cap_m <= 0) throw ConfigError("train: cap_m must be positive");
        if (bank_shots < 1) throw ConfigError("train: bank shots must be >= 1");
    }

    ObjectiveConfig objective() const {
        ObjectiveConfig o;
        o.tau = tau;
        o.lambda1 = lambda1;
        o.lambda2 = lambda2;
        o.cap_m = cap_m;
        return o;
    }

    nlohmann::json to_json() const {
        return {{"epochs", epochs},       {"batch_size", batch_size}, {"lr", lr},
                {"lambda1", lambda1},     {"lambda2", lambda2},       {"tau", tau},
                {"cap_m", cap_m},         {"bank_shots", bank_shots},
                {"zero_shot_tau", zero_shot_tau},                     {"seed", seed}};
    }
};

// ---------------------------------------------------------------------------
// Adam over the named parameter list. State is keyed by position; the
// parameter list must be stable across steps.
// ---------------------------------------------------------------------------
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads) {
        if (params.size() != grads.size()) throw ConfigError("adam: parameter/gradient mismatch");
        if (m_.empty()) {
            for (const Mat* p : params) {
                m_.push_back(Mat::Zero(p->rows(), p->cols()));
                v_.push_back(Mat::Zero(p->rows(), p->cols()));
            }
        }
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const Mat& g = *grads[i];
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
            Mat mhat = m_[i] / bc1;
            Mat vhat = v_[i] / bc2;
            *params[i] -= lr_ * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix());
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<Mat> m_, v_;
};

// Reshuffling index stream; wraps around the dataset so two domains of
// different size can be drawn in lockstep.
class IndexStream {
public:
    IndexStream(std::size_t n, std::uint64_t seed) : rng_(seed) {
        order_.resize(n);
        for (std::size_t i = 0; i < n; ++i) order_[i] = i;
        rng_.shuffle(order_);
    }

    std::vector<std::size_t> next(std::size_t count) {
        std::vector<std::size_t> out;
        out.reserve(count);
        while (out.size() < count) {
            if (pos_ == order_.size()) {
                pos_ = 0;
                rng_.shuffle(order_);
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    Rng rng_;
};

// ---------------------------------------------------------------------------
// Bank construction from zero-shot confidences: true labels for the
// authorized domain, pseudo-labels for the unauthorized one.
// ---------------------------------------------------------------------------
inline FeatureBank bank_from_features(const Backbone& bb, const FeatureSet& fs,
                                      const std::vector<std::string>& class_names, int shots,
                                      double zs_tau, bool use_true_labels, DomainTag tag) {
    Mat text = zero_shot_text_features(bb, class_names);
    Mat probs = zero_shot_probabilities(fs.final, text, zs_tau);
    std::vector<int> labels(fs.size());
    std::vector<double> confidence(fs.size());
    for (std::size_t i = 0; i < fs.size(); ++i) {
        Eigen::Index argmax = 0;
        probs.row(static_cast<Eigen::Index>(i)).maxCoeff(&argmax);
        confidence[i] = probs(static_cast<Eigen::Index>(i), argmax);
        labels[i] = use_true_labels ? fs.labels[i] : static_cast<int>(argmax);
    }
    return build_feature_bank(fs.final, labels, confidence, static_cast<int>(class_names.size()),
                              shots, tag);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------
struct TrainOutcome {
    PromptModel model;
    FeatureBank bank_a;
    std::optional<FeatureBank> bank_u;
    std::vector<LossBreakdown> epoch_means;
    nlohmann::json manifest;
};

namespace detail {

inline void check_finite_breakdown(const LossBreakdown& b) {
    struct Term {
        const char* name;
        double value;
    } terms[] = {{"l_m", b.l_m},   {"l_a", b.l_a}, {"l_u", b.l_u},   {"l_ai", b.l_ai},
                 {"l_ui", b.l_ui}, {"l_kl", b.l_kl}, {"l_en", b.l_en}, {"total", b.total}};
    for (const auto& t : terms)
        if (!std::isfinite(t.value))
            throw NumericError(std::string("training aborted: loss term '") + t.name +
                               "' is not finite");
}

inline void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
    acc.l_m += b.l_m;
    acc.l_a += b.l_a;
    acc.l_u += b.l_u;
    acc.l_ai += b.l_ai;
    acc.l_ui += b.l_ui;
    acc.l_kl += b.l_kl;
    acc.l_en += b.l_en;
    acc.total += b.total;
}

inline nlohmann::json breakdown_json(const LossBreakdown& b) {
    return {{"l_m", b.l_m},   {"l_a", b.l_a},   {"l_u", b.l_u},   {"l_ai", b.l_ai},
            {"l_ui", b.l_ui}, {"l_kl", b.l_kl}, {"l_en", b.l_en}, {"total", b.total}};
}

class LossLog {
public:
    explicit LossLog(const std::string& path) {
        if (path.empty()) return;
        out_.open(path);
        if (!out_) throw DataError("trainer: cannot open loss log " + path);
        out_ << "step,l_m,l_a,l_u,l_ai,l_ui,l_kl,l_en,total\n";
    }

    void append(int step, const LossBreakdown& b) {
        if (!out_.is_open()) return;
        out_ << step << ',' << b.l_m << ',' << b.l_a << ',' << b.l_u << ',' << b.l_ai << ','
             << b.l_ui << ',' << b.l_kl << ',' << b.l_en << ',' << b.total << '\n';
    }

private:
    std::ofstream out_;
};

}  // namespace detail

struct TrainerPaths {
    std::string loss_csv;    // optional
    std::string checkpoint;  // optional
};

// Joint protection training over a paired (authorized, unauthorized) stream.
// Banks are built once up front and stay frozen; only projector and STAM
// parameters receive updates.
inline TrainOutcome train_target_specified(const Backbone& bb, const Dataset& d_a,
                                           const Dataset& d_u, const TrainConfig& cfg,
                                           const TrainerPaths& paths = {},
                                           const std::vector<std::string>& warnings = {}) {
    cfg.validate();
    if (d_a.class_names != d_u.class_names)
        throw DataError("train: authorized and unauthorized domains must share the label space");
    if (d_a.size() < 2 || d_u.size() < 2) throw DataError("train: domains need at least 2 samples");

    const ObjectiveConfig obj = cfg.objective();
    FeatureSet fs_a = encode_dataset(bb, d_a);
    FeatureSet fs_u = encode_dataset(bb, d_u);
    Mat class_emb = class_embedding_matrix(bb, d_a.class_names);

    TrainOutcome out;
    out.model = PromptModel::init(bb.spec(), cfg.seed);
    out.bank_a = bank_from_features(bb, fs_a, d_a.class_names, cfg.bank_shots, cfg.zero_shot_tau,
                                    /*use_true_labels=*/true, DomainTag::authorized);
    out.bank_u = bank_from_features(bb, fs_u, d_u.class_names, cfg.bank_shots, cfg.zero_shot_tau,
                                    /*use_true_labels=*/false, DomainTag::unauthorized);

    const std::size_t batch =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), std::min(fs_a.size(), fs_u.size()));
    const std::size_t steps_per_epoch =
        (std::max(fs_a.size(), fs_u.size()) + batch - 1) / batch;

    Adam adam(cfg.lr);
    IndexStream stream_a(fs_a.size(), cfg.seed ^ 0x1D2B9F07A3C5E811ULL);
    IndexStream stream_u(fs_u.size(), cfg.seed ^ 0x7A4D30F1C89B2657ULL);
    detail::LossLog log(paths.loss_csv);

    auto named = out.model.named();
    int global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        LossBreakdown epoch_acc;
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            std::vector<std::size_t> ia = stream_a.next(batch);
            std::vector<std::size_t> iu = stream_u.next(batch);

            ad::Tape tape;
            StepGraph g = build_protection_graph(tape, bb, out.model, fs_a.slice(ia),
                                                 fs_a.labels_at(ia), fs_u.slice(iu),
                                                 fs_u.labels_at(iu), out.bank_a, *out.bank_u,
                                                 class_emb, obj);
            LossBreakdown b = read_breakdown(tape, g, obj);
            detail::check_finite_breakdown(b);
            tape.backward(g.total);

            std::vector<Mat*> params;
            std::vector<const Mat*> grads;
            std::vector<ad::Var> leaves = g.projector.all();
            for (ad::Var v : g.stam.all()) leaves.push_back(v);
            for (std::size_t i = 0; i < leaves.size(); ++i) {
                params.push_back(named[i].second);
                grads.push_back(&tape.grad(leaves[i]));
            }
            adam.step(params, grads);

            log.append(global_step++, b);
            detail::accumulate(epoch_acc, b);
        }
        double inv = 1.0 / static_cast<double>(steps_per_epoch);
        LossBreakdown mean = epoch_acc;
        mean.l_m *= inv;
        mean.l_a *= inv;
        mean.l_u *= inv;
        mean.l_ai *= inv;
        mean.l_ui *= inv;
        mean.l_kl *= inv;
        mean.l_en *= inv;
        mean.total *= inv;
        mean.lambda1 = obj.lambda1;
        mean.lambda2 = obj.lambda2;
        out.epoch_means.push_back(mean);
    }

    out.bank_a.verify();
    out.bank_u->verify();

    if (!paths.checkpoint.empty()) out.model.save(paths.checkpoint);

    out.manifest["mode"] = "protection";
    out.manifest["config"] = cfg.to_json();
    out.manifest["datasets"] = {{"authorized", hash_hex(d_a.content_hash())},
                                {"unauthorized", hash_hex(d_u.content_hash())}};
    out.manifest["banks"] = {{"authorized", hash_hex(out.bank_a.content_hash)},
                             {"unauthorized", hash_hex(out.bank_u->content_hash)}};
    out.manifest["epochs"] = nlohmann::json::array();
    for (const auto& e : out.epoch_means) out.manifest["epochs"].push_back(detail::breakdown_json(e));
    out.manifest["checkpoint_hash"] = hash_hex(out.model.params_hash());
    out.manifest["warnings"] = warnings;
    return out;
}

// Restricted setting: only the authorized domain exists. The unauthorized
// domain is synthesized from the augmentation pool, then training proceeds
// exactly as in the target-specified case.
inline TrainOutcome train_target_free(const Backbone& bb, const Dataset& d_a, int n_aug,
                                      const TrainConfig& cfg, const TrainerPaths& paths = {}) {
    Dataset d_u = generate_unauthorized_domain(d_a, n_aug, cfg.seed);
    std::vector<std::string> warnings;
    if (n_aug == 0) {
        warnings.push_back(
            "n_aug=0: generated unauthorized domain equals the authorized domain; "
            "the non-transferability objective is vacuous");
        std::fprintf(stderr, "promptfence: warning: %s\n", warnings.back().c_str());
    }
    TrainOutcome out = train_target_specified(bb, d_a, d_u, cfg, paths, warnings);
    out.manifest["mode"] = "protection";
    out.manifest["generated_unauthorized"] = {{"n_aug", n_aug},
                                              {"content_hash", hash_hex(d_u.content_hash())}};
    return out;
}

// Supervised baseline: same architecture, authorized domain only, plain
// alignment losses. This is the reference every drop rate is measured
// against.
inline TrainOutcome train_baseline(const Backbone& bb, const Dataset& d_a, const TrainConfig& cfg,
                                   const TrainerPaths& paths = {}) {
    cfg.validate();
    if (d_a.size() < 2) throw DataError("train: domain needs at least 2 samples");
    const ObjectiveConfig obj = cfg.objective();
    FeatureSet fs_a = encode_dataset(bb, d_a);
    Mat class_emb = class_embedding_matrix(bb, d_a.class_names);

    TrainOutcome out;
    out.model = PromptModel::init(bb.spec(), cfg.seed);
    out.bank_a = bank_from_features(bb, fs_a, d_a.class_names, cfg.bank_shots, cfg.zero_shot_tau,
                                    true, DomainTag::authorized);

    const std::size_t batch =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), fs_a.size());
    const std::size_t steps_per_epoch = (fs_a.size() + batch - 1) / batch;

    Adam adam(cfg.lr);
    IndexStream stream_a(fs_a.size(), cfg.seed ^ 0x1D2B9F07A3C5E811ULL);
    detail::LossLog log(paths.loss_csv);

    auto named = out.model.named();
    int global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        LossBreakdown epoch_acc;
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            std::vector<std::size_t> ia = stream_a.next(batch);
            ad::Tape tape;
            StepGraph g = build_baseline_graph(tape, bb, out.model, fs_a.slice(ia),
                                               fs_a.labels_at(ia), out.bank_a, class_emb, obj);
            LossBreakdown b = read_breakdown(tape, g, obj);
            detail::check_finite_breakdown(b);
            tape.backward(g.total);

            std::vector<Mat*> params;
            std::vector<const Mat*> grads;
            std::vector<ad::Var> leaves = g.projector.all();
            for (ad::Var v : g.stam.all()) leaves.push_back(v);
            for (std::size_t i = 0; i < leaves.size(); ++i) {
                params.push_back(named[i].second);
                grads.push_back(&tape.grad(leaves[i]));
            }
            adam.step(params, grads);
            log.append(global_step++, b);
            detail::accumulate(epoch_acc, b);
        }
        double inv = 1.0 / static_cast<double>(steps_per_epoch);
        LossBreakdown mean = epoch_acc;
        mean.l_a *= inv;
        mean.l_ai *= inv;
        mean.total *= inv;
        out.epoch_means.push_back(mean);
    }

    out.bank_a.verify();
    if (!paths.checkpoint.empty()) out.model.save(paths.checkpoint);

    out.manifest["mode"] = "baseline";
    out.manifest["config"] = cfg.to_json();
    out.manifest["datasets"] = {{"authorized", hash_hex(d_a.content_hash())}};
    out.manifest["banks"] = {{"authorized", hash_hex(out.bank_a.content_hash)}};
    out.manifest["epochs"] = nlohmann::json::array();
    for (const auto& e : out.epoch_means) out.manifest["epochs"].push_back(detail::breakdown_json(e));
    out.manifest["checkpoint_hash"] = hash_hex(out.model.params_hash());
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation. Prediction is batch-conditioned (style statistics come from
// the batch itself), so the set is split into chunks of eval_batch with the
// tail folded back to keep every chunk at size >= 2.
// ---------------------------------------------------------------------------
inline std::vector<int> predict_set(const PromptModel& model, const Backbone& bb,
                                    const FeatureSet& fs, const Mat& class_emb,
                                    std::size_t eval_batch) {
    if (fs.size() < 2) throw DataError("predict_set: need at least 2 samples per evaluation set");
    eval_batch = std::max<std::size_t>(2, std::min(eval_batch, fs.size()));
    std::vector<int> preds(fs.size());
    std::vector<std::pair<std::size_t, std::size_t>> chunks;
    for (std::size_t at = 0; at < fs.size(); at += eval_batch)
        chunks.emplace_back(at, std::min(at + eval_batch, fs.size()));
    if (chunks.size() > 1 && chunks.back().second - chunks.back().first < 2)
        chunks[chunks.size() - 2].second = chunks.back().first = chunks.back().first - 1;

    for (auto [lo, hi] : chunks) {
        std::vector<std::size_t> idx(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) idx[i - lo] = i;
        std::vector<int> p = predict(model, bb, fs.slice(idx), class_emb);
        for (std::size_t i = lo; i < hi; ++i) preds[i] = p[i - lo];
    }
    return preds;
}

inline double evaluate_accuracy(const PromptModel& model, const Backbone& bb, const FeatureSet& fs,
                                const Mat& class_emb, std::size_t eval_batch) {
    return accuracy(predict_set(model, bb, fs, class_emb, eval_batch), fs.labels);
}

}  // namespace pfence
