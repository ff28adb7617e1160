#pragma once

#include <vector>

#include "promptfence/autodiff.hpp"
#include "promptfence/core.hpp"

namespace pfence {

// Weights, shared temperature and the caps applied to the maximized terms.
// The composite objective is unbounded below without caps; capping freezes a
// maximized term's gradient once it clears its cap.
struct ObjectiveConfig {
    double tau = 0.07;
    double lambda1 = 0.1;
    double lambda2 = 0.1;
    double cap_ce = 0.0;  // 0 means: derive as 2*ln(N) at use
    double cap_kl = 0.0;  // 0 means: derive as 2*ln(N) at use
    double cap_m = 10.0;

    double effective_cap_ce(int n_classes) const {
        return cap_ce > 0.0 ? cap_ce : 2.0 * std::log(static_cast<double>(n_classes));
    }
    double effective_cap_kl(int n_classes) const {
        return cap_kl > 0.0 ? cap_kl : 2.0 * std::log(static_cast<double>(n_classes));
    }
};

struct LossBreakdown {
    double l_m = 0, l_a = 0, l_u = 0, l_ai = 0, l_ui = 0, l_kl = 0, l_en = 0;
    double total = 0;
    double lambda1 = 0, lambda2 = 0;
};

// mean over coordinates of the squared difference
inline double token_separation_loss(const Mat& t_a, const Mat& t_u) {
    if (t_a.rows() != t_u.rows() || t_a.cols() != t_u.cols())
        throw ConfigError("token_separation_loss: shape mismatch");
    return (t_a - t_u).array().square().mean();
}

// Cross-entropy over cosine-similarity logits divided by tau. Inputs are
// unit-normalized, so cosine similarity is a plain dot product.
inline double contrastive_alignment_loss(const Mat& v, const Mat& t, const std::vector<int>& labels,
                                         double tau) {
    if (tau <= 0.0) throw ConfigError("contrastive_alignment_loss: tau must be positive");
    if (v.cols() != t.cols()) throw ConfigError("contrastive_alignment_loss: dim mismatch");
    if (static_cast<Eigen::Index>(labels.size()) != v.rows())
        throw ConfigError("contrastive_alignment_loss: label count mismatch");
    Mat logits = (v * t.transpose()) / tau;
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= logits.cols()) throw DataError("contrastive_alignment_loss: bad label");
        double mx = logits.row(i).maxCoeff();
        double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
        total += lse - logits(i, y);
    }
    return total / static_cast<double>(logits.rows());
}

// Mean over rows of KL(p_a || p_u) after a coordinate-wise softmax turns
// each feature row into a distribution.
inline double text_divergence_loss(const Mat& f_t_a, const Mat& f_t_u) {
    if (f_t_a.rows() != f_t_u.rows() || f_t_a.cols() != f_t_u.cols())
        throw ConfigError("text_divergence_loss: shape mismatch");
    double total = 0.0;
    for (Eigen::Index i = 0; i < f_t_a.rows(); ++i) {
        double mxa = f_t_a.row(i).maxCoeff(), mxu = f_t_u.row(i).maxCoeff();
        Eigen::ArrayXd la = f_t_a.row(i).array() - mxa;
        Eigen::ArrayXd lu = f_t_u.row(i).array() - mxu;
        la -= std::log(la.exp().sum());
        lu -= std::log(lu.exp().sum());
        total += (la.exp() * (la - lu)).sum();
    }
    return total / static_cast<double>(f_t_a.rows());
}

// KL between explicit distributions; the hand-checkable core of the text
// divergence.
inline double kl_divergence(const RowVec& p, const RowVec& q) {
    if (p.size() != q.size()) throw ConfigError("kl_divergence: size mismatch");
    double total = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p(i) < 0 || q(i) <= 0) throw DataError("kl_divergence: invalid distribution entry");
        if (p(i) > 0) total += p(i) * std::log(p(i) / q(i));
    }
    return total;
}

// Mean Shannon entropy of per-sample softmax(sims / tau); range [0, ln N].
inline double entropy_loss(const Mat& sims, double tau) {
    if (tau <= 0.0) throw ConfigError("entropy_loss: tau must be positive");
    double total = 0.0;
    for (Eigen::Index i = 0; i < sims.rows(); ++i) {
        Eigen::ArrayXd z = sims.row(i).array() / tau;
        double mx = z.maxCoeff();
        Eigen::ArrayXd ls = z - mx - std::log((z - mx).exp().sum());
        total += -(ls.exp() * ls).sum();
    }
    return total / static_cast<double>(sims.rows());
}

// The signed, capped composition. Reduces to the plain sum/difference of the
// parts whenever every capped term sits below its cap.
struct LossCaps {
    double ce = 0, kl = 0, m = 0;
};

inline double total_loss(const LossBreakdown& parts, const LossCaps& caps) {
    return parts.l_a - std::min(parts.l_u, caps.ce) + parts.l_ai - std::min(parts.l_ui, caps.ce) -
           std::min(parts.l_kl, caps.kl) - parts.lambda1 * std::min(parts.l_m, caps.m) +
           parts.lambda2 * parts.l_en;
}

// ---------------------------------------------------------------------------
// Tape builders (all return 1x1 scalars)
// ---------------------------------------------------------------------------
namespace losses {

inline ad::Var mse(ad::Tape& tape, ad::Var a, ad::Var b) {
    ad::Var d = tape.sub(a, b);
    double numel = static_cast<double>(tape.value(a).size());
    return tape.scale(tape.sum_all(tape.hadamard(d, d)), 1.0 / numel);
}

// sims already hold cosine values [B, N]
inline ad::Var contrastive_sims(ad::Tape& tape, ad::Var sims, const std::vector<int>& labels,
                                double tau) {
    if (tau <= 0.0) throw ConfigError("contrastive: tau must be positive");
    ad::Var logits = tape.scale(sims, 1.0 / tau);
    ad::Var picked = tape.gather_labels(tape.log_softmax_rows(logits), labels);
    return tape.scale(tape.sum_all(picked), -1.0 / static_cast<double>(labels.size()));
}

inline ad::Var contrastive(ad::Tape& tape, ad::Var v, ad::Var t, const std::vector<int>& labels,
                           double tau) {
    return contrastive_sims(tape, tape.matmul(v, tape.transpose(t)), labels, tau);
}

inline ad::Var kl_rows(ad::Tape& tape, ad::Var f_a, ad::Var f_u) {
    ad::Var la = tape.log_softmax_rows(f_a);
    ad::Var lu = tape.log_softmax_rows(f_u);
    ad::Var pa = tape.exp(la);
    double rows = static_cast<double>(tape.value(f_a).rows());
    return tape.scale(tape.sum_all(tape.hadamard(pa, tape.sub(la, lu))), 1.0 / rows);
}

inline ad::Var entropy(ad::Tape& tape, ad::Var sims, double tau) {
    if (tau <= 0.0) throw ConfigError("entropy: tau must be positive");
    ad::Var ls = tape.log_softmax_rows(tape.scale(sims, 1.0 / tau));
    ad::Var p = tape.exp(ls);
    double rows = static_cast<double>(tape.value(sims).rows());
    return tape.scale(tape.sum_all(tape.hadamard(p, ls)), -1.0 / rows);
}

struct TotalVars {
    ad::Var l_m, l_a, l_u, l_ai, l_ui, l_kl, l_en;
    ad::Var total;
};

inline ad::Var combine(ad::Tape& tape, TotalVars& t, double lambda1, double lambda2,
                       const LossCaps& caps) {
    ad::Var acc = tape.sub(t.l_a, tape.min_const(t.l_u, caps.ce));
    acc = tape.add(acc, t.l_ai);
    acc = tape.sub(acc, tape.min_const(t.l_ui, caps.ce));
    acc = tape.sub(acc, tape.min_const(t.l_kl, caps.kl));
    acc = tape.sub(acc, tape.scale(tape.min_const(t.l_m, caps.m), lambda1));
    acc = tape.add(acc, tape.scale(t.l_en, lambda2));
    t.total = acc;
    return acc;
}

}  // namespace losses

}  // namespace pfence
