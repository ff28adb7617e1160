#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "promptfence/autodiff.hpp"
#include "promptfence/core.hpp"

namespace pfence {

// N-way K-shot centroid bank for one domain. Frozen after construction; the
// content hash is re-verified on every use.
struct FeatureBank {
    Mat centroids;  // [N, C]
    struct Selection {
        std::vector<int> sample_ids;     // the K selected ids, confidence order
        std::vector<double> confidences;
    };
    std::vector<Selection> provenance;  // one entry per class
    DomainTag domain_tag = DomainTag::authorized;
    int shots = 0;
    std::uint64_t content_hash = 0;

    std::uint64_t compute_hash() const { return fnv1a(fnv1a_init(), centroids); }

    void verify() const {
        if (compute_hash() != content_hash)
            throw DataError("feature bank: content hash mismatch (bank mutated after freeze)");
    }
};

// Select the K highest-confidence features per class (ties broken by lower
// sample id) and average them into per-class centroids.
inline FeatureBank build_feature_bank(const Mat& features, const std::vector<int>& labels,
                                      const std::vector<double>& confidences, int n_classes,
                                      int shots, DomainTag tag) {
    const auto S = static_cast<std::size_t>(features.rows());
    if (labels.size() != S || confidences.size() != S)
        throw ConfigError("build_feature_bank: row/label/confidence count mismatch");
    if (n_classes < 1 || shots < 1) throw ConfigError("build_feature_bank: N and K must be positive");
    if (features.rows() < static_cast<Eigen::Index>(n_classes) * shots)
        throw DataError("build_feature_bank: fewer samples than N*K");

    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < S; ++i) {
        int y = labels[i];
        if (y < 0 || y >= n_classes) throw DataError("build_feature_bank: label out of range");
        by_class[static_cast<std::size_t>(y)].push_back(static_cast<int>(i));
    }

    FeatureBank bank;
    bank.domain_tag = tag;
    bank.shots = shots;
    bank.centroids = Mat::Zero(n_classes, features.cols());
    bank.provenance.resize(static_cast<std::size_t>(n_classes));

    for (int k = 0; k < n_classes; ++k) {
        auto& ids = by_class[static_cast<std::size_t>(k)];
        if (static_cast<int>(ids.size()) < shots)
            throw DataError("build_feature_bank: class " + std::to_string(k) + " has only " +
                            std::to_string(ids.size()) + " candidates, need " +
                            std::to_string(shots));
        std::sort(ids.begin(), ids.end(), [&](int a, int b) {
            if (confidences[static_cast<std::size_t>(a)] != confidences[static_cast<std::size_t>(b)])
                return confidences[static_cast<std::size_t>(a)] > confidences[static_cast<std::size_t>(b)];
            return a < b;
        });
        auto& sel = bank.provenance[static_cast<std::size_t>(k)];
        for (int j = 0; j < shots; ++j) {
            int id = ids[static_cast<std::size_t>(j)];
            sel.sample_ids.push_back(id);
            sel.confidences.push_back(confidences[static_cast<std::size_t>(id)]);
        }
        // extended-precision accumulation keeps the mean of K identical
        // vectors bit-equal to that vector
        for (Eigen::Index c = 0; c < features.cols(); ++c) {
            long double acc = 0.0L;
            for (int id : sel.sample_ids) acc += static_cast<long double>(features(id, c));
            bank.centroids(k, c) = static_cast<double>(acc / static_cast<long double>(shots));
        }
    }
    bank.content_hash = bank.compute_hash();
    return bank;
}

// ---------------------------------------------------------------------------
// STAM: residual cross-attention from sample features to the frozen bank.
// Q/K/V are single affine projections with d_k = C; the output branch is a
// pointwise linear map initialized to zero, so the module starts as the
// identity.
// ---------------------------------------------------------------------------
struct StamParams {
    Mat wq, bq, wk, bk, wv, bv;  // [C, C], [1, C]
    Mat wo, bo;                  // output branch, zero-initialized

    static StamParams init(int C, std::uint64_t seed) {
        Rng rng(seed ^ 0x8CB92BA72F3D8DD7ULL);
        double s = 1.0 / std::sqrt(static_cast<double>(C));
        StamParams p;
        p.wq = gaussian(rng, C, C, s);
        p.bq = Mat::Zero(1, C);
        p.wk = gaussian(rng, C, C, s);
        p.bk = Mat::Zero(1, C);
        p.wv = gaussian(rng, C, C, s);
        p.bv = Mat::Zero(1, C);
        p.wo = Mat::Zero(C, C);
        p.bo = Mat::Zero(1, C);
        return p;
    }

    std::vector<std::pair<std::string, Mat*>> named() {
        return {{"stam.wq", &wq}, {"stam.bq", &bq}, {"stam.wk", &wk}, {"stam.bk", &bk},
                {"stam.wv", &wv}, {"stam.bv", &bv}, {"stam.wo", &wo}, {"stam.bo", &bo}};
    }

private:
    static Mat gaussian(Rng& rng, int r, int c, double scale) {
        Mat m(r, c);
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal() * scale;
        return m;
    }
};

struct StamOutput {
    Mat enhanced;   // [B, C]
    Mat attention;  // [B, N], rows sum to 1
};

inline StamOutput stam_enhance(const Mat& f, const FeatureBank& bank, const StamParams& p) {
    bank.verify();
    if (f.cols() != p.wq.rows() || bank.centroids.cols() != p.wk.rows())
        throw ConfigError("stam_enhance: feature dimension does not match parameters");
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(f.cols()));
    Mat q = (f * p.wq).rowwise() + p.bq.row(0);
    Mat k = (bank.centroids * p.wk).rowwise() + p.bk.row(0);
    Mat v = (bank.centroids * p.wv).rowwise() + p.bv.row(0);
    Mat logits = (q * k.transpose()) * inv_sqrt_dk;
    StamOutput out;
    out.attention.resize(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        double mx = logits.row(i).maxCoeff();
        Eigen::ArrayXd e = (logits.row(i).array() - mx).exp();
        out.attention.row(i) = (e / e.sum()).matrix();
    }
    out.enhanced = ((out.attention * v) * p.wo).rowwise() + p.bo.row(0);
    out.enhanced += f;
    return out;
}

// ---------------------------------------------------------------------------
// Tape route used during training.
// ---------------------------------------------------------------------------
struct StamVars {
    ad::Var wq, bq, wk, bk, wv, bv, wo, bo;

    static StamVars leaves(ad::Tape& tape, const StamParams& p, bool trainable = true) {
        return StamVars{tape.leaf(p.wq, trainable), tape.leaf(p.bq, trainable),
                        tape.leaf(p.wk, trainable), tape.leaf(p.bk, trainable),
                        tape.leaf(p.wv, trainable), tape.leaf(p.bv, trainable),
                        tape.leaf(p.wo, trainable), tape.leaf(p.bo, trainable)};
    }

    std::vector<ad::Var> all() const { return {wq, bq, wk, bk, wv, bv, wo, bo}; }
};

inline ad::Var stam_tape(ad::Tape& tape, ad::Var f, ad::Var bank_centroids, const StamVars& p) {
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(tape.value(f).cols()));
    ad::Var q = tape.add_rowvec(tape.matmul(f, p.wq), p.bq);
    ad::Var k = tape.add_rowvec(tape.matmul(bank_centroids, p.wk), p.bk);
    ad::Var v = tape.add_rowvec(tape.matmul(bank_centroids, p.wv), p.bv);
    ad::Var attn = tape.softmax_rows(tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt_dk));
    ad::Var branch = tape.add_rowvec(tape.matmul(tape.matmul(attn, v), p.wo), p.bo);
    return tape.add(branch, f);
}

}  // namespace pfence
