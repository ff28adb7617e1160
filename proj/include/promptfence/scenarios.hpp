#pragma once

#include <map>
#include <string>
#include <vector>

#include "promptfence/augment.hpp"
#include "promptfence/dataset.hpp"

namespace pfence {

enum class ScenarioMode { target_specified, target_free, ownership, authorization };

inline const char* to_string(ScenarioMode m) {
    switch (m) {
        case ScenarioMode::target_specified: return "target_specified";
        case ScenarioMode::target_free: return "target_free";
        case ScenarioMode::ownership: return "ownership";
        case ScenarioMode::authorization: return "authorization";
    }
    return "?";
}

inline ScenarioMode scenario_mode_from_name(const std::string& name) {
    if (name == "target_specified") return ScenarioMode::target_specified;
    if (name == "target_free") return ScenarioMode::target_free;
    if (name == "ownership") return ScenarioMode::ownership;
    if (name == "authorization") return ScenarioMode::authorization;
    throw ConfigError("scenario: unknown mode '" + name + "'");
}

struct ScenarioSpec {
    ScenarioMode mode = ScenarioMode::target_specified;
    std::string authorized;
    std::string unauthorized;                // target_specified only
    std::vector<std::string> test_domains;   // additional evaluation domains
    int n_aug = 2;                           // target_free chain length
    WatermarkSpec watermark;                 // ownership / authorization

    void validate() const {
        if (authorized.empty()) throw ConfigError("scenario: authorized domain is required");
        switch (mode) {
            case ScenarioMode::target_specified:
                if (unauthorized.empty())
                    throw ConfigError("scenario: target_specified requires an unauthorized domain");
                break;
            case ScenarioMode::target_free:
                if (n_aug < 0 || n_aug >= kAugPoolSize)
                    throw ConfigError("scenario: n_aug must lie in [0, " +
                                      std::to_string(kAugPoolSize - 1) + "]");
                break;
            case ScenarioMode::ownership:
            case ScenarioMode::authorization:
                break;
        }
        if (!unauthorized.empty() && mode != ScenarioMode::target_specified)
            throw ConfigError("scenario: unauthorized domain is only valid in target_specified mode");
    }
};

// Style-augmented copy of the authorized domain: every image runs through
// n_aug randomly drawn pool ops; labels and counts are preserved. Per-image
// seeds are global_seed ^ sample_id, so generation order does not matter.
inline Dataset generate_unauthorized_domain(const Dataset& d_a, int n_aug, std::uint64_t seed) {
    if (d_a.samples.empty()) throw DataError("generate_unauthorized_domain: empty source domain");
    if (n_aug < 0 || n_aug >= kAugPoolSize)
        throw ConfigError("generate_unauthorized_domain: n_aug out of range");
    Dataset out;
    out.name = d_a.name + "+aug";
    out.tag = DomainTag::unauthorized;
    out.class_names = d_a.class_names;
    out.samples.resize(d_a.samples.size());
    parallel_for(d_a.samples.size(), [&](std::size_t i) {
        Rng rng(seed ^ (0x9E3779B97F4A7C15ULL * (i + 1)));
        std::vector<AugmentationOp> chain;
        for (int j = 0; j < n_aug; ++j) chain.push_back(sample_augmentation(rng));
        out.samples[i].image = apply_augmentation_chain(d_a.samples[i].image, chain);
        out.samples[i].label = d_a.samples[i].label;
        out.samples[i].provenance = "augmented";
    });
    return out;
}

inline Dataset watermarked_copy(const Dataset& src, const WatermarkSpec& spec,
                                const std::string& suffix = "+patch") {
    Dataset out;
    out.name = src.name + suffix;
    out.tag = DomainTag::unauthorized;
    out.class_names = src.class_names;
    out.samples.resize(src.samples.size());
    parallel_for(src.samples.size(), [&](std::size_t i) {
        out.samples[i].image = apply_watermark(src.samples[i].image, spec);
        out.samples[i].label = src.samples[i].label;
        out.samples[i].provenance = src.samples[i].provenance.empty()
                                        ? "watermark"
                                        : src.samples[i].provenance + "+watermark";
    });
    return out;
}

// The assembled training/eval material. eval_unauthorized holds one entry
// per domain whose accuracy counts toward the unauthorized side of the
// metrics.
struct Scenario {
    Dataset train_authorized;
    Dataset train_unauthorized;
    Dataset eval_authorized;
    std::vector<Dataset> eval_unauthorized;
    bool degenerate_unauthorized = false;  // target_free with n_aug == 0
};

namespace detail {

inline const Dataset& named_domain(const std::map<std::string, Dataset>& domains,
                                   const std::string& name) {
    auto it = domains.find(name);
    if (it == domains.end()) throw ConfigError("scenario: missing domain '" + name + "'");
    return it->second;
}

// Prefer a held-out "<name>.test" split when the caller provides one.
inline const Dataset& eval_source(const std::map<std::string, Dataset>& domains,
                                  const std::string& name) {
    auto it = domains.find(name + ".test");
    return it != domains.end() ? it->second : named_domain(domains, name);
}

// Equal-thirds mixture: original / augmented / augmented+watermark, chosen
// by sample index so the composition is deterministic.
inline Dataset authorization_mixture(const Dataset& original, const WatermarkSpec& wm,
                                     std::uint64_t seed) {
    Dataset augmented = generate_unauthorized_domain(original, 2, seed ^ 0x5851F42D4C957F2DULL);
    Dataset out;
    out.name = original.name + "+mixture";
    out.tag = DomainTag::unauthorized;
    out.class_names = original.class_names;
    out.samples.resize(original.samples.size());
    parallel_for(original.samples.size(), [&](std::size_t i) {
        switch (i % 3) {
            case 0:
                out.samples[i] = original.samples[i];
                out.samples[i].provenance = "original";
                break;
            case 1:
                out.samples[i] = augmented.samples[i];
                out.samples[i].provenance = "augmented";
                break;
            default:
                out.samples[i].image = apply_watermark(augmented.samples[i].image, wm);
                out.samples[i].label = augmented.samples[i].label;
                out.samples[i].provenance = "augmented+watermark";
                break;
        }
    });
    return out;
}

}  // namespace detail

inline Scenario build_scenario(const ScenarioSpec& spec,
                               const std::map<std::string, Dataset>& domains,
                               std::uint64_t seed) {
    spec.validate();
    Scenario sc;
    const Dataset& auth = detail::named_domain(domains, spec.authorized);

    switch (spec.mode) {
        case ScenarioMode::target_specified: {
            sc.train_authorized = auth;
            sc.train_unauthorized = detail::named_domain(domains, spec.unauthorized);
            sc.eval_authorized = detail::eval_source(domains, spec.authorized);
            sc.eval_unauthorized.push_back(detail::eval_source(domains, spec.unauthorized));
            break;
        }
        case ScenarioMode::target_free: {
            sc.train_authorized = auth;
            sc.train_unauthorized = generate_unauthorized_domain(auth, spec.n_aug, seed);
            sc.degenerate_unauthorized = spec.n_aug == 0;
            sc.eval_authorized = detail::eval_source(domains, spec.authorized);
            break;
        }
        case ScenarioMode::ownership: {
            sc.train_authorized = auth;
            sc.train_unauthorized = watermarked_copy(auth, spec.watermark);
            sc.eval_authorized = detail::eval_source(domains, spec.authorized);
            sc.eval_unauthorized.push_back(
                watermarked_copy(detail::eval_source(domains, spec.authorized), spec.watermark));
            break;
        }
        case ScenarioMode::authorization: {
            sc.train_authorized = watermarked_copy(auth, spec.watermark, "+auth");
            sc.train_authorized.tag = DomainTag::authorized;
            sc.train_unauthorized = detail::authorization_mixture(auth, spec.watermark, seed);
            sc.eval_authorized =
                watermarked_copy(detail::eval_source(domains, spec.authorized), spec.watermark, "+auth");
            sc.eval_authorized.tag = DomainTag::test;
            Dataset original_test = detail::eval_source(domains, spec.authorized);
            original_test.tag = DomainTag::test;
            sc.eval_unauthorized.push_back(std::move(original_test));
            break;
        }
    }
    sc.train_authorized.tag = DomainTag::authorized;
    sc.train_unauthorized.tag = DomainTag::unauthorized;

    for (const std::string& extra : spec.test_domains) {
        Dataset d = detail::eval_source(domains, extra);
        d.tag = DomainTag::test;
        sc.eval_unauthorized.push_back(std::move(d));
    }
    if (sc.eval_unauthorized.empty())
        throw ConfigError("scenario: no unauthorized/test evaluation domain configured "
                          "(target_free mode needs at least one test domain)");
    return sc;
}

}  // namespace pfence
