#include <catch2/catch_amalgamated.hpp>

#include "promptfence/scenarios.hpp"
#include "promptfence/toy_data.hpp"
#include "test_support.hpp"

using namespace pfence;

namespace {

Image smooth_test_image(std::uint64_t seed, int hw = 24) {
    Rng rng(seed);
    return [&] {
        Image img(hw, hw);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < hw; ++y)
                for (int x = 0; x < hw; ++x)
                    img.at(c, y, x) = 0.5 + 0.35 * std::sin(0.3 * x + 0.2 * y + c) +
                                      0.05 * (rng.uniform() - 0.5);
        for (auto& v : img.data) v = std::clamp(v, 0.0, 1.0);
        return img;
    }();
}

Dataset tiny_dataset(int n_per_class, int n_classes, std::uint64_t seed, int hw = 24) {
    Dataset ds;
    ds.name = "tiny";
    ds.class_names = toy_class_names(n_classes);
    for (int k = 0; k < n_classes; ++k)
        for (int i = 0; i < n_per_class; ++i) {
            Sample s;
            s.image = smooth_test_image(seed ^ static_cast<std::uint64_t>(k * 1000 + i), hw);
            s.label = k;
            s.provenance = "test";
            ds.samples.push_back(std::move(s));
        }
    return ds;
}

}  // namespace

TEST_CASE("identity op is a pixel-exact no-op; all ops stay in range", "[scenarios]") {
    Image img = smooth_test_image(1);
    Image out = apply_augmentation(img, {AugKind::Identity, 0.0, 0});
    REQUIRE(out.data == img.data);

    Rng rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        AugmentationOp op = sample_augmentation(rng);
        Image t = apply_augmentation(img, op);
        REQUIRE(t.h == img.h);
        REQUIRE(t.w == img.w);
        double lo = 1e9, hi = -1e9;
        for (double v : t.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        REQUIRE(lo >= 0.0);
        REQUIRE(hi <= 1.0);
        // determinism given the same op parameters
        Image t2 = apply_augmentation(img, op);
        REQUIRE(t.data == t2.data);
    }
}

TEST_CASE("rotate followed by the negated rotation restores the image", "[scenarios]") {
    Image img = smooth_test_image(5, 32);
    for (double deg : {8.0, 15.0, 25.0}) {
        Image fwd = apply_augmentation(img, {AugKind::Rotate, deg, 0});
        Image back = apply_augmentation(fwd, {AugKind::Rotate, -deg, 0});
        double mean_abs = 0;
        for (std::size_t i = 0; i < img.data.size(); ++i)
            mean_abs += std::abs(back.data[i] - img.data[i]);
        mean_abs /= static_cast<double>(img.data.size());
        INFO("degrees " << deg << " mean abs error " << mean_abs);
        REQUIRE(mean_abs < 0.02);
    }
}

TEST_CASE("magnitudes are sampled inside the documented ranges", "[scenarios][property]") {
    Rng rng(7);
    for (int trial = 0; trial < 300; ++trial) {
        AugmentationOp op = sample_augmentation(rng);
        const AugInfo& info = aug_info(op.kind);
        REQUIRE(op.magnitude >= info.lo);
        REQUIRE(op.magnitude <= info.hi);
    }
    REQUIRE_THROWS_AS(aug_kind_from_name("Swirl"), ConfigError);
    REQUIRE(aug_kind_from_name("Solarize") == AugKind::Solarize);
}

TEST_CASE("watermark: idempotent, localized, seed-sensitive", "[scenarios]") {
    Image img = smooth_test_image(9, 48);
    WatermarkSpec spec;
    spec.patch_size = 12;
    spec.seed = 5;

    Image once = apply_watermark(img, spec);
    Image twice = apply_watermark(once, spec);
    REQUIRE(once.data == twice.data);

    // pixels outside the patch untouched
    int y0 = img.h - spec.patch_size, x0 = img.w - spec.patch_size;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                bool inside = y >= y0 && x >= x0;
                if (!inside) REQUIRE(once.at(c, y, x) == img.at(c, y, x));
            }

    WatermarkSpec other = spec;
    other.seed = 6;
    Image alt = apply_watermark(img, other);
    std::uint64_t h1 = fnv1a(fnv1a_init(), once.data.data(), once.data.size() * sizeof(double));
    std::uint64_t h2 = fnv1a(fnv1a_init(), alt.data.data(), alt.data.size() * sizeof(double));
    REQUIRE(h1 != h2);

    WatermarkSpec huge;
    huge.patch_size = 64;
    REQUIRE_THROWS_AS(apply_watermark(img, huge), DataError);
    WatermarkSpec quarter;  // 24x24 on 48x48 is 25% area
    quarter.patch_size = 24;
    REQUIRE_THROWS_AS(apply_watermark(img, quarter), DataError);
}

TEST_CASE("generated unauthorized domain preserves labels and counts", "[scenarios]") {
    Dataset d_a = tiny_dataset(6, 3, 11);

    Dataset none = generate_unauthorized_domain(d_a, 0, 42);
    REQUIRE(none.size() == d_a.size());
    for (std::size_t i = 0; i < none.size(); ++i)
        REQUIRE(none.samples[i].image.data == d_a.samples[i].image.data);

    Dataset d_u1 = generate_unauthorized_domain(d_a, 2, 42);
    Dataset d_u2 = generate_unauthorized_domain(d_a, 2, 42);
    REQUIRE(d_u1.content_hash() == d_u2.content_hash());

    Dataset d_u3 = generate_unauthorized_domain(d_a, 2, 43);
    REQUIRE(d_u1.content_hash() != d_u3.content_hash());

    REQUIRE(d_u1.class_histogram() == d_a.class_histogram());
    REQUIRE(d_u1.size() == d_a.size());

    REQUIRE_THROWS_AS(generate_unauthorized_domain(Dataset{}, 2, 1), DataError);
    REQUIRE_THROWS_AS(generate_unauthorized_domain(d_a, 14, 1), ConfigError);
}

TEST_CASE("target_specified scenario references the named domains verbatim", "[scenarios]") {
    std::map<std::string, Dataset> domains;
    domains["alpha"] = tiny_dataset(4, 2, 21);
    domains["alpha"].name = "alpha";
    domains["beta"] = tiny_dataset(4, 2, 22);
    domains["beta"].name = "beta";

    ScenarioSpec spec;
    spec.mode = ScenarioMode::target_specified;
    spec.authorized = "alpha";
    spec.unauthorized = "beta";
    Scenario sc = build_scenario(spec, domains, 1);
    REQUIRE(sc.train_authorized.content_hash() == domains["alpha"].content_hash());
    REQUIRE(sc.train_unauthorized.content_hash() == domains["beta"].content_hash());
    REQUIRE(sc.eval_unauthorized.size() == 1);

    spec.unauthorized = "gamma";
    REQUIRE_THROWS_AS(build_scenario(spec, domains, 1), ConfigError);
}

TEST_CASE("ownership scenario: patched copies differ only inside the patch", "[scenarios]") {
    std::map<std::string, Dataset> domains;
    domains["alpha"] = tiny_dataset(5, 2, 31, 48);
    domains["alpha"].name = "alpha";

    ScenarioSpec spec;
    spec.mode = ScenarioMode::ownership;
    spec.authorized = "alpha";
    spec.watermark.patch_size = 12;
    Scenario sc = build_scenario(spec, domains, 1);

    REQUIRE(sc.train_unauthorized.size() == sc.train_authorized.size());
    const int hw = 48, ps = 12;
    for (std::size_t i = 0; i < sc.train_authorized.size(); ++i) {
        const Image& src = sc.train_authorized.samples[i].image;
        const Image& marked = sc.train_unauthorized.samples[i].image;
        REQUIRE(sc.train_unauthorized.samples[i].label == sc.train_authorized.samples[i].label);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < hw; ++y)
                for (int x = 0; x < hw; ++x)
                    if (y < hw - ps || x < hw - ps)
                        REQUIRE(marked.at(c, y, x) == src.at(c, y, x));
    }
}

TEST_CASE("authorization scenario: mixture carries exactly three provenance kinds", "[scenarios]") {
    std::map<std::string, Dataset> domains;
    domains["alpha"] = tiny_dataset(6, 2, 41, 48);
    domains["alpha"].name = "alpha";

    ScenarioSpec spec;
    spec.mode = ScenarioMode::authorization;
    spec.authorized = "alpha";
    spec.watermark.patch_size = 12;
    Scenario sc = build_scenario(spec, domains, 7);

    std::map<std::string, int> kinds;
    for (const auto& s : sc.train_unauthorized.samples) kinds[s.provenance]++;
    REQUIRE(kinds.size() == 3);
    REQUIRE(kinds.count("original") == 1);
    REQUIRE(kinds.count("augmented") == 1);
    REQUIRE(kinds.count("augmented+watermark") == 1);
    int total = kinds["original"] + kinds["augmented"] + kinds["augmented+watermark"];
    REQUIRE(static_cast<std::size_t>(total) == sc.train_unauthorized.size());
    // equal thirds up to rounding
    REQUIRE(std::abs(kinds["original"] - kinds["augmented"]) <= 1);
    REQUIRE(std::abs(kinds["augmented"] - kinds["augmented+watermark"]) <= 1);

    // authorized side is the watermarked original
    for (const auto& s : sc.train_authorized.samples)
        REQUIRE(s.provenance.find("watermark") != std::string::npos);
}

TEST_CASE("scenario construction is deterministic under a declared seed", "[scenarios]") {
    std::map<std::string, Dataset> domains;
    domains["alpha"] = tiny_dataset(6, 2, 51);
    domains["alpha"].name = "alpha";
    ScenarioSpec spec;
    spec.mode = ScenarioMode::target_free;
    spec.authorized = "alpha";
    spec.n_aug = 2;
    spec.test_domains = {"alpha"};

    Scenario s1 = build_scenario(spec, domains, 99);
    Scenario s2 = build_scenario(spec, domains, 99);
    REQUIRE(s1.train_unauthorized.content_hash() == s2.train_unauthorized.content_hash());
}
