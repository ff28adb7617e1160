#include <catch2/catch_amalgamated.hpp>

#include "promptfence/backbone.hpp"
#include "test_support.hpp"

using namespace pfence;

namespace {

Image random_image(Rng& rng, int hw) {
    Image img(hw, hw);
    for (auto& v : img.data) v = rng.uniform();
    return img;
}

BackboneSpec toy_spec(std::uint64_t seed = 42) {
    BackboneSpec s;
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("frozen encoder is deterministic and batch independent", "[backbone]") {
    auto bb = make_backbone(toy_spec());
    Rng rng(5);
    Image a = random_image(rng, 32);
    Image b = random_image(rng, 32);

    ImageBatch batch{{&a, &b}, {0, 1}, DomainTag::authorized};
    MultiScaleFeatures f1 = bb->encode_image_multiscale(batch);
    MultiScaleFeatures f2 = bb->encode_image_multiscale(batch);
    for (std::size_t m = 0; m < f1.per_layer.size(); ++m)
        REQUIRE(f1.per_layer[m] == f2.per_layer[m]);  // bitwise
    REQUIRE(f1.final == f2.final);

    // duplicated sample produces identical rows
    ImageBatch dup{{&a, &a}, {0, 0}, DomainTag::authorized};
    MultiScaleFeatures fd = bb->encode_image_multiscale(dup);
    for (const Mat& layer : fd.per_layer) REQUIRE(layer.row(0) == layer.row(1));
    REQUIRE(fd.final.row(0) == fd.final.row(1));
}

TEST_CASE("final features are unit-norm, per-layer dims follow the spec", "[backbone]") {
    auto bb = make_backbone(toy_spec(7));
    Rng rng(9);
    std::vector<Image> imgs;
    for (int i = 0; i < 6; ++i) imgs.push_back(random_image(rng, 32));
    ImageBatch batch;
    for (auto& im : imgs) {
        batch.images.push_back(&im);
        batch.labels.push_back(0);
    }
    MultiScaleFeatures f = bb->encode_image_multiscale(batch);
    REQUIRE(f.per_layer.size() == 3);
    REQUIRE(f.per_layer[0].cols() == 16);
    REQUIRE(f.per_layer[1].cols() == 32);
    REQUIRE(f.per_layer[2].cols() == 64);
    for (Eigen::Index i = 0; i < f.final.rows(); ++i)
        REQUIRE(f.final.row(i).norm() == Catch::Approx(1.0).margin(1e-5));
    for (const Mat& layer : f.per_layer) REQUIRE(layer.allFinite());
}

TEST_CASE("encoder rejects invalid inputs", "[backbone]") {
    auto bb = make_backbone(toy_spec());
    REQUIRE_THROWS_AS(bb->encode_image_multiscale(ImageBatch{}), DataError);
    Image tiny(4, 4);
    ImageBatch batch{{&tiny}, {0}, DomainTag::test};
    REQUIRE_THROWS_AS(bb->encode_image_multiscale(batch), ConfigError);

    BackboneSpec bad;
    bad.M = 1;
    bad.layer_dims = {64};
    REQUIRE_THROWS_AS(make_backbone(bad), ConfigError);
}

TEST_CASE("text encoder: determinism, norm, and prompt gradients", "[backbone]") {
    auto bb = make_backbone(toy_spec(3));
    Rng rng(21);
    Mat prompt = pftest::random_mat(rng, 5, bb->spec().d_t);

    Mat t1 = bb->encode_text(prompt);
    Mat t2 = bb->encode_text(prompt);
    REQUIRE(t1 == t2);
    REQUIRE(t1.row(0).norm() == Catch::Approx(1.0).margin(1e-5));

    Mat wrong = pftest::random_mat(rng, 5, bb->spec().d_t + 1);
    REQUIRE_THROWS_AS(bb->encode_text(wrong), ConfigError);

    // analytic vs central-difference gradient of one output coordinate
    const int coord = 11;
    auto eval = [&]() {
        ad::Tape tape;
        ad::Var p = tape.leaf(prompt, true);
        return tape.value(bb->encode_text_tape(tape, p))(0, coord);
    };
    ad::Tape tape;
    ad::Var p = tape.leaf(prompt, true);
    ad::Var feat = bb->encode_text_tape(tape, p);
    // select one coordinate as scalar root
    Mat pick = Mat::Zero(bb->spec().C, 1);
    pick(coord, 0) = 1.0;
    tape.backward(tape.matmul(feat, tape.leaf(pick)));
    Mat analytic = tape.grad(p);

    for (Eigen::Index i = 0; i < prompt.rows(); ++i)
        for (Eigen::Index j = 0; j < prompt.cols(); ++j) {
            double numeric = pftest::central_diff(eval, prompt(i, j));
            REQUIRE(pftest::grad_close(analytic(i, j), numeric, 1e-4));
        }

    // tape and plain routes agree
    REQUIRE((tape.value(feat) - bb->encode_text(prompt)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("token embeddings are frozen and name-keyed", "[backbone]") {
    auto bb = make_backbone(toy_spec(4));
    REQUIRE(bb->token_embedding("cat") == bb->token_embedding("cat"));
    REQUIRE(bb->token_embedding("cat") != bb->token_embedding("dog"));
    REQUIRE(bb->token_embedding("cat").cols() == bb->spec().d_t);
}

TEST_CASE("zero-shot rows are distributions; huge tau is uniform", "[backbone]") {
    auto bb = make_backbone(toy_spec(6));
    Rng rng(33);
    std::vector<Image> imgs;
    for (int i = 0; i < 5; ++i) imgs.push_back(random_image(rng, 32));
    ImageBatch batch;
    for (auto& im : imgs) {
        batch.images.push_back(&im);
        batch.labels.push_back(0);
    }
    std::vector<std::string> classes = {"ant", "bee", "cow", "dog"};

    Mat probs = zero_shot_classify(*bb, batch, classes, 0.07);
    REQUIRE(probs.rows() == 5);
    REQUIRE(probs.cols() == 4);
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
        REQUIRE(probs.row(i).sum() == Catch::Approx(1.0).margin(1e-6));

    Mat uniform = zero_shot_classify(*bb, batch, classes, 1e9);
    for (Eigen::Index i = 0; i < uniform.rows(); ++i)
        for (Eigen::Index j = 0; j < uniform.cols(); ++j)
            REQUIRE(uniform(i, j) == Catch::Approx(0.25).margin(1e-9));

    REQUIRE_THROWS_AS(zero_shot_classify(*bb, batch, {}, 0.07), ConfigError);
    REQUIRE_THROWS_AS(zero_shot_classify(*bb, batch, classes, 0.0), ConfigError);
}
