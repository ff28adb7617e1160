#include <catch2/catch_amalgamated.hpp>

#include "promptfence/experiment.hpp"
#include "promptfence/metrics.hpp"
#include "promptfence/reference_tables.hpp"
#include "test_support.hpp"

using namespace pfence;

TEST_CASE("accuracy is a plain percentage", "[metrics]") {
    REQUIRE(accuracy({1, 2, 3}, {1, 2, 3}) == 100.0);
    REQUIRE(accuracy({1, 2, 3}, {0, 0, 0}) == 0.0);
    // counting oracle on a random instance
    Rng rng(3);
    std::vector<int> pred, truth;
    int correct = 0;
    for (int i = 0; i < 97; ++i) {
        pred.push_back(static_cast<int>(rng.below(4)));
        truth.push_back(static_cast<int>(rng.below(4)));
        if (pred.back() == truth.back()) ++correct;
    }
    REQUIRE(accuracy(pred, truth) == 100.0 * correct / 97.0);
    REQUIRE_THROWS_AS(accuracy({}, {}), DataError);
    REQUIRE_THROWS_AS(accuracy({1}, {1, 2}), ConfigError);
}

TEST_CASE("drop rates: published row, identity, random oracle", "[metrics]") {
    AccuracyPair auth{"Amazon", 79.4, 79.4, DomainTag::authorized};
    std::vector<AccuracyPair> unauth = {{"Dslr", 87.5, 7.5, DomainTag::unauthorized},
                                        {"Webcam", 88.8, 8.8, DomainTag::unauthorized}};
    DropRates d = drop_rates(auth, unauth);
    REQUIRE(d.d_u == Catch::Approx(80.00).margin(1e-12));
    REQUIRE(d.d_a == Catch::Approx(0.00).margin(1e-12));

    AccuracyPair same{"x", 50.0, 50.0, DomainTag::authorized};
    DropRates zero = drop_rates(same, {{"y", 70.0, 70.0, DomainTag::unauthorized}});
    REQUIRE(zero.d_a == 0.0);
    REQUIRE(zero.d_u == 0.0);

    Rng rng(7);
    std::vector<AccuracyPair> random_pairs;
    double mean = 0;
    for (int i = 0; i < 3; ++i) {
        double sl = rng.uniform(0, 100), ip = rng.uniform(0, 100);
        random_pairs.push_back({"d" + std::to_string(i), sl, ip, DomainTag::unauthorized});
        mean += sl - ip;
    }
    mean /= 3.0;
    REQUIRE(drop_rates(same, random_pairs).d_u == Catch::Approx(mean).margin(1e-12));

    REQUIRE_THROWS_AS(drop_rates(auth, {}), DataError);
}

TEST_CASE("weighted drop reproduces the published arithmetic", "[metrics]") {
    REQUIRE(weighted_drop(79.4, 80.00, 0.00) == Catch::Approx(63.52).margin(0.05));
    REQUIRE(weighted_drop(95.7, 86.25, 0.00) == Catch::Approx(82.54).margin(0.05));
    REQUIRE(weighted_drop(42.0, 0.0, 0.0) == 0.0);

    // monotone in D_u, antitone in D_a for positive accuracy
    double base = weighted_drop(50.0, 40.0, 5.0);
    REQUIRE(weighted_drop(50.0, 41.0, 5.0) > base);
    REQUIRE(weighted_drop(50.0, 40.0, 6.0) < base);
}

TEST_CASE("ownership and authorization scores match the published rows", "[metrics]") {
    for (const auto& row : reference::ownership_rows()) {
        double got = ownership_score(row.a_u_sl, row.a_a_method, row.a_u_method);
        INFO(row.authorized << ": got " << got << " expected " << row.o_ua);
        REQUIRE(std::abs(got - row.o_ua) <= reference::kTolerance);
    }
    REQUIRE(ownership_score(75.0, 60.0, 60.0) == 0.0);

    for (const auto& row : reference::authorization_rows()) {
        double got = authorization_score(row.a_a, row.a_u);
        INFO(row.authorized << ": got " << got << " expected " << row.d_ua);
        REQUIRE(std::abs(got - row.d_ua) <= reference::kTolerance);
    }
    REQUIRE(authorization_score(55.5, 55.5) == 0.0);
}

TEST_CASE("published target-specified table reproduces through the report path", "[metrics]") {
    std::vector<MetricsReport> reports;
    for (const auto& row : reference::office31_target_specified()) {
        MetricsReport r = make_target_report("target_specified", row.auth, row.unauth);
        REQUIRE(std::abs(*r.w_ua - row.w_ua) <= reference::kTolerance);
        REQUIRE(std::abs(r.d_u - row.d_u) <= reference::kTolerance);
        REQUIRE(std::abs(r.d_a - row.d_a) <= reference::kTolerance);
        reports.push_back(std::move(r));
    }

    RenderedTables tables = render_tables(reports);
    reference::MeanRow mean = reference::office31_target_specified_mean();
    REQUIRE(std::abs(tables.json["mean"]["W_ua"].get<double>() - mean.w_ua) <=
            reference::kTolerance);
    REQUIRE(std::abs(tables.json["mean"]["D_u"].get<double>() - mean.d_u) <= reference::kTolerance);
    REQUIRE(std::abs(tables.json["mean"]["D_a"].get<double>() - mean.d_a) <= reference::kTolerance);
}

TEST_CASE("rendered CSV and JSON encode identical values", "[metrics]") {
    AccuracyPair auth{"home", 90.0, 88.0, DomainTag::authorized};
    std::vector<AccuracyPair> unauth = {{"away", 85.0, 20.0, DomainTag::unauthorized}};
    MetricsReport r = make_target_report("target_specified", auth, unauth);
    RenderedTables t = render_tables({r});

    // single report: mean row equals the report's metrics
    REQUIRE(t.json["mean"]["W_ua"].get<double>() == Catch::Approx(*r.w_ua).margin(1e-12));
    REQUIRE(t.json["rows"].size() == 2);

    // parse the CSV back and compare W_ua col on the first data row
    std::istringstream in(t.csv);
    std::string header, line;
    std::getline(in, header);
    std::getline(in, line);
    REQUIRE(header ==
            "scenario,authorized_domain,domain,a_sl,a_ip,D_u,D_a,W_ua,O_ua,D_ua");
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() == 10);
    REQUIRE(std::stod(cells[7]) == Catch::Approx(*r.w_ua).margin(1e-4));
    REQUIRE(std::stod(cells[3]) ==
            Catch::Approx(t.json["rows"][0]["a_sl"].get<double>()).margin(1e-4));

    REQUIRE_THROWS_AS(render_tables({}), DataError);
}

TEST_CASE("scores vanish when protected and baseline coincide", "[metrics][property]") {
    for (std::uint64_t seed = 1; seed <= 15; ++seed) {
        Rng rng(seed);
        double a = rng.uniform(0, 100);
        AccuracyPair auth{"a", a, a, DomainTag::authorized};
        std::vector<AccuracyPair> unauth;
        for (int i = 0; i < 3; ++i) {
            double u = rng.uniform(0, 100);
            unauth.push_back({"u" + std::to_string(i), u, u, DomainTag::unauthorized});
        }
        MetricsReport r = make_target_report("target_specified", auth, unauth);
        REQUIRE(*r.w_ua == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(ownership_score(rng.uniform(0, 100), a, a) == 0.0);
        REQUIRE(authorization_score(a, a) == 0.0);
    }
}
