#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptfence/core.hpp"

namespace pfence {

// Baseline vs protected accuracy for one (model, domain) slot, in percent.
struct AccuracyPair {
    std::string domain;
    double a_sl = 0.0;
    double a_ip = 0.0;
    DomainTag tag = DomainTag::test;
};

struct DropRates {
    double d_a = 0.0;  // authorized drop
    double d_u = 0.0;  // mean unauthorized drop
};

inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size()) throw ConfigError("accuracy: length mismatch");
    if (predictions.empty()) throw DataError("accuracy: empty inputs");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++correct;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(predictions.size());
}

inline DropRates drop_rates(const AccuracyPair& auth, const std::vector<AccuracyPair>& unauth) {
    if (unauth.empty()) throw DataError("drop_rates: no unauthorized accuracy pairs");
    DropRates out;
    out.d_a = auth.a_sl - auth.a_ip;
    for (const auto& p : unauth) out.d_u += p.a_sl - p.a_ip;
    out.d_u /= static_cast<double>(unauth.size());
    return out;
}

// The three weighted scores. The leading accuracy acts as a fraction
// (value/100); the published tables pin this convention.
inline double weighted_drop(double a_ip_auth, double d_u, double d_a) {
    return a_ip_auth / 100.0 * (d_u - d_a);
}

inline double ownership_score(double a_u_sl, double a_a_method, double a_u_method) {
    return a_u_sl / 100.0 * (a_a_method - a_u_method);
}

inline double authorization_score(double a_a, double a_u) {
    return a_a / 100.0 * (a_a - a_u);
}

struct MetricsReport {
    std::string scenario;
    std::string authorized_domain;
    AccuracyPair authorized;
    std::vector<AccuracyPair> unauthorized;  // per-domain breakdown
    double d_a = 0.0, d_u = 0.0;
    std::optional<double> w_ua, o_ua, d_ua;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["scenario"] = scenario;
        j["authorized_domain"] = authorized_domain;
        j["authorized"] = {{"domain", authorized.domain},
                           {"a_sl", authorized.a_sl},
                           {"a_ip", authorized.a_ip}};
        j["unauthorized"] = nlohmann::json::array();
        for (const auto& p : unauthorized)
            j["unauthorized"].push_back(
                {{"domain", p.domain}, {"a_sl", p.a_sl}, {"a_ip", p.a_ip}});
        j["D_a"] = d_a;
        j["D_u"] = d_u;
        if (w_ua) j["W_ua"] = *w_ua;
        if (o_ua) j["O_ua"] = *o_ua;
        if (d_ua) j["D_ua"] = *d_ua;
        return j;
    }
};

inline MetricsReport make_target_report(const std::string& scenario, const AccuracyPair& auth,
                                        const std::vector<AccuracyPair>& unauth) {
    MetricsReport r;
    r.scenario = scenario;
    r.authorized_domain = auth.domain;
    r.authorized = auth;
    r.unauthorized = unauth;
    DropRates d = drop_rates(auth, unauth);
    r.d_a = d.d_a;
    r.d_u = d.d_u;
    r.w_ua = weighted_drop(auth.a_ip, d.d_u, d.d_a);
    return r;
}

inline MetricsReport make_ownership_report(const AccuracyPair& auth,
                                           const std::vector<AccuracyPair>& unauth) {
    MetricsReport r = make_target_report("ownership", auth, unauth);
    // O_ua uses the first (patched) unauthorized slot
    r.o_ua = ownership_score(unauth.front().a_sl, auth.a_ip, unauth.front().a_ip);
    return r;
}

inline MetricsReport make_authorization_report(const AccuracyPair& auth,
                                               const std::vector<AccuracyPair>& unauth) {
    MetricsReport r = make_target_report("authorization", auth, unauth);
    double a_u = 0.0;
    for (const auto& p : unauth) a_u += p.a_ip;
    a_u /= static_cast<double>(unauth.size());
    r.d_ua = authorization_score(auth.a_ip, a_u);
    return r;
}

}  // namespace pfence
