#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "promptfence/config.hpp"
#include "promptfence/metrics.hpp"
#include "promptfence/model.hpp"
#include "promptfence/toy_data.hpp"
#include "promptfence/trainer.hpp"

namespace pfence {

struct ResultRow {
    std::string scenario;
    std::string authorized_domain;
    std::string domain;
    double a_sl = 0.0;
    double a_ip = 0.0;
    std::string manifest_hash;  // provenance: training manifest behind a_ip
};

struct ExperimentResult {
    std::vector<ResultRow> rows;
    MetricsReport report;
    nlohmann::json manifest;
    std::string results_json;
    std::uint64_t result_hash = 0;
};

namespace detail {

template <typename F>
auto stage(const char* name, F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("stage ") + name + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(std::string("stage ") + name + ": " + e.what());
    } catch (const NumericError& e) {
        throw NumericError(std::string("stage ") + name + ": " + e.what());
    }
}

inline std::map<std::string, Dataset> load_domains(const RunConfig& cfg, const Backbone& bb) {
    if (cfg.data_source == "toy") return make_toy_domains(bb, cfg.toy);
    DatasetIndex index = ingest_dataset(cfg.data_source);
    std::map<std::string, Dataset> domains;
    for (const auto& name : index.domains)
        domains[name] = load_domain(index, name, DomainTag::test);
    return domains;
}

inline void evaluate_pairs(const Backbone& bb, const Scenario& sc, const PromptModel& baseline,
                           const PromptModel& protect, const Mat& class_emb,
                           std::size_t eval_batch, AccuracyPair& auth_pair,
                           std::vector<AccuracyPair>& unauth_pairs) {
    FeatureSet fs_auth = encode_dataset(bb, sc.eval_authorized);
    auth_pair = {sc.eval_authorized.name,
                 evaluate_accuracy(baseline, bb, fs_auth, class_emb, eval_batch),
                 evaluate_accuracy(protect, bb, fs_auth, class_emb, eval_batch),
                 DomainTag::authorized};
    for (const Dataset& d : sc.eval_unauthorized) {
        FeatureSet fsd = encode_dataset(bb, d);
        unauth_pairs.push_back({d.name,
                                evaluate_accuracy(baseline, bb, fsd, class_emb, eval_batch),
                                evaluate_accuracy(protect, bb, fsd, class_emb, eval_batch),
                                DomainTag::unauthorized});
    }
}

}  // namespace detail

// Renders a set of reports into the published-table layout: one row per
// (authorized domain, evaluated domain) plus a mean row over the reports.
struct RenderedTables {
    std::string csv;
    nlohmann::json json;
};

inline RenderedTables render_tables(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) throw DataError("render_tables: no reports");
    RenderedTables out;
    std::ostringstream csv;
    csv.setf(std::ios::fixed);
    csv.precision(4);
    csv << "scenario,authorized_domain,domain,a_sl,a_ip,D_u,D_a,W_ua,O_ua,D_ua\n";
    out.json["rows"] = nlohmann::json::array();

    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::json(*v) : nlohmann::json();
    };
    auto opt_csv = [](const std::optional<double>& v) {
        if (!v) return std::string();
        std::ostringstream s;
        s.setf(std::ios::fixed);
        s.precision(4);
        s << *v;
        return s.str();
    };

    double mean_w = 0, mean_du = 0, mean_da = 0, mean_o = 0, mean_dua = 0;
    int n_w = 0, n_o = 0, n_dua = 0;
    for (const auto& r : reports) {
        std::vector<AccuracyPair> all_pairs = {r.authorized};
        all_pairs.insert(all_pairs.end(), r.unauthorized.begin(), r.unauthorized.end());
        for (const auto& p : all_pairs) {
            csv << r.scenario << ',' << r.authorized_domain << ',' << p.domain << ',' << p.a_sl
                << ',' << p.a_ip << ',' << r.d_u << ',' << r.d_a << ',' << opt_csv(r.w_ua) << ','
                << opt_csv(r.o_ua) << ',' << opt_csv(r.d_ua) << '\n';
            out.json["rows"].push_back({{"scenario", r.scenario},
                                        {"authorized_domain", r.authorized_domain},
                                        {"domain", p.domain},
                                        {"a_sl", p.a_sl},
                                        {"a_ip", p.a_ip},
                                        {"D_u", r.d_u},
                                        {"D_a", r.d_a},
                                        {"W_ua", opt(r.w_ua)},
                                        {"O_ua", opt(r.o_ua)},
                                        {"D_ua", opt(r.d_ua)}});
        }
        mean_du += r.d_u;
        mean_da += r.d_a;
        if (r.w_ua) {
            mean_w += *r.w_ua;
            ++n_w;
        }
        if (r.o_ua) {
            mean_o += *r.o_ua;
            ++n_o;
        }
        if (r.d_ua) {
            mean_dua += *r.d_ua;
            ++n_dua;
        }
    }
    const double n = static_cast<double>(reports.size());
    std::optional<double> w = n_w ? std::optional<double>(mean_w / n_w) : std::nullopt;
    std::optional<double> o = n_o ? std::optional<double>(mean_o / n_o) : std::nullopt;
    std::optional<double> dua = n_dua ? std::optional<double>(mean_dua / n_dua) : std::nullopt;
    csv << "mean,,,,," << mean_du / n << ',' << mean_da / n << ',' << opt_csv(w) << ','
        << opt_csv(o) << ',' << opt_csv(dua) << '\n';
    out.json["mean"] = {{"D_u", mean_du / n},
                        {"D_a", mean_da / n},
                        {"W_ua", opt(w)},
                        {"O_ua", opt(o)},
                        {"D_ua", opt(dua)}};
    out.csv = csv.str();
    return out;
}

inline ExperimentResult run_experiment(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    auto bb = detail::stage("build-backbone", [&] { return make_backbone(cfg.backbone); });

    std::map<std::string, Dataset> domains =
        detail::stage("load-data", [&] { return detail::load_domains(cfg, *bb); });

    Scenario sc = detail::stage("build-scenario",
                                [&] { return build_scenario(cfg.scenario, domains, cfg.seed); });

    const bool want_files = !cfg.output_dir.empty();
    if (want_files) fs::create_directories(cfg.output_dir);
    auto path_of = [&](const char* name) {
        return want_files ? (fs::path(cfg.output_dir) / name).string() : std::string();
    };

    TrainOutcome baseline = detail::stage("train-baseline", [&] {
        return train_baseline(*bb, sc.train_authorized, cfg.train,
                              {path_of("baseline_loss.csv"), path_of("baseline.ckpt")});
    });

    std::vector<std::string> warnings;
    if (sc.degenerate_unauthorized)
        warnings.push_back("n_aug=0: unauthorized domain equals authorized; protection is vacuous");

    TrainOutcome protect = detail::stage("train-protected", [&]() -> TrainOutcome {
        if (!cfg.protection_enabled) return baseline;  // baseline-only mode
        return train_target_specified(*bb, sc.train_authorized, sc.train_unauthorized, cfg.train,
                                      {path_of("protected_loss.csv"), path_of("protected.ckpt")},
                                      warnings);
    });

    // Evaluate both models on every split; each split is encoded once.
    Mat class_emb = class_embedding_matrix(*bb, sc.train_authorized.class_names);
    std::size_t eval_batch = cfg.eval_batch > 0 ? static_cast<std::size_t>(cfg.eval_batch)
                                                : static_cast<std::size_t>(cfg.train.batch_size);
    const std::string protect_hash = hash_hex(protect.model.params_hash());

    AccuracyPair auth_pair;
    std::vector<AccuracyPair> unauth_pairs;
    detail::stage("evaluate", [&] {
        detail::evaluate_pairs(*bb, sc, baseline.model, protect.model, class_emb, eval_batch,
                               auth_pair, unauth_pairs);
        return 0;
    });

    ExperimentResult result;
    result.report = detail::stage("report", [&] {
        switch (cfg.scenario.mode) {
            case ScenarioMode::ownership:
                return make_ownership_report(auth_pair, unauth_pairs);
            case ScenarioMode::authorization:
                return make_authorization_report(auth_pair, unauth_pairs);
            default:
                return make_target_report(to_string(cfg.scenario.mode), auth_pair, unauth_pairs);
        }
    });

    result.rows.push_back({to_string(cfg.scenario.mode), cfg.scenario.authorized,
                           auth_pair.domain, auth_pair.a_sl, auth_pair.a_ip, protect_hash});
    for (const auto& p : unauth_pairs)
        result.rows.push_back({to_string(cfg.scenario.mode), cfg.scenario.authorized, p.domain,
                               p.a_sl, p.a_ip, protect_hash});

    RenderedTables tables = render_tables({result.report});
    result.results_json = tables.json.dump(2);
    result.result_hash = fnv1a(fnv1a_init(), result.results_json);

    result.manifest["seed"] = cfg.seed;
    result.manifest["scenario"] = to_string(cfg.scenario.mode);
    result.manifest["baseline"] = baseline.manifest;
    result.manifest["protected"] = protect.manifest;
    result.manifest["datasets"] = {
        {"train_authorized", hash_hex(sc.train_authorized.content_hash())},
        {"train_unauthorized", hash_hex(sc.train_unauthorized.content_hash())},
        {"eval_authorized", hash_hex(sc.eval_authorized.content_hash())}};
    for (const Dataset& d : sc.eval_unauthorized)
        result.manifest["datasets"]["eval:" + d.name] = hash_hex(d.content_hash());
    result.manifest["result_hash"] = hash_hex(result.result_hash);
    result.manifest["warnings"] = warnings;

    if (want_files) {
        std::ofstream(path_of("results.json")) << result.results_json << "\n";
        std::ofstream(path_of("results.csv")) << tables.csv;
        std::ofstream(path_of("manifest.json")) << result.manifest.dump(2) << "\n";
    }
    return result;
}

// Re-derives the result table from stored checkpoints instead of retraining;
// the data, scenario and evaluation path are rebuilt deterministically from
// the same config.
inline ExperimentResult evaluate_from_checkpoints(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    if (cfg.output_dir.empty())
        throw ConfigError("evaluate: config needs output_dir pointing at a finished run");
    auto bb = detail::stage("build-backbone", [&] { return make_backbone(cfg.backbone); });
    std::map<std::string, Dataset> domains =
        detail::stage("load-data", [&] { return detail::load_domains(cfg, *bb); });
    Scenario sc = detail::stage("build-scenario",
                                [&] { return build_scenario(cfg.scenario, domains, cfg.seed); });

    PromptModel baseline = PromptModel::init(bb->spec(), cfg.seed);
    PromptModel protect = PromptModel::init(bb->spec(), cfg.seed);
    detail::stage("load-checkpoints", [&] {
        baseline.load((fs::path(cfg.output_dir) / "baseline.ckpt").string());
        const std::string protected_path = (fs::path(cfg.output_dir) / "protected.ckpt").string();
        if (cfg.protection_enabled)
            protect.load(protected_path);
        else
            protect = baseline;
        return 0;
    });

    Mat class_emb = class_embedding_matrix(*bb, sc.train_authorized.class_names);
    std::size_t eval_batch = cfg.eval_batch > 0 ? static_cast<std::size_t>(cfg.eval_batch)
                                                : static_cast<std::size_t>(cfg.train.batch_size);
    AccuracyPair auth_pair;
    std::vector<AccuracyPair> unauth_pairs;
    detail::stage("evaluate", [&] {
        detail::evaluate_pairs(*bb, sc, baseline, protect, class_emb, eval_batch, auth_pair,
                               unauth_pairs);
        return 0;
    });

    ExperimentResult result;
    result.report = detail::stage("report", [&] {
        switch (cfg.scenario.mode) {
            case ScenarioMode::ownership:
                return make_ownership_report(auth_pair, unauth_pairs);
            case ScenarioMode::authorization:
                return make_authorization_report(auth_pair, unauth_pairs);
            default:
                return make_target_report(to_string(cfg.scenario.mode), auth_pair, unauth_pairs);
        }
    });
    const std::string protect_hash = hash_hex(protect.params_hash());
    result.rows.push_back({to_string(cfg.scenario.mode), cfg.scenario.authorized, auth_pair.domain,
                           auth_pair.a_sl, auth_pair.a_ip, protect_hash});
    for (const auto& p : unauth_pairs)
        result.rows.push_back({to_string(cfg.scenario.mode), cfg.scenario.authorized, p.domain,
                               p.a_sl, p.a_ip, protect_hash});
    RenderedTables tables = render_tables({result.report});
    result.results_json = tables.json.dump(2);
    result.result_hash = fnv1a(fnv1a_init(), result.results_json);
    return result;
}

}  // namespace pfence
