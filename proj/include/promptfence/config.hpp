#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "promptfence/backbone.hpp"
#include "promptfence/scenarios.hpp"
#include "promptfence/toy_data.hpp"
#include "promptfence/trainer.hpp"

namespace pfence {

// Run configuration: a single `key = value` file, one assignment per line,
// '#' comments. Unknown keys are rejected so typos cannot silently fall back
// to defaults. Only the output directory and the worker count may come from
// the environment (PFENCE_OUT_DIR, PFENCE_WORKERS).
struct RunConfig {
    std::uint64_t seed = 1;
    std::string output_dir;

    ScenarioSpec scenario;
    BackboneSpec backbone;
    TrainConfig train;

    std::string data_source = "toy";  // "toy" or a dataset root path
    ToyTaskConfig toy;

    bool protection_enabled = true;
    int eval_batch = 0;  // 0: use train batch size

    void finalize() {
        if (const char* env = std::getenv("PFENCE_OUT_DIR")) output_dir = env;
        backbone.seed = backbone.seed ? backbone.seed : seed;
        train.seed = seed;
        toy.seed = seed;
        backbone.validate();
        train.validate();
        scenario.validate();
    }
};

namespace config_detail {

struct Parser {
    std::map<std::string, std::string> kv;
    std::map<std::string, bool> consumed;

    static Parser from_text(const std::string& text) {
        Parser p;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string stripped = line.substr(0, line.find('#'));
            auto notspace = [](unsigned char c) { return !std::isspace(c); };
            stripped.erase(stripped.begin(),
                           std::find_if(stripped.begin(), stripped.end(), notspace));
            stripped.erase(std::find_if(stripped.rbegin(), stripped.rend(), notspace).base(),
                           stripped.end());
            if (stripped.empty()) continue;
            auto eq = stripped.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
            std::string key = stripped.substr(0, eq);
            std::string value = stripped.substr(eq + 1);
            auto trim = [&](std::string& s) {
                s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
                s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
            };
            trim(key);
            trim(value);
            if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
            if (p.kv.count(key))
                throw ConfigError("config: duplicate key '" + key + "'");
            p.kv[key] = value;
            p.consumed[key] = false;
        }
        return p;
    }

    bool has(const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) return false;
        consumed[key] = true;
        return true;
    }

    std::string str(const std::string& key, const std::string& fallback) {
        return has(key) ? kv[key] : fallback;
    }

    double num(const std::string& key, double fallback) {
        if (!has(key)) return fallback;
        try {
            std::size_t used = 0;
            double v = std::stod(kv[key], &used);
            if (used != kv[key].size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError("config: key '" + key + "' is not a number: '" + kv[key] + "'");
        }
    }

    std::int64_t integer(const std::string& key, std::int64_t fallback) {
        double v = num(key, static_cast<double>(fallback));
        auto r = static_cast<std::int64_t>(v);
        if (static_cast<double>(r) != v)
            throw ConfigError("config: key '" + key + "' must be an integer");
        return r;
    }

    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const std::string& v = kv[key];
        if (v == "true" || v == "1" || v == "on") return true;
        if (v == "false" || v == "0" || v == "off") return false;
        throw ConfigError("config: key '" + key + "' is not a boolean: '" + v + "'");
    }

    std::vector<std::string> list(const std::string& key) {
        std::vector<std::string> out;
        if (!has(key)) return out;
        std::istringstream in(kv[key]);
        std::string item;
        while (std::getline(in, item, ',')) {
            item.erase(std::remove_if(item.begin(), item.end(),
                                      [](unsigned char c) { return std::isspace(c); }),
                       item.end());
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }

    void reject_unknown() const {
        for (const auto& [key, used] : consumed)
            if (!used) throw ConfigError("config: unknown key '" + key + "'");
    }
};

inline Corner corner_from_name(const std::string& name) {
    if (name == "top_left") return Corner::top_left;
    if (name == "top_right") return Corner::top_right;
    if (name == "bottom_left") return Corner::bottom_left;
    if (name == "bottom_right") return Corner::bottom_right;
    throw ConfigError("config: unknown watermark position '" + name + "'");
}

}  // namespace config_detail

inline RunConfig parse_run_config_text(const std::string& text) {
    using config_detail::Parser;
    Parser p = Parser::from_text(text);
    RunConfig c;

    c.seed = static_cast<std::uint64_t>(p.integer("seed", 1));
    c.output_dir = p.str("output_dir", "");
    c.data_source = p.str("data.source", "toy");
    c.protection_enabled = p.boolean("protection.enabled", true);
    c.eval_batch = static_cast<int>(p.integer("eval.batch_size", 0));

    c.scenario.mode = scenario_mode_from_name(p.str("scenario.mode", "target_specified"));
    c.scenario.authorized = p.str("scenario.authorized", "authorized");
    c.scenario.unauthorized = p.str("scenario.unauthorized", "");
    c.scenario.test_domains = p.list("scenario.test_domains");
    c.scenario.n_aug = static_cast<int>(p.integer("scenario.n_aug", 2));
    c.scenario.watermark.patch_size = static_cast<int>(p.integer("scenario.watermark.size", 16));
    c.scenario.watermark.position =
        config_detail::corner_from_name(p.str("scenario.watermark.position", "bottom_right"));
    c.scenario.watermark.seed =
        static_cast<std::uint64_t>(p.integer("scenario.watermark.seed", 1));

    std::string kind = p.str("backbone.kind", "toy");
    if (kind == "toy")
        c.backbone.kind = BackboneKind::toy;
    else if (kind == "external-adapter")
        c.backbone.kind = BackboneKind::external_adapter;
    else
        throw ConfigError("config: unknown backbone kind '" + kind + "'");
    c.backbone.M = static_cast<int>(p.integer("backbone.m", 3));
    if (p.has("backbone.layer_dims")) {
        c.backbone.layer_dims.clear();
        for (const auto& d : p.list("backbone.layer_dims"))
            c.backbone.layer_dims.push_back(std::stoi(d));
    }
    c.backbone.C = static_cast<int>(p.integer("backbone.c", 64));
    c.backbone.d_t = static_cast<int>(p.integer("backbone.d_t", 32));
    c.backbone.seed = static_cast<std::uint64_t>(p.integer("backbone.seed", 0));

    c.train.epochs = static_cast<int>(p.integer("train.epochs", 30));
    c.train.batch_size = static_cast<int>(p.integer("train.batch_size", 64));
    c.train.lr = p.num("train.lr", 1e-5);
    c.train.lambda1 = p.num("train.lambda1", 0.1);
    c.train.lambda2 = p.num("train.lambda2", 0.1);
    c.train.tau = p.num("train.tau", 0.07);
    c.train.cap_m = p.num("train.cap_m", 10.0);
    c.train.bank_shots = static_cast<int>(p.integer("train.bank_shots", 5));
    c.train.zero_shot_tau = p.num("train.zero_shot_tau", 0.07);

    c.toy.n_classes = static_cast<int>(p.integer("data.toy.classes", 4));
    c.toy.image_hw = static_cast<int>(p.integer("data.toy.image_size", 32));
    c.toy.train_per_class = static_cast<int>(p.integer("data.toy.train_per_class", 150));
    c.toy.test_per_class = static_cast<int>(p.integer("data.toy.test_per_class", 100));

    p.reject_unknown();
    c.finalize();
    return c;
}

inline RunConfig parse_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config_text(buf.str());
}

}  // namespace pfence
