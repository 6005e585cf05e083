#pragma once

#include <string>
#include <vector>

#include "msd/eval.hpp"
#include "msd/generate.hpp"
#include "msd/seqmodel.hpp"
#include "msd/tokenizer.hpp"

namespace msd {

struct DatasetSpec {
    std::string kind = "sines";  // "sines" or "csv"
    std::string path;
    std::size_t n = 2000;   // window count for synthetic data
    std::size_t tau = 24;
    std::size_t dims = 5;
    std::size_t stride = 1;
};

struct RunConfig {
    std::uint64_t seed = 1234;
    std::string out = "runs/default";
    DatasetSpec dataset;
    TokenizerConfig tokenizer;
    std::vector<std::size_t> n_enc;  // downsampling stages per scale; must equal log2(r)
    TransformerConfig transformer;
    SamplerConfig sampler;
    std::size_t sample_count = 256;
    eval::ProbeConfig probe;
    std::size_t hist_bins = 50;

    void validate() const {
        if (dataset.kind != "sines" && dataset.kind != "csv")
            fail_config("dataset.kind must be 'sines' or 'csv', got '", dataset.kind, "'");
        if (dataset.kind == "csv" && dataset.path.empty())
            fail_config("dataset.kind 'csv' requires dataset.path");
        if (dataset.tau == 0) fail_config("dataset.tau must be positive");
        tokenizer.validate(dataset.tau);
        if (!n_enc.empty()) {
            if (n_enc.size() != tokenizer.K)
                fail_config("n_enc must have K=", tokenizer.K, " entries, got ", n_enc.size());
            for (std::size_t k = 0; k < n_enc.size(); ++k)
                if (n_enc[k] != TokenizerConfig::log2_exact(tokenizer.r[k]))
                    fail_config("n_enc[", k + 1, "]=", n_enc[k], " must equal log2(r[", k + 1,
                                "])=", TokenizerConfig::log2_exact(tokenizer.r[k]));
        }
        transformer.validate();
        std::size_t total_v = 0;
        for (std::size_t v : tokenizer.V) total_v += v;
        sampler.validate(total_v);
        if (hist_bins < 2) fail_config("hist_bins must be >= 2");
    }
};

// ---------------------------------------------------------------------------
// JSON (de)serialization with defaults for every field.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void maybe(const Json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig run_config_from_json(const Json& j) {
    RunConfig c;
    detail::maybe(j, "seed", c.seed);
    detail::maybe(j, "out", c.out);
    if (j.contains("dataset")) {
        const Json& d = j.at("dataset");
        detail::maybe(d, "kind", c.dataset.kind);
        detail::maybe(d, "path", c.dataset.path);
        detail::maybe(d, "n", c.dataset.n);
        detail::maybe(d, "tau", c.dataset.tau);
        detail::maybe(d, "dims", c.dataset.dims);
        detail::maybe(d, "stride", c.dataset.stride);
    }
    if (j.contains("tokenizer")) {
        const Json& t = j.at("tokenizer");
        detail::maybe(t, "K", c.tokenizer.K);
        detail::maybe(t, "r", c.tokenizer.r);
        detail::maybe(t, "V", c.tokenizer.V);
        if (t.contains("r") && !t.contains("K")) c.tokenizer.K = c.tokenizer.r.size();
        detail::maybe(t, "d_c", c.tokenizer.d_c);
        detail::maybe(t, "hidden", c.tokenizer.hidden);
        detail::maybe(t, "lambda", c.tokenizer.lambda_embed);
        detail::maybe(t, "beta", c.tokenizer.beta);
        detail::maybe(t, "reset", c.tokenizer.reset);
        detail::maybe(t, "ema", c.tokenizer.ema);
        detail::maybe(t, "similarity", c.tokenizer.similarity);
        detail::maybe(t, "iters", c.tokenizer.iters);
        detail::maybe(t, "batch", c.tokenizer.batch);
        detail::maybe(t, "lr", c.tokenizer.lr);
        detail::maybe(t, "weight_decay", c.tokenizer.weight_decay);
        detail::maybe(t, "n_enc", c.n_enc);
    }
    if (j.contains("transformer")) {
        const Json& t = j.at("transformer");
        detail::maybe(t, "n_layers", c.transformer.n_layers);
        detail::maybe(t, "d_m", c.transformer.d_m);
        detail::maybe(t, "heads", c.transformer.heads);
        detail::maybe(t, "ff_mult", c.transformer.ff_mult);
        detail::maybe(t, "epsilon", c.transformer.epsilon);
        detail::maybe(t, "dropout", c.transformer.dropout_rate);
        detail::maybe(t, "iters", c.transformer.iters);
        detail::maybe(t, "batch", c.transformer.batch);
        detail::maybe(t, "lr", c.transformer.lr);
        detail::maybe(t, "weight_decay", c.transformer.weight_decay);
    }
    if (j.contains("sampler")) {
        const Json& s = j.at("sampler");
        detail::maybe(s, "temperature", c.sampler.temperature);
        detail::maybe(s, "top_k", c.sampler.top_k);
        detail::maybe(s, "constrained", c.sampler.constrained);
        detail::maybe(s, "n", c.sample_count);
    }
    if (j.contains("eval")) {
        const Json& e = j.at("eval");
        detail::maybe(e, "steps", c.probe.steps);
        detail::maybe(e, "batch", c.probe.batch);
        detail::maybe(e, "hidden", c.probe.hidden);
        detail::maybe(e, "lr", c.probe.lr);
        detail::maybe(e, "repeats", c.probe.repeats);
        detail::maybe(e, "bins", c.hist_bins);
    }
    c.tokenizer.seed = c.seed;
    c.transformer.seed = c.seed;
    c.sampler.seed = c.seed;
    c.probe.seed = c.seed;
    return c;
}

inline Json run_config_to_json(const RunConfig& c) {
    Json j;
    j["seed"] = c.seed;
    j["out"] = c.out;
    j["dataset"] = {{"kind", c.dataset.kind}, {"path", c.dataset.path}, {"n", c.dataset.n},
                    {"tau", c.dataset.tau},   {"dims", c.dataset.dims}, {"stride", c.dataset.stride}};
    j["tokenizer"] = {{"K", c.tokenizer.K},
                      {"r", c.tokenizer.r},
                      {"V", c.tokenizer.V},
                      {"d_c", c.tokenizer.d_c},
                      {"hidden", c.tokenizer.hidden},
                      {"lambda", c.tokenizer.lambda_embed},
                      {"beta", c.tokenizer.beta},
                      {"reset", c.tokenizer.reset},
                      {"ema", c.tokenizer.ema},
                      {"similarity", c.tokenizer.similarity},
                      {"iters", c.tokenizer.iters},
                      {"batch", c.tokenizer.batch},
                      {"lr", c.tokenizer.lr},
                      {"weight_decay", c.tokenizer.weight_decay},
                      {"n_enc", c.n_enc}};
    j["transformer"] = {{"n_layers", c.transformer.n_layers},
                        {"d_m", c.transformer.d_m},
                        {"heads", c.transformer.heads},
                        {"ff_mult", c.transformer.ff_mult},
                        {"epsilon", c.transformer.epsilon},
                        {"dropout", c.transformer.dropout_rate},
                        {"iters", c.transformer.iters},
                        {"batch", c.transformer.batch},
                        {"lr", c.transformer.lr},
                        {"weight_decay", c.transformer.weight_decay}};
    j["sampler"] = {{"temperature", c.sampler.temperature},
                    {"top_k", c.sampler.top_k},
                    {"constrained", c.sampler.constrained},
                    {"n", c.sample_count}};
    j["eval"] = {{"steps", c.probe.steps}, {"batch", c.probe.batch},
                 {"hidden", c.probe.hidden}, {"lr", c.probe.lr},
                 {"repeats", c.probe.repeats}, {"bins", c.hist_bins}};
    return j;
}

// ---------------------------------------------------------------------------
// Shipped presets. The per-dataset settings mirror the reference
// hyperparameter tables (multi-scale and single-scale variants); "desk-sines"
// is a CPU-sized configuration that trains end to end in minutes.
// ---------------------------------------------------------------------------

inline Json preset_config(const std::string& name) {
    auto base = [](std::vector<std::size_t> r, std::vector<std::size_t> V,
                   std::vector<std::size_t> n_enc, double lambda, double epsilon) {
        Json j;
        j["tokenizer"] = {{"K", r.size()}, {"r", r},           {"V", V},
                          {"n_enc", n_enc}, {"d_c", 512},      {"hidden", 128},
                          {"lambda", lambda}, {"beta", 0.01},  {"iters", 5000},
                          {"batch", 128}};
        j["transformer"] = {{"n_layers", 2}, {"d_m", 512}, {"heads", 4},
                            {"epsilon", epsilon}, {"iters", 5000}, {"batch", 128}};
        return j;
    };
    Json j;
    if (name == "sines") {
        j = base({2, 4}, {512, 512}, {1, 2}, 1.0, 0.1);
        j["dataset"] = {{"kind", "sines"}, {"tau", 24}, {"dims", 5}, {"n", 10000}};
    } else if (name == "stocks") {
        j = base({2, 4}, {256, 512}, {1, 2}, 0.5, 0.3);
        j["dataset"] = {{"kind", "csv"}, {"tau", 24}};
    } else if (name == "etth") {
        j = base({4, 8}, {128, 512}, {2, 3}, 0.5, 0.1);
        j["dataset"] = {{"kind", "csv"}, {"tau", 24}};
    } else if (name == "mujoco") {
        j = base({2, 4}, {512, 512}, {1, 2}, 1.0, 0.1);
        j["dataset"] = {{"kind", "csv"}, {"tau", 24}};
    } else if (name == "energy") {
        j = base({2, 4}, {512, 512}, {1, 2}, 0.0005, 0.1);
        j["dataset"] = {{"kind", "csv"}, {"tau", 24}};
    } else if (name == "fmri") {
        j = base({2, 4, 8}, {128, 512, 512}, {1, 2, 3}, 0.01, 0.1);
        j["dataset"] = {{"kind", "csv"}, {"tau", 24}};
    } else if (name == "sdformer-sines") {
        j = base({4}, {1024}, {2}, 0.5, 0.3);
        j["dataset"] = {{"kind", "sines"}, {"tau", 24}, {"dims", 5}, {"n", 10000}};
    } else if (name == "sdformer-stocks") {
        j = base({4}, {512}, {2}, 2.0, 0.3);
        j["tokenizer"]["d_c"] = 256;
        j["dataset"] = {{"kind", "csv"}, {"tau", 24}};
    } else if (name == "sdformer-etth") {
        j = base({4}, {512}, {2}, 0.5, 0.3);
        j["transformer"]["n_layers"] = 6;
        j["dataset"] = {{"kind", "csv"}, {"tau", 24}};
    } else if (name == "sdformer-mujoco") {
        j = base({4}, {512}, {2}, 0.5, 0.1);
        j["dataset"] = {{"kind", "csv"}, {"tau", 24}};
    } else if (name == "sdformer-energy") {
        j = base({4}, {512}, {2}, 0.001, 0.1);
        j["dataset"] = {{"kind", "csv"}, {"tau", 24}};
    } else if (name == "sdformer-fmri") {
        j = base({2}, {512}, {1}, 0.01, 0.1);
        j["dataset"] = {{"kind", "csv"}, {"tau", 24}};
    } else if (name == "desk-sines") {
        j["dataset"] = {{"kind", "sines"}, {"tau", 24}, {"dims", 5}, {"n", 2000}};
        j["tokenizer"] = {{"K", 2},       {"r", {2, 4}},  {"V", {128, 128}}, {"n_enc", {1, 2}},
                          {"d_c", 24},    {"hidden", 24}, {"lambda", 0.5},   {"beta", 0.01},
                          {"iters", 4000}, {"batch", 16}};
        j["transformer"] = {{"n_layers", 2}, {"d_m", 64},    {"heads", 4},
                            {"epsilon", 0.1}, {"iters", 5000}, {"batch", 16}};
        j["eval"] = {{"steps", 800}, {"batch", 64}, {"hidden", 16}, {"repeats", 5}};
        j["sampler"] = {{"n", 256}};
    } else {
        fail_config("unknown preset '", name,
                    "' (expected desk-sines, sines, stocks, etth, mujoco, energy, fmri, or an "
                    "sdformer-* variant)");
    }
    return j;
}

// ---------------------------------------------------------------------------
// --set key=value overrides using dotted paths into the JSON tree.
// ---------------------------------------------------------------------------

inline void apply_override(Json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        fail_config("--set expects key=value, got '", assignment, "'");
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    std::string pointer = "/";
    for (char ch : key) pointer += ch == '.' ? '/' : ch;
    Json parsed;
    try {
        parsed = Json::parse(value);
    } catch (const Json::parse_error&) {
        parsed = value;  // plain string
    }
    j[Json::json_pointer(pointer)] = parsed;
}

// Load the dataset named by the config (synthetic or CSV) and normalize it.
inline TimeSeriesDataset load_dataset(const RunConfig& cfg) {
    TimeSeriesDataset ds;
    if (cfg.dataset.kind == "sines") {
        ds = gen_sines(cfg.dataset.n, cfg.dataset.tau, cfg.dataset.dims, cfg.seed);
    } else {
        ds = load_csv(cfg.dataset.path, cfg.dataset.tau, cfg.dataset.stride);
    }
    ds.normalize();
    return ds;
}

}  // namespace msd
