#pragma once

#include <iomanip>
#include <ostream>
#include <string>

#include "msd/eval.hpp"
#include "msd/generate.hpp"
#include "msd/seqmodel.hpp"

namespace msd {

// On-disk artifact formats shared by the CLI and the test suites. All writers
// are deterministic functions of their inputs.

// Token dump: one JSON record per window with per-scale raw token sequences.
inline void dump_tokens_jsonl(std::ostream& out, const MultiScaleTokenizer& model,
                              const TimeSeriesDataset& ds, std::size_t batch = 64) {
    for (std::size_t start = 0; start < ds.size(); start += batch) {
        const std::size_t stop = std::min(ds.size(), start + batch);
        std::vector<std::size_t> idx(stop - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        TokenizeResult res = tokenize_batch(model, model.batch_tensor(ds, idx));
        for (std::size_t b = 0; b < idx.size(); ++b) {
            Json rec;
            rec["window"] = idx[b];
            rec["split"] = idx[b] < ds.train_count() ? "train" : "test";
            Json scales = Json::array();
            for (std::size_t k = 0; k < model.scales.size(); ++k) {
                const std::size_t Lk = model.token_length(k);
                scales.push_back(std::vector<std::int64_t>(res.tokens[k].begin() + b * Lk,
                                                           res.tokens[k].begin() + (b + 1) * Lk));
            }
            rec["tokens"] = scales;
            out << rec.dump() << "\n";
        }
    }
}

// Long-format sample CSV: sample id, time step, one column per feature.
inline void write_samples_csv(std::ostream& out, const GenerationResult& result, std::size_t tau,
                              std::size_t dims) {
    out << "sample,t";
    for (std::size_t f = 0; f < dims; ++f) out << ",f" << f;
    out << "\n" << std::setprecision(17);
    for (std::size_t i = 0; i < result.windows.size(); ++i)
        for (std::size_t t = 0; t < tau; ++t) {
            out << i << "," << t;
            for (std::size_t f = 0; f < dims; ++f)
                out << "," << result.windows[i]->value[t * dims + f];
            out << "\n";
        }
}

inline Json metrics_to_json(const std::vector<eval::MetricReport>& reports) {
    Json out = Json::array();
    for (const auto& r : reports) out.push_back(r.to_json());
    return out;
}

// Dataset manifest: window geometry, count, and normalization constants.
inline Json dataset_manifest(const TimeSeriesDataset& ds) {
    Json j;
    j["tau"] = ds.tau;
    j["dims"] = ds.dims;
    j["n_windows"] = ds.size();
    j["n_train"] = ds.train_count();
    j["feature_names"] = ds.feature_names;
    j["normalized"] = ds.normalized;
    j["normalizer_min"] = ds.normalizer.min;
    j["normalizer_max"] = ds.normalizer.max;
    return j;
}

// Mean per-element squared reconstruction error of the frozen tokenizer over
// a window range of the dataset.
inline double reconstruction_mse(const MultiScaleTokenizer& model, const TimeSeriesDataset& ds,
                                 std::size_t begin, std::size_t end, std::size_t batch = 64) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t start = begin; start < end; start += batch) {
        const std::size_t stop = std::min(end, start + batch);
        std::vector<std::size_t> idx(stop - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        auto x = model.batch_tensor(ds, idx);
        auto res = tokenize_batch(model, x);
        for (std::size_t i = 0; i < x->size(); ++i) {
            const double d = x->value[i] - res.recon->value[i];
            total += d * d;
        }
        count += x->size();
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace msd
