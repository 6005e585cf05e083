#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "msd/checkpoint.hpp"
#include "msd/data.hpp"
#include "msd/nn.hpp"
#include "msd/optim.hpp"
#include "msd/tokenizer.hpp"

namespace msd {
namespace eval {

// ---------------------------------------------------------------------------
// Report shape shared by all metrics: value is the mean over repeats, with the
// per-repeat values and their standard deviation kept for inspection.
// ---------------------------------------------------------------------------
struct MetricReport {
    std::string name;
    double value = 0.0;
    double stddev = 0.0;
    std::vector<double> repeats;
    Json config_echo;

    static MetricReport from_repeats(std::string name, std::vector<double> vals, Json echo) {
        if (vals.empty()) fail_contract("metric report: need at least one repeat");
        MetricReport r;
        r.name = std::move(name);
        r.repeats = std::move(vals);
        double sum = 0.0;
        for (double v : r.repeats) sum += v;
        r.value = sum / static_cast<double>(r.repeats.size());
        if (r.repeats.size() > 1) {
            double ss = 0.0;
            for (double v : r.repeats) ss += (v - r.value) * (v - r.value);
            r.stddev = std::sqrt(ss / static_cast<double>(r.repeats.size() - 1));
        }
        r.config_echo = std::move(echo);
        return r;
    }

    Json to_json() const {
        Json j;
        j["metric"] = name;
        j["value"] = value;
        j["stddev"] = stddev;
        j["repeats"] = repeats;
        j["config"] = config_echo;
        return j;
    }
};

// ---------------------------------------------------------------------------
// Small dense symmetric linear algebra for the Fréchet distance.
// ---------------------------------------------------------------------------
namespace linalg {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n x n).
// A is overwritten; returns eigenvalues, fills eigvecs column-major-by-row
// convention V[i*n+j] = component i of eigenvector j.
inline std::vector<double> jacobi_eigen(std::vector<double> A, std::size_t n,
                                        std::vector<double>& eigvecs) {
    eigvecs.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) eigvecs[i * n + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += A[p * n + q] * A[p * n + q];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = A[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (A[q * n + q] - A[p * n + p]) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = A[i * n + p], aiq = A[i * n + q];
                    A[i * n + p] = c * aip - s * aiq;
                    A[i * n + q] = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = A[p * n + i], aqi = A[q * n + i];
                    A[p * n + i] = c * api - s * aqi;
                    A[q * n + i] = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = eigvecs[i * n + p], viq = eigvecs[i * n + q];
                    eigvecs[i * n + p] = c * vip - s * viq;
                    eigvecs[i * n + q] = s * vip + c * viq;
                }
            }
    }
    std::vector<double> vals(n);
    for (std::size_t i = 0; i < n; ++i) vals[i] = A[i * n + i];
    return vals;
}

inline std::vector<double> matmul_sq(const std::vector<double>& a, const std::vector<double>& b,
                                     std::size_t n) {
    std::vector<double> c(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < n; ++t) {
            const double av = a[i * n + t];
            for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * b[t * n + j];
        }
    return c;
}

// Principal square root of a symmetric PSD matrix; tiny negative eigenvalues
// from roundoff are clamped to zero.
inline std::vector<double> sqrt_psd(const std::vector<double>& S, std::size_t n) {
    std::vector<double> vecs;
    std::vector<double> vals = jacobi_eigen(S, n, vecs);
    std::vector<double> out(n * n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        const double lam = std::sqrt(std::max(vals[k], 0.0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out[i * n + j] += lam * vecs[i * n + k] * vecs[j * n + k];
    }
    return out;
}

}  // namespace linalg

// ---------------------------------------------------------------------------
// Fixed statistical embedding: per channel mean, std, and autocorrelation at
// lags 1..5; windows map to vectors of dimension 7*d.
// ---------------------------------------------------------------------------
inline constexpr std::size_t kAutocorrLags = 5;

inline std::vector<double> window_features(const std::vector<double>& values, std::size_t tau,
                                           std::size_t dims) {
    std::vector<double> feat;
    feat.reserve(dims * (2 + kAutocorrLags));
    for (std::size_t f = 0; f < dims; ++f) {
        double mean = 0.0;
        for (std::size_t t = 0; t < tau; ++t) mean += values[t * dims + f];
        mean /= static_cast<double>(tau);
        double var = 0.0;
        for (std::size_t t = 0; t < tau; ++t) {
            const double d = values[t * dims + f] - mean;
            var += d * d;
        }
        feat.push_back(mean);
        feat.push_back(std::sqrt(var / static_cast<double>(tau)));
        for (std::size_t lag = 1; lag <= kAutocorrLags; ++lag) {
            double acc = 0.0;
            for (std::size_t t = 0; t + lag < tau; ++t)
                acc += (values[t * dims + f] - mean) * (values[(t + lag) * dims + f] - mean);
            feat.push_back(var > 0.0 ? acc / var : 0.0);
        }
    }
    return feat;
}

struct GaussianStats {
    std::vector<double> mean;
    std::vector<double> cov;  // row-major dim x dim
    std::size_t dim = 0;
};

inline GaussianStats feature_stats(const std::vector<std::vector<double>>& embeddings,
                                   double ridge) {
    GaussianStats g;
    const std::size_t n = embeddings.size();
    g.dim = embeddings[0].size();
    g.mean.assign(g.dim, 0.0);
    for (const auto& e : embeddings)
        for (std::size_t i = 0; i < g.dim; ++i) g.mean[i] += e[i];
    for (auto& m : g.mean) m /= static_cast<double>(n);
    g.cov.assign(g.dim * g.dim, 0.0);
    for (const auto& e : embeddings)
        for (std::size_t i = 0; i < g.dim; ++i)
            for (std::size_t j = 0; j < g.dim; ++j)
                g.cov[i * g.dim + j] += (e[i] - g.mean[i]) * (e[j] - g.mean[j]);
    const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
    for (auto& c : g.cov) c /= denom;
    for (std::size_t i = 0; i < g.dim; ++i) g.cov[i * g.dim + i] += ridge;
    return g;
}

// Gaussian Frechet distance |mu1-mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)),
// computed through the symmetric form (S1^(1/2) S2 S1^(1/2))^(1/2).
inline double frechet_from_stats(const GaussianStats& a, const GaussianStats& b) {
    const std::size_t n = a.dim;
    double mean_term = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
    const std::vector<double> root_a = linalg::sqrt_psd(a.cov, n);
    const std::vector<double> inner =
        linalg::matmul_sq(linalg::matmul_sq(root_a, b.cov, n), root_a, n);
    const std::vector<double> cross = linalg::sqrt_psd(inner, n);
    double tr = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        tr += a.cov[i * n + i] + b.cov[i * n + i] - 2.0 * cross[i * n + i];
    return std::max(mean_term + tr, 0.0);
}

inline constexpr double kFrechetRidge = 1e-6;

inline double feature_frechet_score(const TimeSeriesDataset& real,
                                    const TimeSeriesDataset& synthetic) {
    if (real.size() < 2 || synthetic.size() < 2)
        fail_contract("feature_frechet_score: need at least 2 windows per side");
    if (real.tau != synthetic.tau || real.dims != synthetic.dims)
        fail_contract("feature_frechet_score: window shapes differ");
    auto embed = [&](const TimeSeriesDataset& ds) {
        std::vector<std::vector<double>> out;
        out.reserve(ds.size());
        for (const auto& w : ds.windows) out.push_back(window_features(w.values, ds.tau, ds.dims));
        return out;
    };
    const GaussianStats ga = feature_stats(embed(real), kFrechetRidge);
    const GaussianStats gb = feature_stats(embed(synthetic), kFrechetRidge);
    return frechet_from_stats(ga, gb);
}

// ---------------------------------------------------------------------------
// Marginal histogram distance: mean over features of the total-variation
// distance between normalized histograms of pooled values.
// ---------------------------------------------------------------------------
inline double marginal_hist_distance(const TimeSeriesDataset& real,
                                     const TimeSeriesDataset& synthetic, std::size_t bins = 50) {
    if (bins < 2) fail_contract("marginal_hist_distance: bins must be >= 2");
    if (real.tau != synthetic.tau || real.dims != synthetic.dims)
        fail_contract("marginal_hist_distance: window shapes differ");
    const std::size_t dims = real.dims;
    double total = 0.0;
    for (std::size_t f = 0; f < dims; ++f) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        auto scan = [&](const TimeSeriesDataset& ds) {
            for (const auto& w : ds.windows)
                for (std::size_t t = 0; t < ds.tau; ++t) {
                    lo = std::min(lo, w.values[t * dims + f]);
                    hi = std::max(hi, w.values[t * dims + f]);
                }
        };
        scan(real);
        scan(synthetic);
        if (hi <= lo) continue;  // all values identical on both sides: distance 0
        std::vector<double> pa(bins, 0.0), pb(bins, 0.0);
        auto fill = [&](const TimeSeriesDataset& ds, std::vector<double>& p) {
            std::size_t count = 0;
            for (const auto& w : ds.windows)
                for (std::size_t t = 0; t < ds.tau; ++t) {
                    const double v = w.values[t * dims + f];
                    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) *
                                                      static_cast<double>(bins));
                    if (b >= bins) b = bins - 1;
                    p[b] += 1.0;
                    ++count;
                }
            for (auto& x : p) x /= static_cast<double>(count);
        };
        fill(real, pa);
        fill(synthetic, pb);
        double tv = 0.0;
        for (std::size_t b = 0; b < bins; ++b) tv += std::abs(pa[b] - pb[b]);
        total += 0.5 * tv;
    }
    return total / static_cast<double>(dims);
}

// ---------------------------------------------------------------------------
// Fraction of codebook entries selected at least once on the dataset.
// ---------------------------------------------------------------------------
inline std::vector<double> codebook_usage_pct(const MultiScaleTokenizer& tok,
                                              const TimeSeriesDataset& ds) {
    if (ds.size() == 0) fail_contract("codebook_usage_pct: empty dataset");
    std::vector<std::set<std::int64_t>> used(tok.scales.size());
    const std::size_t batch = 64;
    for (std::size_t start = 0; start < ds.size(); start += batch) {
        const std::size_t stop = std::min(ds.size(), start + batch);
        std::vector<std::size_t> idx(stop - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        TokenizeResult res = tokenize_batch(tok, tok.batch_tensor(ds, idx));
        for (std::size_t k = 0; k < tok.scales.size(); ++k)
            used[k].insert(res.tokens[k].begin(), res.tokens[k].end());
    }
    std::vector<double> out;
    for (std::size_t k = 0; k < tok.scales.size(); ++k)
        out.push_back(static_cast<double>(used[k].size()) /
                      static_cast<double>(tok.scales[k].codebook.size()));
    return out;
}

// ---------------------------------------------------------------------------
// Post-hoc discriminative score: train a small conv classifier to separate
// real (label 1) from synthetic (label 0), report |accuracy - 0.5| on the
// held-out split, repeated over independent seeds.
// ---------------------------------------------------------------------------
struct ProbeConfig {
    std::size_t steps = 2000;
    std::size_t batch = 128;
    std::size_t hidden = 16;
    double lr = 1e-3;
    std::size_t repeats = 5;
    std::uint64_t seed = 1234;
    double train_frac = 0.8;

    Json to_json() const {
        return Json{{"steps", steps},     {"batch", batch}, {"hidden", hidden},
                    {"lr", lr},           {"repeats", repeats}, {"seed", seed},
                    {"train_frac", train_frac}};
    }
};

namespace detail {

class ConvClassifier {
public:
    nn::Conv1d c1, c2;
    nn::Linear head;

    ConvClassifier(std::size_t dims, std::size_t hidden, std::size_t n_out, Rng& rng)
        : c1(dims, hidden, 3, 1, 1, 1, rng),
          c2(hidden, hidden, 4, 2, 1, 1, rng),
          head(hidden, n_out, rng) {}

    TensorPtr forward(Tape& tape, const TensorPtr& x) const {
        TensorPtr h = relu(tape, c1.forward(tape, x));
        h = relu(tape, c2.forward(tape, h));
        return head.forward(tape, mean_lastdim(tape, h));
    }

    nn::ParamMap params() const {
        nn::ParamMap p;
        p.merge("c1", c1.params());
        p.merge("c2", c2.params());
        p.merge("head", head.params());
        return p;
    }
};

inline TensorPtr windows_to_channels(const TimeSeriesDataset& ds,
                                     const std::vector<std::size_t>& idx) {
    auto x = zeros({idx.size(), ds.dims, ds.tau});
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& w = ds.windows[idx[b]].values;
        for (std::size_t t = 0; t < ds.tau; ++t)
            for (std::size_t f = 0; f < ds.dims; ++f)
                x->value[(b * ds.dims + f) * ds.tau + t] = w[t * ds.dims + f];
    }
    return x;
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i)
        std::swap(idx[i - 1],
                  idx[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i)))]);
    return idx;
}

}  // namespace detail

inline MetricReport discriminative_score(const TimeSeriesDataset& real,
                                         const TimeSeriesDataset& synthetic,
                                         const ProbeConfig& cfg) {
    if (real.tau != synthetic.tau || real.dims != synthetic.dims)
        fail_contract("discriminative_score: window shapes differ");
    if (real.size() < 20 || synthetic.size() < 20)
        fail_contract("discriminative_score: need at least 20 windows per side, got ",
                      real.size(), " and ", synthetic.size());

    std::vector<double> scores;
    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
        Rng rng(derive_seed(cfg.seed, "discriminative", rep));
        const auto perm_r = detail::shuffled_indices(real.size(), rng);
        const auto perm_s = detail::shuffled_indices(synthetic.size(), rng);
        const auto split_r = static_cast<std::size_t>(static_cast<double>(real.size()) * cfg.train_frac);
        const auto split_s =
            static_cast<std::size_t>(static_cast<double>(synthetic.size()) * cfg.train_frac);

        detail::ConvClassifier cls(real.dims, cfg.hidden, 2, rng);
        AdamW optim(cls.params().tensors(), {.lr = cfg.lr});
        const std::size_t half = std::max<std::size_t>(cfg.batch / 2, 1);
        for (std::size_t step = 0; step < cfg.steps; ++step) {
            std::vector<std::size_t> idx_r(half), idx_s(half);
            for (auto& i : idx_r)
                i = perm_r[static_cast<std::size_t>(
                    rng.uniform_int(static_cast<std::int64_t>(split_r)))];
            for (auto& i : idx_s)
                i = perm_s[static_cast<std::size_t>(
                    rng.uniform_int(static_cast<std::int64_t>(split_s)))];
            Tape tape;
            TensorPtr xr = detail::windows_to_channels(real, idx_r);
            TensorPtr xs = detail::windows_to_channels(synthetic, idx_s);
            TensorPtr lr_ = cls.forward(tape, xr);
            TensorPtr ls_ = cls.forward(tape, xs);
            std::vector<std::int64_t> ones(half, 1), zeros_(half, 0);
            TensorPtr loss = add(tape, cross_entropy(tape, lr_, ones),
                                 cross_entropy(tape, ls_, zeros_));
            tape.backward(loss);
            optim.step();
        }

        // Balanced held-out accuracy.
        const std::size_t n_eval = std::min(real.size() - split_r, synthetic.size() - split_s);
        std::size_t correct = 0;
        auto eval_side = [&](const TimeSeriesDataset& ds, const std::vector<std::size_t>& perm,
                             std::size_t split, std::int64_t label) {
            std::vector<std::size_t> idx(perm.begin() + split, perm.begin() + split + n_eval);
            Tape tape;
            TensorPtr logits = cls.forward(tape, detail::windows_to_channels(ds, idx));
            for (std::size_t i = 0; i < n_eval; ++i) {
                const double l0 = logits->value[i * 2], l1 = logits->value[i * 2 + 1];
                const std::int64_t pred = l1 > l0 ? 1 : 0;
                if (pred == label) ++correct;
            }
        };
        eval_side(real, perm_r, split_r, 1);
        eval_side(synthetic, perm_s, split_s, 0);
        const double acc = static_cast<double>(correct) / static_cast<double>(2 * n_eval);
        scores.push_back(std::abs(acc - 0.5));
    }
    return MetricReport::from_repeats("discriminative_score", std::move(scores), cfg.to_json());
}

// ---------------------------------------------------------------------------
// Predictive score: causal conv predictor trained on synthetic windows with a
// one-step-shifted target, MAE measured on real windows.
// ---------------------------------------------------------------------------
namespace detail {

class CausalPredictor {
public:
    nn::Conv1d c1, c2, c3;

    CausalPredictor(std::size_t dims, std::size_t hidden, Rng& rng)
        : c1(dims, hidden, 3, 1, 0, 1, rng, /*causal=*/true),
          c2(hidden, hidden, 3, 1, 0, 2, rng, /*causal=*/true),
          c3(hidden, dims, 1, 1, 0, 1, rng) {}

    TensorPtr forward(Tape& tape, const TensorPtr& x) const {
        TensorPtr h = relu(tape, c1.forward(tape, x));
        h = relu(tape, c2.forward(tape, h));
        return c3.forward(tape, h);
    }

    nn::ParamMap params() const {
        nn::ParamMap p;
        p.merge("c1", c1.params());
        p.merge("c2", c2.params());
        p.merge("c3", c3.params());
        return p;
    }
};

// Inputs (B,d,tau-1) from steps 0..tau-2; targets the same window shifted one
// step ahead.
inline std::pair<TensorPtr, TensorPtr> shifted_pair(const TimeSeriesDataset& ds,
                                                    const std::vector<std::size_t>& idx) {
    const std::size_t T = ds.tau - 1;
    auto x = zeros({idx.size(), ds.dims, T});
    auto y = zeros({idx.size(), ds.dims, T});
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& w = ds.windows[idx[b]].values;
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t f = 0; f < ds.dims; ++f) {
                x->value[(b * ds.dims + f) * T + t] = w[t * ds.dims + f];
                y->value[(b * ds.dims + f) * T + t] = w[(t + 1) * ds.dims + f];
            }
    }
    return {x, y};
}

}  // namespace detail

inline MetricReport predictive_score(const TimeSeriesDataset& real,
                                     const TimeSeriesDataset& synthetic, const ProbeConfig& cfg) {
    if (real.tau < 2) fail_contract("predictive_score: tau must be >= 2");
    if (real.tau != synthetic.tau || real.dims != synthetic.dims)
        fail_contract("predictive_score: window shapes differ");

    std::vector<double> maes;
    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
        Rng rng(derive_seed(cfg.seed, "predictive", rep));
        detail::CausalPredictor pred(real.dims, cfg.hidden, rng);
        AdamW optim(pred.params().tensors(), {.lr = cfg.lr});
        for (std::size_t step = 0; step < cfg.steps; ++step) {
            std::vector<std::size_t> idx(cfg.batch);
            for (auto& i : idx)
                i = static_cast<std::size_t>(
                    rng.uniform_int(static_cast<std::int64_t>(synthetic.size())));
            auto [x, y] = detail::shifted_pair(synthetic, idx);
            Tape tape;
            TensorPtr out = pred.forward(tape, x);
            TensorPtr diff = sub(tape, out, y);
            // L1 objective via |z| = relu(z) + relu(-z)
            TensorPtr loss = mean_all(
                tape, add(tape, relu(tape, diff), relu(tape, scale(tape, diff, -1.0))));
            tape.backward(loss);
            optim.step();
        }
        // MAE on every real window.
        double total = 0.0;
        std::size_t count = 0;
        const std::size_t batch = 128;
        for (std::size_t start = 0; start < real.size(); start += batch) {
            const std::size_t stop = std::min(real.size(), start + batch);
            std::vector<std::size_t> idx(stop - start);
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
            auto [x, y] = detail::shifted_pair(real, idx);
            Tape tape;
            TensorPtr out = pred.forward(tape, x);
            for (std::size_t i = 0; i < out->size(); ++i)
                total += std::abs(out->value[i] - y->value[i]);
            count += out->size();
        }
        maes.push_back(total / static_cast<double>(count));
    }
    return MetricReport::from_repeats("predictive_score", std::move(maes), cfg.to_json());
}

}  // namespace eval
}  // namespace msd
