#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msd/checkpoint.hpp"
#include "msd/data.hpp"
#include "msd/nn.hpp"
#include "msd/optim.hpp"

namespace msd {

// ---------------------------------------------------------------------------
// Codebook: V embedding vectors of dim d_c with smoothed usage statistics.
// Vectors are updated by EMA / reset, never by gradient descent, unless the
// gradient-update ablation is explicitly enabled.
// ---------------------------------------------------------------------------
class Codebook {
public:
    TensorPtr vectors;                    // (V, d_c)
    std::vector<double> usage;            // smoothed per-entry usage
    std::vector<std::int64_t> batch_counts;
    bool unit_norm = true;                // similarity policy: rows kept at L2 norm 1
    bool seeded_from_data = false;        // becomes true after first-batch re-init

    Codebook() = default;
    Codebook(std::size_t V, std::size_t d_c, bool unit_norm_, Rng& rng) : unit_norm(unit_norm_) {
        if (V == 0) fail_config("codebook: size must be positive");
        vectors = zeros({V, d_c});
        for (auto& v : vectors->value) v = rng.uniform(-1.0, 1.0);
        if (unit_norm) renormalize();
        usage.assign(V, 1.0);  // start exactly at the reset threshold
        batch_counts.assign(V, 0);
    }

    std::size_t size() const { return vectors->shape[0]; }
    std::size_t dim() const { return vectors->shape[1]; }

    void renormalize() {
        const std::size_t V = size(), d = dim();
        for (std::size_t v = 0; v < V; ++v) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double x = vectors->value[v * d + j];
                s += x * x;
            }
            const double r = std::max(std::sqrt(s), 1e-12);
            for (std::size_t j = 0; j < d; ++j) vectors->value[v * d + j] /= r;
        }
    }
};

// Token for each row of h: the entry with the largest inner product under the
// unit-norm policy, or the nearest entry in L2 when similarity is disabled.
// Ties go to the smallest index.
inline std::vector<std::int64_t> quantize(const std::vector<double>& h_rows, std::size_t n_rows,
                                          const Codebook& cb) {
    if (cb.size() == 0) fail_config("quantize: empty codebook");
    const std::size_t d = cb.dim(), V = cb.size();
    if (h_rows.size() != n_rows * d)
        fail_contract("quantize: expected ", n_rows, "x", d, " values, got ", h_rows.size());
    std::vector<std::int64_t> tokens(n_rows);
    const double* pc = cb.vectors->value.data();
#pragma omp parallel for schedule(static) if (n_rows * V * d > 65536)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n_rows); ++i) {
        const double* row = h_rows.data() + i * d;
        std::int64_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t v = 0; v < V; ++v) {
            const double* c = pc + v * d;
            double s = 0.0;
            if (cb.unit_norm) {
                for (std::size_t j = 0; j < d; ++j) s += row[j] * c[j];
            } else {
                for (std::size_t j = 0; j < d; ++j) {
                    const double diff = row[j] - c[j];
                    s -= diff * diff;
                }
            }
            if (s > best_score) {
                best_score = s;
                best = static_cast<std::int64_t>(v);
            }
        }
        tokens[i] = best;
    }
    return tokens;
}

inline std::vector<std::int64_t> quantize(const TensorPtr& h, const Codebook& cb) {
    if (h->shape.size() != 2 || h->shape[1] != cb.dim())
        fail_contract("quantize: h must be (L,", cb.dim(), "), got ", shape_str(h->shape));
    return quantize(h->value, h->shape[0], cb);
}

// Row i of the result is codebook entry tokens[i], exactly.
inline TensorPtr dequantize(const std::vector<std::int64_t>& tokens, const Codebook& cb) {
    const std::size_t d = cb.dim(), V = cb.size();
    auto out = zeros({tokens.size(), d});
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= static_cast<std::int64_t>(V))
            throw DecodeError("dequantize: token " + std::to_string(tokens[i]) + " at position " +
                              std::to_string(i) + " outside [0," + std::to_string(V) + ")");
        std::copy_n(cb.vectors->value.data() + tokens[i] * d, d, out->value.data() + i * d);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Codebook statistics updates.
// ---------------------------------------------------------------------------

// EMA pull of each used entry toward the mean of its assigned rows:
// c <- (1-beta) c + beta * mean(assigned h), applied once per step.
inline void ema_update(Codebook& cb, const std::vector<std::int64_t>& tokens,
                       const std::vector<double>& h_rows, double beta) {
    if (beta <= 0.0 || beta >= 1.0) fail_contract("ema_update: beta must be in (0,1)");
    const std::size_t d = cb.dim(), V = cb.size();
    std::vector<double> sum(V * d, 0.0);
    std::vector<std::int64_t> count(V, 0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto v = static_cast<std::size_t>(tokens[i]);
        ++count[v];
        for (std::size_t j = 0; j < d; ++j) sum[v * d + j] += h_rows[i * d + j];
    }
    for (std::size_t v = 0; v < V; ++v) {
        if (count[v] == 0) continue;
        for (std::size_t j = 0; j < d; ++j) {
            const double mean = sum[v * d + j] / static_cast<double>(count[v]);
            cb.vectors->value[v * d + j] = (1.0 - beta) * cb.vectors->value[v * d + j] + beta * mean;
        }
    }
    if (cb.unit_norm) cb.renormalize();
}

// Smoothed usage: u <- (1-beta) u + beta n, for every entry.
inline void usage_update(Codebook& cb, const std::vector<std::int64_t>& counts, double beta) {
    if (beta <= 0.0 || beta >= 1.0) fail_contract("usage_update: beta must be in (0,1)");
    if (counts.size() != cb.size()) fail_contract("usage_update: counts size mismatch");
    for (std::size_t v = 0; v < cb.size(); ++v)
        cb.usage[v] = (1.0 - beta) * cb.usage[v] + beta * static_cast<double>(counts[v]);
}

inline std::vector<std::int64_t> count_assignments(const std::vector<std::int64_t>& tokens,
                                                   std::size_t V) {
    std::vector<std::int64_t> counts(V, 0);
    for (auto t : tokens) ++counts[static_cast<std::size_t>(t)];
    return counts;
}

// Replace every entry with usage below the threshold by a uniformly sampled
// row of the batch encodings H. Returns the number of entries replaced.
inline std::size_t codebook_reset(Codebook& cb, const std::vector<double>& h_rows,
                                  std::size_t n_rows, Rng& rng, double threshold = 1.0) {
    const std::size_t d = cb.dim();
    std::size_t replaced = 0;
    for (std::size_t v = 0; v < cb.size(); ++v) {
        if (cb.usage[v] >= threshold) continue;
        if (n_rows == 0) throw StateError("codebook reset triggered with no batch encodings");
        const auto pick = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(n_rows)));
        std::copy_n(h_rows.data() + pick * d, d, cb.vectors->value.data() + v * d);
        ++replaced;
    }
    if (replaced > 0 && cb.unit_norm) cb.renormalize();
    return replaced;
}

// ---------------------------------------------------------------------------
// Scale module and the multi-scale cascade.
// ---------------------------------------------------------------------------

struct TokenizerConfig {
    std::size_t K = 2;
    std::vector<std::size_t> r{2, 4};       // downsampling factor per scale (powers of two)
    std::vector<std::size_t> V{128, 128};   // codebook size per scale
    std::size_t d_c = 32;                   // codebook/embedding dim
    std::size_t hidden = 32;                // conv channel width
    double lambda_embed = 0.5;
    double beta = 0.01;
    bool reset = true;
    bool ema = true;        // false: gradient-updated codebooks (ablation)
    bool similarity = true; // false: L2 distance quantization (ablation)
    std::size_t iters = 5000;
    std::size_t batch = 16;
    double lr = 1e-3;
    double weight_decay = 0.0;
    std::uint64_t seed = 1234;

    static std::size_t log2_exact(std::size_t r) {
        std::size_t t = 0, x = r;
        while (x > 1) {
            if (x % 2 != 0) fail_config("downsampling factor ", r, " is not a power of two");
            x /= 2;
            ++t;
        }
        return t;
    }

    void validate(std::size_t tau) const {
        if (K == 0) fail_config("tokenizer: K must be positive");
        if (r.size() != K || V.size() != K)
            fail_config("tokenizer: r and V must have K=", K, " entries (got ", r.size(), " and ",
                        V.size(), ")");
        for (std::size_t k = 0; k < K; ++k) {
            if (r[k] == 0) fail_config("tokenizer: r must be positive");
            log2_exact(r[k]);
            if (tau % r[k] != 0)
                fail_config("tokenizer: window length ", tau, " not divisible by r[", k + 1,
                            "]=", r[k]);
            if (V[k] == 0) fail_config("tokenizer: codebook sizes must be positive");
        }
        if (beta <= 0.0 || beta >= 1.0) fail_config("tokenizer: beta must be in (0,1)");
        if (lambda_embed < 0.0) fail_config("tokenizer: lambda must be >= 0");
        if (batch == 0) fail_config("tokenizer: batch must be positive");
    }
};

class ScaleModule {
public:
    nn::Encoder encoder;
    nn::Decoder decoder;
    Codebook codebook;
    std::size_t r = 1;      // downsampling factor
    std::size_t depth = 0;  // log2(r)

    ScaleModule() = default;
    ScaleModule(std::size_t dims, const TokenizerConfig& cfg, std::size_t k, Rng& rng)
        : r(cfg.r[k]), depth(TokenizerConfig::log2_exact(cfg.r[k])) {
        encoder = nn::Encoder(dims, cfg.hidden, cfg.d_c, depth, rng);
        decoder = nn::Decoder(dims, cfg.hidden, cfg.d_c, depth, rng);
        codebook = Codebook(cfg.V[k], cfg.d_c, cfg.similarity, rng);
        codebook.vectors->requires_grad = !cfg.ema;
    }

    nn::ParamMap params() const {
        nn::ParamMap p;
        p.merge("encoder", encoder.params());
        p.merge("decoder", decoder.params());
        return p;
    }
};

// Per-scale intermediates of one forward pass over a batch.
struct ScaleForward {
    TensorPtr h;        // (B*Lk, d_c) encoder output after the normalization policy
    std::vector<std::int64_t> tokens;
    TensorPtr h_quant;  // (B*Lk, d_c) dequantized rows
    TensorPtr recon;    // (B, d, tau) this scale's reconstruction
};

struct TokenizerForward {
    std::vector<ScaleForward> scales;
    TensorPtr recon;   // (B, d, tau) sum over scales
    TensorPtr loss;    // scalar, when requested
};

class MultiScaleTokenizer {
public:
    TokenizerConfig cfg;
    std::size_t tau = 0, dims = 0;
    std::vector<ScaleModule> scales;
    Normalizer normalizer;  // data-unit mapping captured at training time

    MultiScaleTokenizer() = default;
    MultiScaleTokenizer(std::size_t tau_, std::size_t dims_, const TokenizerConfig& cfg_)
        : cfg(cfg_), tau(tau_), dims(dims_) {
        cfg.validate(tau_);
        Rng rng(derive_seed(cfg.seed, "tokenizer/init"));
        for (std::size_t k = 0; k < cfg.K; ++k) scales.emplace_back(dims_, cfg, k, rng);
    }

    std::size_t token_length(std::size_t k) const { return tau / scales[k].r; }
    std::vector<std::size_t> token_lengths() const {
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k < scales.size(); ++k) out.push_back(token_length(k));
        return out;
    }

    nn::ParamMap params() const {
        nn::ParamMap p;
        for (std::size_t k = 0; k < scales.size(); ++k)
            p.merge("scale" + std::to_string(k), scales[k].params());
        return p;
    }

    // Residual cascade over a (B,d,tau) batch. Each scale encodes the current
    // residual, quantizes, decodes, and hands the new residual to the next
    // scale; the final reconstruction is the sum of the per-scale decodes.
    TokenizerForward forward(Tape& tape, const TensorPtr& x, bool with_loss) const {
        if (x->shape.size() != 3 || x->shape[1] != dims || x->shape[2] != tau)
            fail_contract("tokenizer forward: expected (B,", dims, ",", tau, "), got ",
                          shape_str(x->shape));
        const std::size_t B = x->shape[0];
        TokenizerForward out;
        TensorPtr residual = x;
        TensorPtr recon_total;
        std::vector<TensorPtr> embed_terms;
        for (std::size_t k = 0; k < scales.size(); ++k) {
            const ScaleModule& sm = scales[k];
            const std::size_t Lk = token_length(k);

            TensorPtr h_raw = sm.encoder.forward(tape, residual);  // (B,d_c,Lk)
            TensorPtr h_rows = channels_to_rows(tape, h_raw);      // (B*Lk, d_c)
            TensorPtr h = cfg.similarity ? l2_normalize_rows(tape, h_rows) : h_rows;

            ScaleForward sf;
            sf.tokens = quantize(h->value, B * Lk, sm.codebook);
            sf.h = h;
            sf.h_quant = dequantize(sf.tokens, sm.codebook);

            // Straight-through: decoder sees the quantized rows, the encoder
            // receives the decoder-input gradient unchanged.
            TensorPtr dec_in = add(tape, h, stop_gradient(sub(tape, sf.h_quant, h)));
            sf.recon = sm.decoder.forward(tape, rows_to_channels(tape, dec_in, B, Lk));

            if (with_loss) {
                if (cfg.similarity) {
                    // mean over rows of (1 - h . sg(h_quant))
                    TensorPtr dots = sum_lastdim(tape, mul(tape, h, stop_gradient(sf.h_quant)));
                    embed_terms.push_back(mean_all(tape, add_scalar(tape, scale(tape, dots, -1.0), 1.0)));
                } else {
                    // commitment: mean over rows of |h - sg(h_quant)|^2
                    TensorPtr diff = sub(tape, h, stop_gradient(sf.h_quant));
                    embed_terms.push_back(
                        scale(tape, mean_all(tape, mul(tape, diff, diff)), static_cast<double>(cfg.d_c)));
                }
                if (!cfg.ema) {
                    // Gradient-update ablation: pull selected entries toward
                    // the (detached) encoder output.
                    TensorPtr picked = embedding(tape, sm.codebook.vectors, sf.tokens);
                    if (cfg.similarity) {
                        TensorPtr dots =
                            sum_lastdim(tape, mul(tape, stop_gradient(h), picked));
                        embed_terms.push_back(
                            mean_all(tape, add_scalar(tape, scale(tape, dots, -1.0), 1.0)));
                    } else {
                        TensorPtr diff = sub(tape, stop_gradient(h), picked);
                        embed_terms.push_back(scale(tape, mean_all(tape, mul(tape, diff, diff)),
                                                    static_cast<double>(cfg.d_c)));
                    }
                }
            }

            recon_total = recon_total ? add(tape, recon_total, sf.recon) : sf.recon;
            if (k + 1 < scales.size()) residual = sub(tape, residual, sf.recon);
            out.scales.push_back(std::move(sf));
        }
        out.recon = recon_total;
        if (with_loss) {
            TensorPtr diff = sub(tape, x, recon_total);
            TensorPtr recon_loss =
                scale(tape, sum_all(tape, mul(tape, diff, diff)), 1.0 / static_cast<double>(B));
            TensorPtr loss = recon_loss;
            for (const auto& term : embed_terms)
                loss = add(tape, loss, scale(tape, term, cfg.lambda_embed));
            out.loss = loss;
        }
        return out;
    }

    // Assemble (B,d,tau) channels-first batch from (t,f) row-major windows.
    TensorPtr batch_tensor(const TimeSeriesDataset& ds, const std::vector<std::size_t>& idx) const {
        auto x = zeros({idx.size(), dims, tau});
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const auto& w = ds.windows[idx[b]].values;
            for (std::size_t t = 0; t < tau; ++t)
                for (std::size_t f = 0; f < dims; ++f)
                    x->value[(b * dims + f) * tau + t] = w[t * dims + f];
        }
        return x;
    }
};

// Sum of per-scale reconstructions; all shapes must agree.
inline TensorPtr reconstruct(const std::vector<TensorPtr>& scale_recons) {
    if (scale_recons.empty()) fail_contract("reconstruct: no scales");
    auto out = tensor(scale_recons[0]->shape, scale_recons[0]->value);
    out->requires_grad = false;
    for (std::size_t k = 1; k < scale_recons.size(); ++k) {
        if (scale_recons[k]->shape != out->shape)
            fail_contract("reconstruct: shape mismatch at scale ", k + 1, ": ",
                          shape_str(scale_recons[k]->shape), " vs ", shape_str(out->shape));
        for (std::size_t i = 0; i < out->size(); ++i) out->value[i] += scale_recons[k]->value[i];
    }
    return out;
}

// Total training objective for one window: squared reconstruction error plus
// lambda times the per-scale mean embedding terms (1 - h . sg(h_quant)).
inline TensorPtr tokenizer_loss(Tape& tape, const TensorPtr& x, const TensorPtr& recon,
                                const std::vector<std::pair<TensorPtr, TensorPtr>>& h_pairs,
                                double lambda_embed) {
    detail::check_same_shape(x, recon, "tokenizer_loss");
    TensorPtr diff = sub(tape, x, recon);
    TensorPtr loss = sum_all(tape, mul(tape, diff, diff));
    for (const auto& [h, h_quant] : h_pairs) {
        TensorPtr dots = sum_lastdim(tape, mul(tape, h, stop_gradient(h_quant)));
        TensorPtr term = mean_all(tape, add_scalar(tape, scale(tape, dots, -1.0), 1.0));
        loss = add(tape, loss, scale(tape, term, lambda_embed));
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Frozen-model tokenization.
// ---------------------------------------------------------------------------

struct TokenizeResult {
    std::vector<std::vector<std::int64_t>> tokens;  // per scale, length B*Lk
    std::vector<TensorPtr> scale_recons;            // per scale, (B,d,tau)
    TensorPtr recon;                                // (B,d,tau)
};

inline TokenizeResult tokenize_batch(const MultiScaleTokenizer& model, const TensorPtr& x) {
    Tape tape;  // discarded; nothing here requires gradients
    TokenizerForward fw = model.forward(tape, x, /*with_loss=*/false);
    TokenizeResult out;
    for (auto& sf : fw.scales) {
        out.tokens.push_back(std::move(sf.tokens));
        out.scale_recons.push_back(sf.recon);
    }
    out.recon = fw.recon;
    return out;
}

// Single window (tau,d) -> per-scale tokens and reconstructions.
inline TokenizeResult tokenize(const MultiScaleTokenizer& model, const TensorPtr& window) {
    if (window->shape.size() != 2 || window->shape[0] != model.tau ||
        window->shape[1] != model.dims)
        fail_contract("tokenize: expected (", model.tau, ",", model.dims, "), got ",
                      shape_str(window->shape));
    auto x = zeros({1, model.dims, model.tau});
    for (std::size_t t = 0; t < model.tau; ++t)
        for (std::size_t f = 0; f < model.dims; ++f)
            x->value[f * model.tau + t] = window->value[t * model.dims + f];
    return tokenize_batch(model, x);
}

// ---------------------------------------------------------------------------
// Training loop: encoders/decoders learn by AdamW, codebooks by EMA + reset.
// ---------------------------------------------------------------------------

struct TokenizerTraining {
    MultiScaleTokenizer model;
    std::vector<double> loss_history;
    std::vector<std::size_t> reset_counts;  // total per step across scales
};

inline TokenizerTraining train_tokenizer(const TimeSeriesDataset& ds, const TokenizerConfig& cfg) {
    cfg.validate(ds.tau);
    TokenizerTraining out{MultiScaleTokenizer(ds.tau, ds.dims, cfg), {}, {}};
    MultiScaleTokenizer& model = out.model;
    model.normalizer = ds.normalizer;

    std::vector<TensorPtr> train_params = model.params().tensors();
    if (!cfg.ema)
        for (auto& sm : model.scales) train_params.push_back(sm.codebook.vectors);
    AdamW optim(std::move(train_params), {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
    Rng batch_rng(derive_seed(cfg.seed, "tokenizer/batch"));
    Rng reset_rng(derive_seed(cfg.seed, "tokenizer/reset"));
    Rng init_rng(derive_seed(cfg.seed, "tokenizer/codebook"));
    const std::size_t n_train = ds.train_count();
    if (cfg.iters > 0 && n_train == 0) fail_config("train_tokenizer: empty training split");

    for (std::size_t step = 0; step < cfg.iters; ++step) {
        std::vector<std::size_t> idx(cfg.batch);
        for (auto& i : idx)
            i = static_cast<std::size_t>(batch_rng.uniform_int(static_cast<std::int64_t>(n_train)));
        TensorPtr x = model.batch_tensor(ds, idx);

        Tape tape;
        // Seed codebooks from the first batch's encoder outputs so every entry
        // starts inside the encoded distribution.
        if (step == 0) {
            TensorPtr residual = x;
            for (auto& sm : model.scales) {
                TensorPtr h_raw = sm.encoder.forward(tape, residual);
                TensorPtr h_rows = channels_to_rows(tape, h_raw);
                TensorPtr h = cfg.similarity ? l2_normalize_rows(tape, h_rows) : h_rows;
                const std::size_t n_rows = h->shape[0], d = h->shape[1];
                for (std::size_t v = 0; v < sm.codebook.size(); ++v) {
                    const auto pick = static_cast<std::size_t>(
                        init_rng.uniform_int(static_cast<std::int64_t>(n_rows)));
                    std::copy_n(h->value.data() + pick * d, d,
                                sm.codebook.vectors->value.data() + v * d);
                }
                if (sm.codebook.unit_norm) sm.codebook.renormalize();
                sm.codebook.seeded_from_data = true;
                auto tokens = quantize(h->value, n_rows, sm.codebook);
                TensorPtr h_quant = dequantize(tokens, sm.codebook);
                TensorPtr dec_in = add(tape, h, stop_gradient(sub(tape, h_quant, h)));
                TensorPtr recon =
                    sm.decoder.forward(tape, rows_to_channels(tape, dec_in, idx.size(),
                                                              h_raw->shape[2]));
                residual = sub(tape, residual, recon);
            }
            tape.clear();
        }

        TokenizerForward fw = model.forward(tape, x, /*with_loss=*/true);
        const double loss_val = fw.loss->value[0];
        if (!std::isfinite(loss_val))
            throw Error("train_tokenizer: non-finite loss at step " + std::to_string(step));
        out.loss_history.push_back(loss_val);

        tape.backward(fw.loss);
        optim.step();

        std::size_t resets = 0;
        for (std::size_t k = 0; k < model.scales.size(); ++k) {
            Codebook& cb = model.scales[k].codebook;
            const auto& sf = fw.scales[k];
            const auto counts = count_assignments(sf.tokens, cb.size());
            if (cfg.ema)
                ema_update(cb, sf.tokens, sf.h->value, cfg.beta);
            else if (cb.unit_norm)
                cb.renormalize();  // keep gradient-updated entries on the sphere
            usage_update(cb, counts, cfg.beta);
            if (cfg.reset)
                resets += codebook_reset(cb, sf.h->value, sf.h->shape[0], reset_rng);
        }
        out.reset_counts.push_back(resets);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O.
// ---------------------------------------------------------------------------

inline Json tokenizer_config_json(const MultiScaleTokenizer& m) {
    Json j;
    j["tau"] = m.tau;
    j["dims"] = m.dims;
    j["K"] = m.cfg.K;
    j["r"] = m.cfg.r;
    j["V"] = m.cfg.V;
    j["d_c"] = m.cfg.d_c;
    j["hidden"] = m.cfg.hidden;
    j["lambda"] = m.cfg.lambda_embed;
    j["beta"] = m.cfg.beta;
    j["reset"] = m.cfg.reset;
    j["ema"] = m.cfg.ema;
    j["similarity"] = m.cfg.similarity;
    j["iters"] = m.cfg.iters;
    j["batch"] = m.cfg.batch;
    j["lr"] = m.cfg.lr;
    j["weight_decay"] = m.cfg.weight_decay;
    j["seed"] = m.cfg.seed;
    j["normalizer_min"] = m.normalizer.min;
    j["normalizer_max"] = m.normalizer.max;
    return j;
}

inline void save_tokenizer(const MultiScaleTokenizer& m, const std::string& path) {
    nn::ParamMap tensors = m.params();
    for (std::size_t k = 0; k < m.scales.size(); ++k) {
        const std::string prefix = "scale" + std::to_string(k);
        tensors.add(prefix + ".codebook", m.scales[k].codebook.vectors);
        tensors.add(prefix + ".usage",
                    tensor({m.scales[k].codebook.usage.size()}, m.scales[k].codebook.usage));
    }
    write_json_file(path, checkpoint_json("tokenizer", tokenizer_config_json(m), tensors));
}

inline MultiScaleTokenizer load_tokenizer(const std::string& path) {
    Json j = load_checkpoint_json(path, "tokenizer");
    const Json& c = j.at("config");
    TokenizerConfig cfg;
    cfg.K = c.at("K").get<std::size_t>();
    cfg.r = c.at("r").get<std::vector<std::size_t>>();
    cfg.V = c.at("V").get<std::vector<std::size_t>>();
    cfg.d_c = c.at("d_c").get<std::size_t>();
    cfg.hidden = c.at("hidden").get<std::size_t>();
    cfg.lambda_embed = c.at("lambda").get<double>();
    cfg.beta = c.at("beta").get<double>();
    cfg.reset = c.at("reset").get<bool>();
    cfg.ema = c.at("ema").get<bool>();
    cfg.similarity = c.at("similarity").get<bool>();
    cfg.iters = c.at("iters").get<std::size_t>();
    cfg.batch = c.at("batch").get<std::size_t>();
    cfg.lr = c.at("lr").get<double>();
    cfg.weight_decay = c.at("weight_decay").get<double>();
    cfg.seed = c.at("seed").get<std::uint64_t>();

    MultiScaleTokenizer m(c.at("tau").get<std::size_t>(), c.at("dims").get<std::size_t>(), cfg);
    m.normalizer.min = c.at("normalizer_min").get<std::vector<double>>();
    m.normalizer.max = c.at("normalizer_max").get<std::vector<double>>();

    nn::ParamMap tensors = m.params();
    for (std::size_t k = 0; k < m.scales.size(); ++k)
        tensors.add("scale" + std::to_string(k) + ".codebook", m.scales[k].codebook.vectors);
    load_tensors(j, tensors);
    for (std::size_t k = 0; k < m.scales.size(); ++k) {
        const std::string key = "scale" + std::to_string(k) + ".usage";
        Tensor u;
        tensor_from_json(j.at("tensors").at(key), u);
        m.scales[k].codebook.usage = u.value;
        m.scales[k].codebook.seeded_from_data = true;
    }
    return m;
}

}  // namespace msd
