#pragma once

#include <cstdint>
#include <vector>

#include "msd/seqmodel.hpp"

namespace msd {

struct SamplerConfig {
    double temperature = 1.0;
    std::size_t top_k = 0;  // 0 disables truncation
    std::uint64_t seed = 1234;
    bool constrained = true;  // mask logits to the scale owning each position

    void validate(std::size_t vocab_total) const {
        if (!(temperature > 0.0)) fail_config("sampler: temperature must be > 0");
        if (top_k > vocab_total) fail_config("sampler: top_k exceeds vocabulary size");
    }
};

namespace detail {

// Draw one index from softmax(logits), after optional segment masking,
// temperature scaling, and top-k truncation.
inline std::int64_t sample_row(std::vector<double> logits, std::size_t allow_lo,
                               std::size_t allow_hi, const SamplerConfig& cfg, Rng& rng) {
    const double neg_inf = -std::numeric_limits<double>::infinity();
    if (cfg.constrained)
        for (std::size_t v = 0; v < logits.size(); ++v)
            if (v < allow_lo || v >= allow_hi) logits[v] = neg_inf;
    for (auto& l : logits) l /= cfg.temperature;
    if (cfg.top_k > 0) {
        std::vector<double> sorted = logits;
        std::nth_element(sorted.begin(), sorted.begin() + (cfg.top_k - 1), sorted.end(),
                         std::greater<double>());
        const double cutoff = sorted[cfg.top_k - 1];
        std::size_t kept = 0;
        for (auto& l : logits) {
            if (l >= cutoff && kept < cfg.top_k)
                ++kept;
            else
                l = neg_inf;
        }
    }
    double mx = neg_inf;
    for (double l : logits) mx = std::max(mx, l);
    double z = 0.0;
    std::vector<double> p(logits.size(), 0.0);
    for (std::size_t v = 0; v < logits.size(); ++v) {
        if (logits[v] == neg_inf) continue;
        p[v] = std::exp(logits[v] - mx);
        z += p[v];
    }
    const double u = rng.uniform() * z;
    double acc = 0.0;
    std::int64_t last_valid = 0;
    for (std::size_t v = 0; v < p.size(); ++v) {
        if (p[v] == 0.0) continue;
        acc += p[v];
        last_valid = static_cast<std::int64_t>(v);
        if (u < acc) return last_valid;
    }
    return last_valid;  // numerical tail
}

}  // namespace detail

// Autoregressive generation of `count` shifted token sequences of full length.
// Each sample owns an independent random stream derived from (seed, index), so
// results do not depend on batching.
inline std::vector<std::vector<std::int64_t>> sample_tokens(const ARTransformer& model,
                                                            std::size_t count,
                                                            const SamplerConfig& cfg) {
    cfg.validate(model.vocab.total);
    const std::size_t L = model.max_len();
    const TokenVocabulary& vocab = model.vocab;
    const std::vector<std::int64_t> types_full = type_ids(model.lengths);

    std::vector<Rng> rngs;
    rngs.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        rngs.emplace_back(derive_seed(cfg.seed, "sample", i));

    // seq[b] holds BOS followed by sampled tokens.
    std::vector<std::vector<std::int64_t>> seq(count);
    for (auto& s : seq) s.push_back(static_cast<std::int64_t>(vocab.bos));
    if (count == 0) return {};

    for (std::size_t t = 1; t <= L; ++t) {
        const std::size_t S = t;  // current prefix length
        std::vector<std::int64_t> input_flat(count * S);
        for (std::size_t b = 0; b < count; ++b)
            std::copy(seq[b].begin(), seq[b].end(), input_flat.begin() + b * S);
        const std::vector<std::int64_t> types(types_full.begin(), types_full.begin() + S);
        Tape tape;
        TensorPtr logits = model.forward_logits(tape, input_flat, count, S, types);
        const std::size_t V = logits->shape[2];

        // Token being generated belongs to the scale of position t.
        const auto k = static_cast<std::size_t>(types_full[t]) - 1;
        const std::size_t lo = vocab.offsets[k], hi = vocab.offsets[k + 1];
        for (std::size_t b = 0; b < count; ++b) {
            std::vector<double> row(logits->value.begin() + ((b * S) + (S - 1)) * V,
                                    logits->value.begin() + ((b * S) + (S - 1)) * V + V);
            seq[b].push_back(detail::sample_row(std::move(row), lo, hi, cfg, rngs[b]));
        }
    }
    for (auto& s : seq) s.erase(s.begin());  // strip BOS
    return seq;
}

// Split a full shifted sequence back into per-scale raw token sequences.
// Values outside a scale's range are clamped into it and counted (only
// reachable with unconstrained sampling).
struct AllocatedTokens {
    std::vector<std::vector<std::int64_t>> per_scale;
    std::size_t clamped = 0;
};

inline AllocatedTokens allocate_tokens(const std::vector<std::int64_t>& flat,
                                       const TokenVocabulary& vocab,
                                       const std::vector<std::size_t>& lengths) {
    std::size_t total = 0;
    for (std::size_t l : lengths) total += l;
    if (flat.size() != total)
        fail_contract("allocate_tokens: got ", flat.size(), " tokens, expected ", total);
    AllocatedTokens out;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < lengths.size(); ++k) {
        const auto lo = static_cast<std::int64_t>(vocab.offsets[k]);
        const auto hi = static_cast<std::int64_t>(vocab.offsets[k + 1]);
        std::vector<std::int64_t> raw(lengths[k]);
        for (std::size_t i = 0; i < lengths[k]; ++i) {
            std::int64_t v = flat[pos++];
            if (v < lo || v >= hi) {
                v = std::clamp(v, lo, hi - 1);
                ++out.clamped;
            }
            raw[i] = v - lo;
        }
        out.per_scale.push_back(std::move(raw));
    }
    return out;
}

// Dequantize per-scale tokens and run each scale's decoder; the window is the
// sum over scales, optionally mapped back to data units.
inline TensorPtr decode_multi_scale(const std::vector<std::vector<std::int64_t>>& per_scale,
                                    const MultiScaleTokenizer& tok, bool denormalize = false) {
    if (per_scale.size() != tok.scales.size())
        fail_contract("decode_multi_scale: ", per_scale.size(), " scales for a ",
                      tok.scales.size(), "-scale tokenizer");
    Tape tape;
    TensorPtr sum;
    for (std::size_t k = 0; k < per_scale.size(); ++k) {
        const std::size_t Lk = tok.token_length(k);
        if (per_scale[k].size() != Lk)
            fail_contract("decode_multi_scale: scale ", k + 1, " has ", per_scale[k].size(),
                          " tokens, expected ", Lk);
        TensorPtr rows = dequantize(per_scale[k], tok.scales[k].codebook);
        TensorPtr recon = tok.scales[k].decoder.forward(tape, rows_to_channels(tape, rows, 1, Lk));
        sum = sum ? add(tape, sum, recon) : recon;
    }
    // (1,d,tau) -> (tau,d)
    auto window = zeros({tok.tau, tok.dims});
    for (std::size_t t = 0; t < tok.tau; ++t)
        for (std::size_t f = 0; f < tok.dims; ++f)
            window->value[t * tok.dims + f] = sum->value[f * tok.tau + t];
    if (denormalize) tok.normalizer.inverse(window->value, tok.dims);
    return window;
}

struct GenerationResult {
    std::vector<TensorPtr> windows;                    // n windows of (tau,d), data units
    std::vector<TensorPtr> normalized;                 // same windows in model space
    std::vector<std::vector<std::int64_t>> sequences;  // shifted token audit trail
    std::size_t clamped = 0;
};

// Full inference pipeline: sample token sequences, allocate them to scales,
// decode, denormalize.
inline GenerationResult generate(const ARTransformer& model, const MultiScaleTokenizer& tok,
                                 std::size_t n, const SamplerConfig& cfg) {
    if (model.vocab.sizes != tok.cfg.V || model.lengths != tok.token_lengths())
        fail_config("generate: transformer vocabulary does not match tokenizer (V=",
                    model.vocab.total, ")");
    GenerationResult out;
    out.sequences = sample_tokens(model, n, cfg);
    for (const auto& seq : out.sequences) {
        AllocatedTokens alloc = allocate_tokens(seq, model.vocab, model.lengths);
        out.clamped += alloc.clamped;
        out.normalized.push_back(decode_multi_scale(alloc.per_scale, tok, false));
        auto window = tensor(out.normalized.back()->shape, out.normalized.back()->value);
        tok.normalizer.inverse(window->value, tok.dims);
        out.windows.push_back(window);
    }
    return out;
}

}  // namespace msd
