#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msd/checkpoint.hpp"
#include "msd/nn.hpp"
#include "msd/optim.hpp"
#include "msd/tokenizer.hpp"

namespace msd {

// ---------------------------------------------------------------------------
// Vocabulary bookkeeping: per-scale sizes, cumulative offsets, and the BOS
// index, which sits just past the last real token id.
// ---------------------------------------------------------------------------
struct TokenVocabulary {
    std::vector<std::size_t> sizes;    // V per scale
    std::vector<std::size_t> offsets;  // S[0]=0, S[k] = sum of sizes up to scale k
    std::size_t total = 0;             // V = S[K]
    std::size_t bos = 0;               // == total

    static TokenVocabulary make(const std::vector<std::size_t>& sizes) {
        if (sizes.empty()) fail_config("vocabulary: need at least one scale");
        TokenVocabulary v;
        v.sizes = sizes;
        v.offsets.push_back(0);
        for (std::size_t s : sizes) {
            if (s == 0) fail_config("vocabulary: scale sizes must be positive");
            v.offsets.push_back(v.offsets.back() + s);
        }
        v.total = v.offsets.back();
        v.bos = v.total;
        return v;
    }

    std::size_t num_scales() const { return sizes.size(); }

    // 0-based scale index owning a shifted token value.
    std::size_t scale_of(std::size_t shifted_token) const {
        for (std::size_t k = 0; k < sizes.size(); ++k)
            if (shifted_token < offsets[k + 1]) return k;
        fail_contract("vocabulary: token ", shifted_token, " outside [0,", total, ")");
    }
};

// ---------------------------------------------------------------------------
// Token plumbing.
// ---------------------------------------------------------------------------

// Add the scale offset so ids are globally unique; subtracting it back is the
// exact inverse. scale_index is 0-based.
inline std::vector<std::int64_t> shift_tokens(const std::vector<std::int64_t>& tokens,
                                              const TokenVocabulary& vocab,
                                              std::size_t scale_index) {
    if (scale_index >= vocab.num_scales())
        fail_contract("shift_tokens: scale index ", scale_index, " out of range");
    const auto size = static_cast<std::int64_t>(vocab.sizes[scale_index]);
    const auto offset = static_cast<std::int64_t>(vocab.offsets[scale_index]);
    std::vector<std::int64_t> out(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= size)
            fail_contract("shift_tokens: token ", tokens[i], " at position ", i, " of scale ",
                          scale_index + 1, " outside [0,", size, ")");
        out[i] = tokens[i] + offset;
    }
    return out;
}

inline std::vector<std::int64_t> unshift_tokens(const std::vector<std::int64_t>& tokens,
                                                const TokenVocabulary& vocab,
                                                std::size_t scale_index) {
    const auto offset = static_cast<std::int64_t>(vocab.offsets[scale_index]);
    std::vector<std::int64_t> out(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) out[i] = tokens[i] - offset;
    return out;
}

inline std::vector<std::int64_t> concat_scales(const std::vector<std::vector<std::int64_t>>& per_scale) {
    std::vector<std::int64_t> out;
    for (const auto& s : per_scale) out.insert(out.end(), s.begin(), s.end());
    return out;
}

// Input sequence: [BOS] followed by all labels but the last.
inline std::vector<std::int64_t> make_input(const std::vector<std::int64_t>& labels,
                                            const TokenVocabulary& vocab) {
    std::vector<std::int64_t> out;
    out.reserve(labels.size());
    out.push_back(static_cast<std::int64_t>(vocab.bos));
    out.insert(out.end(), labels.begin(), labels.end() - (labels.empty() ? 0 : 1));
    return out;
}

// Each non-BOS input token is replaced with probability epsilon by a uniform
// draw from its own scale's shifted range. BOS is never touched.
inline std::vector<std::int64_t> augment(const std::vector<std::int64_t>& input,
                                         const TokenVocabulary& vocab, double epsilon, Rng& rng) {
    if (epsilon < 0.0 || epsilon > 1.0) fail_contract("augment: epsilon must be in [0,1]");
    std::vector<std::int64_t> out = input;
    if (epsilon == 0.0) return out;
    for (auto& t : out) {
        if (t == static_cast<std::int64_t>(vocab.bos)) continue;
        if (rng.uniform() < epsilon) {
            const std::size_t k = vocab.scale_of(static_cast<std::size_t>(t));
            t = static_cast<std::int64_t>(vocab.offsets[k]) +
                rng.uniform_int(static_cast<std::int64_t>(vocab.sizes[k]));
        }
    }
    return out;
}

// Scale id per position of [BOS] + concatenated tokens: 0 for BOS, then scale
// k (1-based) repeated L^(k) times; length is 1 + sum(lengths).
inline std::vector<std::int64_t> type_ids(const std::vector<std::size_t>& lengths) {
    std::vector<std::int64_t> out;
    out.push_back(0);
    for (std::size_t k = 0; k < lengths.size(); ++k)
        out.insert(out.end(), lengths[k], static_cast<std::int64_t>(k + 1));
    return out;
}

// ---------------------------------------------------------------------------
// The autoregressive model over the concatenated multi-scale sequence.
// ---------------------------------------------------------------------------

struct TransformerConfig {
    std::size_t n_layers = 2;
    std::size_t d_m = 512;
    std::size_t heads = 4;
    std::size_t ff_mult = 4;
    double epsilon = 0.1;  // input replacement probability
    double dropout_rate = 0.0;
    std::size_t iters = 5000;
    std::size_t batch = 16;
    double lr = 1e-3;
    double weight_decay = 0.0;
    std::uint64_t seed = 1234;

    void validate() const {
        if (n_layers == 0 || d_m == 0 || heads == 0 || ff_mult == 0)
            fail_config("transformer: layer/width settings must be positive");
        if (d_m % heads != 0) fail_config("transformer: d_m must be divisible by heads");
        if (epsilon < 0.0 || epsilon > 1.0) fail_config("transformer: epsilon must be in [0,1]");
        if (batch == 0) fail_config("transformer: batch must be positive");
    }
};

class ARTransformer {
public:
    TransformerConfig cfg;
    TokenVocabulary vocab;
    std::vector<std::size_t> lengths;  // tokens per scale; max input length = sum
    nn::EmbeddingTable tok_emb;        // (V+1, d_m), BOS included
    nn::EmbeddingTable pos_emb;        // (max_len, d_m)
    nn::EmbeddingTable type_emb;       // (K+1, d_m)
    std::vector<nn::TransformerBlock> blocks;
    nn::Linear head;                   // d_m -> V

    ARTransformer() = default;
    ARTransformer(const TokenVocabulary& vocab_, const std::vector<std::size_t>& lengths_,
                  const TransformerConfig& cfg_)
        : cfg(cfg_), vocab(vocab_), lengths(lengths_) {
        cfg.validate();
        if (lengths.size() != vocab.num_scales())
            fail_config("transformer: lengths/vocabulary scale count mismatch");
        Rng rng(derive_seed(cfg.seed, "transformer/init"));
        tok_emb = nn::EmbeddingTable(vocab.total + 1, cfg.d_m, rng);
        pos_emb = nn::EmbeddingTable(max_len(), cfg.d_m, rng);
        type_emb = nn::EmbeddingTable(vocab.num_scales() + 1, cfg.d_m, rng);
        for (std::size_t i = 0; i < cfg.n_layers; ++i)
            blocks.emplace_back(cfg.d_m, cfg.heads, cfg.ff_mult * cfg.d_m, rng);
        head = nn::Linear(cfg.d_m, vocab.total, rng);
    }

    std::size_t max_len() const {
        std::size_t L = 0;
        for (std::size_t l : lengths) L += l;
        return L;
    }

    // logits (B,S,V) for a batch of input rows with shared per-position type
    // ids; position i attends only to positions <= i.
    TensorPtr forward_logits(Tape& tape, const std::vector<std::int64_t>& input_flat,
                             std::size_t B, std::size_t S,
                             const std::vector<std::int64_t>& types) const {
        if (S == 0 || input_flat.size() != B * S)
            fail_contract("forward_logits: bad input layout");
        if (S > max_len())
            fail_contract("forward_logits: sequence length ", S,
                          " exceeds positional table of ", max_len());
        if (types.size() != S) fail_contract("forward_logits: need one type id per position");

        std::vector<std::int64_t> pos(B * S), typ(B * S);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t s = 0; s < S; ++s) {
                pos[b * S + s] = static_cast<std::int64_t>(s);
                typ[b * S + s] = types[s];
            }
        TensorPtr emb = add(tape, tok_emb.lookup(tape, input_flat),
                            add(tape, pos_emb.lookup(tape, pos), type_emb.lookup(tape, typ)));
        emb = reshape(tape, emb, {B, S, cfg.d_m});
        return nn::transformer_forward(tape, blocks, head, emb);
    }

    nn::ParamMap params() const {
        nn::ParamMap p;
        p.merge("tok_emb", tok_emb.params());
        p.merge("pos_emb", pos_emb.params());
        p.merge("type_emb", type_emb.params());
        for (std::size_t i = 0; i < blocks.size(); ++i)
            p.merge("block" + std::to_string(i), blocks[i].params());
        p.merge("head", head.params());
        return p;
    }
};

// Mean next-token cross-entropy over every position of the batch.
inline TensorPtr ar_loss(Tape& tape, const TensorPtr& logits,
                         const std::vector<std::int64_t>& labels_flat) {
    if (logits->shape.size() != 3) fail_contract("ar_loss: logits must be (B,S,V)");
    const std::size_t B = logits->shape[0], S = logits->shape[1], V = logits->shape[2];
    if (labels_flat.size() != B * S)
        fail_contract("ar_loss: ", labels_flat.size(), " labels for ", B * S, " positions");
    return cross_entropy(tape, reshape(tape, logits, {B * S, V}), labels_flat);
}

// ---------------------------------------------------------------------------
// Training: tokenize the corpus once with the frozen tokenizer, then learn
// next-token prediction over shifted+concatenated sequences with BOS input
// and fresh random replacement each step.
// ---------------------------------------------------------------------------

struct TokenCorpus {
    TokenVocabulary vocab;
    std::vector<std::size_t> lengths;            // per scale
    std::vector<std::vector<std::int64_t>> rows;  // per window: concatenated shifted labels
};

// Tokenize every window of the dataset with the frozen tokenizer.
inline TokenCorpus build_token_corpus(const MultiScaleTokenizer& tok, const TimeSeriesDataset& ds,
                                      std::size_t batch = 64) {
    TokenCorpus corpus;
    corpus.vocab = TokenVocabulary::make(tok.cfg.V);
    corpus.lengths = tok.token_lengths();
    corpus.rows.resize(ds.size());
    for (std::size_t start = 0; start < ds.size(); start += batch) {
        const std::size_t stop = std::min(ds.size(), start + batch);
        std::vector<std::size_t> idx(stop - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        TokenizeResult res = tokenize_batch(tok, tok.batch_tensor(ds, idx));
        for (std::size_t b = 0; b < idx.size(); ++b) {
            std::vector<std::vector<std::int64_t>> per_scale;
            for (std::size_t k = 0; k < corpus.lengths.size(); ++k) {
                const std::size_t Lk = corpus.lengths[k];
                std::vector<std::int64_t> raw(res.tokens[k].begin() + b * Lk,
                                              res.tokens[k].begin() + (b + 1) * Lk);
                per_scale.push_back(shift_tokens(raw, corpus.vocab, k));
            }
            corpus.rows[idx[b]] = concat_scales(per_scale);
        }
    }
    return corpus;
}

struct TransformerTraining {
    ARTransformer model;
    std::vector<double> loss_history;
};

// Mean loss of the model over the given corpus rows (no augmentation).
inline double transformer_eval_loss(const ARTransformer& model, const TokenCorpus& corpus,
                                    std::size_t begin, std::size_t end, std::size_t batch = 64) {
    const std::size_t S = model.max_len();
    const std::vector<std::int64_t> types_full = type_ids(model.lengths);
    const std::vector<std::int64_t> types(types_full.begin(), types_full.begin() + S);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t start = begin; start < end; start += batch) {
        const std::size_t stop = std::min(end, start + batch);
        const std::size_t B = stop - start;
        std::vector<std::int64_t> input_flat(B * S), labels_flat(B * S);
        for (std::size_t b = 0; b < B; ++b) {
            const auto& labels = corpus.rows[start + b];
            const auto input = make_input(labels, corpus.vocab);
            std::copy(input.begin(), input.end(), input_flat.begin() + b * S);
            std::copy(labels.begin(), labels.end(), labels_flat.begin() + b * S);
        }
        Tape tape;
        TensorPtr logits = model.forward_logits(tape, input_flat, B, S, types);
        total += ar_loss(tape, logits, labels_flat)->value[0] * static_cast<double>(B);
        count += B;
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

inline TransformerTraining train_transformer(const TimeSeriesDataset& ds,
                                             const MultiScaleTokenizer& tokenizer,
                                             const TransformerConfig& cfg) {
    cfg.validate();
    TokenCorpus corpus = build_token_corpus(tokenizer, ds);
    TransformerTraining out{ARTransformer(corpus.vocab, corpus.lengths, cfg), {}};
    ARTransformer& model = out.model;

    AdamW optim(model.params().tensors(), {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
    Rng batch_rng(derive_seed(cfg.seed, "transformer/batch"));
    Rng aug_rng(derive_seed(cfg.seed, "transformer/augment"));
    Rng drop_rng(derive_seed(cfg.seed, "transformer/dropout"));

    const std::size_t n_train = ds.train_count();
    if (cfg.iters > 0 && n_train == 0) fail_config("train_transformer: empty training split");
    const std::size_t S = model.max_len();
    const std::vector<std::int64_t> types_full = type_ids(model.lengths);
    const std::vector<std::int64_t> types(types_full.begin(), types_full.begin() + S);

    for (std::size_t step = 0; step < cfg.iters; ++step) {
        const std::size_t B = cfg.batch;
        std::vector<std::int64_t> input_flat(B * S), labels_flat(B * S);
        for (std::size_t b = 0; b < B; ++b) {
            const auto wi = static_cast<std::size_t>(
                batch_rng.uniform_int(static_cast<std::int64_t>(n_train)));
            const auto& labels = corpus.rows[wi];
            const auto input = augment(make_input(labels, corpus.vocab), corpus.vocab,
                                       cfg.epsilon, aug_rng);
            std::copy(input.begin(), input.end(), input_flat.begin() + b * S);
            std::copy(labels.begin(), labels.end(), labels_flat.begin() + b * S);
        }
        Tape tape;
        TensorPtr logits = model.forward_logits(tape, input_flat, B, S, types);
        if (cfg.dropout_rate > 0.0) logits = dropout(tape, logits, cfg.dropout_rate, drop_rng);
        TensorPtr loss = ar_loss(tape, logits, labels_flat);
        const double loss_val = loss->value[0];
        if (!std::isfinite(loss_val))
            throw Error("train_transformer: non-finite loss at step " + std::to_string(step));
        out.loss_history.push_back(loss_val);
        tape.backward(loss);
        optim.step();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O.
// ---------------------------------------------------------------------------

inline Json transformer_config_json(const ARTransformer& m) {
    Json j;
    j["V"] = m.vocab.sizes;
    j["lengths"] = m.lengths;
    j["n_layers"] = m.cfg.n_layers;
    j["d_m"] = m.cfg.d_m;
    j["heads"] = m.cfg.heads;
    j["ff_mult"] = m.cfg.ff_mult;
    j["epsilon"] = m.cfg.epsilon;
    j["dropout"] = m.cfg.dropout_rate;
    j["iters"] = m.cfg.iters;
    j["batch"] = m.cfg.batch;
    j["lr"] = m.cfg.lr;
    j["weight_decay"] = m.cfg.weight_decay;
    j["seed"] = m.cfg.seed;
    return j;
}

inline void save_transformer(const ARTransformer& m, const std::string& path) {
    nn::ParamMap tensors = m.params();
    write_json_file(path, checkpoint_json("transformer", transformer_config_json(m), tensors));
}

inline ARTransformer load_transformer(const std::string& path) {
    Json j = load_checkpoint_json(path, "transformer");
    const Json& c = j.at("config");
    TransformerConfig cfg;
    cfg.n_layers = c.at("n_layers").get<std::size_t>();
    cfg.d_m = c.at("d_m").get<std::size_t>();
    cfg.heads = c.at("heads").get<std::size_t>();
    cfg.ff_mult = c.at("ff_mult").get<std::size_t>();
    cfg.epsilon = c.at("epsilon").get<double>();
    cfg.dropout_rate = c.at("dropout").get<double>();
    cfg.iters = c.at("iters").get<std::size_t>();
    cfg.batch = c.at("batch").get<std::size_t>();
    cfg.lr = c.at("lr").get<double>();
    cfg.weight_decay = c.at("weight_decay").get<double>();
    cfg.seed = c.at("seed").get<std::uint64_t>();

    ARTransformer m(TokenVocabulary::make(c.at("V").get<std::vector<std::size_t>>()),
                    c.at("lengths").get<std::vector<std::size_t>>(), cfg);
    nn::ParamMap tensors = m.params();
    load_tensors(j, tensors);
    return m;
}

}  // namespace msd
