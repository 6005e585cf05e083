#include <catch2/catch_amalgamated.hpp>

#include "gradient_suite.hpp"
#include "msd/msd.hpp"

using namespace msd;

namespace {

struct TinyPipeline {
    TimeSeriesDataset ds;
    MultiScaleTokenizer tokenizer;
    ARTransformer model;
};

TinyPipeline make_pipeline(std::uint64_t seed = 123, std::size_t tok_iters = 40,
                           std::size_t ar_iters = 40) {
    TimeSeriesDataset ds = gen_sines(100, 8, 2, seed);
    ds.normalize();
    TokenizerConfig tc;
    tc.K = 2;
    tc.r = {2, 4};
    tc.V = {8, 8};
    tc.d_c = 8;
    tc.hidden = 8;
    tc.iters = tok_iters;
    tc.batch = 8;
    tc.seed = seed;
    auto tok = train_tokenizer(ds, tc);
    TransformerConfig fc;
    fc.n_layers = 1;
    fc.d_m = 16;
    fc.heads = 2;
    fc.iters = ar_iters;
    fc.batch = 8;
    fc.seed = seed;
    auto ar = train_transformer(ds, tok.model, fc);
    return {std::move(ds), std::move(tok.model), std::move(ar.model)};
}

}  // namespace

TEST_CASE("near-zero temperature equals greedy argmax decoding") {
    auto p = make_pipeline(1);
    SamplerConfig greedy;
    greedy.temperature = 1e-9;
    greedy.seed = 7;
    auto sampled = sample_tokens(p.model, 2, greedy);

    // greedy oracle: walk the model manually taking argmax in the allowed band
    const auto types_full = type_ids(p.model.lengths);
    for (std::size_t b = 0; b < 2; ++b) {
        std::vector<std::int64_t> seq{static_cast<std::int64_t>(p.model.vocab.bos)};
        for (std::size_t t = 1; t <= p.model.max_len(); ++t) {
            Tape tape;
            const std::vector<std::int64_t> types(types_full.begin(), types_full.begin() + t);
            auto logits = p.model.forward_logits(tape, seq, 1, t, types);
            const std::size_t V = logits->shape[2];
            const auto k = static_cast<std::size_t>(types_full[t]) - 1;
            std::int64_t best = -1;
            double best_v = -1e300;
            for (std::size_t v = p.model.vocab.offsets[k]; v < p.model.vocab.offsets[k + 1]; ++v)
                if (logits->value[(t - 1) * V + v] > best_v) {
                    best_v = logits->value[(t - 1) * V + v];
                    best = static_cast<std::int64_t>(v);
                }
            seq.push_back(best);
        }
        seq.erase(seq.begin());
        CHECK(sampled[b] == seq);
    }
}

TEST_CASE("fixed seed reproduces the token sequences exactly") {
    auto p = make_pipeline(2);
    SamplerConfig cfg;
    cfg.seed = 99;
    auto a = sample_tokens(p.model, 3, cfg);
    auto b = sample_tokens(p.model, 3, cfg);
    CHECK(a == b);
}

TEST_CASE("every sampled token lies in [0, V)") {
    auto p = make_pipeline(3);
    SamplerConfig cfg;
    cfg.seed = 5;
    for (const auto& seq : sample_tokens(p.model, 4, cfg))
        for (auto t : seq) CHECK((t >= 0 && t < static_cast<std::int64_t>(p.model.vocab.total)));
}

TEST_CASE("sampling is independent of batching (per-sample streams)") {
    auto p = make_pipeline(4);
    SamplerConfig cfg;
    cfg.seed = 31;
    auto batch = sample_tokens(p.model, 3, cfg);
    auto first = sample_tokens(p.model, 1, cfg);
    CHECK(batch[0] == first[0]);
}

TEST_CASE("allocate inverts shift+concat exactly") {
    Rng rng(6);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t K = 1 + static_cast<std::size_t>(rng.uniform_int(3));
        std::vector<std::size_t> sizes(K), lengths(K);
        for (std::size_t k = 0; k < K; ++k) {
            sizes[k] = 2 + static_cast<std::size_t>(rng.uniform_int(64));
            lengths[k] = 1 + static_cast<std::size_t>(rng.uniform_int(12));
        }
        auto vocab = TokenVocabulary::make(sizes);
        std::vector<std::vector<std::int64_t>> raw(K);
        std::vector<std::vector<std::int64_t>> shifted(K);
        for (std::size_t k = 0; k < K; ++k) {
            raw[k].resize(lengths[k]);
            for (auto& t : raw[k]) t = rng.uniform_int(static_cast<std::int64_t>(sizes[k]));
            shifted[k] = shift_tokens(raw[k], vocab, k);
        }
        auto alloc = allocate_tokens(concat_scales(shifted), vocab, lengths);
        REQUIRE(alloc.clamped == 0);
        REQUIRE(alloc.per_scale == raw);
    }
}

TEST_CASE("K=1 allocation is the identity split") {
    auto vocab = TokenVocabulary::make({32});
    std::vector<std::int64_t> flat{5, 0, 31, 7};
    auto alloc = allocate_tokens(flat, vocab, {4});
    CHECK(alloc.per_scale == std::vector<std::vector<std::int64_t>>{flat});
    CHECK(alloc.clamped == 0);
}

TEST_CASE("token 133 in the second scale maps back to raw token 5") {
    auto vocab = TokenVocabulary::make({128, 512});
    auto alloc = allocate_tokens({7, 133}, vocab, {1, 1});
    CHECK(alloc.per_scale[1] == std::vector<std::int64_t>{5});
}

TEST_CASE("allocation rejects a length mismatch and counts clamps") {
    auto vocab = TokenVocabulary::make({8, 8});
    CHECK_THROWS_AS(allocate_tokens({1, 2, 3}, vocab, {2, 2}), ContractError);
    // position 1 holds a scale-2 value in a scale-1 slot; positions 2 and 3
    // hold scale-1 values in scale-2 slots
    auto alloc = allocate_tokens({1, 15, 1, 2}, vocab, {2, 2});
    CHECK(alloc.clamped == 3);
    CHECK(alloc.per_scale[0] == std::vector<std::int64_t>{1, 7});
    CHECK(alloc.per_scale[1] == std::vector<std::int64_t>{0, 0});
}

TEST_CASE("decoding a window's own tokens reproduces the tokenizer reconstruction") {
    auto p = make_pipeline(7, 80, 0);
    auto window = p.ds.window_tensor(p.ds.size() - 1);
    auto res = tokenize(p.tokenizer, window);
    auto decoded = decode_multi_scale(res.tokens, p.tokenizer, false);
    // same tokens, same decoders: identical reconstruction, reshaped
    for (std::size_t t = 0; t < p.tokenizer.tau; ++t)
        for (std::size_t f = 0; f < p.tokenizer.dims; ++f)
            CHECK(decoded->value[t * p.tokenizer.dims + f] ==
                  Catch::Approx(res.recon->value[f * p.tokenizer.tau + t]).margin(1e-12));
    // so the decode error equals the tokenizer's own measured reconstruction error
    auto recon_window = zeros({p.tokenizer.tau, p.tokenizer.dims});
    for (std::size_t t = 0; t < p.tokenizer.tau; ++t)
        for (std::size_t f = 0; f < p.tokenizer.dims; ++f)
            recon_window->value[t * p.tokenizer.dims + f] =
                res.recon->value[f * p.tokenizer.tau + t];
    CHECK(theory::distortion(window, decoded) ==
          Catch::Approx(theory::distortion(window, recon_window)).margin(1e-9));
}

TEST_CASE("all-token-0 input decodes to a deterministic fixed output") {
    auto p = make_pipeline(8, 30, 0);
    std::vector<std::vector<std::int64_t>> zeros_tokens{{0, 0, 0, 0}, {0, 0}};
    auto a = decode_multi_scale(zeros_tokens, p.tokenizer, false);
    auto b = decode_multi_scale(zeros_tokens, p.tokenizer, false);
    CHECK(a->value == b->value);
    CHECK(a->shape == Shape{8, 2});
}

TEST_CASE("decode output shape is always (tau, d)") {
    auto p = make_pipeline(9, 10, 0);
    SamplerConfig cfg;
    cfg.seed = 3;
    TransformerConfig fc;
    fc.n_layers = 1;
    fc.d_m = 16;
    fc.heads = 2;
    fc.iters = 0;
    fc.seed = 9;
    auto corpus = build_token_corpus(p.tokenizer, p.ds);
    ARTransformer model(corpus.vocab, corpus.lengths, fc);
    auto gen = generate(model, p.tokenizer, 3, cfg);
    for (const auto& w : gen.windows) CHECK(w->shape == Shape{8, 2});
}

TEST_CASE("generate with n=0 returns empty output") {
    auto p = make_pipeline(10, 10, 5);
    SamplerConfig cfg;
    auto gen = generate(p.model, p.tokenizer, 0, cfg);
    CHECK(gen.windows.empty());
    CHECK(gen.sequences.empty());
}

TEST_CASE("generated values are finite and inside the denormalization bounds") {
    auto p = make_pipeline(11, 60, 40);
    SamplerConfig cfg;
    cfg.seed = 12;
    auto gen = generate(p.model, p.tokenizer, 16, cfg);
    REQUIRE(gen.windows.size() == 16);
    CHECK(gen.clamped == 0);
    const auto& nz = p.tokenizer.normalizer;
    for (const auto& w : gen.windows)
        for (std::size_t i = 0; i < w->size(); ++i) {
            CHECK(std::isfinite(w->value[i]));
            const std::size_t f = i % p.tokenizer.dims;
            // decoded model-space values can overshoot [0,1] a little; the
            // data-unit mapping must stay within a matching envelope
            const double span = nz.max[f] - nz.min[f];
            CHECK(w->value[i] >= nz.min[f] - 0.5 * span);
            CHECK(w->value[i] <= nz.max[f] + 0.5 * span);
        }
}

TEST_CASE("different seeds produce different sample sets") {
    auto p = make_pipeline(12, 40, 40);
    SamplerConfig a, b;
    a.seed = 1;
    b.seed = 2;
    auto ga = sample_tokens(p.model, 4, a);
    auto gb = sample_tokens(p.model, 4, b);
    CHECK(ga != gb);
}

TEST_CASE("generation is a pure function of checkpoints, config, and seed") {
    auto p = make_pipeline(13, 30, 30);
    const std::string tpath = "gen_tok_test.json", mpath = "gen_ar_test.json";
    save_tokenizer(p.tokenizer, tpath);
    save_transformer(p.model, mpath);
    auto tok2 = load_tokenizer(tpath);
    auto model2 = load_transformer(mpath);
    std::remove(tpath.c_str());
    std::remove(mpath.c_str());
    SamplerConfig cfg;
    cfg.seed = 77;
    auto a = generate(p.model, p.tokenizer, 5, cfg);
    auto b = generate(model2, tok2, 5, cfg);
    REQUIRE(a.sequences == b.sequences);
    for (std::size_t i = 0; i < 5; ++i) CHECK(a.windows[i]->value == b.windows[i]->value);
}

TEST_CASE("vocabulary mismatch between model and tokenizer is a configuration error") {
    auto p = make_pipeline(14, 10, 5);
    TransformerConfig fc;
    fc.n_layers = 1;
    fc.d_m = 16;
    fc.heads = 2;
    fc.iters = 0;
    fc.seed = 1;
    ARTransformer wrong(TokenVocabulary::make({8, 16}), p.model.lengths, fc);
    SamplerConfig cfg;
    CHECK_THROWS_AS(generate(wrong, p.tokenizer, 1, cfg), ConfigError);
}

TEST_CASE("unconstrained sampling mode stays within the vocabulary") {
    auto p = make_pipeline(15, 30, 30);
    SamplerConfig cfg;
    cfg.constrained = false;
    cfg.seed = 4;
    auto gen = generate(p.model, p.tokenizer, 4, cfg);
    CHECK(gen.windows.size() == 4);  // clamping keeps decode well-defined
    for (const auto& seq : gen.sequences)
        for (auto t : seq) CHECK((t >= 0 && t < static_cast<std::int64_t>(p.model.vocab.total)));
}

TEST_CASE("top-k truncation still samples valid tokens") {
    auto p = make_pipeline(16, 30, 30);
    SamplerConfig cfg;
    cfg.top_k = 2;
    cfg.seed = 6;
    for (const auto& seq : sample_tokens(p.model, 3, cfg))
        for (auto t : seq) CHECK((t >= 0 && t < static_cast<std::int64_t>(p.model.vocab.total)));
}
