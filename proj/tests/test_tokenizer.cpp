#include <catch2/catch_amalgamated.hpp>

#include "gradient_suite.hpp"
#include "msd/msd.hpp"

using namespace msd;
using msd_tests::rand_tensor;

namespace {

Codebook make_codebook(const std::vector<std::vector<double>>& rows, bool unit_norm = false) {
    Rng rng(0);
    Codebook cb(rows.size(), rows[0].size(), unit_norm, rng);
    for (std::size_t v = 0; v < rows.size(); ++v)
        for (std::size_t j = 0; j < rows[v].size(); ++j)
            cb.vectors->value[v * rows[v].size() + j] = rows[v][j];
    return cb;
}

TokenizerConfig small_config(std::size_t K, std::vector<std::size_t> r, std::vector<std::size_t> V) {
    TokenizerConfig cfg;
    cfg.K = K;
    cfg.r = std::move(r);
    cfg.V = std::move(V);
    cfg.d_c = 8;
    cfg.hidden = 8;
    cfg.iters = 0;
    cfg.batch = 4;
    cfg.seed = 99;
    return cfg;
}

}  // namespace

TEST_CASE("quantize picks the largest inner product") {
    auto cb = make_codebook({{1, 0}, {0, 1}});
    auto h = tensor({1, 2}, {0.9, 0.1});
    CHECK(quantize(h, cb) == std::vector<std::int64_t>{0});
}

TEST_CASE("quantize: exact codebook row maps to its own index") {
    auto cb = make_codebook({{0.3, -0.2}, {-0.8, 0.1}, {0.5, 0.5}}, true);
    for (std::size_t j = 0; j < 3; ++j) {
        auto h = tensor({1, 2}, {cb.vectors->value[j * 2], cb.vectors->value[j * 2 + 1]});
        CHECK(quantize(h, cb) == std::vector<std::int64_t>{static_cast<std::int64_t>(j)});
    }
}

TEST_CASE("quantize matches the exhaustive argmax oracle on 10,000 random cases") {
    Rng rng(314);
    std::size_t agreements = 0, total = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t V = 2 + static_cast<std::size_t>(rng.uniform_int(31));
        const std::size_t d = 2 + static_cast<std::size_t>(rng.uniform_int(7));
        Codebook cb(V, d, true, rng);
        auto h = rand_tensor({100, d}, rng);
        auto got = quantize(h, cb);
        for (std::size_t i = 0; i < 100; ++i) {
            // brute force with explicit tie handling
            std::int64_t best = 0;
            double best_dot = -1e300;
            for (std::size_t v = 0; v < V; ++v) {
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j)
                    dot += h->value[i * d + j] * cb.vectors->value[v * d + j];
                if (dot > best_dot) {
                    best_dot = dot;
                    best = static_cast<std::int64_t>(v);
                }
            }
            total += 1;
            agreements += got[i] == best ? 1 : 0;
        }
    }
    CHECK(total == 10000);
    CHECK(agreements == total);
}

TEST_CASE("quantize ties break toward the smallest index") {
    auto cb = make_codebook({{1, 0}, {1, 0}, {0, 1}});
    auto h = tensor({1, 2}, {2.0, 0.0});
    CHECK(quantize(h, cb) == std::vector<std::int64_t>{0});
}

TEST_CASE("distance-mode quantize matches the nearest-neighbour oracle") {
    Rng rng(2718);
    Codebook cb(16, 4, false, rng);
    auto h = rand_tensor({200, 4}, rng);
    auto got = quantize(h, cb);
    for (std::size_t i = 0; i < 200; ++i) {
        std::int64_t best = 0;
        double best_d = 1e300;
        for (std::size_t v = 0; v < 16; ++v) {
            double dist = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                const double d = h->value[i * 4 + j] - cb.vectors->value[v * 4 + j];
                dist += d * d;
            }
            if (dist < best_d) {
                best_d = dist;
                best = static_cast<std::int64_t>(v);
            }
        }
        CHECK(got[i] == best);
    }
}

TEST_CASE("dequantize returns exact codebook rows") {
    auto cb = make_codebook({{1, 0}, {0.25, -0.5}});
    auto rows = dequantize({0}, cb);
    CHECK(rows->value == std::vector<double>{1, 0});
    auto both = dequantize({1, 0, 1}, cb);
    CHECK(both->value == std::vector<double>{0.25, -0.5, 1, 0, 0.25, -0.5});
}

TEST_CASE("dequantize(quantize(h)) rows all belong to the codebook") {
    Rng rng(11);
    Codebook cb(8, 3, true, rng);
    auto h = rand_tensor({20, 3}, rng);
    auto rows = dequantize(quantize(h, cb), cb);
    for (std::size_t i = 0; i < 20; ++i) {
        bool found = false;
        for (std::size_t v = 0; v < 8 && !found; ++v) {
            bool eq = true;
            for (std::size_t j = 0; j < 3; ++j)
                eq = eq && rows->value[i * 3 + j] == cb.vectors->value[v * 3 + j];
            found = eq;
        }
        CHECK(found);
    }
}

TEST_CASE("dequantize reports position and value of an out-of-range token") {
    Rng rng(12);
    Codebook cb(128, 2, true, rng);
    CHECK_THROWS_MATCHES(dequantize({128}, cb), DecodeError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("128") &&
                             Catch::Matchers::ContainsSubstring("position 0")));
}

TEST_CASE("tokenize produces per-scale lengths tau / r") {
    auto cfg = small_config(2, {2, 4}, {16, 16});
    MultiScaleTokenizer model(24, 5, cfg);
    Rng rng(5);
    auto window = rand_tensor({24, 5}, rng);
    auto result = tokenize(model, window);
    REQUIRE(result.tokens.size() == 2);
    CHECK(result.tokens[0].size() == 12);
    CHECK(result.tokens[1].size() == 6);
    CHECK(result.recon->shape == Shape{1, 5, 24});
}

TEST_CASE("K=1 reduces to the single-scale tokenizer path") {
    auto cfg = small_config(1, {4}, {16});
    MultiScaleTokenizer model(24, 3, cfg);
    Rng rng(6);
    auto result = tokenize(model, rand_tensor({24, 3}, rng));
    REQUIRE(result.tokens.size() == 1);
    CHECK(result.tokens[0].size() == 6);
    // single scale: total reconstruction equals the scale reconstruction
    CHECK(result.recon->value == result.scale_recons[0]->value);
}

TEST_CASE("three-scale configuration with per-scale codebook sizes validates") {
    auto cfg = small_config(3, {2, 4, 8}, {128, 512, 512});
    CHECK_NOTHROW(MultiScaleTokenizer(24, 2, cfg));
}

TEST_CASE("indivisible window length is rejected before compute") {
    auto cfg = small_config(2, {2, 4}, {8, 8});
    CHECK_THROWS_AS(MultiScaleTokenizer(26, 2, cfg), ConfigError);
}

TEST_CASE("reconstruct sums the per-scale reconstructions exactly") {
    SECTION("K=1 identity") {
        auto a = tensor({2, 3}, {1, 2, 3, 4, 5, 6});
        CHECK(reconstruct({a})->value == a->value);
    }
    SECTION("ones + ones = twos") {
        auto out = reconstruct({full({2, 2}, 1.0), full({2, 2}, 1.0)});
        CHECK(out->value == std::vector<double>{2, 2, 2, 2});
    }
    SECTION("random K=3 matches the naive summation oracle") {
        Rng rng(7);
        auto a = rand_tensor({4, 6}, rng);
        auto b = rand_tensor({4, 6}, rng);
        auto c = rand_tensor({4, 6}, rng);
        auto got = reconstruct({a, b, c});
        for (std::size_t i = 0; i < got->size(); ++i)
            CHECK(got->value[i] == a->value[i] + b->value[i] + c->value[i]);
    }
    SECTION("shape mismatch is an error") {
        CHECK_THROWS_AS(reconstruct({full({2, 2}, 1.0), full({2, 3}, 1.0)}), ContractError);
    }
}

TEST_CASE("tokenizer loss: perfect reconstruction with aligned unit rows is zero") {
    Tape tape;
    auto x = tensor({2, 3}, {1, 2, 3, 4, 5, 6});
    auto h = tensor({2, 2}, {1, 0, 0, 1});
    auto loss = tokenizer_loss(tape, x, x, {{h, h}}, 0.5);
    CHECK(loss->value[0] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("tokenizer loss with lambda=0 is the squared reconstruction error") {
    Rng rng(8);
    Tape tape;
    auto x = rand_tensor({3, 2}, rng);
    auto recon = rand_tensor({3, 2}, rng);
    auto h = rand_tensor({3, 2}, rng);
    auto loss = tokenizer_loss(tape, x, recon, {{h, h}}, 0.0);
    double expect = 0.0;
    for (std::size_t i = 0; i < x->size(); ++i) {
        const double d = x->value[i] - recon->value[i];
        expect += d * d;
    }
    CHECK(loss->value[0] == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("tokenizer loss matches an independent scalar-loop oracle") {
    Rng rng(9);
    Tape tape;
    const std::size_t tau = 4, d = 3, L1 = 4, L2 = 2, dc = 5;
    auto x = rand_tensor({tau, d}, rng);
    auto recon = rand_tensor({tau, d}, rng);
    auto h1 = rand_tensor({L1, dc}, rng);
    auto q1 = rand_tensor({L1, dc}, rng);
    auto h2 = rand_tensor({L2, dc}, rng);
    auto q2 = rand_tensor({L2, dc}, rng);
    const double lambda = 0.7;
    auto loss = tokenizer_loss(tape, x, recon, {{h1, q1}, {h2, q2}}, lambda);

    double oracle = 0.0;
    for (std::size_t i = 0; i < x->size(); ++i) {
        const double diff = x->value[i] - recon->value[i];
        oracle += diff * diff;
    }
    auto embed_term = [dc](const TensorPtr& h, const TensorPtr& q, std::size_t L) {
        double s = 0.0;
        for (std::size_t i = 0; i < L; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < dc; ++j) dot += h->value[i * dc + j] * q->value[i * dc + j];
            s += 1.0 - dot;
        }
        return s / static_cast<double>(L);
    };
    oracle += lambda * (embed_term(h1, q1, L1) + embed_term(h2, q2, L2));
    CHECK(loss->value[0] == Catch::Approx(oracle).margin(1e-10));
}

TEST_CASE("ema update arithmetic") {
    SECTION("single assignment blends halfway at beta=0.5") {
        auto cb = make_codebook({{1, 0}});
        ema_update(cb, {0}, {0.0, 1.0}, 0.5);
        CHECK(cb.vectors->value == std::vector<double>{0.5, 0.5});
    }
    SECTION("beta -> 0 leaves the codebook unchanged within 1e-12") {
        auto cb = make_codebook({{0.4, -0.3}});
        ema_update(cb, {0}, {2.0, 2.0}, 1e-13);
        CHECK(std::abs(cb.vectors->value[0] - 0.4) <= 1e-12);
        CHECK(std::abs(cb.vectors->value[1] + 0.3) <= 1e-12);
    }
    SECTION("entries never selected stay bit-identical") {
        auto cb = make_codebook({{1, 0}, {0.123, 0.456}});
        const auto before = cb.vectors->value;
        ema_update(cb, {0}, {0.0, 1.0}, 0.3);
        CHECK(cb.vectors->value[2] == before[2]);
        CHECK(cb.vectors->value[3] == before[3]);
    }
}

TEST_CASE("ema update matches the closed form within 1e-12 on random batches") {
    Rng rng(21);
    const std::size_t V = 12, d = 4, n = 60;
    Codebook cb(V, d, false, rng);
    const auto before = cb.vectors->value;
    std::vector<std::int64_t> tokens(n);
    std::vector<double> h(n * d);
    for (auto& t : tokens) t = rng.uniform_int(V);
    for (auto& v : h) v = rng.uniform(-2.0, 2.0);
    const double beta = 0.23;
    ema_update(cb, tokens, h, beta);
    for (std::size_t v = 0; v < V; ++v) {
        std::vector<double> mean(d, 0.0);
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (tokens[i] == static_cast<std::int64_t>(v)) {
                ++count;
                for (std::size_t j = 0; j < d; ++j) mean[j] += h[i * d + j];
            }
        for (std::size_t j = 0; j < d; ++j) {
            const double expect =
                count == 0 ? before[v * d + j]
                           : (1.0 - beta) * before[v * d + j] +
                                 beta * mean[j] / static_cast<double>(count);
            CHECK(std::abs(cb.vectors->value[v * d + j] - expect) <= 1e-12);
        }
    }
}

TEST_CASE("usage update arithmetic and scalar oracle") {
    Rng rng(22);
    Codebook cb(3, 2, false, rng);
    cb.usage = {10.0, 0.0, 2.0};
    usage_update(cb, {0, 5, 1}, 0.1);
    CHECK(cb.usage[0] == Catch::Approx(9.0));
    CHECK(cb.usage[1] == Catch::Approx(0.5));
    CHECK(cb.usage[2] == Catch::Approx(1.9));

    Codebook big(32, 2, false, rng);
    std::vector<double> u0(32);
    std::vector<std::int64_t> counts(32);
    for (std::size_t v = 0; v < 32; ++v) {
        u0[v] = rng.uniform(0.0, 5.0);
        counts[v] = rng.uniform_int(9);
    }
    big.usage = u0;
    usage_update(big, counts, 0.37);
    for (std::size_t v = 0; v < 32; ++v)
        CHECK(big.usage[v] == 0.63 * u0[v] + 0.37 * static_cast<double>(counts[v]));
}

TEST_CASE("codebook reset replaces exactly the under-threshold entries") {
    SECTION("stated example") {
        auto cb = make_codebook({{1, 0}, {0, 1}});
        cb.usage = {2.0, 0.5};
        Rng rng(1);
        const std::size_t replaced = codebook_reset(cb, {7.0, 7.0}, 1, rng);
        CHECK(replaced == 1);
        CHECK(cb.vectors->value[0] == 1.0);
        CHECK(cb.vectors->value[1] == 0.0);
        CHECK(cb.vectors->value[2] == 7.0);
        CHECK(cb.vectors->value[3] == 7.0);
    }
    SECTION("no resets when every usage is above threshold") {
        auto cb = make_codebook({{1, 0}, {0, 1}});
        cb.usage = {1.0, 3.0};
        const auto before = cb.vectors->value;
        Rng rng(2);
        CHECK(codebook_reset(cb, {9.0, 9.0}, 1, rng) == 0);
        CHECK(cb.vectors->value == before);
    }
    SECTION("every replaced vector equals some batch row") {
        Rng rng(3);
        Codebook cb(16, 3, false, rng);
        for (auto& u : cb.usage) u = 0.0;
        std::vector<double> H(5 * 3);
        for (auto& v : H) v = rng.uniform(-1.0, 1.0);
        CHECK(codebook_reset(cb, H, 5, rng) == 16);
        for (std::size_t v = 0; v < 16; ++v) {
            bool found = false;
            for (std::size_t i = 0; i < 5 && !found; ++i)
                found = std::equal(H.begin() + i * 3, H.begin() + (i + 1) * 3,
                                   cb.vectors->value.begin() + v * 3);
            CHECK(found);
        }
    }
    SECTION("reset with no batch rows is a training-state error") {
        auto cb = make_codebook({{1, 0}});
        cb.usage = {0.0};
        Rng rng(4);
        CHECK_THROWS_AS(codebook_reset(cb, {}, 0, rng), StateError);
    }
}

TEST_CASE("zero training iterations return an initialized model and empty history") {
    auto ds = gen_sines(50, 24, 2, 77);
    ds.normalize();
    auto cfg = small_config(2, {2, 4}, {8, 8});
    auto result = train_tokenizer(ds, cfg);
    CHECK(result.loss_history.empty());
    CHECK_NOTHROW(tokenize(result.model, ds.window_tensor(0)));
}

TEST_CASE("codebooks receive no gradient during training") {
    auto ds = gen_sines(60, 8, 2, 78);
    ds.normalize();
    auto cfg = small_config(2, {2, 2}, {8, 8});
    cfg.iters = 3;
    auto result = train_tokenizer(ds, cfg);
    for (const auto& sm : result.model.scales) {
        const auto& g = sm.codebook.vectors->grad;
        const bool clean = g.empty() || std::all_of(g.begin(), g.end(),
                                                    [](double v) { return v == 0.0; });
        CHECK(clean);
        CHECK_FALSE(sm.codebook.vectors->requires_grad);
    }
}

TEST_CASE("frozen tokenize is deterministic across calls") {
    auto ds = gen_sines(60, 8, 2, 79);
    ds.normalize();
    auto cfg = small_config(2, {2, 2}, {8, 8});
    cfg.iters = 10;
    auto result = train_tokenizer(ds, cfg);
    auto w = ds.window_tensor(3);
    auto a = tokenize(result.model, w);
    auto b = tokenize(result.model, w);
    CHECK(a.tokens == b.tokens);
    CHECK(a.recon->value == b.recon->value);
}

TEST_CASE("training declines the loss on an easy signal") {
    auto ds = gen_sines(200, 8, 2, 80);
    ds.normalize();
    auto cfg = small_config(1, {2}, {16});
    cfg.iters = 150;
    cfg.batch = 8;
    auto result = train_tokenizer(ds, cfg);
    REQUIRE(result.loss_history.size() == 150);
    const double head = result.loss_history[0];
    const double tail = result.loss_history.back();
    CHECK(tail < head);
}

TEST_CASE("tokenizer checkpoint round trip preserves tokens bit-exactly") {
    auto ds = gen_sines(60, 8, 2, 81);
    ds.normalize();
    auto cfg = small_config(2, {2, 2}, {8, 8});
    cfg.iters = 12;
    auto result = train_tokenizer(ds, cfg);
    const std::string path = "tokenizer_roundtrip_test.json";
    save_tokenizer(result.model, path);
    auto loaded = load_tokenizer(path);
    std::remove(path.c_str());
    auto w = ds.window_tensor(5);
    auto a = tokenize(result.model, w);
    auto b = tokenize(loaded, w);
    CHECK(a.tokens == b.tokens);
    CHECK(a.recon->value == b.recon->value);
    for (std::size_t k = 0; k < 2; ++k)
        CHECK(loaded.scales[k].codebook.usage == result.model.scales[k].codebook.usage);
}

TEST_CASE("straight-through estimator trains the encoder (gradients flow)") {
    auto ds = gen_sines(60, 8, 2, 82);
    ds.normalize();
    auto cfg = small_config(1, {2}, {8});
    MultiScaleTokenizer model(8, 2, cfg);
    Tape tape;
    auto x = model.batch_tensor(ds, {0, 1, 2, 3});
    auto fw = model.forward(tape, x, true);
    tape.backward(fw.loss);
    const auto& enc_w = model.scales[0].encoder.conv_in.weight;
    REQUIRE(enc_w->has_grad());
    double norm = 0.0;
    for (double g : enc_w->grad) norm += g * g;
    CHECK(norm > 0.0);
}
