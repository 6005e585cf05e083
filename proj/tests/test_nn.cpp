#include <catch2/catch_amalgamated.hpp>

#include "gradient_suite.hpp"
#include "msd/msd.hpp"

using namespace msd;
using msd_tests::rand_tensor;

TEST_CASE("encoder output is (B, d_c, L/2^T)") {
    Rng rng(1);
    nn::Encoder enc(5, 8, 6, 2, rng);
    Tape tape;
    auto y = enc.forward(tape, rand_tensor({2, 5, 24}, rng));
    CHECK(y->shape == Shape{2, 6, 6});
}

TEST_CASE("encoder with T=0 preserves length") {
    Rng rng(2);
    nn::Encoder enc(3, 8, 4, 0, rng);
    Tape tape;
    auto y = enc.forward(tape, rand_tensor({1, 3, 10}, rng));
    CHECK(y->shape == Shape{1, 4, 10});
}

TEST_CASE("encoder rejects an indivisible length before any compute") {
    Rng rng(3);
    nn::Encoder enc(3, 8, 4, 2, rng);
    Tape tape;
    CHECK_THROWS_AS(enc.forward(tape, rand_tensor({1, 3, 10}, rng)), ConfigError);
}

TEST_CASE("all-zero input with zero biases maps to all-zero output") {
    Rng rng(4);
    nn::Encoder enc(3, 8, 4, 1, rng);  // biases are zero-initialized
    Tape tape;
    auto y = enc.forward(tape, zeros({2, 3, 8}));
    for (double v : y->value) CHECK(v == 0.0);
}

TEST_CASE("decoder restores (B, d, L)") {
    Rng rng(5);
    nn::Decoder dec(5, 8, 6, 2, rng);
    Tape tape;
    auto y = dec.forward(tape, rand_tensor({2, 6, 6}, rng));
    CHECK(y->shape == Shape{2, 5, 24});
}

TEST_CASE("nearest upsample duplicates frames") {
    Tape tape;
    auto x = tensor({1, 1, 3}, {1.0, 2.0, 3.0});
    auto y = upsample_nearest2(tape, x);
    CHECK(y->value == std::vector<double>{1, 1, 2, 2, 3, 3});
}

TEST_CASE("encoder/decoder shape round trip across configurations") {
    Rng rng(6);
    for (auto [d, L, T] : std::vector<std::tuple<std::size_t, std::size_t, std::size_t>>{
             {1, 8, 0}, {2, 8, 1}, {5, 24, 2}, {3, 16, 3}}) {
        nn::Encoder enc(d, 6, 4, T, rng);
        nn::Decoder dec(d, 6, 4, T, rng);
        Tape tape;
        auto h = enc.forward(tape, rand_tensor({2, d, L}, rng));
        CHECK(h->shape == Shape{2, 4, L >> T});
        auto y = dec.forward(tape, h);
        CHECK(y->shape == Shape{2, d, L});
    }
}

TEST_CASE("layer norm slices have zero mean and unit variance before affine") {
    Rng rng(7);
    auto x = rand_tensor({4, 16}, rng, -3.0, 3.0);
    auto gamma = full({16}, 1.0);
    auto beta = zeros({16});
    Tape tape;
    auto y = layer_norm(tape, x, gamma, beta);
    for (std::size_t i = 0; i < 4; ++i) {
        double mu = 0.0, var = 0.0;
        for (std::size_t j = 0; j < 16; ++j) mu += y->value[i * 16 + j];
        mu /= 16.0;
        for (std::size_t j = 0; j < 16; ++j) {
            const double d = y->value[i * 16 + j] - mu;
            var += d * d;
        }
        var /= 16.0;
        CHECK(std::abs(mu) <= 1e-9);
        CHECK(std::abs(var - 1.0) <= 1e-6);
    }
}

TEST_CASE("resnet block with zeroed convolutions is the identity map") {
    Rng rng(8);
    nn::ResNetBlock block(4, 3, rng);
    std::fill(block.conv1.weight->value.begin(), block.conv1.weight->value.end(), 0.0);
    std::fill(block.conv2.weight->value.begin(), block.conv2.weight->value.end(), 0.0);
    auto x = rand_tensor({2, 4, 6}, rng);
    Tape tape;
    auto y = block.forward(tape, x);
    CHECK(y->value == x->value);
}

TEST_CASE("resnet block preserves shape for every dilation") {
    Rng rng(9);
    for (std::size_t dil : {1u, 3u, 9u}) {
        nn::ResNetBlock block(4, dil, rng);
        Tape tape;
        auto y = block.forward(tape, rand_tensor({1, 4, 12}, rng));
        CHECK(y->shape == Shape{1, 4, 12});
    }
}

TEST_CASE("transformer logits at i ignore perturbations at j > i") {
    Rng rng(10);
    std::vector<nn::TransformerBlock> blocks;
    blocks.emplace_back(16, 4, 32, rng);
    blocks.emplace_back(16, 4, 32, rng);
    nn::Linear head(16, 7, rng);

    auto emb = rand_tensor({2, 5, 16}, rng);
    Tape t1;
    auto base = nn::transformer_forward(t1, blocks, head, emb);

    auto perturbed = tensor(emb->shape, emb->value);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t f = 0; f < 16; ++f) perturbed->value[(b * 5 + 4) * 16 + f] += 3.14;
    Tape t2;
    auto out = nn::transformer_forward(t2, blocks, head, perturbed);

    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t s = 0; s < 4; ++s)
            for (std::size_t v = 0; v < 7; ++v)
                CHECK(out->value[(b * 5 + s) * 7 + v] == base->value[(b * 5 + s) * 7 + v]);
}

TEST_CASE("causality holds for every prefix length") {
    Rng rng(11);
    std::vector<nn::TransformerBlock> blocks;
    blocks.emplace_back(8, 2, 16, rng);
    nn::Linear head(8, 3, rng);
    auto emb = rand_tensor({1, 6, 8}, rng);
    Tape t1;
    auto base = nn::transformer_forward(t1, blocks, head, emb);
    for (std::size_t cut = 1; cut < 6; ++cut) {
        auto zeroed = tensor(emb->shape, emb->value);
        for (std::size_t s = cut; s < 6; ++s)
            for (std::size_t f = 0; f < 8; ++f) zeroed->value[s * 8 + f] = 0.0;
        Tape t2;
        auto out = nn::transformer_forward(t2, blocks, head, zeroed);
        for (std::size_t s = 0; s < cut; ++s)
            for (std::size_t v = 0; v < 3; ++v)
                CHECK(out->value[s * 3 + v] == base->value[s * 3 + v]);
    }
}

TEST_CASE("single-position sequences produce one valid distribution row") {
    Rng rng(12);
    std::vector<nn::TransformerBlock> blocks;
    blocks.emplace_back(8, 2, 16, rng);
    nn::Linear head(8, 5, rng);
    Tape tape;
    auto logits = nn::transformer_forward(tape, blocks, head, rand_tensor({3, 1, 8}, rng));
    CHECK(logits->shape == Shape{3, 1, 5});
    auto probs = softmax(tape, logits);
    for (std::size_t b = 0; b < 3; ++b) {
        double s = 0.0;
        for (std::size_t v = 0; v < 5; ++v) s += probs->value[b * 5 + v];
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("softmax rows over random logits sum to one") {
    Rng rng(13);
    std::vector<nn::TransformerBlock> blocks;
    for (int i = 0; i < 2; ++i) blocks.emplace_back(64, 4, 128, rng);
    nn::Linear head(64, 11, rng);
    Tape tape;
    auto logits = nn::transformer_forward(tape, blocks, head, rand_tensor({2, 4, 64}, rng));
    for (double v : logits->value) CHECK(std::isfinite(v));
    auto probs = softmax(tape, logits);
    for (std::size_t row = 0; row < 8; ++row) {
        double s = 0.0;
        for (std::size_t v = 0; v < 11; ++v) s += probs->value[row * 11 + v];
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("composite layers pass gradient checks") {
    Rng rng(14);

    nn::ResNetBlock block(3, 3, rng);
    auto werr = check_gradient(
        "resnet_block",
        [&](Tape& t, const TensorPtr& x) {
            return mul(t, block.forward(t, x), full({1, 3, 6}, 0.7));
        },
        rand_tensor({1, 3, 6}, rng));
    CHECK(werr <= 1e-4);

    nn::TransformerBlock tblock(8, 2, 16, rng);
    auto projection = rand_tensor({1, 4, 8}, rng);
    auto terr = check_gradient(
        "transformer_block",
        [&](Tape& t, const TensorPtr& x) {
            return mul(t, tblock.forward(t, x), projection);
        },
        rand_tensor({1, 4, 8}, rng));
    CHECK(terr <= 1e-4);

    nn::Conv1d causal(2, 3, 3, 1, 0, 2, rng, /*causal=*/true);
    auto cerr = check_gradient(
        "causal_conv",
        [&](Tape& t, const TensorPtr& x) { return causal.forward(t, x); },
        rand_tensor({1, 2, 8}, rng));
    CHECK(cerr <= 1e-4);
}

TEST_CASE("causal conv output does not depend on the future") {
    Rng rng(15);
    nn::Conv1d causal(1, 1, 3, 1, 0, 1, rng, /*causal=*/true);
    auto x = rand_tensor({1, 1, 8}, rng);
    Tape t1;
    auto base = causal.forward(t1, x);
    CHECK(base->shape == Shape{1, 1, 8});
    auto mod = tensor(x->shape, x->value);
    mod->value[7] += 10.0;
    Tape t2;
    auto out = causal.forward(t2, mod);
    for (std::size_t i = 0; i < 7; ++i) CHECK(out->value[i] == base->value[i]);
}
