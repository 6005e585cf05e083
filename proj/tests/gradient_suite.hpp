#pragma once

// Finite-difference coverage for every differentiable primitive, shared by the
// unit tests and the acceptance gate. Ops whose plain sum is degenerate
// (softmax, layer norm, normalize) are composed with a fixed random projection
// so the checked scalar actually depends on the gradient path.

#include <string>
#include <vector>

#include "msd/gradcheck.hpp"
#include "msd/nn.hpp"

namespace msd_tests {

using namespace msd;

struct GradResult {
    std::string name;
    double max_err = 0.0;
};

inline TensorPtr rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    auto t = zeros(std::move(shape));
    for (auto& v : t->value) v = rng.uniform(lo, hi);
    return t;
}

// Elementwise product with a fixed random tensor, to de-degenerate sums.
inline TensorOp project(const TensorOp& op, const TensorPtr& weights) {
    return [op, weights](Tape& tape, const TensorPtr& x) {
        return mul(tape, op(tape, x), weights);
    };
}

inline std::vector<GradResult> run_gradient_suite(std::uint64_t seed, std::size_t trials = 10) {
    Rng rng(seed);
    std::vector<GradResult> results;

    auto run = [&](const std::string& name, const std::function<double(Rng&)>& one) {
        GradResult r{name, 0.0};
        for (std::size_t i = 0; i < trials; ++i) r.max_err = std::max(r.max_err, one(rng));
        results.push_back(r);
    };

    run("add", [](Rng& rng) {
        auto b = rand_tensor({3, 4}, rng);
        return check_gradient("add", [b](Tape& t, const TensorPtr& x) { return add(t, x, b); },
                              rand_tensor({3, 4}, rng));
    });
    run("sub", [](Rng& rng) {
        auto b = rand_tensor({3, 4}, rng);
        return check_gradient("sub", [b](Tape& t, const TensorPtr& x) { return sub(t, x, b); },
                              rand_tensor({3, 4}, rng));
    });
    run("mul", [](Rng& rng) {
        auto b = rand_tensor({3, 4}, rng);
        return check_gradient("mul", [b](Tape& t, const TensorPtr& x) { return mul(t, x, b); },
                              rand_tensor({3, 4}, rng));
    });
    run("scale", [](Rng& rng) {
        return check_gradient("scale",
                              [](Tape& t, const TensorPtr& x) { return scale(t, x, -1.7); },
                              rand_tensor({2, 5}, rng));
    });
    run("relu", [](Rng& rng) {
        // keep values away from the kink, where FD is ill-defined
        auto x = rand_tensor({4, 4}, rng);
        for (auto& v : x->value)
            if (std::abs(v) < 1e-2) v += v < 0 ? -0.05 : 0.05;
        return check_gradient("relu", [](Tape& t, const TensorPtr& a) { return relu(t, a); }, x);
    });
    run("matmul", [](Rng& rng) {
        auto b = rand_tensor({4, 3}, rng);
        return check_gradient("matmul",
                              [b](Tape& t, const TensorPtr& x) { return matmul(t, x, b); },
                              rand_tensor({3, 4}, rng));
    });
    run("matmul_rhs", [](Rng& rng) {
        auto a = rand_tensor({3, 4}, rng);
        return check_gradient("matmul_rhs",
                              [a](Tape& t, const TensorPtr& x) { return matmul(t, a, x); },
                              rand_tensor({4, 3}, rng));
    });
    run("bmm", [](Rng& rng) {
        auto b = rand_tensor({2, 3, 2}, rng);
        return check_gradient("bmm", [b](Tape& t, const TensorPtr& x) { return bmm(t, x, b); },
                              rand_tensor({2, 2, 3}, rng));
    });
    run("bmm_nt", [](Rng& rng) {
        auto b = rand_tensor({2, 4, 3}, rng);
        return check_gradient("bmm_nt",
                              [b](Tape& t, const TensorPtr& x) { return bmm_nt(t, x, b); },
                              rand_tensor({2, 2, 3}, rng));
    });
    run("add_bias", [](Rng& rng) {
        auto b = rand_tensor({4}, rng);
        return check_gradient("add_bias",
                              [b](Tape& t, const TensorPtr& x) { return add_bias(t, x, b); },
                              rand_tensor({3, 4}, rng));
    });
    run("mean", [](Rng& rng) {
        return check_gradient("mean", [](Tape& t, const TensorPtr& x) { return mean_all(t, x); },
                              rand_tensor({3, 5}, rng));
    });
    run("sum_lastdim", [](Rng& rng) {
        auto w = rand_tensor({4}, rng);
        return check_gradient(
            "sum_lastdim",
            [w](Tape& t, const TensorPtr& x) { return mul(t, sum_lastdim(t, x), w); },
            rand_tensor({4, 3}, rng));
    });
    run("softmax", [](Rng& rng) {
        auto w = rand_tensor({3, 5}, rng);
        return check_gradient(
            "softmax", project([](Tape& t, const TensorPtr& x) { return softmax(t, x); }, w),
            rand_tensor({3, 5}, rng, -2.0, 2.0));
    });
    run("causal_softmax", [](Rng& rng) {
        auto w = rand_tensor({2, 3, 3}, rng);
        return check_gradient(
            "causal_softmax",
            project([](Tape& t, const TensorPtr& x) { return causal_softmax(t, x); }, w),
            rand_tensor({2, 3, 3}, rng, -2.0, 2.0));
    });
    run("cross-entropy", [](Rng& rng) {
        std::vector<std::int64_t> labels(4);
        for (auto& l : labels) l = rng.uniform_int(6);
        return check_gradient(
            "cross-entropy",
            [labels](Tape& t, const TensorPtr& x) { return cross_entropy(t, x, labels); },
            rand_tensor({4, 6}, rng, -2.0, 2.0));
    });
    run("layernorm", [](Rng& rng) {
        auto gamma = rand_tensor({6}, rng, 0.5, 1.5);
        auto beta = rand_tensor({6}, rng);
        auto w = rand_tensor({3, 6}, rng);
        return check_gradient(
            "layernorm",
            project([gamma, beta](Tape& t, const TensorPtr& x) {
                return layer_norm(t, x, gamma, beta);
            }, w),
            rand_tensor({3, 6}, rng));
    });
    run("layernorm_affine", [](Rng& rng) {
        auto x = rand_tensor({3, 6}, rng);
        auto beta = rand_tensor({6}, rng);
        auto w = rand_tensor({3, 6}, rng);
        return check_gradient(
            "layernorm_affine",
            project([x, beta](Tape& t, const TensorPtr& gamma) {
                return layer_norm(t, x, gamma, beta);
            }, w),
            rand_tensor({6}, rng, 0.5, 1.5));
    });
    run("layernorm_channels", [](Rng& rng) {
        auto gamma = rand_tensor({4}, rng, 0.5, 1.5);
        auto beta = rand_tensor({4}, rng);
        auto w = rand_tensor({2, 4, 3}, rng);
        return check_gradient(
            "layernorm_channels",
            project([gamma, beta](Tape& t, const TensorPtr& x) {
                return layer_norm_channels(t, x, gamma, beta);
            }, w),
            rand_tensor({2, 4, 3}, rng));
    });
    run("embedding-lookup", [](Rng& rng) {
        std::vector<std::int64_t> ids(5);
        for (auto& i : ids) i = rng.uniform_int(6);
        return check_gradient(
            "embedding-lookup",
            [ids](Tape& t, const TensorPtr& table) { return embedding(t, table, ids); },
            rand_tensor({6, 3}, rng));
    });
    run("conv1d", [](Rng& rng) {
        auto w = rand_tensor({3, 2, 3}, rng);
        auto b = rand_tensor({3}, rng);
        return check_gradient(
            "conv1d",
            [w, b](Tape& t, const TensorPtr& x) { return conv1d(t, x, w, b, 1, 1, 1, 1); },
            rand_tensor({2, 2, 6}, rng));
    });
    run("conv1d_weight", [](Rng& rng) {
        auto x = rand_tensor({2, 2, 6}, rng);
        auto b = rand_tensor({3}, rng);
        return check_gradient(
            "conv1d_weight",
            [x, b](Tape& t, const TensorPtr& w) { return conv1d(t, x, w, b, 2, 1, 1, 2); },
            rand_tensor({3, 2, 3}, rng));
    });
    run("nearest-upsample", [](Rng& rng) {
        auto w = rand_tensor({2, 2, 8}, rng);
        return check_gradient(
            "nearest-upsample",
            project([](Tape& t, const TensorPtr& x) { return upsample_nearest2(t, x); }, w),
            rand_tensor({2, 2, 4}, rng));
    });
    run("l2_normalize_rows", [](Rng& rng) {
        auto w = rand_tensor({3, 4}, rng);
        return check_gradient(
            "l2_normalize_rows",
            project([](Tape& t, const TensorPtr& x) { return l2_normalize_rows(t, x); }, w),
            rand_tensor({3, 4}, rng));
    });
    run("to_heads", [](Rng& rng) {
        auto w = rand_tensor({4, 3, 2}, rng);
        return check_gradient(
            "to_heads",
            project([](Tape& t, const TensorPtr& x) { return to_heads(t, x, 2); }, w),
            rand_tensor({2, 3, 4}, rng));
    });
    run("slice_cols", [](Rng& rng) {
        auto w = rand_tensor({3, 2}, rng);
        return check_gradient(
            "slice_cols",
            project([](Tape& t, const TensorPtr& x) { return slice_cols(t, x, 1, 3); }, w),
            rand_tensor({3, 4}, rng));
    });
    return results;
}

}  // namespace msd_tests
