#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "msd/common.hpp"
#include "msd/rng.hpp"

namespace msd {

// Dense row-major double tensor. `grad` is empty until something accumulates
// into it; an empty grad reads as "no gradient yet" (semantically zero).
class Tensor {
public:
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), value(std::move(v)) {
        if (numel(shape) != value.size())
            fail_contract("tensor: shape ", shape_str(shape), " does not match data length ",
                          value.size());
    }

    std::size_t size() const { return value.size(); }
    bool is_scalar() const { return value.size() == 1; }

    bool has_grad() const { return !grad.empty(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
    void zero_grad() { grad.assign(value.size(), 0.0); }

    // Gradient element, treating an absent buffer as zero.
    double grad_at(std::size_t i) const { return grad.empty() ? 0.0 : grad[i]; }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr tensor(Shape shape, std::vector<double> data) {
    return std::make_shared<Tensor>(std::move(shape), std::move(data));
}

inline TensorPtr zeros(Shape shape) {
    std::size_t n = numel(shape);
    return std::make_shared<Tensor>(std::move(shape), std::vector<double>(n, 0.0));
}

inline TensorPtr full(Shape shape, double v) {
    std::size_t n = numel(shape);
    return std::make_shared<Tensor>(std::move(shape), std::vector<double>(n, v));
}

inline TensorPtr scalar(double v) { return tensor({1}, {v}); }

// Trainable leaf initialized uniformly in [-bound, bound].
inline TensorPtr param_uniform(Shape shape, double bound, Rng& rng) {
    auto t = zeros(std::move(shape));
    for (double& x : t->value) x = rng.uniform(-bound, bound);
    t->requires_grad = true;
    return t;
}

inline TensorPtr param_zeros(Shape shape) {
    auto t = zeros(std::move(shape));
    t->requires_grad = true;
    return t;
}

}  // namespace msd
