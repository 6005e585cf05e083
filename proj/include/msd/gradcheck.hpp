#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "msd/ops.hpp"

namespace msd {

// A differentiable map from one tensor to one tensor, evaluated on a tape.
using TensorOp = std::function<TensorPtr(Tape&, const TensorPtr&)>;

// Compare reverse-mode gradients of sum(op(x)) against central finite
// differences (step 1e-5). Returns the max over elements of
// |analytic - numeric| / max(|numeric|, 1e-8).
inline double check_gradient(const std::string& name, const TensorOp& op, const TensorPtr& input,
                             double step = 1e-5) {
    auto probe = tensor(input->shape, input->value);
    probe->requires_grad = true;

    const auto eval = [&](const TensorPtr& x) {
        Tape tape;
        TensorPtr y = sum_all(tape, op(tape, x));
        if (!std::isfinite(y->value[0]))
            throw Error("check_gradient: non-finite output from op '" + name + "'");
        return y;
    };

    {
        Tape tape;
        TensorPtr y = sum_all(tape, op(tape, probe));
        if (!std::isfinite(y->value[0]))
            throw Error("check_gradient: non-finite output from op '" + name + "'");
        tape.backward(y);
    }

    double worst = 0.0;
    for (std::size_t i = 0; i < probe->size(); ++i) {
        auto plus = tensor(input->shape, input->value);
        auto minus = tensor(input->shape, input->value);
        plus->value[i] += step;
        minus->value[i] -= step;
        const double fp = eval(plus)->value[0];
        const double fm = eval(minus)->value[0];
        const double numeric = (fp - fm) / (2.0 * step);
        if (!std::isfinite(numeric))
            throw Error("check_gradient: non-finite finite-difference for op '" + name + "'");
        const double analytic = probe->grad_at(i);
        const double rel = std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-8);
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace msd
