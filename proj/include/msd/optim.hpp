#pragma once

#include <cmath>
#include <vector>

#include "msd/tensor.hpp"

namespace msd {

// AdamW with decoupled weight decay. Gradients accumulate between steps by
// contract, so step() ends by zeroing them.
class AdamW {
public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    AdamW(std::vector<TensorPtr> params, Options opt) : params_(std::move(params)), opt_(opt) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->size(), 0.0);
            v_[i].assign(params_[i]->size(), 0.0);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = *params_[i];
            if (!p.has_grad()) p.ensure_grad();
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double g = p.grad[j];
                m_[i][j] = opt_.beta1 * m_[i][j] + (1.0 - opt_.beta1) * g;
                v_[i][j] = opt_.beta2 * v_[i][j] + (1.0 - opt_.beta2) * g * g;
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                p.value[j] -= opt_.lr * (mhat / (std::sqrt(vhat) + opt_.eps) +
                                         opt_.weight_decay * p.value[j]);
            }
        }
        zero_grad();
    }

private:
    std::vector<TensorPtr> params_;
    Options opt_;
    std::vector<std::vector<double>> m_, v_;
    std::uint64_t t_ = 0;
};

}  // namespace msd
