#pragma once

#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "msd/tensor.hpp"

namespace msd {

// Scratch adjoint buffers for one backward sweep. Keeping adjoints outside the
// tensors makes repeated backward() calls accumulate cleanly into .grad.
class Adjoints {
public:
    void seed(const TensorPtr& t, double v) {
        auto& buf = map_[t.get()];
        if (buf.empty()) buf.assign(t->size(), 0.0);
        buf[0] += v;
    }

    // Adjoint of a node output; nullptr if nothing downstream touched it.
    const std::vector<double>* find(const Tensor* t) const {
        auto it = map_.find(const_cast<Tensor*>(t));
        return it == map_.end() ? nullptr : &it->second;
    }

    // Accumulation buffer for an input; nullptr when the input does not take
    // gradients, so op backwards can simply skip it.
    std::vector<double>* accum(const TensorPtr& t) {
        if (!t->requires_grad) return nullptr;
        auto& buf = map_[t.get()];
        if (buf.empty()) buf.assign(t->size(), 0.0);
        return &buf;
    }

    void flush_to_grads() {
        for (auto& [t, buf] : map_) {
            if (!t->requires_grad) continue;
            t->ensure_grad();
            for (std::size_t i = 0; i < buf.size(); ++i) t->grad[i] += buf[i];
        }
    }

private:
    std::unordered_map<Tensor*, std::vector<double>> map_;
};

// Define-by-run record of primitive ops, rebuilt per forward pass.
// Single-threaded by contract; node order is topological by construction.
class Tape {
public:
    void record(TensorPtr out, std::function<void(Adjoints&)> backward) {
        nodes_.push_back({std::move(out), std::move(backward)});
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Reverse sweep from a scalar loss. Reachable requires-grad tensors get
    // d loss / d tensor added into .grad; everything else is left untouched.
    void backward(const TensorPtr& loss) {
        if (!loss->is_scalar())
            fail_contract("backward: loss must be scalar, got shape ", shape_str(loss->shape));
        if (!loss->requires_grad) return;  // nothing reachable takes gradients
        Adjoints adj;
        adj.seed(loss, 1.0);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (!it->out->requires_grad) continue;
            if (adj.find(it->out.get()) == nullptr) continue;  // not on the loss path
            it->backward(adj);
        }
        adj.flush_to_grads();
    }

private:
    struct Node {
        TensorPtr out;
        std::function<void(Adjoints&)> backward;
    };
    std::vector<Node> nodes_;
};

}  // namespace msd
