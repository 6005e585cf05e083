#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "msd/ops.hpp"

namespace msd {
namespace nn {

// Named parameter list used for optimizers and checkpoints.
struct ParamMap {
    std::vector<std::pair<std::string, TensorPtr>> items;

    void add(const std::string& name, const TensorPtr& t) { items.emplace_back(name, t); }
    void merge(const std::string& prefix, const ParamMap& other) {
        for (const auto& [n, t] : other.items) items.emplace_back(prefix + "." + n, t);
    }
    std::vector<TensorPtr> tensors() const {
        std::vector<TensorPtr> out;
        out.reserve(items.size());
        for (const auto& [n, t] : items) out.push_back(t);
        return out;
    }
};

inline double init_bound(std::size_t fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); }

// ---------------------------------------------------------------------------

class Conv1d {
public:
    std::size_t in_channels = 0, out_channels = 0, kernel_size = 0;
    std::size_t stride = 1, padding = 0, dilation = 1;
    bool causal = false;  // pad (K-1)*dilation on the left only
    TensorPtr weight, bias;

    Conv1d() = default;
    Conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t stride_,
           std::size_t padding_, std::size_t dilation_, Rng& rng, bool causal_ = false)
        : in_channels(in_ch),
          out_channels(out_ch),
          kernel_size(k),
          stride(stride_),
          padding(padding_),
          dilation(dilation_),
          causal(causal_) {
        weight = param_uniform({out_ch, in_ch, k}, init_bound(in_ch * k), rng);
        bias = param_zeros({out_ch});
    }

    std::size_t output_length(std::size_t L) const {
        const std::size_t total_pad = causal ? dilation * (kernel_size - 1) : 2 * padding;
        return (L + total_pad - dilation * (kernel_size - 1) - 1) / stride + 1;
    }

    TensorPtr forward(Tape& tape, const TensorPtr& x) const {
        if (causal) return conv1d(tape, x, weight, bias, stride, dilation * (kernel_size - 1), 0, dilation);
        return conv1d(tape, x, weight, bias, stride, padding, padding, dilation);
    }

    ParamMap params() const {
        ParamMap p;
        p.add("weight", weight);
        p.add("bias", bias);
        return p;
    }
};

class LayerNorm {
public:
    TensorPtr gamma, beta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim) {
        gamma = full({dim}, 1.0);
        gamma->requires_grad = true;
        beta = param_zeros({dim});
    }

    // Normalize over the last dim of (..., F).
    TensorPtr forward(Tape& tape, const TensorPtr& x) const {
        return layer_norm(tape, x, gamma, beta);
    }
    // Normalize over the channel dim of (B,C,L).
    TensorPtr forward_channels(Tape& tape, const TensorPtr& x) const {
        return layer_norm_channels(tape, x, gamma, beta);
    }

    ParamMap params() const {
        ParamMap p;
        p.add("gamma", gamma);
        p.add("beta", beta);
        return p;
    }
};

class Linear {
public:
    TensorPtr weight;  // (in, out)
    TensorPtr bias;    // (out)

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng) {
        weight = param_uniform({in, out}, init_bound(in), rng);
        bias = param_zeros({out});
    }

    TensorPtr forward(Tape& tape, const TensorPtr& x) const {
        return add_bias(tape, matmul(tape, x, weight), bias);
    }

    ParamMap params() const {
        ParamMap p;
        p.add("weight", weight);
        p.add("bias", bias);
        return p;
    }
};

class EmbeddingTable {
public:
    std::size_t rows = 0, dim = 0;
    TensorPtr weight;

    EmbeddingTable() = default;
    EmbeddingTable(std::size_t rows_, std::size_t dim_, Rng& rng) : rows(rows_), dim(dim_) {
        weight = param_uniform({rows_, dim_}, init_bound(dim_), rng);
    }

    TensorPtr lookup(Tape& tape, const std::vector<std::int64_t>& ids) const {
        return embedding(tape, weight, ids);
    }

    ParamMap params() const {
        ParamMap p;
        p.add("weight", weight);
        return p;
    }
};

// ---------------------------------------------------------------------------
// Dilated residual block on (B,D,L):
//   LN -> ReLU -> Conv(k3, dilated) -> LN -> ReLU -> Conv(k1) -> + input
// Output shape equals input shape for any dilation.
class ResNetBlock {
public:
    std::size_t dilation = 1;
    LayerNorm ln1, ln2;
    Conv1d conv1, conv2;

    ResNetBlock() = default;
    ResNetBlock(std::size_t channels, std::size_t dilation_, Rng& rng)
        : dilation(dilation_),
          ln1(channels),
          ln2(channels),
          conv1(channels, channels, 3, 1, dilation_, dilation_, rng),
          conv2(channels, channels, 1, 1, 0, 1, rng) {}

    TensorPtr forward(Tape& tape, const TensorPtr& x) const {
        TensorPtr h = ln1.forward_channels(tape, x);
        h = relu(tape, h);
        h = conv1.forward(tape, h);
        h = ln2.forward_channels(tape, h);
        h = relu(tape, h);
        h = conv2.forward(tape, h);
        return add(tape, x, h);
    }

    ParamMap params() const {
        ParamMap p;
        p.merge("ln1", ln1.params());
        p.merge("conv1", conv1.params());
        p.merge("ln2", ln2.params());
        p.merge("conv2", conv2.params());
        return p;
    }
};

// Stack of ResNet blocks with dilations 1, g, g^2, ... (growth rate g).
class ResNetStack {
public:
    std::vector<ResNetBlock> blocks;

    ResNetStack() = default;
    ResNetStack(std::size_t channels, std::size_t depth, std::size_t growth, Rng& rng) {
        std::size_t dil = 1;
        for (std::size_t i = 0; i < depth; ++i) {
            blocks.emplace_back(channels, dil, rng);
            dil *= growth;
        }
    }

    TensorPtr forward(Tape& tape, TensorPtr x) const {
        for (const auto& b : blocks) x = b.forward(tape, x);
        return x;
    }

    ParamMap params() const {
        ParamMap p;
        for (std::size_t i = 0; i < blocks.size(); ++i)
            p.merge("block" + std::to_string(i), blocks[i].params());
        return p;
    }
};

// ---------------------------------------------------------------------------
// Time-series encoder on (B,d,L):
//   Conv(d->D,k3) -> ReLU -> T x [Conv(D->D,k4,s2), ResNetStack(depth 3, growth 3)]
//   -> Conv(D->d_c,k3), producing (B,d_c,L/2^T).
class Encoder {
public:
    std::size_t depth = 0;  // number of halvings T
    Conv1d conv_in;
    std::vector<Conv1d> down;
    std::vector<ResNetStack> res;
    Conv1d conv_out;

    Encoder() = default;
    Encoder(std::size_t in_dim, std::size_t hidden, std::size_t code_dim, std::size_t depth_,
            Rng& rng)
        : depth(depth_), conv_in(in_dim, hidden, 3, 1, 1, 1, rng) {
        for (std::size_t t = 0; t < depth_; ++t) {
            down.emplace_back(hidden, hidden, 4, 2, 1, 1, rng);
            res.emplace_back(hidden, 3, 3, rng);
        }
        conv_out = Conv1d(hidden, code_dim, 3, 1, 1, 1, rng);
    }

    TensorPtr forward(Tape& tape, const TensorPtr& x) const {
        const std::size_t L = x->shape[2];
        if (L % (std::size_t{1} << depth) != 0)
            fail_config("encoder: input length ", L, " not divisible by 2^", depth);
        TensorPtr h = relu(tape, conv_in.forward(tape, x));
        for (std::size_t t = 0; t < depth; ++t) {
            h = down[t].forward(tape, h);
            h = res[t].forward(tape, h);
        }
        return conv_out.forward(tape, h);
    }

    ParamMap params() const {
        ParamMap p;
        p.merge("conv_in", conv_in.params());
        for (std::size_t t = 0; t < depth; ++t) {
            p.merge("down" + std::to_string(t), down[t].params());
            p.merge("res" + std::to_string(t), res[t].params());
        }
        p.merge("conv_out", conv_out.params());
        return p;
    }
};

// Decoder mirroring Encoder, (B,d_c,L/2^T) -> (B,d,L):
//   Conv(d_c->D,k3) -> ReLU -> T x [ResNetStack, 2x nearest upsample, Conv(D->D,k3)]
//   -> Conv(D->D,k3) -> ReLU -> Conv(D->d,k3).
class Decoder {
public:
    std::size_t depth = 0;
    Conv1d conv_in;
    std::vector<ResNetStack> res;
    std::vector<Conv1d> up_conv;
    Conv1d conv_mid, conv_out;

    Decoder() = default;
    Decoder(std::size_t out_dim, std::size_t hidden, std::size_t code_dim, std::size_t depth_,
            Rng& rng)
        : depth(depth_), conv_in(code_dim, hidden, 3, 1, 1, 1, rng) {
        for (std::size_t t = 0; t < depth_; ++t) {
            res.emplace_back(hidden, 3, 3, rng);
            up_conv.emplace_back(hidden, hidden, 3, 1, 1, 1, rng);
        }
        conv_mid = Conv1d(hidden, hidden, 3, 1, 1, 1, rng);
        conv_out = Conv1d(hidden, out_dim, 3, 1, 1, 1, rng);
    }

    TensorPtr forward(Tape& tape, const TensorPtr& h_in) const {
        TensorPtr h = relu(tape, conv_in.forward(tape, h_in));
        for (std::size_t t = 0; t < depth; ++t) {
            h = res[t].forward(tape, h);
            h = upsample_nearest2(tape, h);
            h = up_conv[t].forward(tape, h);
        }
        h = conv_mid.forward(tape, h);
        h = relu(tape, h);
        return conv_out.forward(tape, h);
    }

    ParamMap params() const {
        ParamMap p;
        p.merge("conv_in", conv_in.params());
        for (std::size_t t = 0; t < depth; ++t) {
            p.merge("res" + std::to_string(t), res[t].params());
            p.merge("up_conv" + std::to_string(t), up_conv[t].params());
        }
        p.merge("conv_mid", conv_mid.params());
        p.merge("conv_out", conv_out.params());
        return p;
    }
};

// ---------------------------------------------------------------------------
// Pre-norm decoder-only block:
//   x += CausalAttention(LN(x)); x += MLP(LN(x)) with ReLU between the two
//   linear layers.
class TransformerBlock {
public:
    std::size_t d_model = 0, heads = 0;
    LayerNorm ln1, ln2;
    Linear qkv, proj, ff1, ff2;

    TransformerBlock() = default;
    TransformerBlock(std::size_t d_model_, std::size_t heads_, std::size_t ff_dim, Rng& rng)
        : d_model(d_model_),
          heads(heads_),
          ln1(d_model_),
          ln2(d_model_),
          qkv(d_model_, 3 * d_model_, rng),
          proj(d_model_, d_model_, rng),
          ff1(d_model_, ff_dim, rng),
          ff2(ff_dim, d_model_, rng) {
        if (d_model_ % heads_ != 0)
            fail_config("transformer block: d_m ", d_model_, " not divisible by ", heads_, " heads");
    }

    // x is (B,S,dm).
    TensorPtr forward(Tape& tape, const TensorPtr& x) const {
        const std::size_t B = x->shape[0], S = x->shape[1], dm = x->shape[2];
        const std::size_t dh = dm / heads;

        TensorPtr h = ln1.forward(tape, x);
        TensorPtr flat = reshape(tape, h, {B * S, dm});
        TensorPtr fused = qkv.forward(tape, flat);
        TensorPtr q = to_heads(tape, reshape(tape, slice_cols(tape, fused, 0, dm), {B, S, dm}), heads);
        TensorPtr k =
            to_heads(tape, reshape(tape, slice_cols(tape, fused, dm, 2 * dm), {B, S, dm}), heads);
        TensorPtr v = to_heads(
            tape, reshape(tape, slice_cols(tape, fused, 2 * dm, 3 * dm), {B, S, dm}), heads);
        TensorPtr scores = scale(tape, bmm_nt(tape, q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
        TensorPtr attn = causal_softmax(tape, scores);
        TensorPtr ctx = from_heads(tape, bmm(tape, attn, v), heads);
        TensorPtr attn_out =
            reshape(tape, proj.forward(tape, reshape(tape, ctx, {B * S, dm})), {B, S, dm});
        TensorPtr x1 = add(tape, x, attn_out);

        TensorPtr h2 = reshape(tape, ln2.forward(tape, x1), {B * S, dm});
        TensorPtr ff = ff2.forward(tape, relu(tape, ff1.forward(tape, h2)));
        return add(tape, x1, reshape(tape, ff, {B, S, dm}));
    }

    ParamMap params() const {
        ParamMap p;
        p.merge("ln1", ln1.params());
        p.merge("qkv", qkv.params());
        p.merge("proj", proj.params());
        p.merge("ln2", ln2.params());
        p.merge("ff1", ff1.params());
        p.merge("ff2", ff2.params());
        return p;
    }
};

// Run N blocks over embeddings and project every position to vocab logits.
inline TensorPtr transformer_forward(Tape& tape, const std::vector<TransformerBlock>& blocks,
                                     const Linear& head, TensorPtr emb) {
    const std::size_t B = emb->shape[0], S = emb->shape[1], dm = emb->shape[2];
    for (const auto& blk : blocks) emb = blk.forward(tape, emb);
    TensorPtr logits = head.forward(tape, reshape(tape, emb, {B * S, dm}));
    return reshape(tape, logits, {B, S, logits->shape[1]});
}

}  // namespace nn
}  // namespace msd
