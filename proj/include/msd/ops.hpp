#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "msd/tape.hpp"

namespace msd {

namespace detail {

inline TensorPtr make_out(Shape shape, const std::vector<const TensorPtr*>& inputs) {
    auto out = zeros(std::move(shape));
    for (const TensorPtr* in : inputs)
        if ((*in)->requires_grad) out->requires_grad = true;
    return out;
}

inline void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape != b->shape)
        fail_contract(op, ": shape mismatch ", shape_str(a->shape), " vs ", shape_str(b->shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    detail::check_same_shape(a, b, "add");
    auto out = detail::make_out(a->shape, {&a, &b});
    for (std::size_t i = 0; i < out->size(); ++i) out->value[i] = a->value[i] + b->value[i];
    tape.record(out, [out, a, b](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (auto* da = adj.accum(a))
            for (std::size_t i = 0; i < g->size(); ++i) (*da)[i] += (*g)[i];
        if (auto* db = adj.accum(b))
            for (std::size_t i = 0; i < g->size(); ++i) (*db)[i] += (*g)[i];
    });
    return out;
}

inline TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    detail::check_same_shape(a, b, "sub");
    auto out = detail::make_out(a->shape, {&a, &b});
    for (std::size_t i = 0; i < out->size(); ++i) out->value[i] = a->value[i] - b->value[i];
    tape.record(out, [out, a, b](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (auto* da = adj.accum(a))
            for (std::size_t i = 0; i < g->size(); ++i) (*da)[i] += (*g)[i];
        if (auto* db = adj.accum(b))
            for (std::size_t i = 0; i < g->size(); ++i) (*db)[i] -= (*g)[i];
    });
    return out;
}

inline TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    detail::check_same_shape(a, b, "mul");
    auto out = detail::make_out(a->shape, {&a, &b});
    for (std::size_t i = 0; i < out->size(); ++i) out->value[i] = a->value[i] * b->value[i];
    tape.record(out, [out, a, b](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (auto* da = adj.accum(a))
            for (std::size_t i = 0; i < g->size(); ++i) (*da)[i] += (*g)[i] * b->value[i];
        if (auto* db = adj.accum(b))
            for (std::size_t i = 0; i < g->size(); ++i) (*db)[i] += (*g)[i] * a->value[i];
    });
    return out;
}

inline TensorPtr scale(Tape& tape, const TensorPtr& a, double c) {
    auto out = detail::make_out(a->shape, {&a});
    for (std::size_t i = 0; i < out->size(); ++i) out->value[i] = a->value[i] * c;
    tape.record(out, [out, a, c](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (auto* da = adj.accum(a))
            for (std::size_t i = 0; i < g->size(); ++i) (*da)[i] += (*g)[i] * c;
    });
    return out;
}

inline TensorPtr add_scalar(Tape& tape, const TensorPtr& a, double c) {
    auto out = detail::make_out(a->shape, {&a});
    for (std::size_t i = 0; i < out->size(); ++i) out->value[i] = a->value[i] + c;
    tape.record(out, [out, a](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (auto* da = adj.accum(a))
            for (std::size_t i = 0; i < g->size(); ++i) (*da)[i] += (*g)[i];
    });
    return out;
}

inline TensorPtr relu(Tape& tape, const TensorPtr& a) {
    auto out = detail::make_out(a->shape, {&a});
    for (std::size_t i = 0; i < out->size(); ++i) out->value[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
    tape.record(out, [out, a](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (auto* da = adj.accum(a))
            for (std::size_t i = 0; i < g->size(); ++i)
                if (a->value[i] > 0.0) (*da)[i] += (*g)[i];
    });
    return out;
}

// Forward identity, backward barrier. Not recorded on the tape.
inline TensorPtr stop_gradient(const TensorPtr& a) {
    auto out = tensor(a->shape, a->value);
    out->requires_grad = false;
    return out;
}

// ---------------------------------------------------------------------------
// shape plumbing
// ---------------------------------------------------------------------------

inline TensorPtr reshape(Tape& tape, const TensorPtr& a, Shape shape) {
    if (numel(shape) != a->size())
        fail_contract("reshape: ", shape_str(a->shape), " -> ", shape_str(shape));
    auto out = detail::make_out(std::move(shape), {&a});
    out->value = a->value;
    tape.record(out, [out, a](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (auto* da = adj.accum(a))
            for (std::size_t i = 0; i < g->size(); ++i) (*da)[i] += (*g)[i];
    });
    return out;
}

inline TensorPtr slice_cols(Tape& tape, const TensorPtr& a, std::size_t c0, std::size_t c1) {
    if (a->shape.size() != 2 || c1 > a->shape[1] || c0 >= c1)
        fail_contract("slice_cols: bad range [", c0, ",", c1, ") for ", shape_str(a->shape));
    const std::size_t n = a->shape[0], f = a->shape[1], w = c1 - c0;
    auto out = detail::make_out({n, w}, {&a});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) out->value[i * w + j] = a->value[i * f + c0 + j];
    tape.record(out, [out, a, n, f, w, c0](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (auto* da = adj.accum(a))
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < w; ++j) (*da)[i * f + c0 + j] += (*g)[i * w + j];
    });
    return out;
}

// (B,S,dm) -> (B*H, S, dm/H): split the feature dim into attention heads.
inline TensorPtr to_heads(Tape& tape, const TensorPtr& x, std::size_t heads) {
    if (x->shape.size() != 3 || x->shape[2] % heads != 0)
        fail_contract("to_heads: need (B,S,dm) with dm divisible by heads, got ",
                      shape_str(x->shape), " heads=", heads);
    const std::size_t B = x->shape[0], S = x->shape[1], dm = x->shape[2], dh = dm / heads;
    auto out = detail::make_out({B * heads, S, dh}, {&x});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t s = 0; s < S; ++s)
                for (std::size_t t = 0; t < dh; ++t)
                    out->value[((b * heads + h) * S + s) * dh + t] =
                        x->value[(b * S + s) * dm + h * dh + t];
    tape.record(out, [out, x, B, S, dm, dh, heads](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (auto* dx = adj.accum(x))
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t s = 0; s < S; ++s)
                        for (std::size_t t = 0; t < dh; ++t)
                            (*dx)[(b * S + s) * dm + h * dh + t] +=
                                (*g)[((b * heads + h) * S + s) * dh + t];
    });
    return out;
}

// (B*H, S, dh) -> (B, S, H*dh): inverse of to_heads.
inline TensorPtr from_heads(Tape& tape, const TensorPtr& x, std::size_t heads) {
    if (x->shape.size() != 3 || x->shape[0] % heads != 0)
        fail_contract("from_heads: need (B*H,S,dh), got ", shape_str(x->shape));
    const std::size_t B = x->shape[0] / heads, S = x->shape[1], dh = x->shape[2], dm = heads * dh;
    auto out = detail::make_out({B, S, dm}, {&x});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t s = 0; s < S; ++s)
                for (std::size_t t = 0; t < dh; ++t)
                    out->value[(b * S + s) * dm + h * dh + t] =
                        x->value[((b * heads + h) * S + s) * dh + t];
    tape.record(out, [out, x, B, S, dm, dh, heads](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (auto* dx = adj.accum(x))
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t s = 0; s < S; ++s)
                        for (std::size_t t = 0; t < dh; ++t)
                            (*dx)[((b * heads + h) * S + s) * dh + t] +=
                                (*g)[(b * S + s) * dm + h * dh + t];
    });
    return out;
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

inline TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
        fail_contract("matmul: ", shape_str(a->shape), " x ", shape_str(b->shape));
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = detail::make_out({m, n}, {&a, &b});
    const double* pa = a->value.data();
    const double* pb = b->value.data();
    double* po = out->value.data();
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
        double* orow = po + i * n;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = pa[i * k + t];
            const double* brow = pb + t * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    tape.record(out, [out, a, b, m, k, n](Adjoints& adj) {
        const std::vector<double>& g = *adj.find(out.get());
        if (auto* da = adj.accum(a)) {
            double* pda = da->data();
            const double* pb = b->value.data();
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i)
                for (std::size_t t = 0; t < k; ++t) {
                    const double* brow = pb + t * n;
                    const double* grow = g.data() + i * n;
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    pda[i * k + t] += s;
                }
        }
        if (auto* db = adj.accum(b)) {
            double* pdb = db->data();
            const double* pa = a->value.data();
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
            for (std::int64_t t = 0; t < static_cast<std::int64_t>(k); ++t)
                for (std::size_t i = 0; i < m; ++i) {
                    const double av = pa[i * k + t];
                    const double* grow = g.data() + i * n;
                    double* dbrow = pdb + t * n;
                    for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                }
        }
    });
    return out;
}

// Batched product over groups: (G,m,k) x (G,k,n) -> (G,m,n).
inline TensorPtr bmm(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() != 3 || b->shape.size() != 3 || a->shape[0] != b->shape[0] ||
        a->shape[2] != b->shape[1])
        fail_contract("bmm: ", shape_str(a->shape), " x ", shape_str(b->shape));
    const std::size_t G = a->shape[0], m = a->shape[1], k = a->shape[2], n = b->shape[2];
    auto out = detail::make_out({G, m, n}, {&a, &b});
#pragma omp parallel for schedule(static) if (G * m * k * n > 32768)
    for (std::int64_t g = 0; g < static_cast<std::int64_t>(G); ++g) {
        const double* pa = a->value.data() + g * m * k;
        const double* pb = b->value.data() + g * k * n;
        double* po = out->value.data() + g * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t t = 0; t < k; ++t) {
                const double av = pa[i * k + t];
                for (std::size_t j = 0; j < n; ++j) po[i * n + j] += av * pb[t * n + j];
            }
    }
    tape.record(out, [out, a, b, G, m, k, n](Adjoints& adj) {
        const std::vector<double>& gr = *adj.find(out.get());
        auto* da = adj.accum(a);
        auto* db = adj.accum(b);
#pragma omp parallel for schedule(static) if (G * m * k * n > 32768)
        for (std::int64_t g = 0; g < static_cast<std::int64_t>(G); ++g) {
            const double* pa = a->value.data() + g * m * k;
            const double* pb = b->value.data() + g * k * n;
            const double* pg = gr.data() + g * m * n;
            if (da) {
                double* pda = da->data() + g * m * k;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t t = 0; t < k; ++t) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += pg[i * n + j] * pb[t * n + j];
                        pda[i * k + t] += s;
                    }
            }
            if (db) {
                double* pdb = db->data() + g * k * n;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t t = 0; t < k; ++t) {
                        const double av = pa[i * k + t];
                        for (std::size_t j = 0; j < n; ++j) pdb[t * n + j] += av * pg[i * n + j];
                    }
            }
        }
    });
    return out;
}

// (G,m,k) x (G,n,k) -> (G,m,n), i.e. the second operand is used transposed.
inline TensorPtr bmm_nt(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() != 3 || b->shape.size() != 3 || a->shape[0] != b->shape[0] ||
        a->shape[2] != b->shape[2])
        fail_contract("bmm_nt: ", shape_str(a->shape), " x ", shape_str(b->shape));
    const std::size_t G = a->shape[0], m = a->shape[1], k = a->shape[2], n = b->shape[1];
    auto out = detail::make_out({G, m, n}, {&a, &b});
#pragma omp parallel for schedule(static) if (G * m * k * n > 32768)
    for (std::int64_t g = 0; g < static_cast<std::int64_t>(G); ++g) {
        const double* pa = a->value.data() + g * m * k;
        const double* pb = b->value.data() + g * n * k;
        double* po = out->value.data() + g * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t t = 0; t < k; ++t) s += pa[i * k + t] * pb[j * k + t];
                po[i * n + j] = s;
            }
    }
    tape.record(out, [out, a, b, G, m, k, n](Adjoints& adj) {
        const std::vector<double>& gr = *adj.find(out.get());
        auto* da = adj.accum(a);
        auto* db = adj.accum(b);
#pragma omp parallel for schedule(static) if (G * m * k * n > 32768)
        for (std::int64_t g = 0; g < static_cast<std::int64_t>(G); ++g) {
            const double* pa = a->value.data() + g * m * k;
            const double* pb = b->value.data() + g * n * k;
            const double* pg = gr.data() + g * m * n;
            if (da) {
                double* pda = da->data() + g * m * k;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gv = pg[i * n + j];
                        for (std::size_t t = 0; t < k; ++t) pda[i * k + t] += gv * pb[j * k + t];
                    }
            }
            if (db) {
                double* pdb = db->data() + g * n * k;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gv = pg[i * n + j];
                        for (std::size_t t = 0; t < k; ++t) pdb[j * k + t] += gv * pa[i * k + t];
                    }
            }
        }
    });
    return out;
}

// y = x + bias broadcast over the last dimension.
inline TensorPtr add_bias(Tape& tape, const TensorPtr& x, const TensorPtr& b) {
    if (x->shape.empty() || b->shape.size() != 1 || x->shape.back() != b->shape[0])
        fail_contract("add_bias: ", shape_str(x->shape), " + ", shape_str(b->shape));
    const std::size_t f = b->shape[0], rows = x->size() / f;
    auto out = detail::make_out(x->shape, {&x, &b});
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < f; ++j) out->value[i * f + j] = x->value[i * f + j] + b->value[j];
    tape.record(out, [out, x, b, rows, f](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (auto* dx = adj.accum(x))
            for (std::size_t i = 0; i < g->size(); ++i) (*dx)[i] += (*g)[i];
        if (auto* db = adj.accum(b))
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < f; ++j) (*db)[j] += (*g)[i * f + j];
    });
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline TensorPtr sum_all(Tape& tape, const TensorPtr& a) {
    auto out = detail::make_out({1}, {&a});
    double s = 0.0;
    for (double v : a->value) s += v;
    out->value[0] = s;
    tape.record(out, [out, a](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (auto* da = adj.accum(a))
            for (std::size_t i = 0; i < da->size(); ++i) (*da)[i] += (*g)[0];
    });
    return out;
}

inline TensorPtr mean_all(Tape& tape, const TensorPtr& a) {
    auto out = detail::make_out({1}, {&a});
    double s = 0.0;
    for (double v : a->value) s += v;
    const double inv = 1.0 / static_cast<double>(a->size());
    out->value[0] = s * inv;
    tape.record(out, [out, a, inv](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (auto* da = adj.accum(a))
            for (std::size_t i = 0; i < da->size(); ++i) (*da)[i] += (*g)[0] * inv;
    });
    return out;
}

// (..., F) -> (...): sum over the last dimension.
inline TensorPtr sum_lastdim(Tape& tape, const TensorPtr& a) {
    if (a->shape.size() < 2) fail_contract("sum_lastdim: need rank >= 2");
    const std::size_t f = a->shape.back(), rows = a->size() / f;
    Shape os(a->shape.begin(), a->shape.end() - 1);
    auto out = detail::make_out(std::move(os), {&a});
    for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < f; ++j) s += a->value[i * f + j];
        out->value[i] = s;
    }
    tape.record(out, [out, a, rows, f](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (auto* da = adj.accum(a))
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < f; ++j) (*da)[i * f + j] += (*g)[i];
    });
    return out;
}

// (..., L) -> (...): mean over the last dimension (global pooling over time).
inline TensorPtr mean_lastdim(Tape& tape, const TensorPtr& a) {
    auto s = sum_lastdim(tape, a);
    return scale(tape, s, 1.0 / static_cast<double>(a->shape.back()));
}

// ---------------------------------------------------------------------------
// normalization & probability
// ---------------------------------------------------------------------------

inline constexpr double kLayerNormEps = 1e-8;

// Normalize each length-F row to zero mean / unit variance, then apply the
// affine pair (gamma, beta).
inline TensorPtr layer_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gamma,
                            const TensorPtr& beta, double eps = kLayerNormEps) {
    if (x->shape.empty() || gamma->shape.size() != 1 || beta->shape.size() != 1 ||
        gamma->shape[0] != x->shape.back() || beta->shape[0] != x->shape.back())
        fail_contract("layer_norm: ", shape_str(x->shape), " with affine ",
                      shape_str(gamma->shape));
    const std::size_t f = x->shape.back(), rows = x->size() / f;
    auto out = detail::make_out(x->shape, {&x, &gamma, &beta});
    auto xhat = std::make_shared<std::vector<double>>(x->size());
    auto inv_sigma = std::make_shared<std::vector<double>>(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = x->value.data() + i * f;
        double mu = 0.0;
        for (std::size_t j = 0; j < f; ++j) mu += row[j];
        mu /= static_cast<double>(f);
        double var = 0.0;
        for (std::size_t j = 0; j < f; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(f);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[i] = is;
        for (std::size_t j = 0; j < f; ++j) {
            const double xh = (row[j] - mu) * is;
            (*xhat)[i * f + j] = xh;
            out->value[i * f + j] = gamma->value[j] * xh + beta->value[j];
        }
    }
    tape.record(out, [out, x, gamma, beta, xhat, inv_sigma, rows, f](Adjoints& adj) {
        const std::vector<double>& g = *adj.find(out.get());
        auto* dx = adj.accum(x);
        auto* dgamma = adj.accum(gamma);
        auto* dbeta = adj.accum(beta);
        for (std::size_t i = 0; i < rows; ++i) {
            const double* grow = g.data() + i * f;
            const double* xh = xhat->data() + i * f;
            if (dgamma)
                for (std::size_t j = 0; j < f; ++j) (*dgamma)[j] += grow[j] * xh[j];
            if (dbeta)
                for (std::size_t j = 0; j < f; ++j) (*dbeta)[j] += grow[j];
            if (dx) {
                double mean_gg = 0.0, mean_ggx = 0.0;
                for (std::size_t j = 0; j < f; ++j) {
                    const double gg = grow[j] * gamma->value[j];
                    mean_gg += gg;
                    mean_ggx += gg * xh[j];
                }
                mean_gg /= static_cast<double>(f);
                mean_ggx /= static_cast<double>(f);
                const double is = (*inv_sigma)[i];
                for (std::size_t j = 0; j < f; ++j) {
                    const double gg = grow[j] * gamma->value[j];
                    (*dx)[i * f + j] += (gg - mean_gg - xh[j] * mean_ggx) * is;
                }
            }
        }
    });
    return out;
}

// Layer norm over the channel axis of a (B,C,L) feature map, one slice per
// (b,l) position, with per-channel affine.
inline TensorPtr layer_norm_channels(Tape& tape, const TensorPtr& x, const TensorPtr& gamma,
                                     const TensorPtr& beta, double eps = kLayerNormEps) {
    if (x->shape.size() != 3 || gamma->shape.size() != 1 || gamma->shape[0] != x->shape[1] ||
        beta->shape != gamma->shape)
        fail_contract("layer_norm_channels: ", shape_str(x->shape), " with affine ",
                      shape_str(gamma->shape));
    const std::size_t B = x->shape[0], C = x->shape[1], L = x->shape[2];
    auto out = detail::make_out(x->shape, {&x, &gamma, &beta});
    auto xhat = std::make_shared<std::vector<double>>(x->size());
    auto inv_sigma = std::make_shared<std::vector<double>>(B * L);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l) {
            double mu = 0.0;
            for (std::size_t c = 0; c < C; ++c) mu += x->value[(b * C + c) * L + l];
            mu /= static_cast<double>(C);
            double var = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                const double d = x->value[(b * C + c) * L + l] - mu;
                var += d * d;
            }
            var /= static_cast<double>(C);
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv_sigma)[b * L + l] = is;
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t idx = (b * C + c) * L + l;
                const double xh = (x->value[idx] - mu) * is;
                (*xhat)[idx] = xh;
                out->value[idx] = gamma->value[c] * xh + beta->value[c];
            }
        }
    tape.record(out, [out, x, gamma, beta, xhat, inv_sigma, B, C, L](Adjoints& adj) {
        const std::vector<double>& g = *adj.find(out.get());
        auto* dx = adj.accum(x);
        auto* dgamma = adj.accum(gamma);
        auto* dbeta = adj.accum(beta);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t l = 0; l < L; ++l) {
                double mean_gg = 0.0, mean_ggx = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t idx = (b * C + c) * L + l;
                    const double gg = g[idx] * gamma->value[c];
                    mean_gg += gg;
                    mean_ggx += gg * (*xhat)[idx];
                    if (dgamma) (*dgamma)[c] += g[idx] * (*xhat)[idx];
                    if (dbeta) (*dbeta)[c] += g[idx];
                }
                if (!dx) continue;
                mean_gg /= static_cast<double>(C);
                mean_ggx /= static_cast<double>(C);
                const double is = (*inv_sigma)[b * L + l];
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t idx = (b * C + c) * L + l;
                    const double gg = g[idx] * gamma->value[c];
                    (*dx)[idx] += (gg - mean_gg - (*xhat)[idx] * mean_ggx) * is;
                }
            }
    });
    return out;
}

// Row-wise softmax over the last dimension.
inline TensorPtr softmax(Tape& tape, const TensorPtr& x) {
    if (x->shape.empty()) fail_contract("softmax: need rank >= 1");
    const std::size_t f = x->shape.back(), rows = x->size() / f;
    auto out = detail::make_out(x->shape, {&x});
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = x->value.data() + i * f;
        double mx = row[0];
        for (std::size_t j = 1; j < f; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < f; ++j) {
            out->value[i * f + j] = std::exp(row[j] - mx);
            z += out->value[i * f + j];
        }
        for (std::size_t j = 0; j < f; ++j) out->value[i * f + j] /= z;
    }
    tape.record(out, [out, x, rows, f](Adjoints& adj) {
        const std::vector<double>& g = *adj.find(out.get());
        if (auto* dx = adj.accum(x))
            for (std::size_t i = 0; i < rows; ++i) {
                const double* p = out->value.data() + i * f;
                const double* grow = g.data() + i * f;
                double dot = 0.0;
                for (std::size_t j = 0; j < f; ++j) dot += grow[j] * p[j];
                for (std::size_t j = 0; j < f; ++j) (*dx)[i * f + j] += p[j] * (grow[j] - dot);
            }
    });
    return out;
}

// Softmax over scores (G,S,S) restricted to columns j <= i; columns j > i are
// exactly zero, which makes position i independent of any later position.
inline TensorPtr causal_softmax(Tape& tape, const TensorPtr& x) {
    if (x->shape.size() != 3 || x->shape[1] != x->shape[2])
        fail_contract("causal_softmax: need (G,S,S), got ", shape_str(x->shape));
    const std::size_t G = x->shape[0], S = x->shape[1];
    auto out = detail::make_out(x->shape, {&x});
    for (std::size_t g = 0; g < G; ++g)
        for (std::size_t i = 0; i < S; ++i) {
            const double* row = x->value.data() + (g * S + i) * S;
            double* orow = out->value.data() + (g * S + i) * S;
            double mx = row[0];
            for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
            double z = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                orow[j] = std::exp(row[j] - mx);
                z += orow[j];
            }
            for (std::size_t j = 0; j <= i; ++j) orow[j] /= z;
        }
    tape.record(out, [out, x, G, S](Adjoints& adj) {
        const std::vector<double>& g = *adj.find(out.get());
        if (auto* dx = adj.accum(x))
            for (std::size_t gi = 0; gi < G; ++gi)
                for (std::size_t i = 0; i < S; ++i) {
                    const double* p = out->value.data() + (gi * S + i) * S;
                    const double* grow = g.data() + (gi * S + i) * S;
                    double dot = 0.0;
                    for (std::size_t j = 0; j <= i; ++j) dot += grow[j] * p[j];
                    for (std::size_t j = 0; j <= i; ++j)
                        (*dx)[(gi * S + i) * S + j] += p[j] * (grow[j] - dot);
                }
    });
    return out;
}

// Mean negative log-likelihood of integer labels under row-wise softmax.
inline TensorPtr cross_entropy(Tape& tape, const TensorPtr& logits,
                               const std::vector<std::int64_t>& labels) {
    if (logits->shape.size() != 2)
        fail_contract("cross_entropy: logits must be (N,V), got ", shape_str(logits->shape));
    const std::size_t n = logits->shape[0], v = logits->shape[1];
    if (labels.size() != n)
        fail_contract("cross_entropy: ", labels.size(), " labels for ", n, " rows");
    for (std::size_t i = 0; i < n; ++i)
        if (labels[i] < 0 || labels[i] >= static_cast<std::int64_t>(v))
            fail_contract("cross_entropy: label ", labels[i], " at row ", i, " outside [0,", v, ")");
    auto out = detail::make_out({1}, {&logits});
    auto probs = std::make_shared<std::vector<double>>(logits->size());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits->value.data() + i * v;
        double mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            (*probs)[i * v + j] = std::exp(row[j] - mx);
            z += (*probs)[i * v + j];
        }
        for (std::size_t j = 0; j < v; ++j) (*probs)[i * v + j] /= z;
        total -= std::log((*probs)[i * v + labels[i]]);
    }
    out->value[0] = total / static_cast<double>(n);
    tape.record(out, [out, logits, probs, labels, n, v](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (auto* dl = adj.accum(logits)) {
            const double coef = (*g)[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < v; ++j) {
                    double d = (*probs)[i * v + j];
                    if (static_cast<std::int64_t>(j) == labels[i]) d -= 1.0;
                    (*dl)[i * v + j] += coef * d;
                }
        }
    });
    return out;
}

// Rows scaled to unit L2 norm. Rows with tiny norm pass through unscaled
// direction-free (guarded denominator).
inline TensorPtr l2_normalize_rows(Tape& tape, const TensorPtr& x) {
    if (x->shape.size() != 2) fail_contract("l2_normalize_rows: need (N,F)");
    const std::size_t n = x->shape[0], f = x->shape[1];
    auto out = detail::make_out(x->shape, {&x});
    auto inv_norm = std::make_shared<std::vector<double>>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = x->value.data() + i * f;
        double s = 0.0;
        for (std::size_t j = 0; j < f; ++j) s += row[j] * row[j];
        const double r = std::max(std::sqrt(s), 1e-12);
        (*inv_norm)[i] = 1.0 / r;
        for (std::size_t j = 0; j < f; ++j) out->value[i * f + j] = row[j] / r;
    }
    tape.record(out, [out, x, inv_norm, n, f](Adjoints& adj) {
        const std::vector<double>& g = *adj.find(out.get());
        if (auto* dx = adj.accum(x))
            for (std::size_t i = 0; i < n; ++i) {
                const double* y = out->value.data() + i * f;
                const double* grow = g.data() + i * f;
                double dot = 0.0;
                for (std::size_t j = 0; j < f; ++j) dot += grow[j] * y[j];
                const double is = (*inv_norm)[i];
                for (std::size_t j = 0; j < f; ++j)
                    (*dx)[i * f + j] += (grow[j] - y[j] * dot) * is;
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// lookup / conv / resize
// ---------------------------------------------------------------------------

inline TensorPtr embedding(Tape& tape, const TensorPtr& table,
                           const std::vector<std::int64_t>& ids) {
    if (table->shape.size() != 2) fail_contract("embedding: table must be (R,F)");
    const std::size_t r = table->shape[0], f = table->shape[1], n = ids.size();
    for (std::size_t i = 0; i < n; ++i)
        if (ids[i] < 0 || ids[i] >= static_cast<std::int64_t>(r))
            fail_contract("embedding: index ", ids[i], " at position ", i, " outside [0,", r, ")");
    auto out = detail::make_out({n, f}, {&table});
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(table->value.data() + ids[i] * f, f, out->value.data() + i * f);
    tape.record(out, [out, table, ids, f](Adjoints& adj) {
        const std::vector<double>& g = *adj.find(out.get());
        if (auto* dt = adj.accum(table))
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = 0; j < f; ++j) (*dt)[ids[i] * f + j] += g[i * f + j];
    });
    return out;
}

// 1D convolution on (B,Cin,L) with weight (Cout,Cin,K) and optional bias.
// Separate left/right padding; symmetric padding is the common case, left-only
// padding gives a causal layer.
inline TensorPtr conv1d(Tape& tape, const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias,
                        std::size_t stride, std::size_t pad_l, std::size_t pad_r,
                        std::size_t dilation) {
    if (x->shape.size() != 3 || w->shape.size() != 3 || x->shape[1] != w->shape[1])
        fail_contract("conv1d: x ", shape_str(x->shape), " w ", shape_str(w->shape));
    if (stride == 0 || dilation == 0) fail_contract("conv1d: stride/dilation must be positive");
    const std::size_t B = x->shape[0], Cin = x->shape[1], L = x->shape[2];
    const std::size_t Cout = w->shape[0], K = w->shape[2];
    const std::int64_t span = static_cast<std::int64_t>(L + pad_l + pad_r) -
                              static_cast<std::int64_t>(dilation * (K - 1)) - 1;
    if (span < 0) fail_contract("conv1d: kernel does not fit input of length ", L);
    const std::size_t Lout = static_cast<std::size_t>(span) / stride + 1;
    if (bias && (bias->shape.size() != 1 || bias->shape[0] != Cout))
        fail_contract("conv1d: bias shape ", shape_str(bias->shape));

    auto out = bias ? detail::make_out({B, Cout, Lout}, {&x, &w, &bias})
                    : detail::make_out({B, Cout, Lout}, {&x, &w});
    const double* px = x->value.data();
    const double* pw = w->value.data();
    double* po = out->value.data();
#pragma omp parallel for schedule(static) if (B * Cout * Lout * Cin * K > 16384)
    for (std::int64_t bo = 0; bo < static_cast<std::int64_t>(B * Cout); ++bo) {
        const std::size_t b = bo / Cout, oc = bo % Cout;
        for (std::size_t ol = 0; ol < Lout; ++ol) {
            double s = bias ? bias->value[oc] : 0.0;
            const std::int64_t base = static_cast<std::int64_t>(ol * stride) -
                                      static_cast<std::int64_t>(pad_l);
            for (std::size_t ic = 0; ic < Cin; ++ic) {
                const double* xrow = px + (b * Cin + ic) * L;
                const double* wrow = pw + (oc * Cin + ic) * K;
                for (std::size_t kk = 0; kk < K; ++kk) {
                    const std::int64_t il = base + static_cast<std::int64_t>(kk * dilation);
                    if (il >= 0 && il < static_cast<std::int64_t>(L)) s += xrow[il] * wrow[kk];
                }
            }
            po[(b * Cout + oc) * Lout + ol] = s;
        }
    }
    tape.record(out, [out, x, w, bias, B, Cin, L, Cout, K, Lout, stride, pad_l,
                      dilation](Adjoints& adj) {
        const std::vector<double>& g = *adj.find(out.get());
        if (auto* dx = adj.accum(x)) {
            double* pdx = dx->data();
#pragma omp parallel for schedule(static) if (B * Cout * Lout * Cin * K > 16384)
            for (std::int64_t bi = 0; bi < static_cast<std::int64_t>(B * Cin); ++bi) {
                const std::size_t b = bi / Cin, ic = bi % Cin;
                for (std::size_t il = 0; il < L; ++il) {
                    double s = 0.0;
                    for (std::size_t kk = 0; kk < K; ++kk) {
                        const std::int64_t num = static_cast<std::int64_t>(il + pad_l) -
                                                 static_cast<std::int64_t>(kk * dilation);
                        if (num < 0 || num % static_cast<std::int64_t>(stride) != 0) continue;
                        const std::int64_t ol = num / static_cast<std::int64_t>(stride);
                        if (ol >= static_cast<std::int64_t>(Lout)) continue;
                        for (std::size_t oc = 0; oc < Cout; ++oc)
                            s += w->value[(oc * Cin + ic) * K + kk] *
                                 g[(b * Cout + oc) * Lout + ol];
                    }
                    pdx[(b * Cin + ic) * L + il] += s;
                }
            }
        }
        if (auto* dw = adj.accum(w)) {
            double* pdw = dw->data();
#pragma omp parallel for schedule(static) if (B * Cout * Lout * Cin * K > 16384)
            for (std::int64_t oc = 0; oc < static_cast<std::int64_t>(Cout); ++oc)
                for (std::size_t ic = 0; ic < Cin; ++ic)
                    for (std::size_t kk = 0; kk < K; ++kk) {
                        double s = 0.0;
                        for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t ol = 0; ol < Lout; ++ol) {
                                const std::int64_t il =
                                    static_cast<std::int64_t>(ol * stride) -
                                    static_cast<std::int64_t>(pad_l) +
                                    static_cast<std::int64_t>(kk * dilation);
                                if (il < 0 || il >= static_cast<std::int64_t>(L)) continue;
                                s += x->value[(b * Cin + ic) * L + il] *
                                     g[(b * Cout + oc) * Lout + ol];
                            }
                        pdw[(oc * Cin + ic) * K + kk] += s;
                    }
        }
        if (bias) {
            if (auto* db = adj.accum(bias))
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t oc = 0; oc < Cout; ++oc)
                        for (std::size_t ol = 0; ol < Lout; ++ol)
                            (*db)[oc] += g[(b * Cout + oc) * Lout + ol];
        }
    });
    return out;
}

// (B,C,L) -> (B*L, C): one row per time step, for row-wise ops on frames.
inline TensorPtr channels_to_rows(Tape& tape, const TensorPtr& x) {
    if (x->shape.size() != 3) fail_contract("channels_to_rows: need (B,C,L)");
    const std::size_t B = x->shape[0], C = x->shape[1], L = x->shape[2];
    auto out = detail::make_out({B * L, C}, {&x});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t l = 0; l < L; ++l)
                out->value[(b * L + l) * C + c] = x->value[(b * C + c) * L + l];
    tape.record(out, [out, x, B, C, L](Adjoints& adj) {
        const std::vector<double>& g = *adj.find(out.get());
        if (auto* dx = adj.accum(x))
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t l = 0; l < L; ++l)
                        (*dx)[(b * C + c) * L + l] += g[(b * L + l) * C + c];
    });
    return out;
}

// (B*L, C) -> (B,C,L): inverse of channels_to_rows.
inline TensorPtr rows_to_channels(Tape& tape, const TensorPtr& x, std::size_t B, std::size_t L) {
    if (x->shape.size() != 2 || x->shape[0] != B * L)
        fail_contract("rows_to_channels: need (B*L,C) with B*L=", B * L, ", got ",
                      shape_str(x->shape));
    const std::size_t C = x->shape[1];
    auto out = detail::make_out({B, C, L}, {&x});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t l = 0; l < L; ++l)
                out->value[(b * C + c) * L + l] = x->value[(b * L + l) * C + c];
    tape.record(out, [out, x, B, C, L](Adjoints& adj) {
        const std::vector<double>& g = *adj.find(out.get());
        if (auto* dx = adj.accum(x))
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t l = 0; l < L; ++l)
                        (*dx)[(b * L + l) * C + c] += g[(b * C + c) * L + l];
    });
    return out;
}

// Nearest-neighbour 2x upsampling along time: each frame is duplicated.
inline TensorPtr upsample_nearest2(Tape& tape, const TensorPtr& x) {
    if (x->shape.size() != 3) fail_contract("upsample_nearest2: need (B,C,L)");
    const std::size_t B = x->shape[0], C = x->shape[1], L = x->shape[2];
    auto out = detail::make_out({B, C, 2 * L}, {&x});
    for (std::size_t r = 0; r < B * C; ++r)
        for (std::size_t l = 0; l < L; ++l) {
            const double v = x->value[r * L + l];
            out->value[r * 2 * L + 2 * l] = v;
            out->value[r * 2 * L + 2 * l + 1] = v;
        }
    tape.record(out, [out, x, B, C, L](Adjoints& adj) {
        const std::vector<double>& g = *adj.find(out.get());
        if (auto* dx = adj.accum(x))
            for (std::size_t r = 0; r < B * C; ++r)
                for (std::size_t l = 0; l < L; ++l)
                    (*dx)[r * L + l] += g[r * 2 * L + 2 * l] + g[r * 2 * L + 2 * l + 1];
    });
    return out;
}

// Inverted dropout; pass rate 0 (or call nothing) for inference.
inline TensorPtr dropout(Tape& tape, const TensorPtr& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) fail_contract("dropout: rate must be in [0,1), got ", rate);
    if (rate == 0.0) return x;
    auto mask = std::make_shared<std::vector<double>>(x->size());
    const double keep = 1.0 - rate;
    for (std::size_t i = 0; i < x->size(); ++i)
        (*mask)[i] = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    auto out = detail::make_out(x->shape, {&x});
    for (std::size_t i = 0; i < x->size(); ++i) out->value[i] = x->value[i] * (*mask)[i];
    tape.record(out, [out, x, mask](Adjoints& adj) {
        const auto* g = adj.find(out.get());
        if (auto* dx = adj.accum(x))
            for (std::size_t i = 0; i < g->size(); ++i) (*dx)[i] += (*g)[i] * (*mask)[i];
    });
    return out;
}

}  // namespace msd
