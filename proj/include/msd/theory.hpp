#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "msd/common.hpp"
#include "msd/tensor.hpp"

namespace msd {
namespace theory {

// Bits needed to index a length-L sequence over a size-V codebook: L*log2(V).
inline double rate(std::size_t L, std::size_t V) {
    if (L < 1) fail_contract("rate: L must be >= 1");
    if (V < 2) fail_contract("rate: V must be >= 2");
    return static_cast<double>(L) * std::log2(static_cast<double>(V));
}

// Smallest codebook size whose rate reaches the target: ceil(2^(target/L)),
// with an integer walk around the floating-point ceiling so exact powers of
// two land on the boundary. A zero target degenerates to V*=1, below the
// V >= 2 needed for actual coding.
inline std::size_t min_codebook_size(double target_rate, std::size_t L) {
    if (target_rate < 0.0) fail_contract("min_codebook_size: target must be >= 0");
    if (L < 1) fail_contract("min_codebook_size: L must be >= 1");
    if (target_rate == 0.0) return 1;
    const double exponent = target_rate / static_cast<double>(L);
    if (exponent > 40.0)
        fail_contract("min_codebook_size: target implies a codebook beyond 2^40 entries");
    auto rate_of = [L](std::size_t V) {
        return static_cast<double>(L) * std::log2(static_cast<double>(V));
    };
    auto candidate = static_cast<std::size_t>(std::ceil(std::exp2(exponent)));
    if (candidate < 2) candidate = 2;
    // the float ceiling can be off by one near exact powers; walk to the boundary
    while (candidate > 2 && rate_of(candidate - 1) >= target_rate) --candidate;
    while (rate_of(candidate) < target_rate) ++candidate;
    return candidate;
}

// Rate after enlarging a single scale's codebook from V to V+V'.
inline double rate_single_expand(std::size_t L, std::size_t V, std::size_t Vp) {
    if (L < 1 || V < 1) fail_contract("rate_single_expand: L and V must be positive");
    return static_cast<double>(L) * std::log2(static_cast<double>(V + Vp));
}

// Rate after adding a second scale with codebook V' and L' extra tokens.
inline double rate_multi(std::size_t L, std::size_t V, std::size_t Lp, std::size_t Vp) {
    if (L < 1 || V < 2) fail_contract("rate_multi: need L >= 1 and V >= 2");
    double r = static_cast<double>(L) * std::log2(static_cast<double>(V));
    if (Lp > 0) {
        if (Vp < 2) fail_contract("rate_multi: V' must be >= 2 when L' > 0");
        r += static_cast<double>(Lp) * std::log2(static_cast<double>(Vp));
    }
    return r;
}

// One comparison point: base (L,V) plus an expansion (L',V').
struct RateCase {
    std::size_t L = 0, V = 0, Lp = 0, Vp = 0;
};

struct RateRow {
    RateCase c;
    double rate_single = 0.0;
    double rate_multi = 0.0;
    bool multi_higher = false;
};

struct ExcludedCase {
    RateCase c;
    std::string reason;
};

struct RateReport {
    std::vector<RateRow> rows;
    std::vector<ExcludedCase> excluded;
    bool all_multi_higher = true;
};

// Admissibility of a comparison: V and V' within [2^7, 2^10], both ratios
// V'/V and L'/L within [1/4, 4], and the ratios on the same side of 1.
inline std::string admissibility_failure(const RateCase& c) {
    if (c.L < 1 || c.Lp < 1) return "L and L' must be >= 1";
    if (c.V < 128 || c.V > 1024) return "V outside [128,1024]";
    if (c.Vp < 128 || c.Vp > 1024) return "V' outside [128,1024]";
    const double vr = static_cast<double>(c.Vp) / static_cast<double>(c.V);
    const double lr = static_cast<double>(c.Lp) / static_cast<double>(c.L);
    if (vr < 0.25 || vr > 4.0) return "V'/V outside [1/4,4]";
    if (lr < 0.25 || lr > 4.0) return "L'/L outside [1/4,4]";
    const bool v_up = c.Vp >= c.V, v_down = c.Vp <= c.V;
    const bool l_up = c.Lp >= c.L, l_down = c.Lp <= c.L;
    if (!((v_up && l_up) || (v_down && l_down)))
        return "V'/V and L'/L must point the same way";
    return "";
}

inline RateReport compare_rates(const std::vector<RateCase>& cases) {
    RateReport report;
    for (const RateCase& c : cases) {
        const std::string why = admissibility_failure(c);
        if (!why.empty()) {
            report.excluded.push_back({c, why});
            continue;
        }
        RateRow row;
        row.c = c;
        row.rate_single = rate_single_expand(c.L, c.V, c.Vp);
        row.rate_multi = rate_multi(c.L, c.V, c.Lp, c.Vp);
        row.multi_higher = row.rate_multi > row.rate_single;
        report.all_multi_higher = report.all_multi_higher && row.multi_higher;
        report.rows.push_back(row);
    }
    return report;
}

// The full admissible grid: V, V' over the power-of-two sizes, L in [4,64],
// L' spanning the allowed ratio band in the matching direction.
inline std::vector<RateCase> default_sweep() {
    const std::size_t sizes[] = {128, 256, 512, 1024};
    std::vector<RateCase> cases;
    for (std::size_t V : sizes)
        for (std::size_t Vp : sizes) {
            const double vr = static_cast<double>(Vp) / static_cast<double>(V);
            if (vr < 0.25 || vr > 4.0) continue;
            for (std::size_t L = 4; L <= 64; ++L) {
                const std::size_t lo = (L + 3) / 4, hi = 4 * L;
                for (std::size_t Lp = lo; Lp <= hi; ++Lp) {
                    const bool v_up = Vp >= V, v_down = Vp <= V;
                    if ((v_up && Lp >= L) || (v_down && Lp <= L))
                        cases.push_back({L, V, Lp, Vp});
                }
            }
        }
    return cases;
}

// Window mean squared error: (1/tau) * sum_t |x_t - y_t|^2.
inline double distortion(const TensorPtr& x, const TensorPtr& y) {
    if (x->shape != y->shape || x->shape.size() != 2)
        fail_contract("distortion: need equal (tau,d) shapes, got ", shape_str(x->shape), " vs ",
                      shape_str(y->shape));
    const std::size_t tau = x->shape[0];
    double total = 0.0;
    for (std::size_t i = 0; i < x->size(); ++i) {
        const double d = x->value[i] - y->value[i];
        total += d * d;
    }
    return total / static_cast<double>(tau);
}

}  // namespace theory
}  // namespace msd
