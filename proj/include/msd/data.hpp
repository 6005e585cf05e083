#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "msd/rng.hpp"
#include "msd/tensor.hpp"

namespace msd {

// One window is tau*d doubles, row-major (t, feature).
struct Window {
    std::vector<double> values;
};

// Per-feature min-max map to [0,1], fitted on training windows only.
// Constant features map to 0 by convention.
class Normalizer {
public:
    std::vector<double> min, max;

    bool fitted() const { return !min.empty(); }

    void fit(const std::vector<Window>& windows, std::size_t tau, std::size_t dims) {
        min.assign(dims, std::numeric_limits<double>::infinity());
        max.assign(dims, -std::numeric_limits<double>::infinity());
        for (const auto& w : windows)
            for (std::size_t t = 0; t < tau; ++t)
                for (std::size_t f = 0; f < dims; ++f) {
                    const double v = w.values[t * dims + f];
                    min[f] = std::min(min[f], v);
                    max[f] = std::max(max[f], v);
                }
    }

    double transform_value(double v, std::size_t f) const {
        const double range = max[f] - min[f];
        if (range == 0.0) return 0.0;
        return (v - min[f]) / range;
    }

    double inverse_value(double v, std::size_t f) const {
        const double range = max[f] - min[f];
        if (range == 0.0) return min[f];
        return v * range + min[f];
    }

    void transform(std::vector<double>& values, std::size_t dims) const {
        check_fitted();
        for (std::size_t i = 0; i < values.size(); ++i)
            values[i] = transform_value(values[i], i % dims);
    }

    void inverse(std::vector<double>& values, std::size_t dims) const {
        check_fitted();
        for (std::size_t i = 0; i < values.size(); ++i)
            values[i] = inverse_value(values[i], i % dims);
    }

private:
    void check_fitted() const {
        if (!fitted()) throw StateError("normalizer used before fit");
    }
};

struct TimeSeriesDataset {
    std::size_t tau = 0, dims = 0;
    std::vector<std::string> feature_names;
    std::vector<Window> windows;
    bool normalized = false;
    Normalizer normalizer;

    std::size_t size() const { return windows.size(); }

    // First 90% (by window index, before any shuffling) trains; the tail is
    // held out for metrics.
    std::size_t train_count() const { return windows.size() - windows.size() / 10; }

    TensorPtr window_tensor(std::size_t i) const {
        return tensor({tau, dims}, windows[i].values);
    }

    // Fit min-max on the training split and map every window to [0,1].
    void normalize() {
        if (normalized) return;
        std::vector<Window> train(windows.begin(), windows.begin() + train_count());
        normalizer.fit(train, tau, dims);
        for (auto& w : windows) normalizer.transform(w.values, dims);
        normalized = true;
    }
};

// Sliding windows of length tau over the rows of a numeric CSV with header.
inline TimeSeriesDataset load_csv(const std::string& path, std::size_t tau, std::size_t stride = 1) {
    if (tau == 0 || stride == 0) fail_config("load_csv: tau and stride must be positive");
    std::ifstream in(path);
    if (!in) throw DependencyError("cannot open CSV file: " + path);

    TimeSeriesDataset ds;
    ds.tau = tau;

    std::string line;
    if (!std::getline(in, line)) fail_config("load_csv: empty file ", path);
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) ds.feature_names.push_back(cell);
    }
    ds.dims = ds.feature_names.size();
    if (ds.dims == 0) fail_config("load_csv: no columns in header of ", path);

    std::vector<double> rows;
    std::size_t row_index = 1;
    while (std::getline(in, line)) {
        ++row_index;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            ++col;
            try {
                std::size_t pos = 0;
                const double v = std::stod(cell, &pos);
                if (pos != cell.size()) throw std::invalid_argument(cell);
                rows.push_back(v);
            } catch (const std::exception&) {
                fail_config("load_csv: non-numeric cell '", cell, "' at row ", row_index,
                            ", column ", col, " of ", path);
            }
        }
        if (col != ds.dims)
            fail_config("load_csv: row ", row_index, " has ", col, " cells, expected ", ds.dims);
    }
    const std::size_t n_rows = rows.size() / ds.dims;
    if (n_rows < tau)
        fail_config("load_csv: ", n_rows, " data rows but window length is ", tau);

    const std::size_t n_windows = (n_rows - tau) / stride + 1;
    for (std::size_t w = 0; w < n_windows; ++w) {
        Window win;
        win.values.assign(rows.begin() + static_cast<std::ptrdiff_t>(w * stride * ds.dims),
                          rows.begin() + static_cast<std::ptrdiff_t>((w * stride + tau) * ds.dims));
        ds.windows.push_back(std::move(win));
    }
    return ds;
}

// One sinusoid sample: sin(2*pi*eta*t + theta) for t = 0..tau-1.
inline void fill_sine(std::vector<double>& values, std::size_t tau, std::size_t dims,
                      std::size_t feature, double eta, double theta) {
    constexpr double two_pi = 2.0 * 3.14159265358979323846;
    for (std::size_t t = 0; t < tau; ++t)
        values[t * dims + feature] = std::sin(two_pi * eta * static_cast<double>(t) + theta);
}

// n windows of d independent sinusoids with frequency eta ~ U[0,1] and phase
// theta ~ U[-pi,pi], drawn fresh per (window, feature).
inline TimeSeriesDataset gen_sines(std::size_t n, std::size_t tau, std::size_t dims,
                                   std::uint64_t seed) {
    if (n == 0 || tau == 0 || dims == 0) fail_config("gen_sines: n, tau, dims must be positive");
    constexpr double pi = 3.14159265358979323846;
    TimeSeriesDataset ds;
    ds.tau = tau;
    ds.dims = dims;
    for (std::size_t f = 0; f < dims; ++f) ds.feature_names.push_back("f" + std::to_string(f));
    Rng rng(derive_seed(seed, "sines"));
    for (std::size_t i = 0; i < n; ++i) {
        Window w;
        w.values.assign(tau * dims, 0.0);
        for (std::size_t f = 0; f < dims; ++f) {
            const double eta = rng.uniform();
            const double theta = rng.uniform(-pi, pi);
            fill_sine(w.values, tau, dims, f, eta, theta);
        }
        ds.windows.push_back(std::move(w));
    }
    return ds;
}

// Uniform [0,1] windows, used as the separable baseline in metrics.
inline TimeSeriesDataset gen_white_noise(std::size_t n, std::size_t tau, std::size_t dims,
                                         std::uint64_t seed) {
    TimeSeriesDataset ds;
    ds.tau = tau;
    ds.dims = dims;
    for (std::size_t f = 0; f < dims; ++f) ds.feature_names.push_back("f" + std::to_string(f));
    ds.normalized = true;
    Rng rng(derive_seed(seed, "white_noise"));
    for (std::size_t i = 0; i < n; ++i) {
        Window w;
        w.values.resize(tau * dims);
        for (auto& v : w.values) v = rng.uniform();
        ds.windows.push_back(std::move(w));
    }
    return ds;
}

}  // namespace msd
