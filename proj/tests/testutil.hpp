#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "nvp/flow_model.hpp"
#include "nvp/random.hpp"

// Test-only oracles: finite differences, a numerical Jacobian with dense
// log|det| via Gaussian elimination, KS statistics, quadrature. These stay
// independent of the library's autodiff and log-det paths.
namespace nvptest {

using nvp::FlowModel;
using nvp::Shape;
using nvp::Tensor;

inline double rel_err(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central finite-difference gradient of a scalar function with respect to x.
// f() must read the current contents of x.
inline Tensor fd_gradient(const std::function<double()>& f, Tensor& x, double h = 1e-5) {
    Tensor g(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        const nvp::real_t saved = x[i];
        x[i] = static_cast<nvp::real_t>(saved + h);
        const double fp = f();
        x[i] = static_cast<nvp::real_t>(saved - h);
        const double fm = f();
        x[i] = saved;
        g[i] = static_cast<nvp::real_t>((fp - fm) / (2 * h));
    }
    return g;
}

// Dense Jacobian J[i][j] = d out_i / d x_j of a flattened vector map.
inline std::vector<double> fd_jacobian(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                       double h = 1e-5) {
    const Tensor base = f(x);
    const int64_t m = base.numel();
    const int64_t n = x.numel();
    std::vector<double> jac(static_cast<size_t>(m * n));
    for (int64_t j = 0; j < n; ++j) {
        const nvp::real_t saved = x[j];
        x[j] = static_cast<nvp::real_t>(saved + h);
        Tensor fp = f(x);
        x[j] = static_cast<nvp::real_t>(saved - h);
        Tensor fm = f(x);
        x[j] = saved;
        for (int64_t i = 0; i < m; ++i) {
            jac[static_cast<size_t>(i * n + j)] = (fp[i] - fm[i]) / (2 * h);
        }
    }
    return jac;
}

// log|det A| for a dense n x n matrix via Gaussian elimination with partial
// pivoting.
inline double log_abs_det(std::vector<double> a, int64_t n) {
    double log_det = 0;
    for (int64_t k = 0; k < n; ++k) {
        int64_t piv = k;
        for (int64_t i = k + 1; i < n; ++i) {
            if (std::abs(a[static_cast<size_t>(i * n + k)]) >
                std::abs(a[static_cast<size_t>(piv * n + k)])) {
                piv = i;
            }
        }
        const double p = a[static_cast<size_t>(piv * n + k)];
        if (p == 0) return -std::numeric_limits<double>::infinity();
        if (piv != k) {
            for (int64_t j = 0; j < n; ++j) {
                std::swap(a[static_cast<size_t>(k * n + j)], a[static_cast<size_t>(piv * n + j)]);
            }
        }
        log_det += std::log(std::abs(p));
        for (int64_t i = k + 1; i < n; ++i) {
            const double factor = a[static_cast<size_t>(i * n + k)] / p;
            for (int64_t j = k; j < n; ++j) {
                a[static_cast<size_t>(i * n + j)] -= factor * a[static_cast<size_t>(k * n + j)];
            }
        }
    }
    return log_det;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Kolmogorov-Smirnov distance of samples against the standard normal.
inline double ks_statistic_normal(std::vector<double> samples) {
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
        const double cdf = normal_cdf(samples[i]);
        d = std::max(d, std::abs(cdf - static_cast<double>(i) / n));
        d = std::max(d, std::abs(cdf - static_cast<double>(i + 1) / n));
    }
    return d;
}

// KS distance between an empirical integer-valued sample and an exact CDF
// evaluated at each integer value.
inline double ks_statistic_discrete(const std::vector<int>& values,
                                    const std::function<double(int)>& exact_cdf, int max_value) {
    std::vector<int64_t> counts(static_cast<size_t>(max_value + 1), 0);
    for (int v : values) counts[static_cast<size_t>(std::clamp(v, 0, max_value))]++;
    double d = 0;
    double acc = 0;
    const double n = static_cast<double>(values.size());
    for (int v = 0; v <= max_value; ++v) {
        acc += static_cast<double>(counts[static_cast<size_t>(v)]) / n;
        d = std::max(d, std::abs(acc - exact_cdf(v)));
    }
    return d;
}

// Adds seeded noise to every model parameter (and jiggles the running batch
// statistics) so tests exercise a non-identity bijection.
inline void randomize_model(FlowModel& model, uint64_t seed, double scale) {
    nvp::Rng rng(seed);
    std::vector<nvp::Parameter*> params;
    model.collect_params(params);
    for (nvp::Parameter* p : params) {
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            p->value[i] += static_cast<nvp::real_t>(scale * rng.normal());
        }
    }
    std::vector<nvp::BatchNorm*> norms;
    model.collect_norms(norms);
    for (nvp::BatchNorm* bn : norms) {
        for (int64_t i = 0; i < bn->running_mean().numel(); ++i) {
            bn->running_mean()[i] += static_cast<nvp::real_t>(scale * rng.normal());
            bn->running_var()[i] *=
                static_cast<nvp::real_t>(std::exp(0.5 * scale * rng.normal()));
        }
    }
}

// Trapezoid quadrature of f over [lo,hi]^2 with the given step.
inline double trapezoid2d(const std::function<double(double, double)>& f, double lo, double hi,
                          double step) {
    const int64_t n = static_cast<int64_t>(std::round((hi - lo) / step));
    double acc = 0;
    for (int64_t i = 0; i <= n; ++i) {
        const double wy = (i == 0 || i == n) ? 0.5 : 1.0;
        const double y = lo + static_cast<double>(i) * step;
        for (int64_t j = 0; j <= n; ++j) {
            const double wx = (j == 0 || j == n) ? 0.5 : 1.0;
            acc += wx * wy * f(lo + static_cast<double>(j) * step, y);
        }
    }
    return acc * step * step;
}

}  // namespace nvptest
