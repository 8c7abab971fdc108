#pragma once

#include <algorithm>
#include <cmath>
#include <iterator>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bridgefov/image.hpp"
#include "bridgefov/rng.hpp"

namespace bridgefov {

// Model units: HU window [-1000, 2000] mapped affinely onto [-1, 1].
inline constexpr double kModelHuLow = -1000.0;
inline constexpr double kModelHuHigh = 2000.0;

inline double hu_to_model(double hu) {
    const double clamped = std::clamp(hu, kModelHuLow, kModelHuHigh);
    return 2.0 * (clamped - kModelHuLow) / (kModelHuHigh - kModelHuLow) - 1.0;
}
inline double model_to_hu(double m) { return kModelHuLow + 0.5 * (m + 1.0) * (kModelHuHigh - kModelHuLow); }

inline Image hu_to_model(const Image& img) {
    Image out = img;
    for (auto& v : out.values) v = hu_to_model(v);
    return out;
}
inline Image model_to_hu(const Image& img) {
    Image out = img;
    for (auto& v : out.values) v = model_to_hu(v);
    return out;
}

/// Discrete bridge schedule with zero drift. Index k runs over 0..K;
/// beta[0] is unused and zero.
struct Schedule {
    int K = 0;
    std::vector<double> beta;
    std::vector<double> sigma2;
    std::vector<double> sigma_bar2;
    std::vector<double> alpha2;

    [[nodiscard]] double total() const { return sigma2[K]; }
    [[nodiscard]] double sigma(int k) const { return std::sqrt(sigma2[k]); }

    void require_step(int k, const char* what) const {
        if (k < 0 || k > K) throw std::invalid_argument(std::string(what) + ": timestep out of range");
    }
};

/// Symmetric piecewise-linear schedule: beta_min/K at both ends, beta_max/K at K/2.
inline Schedule make_schedule(int K, double beta_max, double beta_min) {
    if (K < 2 || K % 2 != 0) throw std::invalid_argument("make_schedule: K must be even and >= 2");
    if (!(beta_min > 0.0) || beta_max < beta_min) throw std::invalid_argument("make_schedule: need 0 < beta_min <= beta_max");
    Schedule s;
    s.K = K;
    s.beta.assign(K + 1, 0.0);
    const int half = K / 2;
    for (int k = 1; k <= half; ++k) {
        const double frac = half > 1 ? static_cast<double>(k - 1) / (half - 1) : 1.0;
        s.beta[k] = (beta_min + (beta_max - beta_min) * frac) / K;
    }
    for (int k = half + 1; k <= K; ++k) s.beta[k] = s.beta[K + 1 - k];

    s.sigma2.assign(K + 1, 0.0);
    for (int k = 1; k <= K; ++k) s.sigma2[k] = s.sigma2[k - 1] + s.beta[k];
    s.sigma_bar2.resize(K + 1);
    const double total = s.sigma2[K];
    for (int k = 0; k <= K; ++k) {
        // Pick sigma_bar2 so that sigma2[k] + sigma_bar2[k] reproduces the total bit
        // for bit. When the sum lands on a rounding tie no neighbour works, so
        // sigma2[k] itself moves by one ulp (far below the accumulation error).
        for (int attempt = 0;; ++attempt) {
            const double fwd = s.sigma2[k];
            const double bar = total - fwd;
            const double candidates[] = {bar, std::nextafter(bar, 0.0), std::nextafter(bar, total + 1.0)};
            const double* hit = std::find_if(std::begin(candidates), std::end(candidates),
                                             [&](double c) { return fwd + c == total; });
            if (hit != std::end(candidates)) {
                s.sigma_bar2[k] = *hit;
                break;
            }
            if (attempt == 4) throw std::logic_error("make_schedule: cannot close the variance identity");
            s.sigma2[k] = std::nextafter(fwd, 0.0);
        }
    }
    s.alpha2 = s.beta;
    return s;
}

/// Coefficients of q(x_k | x0, x1) = N(w0 x0 + w1 x1, var).
struct MarginalCoefficients {
    double w0, w1, var;
};

inline MarginalCoefficients marginal_coefficients(const Schedule& s, int k) {
    s.require_step(k, "marginal");
    const double fwd = s.sigma2[k], bwd = s.sigma_bar2[k];
    const double denom = fwd + bwd;
    return {bwd / denom, fwd / denom, fwd * bwd / denom};
}

inline Image marginal_sample(const Schedule& s, const Image& x0, const Image& x1, int k, std::uint64_t seed) {
    require_same_grid(x0, x1, "marginal_sample");
    const auto c = marginal_coefficients(s, k);
    Image out(x0.grid);
    const double sd = std::sqrt(c.var);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = c.w0 * x0.values[i] + c.w1 * x1.values[i];
        if (sd > 0.0) v += sd * standard_normal(derive_seed(seed, i));
        out.values[i] = v;
    }
    return out;
}

/// (x_k - x0) / sigma_k.
inline Image training_target(const Image& x0, const Image& xk, const Schedule& s, int k) {
    require_same_grid(x0, xk, "training_target");
    s.require_step(k, "training_target");
    if (k == 0) throw std::invalid_argument("training_target: k must be >= 1");
    const double sig = s.sigma(k);
    Image out(x0.grid);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = (xk.values[i] - x0.values[i]) / sig;
    return out;
}

/// x_k - sigma_k eps.
inline Image predict_x0(const Image& xk, const Image& eps, const Schedule& s, int k) {
    require_same_grid(xk, eps, "predict_x0");
    s.require_step(k, "predict_x0");
    if (k == 0) throw std::invalid_argument("predict_x0: k must be >= 1");
    const double sig = s.sigma(k);
    Image out(xk.grid);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = xk.values[i] - sig * eps.values[i];
    return out;
}

/// p(x_prev | x0_hat, x_k) = N(a x0_hat + b x_k, var) for k_prev < k, with
/// a = alpha^2 / sigma_k^2, b = sigma_prev^2 / sigma_k^2, alpha^2 = sigma_k^2 - sigma_prev^2.
struct PosteriorCoefficients {
    double a, b, var;
};

inline PosteriorCoefficients posterior_coefficients(const Schedule& s, int k_prev, int k) {
    s.require_step(k, "posterior_step");
    s.require_step(k_prev, "posterior_step");
    if (k_prev >= k) throw std::invalid_argument("posterior_step: k_prev must be < k");
    const double sk = s.sigma2[k], sp = s.sigma2[k_prev];
    const double alpha2 = sk - sp;
    const double b = sp / sk;
    // a is taken as 1 - b so the mean is an exact convex combination.
    return {1.0 - b, b, sp * alpha2 / sk};
}

inline Image posterior_step(const Image& x0_hat, const Image& xk, const Schedule& s, int k_prev, int k,
                            std::uint64_t seed) {
    require_same_grid(x0_hat, xk, "posterior_step");
    const auto c = posterior_coefficients(s, k_prev, k);
    const double sd = std::sqrt(c.var);
    Image out(xk.grid);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = c.a * x0_hat.values[i] + c.b * xk.values[i];
        if (sd > 0.0) v += sd * standard_normal(derive_seed(seed, i));
        out.values[i] = v;
    }
    return out;
}

/// Mean / variance of x_prev obtained by composing the posterior step (with
/// exact x0_hat = x0) with the bridge marginal at k.
struct ComposedMarginal {
    double w0, w1, var;
};

inline ComposedMarginal compose_posterior_with_marginal(const Schedule& s, int k_prev, int k) {
    const auto q = marginal_coefficients(s, k);
    const auto p = posterior_coefficients(s, k_prev, k);
    return {p.a + p.b * q.w0, p.b * q.w1, p.b * p.b * q.var + p.var};
}

/// K down to 0 in nfe uniform strides (rounded half up).
inline std::vector<int> nfe_timesteps(int K, int nfe) {
    if (nfe < 1 || nfe > K) throw std::invalid_argument("nfe_timesteps: need 1 <= nfe <= K");
    std::vector<int> steps(nfe + 1);
    for (int i = 0; i <= nfe; ++i) {
        const long long j = nfe - i;
        steps[i] = static_cast<int>((static_cast<long long>(K) * j * 2 + nfe) / (2LL * nfe));
    }
    for (int i = 1; i <= nfe; ++i)
        if (steps[i] >= steps[i - 1]) throw std::logic_error("nfe_timesteps: schedule not strictly decreasing");
    return steps;
}

struct SamplerConfig {
    int nfe = 1;
    std::uint64_t seed = 0;
};

/// Called after each step with (step index, k, x0_hat).
using SnapshotFn = std::function<void(int, int, const Image&)>;

/// Bridge sampler. `eps(x, k)` returns the predicted noise for state x at step k.
template <class EpsFn>
Image sample(EpsFn&& eps, const Image& x1, const Schedule& s, const SamplerConfig& cfg,
             const SnapshotFn& snapshot = {}) {
    const auto steps = nfe_timesteps(s.K, cfg.nfe);
    Image x = x1;
    for (int i = 0; i + 1 < static_cast<int>(steps.size()); ++i) {
        const int k = steps[i], k_prev = steps[i + 1];
        const Image e = eps(x, k);
        const Image x0_hat = predict_x0(x, e, s, k);
        if (snapshot) snapshot(i, k, x0_hat);
        x = posterior_step(x0_hat, x, s, k_prev, k, derive_seed(cfg.seed, i));
    }
    return x;
}

/// Variance-preserving DDPM schedule for the noise-initialized baseline.
/// Index t runs 0..T with alpha_bar[0] = 1.
struct DdpmSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;

    [[nodiscard]] double a(int t) const { return std::sqrt(alpha_bar[t]); }
    [[nodiscard]] double b(int t) const { return std::sqrt(1.0 - alpha_bar[t]); }
};

inline DdpmSchedule cddpm_schedule(int T, double beta1, double betaT) {
    if (T < 1) throw std::invalid_argument("cddpm_schedule: T must be >= 1");
    if (!(beta1 > 0.0) || betaT < beta1 || !(betaT < 1.0)) throw std::invalid_argument("cddpm_schedule: need 0 < beta1 <= betaT < 1");
    DdpmSchedule s;
    s.T = T;
    s.beta.assign(T + 1, 0.0);
    s.alpha_bar.assign(T + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        s.beta[t] = T > 1 ? beta1 + (betaT - beta1) * (t - 1) / (T - 1) : beta1;
        s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
    }
    return s;
}

/// Ancestral sampling from pure noise. `eps(x_t, condition, t)` is the
/// conditional noise estimator; the condition is fed at every step.
template <class CondEpsFn>
Image cddpm_sample(CondEpsFn&& eps, const Image& condition, const DdpmSchedule& s, std::uint64_t seed) {
    Image x(condition.grid);
    for (std::size_t i = 0; i < x.size(); ++i) x.values[i] = standard_normal(derive_seed(seed, 0xFFFFFFFFull, i));
    for (int t = s.T; t >= 1; --t) {
        const Image e = eps(x, condition, t);
        const double at = s.a(t), bt = s.b(t);
        const double ab_prev = s.alpha_bar[t - 1];
        const double one_minus_ab = 1.0 - s.alpha_bar[t];
        const double c0 = std::sqrt(ab_prev) * s.beta[t] / one_minus_ab;
        const double ct = std::sqrt(1.0 - s.beta[t]) * (1.0 - ab_prev) / one_minus_ab;
        const double sd = std::sqrt((1.0 - ab_prev) / one_minus_ab * s.beta[t]);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double x0_hat = (x.values[i] - bt * e.values[i]) / at;
            double v = c0 * x0_hat + ct * x.values[i];
            if (sd > 0.0) v += sd * standard_normal(derive_seed(seed, t, i));
            x.values[i] = v;
        }
    }
    return x;
}

}  // namespace bridgefov
