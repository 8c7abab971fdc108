#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "bridgefov/bridge.hpp"
#include "bridgefov/denoiser.hpp"

namespace bridgefov {

/// Paired endpoints in model units: x0 extended-FOV truth, x1 limited-FOV input.
struct BridgePair {
    Image x0;
    Image x1;
};

enum class Objective { bridge, cddpm };

struct TrainConfig {
    int iterations = 1000;
    int batch_size = 8;
    int micro_batch = 4;
    double learning_rate = 5e-5;
    std::uint64_t seed = 0;
    double ema_decay = 0.0;  // 0 disables the averaged copy
    int log_every = 100;
    Objective objective = Objective::bridge;

    void validate() const {
        if (iterations < 1 || batch_size < 1 || micro_batch < 1 || !(learning_rate > 0.0) || log_every < 1)
            throw std::invalid_argument("train config: iterations, batch sizes, learning rate and log interval must be positive");
        if (ema_decay < 0.0 || ema_decay >= 1.0) throw std::invalid_argument("train config: ema_decay must be in [0, 1)");
    }
};

/// One training draw: which pair, which timestep, which noise stream.
struct TrainSample {
    const BridgePair* pair = nullptr;
    int k = 1;
    std::uint64_t seed = 0;
};

template <class T>
struct LossAndGrad {
    double loss = 0.0;
    std::vector<T> grad;
};

namespace detail {

/// Accumulates weight * d(mean squared error)/d(theta) for one sample and
/// returns its mean squared error.
template <class T>
double accumulate_sample(const DenoiserParams<T>& params, const nn::Tensor<T>& input, int k, const Image& target,
                         double weight, std::vector<T>& grad) {
    ForwardCache<T> cache;
    nn::Tensor<T> pred = forward(params, input, k, &cache);
    const std::size_t n = target.size();
    double sq = 0.0;
    nn::Tensor<T> d_out(pred.c, pred.h, pred.w);
    for (std::size_t i = 0; i < n; ++i) {
        const double diff = static_cast<double>(pred.v[i]) - target.values[i];
        sq += diff * diff;
        d_out.v[i] = static_cast<T>(2.0 * weight * diff / static_cast<double>(n));
    }
    backward(params, cache, d_out, grad);
    return sq / static_cast<double>(n);
}

}  // namespace detail

/// Bridge objective: x_k ~ q(x_k | x0, x1), target (x_k - x0) / sigma_k.
template <class T>
double accumulate_bridge_sample(const DenoiserParams<T>& params, const Schedule& sched, const TrainSample& s,
                                double weight, std::vector<T>& grad) {
    const Image xk = marginal_sample(sched, s.pair->x0, s.pair->x1, s.k, s.seed);
    const Image target = training_target(s.pair->x0, xk, sched, s.k);
    return detail::accumulate_sample(params, to_tensor<T>(xk), s.k, target, weight, grad);
}

/// Baseline objective: x_t = a_t x0 + b_t eps, input [x_t, x1], target eps.
template <class T>
double accumulate_cddpm_sample(const DenoiserParams<T>& params, const DdpmSchedule& sched, const TrainSample& s,
                               double weight, std::vector<T>& grad) {
    const Image& x0 = s.pair->x0;
    Image eps(x0.grid), xt(x0.grid);
    const double a = sched.a(s.k), b = sched.b(s.k);
    for (std::size_t i = 0; i < x0.size(); ++i) {
        eps.values[i] = standard_normal(derive_seed(s.seed, i));
        xt.values[i] = a * x0.values[i] + b * eps.values[i];
    }
    const Image* ch[] = {&xt, &s.pair->x1};
    return detail::accumulate_sample(params, to_tensor<T>(std::span<const Image* const>(ch)), s.k, eps, weight, grad);
}

/// Mean over the batch of per-sample mean squared error, with its exact gradient.
template <class T>
LossAndGrad<T> loss_and_grad(const DenoiserParams<T>& params, const Schedule& sched, std::span<const TrainSample> batch) {
    if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
    LossAndGrad<T> out{0.0, std::vector<T>(params.size(), T(0))};
    const double w = 1.0 / static_cast<double>(batch.size());
    for (const auto& s : batch) out.loss += w * accumulate_bridge_sample(params, sched, s, w, out.grad);
    return out;
}

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct AdamState {
    std::vector<T> m, v;
    std::int64_t step = 0;

    static AdamState zeros(std::size_t n) { return {std::vector<T>(n, T(0)), std::vector<T>(n, T(0)), 0}; }
};

/// Bias-corrected adaptive-moment update, in place.
template <class T>
void optimizer_step(DenoiserParams<T>& params, const std::vector<T>& grad, AdamState<T>& state, double learning_rate,
                    const AdamHyper& h = {}) {
    const std::size_t n = params.size();
    if (grad.size() != n) throw std::invalid_argument("optimizer_step: gradient size mismatch");
    if (state.m.size() != n || state.v.size() != n) throw std::invalid_argument("optimizer_step: state size mismatch");
    ++state.step;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grad[i];
        const double m = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
        const double v = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
        state.m[i] = static_cast<T>(m);
        state.v[i] = static_cast<T>(v);
        params.values[i] = static_cast<T>(params.values[i] - learning_rate * (m / c1) / (std::sqrt(v / c2) + h.eps));
    }
}

/// Draws the batch for one iteration: pair index uniform, k uniform in [1, K].
inline std::vector<TrainSample> draw_batch(std::span<const BridgePair> dataset, int K, int batch_size,
                                           std::uint64_t seed, std::int64_t iteration) {
    CounterRng rng(derive_seed(seed, 0x62617463ull, iteration));
    std::vector<TrainSample> batch(batch_size);
    for (auto& s : batch) {
        s.pair = &dataset[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(dataset.size()) - 1))];
        s.k = static_cast<int>(rng.uniform_int(1, K));
        s.seed = rng();
    }
    return batch;
}

template <class T>
struct TrainState {
    DenoiserParams<T> params;
    AdamState<T> adam;
    std::vector<T> ema;  // empty when EMA is disabled
    std::int64_t iteration = 0;
};

struct LossPoint {
    std::int64_t iteration;
    double loss;  // mean over the logging window
};

struct TrainHooks {
    std::function<void(const LossPoint&)> on_log;
    /// Called after every completed iteration with the number of iterations done.
    std::function<void(std::int64_t)> on_iteration;
};

/// Runs iterations [state.iteration, cfg.iterations). Each iteration averages
/// gradients over batch_size draws, accumulated micro_batch at a time.
/// Returns the per-iteration loss.
template <class T>
std::vector<double> train(TrainState<T>& state, std::span<const BridgePair> dataset, const Schedule& sched,
                          const DdpmSchedule* baseline, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
    if (cfg.objective == Objective::cddpm && !baseline) throw std::invalid_argument("train: cddpm objective needs its schedule");
    const std::size_t n = state.params.size();
    if (state.adam.m.size() != n) state.adam = AdamState<T>::zeros(n);
    if (cfg.ema_decay > 0.0 && state.ema.size() != n) state.ema = state.params.values;

    const int K = cfg.objective == Objective::bridge ? sched.K : baseline->T;
    std::vector<double> curve;
    std::vector<T> grad(n);
    double window = 0.0;
    int window_n = 0;
    for (; state.iteration < cfg.iterations; ++state.iteration) {
        const auto batch = draw_batch(dataset, K, cfg.batch_size, cfg.seed, state.iteration);
        std::fill(grad.begin(), grad.end(), T(0));
        const double w = 1.0 / cfg.batch_size;
        double loss = 0.0;
        for (int start = 0; start < cfg.batch_size; start += cfg.micro_batch) {
            const int stop = std::min(cfg.batch_size, start + cfg.micro_batch);
            for (int i = start; i < stop; ++i) {
                loss += w * (cfg.objective == Objective::bridge
                                 ? accumulate_bridge_sample(state.params, sched, batch[i], w, grad)
                                 : accumulate_cddpm_sample(state.params, *baseline, batch[i], w, grad));
            }
        }
        optimizer_step(state.params, grad, state.adam, cfg.learning_rate);
        if (!state.ema.empty())
            for (std::size_t i = 0; i < n; ++i)
                state.ema[i] = static_cast<T>(cfg.ema_decay * state.ema[i] + (1.0 - cfg.ema_decay) * state.params.values[i]);
        curve.push_back(loss);
        window += loss;
        ++window_n;
        if ((state.iteration + 1) % cfg.log_every == 0 || state.iteration + 1 == cfg.iterations) {
            if (hooks.on_log) hooks.on_log({state.iteration + 1, window / window_n});
            window = 0.0;
            window_n = 0;
        }
        if (hooks.on_iteration) hooks.on_iteration(state.iteration + 1);
    }
    return curve;
}

}  // namespace bridgefov
