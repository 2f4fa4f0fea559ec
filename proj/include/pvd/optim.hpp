#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pvd/params.hpp"

namespace pvd {

struct AdamState {
    std::vector<float> m;
    std::vector<float> v;
    std::int64_t step_count = 0;
    double lr = 0.02;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(std::size_t n = 0, double lr_ = 0.02) : m(n, 0.0f), v(n, 0.0f), lr(lr_) {}
};

/// Bias-corrected Adam over every segment, scaled by the segment's lr_scale. Zeroes grads
/// afterwards. Throws Numerical (naming the segment) on non-finite gradients.
void adam_step(ParamStore& params, AdamState& state);

/// base_lr * 0.1^(step/total); base_lr when total is 0.
double lr_schedule(std::int64_t step, std::int64_t total, double base_lr);

// ---------------------------------------------------------------------------
// Gradient evaluation contract

/// Computes the loss for `values` and adds d(loss)/d(values) into `grads`.
template <class T>
using LossFn = std::function<T(std::span<const T> values, std::span<T> grads)>;

enum class GradMode { Overwrite, Accumulate };

/// Runs `loss` against `params`. Overwrite zeroes grads first. Throws Numerical when the loss
/// or any gradient is non-finite.
template <class T>
T backward(const LossFn<T>& loss, ParamBuffer<T>& params, GradMode mode = GradMode::Overwrite);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Central differences on `n_params` sampled parameters (preferring ones with a nonzero
/// analytic gradient). Relative error is |a - n| / max(1e-8, |a| + |n|).
GradCheckReport grad_check(const LossFn<double>& loss, ParamBuffer<double>& params, std::size_t n_params,
                           double eps, std::uint64_t seed);

}  // namespace pvd
