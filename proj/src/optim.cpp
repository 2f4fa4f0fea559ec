#include "pvd/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pvd/rng.hpp"

namespace pvd {

std::size_t SegmentTable::add(const std::string& name, std::size_t length, double lr_scale) {
    require(find(name) == nullptr, ErrorKind::Config, "duplicate parameter segment '" + name + "'");
    const std::size_t offset = total_;
    segments_.push_back(Segment{name, offset, length, lr_scale});
    total_ += length;
    return offset;
}

const Segment* SegmentTable::find(const std::string& name) const {
    for (const Segment& s : segments_) {
        if (s.name == name) return &s;
    }
    return nullptr;
}

const Segment& SegmentTable::at(const std::string& name) const {
    const Segment* s = find(name);
    require(s != nullptr, ErrorKind::Contract, "unknown parameter segment '" + name + "'");
    return *s;
}

bool SegmentTable::operator==(const SegmentTable& other) const {
    if (total_ != other.total_ || segments_.size() != other.segments_.size()) return false;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        const Segment& a = segments_[i];
        const Segment& b = other.segments_[i];
        if (a.name != b.name || a.offset != b.offset || a.length != b.length || a.lr_scale != b.lr_scale) return false;
    }
    return true;
}

void adam_step(ParamStore& params, AdamState& state) {
    if (auto bad = params.first_nonfinite_grad()) {
        fail(ErrorKind::Numerical, "non-finite gradient in segment '" + *bad + "'");
    }
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), 0.0f);
        state.v.assign(params.size(), 0.0f);
    }
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    const float b1 = static_cast<float>(state.beta1);
    const float b2 = static_cast<float>(state.beta2);
    const float eps = static_cast<float>(state.eps);
    auto values = params.values();
    auto grads = params.grads();
    for (const Segment& seg : params.layout().segments()) {
        const float step = static_cast<float>(state.lr * seg.lr_scale / bc1);
        const float inv_bc2 = static_cast<float>(1.0 / bc2);
        float* p = values.data() + seg.offset;
        float* g = grads.data() + seg.offset;
        float* m = state.m.data() + seg.offset;
        float* v = state.v.data() + seg.offset;
        for (std::size_t i = 0; i < seg.length; ++i) {
            const float gi = g[i];
            m[i] = b1 * m[i] + (1.0f - b1) * gi;
            v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
            p[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
        }
    }
    params.zero_grad();
}

double lr_schedule(std::int64_t step, std::int64_t total, double base_lr) {
    if (total <= 0) return base_lr;
    const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
    return base_lr * std::pow(0.1, frac);
}

template <class T>
T backward(const LossFn<T>& loss, ParamBuffer<T>& params, GradMode mode) {
    if (mode == GradMode::Overwrite) params.zero_grad();
    const T value = loss(std::span<const T>(params.values()), params.grads());
    if (!std::isfinite(value)) {
        auto bad = params.first_nonfinite_segment();
        fail(ErrorKind::Numerical, "non-finite loss (first offending segment: " + bad.value_or("none") + ")");
    }
    if (auto bad = params.first_nonfinite_grad()) {
        fail(ErrorKind::Numerical, "non-finite gradient in segment '" + *bad + "'");
    }
    return value;
}

template float backward<float>(const LossFn<float>&, ParamBuffer<float>&, GradMode);
template double backward<double>(const LossFn<double>&, ParamBuffer<double>&, GradMode);

GradCheckReport grad_check(const LossFn<double>& loss, ParamBuffer<double>& params, std::size_t n_params,
                           double eps, std::uint64_t seed) {
    backward(loss, params, GradMode::Overwrite);
    const std::vector<double> analytic(params.grads().begin(), params.grads().end());

    std::vector<std::size_t> touched;
    std::vector<std::size_t> untouched;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        (analytic[i] != 0.0 ? touched : untouched).push_back(i);
    }
    Rng rng = Rng::stream(seed, "gradcheck");
    auto draw = [&](std::vector<std::size_t>& pool, std::size_t k, std::vector<std::size_t>& out) {
        // partial Fisher-Yates
        k = std::min(k, pool.size());
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t j = i + rng.below(pool.size() - i);
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
    };
    std::vector<std::size_t> picked;
    draw(touched, n_params, picked);
    if (picked.size() < n_params) draw(untouched, n_params - picked.size(), picked);

    std::vector<double> scratch(params.size());
    auto eval = [&]() {
        std::fill(scratch.begin(), scratch.end(), 0.0);
        return loss(std::span<const double>(params.values()), std::span<double>(scratch));
    };

    GradCheckReport report;
    auto values = params.values();
    for (std::size_t idx : picked) {
        const double saved = values[idx];
        values[idx] = saved + eps;
        const double up = eval();
        values[idx] = saved - eps;
        const double down = eval();
        values[idx] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double a = analytic[idx];
        const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
        report.checked += 1;
        if (rel >= report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = idx;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    params.zero_grad();
    return report;
}

}  // namespace pvd
