#include "pvd/losses.hpp"

#include <cmath>
#include <limits>

namespace pvd {

namespace {

constexpr double kAdapterLrScale = 0.05;

void need(const std::optional<double>& part, const char* name, int stage) {
    require(part.has_value(), ErrorKind::Contract,
            std::string("total_loss: stage ") + std::to_string(stage) + " needs the " + name + " term");
}

}  // namespace

double total_loss(const LossParts& parts, const LossWeights& w, int stage, Arch student) {
    require(stage >= 1 && stage <= 3, ErrorKind::Contract, "total_loss: stage must be 1, 2 or 3");
    const bool grid = student == Arch::Grid;
    double total = 0.0;
    if (!grid) {
        need(parts.v, "feature", stage);
        total += w.w1 * *parts.v;
    }
    if (stage >= 2 || grid) {
        need(parts.sigma, "density", stage);
        need(parts.color, "color", stage);
        total += w.w2 * *parts.sigma + w.w3 * *parts.color;
    }
    if (stage == 3) {
        need(parts.rgb, "rgb", stage);
        total += w.w4 * *parts.rgb;
    }
    if (has_regularizer(student)) need(parts.reg, "regularizer", stage);
    if (parts.reg) total += w.w5 * *parts.reg;
    return total;
}

template <class T>
T mse_loss(std::span<const T> pred, std::span<const T> target, std::span<T> dpred, T scale) {
    require(pred.size() == target.size(), ErrorKind::Shape, "mse: size mismatch");
    require(dpred.empty() || dpred.size() == pred.size(), ErrorKind::Shape, "mse: gradient size mismatch");
    if (pred.empty()) return T(0);
    const T inv = T(1) / static_cast<T>(pred.size());
    T sum = T(0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const T diff = pred[i] - target[i];
        sum += diff * diff;
        if (!dpred.empty()) dpred[i] += scale * T(2) * diff * inv;
    }
    return sum * inv;
}

template <class T>
T density_loss(std::span<const T> sigma_t, std::span<const T> sigma_s, const DensityClip& clip,
               std::span<T> dsigma_s, T scale) {
    require(sigma_t.size() == sigma_s.size(), ErrorKind::Shape, "density_loss: size mismatch");
    if (sigma_s.empty()) return T(0);
    const T a = static_cast<T>(clip.a);
    const T b = static_cast<T>(clip.b);
    const T inv = T(1) / static_cast<T>(sigma_s.size());
    T sum = T(0);
    for (std::size_t i = 0; i < sigma_s.size(); ++i) {
        const T ct = std::min(std::max(sigma_t[i], a), b);
        const T cs = std::min(std::max(sigma_s[i], a), b);
        const T diff = cs - ct;
        sum += diff * diff;
        if (!dsigma_s.empty() && sigma_s[i] > a && sigma_s[i] < b) dsigma_s[i] += scale * T(2) * diff * inv;
    }
    return sum * inv;
}

template <class T>
T color_loss(const Matrix<T>& c_t, const Matrix<T>& c_s, Matrix<T>* dc_s, T scale) {
    require(c_t.rows == c_s.rows && c_t.cols == c_s.cols, ErrorKind::Shape, "color_loss: shape mismatch");
    if (dc_s != nullptr && dc_s->rows != c_s.rows) dc_s->resize(c_s.rows, c_s.cols);
    return mse_loss<T>(c_s.data, c_t.data, dc_s != nullptr ? std::span<T>(dc_s->data) : std::span<T>{}, scale);
}

template <class T>
T rgb_loss(const Matrix<T>& pix_t, const Matrix<T>& pix_s, Matrix<T>* dpix_s, T scale) {
    return color_loss<T>(pix_t, pix_s, dpix_s, scale);
}

template <class T>
T feature_loss(const Matrix<T>& f_t, const Matrix<T>& f_s, Matrix<T>* df_s, T scale) {
    require(f_t.rows == f_s.rows && f_t.cols == f_s.cols, ErrorKind::Shape,
            "feature loss: teacher width " + std::to_string(f_t.cols) + " vs mapped student width " +
                std::to_string(f_s.cols));
    if (f_s.rows == 0) return T(0);
    if (df_s != nullptr && df_s->rows != f_s.rows) df_s->resize(f_s.rows, f_s.cols);
    const T inv = T(1) / static_cast<T>(f_s.rows);
    T sum = T(0);
    for (std::size_t i = 0; i < f_s.data.size(); ++i) {
        const T diff = f_s.data[i] - f_t.data[i];
        sum += diff * diff;
        if (df_s != nullptr) df_s->data[i] += scale * T(2) * diff * inv;
    }
    return sum * inv;
}

template <class T>
T tv_tensor(std::span<const T> values, const std::vector<std::size_t>& shape, const std::vector<int>& axes,
            std::span<T> grad, T scale) {
    std::size_t total = 1;
    for (std::size_t s : shape) total *= s;
    require(values.size() == total, ErrorKind::Shape, "tv: value count does not match shape");
    T tv = T(0);
    for (int axis : axes) {
        require(axis >= 0 && std::size_t(axis) < shape.size(), ErrorKind::Shape, "tv: axis out of range");
        const std::size_t n = shape[axis];
        if (n < 2) continue;
        std::size_t inner = 1;
        for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
        const std::size_t outer = total / (n * inner);
        const std::size_t count = outer * (n - 1) * inner;
        const T inv = T(1) / static_cast<T>(count);
        T sum = T(0);
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i + 1 < n; ++i) {
                const std::size_t base = (o * n + i) * inner;
                for (std::size_t k = 0; k < inner; ++k) {
                    const T diff = values[base + inner + k] - values[base + k];
                    sum += diff * diff;
                    if (!grad.empty()) {
                        const T g = scale * T(2) * diff * inv;
                        grad[base + inner + k] += g;
                        grad[base + k] -= g;
                    }
                }
            }
        }
        tv += sum * inv;
    }
    return tv;
}

bool has_regularizer(Arch arch) { return arch == Arch::Grid || arch == Arch::Vm; }

namespace {

/// Line and plane tensors of a VM field: (offset, shape, smoothed axes).
struct VmTensor {
    std::size_t offset;
    std::vector<std::size_t> shape;
    std::vector<int> axes;
};

std::vector<VmTensor> vm_tensors(const VmField& vm) {
    const std::size_t n = vm.config().resolution;
    std::vector<VmTensor> out;
    for (int group = 0; group < 2; ++group) {
        const bool density = group == 0;
        const std::size_t R = density ? vm.config().density_per_pair : vm.config().appearance_per_pair;
        for (int m = 0; m < 3; ++m) {
            out.push_back({vm.line_offset(density, m), {R, n}, {1}});
            out.push_back({vm.plane_offset(density, m), {R, n, n}, {1, 2}});
        }
    }
    return out;
}

template <class T>
std::span<T> sub(std::span<T> s, std::size_t off, std::size_t len) {
    return s.empty() ? s : s.subspan(off, len);
}

}  // namespace

template <class T>
T tv_reg(const FieldModel& model, std::span<const T> params, std::span<T> grad, T scale) {
    if (const auto* g = std::get_if<GridField>(&model)) {
        const auto& r = g->config().resolution;
        const Segment& seg = g->layout().at("grid.payload");
        return tv_tensor<T>(params.subspan(seg.offset, seg.length),
                            {std::size_t(r[0]), std::size_t(r[1]), std::size_t(r[2]), g->payload()}, {0, 1, 2},
                            sub(grad, seg.offset, seg.length), scale);
    }
    if (const auto* vm = std::get_if<VmField>(&model)) {
        const auto tensors = vm_tensors(*vm);
        const T share = scale / static_cast<T>(tensors.size());
        T sum = T(0);
        for (const VmTensor& t : tensors) {
            std::size_t len = 1;
            for (std::size_t s : t.shape) len *= s;
            sum += tv_tensor<T>(params.subspan(t.offset, len), t.shape, t.axes, sub(grad, t.offset, len), share);
        }
        return sum / static_cast<T>(tensors.size());
    }
    fail(ErrorKind::NotApplicable, std::string("tv_reg does not apply to ") + arch_name(arch_of(model)) + " fields");
}

template <class T>
T l1_reg(const FieldModel& model, std::span<const T> params, std::span<T> grad, T scale) {
    const auto* vm = std::get_if<VmField>(&model);
    require(vm != nullptr, ErrorKind::NotApplicable,
            std::string("l1_reg does not apply to ") + arch_name(arch_of(model)) + " fields");
    std::size_t count = 0;
    for (const VmTensor& t : vm_tensors(*vm)) {
        std::size_t len = 1;
        for (std::size_t s : t.shape) len *= s;
        count += len;
    }
    const T inv = T(1) / static_cast<T>(count);
    T sum = T(0);
    for (const VmTensor& t : vm_tensors(*vm)) {
        std::size_t len = 1;
        for (std::size_t s : t.shape) len *= s;
        for (std::size_t i = t.offset; i < t.offset + len; ++i) {
            sum += std::abs(params[i]);
            if (!grad.empty() && params[i] != T(0)) grad[i] += scale * inv * (params[i] > T(0) ? T(1) : T(-1));
        }
    }
    return sum * inv;
}

template <class T>
T arch_regularizer(const FieldModel& model, std::span<const T> params, double tv_rate, double l1_rate,
                   std::span<T> grad, T scale) {
    const Arch arch = arch_of(model);
    if (!has_regularizer(arch)) return T(0);
    T reg = static_cast<T>(tv_rate) * tv_reg<T>(model, params, grad, scale * static_cast<T>(tv_rate));
    if (arch == Arch::Vm) reg += static_cast<T>(l1_rate) * l1_reg<T>(model, params, grad, scale * static_cast<T>(l1_rate));
    return reg;
}

// ---------------------------------------------------------------------------

FeatureAdapter FeatureAdapter::identity(std::size_t dim) {
    FeatureAdapter a;
    a.identity_ = true;
    a.in_ = dim;
    a.out_ = dim;
    return a;
}

FeatureAdapter FeatureAdapter::learnable(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed) {
    require(in_dim > 0 && out_dim > 0, ErrorKind::Shape, "adapter dims must be positive");
    FeatureAdapter a;
    a.identity_ = false;
    a.in_ = in_dim;
    a.out_ = out_dim;
    SegmentTable layout;
    a.layer_ = DenseLayer::add(layout, "adapter", in_dim, out_dim, kAdapterLrScale);
    a.params_ = ParamStore(layout);
    if (in_dim == out_dim) {
        // start from the identity so equal-width feature spaces begin aligned
        auto v = a.params_.values();
        for (std::size_t k = 0; k < in_dim; ++k) v[a.layer_.w + k * out_dim + k] = 1.0f;
    } else {
        Rng rng = Rng::stream(seed, "adapter");
        a.layer_.init(a.params_.values(), rng);
    }
    return a;
}

FeatureAdapter FeatureAdapter::between(const FieldPair& teacher, const FieldPair& student, std::uint64_t seed) {
    if (teacher.arch() == student.arch() && teacher.feature_dim() == student.feature_dim()) {
        return identity(teacher.feature_dim());
    }
    return learnable(student.feature_dim(), teacher.feature_dim(), seed);
}

void FeatureAdapter::forward(const Matrix<float>& in, Matrix<float>& out) const {
    require(in.cols == in_, ErrorKind::Shape,
            "adapter expects width " + std::to_string(in_) + ", got " + std::to_string(in.cols));
    if (identity_) {
        out = in;
        return;
    }
    dense_forward<float>(layer_, params_.values(), in, out);
}

void FeatureAdapter::backward(const Matrix<float>& in, const Matrix<float>& dout, Matrix<float>& din) {
    if (identity_) {
        din = dout;
        return;
    }
    dense_backward<float>(layer_, params_.values(), in, dout, params_.grads(), &din);
}

double volume_aligned_loss(const FieldPair& teacher, const FieldPair& student, const FeatureAdapter& adapter,
                           const PointBatch& points) {
    require(adapter.in_dim() == student.feature_dim() && adapter.out_dim() == teacher.feature_dim(), ErrorKind::Shape,
            "adapter maps " + std::to_string(adapter.in_dim()) + "->" + std::to_string(adapter.out_dim()) +
                " but fields need " + std::to_string(student.feature_dim()) + "->" +
                std::to_string(teacher.feature_dim()));
    for (std::size_t r = 0; r < points.size(); ++r) {
        require(inside_unit_cube(Vec3f{points.x(r, 0), points.x(r, 1), points.x(r, 2)}), ErrorKind::OutOfBounds,
                "volume_aligned_loss: point outside [-1,1]^3");
    }
    Matrix<float> ft, fs, mapped;
    field_phi1<float>(teacher.model, teacher.params.values(), points.x, ft, nullptr);
    field_phi1<float>(student.model, student.params.values(), points.x, fs, nullptr);
    adapter.forward(fs, mapped);
    Matrix<double> a(ft.rows, ft.cols), b(mapped.rows, mapped.cols);
    for (std::size_t i = 0; i < ft.data.size(); ++i) a.data[i] = ft.data[i];
    for (std::size_t i = 0; i < mapped.data.size(); ++i) b.data[i] = mapped.data[i];
    return feature_loss<double>(a, b);
}

#define PVD_INSTANTIATE_LOSSES(T)                                                                                \
    template T mse_loss<T>(std::span<const T>, std::span<const T>, std::span<T>, T);                             \
    template T density_loss<T>(std::span<const T>, std::span<const T>, const DensityClip&, std::span<T>, T);     \
    template T color_loss<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>*, T);                                 \
    template T rgb_loss<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>*, T);                                   \
    template T feature_loss<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>*, T);                               \
    template T tv_tensor<T>(std::span<const T>, const std::vector<std::size_t>&, const std::vector<int>&,        \
                            std::span<T>, T);                                                                    \
    template T tv_reg<T>(const FieldModel&, std::span<const T>, std::span<T>, T);                                \
    template T l1_reg<T>(const FieldModel&, std::span<const T>, std::span<T>, T);                                \
    template T arch_regularizer<T>(const FieldModel&, std::span<const T>, double, double, std::span<T>, T);

PVD_INSTANTIATE_LOSSES(float)
PVD_INSTANTIATE_LOSSES(double)

#undef PVD_INSTANTIATE_LOSSES

}  // namespace pvd
