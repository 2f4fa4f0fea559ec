#pragma once

#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "pvd/fields.hpp"

namespace pvd {

struct LossWeights {
    double w1 = 2e-3;  // feature alignment
    double w2 = 2e-3;  // density
    double w3 = 2e-3;  // point color
    double w4 = 1.0;   // rendered rgb
    double w5 = 1.0;   // regularizer
};

/// Unweighted loss terms; an empty entry means the term was not computed.
struct LossParts {
    std::optional<double> v;
    std::optional<double> sigma;
    std::optional<double> color;
    std::optional<double> rgb;
    std::optional<double> reg;
};

/// Weighted sum for `stage` (1, 2 or 3). Grid students never carry the feature term and train
/// density and color from stage 1. Throws Contract when a term the stage needs is missing.
double total_loss(const LossParts& parts, const LossWeights& w, int stage, Arch student);

/// mean((pred - target)^2). Adds scale * d/dpred into `dpred` when it is non-empty.
template <class T>
T mse_loss(std::span<const T> pred, std::span<const T> target, std::span<T> dpred = {}, T scale = T(1));

/// mean over points of (clip(sigma_t) - clip(sigma_s))^2. The student gradient vanishes
/// where sigma_s lies outside [a, b].
template <class T>
T density_loss(std::span<const T> sigma_t, std::span<const T> sigma_s, const DensityClip& clip,
               std::span<T> dsigma_s = {}, T scale = T(1));

/// No-clip variant of the density loss (plain squared error).
inline DensityClip no_clip() {
    return DensityClip{-std::numeric_limits<float>::infinity(), std::numeric_limits<float>::infinity()};
}

template <class T>
T color_loss(const Matrix<T>& c_t, const Matrix<T>& c_s, Matrix<T>* dc_s = nullptr, T scale = T(1));

template <class T>
T rgb_loss(const Matrix<T>& pix_t, const Matrix<T>& pix_s, Matrix<T>* dpix_s = nullptr, T scale = T(1));

/// Mean over rows of the squared Euclidean distance between matched feature rows.
template <class T>
T feature_loss(const Matrix<T>& f_t, const Matrix<T>& f_s, Matrix<T>* df_s = nullptr, T scale = T(1));

/// Sum over `axes` of the mean squared forward difference along that axis, for a row-major
/// tensor of the given shape. Axes of extent 1 contribute nothing.
template <class T>
T tv_tensor(std::span<const T> values, const std::vector<std::size_t>& shape, const std::vector<int>& axes,
            std::span<T> grad = {}, T scale = T(1));

/// Grid: TV over every payload channel. VM: mean TV over all line and plane tensors.
/// NotApplicable for mlp and hash fields.
template <class T>
T tv_reg(const FieldModel& model, std::span<const T> params, std::span<T> grad = {}, T scale = T(1));

/// Mean absolute value of every VM component entry. NotApplicable for other fields.
template <class T>
T l1_reg(const FieldModel& model, std::span<const T> params, std::span<T> grad = {}, T scale = T(1));

/// tv_rate * TV (+ l1_rate * L1 for vm); zero for mlp and hash.
template <class T>
T arch_regularizer(const FieldModel& model, std::span<const T> params, double tv_rate, double l1_rate,
                   std::span<T> grad = {}, T scale = T(1));

bool has_regularizer(Arch arch);

/// Linear map from student to teacher feature space, trained alongside the student.
class FeatureAdapter {
public:
    FeatureAdapter() = default;
    /// Identity (and frozen) when both fields share arch and feature_dim.
    static FeatureAdapter between(const FieldPair& teacher, const FieldPair& student, std::uint64_t seed);
    static FeatureAdapter identity(std::size_t dim);
    static FeatureAdapter learnable(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed);

    bool is_identity() const { return identity_; }
    std::size_t in_dim() const { return in_; }
    std::size_t out_dim() const { return out_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    /// Shape error when the input width is not in_dim().
    void forward(const Matrix<float>& in, Matrix<float>& out) const;
    /// Accumulates parameter gradients and writes the input gradient.
    void backward(const Matrix<float>& in, const Matrix<float>& dout, Matrix<float>& din);

private:
    bool identity_ = true;
    std::size_t in_ = 0;
    std::size_t out_ = 0;
    DenseLayer layer_;
    ParamStore params_;
};

struct PointBatch {
    Matrix<float> x;
    Matrix<float> d;
    std::size_t size() const { return x.rows; }
};

/// Forward-only feature alignment loss on a point batch.
double volume_aligned_loss(const FieldPair& teacher, const FieldPair& student, const FeatureAdapter& adapter,
                           const PointBatch& points);

}  // namespace pvd
