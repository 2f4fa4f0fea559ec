#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "pvd/common.hpp"
#include "pvd/fields.hpp"
#include "pvd/image.hpp"

namespace pvd {

/// Pinhole camera; pose is a row-major 3x4 camera-to-world matrix. The camera looks down
/// its local -z axis with +y up.
struct Camera {
    int width = 0;
    int height = 0;
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    std::array<double, 12> pose{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};

    Vec3d center() const { return {pose[3], pose[7], pose[11]}; }
    Vec3d rotate(const Vec3d& v) const {
        return {pose[0] * v[0] + pose[1] * v[1] + pose[2] * v[2], pose[4] * v[0] + pose[5] * v[1] + pose[6] * v[2],
                pose[8] * v[0] + pose[9] * v[1] + pose[10] * v[2]};
    }
    /// Viewing direction (world-space image of local -z).
    Vec3d forward() const { return rotate({0.0, 0.0, -1.0}); }

    /// Throws Config when the rotation is not orthonormal within 1e-6 or intrinsics are invalid.
    void validate() const;

    /// Camera at `eye` looking at `target`, world up +z.
    static Camera look_at(const Vec3d& eye, const Vec3d& target, int width, int height, double camera_angle_x);
};

template <class T>
struct Ray {
    Vec3<T> o;
    Vec3<T> d;
};

struct RenderConfig {
    int n_samples = 64;
    double near = 2.0;
    double far = 6.0;
    bool stratified = false;
    Vec3d background{1.0, 1.0, 1.0};
    int threads = 1;

    void validate() const;
};

/// Pinhole ray through pixel (i, j); `jitter` replaces the default 0.5 pixel-center offset.
Ray<double> ray_for_pixel(const Camera& cam, int i, int j, std::optional<std::array<double, 2>> jitter = std::nullopt);

struct RaySamples {
    std::vector<double> t;
    std::vector<double> delta;
};

/// Bin centers (or one uniform draw per bin when stratified) in [near, far];
/// delta_i = t_{i+1} - t_i and delta_N = far - t_N. The stream for a ray is keyed by
/// (seed, ray_index).
RaySamples sample_along_ray(const RenderConfig& cfg, std::uint64_t seed, std::uint64_t ray_index = 0);

struct CompositeResult {
    Vec3d rgb{0, 0, 0};
    double acc = 0.0;
    double depth = 0.0;
};

/// Quadrature with opacity 1 - exp(-max(sigma,0) delta). Pixel includes (1-acc) * background.
/// `ts` (optional) gives sample depths for the expected depth.
CompositeResult composite(std::span<const double> sigmas, std::span<const Vec3d> colors,
                          std::span<const double> deltas, std::span<const double> ts = {},
                          const Vec3d& background = {0.0, 0.0, 0.0});

/// Per-sample weights T_i * alpha_i and transmittances T_i.
void composite_weights(std::span<const double> sigmas, std::span<const double> deltas, std::vector<double>& weights,
                       std::vector<double>& transmittance);

/// Evaluates (sigma, rgb) for a batch of in-bounds points. Used for analytic sources.
template <class T>
using PointEvaluator = std::function<void(const Matrix<T>& x, const Matrix<T>& d, std::vector<T>& sigma,
                                          Matrix<T>& rgb)>;

template <class T>
PointEvaluator<T> field_evaluator(const FieldModel& model, std::span<const T> params);

/// Per-ray outputs plus the cached per-sample intermediates (n_samples per ray, row-major).
template <class T>
struct RayBatchResult {
    Matrix<T> rgb;
    std::vector<T> acc;
    std::vector<T> depth;
    int n_samples = 0;
    std::vector<T> t;
    std::vector<T> delta;
    std::vector<T> sigma;
    Matrix<T> color;
};

/// Forward rendering of a ray batch. Samples outside [-1,1]^3 carry sigma = 0. Results are
/// independent of batch composition and of cfg.threads.
template <class T>
RayBatchResult<T> render_rays(const PointEvaluator<T>& eval, std::span<const Ray<T>> rays, const RenderConfig& cfg,
                              std::uint64_t seed, bool keep_samples = false);

template <class T>
RayBatchResult<T> render_rays_batched(const FieldModel& model, std::span<const T> params,
                                      std::span<const Ray<T>> rays, const RenderConfig& cfg, std::uint64_t seed,
                                      bool keep_samples = true);

/// weight * mean((pixel - target)^2) over rays and channels. Adds its parameter gradient into
/// `grad` and returns the weighted loss. `pixels_out` receives the rendered colors when set.
template <class T>
T render_mse_backward(const FieldModel& model, std::span<const T> params, std::span<T> grad,
                      std::span<const Ray<T>> rays, const Matrix<T>& target, const RenderConfig& cfg,
                      std::uint64_t seed, T weight, Matrix<T>* pixels_out = nullptr);

std::vector<Ray<double>> camera_rays(const Camera& cam);

template <class T>
std::vector<Ray<T>> cast_rays(std::span<const Ray<double>> rays);

struct RenderedView {
    Image rgb;
    Image depth;  // single channel, ray-distance units
};

RenderedView render_image(const FieldPair& field, const Camera& cam, const RenderConfig& cfg, std::uint64_t seed = 0);
RenderedView render_image(const PointEvaluator<double>& eval, const Camera& cam, const RenderConfig& cfg,
                          std::uint64_t seed = 0);

}  // namespace pvd
