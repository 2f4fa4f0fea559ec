#include "pvd/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "pvd/rng.hpp"

namespace pvd {

namespace {

constexpr std::size_t kChunkRays = 256;

template <class Fn>
void parallel_chunks(std::size_t n_chunks, int threads, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(std::max(1, threads), n_chunks);
    if (workers <= 1) {
        for (std::size_t c = 0; c < n_chunks; ++c) fn(c);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t c = w; c < n_chunks; c += workers) fn(c);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

/// One ray's quadrature in precision T. colors holds 3 values per sample.
template <class T>
void composite_ray(const T* sigma, const T* colors, const T* delta, const T* t, int n, const Vec3<T>& bg, T* rgb,
                   T& acc, T& depth) {
    T trans = T(1);
    T c[3] = {T(0), T(0), T(0)};
    T a = T(0);
    T dsum = T(0);
    for (int i = 0; i < n; ++i) {
        const T s = std::max(sigma[i], T(0)) * delta[i];
        const T alpha = T(1) - std::exp(-s);
        const T w = trans * alpha;
        c[0] += w * colors[3 * i];
        c[1] += w * colors[3 * i + 1];
        c[2] += w * colors[3 * i + 2];
        a += w;
        dsum += w * t[i];
        trans *= std::exp(-s);
    }
    for (int k = 0; k < 3; ++k) rgb[k] = c[k] + (T(1) - a) * bg[k];
    acc = a;
    depth = dsum / std::max(a, T(1e-10));
}

/// Gradient of one ray's pixel w.r.t. per-sample sigma and color, given dL/dpixel.
template <class T>
void composite_ray_backward(const T* sigma, const T* colors, const T* delta, int n, const Vec3<T>& bg, const T* gpix,
                            T* dsigma, T* dcolor, std::vector<T>& w_buf, std::vector<T>& t_buf) {
    w_buf.resize(n);
    t_buf.resize(n + 1);
    T trans = T(1);
    for (int i = 0; i < n; ++i) {
        const T s = std::max(sigma[i], T(0)) * delta[i];
        t_buf[i] = trans;
        w_buf[i] = trans * (T(1) - std::exp(-s));
        trans *= std::exp(-s);
    }
    t_buf[n] = trans;
    T suffix = T(0);  // sum_{i>k} gw_i * w_i
    for (int k = n - 1; k >= 0; --k) {
        const T gw = gpix[0] * (colors[3 * k] - bg[0]) + gpix[1] * (colors[3 * k + 1] - bg[1]) +
                     gpix[2] * (colors[3 * k + 2] - bg[2]);
        const T ds = gw * t_buf[k + 1] - suffix;
        dsigma[k] = sigma[k] > T(0) ? ds * delta[k] : T(0);
        for (int ch = 0; ch < 3; ++ch) dcolor[3 * k + ch] = w_buf[k] * gpix[ch];
        suffix += gw * w_buf[k];
    }
}

/// Sample positions for one chunk of rays; in-box samples are gathered into x/d.
template <class T>
struct ChunkSamples {
    std::vector<T> t, delta;
    std::vector<std::int64_t> slot;  // per sample: row in x/d, or -1 when outside the cube
    Matrix<T> x, d;
};

template <class T>
void gather_chunk(std::span<const Ray<T>> rays, std::size_t first, std::size_t count, const RenderConfig& cfg,
                  std::uint64_t seed, ChunkSamples<T>& out) {
    const int n = cfg.n_samples;
    out.t.resize(count * n);
    out.delta.resize(count * n);
    out.slot.assign(count * n, -1);
    std::vector<Vec3<T>> pts;
    std::vector<Vec3<T>> dirs;
    pts.reserve(count * n);
    for (std::size_t r = 0; r < count; ++r) {
        const Ray<T>& ray = rays[first + r];
        const RaySamples s = sample_along_ray(cfg, seed, first + r);
        for (int i = 0; i < n; ++i) {
            const std::size_t k = r * n + i;
            out.t[k] = static_cast<T>(s.t[i]);
            out.delta[k] = static_cast<T>(s.delta[i]);
            const Vec3<T> p{ray.o[0] + out.t[k] * ray.d[0], ray.o[1] + out.t[k] * ray.d[1],
                            ray.o[2] + out.t[k] * ray.d[2]};
            if (inside_unit_cube(p)) {
                out.slot[k] = static_cast<std::int64_t>(pts.size());
                pts.push_back(p);
                dirs.push_back(ray.d);
            }
        }
    }
    out.x.resize(pts.size(), 3);
    out.d.resize(pts.size(), 3);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (int a = 0; a < 3; ++a) {
            out.x(i, a) = pts[i][a];
            out.d(i, a) = dirs[i][a];
        }
    }
}

}  // namespace

void Camera::validate() const {
    require(width > 0 && height > 0, ErrorKind::Config, "camera size must be positive");
    require(fx > 0 && fy > 0, ErrorKind::Config, "camera focal lengths must be positive");
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
            double s = 0.0;
            for (int r = 0; r < 3; ++r) s += pose[r * 4 + a] * pose[r * 4 + b];
            require(std::abs(s - (a == b ? 1.0 : 0.0)) <= 1e-6, ErrorKind::Config,
                    "camera rotation is not orthonormal");
        }
    }
}

Camera Camera::look_at(const Vec3d& eye, const Vec3d& target, int width, int height, double camera_angle_x) {
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = 0.5 * width / std::tan(0.5 * camera_angle_x);
    cam.fy = cam.fx;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    const Vec3d f = normalized(Vec3d{target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]});
    Vec3d up{0.0, 0.0, 1.0};
    if (norm(cross(f, up)) < 1e-9) up = {0.0, 1.0, 0.0};
    const Vec3d right = normalized(cross(f, up));
    const Vec3d cam_up = cross(right, f);
    for (int r = 0; r < 3; ++r) {
        cam.pose[r * 4 + 0] = right[r];
        cam.pose[r * 4 + 1] = cam_up[r];
        cam.pose[r * 4 + 2] = -f[r];
        cam.pose[r * 4 + 3] = eye[r];
    }
    return cam;
}

void RenderConfig::validate() const {
    require(n_samples >= 2, ErrorKind::Config, "n_samples must be >= 2");
    require(near >= 0.0 && far > near, ErrorKind::Config, "render range needs 0 <= near < far");
}

Ray<double> ray_for_pixel(const Camera& cam, int i, int j, std::optional<std::array<double, 2>> jitter) {
    if (i < 0 || i >= cam.width || j < 0 || j >= cam.height) {
        fail(ErrorKind::Range, "pixel (" + std::to_string(i) + "," + std::to_string(j) + ") outside the frame");
    }
    const double ox = jitter ? (*jitter)[0] : 0.5;
    const double oy = jitter ? (*jitter)[1] : 0.5;
    const Vec3d local{(i + ox - cam.cx) / cam.fx, -(j + oy - cam.cy) / cam.fy, -1.0};
    return Ray<double>{cam.center(), normalized(cam.rotate(local))};
}

RaySamples sample_along_ray(const RenderConfig& cfg, std::uint64_t seed, std::uint64_t ray_index) {
    const int n = cfg.n_samples;
    const double step = (cfg.far - cfg.near) / n;
    RaySamples s;
    s.t.resize(n);
    s.delta.resize(n);
    if (cfg.stratified) {
        Rng rng(splitmix64(seed) ^ splitmix64(ray_index ^ 0x5bd1e995ULL));
        for (int i = 0; i < n; ++i) s.t[i] = cfg.near + (i + rng.uniform()) * step;
    } else {
        for (int i = 0; i < n; ++i) s.t[i] = cfg.near + (i + 0.5) * step;
    }
    for (int i = 0; i + 1 < n; ++i) s.delta[i] = s.t[i + 1] - s.t[i];
    s.delta[n - 1] = cfg.far - s.t[n - 1];
    return s;
}

void composite_weights(std::span<const double> sigmas, std::span<const double> deltas, std::vector<double>& weights,
                       std::vector<double>& transmittance) {
    require(sigmas.size() == deltas.size(), ErrorKind::Shape, "composite: sigma/delta length mismatch");
    weights.resize(sigmas.size());
    transmittance.resize(sigmas.size());
    double trans = 1.0;
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        const double s = std::max(sigmas[i], 0.0) * deltas[i];
        transmittance[i] = trans;
        weights[i] = trans * (1.0 - std::exp(-s));
        trans *= std::exp(-s);
    }
}

CompositeResult composite(std::span<const double> sigmas, std::span<const Vec3d> colors,
                          std::span<const double> deltas, std::span<const double> ts, const Vec3d& background) {
    require(!sigmas.empty(), ErrorKind::Shape, "composite: need at least one sample");
    require(sigmas.size() == colors.size() && sigmas.size() == deltas.size(), ErrorKind::Shape,
            "composite: mismatched lengths");
    require(ts.empty() || ts.size() == sigmas.size(), ErrorKind::Shape, "composite: t length mismatch");
    const int n = static_cast<int>(sigmas.size());
    std::vector<double> flat(3 * sigmas.size());
    for (std::size_t i = 0; i < colors.size(); ++i) {
        for (int c = 0; c < 3; ++c) flat[3 * i + c] = colors[i][c];
    }
    std::vector<double> tt(ts.begin(), ts.end());
    if (tt.empty()) {
        // cumulative sample positions when only deltas are given
        double acc_t = 0.0;
        for (int i = 0; i < n; ++i) {
            tt.push_back(acc_t);
            acc_t += deltas[i];
        }
    }
    CompositeResult out;
    double rgb[3];
    composite_ray<double>(sigmas.data(), flat.data(), deltas.data(), tt.data(), n, background, rgb, out.acc, out.depth);
    out.rgb = {rgb[0], rgb[1], rgb[2]};
    return out;
}

template <class T>
PointEvaluator<T> field_evaluator(const FieldModel& model, std::span<const T> params) {
    return [&model, params](const Matrix<T>& x, const Matrix<T>& d, std::vector<T>& sigma, Matrix<T>& rgb) {
        Matrix<T> feat;
        field_phi1<T>(model, params, x, feat, nullptr);
        field_phi2<T>(model, params, feat, d, sigma, rgb, nullptr);
    };
}

template <class T>
RayBatchResult<T> render_rays(const PointEvaluator<T>& eval, std::span<const Ray<T>> rays, const RenderConfig& cfg,
                              std::uint64_t seed, bool keep_samples) {
    cfg.validate();
    const std::size_t R = rays.size();
    const int n = cfg.n_samples;
    RayBatchResult<T> out;
    out.rgb.resize(R, 3);
    out.acc.assign(R, T(0));
    out.depth.assign(R, T(0));
    out.n_samples = n;
    if (keep_samples) {
        out.t.assign(R * n, T(0));
        out.delta.assign(R * n, T(0));
        out.sigma.assign(R * n, T(0));
        out.color.resize(R * n, 3);
    }
    const Vec3<T> bg = vec_cast<T>(cfg.background);
    const std::size_t n_chunks = (R + kChunkRays - 1) / kChunkRays;
    parallel_chunks(n_chunks, cfg.threads, [&](std::size_t c) {
        const std::size_t first = c * kChunkRays;
        const std::size_t count = std::min(kChunkRays, R - first);
        ChunkSamples<T> cs;
        gather_chunk(rays, first, count, cfg, seed, cs);
        std::vector<T> sig_in;
        Matrix<T> rgb_in;
        if (cs.x.rows > 0) eval(cs.x, cs.d, sig_in, rgb_in);
        std::vector<T> sigma(count * n, T(0));
        std::vector<T> color(count * n * 3, T(0));
        for (std::size_t k = 0; k < count * n; ++k) {
            if (cs.slot[k] < 0) continue;
            const std::size_t s = static_cast<std::size_t>(cs.slot[k]);
            sigma[k] = sig_in[s];
            for (int ch = 0; ch < 3; ++ch) color[3 * k + ch] = rgb_in(s, ch);
        }
        for (std::size_t r = 0; r < count; ++r) {
            const std::size_t o = r * n;
            composite_ray<T>(sigma.data() + o, color.data() + 3 * o, cs.delta.data() + o, cs.t.data() + o, n, bg,
                             out.rgb.row(first + r), out.acc[first + r], out.depth[first + r]);
        }
        if (keep_samples) {
            std::copy(cs.t.begin(), cs.t.end(), out.t.begin() + first * n);
            std::copy(cs.delta.begin(), cs.delta.end(), out.delta.begin() + first * n);
            std::copy(sigma.begin(), sigma.end(), out.sigma.begin() + first * n);
            std::copy(color.begin(), color.end(), out.color.data.begin() + first * n * 3);
        }
    });
    return out;
}

template <class T>
RayBatchResult<T> render_rays_batched(const FieldModel& model, std::span<const T> params,
                                      std::span<const Ray<T>> rays, const RenderConfig& cfg, std::uint64_t seed,
                                      bool keep_samples) {
    require(!rays.empty(), ErrorKind::Shape, "render_rays_batched: empty batch");
    return render_rays<T>(field_evaluator<T>(model, params), rays, cfg, seed, keep_samples);
}

template <class T>
T render_mse_backward(const FieldModel& model, std::span<const T> params, std::span<T> grad,
                      std::span<const Ray<T>> rays, const Matrix<T>& target, const RenderConfig& cfg,
                      std::uint64_t seed, T weight, Matrix<T>* pixels_out) {
    cfg.validate();
    const std::size_t R = rays.size();
    require(R > 0, ErrorKind::Shape, "render_mse_backward: empty batch");
    require(target.rows == R && target.cols == 3, ErrorKind::Shape, "render_mse_backward: target shape mismatch");
    const int n = cfg.n_samples;
    const Vec3<T> bg = vec_cast<T>(cfg.background);
    const T scale = weight / static_cast<T>(3 * R);
    if (pixels_out != nullptr) pixels_out->resize(R, 3);
    T loss = T(0);
    std::vector<T> w_buf, t_buf;
    for (std::size_t first = 0; first < R; first += kChunkRays) {
        const std::size_t count = std::min(kChunkRays, R - first);
        ChunkSamples<T> cs;
        gather_chunk(rays, first, count, cfg, seed, cs);
        const std::size_t m = cs.x.rows;
        Matrix<T> feat, rgb_in;
        std::vector<T> sig_in;
        Tape<T> tape1, tape2;
        if (m > 0) {
            field_phi1<T>(model, params, cs.x, feat, &tape1);
            field_phi2<T>(model, params, feat, cs.d, sig_in, rgb_in, &tape2);
        }
        std::vector<T> sigma(count * n, T(0));
        std::vector<T> color(count * n * 3, T(0));
        for (std::size_t k = 0; k < count * n; ++k) {
            if (cs.slot[k] < 0) continue;
            const std::size_t s = static_cast<std::size_t>(cs.slot[k]);
            sigma[k] = sig_in[s];
            for (int ch = 0; ch < 3; ++ch) color[3 * k + ch] = rgb_in(s, ch);
        }
        std::vector<T> dsigma_all(count * n, T(0));
        std::vector<T> dcolor_all(count * n * 3, T(0));
        for (std::size_t r = 0; r < count; ++r) {
            const std::size_t o = r * n;
            T pix[3], acc, depth;
            composite_ray<T>(sigma.data() + o, color.data() + 3 * o, cs.delta.data() + o, cs.t.data() + o, n, bg, pix,
                             acc, depth);
            T gpix[3];
            for (int ch = 0; ch < 3; ++ch) {
                const T diff = pix[ch] - target(first + r, ch);
                loss += diff * diff;
                gpix[ch] = T(2) * scale * diff;
                if (pixels_out != nullptr) (*pixels_out)(first + r, ch) = pix[ch];
            }
            composite_ray_backward<T>(sigma.data() + o, color.data() + 3 * o, cs.delta.data() + o, n, bg, gpix,
                                      dsigma_all.data() + o, dcolor_all.data() + 3 * o, w_buf, t_buf);
        }
        if (m == 0) continue;
        std::vector<T> dsig(m, T(0));
        Matrix<T> drgb(m, 3);
        for (std::size_t k = 0; k < count * n; ++k) {
            if (cs.slot[k] < 0) continue;
            const std::size_t s = static_cast<std::size_t>(cs.slot[k]);
            dsig[s] = dsigma_all[k];
            for (int ch = 0; ch < 3; ++ch) drgb(s, ch) = dcolor_all[3 * k + ch];
        }
        Matrix<T> dfeat;
        field_phi2_backward<T>(model, params, feat, cs.d, tape2, dsig, drgb, grad, &dfeat);
        field_phi1_backward<T>(model, params, cs.x, tape1, dfeat, grad);
    }
    return loss * scale;
}

std::vector<Ray<double>> camera_rays(const Camera& cam) {
    std::vector<Ray<double>> rays;
    rays.reserve(std::size_t(cam.width) * cam.height);
    for (int j = 0; j < cam.height; ++j) {
        for (int i = 0; i < cam.width; ++i) rays.push_back(ray_for_pixel(cam, i, j));
    }
    return rays;
}

template <class T>
std::vector<Ray<T>> cast_rays(std::span<const Ray<double>> rays) {
    std::vector<Ray<T>> out(rays.size());
    for (std::size_t i = 0; i < rays.size(); ++i) out[i] = Ray<T>{vec_cast<T>(rays[i].o), vec_cast<T>(rays[i].d)};
    return out;
}

namespace {

template <class T>
RenderedView to_view(const RayBatchResult<T>& res, int width, int height) {
    RenderedView view{Image(width, height, 3), Image(width, height, 1)};
    for (std::size_t p = 0; p < res.acc.size(); ++p) {
        for (int c = 0; c < 3; ++c) view.rgb.data[3 * p + c] = static_cast<float>(res.rgb(p, c));
        view.depth.data[p] = static_cast<float>(res.depth[p]);
    }
    return view;
}

}  // namespace

RenderedView render_image(const FieldPair& field, const Camera& cam, const RenderConfig& cfg, std::uint64_t seed) {
    cam.validate();
    const auto rays64 = camera_rays(cam);
    const auto rays = cast_rays<float>(rays64);
    auto res = render_rays<float>(field_evaluator<float>(field.model, field.params.values()), rays, cfg, seed, false);
    return to_view(res, cam.width, cam.height);
}

RenderedView render_image(const PointEvaluator<double>& eval, const Camera& cam, const RenderConfig& cfg,
                          std::uint64_t seed) {
    cam.validate();
    const auto rays = camera_rays(cam);
    auto res = render_rays<double>(eval, rays, cfg, seed, false);
    return to_view(res, cam.width, cam.height);
}

#define PVD_INSTANTIATE_RENDER(T)                                                                                   \
    template PointEvaluator<T> field_evaluator<T>(const FieldModel&, std::span<const T>);                          \
    template RayBatchResult<T> render_rays<T>(const PointEvaluator<T>&, std::span<const Ray<T>>,                    \
                                              const RenderConfig&, std::uint64_t, bool);                            \
    template RayBatchResult<T> render_rays_batched<T>(const FieldModel&, std::span<const T>,                        \
                                                      std::span<const Ray<T>>, const RenderConfig&, std::uint64_t,  \
                                                      bool);                                                        \
    template T render_mse_backward<T>(const FieldModel&, std::span<const T>, std::span<T>, std::span<const Ray<T>>, \
                                      const Matrix<T>&, const RenderConfig&, std::uint64_t, T, Matrix<T>*);         \
    template std::vector<Ray<T>> cast_rays<T>(std::span<const Ray<double>>);

PVD_INSTANTIATE_RENDER(float)
PVD_INSTANTIATE_RENDER(double)

#undef PVD_INSTANTIATE_RENDER

}  // namespace pvd
