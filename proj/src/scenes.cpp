#include "pvd/scenes.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "pvd/dataset.hpp"
#include "pvd/rng.hpp"

namespace pvd {

namespace {

double soft(double r, double radius, double s) { return 1.0 / (1.0 + std::exp(-(radius - r) / s)); }

double dist(const Vec3d& x, const Vec3d& c) {
    const double a = x[0] - c[0], b = x[1] - c[1], e = x[2] - c[2];
    return std::sqrt(a * a + b * b + e * e);
}

Vec3d sigmoid3(double a, double b, double c) { return {sigmoid(a), sigmoid(b), sigmoid(c)}; }

double dir_dot(const Vec3d& d, const Vec3d& axis) {
    const double n = norm(d);
    return n > 0.0 ? dot(d, axis) / n : 0.0;
}

}  // namespace

std::vector<std::string> scene_names() { return {"fog", "soft_sphere", "box", "smoke", "hdr"}; }

AnalyticScene make_scene(const std::string& name) {
    AnalyticScene s;
    s.name = name;
    if (name == "fog") {
        s.kind = SceneKind::Fog;
        s.peak = 2.0;
        s.softness = 0.0;
    } else if (name == "soft_sphere") {
        s.kind = SceneKind::SoftSphere;
        s.peak = 10.0;
        s.softness = 0.05;
    } else if (name == "box") {
        s.kind = SceneKind::Box;
        s.peak = 8.0;
        s.softness = 0.04;
    } else if (name == "smoke") {
        s.kind = SceneKind::Smoke;
        s.peak = 20.0;
        s.softness = 0.04;
    } else if (name == "hdr") {
        s.kind = SceneKind::Hdr;
        s.peak = 40.0;
        s.softness = 0.04;
    } else {
        fail(ErrorKind::Config, "unknown scene '" + name + "'");
    }
    return s;
}

AnalyticSample analytic_eval(const AnalyticScene& scene, const Vec3d& x, const Vec3d& d) {
    AnalyticSample out;
    const bool inside = inside_unit_cube(x);
    switch (scene.kind) {
        case SceneKind::Fog:
            out.sigma = scene.peak;
            out.rgb = {0.6, 0.5, 0.4};
            break;
        case SceneKind::SoftSphere: {
            out.sigma = scene.peak * soft(norm(x), 0.6, scene.softness);
            out.rgb = sigmoid3(1.5 * x[0], 1.5 * x[1] - 0.5, 1.5 * x[2] + 0.5);
            break;
        }
        case SceneKind::Box: {
            double occ = 1.0;
            for (int a = 0; a < 3; ++a) occ *= soft(std::abs(x[a]), 0.5, scene.softness);
            out.sigma = scene.peak * occ;
            out.rgb = sigmoid3(2.0 * x[0], 2.0 * x[1], 2.0 * x[2]);
            break;
        }
        case SceneKind::Smoke: {
            // two overlapping blobs with textured, view-tinted albedo
            const double sa = scene.peak * soft(dist(x, {-0.35, 0.05, 0.1}), 0.45, scene.softness);
            const double sb = scene.peak * soft(dist(x, {0.4, -0.1, -0.2}), 0.32, scene.softness);
            const double ta = 0.5 * dir_dot(d, {0.6, 0.0, 0.8});
            const double tb = 0.5 * dir_dot(d, {-0.7071067811865476, 0.7071067811865476, 0.0});
            const double wave = 0.8 * std::sin(6.0 * x[0]) * std::cos(4.0 * x[2]);
            const Vec3d ca = sigmoid3(1.2 + wave + ta, -0.8 + 0.5 * wave + ta, -0.6 + ta);
            const double ring = 0.6 * std::cos(5.0 * x[1] + 3.0 * x[2]);
            const Vec3d cb = sigmoid3(-0.8 + tb, 0.2 + ring + tb, 1.2 - ring + tb);
            const double wa = sa + 1e-9, wb = sb + 1e-9;
            out.sigma = sa + sb;
            for (int c = 0; c < 3; ++c) out.rgb[c] = (wa * ca[c] + wb * cb[c]) / (wa + wb);
            break;
        }
        case SceneKind::Hdr: {
            // raw density sweeps from -31 (empty space) to +40 (interior)
            out.sigma = -31.0 + (scene.peak + 31.0) * soft(norm(x), 0.55, scene.softness);
            out.rgb = sigmoid3(1.5 * std::sin(4.0 * x[0]) + 0.3, 1.5 * std::cos(3.0 * x[1]) - 0.2,
                               1.2 * std::sin(5.0 * x[2] + 1.0));
            break;
        }
    }
    if (!inside) out.sigma = 0.0;
    return out;
}

PointEvaluator<double> scene_evaluator(const AnalyticScene& scene) {
    return [scene](const Matrix<double>& x, const Matrix<double>& d, std::vector<double>& sigma, Matrix<double>& rgb) {
        sigma.resize(x.rows);
        rgb.resize(x.rows, 3);
        for (std::size_t r = 0; r < x.rows; ++r) {
            const AnalyticSample s = analytic_eval(scene, {x(r, 0), x(r, 1), x(r, 2)}, {d(r, 0), d(r, 1), d(r, 2)});
            sigma[r] = s.sigma;
            for (int c = 0; c < 3; ++c) rgb(r, c) = s.rgb[c];
        }
    };
}

FieldPair bake_grid(const AnalyticScene& scene, int resolution, std::uint64_t seed) {
    FieldConfig cfg;
    cfg.arch = Arch::Grid;
    cfg.grid.resolution = {resolution, resolution, resolution};
    FieldPair field = init_field(cfg, seed);
    const auto& grid = std::get<GridField>(field.model);
    const std::size_t nb = sh_basis_size(grid.config().sh_degree);
    const double y00 = 0.28209479177387814;
    auto values = field.params.values("grid.payload");
    const double step = 2.0 / (resolution - 1);
    for (int i = 0; i < resolution; ++i) {
        for (int j = 0; j < resolution; ++j) {
            for (int k = 0; k < resolution; ++k) {
                const Vec3d x{-1.0 + i * step, -1.0 + j * step, -1.0 + k * step};
                // nodes on the cube faces are evaluated just inside so they keep the interior value
                Vec3d xi = x;
                for (double& v : xi) v = std::clamp(v, -1.0 + 1e-12, 1.0 - 1e-12);
                const AnalyticSample s = analytic_eval(scene, xi, {0.0, 0.0, 1.0});
                float* node = values.data() + grid.node_index(i, j, k) * grid.payload();
                node[0] = static_cast<float>(s.sigma);
                for (int c = 0; c < 3; ++c) {
                    const double p = std::clamp(s.rgb[c], 1e-6, 1.0 - 1e-6);
                    node[1 + c * nb] = static_cast<float>(std::log(p / (1.0 - p)) / y00);
                }
            }
        }
    }
    return field;
}

Camera orbit_camera(double azimuth, double elevation, double radius, int width, int height, double camera_angle_x) {
    const Vec3d eye{radius * std::cos(elevation) * std::cos(azimuth), radius * std::cos(elevation) * std::sin(azimuth),
                    radius * std::sin(elevation)};
    return Camera::look_at(eye, {0.0, 0.0, 0.0}, width, height, camera_angle_x);
}

void ViewSet::validate() const {
    require(images.empty() || images.size() == cameras.size(), ErrorKind::Shape,
            split + " views: image count does not match camera count");
    for (std::size_t i = 0; i < images.size(); ++i) {
        require(images[i].width == cameras[i].width && images[i].height == cameras[i].height, ErrorKind::Shape,
                split + " view " + std::to_string(i) + ": image size does not match camera");
    }
    for (const Camera& c : cameras) c.validate();
}

// ---------------------------------------------------------------------------
// Ground truth cache

namespace {

std::string cache_key(const AnalyticScene& scene, const Camera& cam, const RenderConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "gt-v1|" << scene.name << '|' << int(scene.kind) << '|' << scene.peak << '|' << scene.softness << '|'
       << cam.width << 'x' << cam.height << '|' << cam.fx << ',' << cam.fy << ',' << cam.cx << ',' << cam.cy;
    for (double v : cam.pose) os << ',' << v;
    os << '|' << cfg.n_samples << ',' << cfg.near << ',' << cfg.far << ',' << cfg.stratified;
    for (double v : cfg.background) os << ',' << v;
    return os.str();
}

std::uint64_t payload_hash(const std::vector<float>& data) {
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float)));
}

std::optional<Image> read_cached(const std::filesystem::path& path, const std::string& key) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::string stored_key;
    std::getline(in, stored_key, '\0');
    std::int32_t w = 0, h = 0;
    std::uint64_t hash = 0;
    in.read(reinterpret_cast<char*>(&w), sizeof w);
    in.read(reinterpret_cast<char*>(&h), sizeof h);
    in.read(reinterpret_cast<char*>(&hash), sizeof hash);
    if (!in || stored_key != key || w <= 0 || h <= 0) return std::nullopt;
    Image img(w, h, 3);
    in.read(reinterpret_cast<char*>(img.data.data()), std::streamsize(img.data.size() * sizeof(float)));
    if (!in || payload_hash(img.data) != hash) return std::nullopt;
    return img;
}

void write_cached(const std::filesystem::path& path, const std::string& key, const Image& img) {
    std::filesystem::create_directories(path.parent_path());
    // unique temp name per process so concurrent writers never share a file
    const std::filesystem::path tmp =
        path.string() + ".tmp" + std::to_string(std::hash<std::string>{}(key) ^ std::uint64_t(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary);
        require(bool(out), ErrorKind::Io, "cannot write ground-truth cache " + tmp.string());
        out.write(key.c_str(), std::streamsize(key.size() + 1));
        const std::int32_t w = img.width, h = img.height;
        const std::uint64_t hash = payload_hash(img.data);
        out.write(reinterpret_cast<const char*>(&w), sizeof w);
        out.write(reinterpret_cast<const char*>(&h), sizeof h);
        out.write(reinterpret_cast<const char*>(&hash), sizeof hash);
        out.write(reinterpret_cast<const char*>(img.data.data()), std::streamsize(img.data.size() * sizeof(float)));
        require(bool(out), ErrorKind::Io, "write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

Image render_ground_truth(const AnalyticScene& scene, const Camera& cam, const RenderConfig& cfg,
                          GroundTruthCache* cache) {
    const std::string key = cache_key(scene, cam, cfg);
    std::filesystem::path path;
    if (cache != nullptr && !cache->dir.empty()) {
        char name[32];
        std::snprintf(name, sizeof name, "%016llx.gt", static_cast<unsigned long long>(fnv1a64(key)));
        path = cache->dir / name;
        if (auto hit = read_cached(path, key)) {
            ++cache->hits;
            return *hit;
        }
        ++cache->misses;
    }
    Image img = render_image(scene_evaluator(scene), cam, cfg, 0).rgb;
    if (!path.empty()) write_cached(path, key, img);
    return img;
}

// ---------------------------------------------------------------------------

namespace {

ViewSet analytic_views(const AnalyticScene& scene, const SceneSetup& setup, const RenderConfig& render,
                       const std::string& split, int count, GroundTruthCache& cache) {
    ViewSet views;
    views.split = split;
    views.camera_angle_x = setup.camera_angle_x;
    Rng rng = Rng::stream(setup.pose_seed, "poses/" + split);
    const double lo = setup.elevation_min_deg * M_PI / 180.0;
    const double hi = setup.elevation_max_deg * M_PI / 180.0;
    RenderConfig gt = render;
    gt.n_samples = setup.gt_samples;
    gt.stratified = false;
    for (int i = 0; i < count; ++i) {
        const double az = rng.uniform(0.0, 2.0 * M_PI);
        const double el = rng.uniform(lo, hi);
        views.cameras.push_back(orbit_camera(az, el, setup.radius, setup.width, setup.height, setup.camera_angle_x));
        views.images.push_back(render_ground_truth(scene, views.cameras.back(), gt, &cache));
    }
    return views;
}

}  // namespace

SceneData load_scene(const std::string& name_or_path, const SceneSetup& setup, const RenderConfig& render) {
    SceneData data;
    data.name = name_or_path;
    const auto names = scene_names();
    if (std::find(names.begin(), names.end(), name_or_path) != names.end()) {
        data.analytic = make_scene(name_or_path);
        GroundTruthCache cache{setup.cache_dir};
        data.train = analytic_views(*data.analytic, setup, render, "train", setup.n_train, cache);
        data.test = analytic_views(*data.analytic, setup, render, "test", setup.n_test, cache);
        return data;
    }
    const std::filesystem::path dir(name_or_path);
    require(std::filesystem::is_directory(dir), ErrorKind::Io,
            "scene '" + name_or_path + "' is neither a built-in scene nor a dataset directory");
    data.train = load_transforms_dataset(dir, "train");
    data.test = load_transforms_dataset(dir, "test");
    return data;
}

}  // namespace pvd
