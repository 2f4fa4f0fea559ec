#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvd/fields.hpp"
#include "pvd/image.hpp"
#include "pvd/renderer.hpp"

namespace pvd {

enum class SceneKind { Fog, SoftSphere, Box, Smoke, Hdr };

/// Closed-form density and color on [-1,1]^3.
struct AnalyticScene {
    std::string name;
    SceneKind kind = SceneKind::Smoke;
    double peak = 20.0;      // density scale (fog: the constant density)
    double softness = 0.04;  // edge width of the sigmoid falloff
};

struct AnalyticSample {
    double sigma = 0.0;
    Vec3d rgb{0.5, 0.5, 0.5};
};

/// Known names: fog, soft_sphere, box, smoke, hdr.
AnalyticScene make_scene(const std::string& name);
std::vector<std::string> scene_names();

/// Exact sigma and color; sigma is 0 outside the cube. `d` need not be normalized.
AnalyticSample analytic_eval(const AnalyticScene& scene, const Vec3d& x, const Vec3d& d);

PointEvaluator<double> scene_evaluator(const AnalyticScene& scene);

/// Dense grid whose nodes carry the scene density and a degree-0 SH color fit. Only
/// meaningful for view-independent scenes (hdr, fog, soft_sphere, box).
FieldPair bake_grid(const AnalyticScene& scene, int resolution, std::uint64_t seed = 0);

/// Orbit camera at the given azimuth/elevation (radians) looking at the origin.
Camera orbit_camera(double azimuth, double elevation, double radius, int width, int height, double camera_angle_x);

struct ViewSet {
    std::string split;
    std::vector<Camera> cameras;
    std::vector<Image> images;  // empty or one per camera
    double camera_angle_x = 0.6911112070083618;

    void validate() const;
};

struct GroundTruthCache {
    std::filesystem::path dir;  // empty disables caching
    std::size_t hits = 0;
    std::size_t misses = 0;
};

/// High sample-count render of an analytic scene. With a cache directory, results are stored
/// under a content hash of (scene, camera, config) and verified on reload.
Image render_ground_truth(const AnalyticScene& scene, const Camera& cam, const RenderConfig& cfg,
                          GroundTruthCache* cache = nullptr);

struct SceneSetup {
    int width = 128;
    int height = 128;
    int n_train = 20;
    int n_test = 10;
    int gt_samples = 1024;
    double radius = 4.0;
    double elevation_min_deg = -30.0;
    double elevation_max_deg = 80.0;
    double camera_angle_x = 0.6911112070083618;
    std::uint64_t pose_seed = 0;
    std::filesystem::path cache_dir;
};

/// Train/test views of a scene: an analytic scene name (rendered and cached) or a directory
/// in the transforms layout.
struct SceneData {
    std::string name;
    std::optional<AnalyticScene> analytic;
    ViewSet train;
    ViewSet test;
};

SceneData load_scene(const std::string& name_or_path, const SceneSetup& setup, const RenderConfig& render);

}  // namespace pvd
