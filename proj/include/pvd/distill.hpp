#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvd/losses.hpp"
#include "pvd/renderer.hpp"
#include "pvd/scenes.hpp"

namespace pvd {

enum class PointMode { Uniform, Rays };

struct PseudoPoseConfig {
    double radius = 4.0;
    double elevation_min_deg = -30.0;
    double elevation_max_deg = 80.0;
    double camera_angle_x = 0.6911112070083618;
    int width = 128;
    int height = 128;
};

struct DistillConfig {
    LossWeights weights;
    DensityClip clip;
    bool use_clip = true;
    int total_steps = 20000;
    int stage1_steps = 3000;
    int stage2_steps = 5000;
    int batch_rays = 4096;
    int batch_points = 1 << 14;
    double tv_rate = 1e-5;
    double l1_rate = 1e-4;
    double lr = 0.02;
    bool lr_decay = true;
    std::uint64_t seed = 0;
    PointMode point_mode = PointMode::Uniform;
    PseudoPoseConfig poses;
    RenderConfig render{64, 2.0, 6.0, true, {1.0, 1.0, 1.0}, 1};

    /// Throws Config when stage1 + stage2 > total or a weight is negative.
    void validate() const;
    /// Stage (1, 2 or 3) of a zero-based step.
    int stage_of(int step) const;
};

nlohmann::json to_json(const RenderConfig& cfg);
RenderConfig render_config_from_json(const nlohmann::json& j, RenderConfig base = {});

nlohmann::json to_json(const DistillConfig& cfg);
/// Keys missing from `j` keep the values of `base`; unknown keys are rejected.
DistillConfig distill_config_from_json(const nlohmann::json& j, DistillConfig base = {});

double total_loss(const LossParts& parts, const DistillConfig& cfg, int stage, Arch student);

/// Look-at cameras on a sphere of `radius` around the origin: azimuth uniform in [0, 2pi),
/// elevation uniform in the configured range.
std::vector<Camera> pseudo_poses(int n, const PseudoPoseConfig& cfg, std::uint64_t seed);

/// x uniform in [-1,1]^3 and d uniform on the sphere, or (Rays mode) x drawn along random
/// pseudo-camera rays and d the ray direction.
PointBatch sample_points(std::size_t n, std::uint64_t seed, PointMode mode = PointMode::Uniform,
                         const PseudoPoseConfig& poses = {}, const RenderConfig& render = {});

struct StepRecord {
    int step = 0;
    int stage = 0;
    double loss_v = 0.0;
    double loss_sigma = 0.0;
    double loss_color = 0.0;
    double loss_rgb = 0.0;
    double loss_reg = 0.0;
    double total = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

nlohmann::json to_json(const StepRecord& rec);

struct StageReport {
    std::vector<StepRecord> steps;
    /// Median wall time per step for stages 1..3 (0 when a stage did not run).
    std::array<double, 3> median_step_ms() const;
    void write_ndjson(const std::filesystem::path& path) const;
};

/// Called every `eval_every` steps (and after the last step) with the number of completed steps.
using ProgressFn = std::function<void(int steps_done, const FieldPair& field)>;

struct DistillResult {
    FieldPair student;
    StageReport report;
};

/// Three-stage distillation of `teacher` into a fresh student built from `student_cfg`.
/// The teacher is never written; a non-zero teacher gradient raises Contract.
DistillResult distill(const FieldPair& teacher, const FieldConfig& student_cfg, const DistillConfig& cfg,
                      const ProgressFn& progress = {}, int eval_every = 0);

struct TrainConfig {
    int steps = 2000;
    int batch_rays = 4096;
    double lr = 0.02;
    bool lr_decay = true;
    double tv_rate = 1e-5;
    double l1_rate = 1e-4;
    std::uint64_t seed = 0;
    RenderConfig render{64, 2.0, 6.0, true, {1.0, 1.0, 1.0}, 1};
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct TrainResult {
    FieldPair field;
    StageReport report;  // loss_rgb holds the render MSE, loss_reg the regularizer
};

/// Render-MSE training on random rays drawn from the training views. With `init` the run is
/// warm-started from those parameters (its config must match `field_cfg`).
TrainResult train_from_scratch(const ViewSet& train, const FieldConfig& field_cfg, const TrainConfig& cfg,
                               const ProgressFn& progress = {}, int eval_every = 0,
                               const FieldPair* init = nullptr);

}  // namespace pvd
