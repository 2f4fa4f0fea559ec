#include "pvd/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "pvd/json_util.hpp"
#include "pvd/optim.hpp"
#include "pvd/rng.hpp"

namespace pvd {

using nlohmann::json;
using detail::check_keys;
using detail::read_opt;

// ---------------------------------------------------------------------------
// Config

void DistillConfig::validate() const {
    require(total_steps >= 0 && stage1_steps >= 0 && stage2_steps >= 0, ErrorKind::Config,
            "distill: step counts must be non-negative");
    require(stage1_steps + stage2_steps <= total_steps, ErrorKind::Config,
            "distill: stage1_steps + stage2_steps exceeds total_steps");
    require(weights.w1 >= 0 && weights.w2 >= 0 && weights.w3 >= 0 && weights.w4 >= 0 && weights.w5 >= 0,
            ErrorKind::Config, "distill: loss weights must be non-negative");
    require(clip.a < clip.b, ErrorKind::Config, "distill: density clip needs a < b");
    require(batch_rays >= 1 && batch_points >= 1, ErrorKind::Config, "distill: batch sizes must be positive");
    require(tv_rate >= 0 && l1_rate >= 0 && lr > 0, ErrorKind::Config, "distill: rates must be non-negative");
    require(poses.radius > 0 && poses.width > 0 && poses.height > 0, ErrorKind::Config, "distill: bad pseudo poses");
    render.validate();
}

int DistillConfig::stage_of(int step) const {
    if (step < stage1_steps) return 1;
    if (step < stage1_steps + stage2_steps) return 2;
    return 3;
}

json to_json(const RenderConfig& cfg) {
    return {{"n_samples", cfg.n_samples}, {"near", cfg.near},       {"far", cfg.far},
            {"stratified", cfg.stratified}, {"background", cfg.background}, {"threads", cfg.threads}};
}

RenderConfig render_config_from_json(const json& j, RenderConfig base) {
    check_keys(j, {"n_samples", "near", "far", "stratified", "background", "threads"}, "render");
    read_opt(j, "n_samples", base.n_samples);
    read_opt(j, "near", base.near);
    read_opt(j, "far", base.far);
    read_opt(j, "stratified", base.stratified);
    read_opt(j, "background", base.background);
    read_opt(j, "threads", base.threads);
    return base;
}

json to_json(const DistillConfig& cfg) {
    const auto& w = cfg.weights;
    return {{"weights", {w.w1, w.w2, w.w3, w.w4, w.w5}},
            {"clip", {cfg.clip.a, cfg.clip.b}},
            {"use_clip", cfg.use_clip},
            {"total_steps", cfg.total_steps},
            {"stage1_steps", cfg.stage1_steps},
            {"stage2_steps", cfg.stage2_steps},
            {"batch_rays", cfg.batch_rays},
            {"batch_points", cfg.batch_points},
            {"tv_rate", cfg.tv_rate},
            {"l1_rate", cfg.l1_rate},
            {"lr", cfg.lr},
            {"lr_decay", cfg.lr_decay},
            {"seed", cfg.seed},
            {"point_mode", cfg.point_mode == PointMode::Uniform ? "uniform" : "rays"},
            {"poses",
             {{"radius", cfg.poses.radius},
              {"elevation_min_deg", cfg.poses.elevation_min_deg},
              {"elevation_max_deg", cfg.poses.elevation_max_deg},
              {"camera_angle_x", cfg.poses.camera_angle_x},
              {"width", cfg.poses.width},
              {"height", cfg.poses.height}}},
            {"render", to_json(cfg.render)}};
}

DistillConfig distill_config_from_json(const json& j, DistillConfig cfg) {
    check_keys(j,
               {"weights", "clip", "use_clip", "total_steps", "stage1_steps", "stage2_steps", "batch_rays",
                "batch_points", "tv_rate", "l1_rate", "lr", "lr_decay", "seed", "point_mode", "poses", "render"},
               "distill");
    try {
        if (j.contains("weights")) {
            const auto w = j.at("weights").get<std::vector<double>>();
            require(w.size() == 5, ErrorKind::Config, "distill.weights needs 5 entries");
            cfg.weights = {w[0], w[1], w[2], w[3], w[4]};
        }
        if (j.contains("clip")) {
            const auto c = j.at("clip").get<std::vector<float>>();
            require(c.size() == 2, ErrorKind::Config, "distill.clip needs [a, b]");
            cfg.clip = {c[0], c[1]};
        }
        read_opt(j, "use_clip", cfg.use_clip);
        read_opt(j, "total_steps", cfg.total_steps);
        read_opt(j, "stage1_steps", cfg.stage1_steps);
        read_opt(j, "stage2_steps", cfg.stage2_steps);
        read_opt(j, "batch_rays", cfg.batch_rays);
        read_opt(j, "batch_points", cfg.batch_points);
        read_opt(j, "tv_rate", cfg.tv_rate);
        read_opt(j, "l1_rate", cfg.l1_rate);
        read_opt(j, "lr", cfg.lr);
        read_opt(j, "lr_decay", cfg.lr_decay);
        read_opt(j, "seed", cfg.seed);
        if (j.contains("point_mode")) {
            const auto m = j.at("point_mode").get<std::string>();
            require(m == "uniform" || m == "rays", ErrorKind::Config, "distill.point_mode must be uniform or rays");
            cfg.point_mode = m == "uniform" ? PointMode::Uniform : PointMode::Rays;
        }
        if (j.contains("poses")) {
            const json& p = j.at("poses");
            check_keys(p, {"radius", "elevation_min_deg", "elevation_max_deg", "camera_angle_x", "width", "height"},
                       "distill.poses");
            read_opt(p, "radius", cfg.poses.radius);
            read_opt(p, "elevation_min_deg", cfg.poses.elevation_min_deg);
            read_opt(p, "elevation_max_deg", cfg.poses.elevation_max_deg);
            read_opt(p, "camera_angle_x", cfg.poses.camera_angle_x);
            read_opt(p, "width", cfg.poses.width);
            read_opt(p, "height", cfg.poses.height);
        }
        if (j.contains("render")) cfg.render = render_config_from_json(j.at("render"), cfg.render);
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("distill config: ") + e.what());
    }
    return cfg;
}

json to_json(const TrainConfig& cfg) {
    return {{"steps", cfg.steps},     {"batch_rays", cfg.batch_rays}, {"lr", cfg.lr},
            {"lr_decay", cfg.lr_decay}, {"tv_rate", cfg.tv_rate},       {"l1_rate", cfg.l1_rate},
            {"seed", cfg.seed},       {"render", to_json(cfg.render)}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig cfg) {
    check_keys(j, {"steps", "batch_rays", "lr", "lr_decay", "tv_rate", "l1_rate", "seed", "render"}, "train");
    try {
        read_opt(j, "steps", cfg.steps);
        read_opt(j, "batch_rays", cfg.batch_rays);
        read_opt(j, "lr", cfg.lr);
        read_opt(j, "lr_decay", cfg.lr_decay);
        read_opt(j, "tv_rate", cfg.tv_rate);
        read_opt(j, "l1_rate", cfg.l1_rate);
        read_opt(j, "seed", cfg.seed);
        if (j.contains("render")) cfg.render = render_config_from_json(j.at("render"), cfg.render);
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("train config: ") + e.what());
    }
    return cfg;
}

double total_loss(const LossParts& parts, const DistillConfig& cfg, int stage, Arch student) {
    return total_loss(parts, cfg.weights, stage, student);
}

// ---------------------------------------------------------------------------
// Pseudo data

std::vector<Camera> pseudo_poses(int n, const PseudoPoseConfig& cfg, std::uint64_t seed) {
    require(n >= 1, ErrorKind::InvalidInput, "pseudo_poses: n must be >= 1");
    require(cfg.elevation_min_deg <= cfg.elevation_max_deg, ErrorKind::Config,
            "pseudo_poses: elevation range is reversed");
    Rng rng(seed);
    const double lo = cfg.elevation_min_deg * M_PI / 180.0;
    const double hi = cfg.elevation_max_deg * M_PI / 180.0;
    std::vector<Camera> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double az = rng.uniform(0.0, 2.0 * M_PI);
        const double el = rng.uniform(lo, hi);
        out.push_back(orbit_camera(az, el, cfg.radius, cfg.width, cfg.height, cfg.camera_angle_x));
    }
    return out;
}

PointBatch sample_points(std::size_t n, std::uint64_t seed, PointMode mode, const PseudoPoseConfig& poses,
                         const RenderConfig& render) {
    require(n >= 1, ErrorKind::InvalidInput, "sample_points: n must be >= 1");
    Rng rng(seed);
    PointBatch batch;
    batch.x.resize(n, 3);
    batch.d.resize(n, 3);
    if (mode == PointMode::Uniform) {
        for (std::size_t r = 0; r < n; ++r) {
            for (int a = 0; a < 3; ++a) batch.x(r, a) = static_cast<float>(rng.uniform(-1.0, 1.0));
            const Vec3d d = rng.unit_vector();
            for (int a = 0; a < 3; ++a) batch.d(r, a) = static_cast<float>(d[a]);
        }
        return batch;
    }
    std::size_t filled = 0;
    std::size_t attempts = 0;
    while (filled < n) {
        require(++attempts < 1000 * n + 1000, ErrorKind::Numerical, "sample_points: pseudo rays miss the scene box");
        const Camera cam = pseudo_poses(1, poses, rng.next_u64())[0];
        const int i = static_cast<int>(rng.below(cam.width));
        const int j = static_cast<int>(rng.below(cam.height));
        const Ray<double> ray = ray_for_pixel(cam, i, j, std::array<double, 2>{rng.uniform(), rng.uniform()});
        const double t = rng.uniform(render.near, render.far);
        const Vec3d x{ray.o[0] + t * ray.d[0], ray.o[1] + t * ray.d[1], ray.o[2] + t * ray.d[2]};
        const Vec3f xf = vec_cast<float>(x);
        if (!inside_unit_cube(xf)) continue;
        for (int a = 0; a < 3; ++a) {
            batch.x(filled, a) = xf[a];
            batch.d(filled, a) = static_cast<float>(ray.d[a]);
        }
        ++filled;
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Reports

json to_json(const StepRecord& r) {
    return {{"step", r.step},         {"stage", r.stage},         {"loss_v", r.loss_v},
            {"loss_sigma", r.loss_sigma}, {"loss_color", r.loss_color}, {"loss_rgb", r.loss_rgb},
            {"loss_reg", r.loss_reg},   {"total", r.total},         {"lr", r.lr},
            {"wall_ms", r.wall_ms}};
}

std::array<double, 3> StageReport::median_step_ms() const {
    std::array<double, 3> out{0.0, 0.0, 0.0};
    for (int s = 1; s <= 3; ++s) {
        std::vector<double> t;
        for (const StepRecord& r : steps) {
            if (r.stage == s) t.push_back(r.wall_ms);
        }
        if (t.empty()) continue;
        std::sort(t.begin(), t.end());
        const std::size_t m = t.size() / 2;
        out[s - 1] = t.size() % 2 == 1 ? t[m] : 0.5 * (t[m - 1] + t[m]);
    }
    return out;
}

void StageReport::write_ndjson(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    require(bool(out), ErrorKind::Io, "cannot write log " + path.string());
    for (const StepRecord& r : steps) out << to_json(r).dump() << '\n';
    require(bool(out), ErrorKind::Io, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void add_into(Matrix<float>& dst, const Matrix<float>& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

void require_zero_grads(const FieldPair& teacher) {
    for (float g : teacher.params.grads()) {
        require(g == 0.0f, ErrorKind::Contract, "distill: gradient reached the teacher parameters");
    }
}

void check_finite(double v, const char* what, int step) {
    if (!std::isfinite(v)) {
        fail(ErrorKind::Numerical, std::string(what) + " became non-finite at step " + std::to_string(step));
    }
}

/// One ray per camera, through a random jittered pixel.
std::vector<Ray<float>> random_camera_rays(const std::vector<Camera>& cams, Rng& rng) {
    std::vector<Ray<float>> rays(cams.size());
    for (std::size_t r = 0; r < cams.size(); ++r) {
        const Camera& cam = cams[r];
        const int i = static_cast<int>(rng.below(cam.width));
        const int j = static_cast<int>(rng.below(cam.height));
        const Ray<double> ray = ray_for_pixel(cam, i, j, std::array<double, 2>{rng.uniform(), rng.uniform()});
        rays[r] = Ray<float>{vec_cast<float>(ray.o), vec_cast<float>(ray.d)};
    }
    return rays;
}

}  // namespace

DistillResult distill(const FieldPair& teacher, const FieldConfig& student_cfg, const DistillConfig& cfg,
                      const ProgressFn& progress, int eval_every) {
    cfg.validate();
    require_zero_grads(teacher);
    FieldPair student = init_field(student_cfg, cfg.seed);
    FeatureAdapter adapter = FeatureAdapter::between(teacher, student, cfg.seed);
    AdamState opt(student.params.size(), cfg.lr);
    AdamState adapter_opt(adapter.params().size(), cfg.lr);

    const Arch arch = student.arch();
    const bool feature_term = arch != Arch::Grid;
    const DensityClip clip = cfg.use_clip ? cfg.clip : no_clip();
    const std::uint64_t point_base = Rng::stream(cfg.seed, "sampling").next_u64();
    const std::uint64_t pose_base = Rng::stream(cfg.seed, "poses").next_u64();
    const auto tp = teacher.params.values();
    const auto& w = cfg.weights;

    StageReport report;
    report.steps.reserve(cfg.total_steps);
    for (int step = 0; step < cfg.total_steps; ++step) {
        const auto t0 = Clock::now();
        const int stage = cfg.stage_of(step);
        const double lr = cfg.lr_decay ? lr_schedule(step, cfg.total_steps, cfg.lr) : cfg.lr;
        opt.lr = lr;
        adapter_opt.lr = lr;
        StepRecord rec;
        rec.step = step;
        rec.stage = stage;
        rec.lr = lr;
        LossParts parts;
        const auto sp = std::span<const float>(student.params.values());
        auto grad = student.params.grads();

        const PointBatch pts =
            sample_points(cfg.batch_points, splitmix64(point_base ^ std::uint64_t(step)), cfg.point_mode, cfg.poses,
                          cfg.render);
        Matrix<float> ft, fs;
        Tape<float> tape1;
        field_phi1<float>(teacher.model, tp, pts.x, ft, nullptr);
        field_phi1<float>(student.model, sp, pts.x, fs, &tape1);
        Matrix<float> dfs(fs.rows, fs.cols);

        if (feature_term) {
            Matrix<float> mapped, din;
            adapter.forward(fs, mapped);
            Matrix<float> dmapped(mapped.rows, mapped.cols);
            rec.loss_v = feature_loss<float>(ft, mapped, &dmapped, static_cast<float>(w.w1));
            adapter.backward(fs, dmapped, din);
            add_into(dfs, din);
            parts.v = rec.loss_v;
        }
        if (stage >= 2 || !feature_term) {
            std::vector<float> sig_t, sig_s;
            Matrix<float> col_t, col_s;
            Tape<float> tape2;
            field_phi2<float>(teacher.model, tp, ft, pts.d, sig_t, col_t, nullptr);
            field_phi2<float>(student.model, sp, fs, pts.d, sig_s, col_s, &tape2);
            std::vector<float> dsig(sig_s.size(), 0.0f);
            Matrix<float> dcol(col_s.rows, 3), dfeat;
            rec.loss_sigma = density_loss<float>(sig_t, sig_s, clip, dsig, static_cast<float>(w.w2));
            rec.loss_color = color_loss<float>(col_t, col_s, &dcol, static_cast<float>(w.w3));
            field_phi2_backward<float>(student.model, sp, fs, pts.d, tape2, dsig, dcol, grad, &dfeat);
            add_into(dfs, dfeat);
            parts.sigma = rec.loss_sigma;
            parts.color = rec.loss_color;
        }
        field_phi1_backward<float>(student.model, sp, pts.x, tape1, dfs, grad);

        if (stage == 3) {
            const std::uint64_t key = splitmix64(pose_base ^ std::uint64_t(step));
            // a fresh orbit pose for every ray
            const auto cams = pseudo_poses(cfg.batch_rays, cfg.poses, key);
            Rng ray_rng(splitmix64(key + 1));
            const auto rays = random_camera_rays(cams, ray_rng);
            const std::uint64_t ray_seed = ray_rng.next_u64();
            const auto target =
                render_rays<float>(field_evaluator<float>(teacher.model, tp), rays, cfg.render, ray_seed).rgb;
            Matrix<float> pix;
            render_mse_backward<float>(student.model, sp, grad, rays, target, cfg.render, ray_seed,
                                       static_cast<float>(w.w4), &pix);
            rec.loss_rgb = rgb_loss<float>(target, pix);
            parts.rgb = rec.loss_rgb;
        }
        if (has_regularizer(arch)) {
            rec.loss_reg =
                arch_regularizer<float>(student.model, sp, cfg.tv_rate, cfg.l1_rate, grad, static_cast<float>(w.w5));
            parts.reg = rec.loss_reg;
        }
        rec.total = total_loss(parts, cfg, stage, arch);
        check_finite(rec.total, "distillation loss", step);

        adam_step(student.params, opt);
        if (!adapter.is_identity()) adam_step(adapter.params(), adapter_opt);
        rec.wall_ms = ms_since(t0);
        report.steps.push_back(rec);
        if (progress && eval_every > 0 && ((step + 1) % eval_every == 0 || step + 1 == cfg.total_steps)) {
            progress(step + 1, student);
        }
    }
    require_zero_grads(teacher);
    return DistillResult{std::move(student), std::move(report)};
}

TrainResult train_from_scratch(const ViewSet& train, const FieldConfig& field_cfg, const TrainConfig& cfg,
                               const ProgressFn& progress, int eval_every, const FieldPair* init) {
    train.validate();
    require(!train.images.empty(), ErrorKind::InvalidInput, "train_from_scratch: training views carry no images");
    require(cfg.steps >= 0 && cfg.batch_rays >= 1 && cfg.lr > 0, ErrorKind::Config, "train: bad step/batch/lr");
    cfg.render.validate();
    FieldPair field = init_field(field_cfg, cfg.seed);
    if (init != nullptr) {
        require(init->params.layout() == field.params.layout(), ErrorKind::Config,
                "train: warm-start checkpoint does not match the field config");
        std::copy(init->params.values().begin(), init->params.values().end(), field.params.values().begin());
    }
    AdamState opt(field.params.size(), cfg.lr);
    const Arch arch = field.arch();

    // every training pixel's ray and color, flattened
    std::vector<Ray<float>> all_rays;
    std::vector<Vec3f> all_colors;
    for (std::size_t v = 0; v < train.cameras.size(); ++v) {
        const Camera& cam = train.cameras[v];
        for (int j = 0; j < cam.height; ++j) {
            for (int i = 0; i < cam.width; ++i) {
                const Ray<double> r = ray_for_pixel(cam, i, j);
                all_rays.push_back({vec_cast<float>(r.o), vec_cast<float>(r.d)});
                const Image& img = train.images[v];
                all_colors.push_back({img.at(i, j, 0), img.at(i, j, 1), img.at(i, j, 2)});
            }
        }
    }
    const std::uint64_t base = Rng::stream(cfg.seed, "sampling").next_u64();
    StageReport report;
    report.steps.reserve(cfg.steps);
    std::vector<Ray<float>> rays(cfg.batch_rays);
    Matrix<float> target(cfg.batch_rays, 3);
    for (int step = 0; step < cfg.steps; ++step) {
        const auto t0 = Clock::now();
        const double lr = cfg.lr_decay ? lr_schedule(step, cfg.steps, cfg.lr) : cfg.lr;
        opt.lr = lr;
        Rng rng(splitmix64(base ^ std::uint64_t(step)));
        for (int r = 0; r < cfg.batch_rays; ++r) {
            const std::size_t k = rng.below(all_rays.size());
            rays[r] = all_rays[k];
            for (int c = 0; c < 3; ++c) target(r, c) = all_colors[k][c];
        }
        const std::uint64_t ray_seed = rng.next_u64();
        const auto sp = std::span<const float>(field.params.values());
        auto grad = field.params.grads();
        StepRecord rec;
        rec.step = step;
        rec.lr = lr;
        rec.loss_rgb =
            render_mse_backward<float>(field.model, sp, grad, rays, target, cfg.render, ray_seed, 1.0f, nullptr);
        if (has_regularizer(arch)) {
            rec.loss_reg = arch_regularizer<float>(field.model, sp, cfg.tv_rate, cfg.l1_rate, grad, 1.0f);
        }
        rec.total = rec.loss_rgb + rec.loss_reg;
        check_finite(rec.total, "training loss", step);
        adam_step(field.params, opt);
        rec.wall_ms = ms_since(t0);
        report.steps.push_back(rec);
        if (progress && eval_every > 0 && ((step + 1) % eval_every == 0 || step + 1 == cfg.steps)) {
            progress(step + 1, field);
        }
    }
    return TrainResult{std::move(field), std::move(report)};
}

}  // namespace pvd
