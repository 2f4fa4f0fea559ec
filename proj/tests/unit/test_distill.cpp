#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "pvd/distill.hpp"
#include "pvd/metrics.hpp"
#include "pvd/rng.hpp"
#include "pvd/scenes.hpp"

using namespace pvd;

namespace {

bool throws_kind(ErrorKind kind, auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind() == kind;
    }
    return false;
}

FieldConfig tiny(Arch arch) {
    FieldConfig cfg;
    cfg.arch = arch;
    cfg.mlp.depth = 4;
    cfg.mlp.width = 32;
    cfg.mlp.split_k = 2;
    cfg.mlp.dir_branch_width = 16;
    cfg.mlp.pos.num_freqs = 4;
    cfg.mlp.dir.num_freqs = 2;
    cfg.grid.resolution = {12, 12, 12};
    cfg.grid.sh_degree = 1;
    cfg.vm.resolution = 12;
    cfg.vm.density_per_pair = 2;
    cfg.vm.appearance_per_pair = 3;
    cfg.vm.decoder_width = 16;
    cfg.hash.hash.table_size = 1u << 12;
    cfg.hash.hash.levels = 4;
    cfg.hash.hash.max_resolution = 32;
    cfg.hash.decoder_width = 16;
    return cfg;
}

DistillConfig short_run(int total, int s1, int s2) {
    DistillConfig cfg;
    cfg.total_steps = total;
    cfg.stage1_steps = s1;
    cfg.stage2_steps = s2;
    cfg.batch_rays = 64;
    cfg.batch_points = 256;
    cfg.render.n_samples = 24;
    cfg.poses.width = 16;
    cfg.poses.height = 16;
    cfg.seed = 3;
    return cfg;
}

ViewSet tiny_views(const AnalyticScene& scene, int n) {
    ViewSet v;
    v.split = "train";
    RenderConfig gt;
    gt.n_samples = 64;
    for (int i = 0; i < n; ++i) {
        v.cameras.push_back(orbit_camera(2.0 * M_PI * i / n, 0.3, 4.0, 12, 12, v.camera_angle_x));
        v.images.push_back(render_ground_truth(scene, v.cameras.back(), gt));
    }
    return v;
}

const FieldPair& teacher() {
    static const FieldPair t = bake_grid(make_scene("soft_sphere"), 12, 0);
    return t;
}

}  // namespace

TEST_CASE("stage schedule and config validation") {
    DistillConfig cfg;
    CHECK(cfg.stage_of(0) == 1);
    CHECK(cfg.stage_of(2999) == 1);
    CHECK(cfg.stage_of(3000) == 2);
    CHECK(cfg.stage_of(7999) == 2);
    CHECK(cfg.stage_of(8000) == 3);
    CHECK(cfg.batch_rays == 4096);
    CHECK(cfg.clip.a == -2.0f);
    CHECK(cfg.clip.b == 7.0f);
    cfg.validate();
    cfg.stage2_steps = 17001;
    CHECK(throws_kind(ErrorKind::Config, [&] { cfg.validate(); }));
    cfg.stage2_steps = 5000;
    cfg.weights.w3 = -1.0;
    CHECK(throws_kind(ErrorKind::Config, [&] { cfg.validate(); }));
}

TEST_CASE("distill config json round trip") {
    DistillConfig cfg = short_run(40, 10, 10);
    cfg.use_clip = false;
    cfg.point_mode = PointMode::Rays;
    const DistillConfig back = distill_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
    auto j = to_json(cfg);
    j["surprise"] = true;
    CHECK(throws_kind(ErrorKind::Config, [&] { distill_config_from_json(j); }));
    const TrainConfig tc;
    CHECK(to_json(train_config_from_json(to_json(tc))) == to_json(tc));
}

TEST_CASE("pseudo poses") {
    const PseudoPoseConfig cfg;
    const auto a = pseudo_poses(64, cfg, 5);
    const auto b = pseudo_poses(64, cfg, 5);
    REQUIRE(a.size() == 64);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].pose == b[i].pose);
        a[i].validate();
        const Vec3d c = a[i].center();
        CHECK(std::abs(norm(c) - 4.0) <= 1e-9);
        const double elev = std::asin(c[2] / norm(c)) * 180.0 / M_PI;
        CHECK(elev >= -30.0 - 1e-9);
        CHECK(elev <= 80.0 + 1e-9);
        // the optical axis passes through the origin
        const Vec3d f = a[i].forward();
        const double along = -dot(c, f);
        for (int k = 0; k < 3; ++k) CHECK(std::abs(c[k] + along * f[k]) <= 1e-6);
    }
    CHECK(pseudo_poses(4, cfg, 6)[0].pose != a[0].pose);
}

TEST_CASE("point sampling") {
    const PointBatch p = sample_points(100000, 9);
    const PointBatch q = sample_points(100000, 9);
    CHECK(p.x.data == q.x.data);
    CHECK(p.d.data == q.d.data);
    Vec3d mean{0, 0, 0};
    for (std::size_t r = 0; r < p.size(); ++r) {
        Vec3d x{p.x(r, 0), p.x(r, 1), p.x(r, 2)};
        CHECK(inside_unit_cube(x));
        for (int a = 0; a < 3; ++a) mean[a] += x[a];
        const double n = std::sqrt(double(p.d(r, 0)) * p.d(r, 0) + double(p.d(r, 1)) * p.d(r, 1) + double(p.d(r, 2)) * p.d(r, 2));
        CHECK(std::abs(n - 1.0) <= 1e-6);
    }
    // uniform on [-1,1]: variance 1/3, so the mean has standard error sqrt(1/3n)
    const double se = std::sqrt(1.0 / (3.0 * p.size()));
    for (int a = 0; a < 3; ++a) CHECK(std::abs(mean[a] / p.size()) <= 3.0 * se);

    const PointBatch r = sample_points(2000, 1, PointMode::Rays);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(inside_unit_cube(Vec3d{r.x(i, 0), r.x(i, 1), r.x(i, 2)}));
}

TEST_CASE("distillation leaves the teacher untouched and is deterministic") {
    const auto before = std::vector<float>(teacher().params.values().begin(), teacher().params.values().end());
    const DistillConfig cfg = short_run(12, 4, 4);
    const auto a = distill(teacher(), tiny(Arch::Hash), cfg);
    const auto b = distill(teacher(), tiny(Arch::Hash), cfg);
    CHECK(std::equal(before.begin(), before.end(), teacher().params.values().begin()));
    CHECK(std::equal(a.student.params.values().begin(), a.student.params.values().end(),
                     b.student.params.values().begin()));
    REQUIRE(a.report.steps.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) {
        const auto& rec = a.report.steps[i];
        CHECK(rec.step == int(i));
        CHECK(rec.stage == cfg.stage_of(int(i)));
        CHECK(rec.total == b.report.steps[i].total);
    }
}

TEST_CASE("stage gating in the log") {
    for (Arch arch : {Arch::Mlp, Arch::Grid, Arch::Vm, Arch::Hash}) {
        CAPTURE(arch_name(arch));
        const DistillConfig cfg = short_run(9, 3, 3);
        const auto run = distill(teacher(), tiny(arch), cfg);
        for (const auto& rec : run.report.steps) {
            CHECK(std::isfinite(rec.total));
            if (rec.step < 6) CHECK(rec.loss_rgb == 0.0);
            if (rec.stage == 1 && arch != Arch::Grid) {
                CHECK(rec.loss_sigma == 0.0);
                CHECK(rec.loss_color == 0.0);
            }
            if (rec.stage == 3) CHECK(rec.loss_rgb > 0.0);
            if (arch == Arch::Grid) {
                CHECK(rec.loss_v == 0.0);
                CHECK(rec.loss_sigma > 0.0);
            } else {
                CHECK(rec.loss_v > 0.0);
            }
            if (arch == Arch::Mlp || arch == Arch::Hash) CHECK(rec.loss_reg == 0.0);
            if (arch == Arch::Vm) CHECK(rec.loss_reg > 0.0);
        }
    }
}

TEST_CASE("stage-1 steps are cheaper than stage-3 steps") {
    DistillConfig cfg = short_run(30, 10, 10);
    cfg.batch_rays = 256;
    const auto run = distill(teacher(), tiny(Arch::Hash), cfg);
    const auto med = run.report.median_step_ms();
    CHECK(med[0] > 0.0);
    CHECK(med[0] < med[2]);
}

TEST_CASE("stage-1 feature loss trends downward") {
    DistillConfig cfg = short_run(60, 60, 0);
    cfg.batch_points = 512;
    int down = 0;
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
        cfg.seed = seed;
        const auto run = distill(teacher(), tiny(Arch::Vm), cfg);
        double first = 0.0, last = 0.0;
        for (int i = 0; i < 10; ++i) {
            first += run.report.steps[i].loss_v;
            last += run.report.steps[50 + i].loss_v;
        }
        if (last < first) ++down;
    }
    CHECK(down >= 3);
}

TEST_CASE("ndjson log") {
    const auto run = distill(teacher(), tiny(Arch::Grid), short_run(5, 2, 2));
    const auto path = std::filesystem::temp_directory_path() / "pvd_test_log.ndjson";
    run.report.write_ndjson(path);
    std::ifstream in(path);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        for (const char* k : {"step", "stage", "loss_v", "loss_sigma", "loss_color", "loss_rgb", "loss_reg", "lr", "wall_ms"})
            CHECK(j.contains(k));
        ++n;
    }
    CHECK(n == 5);
    std::filesystem::remove(path);
}

TEST_CASE("training from scratch") {
    const AnalyticScene scene = make_scene("soft_sphere");
    const ViewSet views = tiny_views(scene, 4);
    TrainConfig cfg;
    cfg.batch_rays = 128;
    cfg.render.n_samples = 32;
    cfg.seed = 2;

    cfg.steps = 0;
    const auto zero = train_from_scratch(views, tiny(Arch::Grid), cfg);
    const FieldPair init = init_field(tiny(Arch::Grid), 2);
    CHECK(std::equal(zero.field.params.values().begin(), zero.field.params.values().end(),
                     init.params.values().begin()));
    CHECK(zero.report.steps.empty());

    cfg.steps = 300;
    const auto run = train_from_scratch(views, tiny(Arch::Grid), cfg);
    const auto again = train_from_scratch(views, tiny(Arch::Grid), cfg);
    CHECK(run.field.params.values()[10] == again.field.params.values()[10]);
    double early = 0.0, late = 0.0;
    for (int i = 0; i < 50; ++i) {
        early += run.report.steps[i].loss_rgb;
        late += run.report.steps[250 + i].loss_rgb;
    }
    CHECK(late < early);
    RenderConfig eval;
    eval.n_samples = 32;
    CHECK(evaluate(run.field, views, eval).mean_psnr > evaluate(init, views, eval).mean_psnr);

    // warm start continues from the given parameters
    cfg.steps = 0;
    const auto warm = train_from_scratch(views, tiny(Arch::Grid), cfg, {}, 0, &run.field);
    CHECK(std::equal(warm.field.params.values().begin(), warm.field.params.values().end(),
                     run.field.params.values().begin()));
}
