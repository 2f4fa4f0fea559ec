#include "pvd/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <fstream>

#include "pvd/checkpoint.hpp"
#include "pvd/gradcheck.hpp"
#include "pvd/json_util.hpp"
#include "pvd/metrics.hpp"

namespace pvd {

using nlohmann::json;
using detail::check_keys;
using detail::read_opt;

namespace {

json scene_setup_json(const SceneSetup& s) {
    return {{"width", s.width},
            {"height", s.height},
            {"n_train", s.n_train},
            {"n_test", s.n_test},
            {"gt_samples", s.gt_samples},
            {"radius", s.radius},
            {"elevation_min_deg", s.elevation_min_deg},
            {"elevation_max_deg", s.elevation_max_deg},
            {"camera_angle_x", s.camera_angle_x},
            {"pose_seed", s.pose_seed},
            {"cache_dir", s.cache_dir.string()}};
}

SceneSetup scene_setup_from_json(const json& j, SceneSetup s) {
    check_keys(j,
               {"width", "height", "n_train", "n_test", "gt_samples", "radius", "elevation_min_deg",
                "elevation_max_deg", "camera_angle_x", "pose_seed", "cache_dir"},
               "scene_setup");
    read_opt(j, "width", s.width);
    read_opt(j, "height", s.height);
    read_opt(j, "n_train", s.n_train);
    read_opt(j, "n_test", s.n_test);
    read_opt(j, "gt_samples", s.gt_samples);
    read_opt(j, "radius", s.radius);
    read_opt(j, "elevation_min_deg", s.elevation_min_deg);
    read_opt(j, "elevation_max_deg", s.elevation_max_deg);
    read_opt(j, "camera_angle_x", s.camera_angle_x);
    read_opt(j, "pose_seed", s.pose_seed);
    if (j.contains("cache_dir")) s.cache_dir = j.at("cache_dir").get<std::string>();
    return s;
}

RunConfig defaults() {
    RunConfig cfg;
    cfg.scene_setup.cache_dir = std::filesystem::temp_directory_path() / "pvd_gt_cache";
    cfg.field.arch = cfg.arch;
    return cfg;
}

FieldConfig default_field(Arch arch, bool full_scale) {
    if (full_scale) return FieldConfig::full_scale(arch);
    FieldConfig f;
    f.arch = arch;
    return f;
}

void write_json(const std::filesystem::path& path, const json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    require(bool(out), ErrorKind::Io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
    require(bool(out), ErrorKind::Io, "write failed for " + path.string());
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    require(bool(in), ErrorKind::Config, "cannot read config file " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, "config file " + path + ": " + e.what());
    }
}

bool is_builtin_scene(const std::string& s) {
    const auto names = scene_names();
    return std::find(names.begin(), names.end(), s) != names.end();
}

void check_scene(const std::string& scene) {
    require(!scene.empty(), ErrorKind::Config, "no scene given");
    require(is_builtin_scene(scene) || std::filesystem::is_directory(scene), ErrorKind::Config,
            "scene path '" + scene + "' does not exist and is not a built-in scene");
}

/// Command-specific seeds and thread counts follow the top-level values.
void propagate(RunConfig& cfg) {
    cfg.train.seed = cfg.seed;
    cfg.distill.seed = cfg.seed;
    cfg.train.render.threads = cfg.threads;
    cfg.distill.render.threads = cfg.threads;
    cfg.eval_render.threads = cfg.threads;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_train(const RunConfig& cfg, std::ostream& out) {
    check_scene(cfg.scene);
    const std::filesystem::path dir(cfg.out);
    std::filesystem::create_directories(dir);
    write_json(dir / "config.json", to_json(cfg));
    const SceneData scene = load_scene(cfg.scene, cfg.scene_setup, cfg.eval_render);
    TrainResult res = train_from_scratch(scene.train, cfg.field, cfg.train);
    save_checkpoint(dir / "checkpoint.pvd", res.field);
    res.report.write_ndjson(dir / "train_log.ndjson");
    json summary = {{"command", "train"}, {"arch", arch_name(res.field.arch())}, {"steps", cfg.train.steps},
                    {"checkpoint", (dir / "checkpoint.pvd").string()}};
    if (!scene.test.images.empty()) {
        const MetricReport m = evaluate(res.field, scene.test, cfg.eval_render);
        write_json(dir / "metrics.json", to_json(m));
        summary["mean_psnr"] = m.mean_psnr;
        summary["mean_ssim"] = m.mean_ssim;
    }
    out << summary.dump() << '\n';
    return 0;
}

int cmd_distill(const RunConfig& cfg, std::ostream& out) {
    require(!cfg.teacher.empty(), ErrorKind::Config, "distill needs --teacher PATH");
    if (!cfg.scene.empty()) check_scene(cfg.scene);
    const FieldPair teacher = load_checkpoint(cfg.teacher);
    const std::filesystem::path dir(cfg.out);
    std::filesystem::create_directories(dir);
    write_json(dir / "config.json", to_json(cfg));
    DistillResult res = distill(teacher, cfg.field, cfg.distill);
    save_checkpoint(dir / "student.pvd", res.student);
    res.report.write_ndjson(dir / "distill_log.ndjson");
    const auto med = res.report.median_step_ms();
    json report = {{"teacher", cfg.teacher},
                   {"teacher_arch", arch_name(teacher.arch())},
                   {"student_arch", arch_name(res.student.arch())},
                   {"stage_steps",
                    {cfg.distill.stage1_steps, cfg.distill.stage2_steps,
                     cfg.distill.total_steps - cfg.distill.stage1_steps - cfg.distill.stage2_steps}},
                   {"median_step_ms", {med[0], med[1], med[2]}},
                   {"sigma_clip", cfg.distill.use_clip ? json{cfg.distill.clip.a, cfg.distill.clip.b} : json(nullptr)}};
    if (!cfg.scene.empty()) {
        const SceneData scene = load_scene(cfg.scene, cfg.scene_setup, cfg.eval_render);
        report["metrics"] = to_json(evaluate(res.student, scene.test, cfg.eval_render));
    }
    write_json(dir / "report.json", report);
    json summary = {{"command", "distill"}, {"student", (dir / "student.pvd").string()}};
    if (report.contains("metrics")) summary["mean_psnr"] = report["metrics"]["mean_psnr"];
    out << summary.dump() << '\n';
    return 0;
}

int cmd_render(const RunConfig& cfg, std::ostream& out) {
    require(!cfg.checkpoint.empty(), ErrorKind::Config, "render needs --checkpoint PATH");
    require(cfg.orbit >= 1, ErrorKind::Config, "render needs --orbit >= 1");
    const FieldPair field = load_checkpoint(cfg.checkpoint);
    const std::filesystem::path dir(cfg.out);
    std::filesystem::create_directories(dir);
    write_json(dir / "config.json", to_json(cfg));
    const double el = cfg.orbit_elevation_deg * M_PI / 180.0;
    for (int i = 0; i < cfg.orbit; ++i) {
        const double az = 2.0 * M_PI * i / cfg.orbit;
        const Camera cam = orbit_camera(az, el, cfg.scene_setup.radius, cfg.render_width, cfg.render_height,
                                        cfg.scene_setup.camera_angle_x);
        const RenderedView view = render_image(field, cam, cfg.eval_render, 0);
        char name[32];
        std::snprintf(name, sizeof name, "%03d", i);
        write_png(dir / ("rgb_" + std::string(name) + ".png"), view.rgb);
        write_depth_png(dir / ("depth_" + std::string(name) + ".png"), view.depth, cfg.eval_render.near,
                        cfg.eval_render.far);
    }
    out << json{{"command", "render"}, {"frames", cfg.orbit}, {"out", dir.string()}}.dump() << '\n';
    return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
    require(!cfg.checkpoint.empty(), ErrorKind::Config, "eval needs --checkpoint PATH");
    check_scene(cfg.scene);
    const FieldPair field = load_checkpoint(cfg.checkpoint);
    const SceneData scene = load_scene(cfg.scene, cfg.scene_setup, cfg.eval_render);
    const json report = to_json(evaluate(field, scene.test, cfg.eval_render));
    const std::filesystem::path dir(cfg.out);
    std::filesystem::create_directories(dir);
    write_json(dir / "config.json", to_json(cfg));
    write_json(dir / "metrics.json", report);
    out << report.dump() << '\n';
    return 0;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const GradCheckReport r = gradcheck_field(cfg.arch, cfg.seed, cfg.gradcheck_params);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = r.max_rel_error <= 1e-3;
    out << json{{"command", "gradcheck"},
                {"arch", arch_name(cfg.arch)},
                {"seed", cfg.seed},
                {"checked", r.checked},
                {"max_rel_error", r.max_rel_error},
                {"seconds", secs},
                {"pass", ok}}
               .dump()
        << '\n';
    return ok ? 0 : 3;
}

int dispatch(const RunConfig& cfg, std::ostream& out) {
    if (cfg.command == "train") return cmd_train(cfg, out);
    if (cfg.command == "distill") return cmd_distill(cfg, out);
    if (cfg.command == "render") return cmd_render(cfg, out);
    if (cfg.command == "eval") return cmd_eval(cfg, out);
    if (cfg.command == "gradcheck") return cmd_gradcheck(cfg, out);
    fail(ErrorKind::Config, "unknown command '" + cfg.command + "'");
}

}  // namespace

json to_json(const RunConfig& cfg) {
    return {{"command", cfg.command},
            {"arch", arch_name(cfg.arch)},
            {"full_scale", cfg.full_scale},
            {"scene", cfg.scene},
            {"seed", cfg.seed},
            {"out", cfg.out},
            {"threads", cfg.threads},
            {"teacher", cfg.teacher},
            {"checkpoint", cfg.checkpoint},
            {"student", arch_name(cfg.student)},
            {"field", to_json(cfg.field)},
            {"train", to_json(cfg.train)},
            {"distill", to_json(cfg.distill)},
            {"scene_setup", scene_setup_json(cfg.scene_setup)},
            {"eval_render", to_json(cfg.eval_render)},
            {"render",
             {{"orbit", cfg.orbit},
              {"width", cfg.render_width},
              {"height", cfg.render_height},
              {"elevation_deg", cfg.orbit_elevation_deg}}},
            {"gradcheck_params", cfg.gradcheck_params}};
}

RunConfig run_config_from_json(const json& j) {
    check_keys(j,
               {"command", "arch", "full_scale", "scene", "seed", "out", "threads", "teacher", "checkpoint",
                "student", "field", "train", "distill", "scene_setup", "eval_render", "render", "gradcheck_params"},
               "config");
    RunConfig cfg = defaults();
    try {
        read_opt(j, "command", cfg.command);
        if (j.contains("arch")) cfg.arch = parse_arch(j.at("arch").get<std::string>());
        read_opt(j, "full_scale", cfg.full_scale);
        read_opt(j, "scene", cfg.scene);
        read_opt(j, "seed", cfg.seed);
        read_opt(j, "out", cfg.out);
        read_opt(j, "threads", cfg.threads);
        read_opt(j, "teacher", cfg.teacher);
        read_opt(j, "checkpoint", cfg.checkpoint);
        if (j.contains("student")) cfg.student = parse_arch(j.at("student").get<std::string>());
        cfg.field = default_field(cfg.command == "distill" ? cfg.student : cfg.arch, cfg.full_scale);
        if (j.contains("field")) cfg.field = field_config_from_json(j.at("field"));
        if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"), cfg.train);
        if (j.contains("distill")) cfg.distill = distill_config_from_json(j.at("distill"), cfg.distill);
        if (j.contains("scene_setup")) cfg.scene_setup = scene_setup_from_json(j.at("scene_setup"), cfg.scene_setup);
        if (j.contains("eval_render")) cfg.eval_render = render_config_from_json(j.at("eval_render"), cfg.eval_render);
        if (j.contains("render")) {
            const json& r = j.at("render");
            check_keys(r, {"orbit", "width", "height", "elevation_deg"}, "render");
            read_opt(r, "orbit", cfg.orbit);
            read_opt(r, "width", cfg.render_width);
            read_opt(r, "height", cfg.render_height);
            read_opt(r, "elevation_deg", cfg.orbit_elevation_deg);
        }
        read_opt(j, "gradcheck_params", cfg.gradcheck_params);
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("config: ") + e.what());
    }
    return cfg;
}

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Numerical:
        case ErrorKind::Contract:
            return 3;
        case ErrorKind::Io:
        case ErrorKind::Parse:
            return 4;
        default:
            return 2;
    }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Progressive volume distillation across radiance-field representations"};
    app.require_subcommand(1, 2);

    std::string config_path;
    std::string arch, student, scene, teacher, checkpoint, out_dir;
    std::uint64_t seed = 0;
    int steps = -1, threads = 0, orbit = 0, width = 0, height = 0;
    std::size_t gc_params = 0;
    bool full_scale = false, no_clip = false;
    std::vector<float> clip;
    std::vector<int> stage_steps;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run config (flags override it)");
        sub->add_option("--seed", seed, "Seed for every random stream");
        sub->add_option("--out", out_dir, "Output directory");
        sub->add_option("--threads", threads, "Worker cap for rendering")->check(CLI::PositiveNumber);
    };
    CLI::App* train = app.add_subcommand("train", "Train a field from scratch on a scene");
    add_common(train);
    train->add_option("--arch", arch, "mlp | grid | vm | hash");
    train->add_option("--scene", scene, "Built-in scene name or transforms dataset directory");
    train->add_option("--steps", steps, "Training steps")->check(CLI::NonNegativeNumber);
    train->add_flag("--full-scale", full_scale, "Use the full-size field configs");

    CLI::App* dist = app.add_subcommand("distill", "Distill a teacher checkpoint into another representation");
    add_common(dist);
    dist->add_option("--teacher", teacher, "Teacher checkpoint");
    dist->add_option("--student", student, "Student architecture");
    dist->add_option("--scene", scene, "Scene for the final evaluation");
    dist->add_option("--steps", steps, "Total distillation steps")->check(CLI::NonNegativeNumber);
    dist->add_option("--stage-steps", stage_steps, "Stage 1 and stage 2 step counts")->expected(2);
    dist->add_flag("--no-sigma-clip", no_clip, "Disable density clipping in the density loss");
    dist->add_option("--sigma-clip", clip, "Density clip range A B")->expected(2);
    dist->add_flag("--full-scale", full_scale, "Use the full-size student config");

    CLI::App* render = app.add_subcommand("render", "Render rgb and depth images from a checkpoint");
    add_common(render);
    render->add_option("--checkpoint", checkpoint, "Checkpoint to render")->required();
    render->add_option("--orbit", orbit, "Number of orbit poses")->check(CLI::PositiveNumber);
    render->add_option("--width", width, "Image width")->check(CLI::PositiveNumber);
    render->add_option("--height", height, "Image height")->check(CLI::PositiveNumber);

    CLI::App* eval = app.add_subcommand("eval", "Score a checkpoint on a scene's test views");
    add_common(eval);
    eval->add_option("--checkpoint", checkpoint, "Checkpoint to score")->required();
    eval->add_option("--scene", scene, "Built-in scene name or transforms dataset directory");

    CLI::App* gc = app.add_subcommand("gradcheck", "Finite-difference check of the hand-written gradients");
    add_common(gc);
    gc->add_option("--arch", arch, "mlp | grid | vm | hash");
    gc->add_option("--params", gc_params, "Number of parameters to check")->check(CLI::PositiveNumber);

    CLI::App* run = app.add_subcommand("run", "Re-run a written config.json");
    std::string run_path;
    run->add_option("config", run_path, "Resolved config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg;
        if (run->parsed()) {
            cfg = run_config_from_json(read_json_file(run_path));
            require(!cfg.command.empty(), ErrorKind::Config, run_path + ": missing 'command'");
            propagate(cfg);
            return dispatch(cfg, out);
        }
        CLI::App* sub = app.get_subcommands().front();
        cfg = config_path.empty() ? defaults() : run_config_from_json(read_json_file(config_path));
        cfg.command = sub->get_name();
        const bool arch_flag = !arch.empty() || !student.empty() || full_scale;
        if (!arch.empty()) cfg.arch = parse_arch(arch);
        if (!student.empty()) cfg.student = parse_arch(student);
        if (full_scale) cfg.full_scale = true;
        if (sub->count("--seed") > 0) cfg.seed = seed;
        if (!out_dir.empty()) cfg.out = out_dir;
        if (threads > 0) cfg.threads = threads;
        if (!scene.empty()) cfg.scene = scene;
        if (cfg.command == "distill" && sub->count("--scene") == 0 && config_path.empty()) cfg.scene.clear();
        if (!teacher.empty()) cfg.teacher = teacher;
        if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
        if (orbit > 0) cfg.orbit = orbit;
        if (width > 0) cfg.render_width = width;
        if (height > 0) cfg.render_height = height;
        if (gc_params > 0) cfg.gradcheck_params = gc_params;
        if (arch_flag || config_path.empty()) {
            cfg.field = default_field(cfg.command == "distill" ? cfg.student : cfg.arch, cfg.full_scale);
        }
        if (cfg.command == "train" && steps >= 0) cfg.train.steps = steps;
        if (cfg.command == "distill") {
            if (steps >= 0) cfg.distill.total_steps = steps;
            if (!stage_steps.empty()) {
                cfg.distill.stage1_steps = stage_steps[0];
                cfg.distill.stage2_steps = stage_steps[1];
            } else if (cfg.distill.stage1_steps + cfg.distill.stage2_steps > cfg.distill.total_steps) {
                // keep the default 3:5 proportions of the stage budget
                cfg.distill.stage1_steps = cfg.distill.total_steps * 3 / 20;
                cfg.distill.stage2_steps = cfg.distill.total_steps * 5 / 20;
            }
            if (no_clip) cfg.distill.use_clip = false;
            if (!clip.empty()) {
                require(!no_clip, ErrorKind::Config, "--sigma-clip conflicts with --no-sigma-clip");
                cfg.distill.clip = {clip[0], clip[1]};
                cfg.distill.use_clip = true;
            }
        }
        propagate(cfg);
        return dispatch(cfg, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace pvd
