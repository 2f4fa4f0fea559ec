#pragma once

#include <ostream>
#include <string>

#include <json.hpp>

#include "pvd/distill.hpp"
#include "pvd/scenes.hpp"

namespace pvd {

/// Everything a command needs; written back out as config.json next to the outputs.
struct RunConfig {
    std::string command;
    Arch arch = Arch::Hash;
    bool full_scale = false;
    std::string scene = "smoke";
    std::uint64_t seed = 0;
    std::string out = "pvd_out";
    int threads = 1;
    std::string teacher;
    std::string checkpoint;
    Arch student = Arch::Mlp;
    FieldConfig field;
    TrainConfig train;
    DistillConfig distill;
    SceneSetup scene_setup;
    RenderConfig eval_render{64, 2.0, 6.0, false, {1.0, 1.0, 1.0}, 1};
    int orbit = 8;
    int render_width = 128;
    int render_height = 128;
    double orbit_elevation_deg = 30.0;
    std::size_t gradcheck_params = 128;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Unknown keys are rejected; missing keys keep their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Map from error kind to process exit code: 2 usage/config, 3 numerical, 4 IO.
int exit_code_for(ErrorKind kind);

/// Full command-line entry point. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pvd
