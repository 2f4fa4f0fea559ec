#pragma once

#include <filesystem>

#include "pvd/scenes.hpp"

namespace pvd {

/// Reads transforms_<split>.json (or transforms.json) from `dir`: camera_angle_x plus frames
/// with file_path and a 4x4 transform_matrix. Images are loaded as [0,1] RGB with alpha
/// composited onto white. fx = 0.5 * width / tan(0.5 * camera_angle_x).
ViewSet load_transforms_dataset(const std::filesystem::path& dir, const std::string& split = "train");

/// Writes transforms_<split>.json and one PNG per view under <dir>/<split>/.
void write_transforms_dataset(const std::filesystem::path& dir, const ViewSet& views);

}  // namespace pvd
