#include "pvd/dataset.hpp"

#include <cmath>
#include <fstream>

namespace pvd {

namespace {

using nlohmann::json;

std::filesystem::path transforms_file(const std::filesystem::path& dir, const std::string& split) {
    const auto per_split = dir / ("transforms_" + split + ".json");
    if (std::filesystem::exists(per_split)) return per_split;
    const auto shared = dir / "transforms.json";
    require(std::filesystem::exists(shared), ErrorKind::Parse,
            "missing " + per_split.string() + " (and no transforms.json fallback)");
    return shared;
}

}  // namespace

ViewSet load_transforms_dataset(const std::filesystem::path& dir, const std::string& split) {
    const auto file = transforms_file(dir, split);
    std::ifstream in(file);
    require(bool(in), ErrorKind::Io, "cannot open " + file.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::Parse, file.string() + ": " + e.what());
    }
    ViewSet views;
    views.split = split;
    const auto where = [&](const std::string& field) { return file.string() + ": field '" + field + "'"; };
    require(j.contains("camera_angle_x") && j["camera_angle_x"].is_number(), ErrorKind::Parse,
            where("camera_angle_x") + " missing or not a number");
    require(j.contains("frames") && j["frames"].is_array(), ErrorKind::Parse, where("frames") + " missing");
    views.camera_angle_x = j["camera_angle_x"].get<double>();
    const auto& frames = j["frames"];
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const std::string tag = "frames[" + std::to_string(f) + "]";
        const json& fr = frames[f];
        require(fr.contains("file_path") && fr["file_path"].is_string(), ErrorKind::Parse,
                where(tag + ".file_path") + " missing");
        require(fr.contains("transform_matrix") && fr["transform_matrix"].is_array() &&
                    fr["transform_matrix"].size() >= 3,
                ErrorKind::Parse, where(tag + ".transform_matrix") + " malformed");
        std::filesystem::path img_path = dir / fr["file_path"].get<std::string>();
        if (!img_path.has_extension()) img_path += ".png";
        Image img = read_png(img_path);
        Camera cam;
        cam.width = img.width;
        cam.height = img.height;
        cam.fx = 0.5 * img.width / std::tan(0.5 * views.camera_angle_x);
        cam.fy = cam.fx;
        cam.cx = 0.5 * img.width;
        cam.cy = 0.5 * img.height;
        try {
            for (int r = 0; r < 3; ++r) {
                const json& row = fr["transform_matrix"][r];
                require(row.is_array() && row.size() == 4, ErrorKind::Parse,
                        where(tag + ".transform_matrix") + " rows must have 4 entries");
                for (int c = 0; c < 4; ++c) cam.pose[r * 4 + c] = row[c].get<double>();
            }
        } catch (const json::exception& e) {
            fail(ErrorKind::Parse, where(tag + ".transform_matrix") + ": " + e.what());
        }
        try {
            cam.validate();
        } catch (const Error& e) {
            fail(ErrorKind::Parse, where(tag + ".transform_matrix") + ": " + e.what());
        }
        views.cameras.push_back(cam);
        views.images.push_back(std::move(img));
    }
    return views;
}

void write_transforms_dataset(const std::filesystem::path& dir, const ViewSet& views) {
    views.validate();
    require(views.images.size() == views.cameras.size(), ErrorKind::InvalidInput,
            "write_transforms_dataset needs one image per camera");
    std::filesystem::create_directories(dir / views.split);
    json frames = json::array();
    for (std::size_t i = 0; i < views.cameras.size(); ++i) {
        const std::string rel = views.split + "/r_" + std::to_string(i);
        write_png(dir / (rel + ".png"), views.images[i]);
        const auto& p = views.cameras[i].pose;
        json m = json::array();
        for (int r = 0; r < 3; ++r) m.push_back({p[r * 4], p[r * 4 + 1], p[r * 4 + 2], p[r * 4 + 3]});
        m.push_back({0.0, 0.0, 0.0, 1.0});
        frames.push_back({{"file_path", "./" + rel}, {"transform_matrix", m}});
    }
    const json j = {{"camera_angle_x", views.camera_angle_x}, {"frames", frames}};
    std::ofstream out(dir / ("transforms_" + views.split + ".json"));
    require(bool(out), ErrorKind::Io, "cannot write transforms file in " + dir.string());
    out << j.dump(2) << '\n';
}

}  // namespace pvd
