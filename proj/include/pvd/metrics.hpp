#pragma once

#include <vector>

#include <json.hpp>

#include "pvd/image.hpp"
#include "pvd/renderer.hpp"
#include "pvd/scenes.hpp"

namespace pvd {

/// -10 log10(MSE) over all channels; 99 when MSE < 1e-10.
double psnr(const Image& a, const Image& b);

/// Mean local SSIM on the channel-mean grayscale image: 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range 1, valid windows only.
double ssim(const Image& a, const Image& b);

struct MetricReport {
    std::vector<double> psnr;
    std::vector<double> ssim;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

nlohmann::json to_json(const MetricReport& report);

/// Renders every view of `views` and scores it against the stored images.
MetricReport evaluate(const FieldPair& field, const ViewSet& views, const RenderConfig& cfg);

}  // namespace pvd
