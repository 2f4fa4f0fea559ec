#include "pvd/metrics.hpp"

#include <cmath>

namespace pvd {

namespace {

void same_shape(const Image& a, const Image& b, const char* what) {
    require(a.width == b.width && a.height == b.height && a.channels == b.channels, ErrorKind::Shape,
            std::string(what) + ": image shapes differ (" + std::to_string(a.width) + "x" + std::to_string(a.height) +
                "x" + std::to_string(a.channels) + " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) +
                "x" + std::to_string(b.channels) + ")");
}

std::vector<double> grayscale(const Image& img) {
    std::vector<double> g(std::size_t(img.width) * img.height);
    for (std::size_t p = 0; p < g.size(); ++p) {
        double s = 0.0;
        for (int c = 0; c < img.channels; ++c) s += img.data[p * img.channels + c];
        g[p] = s / img.channels;
    }
    return g;
}

/// Separable valid-mode filtering of a w x h image with a 1-D kernel.
std::vector<double> filter_valid(const std::vector<double>& img, int w, int h, const std::vector<double>& k) {
    const int n = static_cast<int>(k.size());
    const int ow = w - n + 1, oh = h - n + 1;
    std::vector<double> tmp(std::size_t(ow) * h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += k[i] * img[std::size_t(y) * w + x + i];
            tmp[std::size_t(y) * ow + x] = s;
        }
    }
    std::vector<double> out(std::size_t(ow) * oh);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += k[i] * tmp[std::size_t(y + i) * ow + x];
            out[std::size_t(y) * ow + x] = s;
        }
    }
    return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    same_shape(a, b, "psnr");
    require(!a.data.empty(), ErrorKind::Shape, "psnr: empty images");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(a.data.size());
    if (mse < 1e-10) return 99.0;
    return -10.0 * std::log10(mse);
}

double ssim(const Image& a, const Image& b) {
    same_shape(a, b, "ssim");
    constexpr int kWin = 11;
    require(a.width >= kWin && a.height >= kWin, ErrorKind::Shape, "ssim: images smaller than the 11x11 window");
    std::vector<double> k(kWin);
    double ksum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double t = i - (kWin - 1) / 2.0;
        k[i] = std::exp(-t * t / (2.0 * 1.5 * 1.5));
        ksum += k[i];
    }
    for (double& v : k) v /= ksum;
    const std::vector<double> x = grayscale(a), y = grayscale(b);
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const int w = a.width, h = a.height;
    const auto mx = filter_valid(x, w, h, k), my = filter_valid(y, w, h, k);
    const auto sxx = filter_valid(xx, w, h, k), syy = filter_valid(yy, w, h, k), sxy = filter_valid(xy, w, h, k);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cov = sxy[i] - mx[i] * my[i];
        total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mx.size());
}

nlohmann::json to_json(const MetricReport& report) {
    return {{"psnr", report.psnr},
            {"ssim", report.ssim},
            {"mean_psnr", report.mean_psnr},
            {"mean_ssim", report.mean_ssim}};
}

MetricReport evaluate(const FieldPair& field, const ViewSet& views, const RenderConfig& cfg) {
    views.validate();
    require(!views.images.empty(), ErrorKind::InvalidInput, "evaluate: view set has no ground-truth images");
    MetricReport report;
    for (std::size_t v = 0; v < views.cameras.size(); ++v) {
        const Image img = render_image(field, views.cameras[v], cfg, 0).rgb;
        report.psnr.push_back(psnr(img, views.images[v]));
        report.ssim.push_back(ssim(img, views.images[v]));
    }
    for (std::size_t v = 0; v < report.psnr.size(); ++v) {
        report.mean_psnr += report.psnr[v];
        report.mean_ssim += report.ssim[v];
    }
    report.mean_psnr /= static_cast<double>(report.psnr.size());
    report.mean_ssim /= static_cast<double>(report.ssim.size());
    return report;
}

}  // namespace pvd
