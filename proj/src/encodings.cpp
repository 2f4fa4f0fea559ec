#include "pvd/encodings.hpp"

#include <cmath>
#include <string>

namespace pvd {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidInput: return "invalid input";
        case ErrorKind::Shape: return "shape error";
        case ErrorKind::Config: return "config error";
        case ErrorKind::Range: return "range error";
        case ErrorKind::OutOfBounds: return "out of bounds";
        case ErrorKind::UnsupportedDegree: return "unsupported degree";
        case ErrorKind::Numerical: return "numerical failure";
        case ErrorKind::NotApplicable: return "not applicable";
        case ErrorKind::Contract: return "contract violation";
        case ErrorKind::Parse: return "parse error";
        case ErrorKind::Io: return "io error";
    }
    return "error";
}

std::vector<double> positional_encode(std::span<const double> p, const PosEncConfig& cfg) {
    require(cfg.num_freqs >= 0, ErrorKind::Config, "num_freqs must be nonnegative");
    for (double v : p) {
        require(std::isfinite(v), ErrorKind::InvalidInput, "positional_encode: non-finite component");
    }
    std::vector<double> out(cfg.output_dim(p.size()));
    positional_encode_into<double>(p, cfg, out.data());
    return out;
}

std::vector<double> sh_basis(const Vec3d& d, int degree) {
    if (degree < 0 || degree > kMaxShDegree) {
        fail(ErrorKind::UnsupportedDegree, "sh degree " + std::to_string(degree) + " (max 3)");
    }
    require(std::abs(norm(d) - 1.0) <= 1e-6, ErrorKind::InvalidInput, "sh_basis: direction is not unit length");
    std::vector<double> out(sh_basis_size(degree));
    sh_basis_into(d, degree, out.data());
    return out;
}

Vec3d sh_color(std::span<const double> coeffs, const Vec3d& d, int degree) {
    const std::vector<double> basis = sh_basis(d, degree);
    const std::size_t n = basis.size();
    require(coeffs.size() == 3 * n, ErrorKind::Shape,
            "sh_color: expected " + std::to_string(3 * n) + " coefficients, got " + std::to_string(coeffs.size()));
    Vec3d rgb{};
    for (int ch = 0; ch < 3; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += coeffs[ch * n + i] * basis[i];
        rgb[ch] = sigmoid(s);
    }
    return rgb;
}

void HashConfig::validate() const {
    require(table_size > 0 && (table_size & (table_size - 1u)) == 0, ErrorKind::Config,
            "hash table_size must be a power of two");
    require(levels >= 2, ErrorKind::Config, "hash levels must be >= 2");
    require(base_resolution >= 2, ErrorKind::Config, "hash base_resolution must be >= 2");
    require(max_resolution >= base_resolution, ErrorKind::Config, "hash max_resolution < base_resolution");
    require(features_per_level >= 1, ErrorKind::Config, "hash features_per_level must be >= 1");
}

std::vector<int> level_resolutions(const HashConfig& cfg) {
    require(cfg.levels >= 2, ErrorKind::Config, "level_resolutions: levels must be >= 2");
    require(cfg.max_resolution >= cfg.base_resolution && cfg.base_resolution > 0, ErrorKind::Config,
            "level_resolutions: need 0 < base_resolution <= max_resolution");
    const double growth =
        std::exp((std::log(double(cfg.max_resolution)) - std::log(double(cfg.base_resolution))) / (cfg.levels - 1));
    std::vector<int> res(cfg.levels);
    for (int l = 0; l < cfg.levels; ++l) {
        res[l] = static_cast<int>(std::floor(cfg.base_resolution * std::pow(growth, l) + 0.5));
    }
    res.front() = cfg.base_resolution;
    res.back() = cfg.max_resolution;
    return res;
}

std::vector<double> trilinear(const std::array<std::vector<double>, 8>& corners, const Vec3d& local) {
    const std::size_t dim = corners[0].size();
    for (const auto& c : corners) {
        require(c.size() == dim, ErrorKind::Shape, "trilinear: corner values differ in dimension");
    }
    for (double u : local) {
        require(u >= 0.0 && u <= 1.0, ErrorKind::Range, "trilinear: local coordinate outside the unit cell");
    }
    const auto w = trilinear_weights(local);
    std::vector<double> out(dim, 0.0);
    for (int c = 0; c < 8; ++c) {
        for (std::size_t i = 0; i < dim; ++i) out[i] += w[c] * corners[c][i];
    }
    return out;
}

VmComponents VmComponents::zeros(std::array<int, 3> dims, std::array<int, 3> ranks) {
    VmComponents comp;
    comp.dims = dims;
    comp.ranks = ranks;
    for (int m = 0; m < 3; ++m) {
        const auto ax = vm_plane_axes(m);
        comp.vectors[m].assign(ranks[m], std::vector<double>(dims[m], 0.0));
        comp.matrices[m].assign(ranks[m], std::vector<double>(std::size_t(dims[ax[0]]) * dims[ax[1]], 0.0));
    }
    return comp;
}

void VmComponents::validate() const {
    for (int m = 0; m < 3; ++m) {
        const auto ax = vm_plane_axes(m);
        require(ranks[m] >= 0 && dims[m] > 0, ErrorKind::Shape, "vm: invalid dims/ranks");
        require(vectors[m].size() == std::size_t(ranks[m]) && matrices[m].size() == std::size_t(ranks[m]),
                ErrorKind::Shape, "vm: component count does not match rank");
        for (int r = 0; r < ranks[m]; ++r) {
            require(vectors[m][r].size() == std::size_t(dims[m]), ErrorKind::Shape, "vm: vector length mismatch");
            require(matrices[m][r].size() == std::size_t(dims[ax[0]]) * dims[ax[1]], ErrorKind::Shape,
                    "vm: matrix size mismatch");
        }
    }
}

double vm_reconstruct(const VmComponents& comp, const std::array<int, 3>& idx) {
    comp.validate();
    for (int a = 0; a < 3; ++a) {
        require(idx[a] >= 0 && idx[a] < comp.dims[a], ErrorKind::Range, "vm_reconstruct: index out of bounds");
    }
    double sum = 0.0;
    for (int m = 0; m < 3; ++m) {
        const auto ax = vm_plane_axes(m);
        const std::size_t cell = std::size_t(idx[ax[0]]) * comp.dims[ax[1]] + idx[ax[1]];
        for (int r = 0; r < comp.ranks[m]; ++r) {
            sum += comp.vectors[m][r][idx[m]] * comp.matrices[m][r][cell];
        }
    }
    return sum;
}

}  // namespace pvd
