#include "pvd/gradcheck.hpp"

#include "pvd/renderer.hpp"
#include "pvd/rng.hpp"
#include "pvd/scenes.hpp"

namespace pvd {

FieldConfig gradcheck_field_config(Arch arch) {
    FieldConfig cfg;
    cfg.arch = arch;
    cfg.mlp.depth = 4;
    cfg.mlp.width = 16;
    cfg.mlp.split_k = 2;
    cfg.mlp.dir_branch_width = 8;
    cfg.mlp.pos.num_freqs = 4;
    cfg.mlp.dir.num_freqs = 2;
    cfg.grid.resolution = {6, 5, 7};
    cfg.vm.resolution = 8;
    cfg.vm.density_per_pair = 2;
    cfg.vm.appearance_per_pair = 3;
    cfg.vm.decoder_width = 16;
    cfg.vm.dir.num_freqs = 2;
    cfg.hash.hash.table_size = 1u << 10;
    cfg.hash.hash.levels = 4;
    cfg.hash.hash.base_resolution = 4;
    cfg.hash.hash.max_resolution = 16;
    cfg.hash.decoder_width = 16;
    cfg.hash.dir.num_freqs = 2;
    return cfg;
}

namespace {

/// Moves freshly initialized parameters away from degenerate values (zero SH, near-zero hash
/// entries) so every code path carries a non-trivial gradient.
void perturb(FieldPair& field, Rng& rng) {
    auto v = field.params.values();
    for (const Segment& s : field.params.layout().segments()) {
        const bool density = s.name.find("density") != std::string::npos;
        for (std::size_t i = s.offset; i < s.offset + s.length; ++i) {
            if (s.name == "grid.payload") {
                const auto& g = std::get<GridField>(field.model);
                v[i] = (i - s.offset) % g.payload() == 0 ? float(rng.uniform(0.5, 3.0)) : float(rng.uniform(-0.5, 0.5));
            } else if (s.name == "hash.tables") {
                v[i] = static_cast<float>(rng.uniform(-0.5, 0.5));
            } else if (s.name.rfind("vm.", 0) == 0 && s.name.rfind("vm.decoder", 0) != 0) {
                v[i] = density ? float(rng.uniform(0.3, 0.9)) : float(rng.uniform(-0.6, 0.6));
            } else if (s.name.size() > 2 && s.name.compare(s.name.size() - 2, 2, ".b") == 0) {
                v[i] = static_cast<float>(rng.uniform(-0.1, 0.3));
            }
        }
    }
}

}  // namespace

GradCheckReport gradcheck_field(Arch arch, std::uint64_t seed, std::size_t n_params, double eps) {
    FieldPair field = init_field(gradcheck_field_config(arch), seed);
    Rng rng = Rng::stream(seed, "gradcheck/setup");
    perturb(field, rng);
    ParamBuffer<double> params = field.params.cast<double>();

    const Camera cam = orbit_camera(rng.uniform(0.0, 6.28), rng.uniform(-0.4, 0.8), 4.0, 8, 8, 0.6911112070083618);
    std::vector<Ray<double>> rays;
    for (int k = 0; k < 6; ++k) {
        rays.push_back(ray_for_pixel(cam, 2 + int(rng.below(4)), 2 + int(rng.below(4)),
                                     std::array<double, 2>{rng.uniform(), rng.uniform()}));
    }
    Matrix<double> target(rays.size(), 3);
    for (double& t : target.data) t = rng.uniform(0.1, 0.9);
    RenderConfig rc;
    rc.n_samples = 24;
    rc.stratified = true;
    const std::uint64_t ray_seed = rng.next_u64();
    const double weight = 3.0 * static_cast<double>(rays.size());  // sum of squares rather than the mean

    const FieldModel& model = field.model;
    LossFn<double> loss = [&](std::span<const double> p, std::span<double> g) {
        return render_mse_backward<double>(model, p, g, rays, target, rc, ray_seed, weight, nullptr);
    };
    return grad_check(loss, params, n_params, eps, seed);
}

GradCheckReport gradcheck_quadratic(std::uint64_t seed, std::size_t n) {
    SegmentTable layout;
    layout.add("q", n);
    ParamBuffer<double> params(layout);
    Rng rng = Rng::stream(seed, "gradcheck/quadratic");
    std::vector<double> c(n), k(n);
    for (std::size_t i = 0; i < n; ++i) {
        params.values()[i] = rng.uniform(-1.0, 1.0);
        c[i] = rng.uniform(-1.0, 1.0);
        k[i] = rng.uniform(0.5, 2.0);
    }
    LossFn<double> loss = [&](std::span<const double> p, std::span<double> g) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = p[i] - c[i];
            s += k[i] * d * d;
            g[i] += 2.0 * k[i] * d;
        }
        return s;
    };
    return grad_check(loss, params, n, 1e-4, seed);
}

}  // namespace pvd
