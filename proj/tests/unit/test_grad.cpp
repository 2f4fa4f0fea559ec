#include <doctest.h>

#include <set>

#include "pvd/gradcheck.hpp"
#include "pvd/optim.hpp"
#include "pvd/renderer.hpp"
#include "pvd/rng.hpp"

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

template <class T>
ParamBuffer<T> three_params() {
    SegmentTable t;
    t.add("theta", 3);
    ParamBuffer<T> p(t);
    p.values()[0] = 1;
    p.values()[1] = 2;
    p.values()[2] = 3;
    return p;
}

template <class T>
T sum_squares(std::span<const T> v, std::span<T> g) {
    T s = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        s += v[i] * v[i];
        g[i] += 2 * v[i];
    }
    return s;
}

}  // namespace

TEST_CASE("segment table covers the buffer without overlap") {
    SegmentTable t;
    CHECK(t.add("a", 4) == 0);
    CHECK(t.add("b", 0) == 4);
    CHECK(t.add("c", 7, 0.5) == 4);
    CHECK(t.total() == 11);
    CHECK(t.at("c").lr_scale == 0.5);
    CHECK(throws_kind(ErrorKind::Config, [&] { t.add("a", 1); }));
    CHECK(throws_kind(ErrorKind::Contract, [&] { t.at("zzz"); }));
    ParamStore p(t);
    CHECK(p.values().size() == p.grads().size());
}

TEST_CASE("backward on a quadratic, accumulation and NaN guard") {
    auto p = three_params<double>();
    const LossFn<double> loss = sum_squares<double>;
    CHECK(backward(loss, p) == 14.0);
    CHECK(std::vector<double>(p.grads().begin(), p.grads().end()) == std::vector<double>{2, 4, 6});
    backward(loss, p, GradMode::Accumulate);
    CHECK(std::vector<double>(p.grads().begin(), p.grads().end()) == std::vector<double>{4, 8, 12});
    backward(loss, p, GradMode::Overwrite);
    CHECK(p.grads()[2] == 6.0);

    // a zero-weight term leaves the gradient untouched
    const LossFn<double> weighted = [](std::span<const double> v, std::span<double> g) {
        double s = sum_squares<double>(v, g);
        std::vector<double> scratch(v.size(), 0.0);
        const double extra = sum_squares<double>(v, scratch);
        for (std::size_t i = 0; i < v.size(); ++i) g[i] += 0.0 * scratch[i];
        return s + 0.0 * extra;
    };
    backward(weighted, p);
    CHECK(std::vector<double>(p.grads().begin(), p.grads().end()) == std::vector<double>{2, 4, 6});

    SegmentTable t;
    t.add("good", 2);
    t.add("bad", 2);
    ParamBuffer<double> q(t);
    const LossFn<double> nan_grad = [](std::span<const double>, std::span<double> g) {
        g[3] = std::nan("");
        return 1.0;
    };
    try {
        backward(nan_grad, q);
        FAIL("expected a numerical error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Numerical);
        CHECK(std::string(e.what()).find("bad") != std::string::npos);
    }
    const LossFn<double> nan_loss = [](std::span<const double>, std::span<double>) { return std::nan(""); };
    q.values()[0] = std::nan("");
    try {
        backward(nan_loss, q);
        FAIL("expected a numerical error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Numerical);
        CHECK(std::string(e.what()).find("good") != std::string::npos);
    }
}

TEST_CASE("adam: zero gradients, first-step magnitude, determinism") {
    auto p = three_params<float>();
    AdamState st(p.size());
    adam_step(p, st);
    CHECK(st.step_count == 1);
    CHECK(std::vector<float>(p.values().begin(), p.values().end()) == std::vector<float>{1, 2, 3});

    // at t = 1 the bias-corrected update is lr * g / (|g| + eps)
    auto q = three_params<float>();
    AdamState s2(q.size());
    q.grads()[0] = 0.5f;
    q.grads()[1] = -3.0f;
    q.grads()[2] = 1e-3f;
    adam_step(q, s2);
    CHECK(std::abs((1.0f - q.values()[0]) - 0.02f) <= 1e-6);
    CHECK(std::abs((q.values()[1] - 2.0f) - 0.02f) <= 1e-6);
    CHECK(std::abs((3.0f - q.values()[2]) - 0.02f) <= 1e-6);
    for (float g : q.grads()) CHECK(g == 0.0f);

    auto run = [] {
        auto r = three_params<float>();
        AdamState s(r.size());
        Rng rng(5);
        for (int i = 0; i < 50; ++i) {
            for (float& g : r.grads()) g = float(rng.normal());
            adam_step(r, s);
        }
        return std::vector<float>(r.values().begin(), r.values().end());
    };
    CHECK(run() == run());

    q.grads()[1] = INFINITY;
    CHECK(throws_kind(ErrorKind::Numerical, [&] { adam_step(q, s2); }));
}

TEST_CASE("adam respects per-segment rates and is invariant to segment order") {
    SegmentTable ab, ba;
    ab.add("a", 2, 1.0);
    ab.add("b", 3, 0.05);
    ba.add("b", 3, 0.05);
    ba.add("a", 2, 1.0);
    ParamStore p(ab), q(ba);
    AdamState sp(p.size()), sq(q.size());
    Rng rng(9);
    for (int step = 0; step < 20; ++step) {
        for (const std::string name : {"a", "b"}) {
            auto gp = p.grads(name);
            auto gq = q.grads(name);
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] = gq[i] = float(rng.normal());
        }
        adam_step(p, sp);
        adam_step(q, sq);
    }
    for (const std::string name : {"a", "b"}) {
        auto vp = p.values(name);
        auto vq = q.values(name);
        CHECK(std::equal(vp.begin(), vp.end(), vq.begin()));
    }
    CHECK(std::abs(p.values("b")[0]) < std::abs(p.values("a")[0]) + 1.0f);
}

TEST_CASE("learning-rate schedule") {
    CHECK(lr_schedule(0, 1000, 0.02) == 0.02);
    CHECK(lr_schedule(1000, 1000, 0.02) == doctest::Approx(0.002).epsilon(1e-12));
    CHECK(lr_schedule(500, 1000, 0.02) == doctest::Approx(0.02 * std::sqrt(0.1)).epsilon(1e-12));
    double prev = 1.0;
    for (int s = 0; s <= 1000; s += 10) {
        const double lr = lr_schedule(s, 1000, 0.02);
        CHECK(lr <= prev);
        prev = lr;
    }
}

TEST_CASE("gradcheck on a pure quadratic") {
    const auto r = gradcheck_quadratic(1);
    CHECK(r.checked == 64);
    CHECK(r.max_rel_error <= 1e-9);
}

TEST_CASE("rendered-pixel gradients match central differences for every architecture") {
    for (Arch arch : {Arch::Mlp, Arch::Grid, Arch::Vm, Arch::Hash}) {
        CAPTURE(arch_name(arch));
        const auto r = gradcheck_field(arch, 1, 128);
        CHECK(r.checked == 128);
        CHECK(r.max_rel_error <= 1e-3);
        const auto again = gradcheck_field(arch, 1, 128);
        CHECK(again.max_rel_error == r.max_rel_error);
        // halving the step must not blow the error up (rounding grows only like 1/eps)
        const auto half = gradcheck_field(arch, 1, 128, 0.5e-5);
        CHECK(half.max_rel_error <= 10.0 * std::max(r.max_rel_error, 1e-9));
    }
}

TEST_CASE("render gradients stay inside the touched part of a grid") {
    FieldConfig fc;
    fc.arch = Arch::Grid;
    fc.grid.resolution = {9, 9, 9};
    fc.grid.sh_degree = 1;
    const FieldPair field = init_field(fc, 0);
    const auto& grid = std::get<GridField>(field.model);
    auto p = field.params.cast<double>();
    const Camera cam = Camera::look_at({0.3, -0.2, 4.0}, {0.3, -0.2, 0.0}, 1, 1, 0.5);
    const std::vector<Ray<double>> rays = camera_rays(cam);
    RenderConfig cfg;
    cfg.n_samples = 40;
    Matrix<double> target(1, 3);
    target(0, 0) = 0.2;
    backward<double>(
        [&](std::span<const double> v, std::span<double> g) {
            return render_mse_backward<double>(field.model, v, g, rays, target, cfg, 0, 1.0);
        },
        p);
    // nodes of every cell visited by a sample
    std::set<std::size_t> touched;
    const RaySamples s = sample_along_ray(cfg, 0, 0);
    for (double t : s.t) {
        Vec3d x;
        for (int a = 0; a < 3; ++a) x[a] = rays[0].o[a] + t * rays[0].d[a];
        if (!inside_unit_cube(x)) continue;
        int c[3];
        double f;
        for (int a = 0; a < 3; ++a) lattice_cell(x[a], 9, c[a], f);
        for (int corner = 0; corner < 8; ++corner)
            touched.insert(grid.node_index(c[0] + (corner & 1), c[1] + ((corner >> 1) & 1), c[2] + ((corner >> 2) & 1)));
    }
    REQUIRE(!touched.empty());
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.grads()[i] == 0.0) continue;
        ++nonzero;
        CHECK(touched.count(i / grid.payload()) == 1);
    }
    CHECK(nonzero > 0);
}
