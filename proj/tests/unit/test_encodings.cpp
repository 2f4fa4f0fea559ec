#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "pvd/encodings.hpp"
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

// Associated Legendre based real SH, written independently of the hardcoded table.
double factorial(int n) { return n <= 1 ? 1.0 : n * factorial(n - 1); }

double legendre(int l, int m, double x) {
    // P_l^m without the Condon-Shortley phase, m >= 0
    double pmm = 1.0;
    const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
    for (int i = 1; i <= m; ++i) pmm *= (2 * i - 1) * s;
    if (l == m) return pmm;
    double pm1 = x * (2 * m + 1) * pmm;
    if (l == m + 1) return pm1;
    double pl = 0.0;
    for (int ll = m + 2; ll <= l; ++ll) {
        pl = ((2 * ll - 1) * x * pm1 - (ll + m - 1) * pmm) / (ll - m);
        pmm = pm1;
        pm1 = pl;
    }
    return pl;
}

double real_sh(int l, int m, const Vec3d& d) {
    const double theta = std::acos(std::clamp(d[2], -1.0, 1.0));
    const double phi = std::atan2(d[1], d[0]);
    const int am = std::abs(m);
    const double k = std::sqrt((2 * l + 1) / (4 * M_PI) * factorial(l - am) / factorial(l + am));
    const double p = legendre(l, am, std::cos(theta));
    // sign convention of the graphics table: (-1)^m on m != 0
    const double sign = (am % 2 == 1) ? -1.0 : 1.0;
    if (m == 0) return k * p;
    if (m > 0) return sign * std::sqrt(2.0) * k * std::cos(am * phi) * p;
    return sign * std::sqrt(2.0) * k * std::sin(am * phi) * p;
}

}  // namespace

TEST_CASE("positional encoding of the origin alternates zeros and ones") {
    const std::vector<double> p{0.0, 0.0, 0.0};
    const auto e = positional_encode(p, {2, true});
    const std::vector<double> want{0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 0, 0, 1, 1, 1};
    CHECK(e == want);
}

TEST_CASE("positional encoding with no frequencies is the identity") {
    const std::vector<double> p{0.3, -0.7, 0.1};
    CHECK(positional_encode(p, {0, true}) == p);
}

TEST_CASE("positional encoding of 0.5 at one frequency") {
    const std::vector<double> p{0.5};
    const auto e = positional_encode(p, {1, true});
    REQUIRE(e.size() == 3);
    CHECK(e[0] == 0.5);
    CHECK(e[1] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(e[2]) < 1e-15);
}

TEST_CASE("positional encoding matches direct trigonometry and rejects non-finite input") {
    Rng rng(3);
    const PosEncConfig cfg{6, true};
    std::vector<double> p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const auto e = positional_encode(p, cfg);
    REQUIRE(e.size() == cfg.output_dim(3));
    for (int l = 0; l < cfg.num_freqs; ++l) {
        for (int i = 0; i < 3; ++i) {
            const double f = std::ldexp(M_PI, l);
            CHECK(e[3 + 6 * l + i] == doctest::Approx(std::sin(f * p[i])).epsilon(1e-12));
            CHECK(e[3 + 6 * l + 3 + i] == doctest::Approx(std::cos(f * p[i])).epsilon(1e-12));
        }
    }
    p[1] = std::nan("");
    CHECK(throws_kind(ErrorKind::InvalidInput, [&] { positional_encode(p, cfg); }));
}

TEST_CASE("sh basis constants at degree 0 and the z pole") {
    CHECK(sh_basis({0.6, 0.0, 0.8}, 0)[0] == doctest::Approx(1.0 / std::sqrt(4.0 * M_PI)).epsilon(1e-12));
    const auto b = sh_basis({0.0, 0.0, 1.0}, 1);
    CHECK(b[2] == doctest::Approx(std::sqrt(3.0 / (4.0 * M_PI))).epsilon(1e-12));
    CHECK(b[1] == 0.0);
    CHECK(b[3] == 0.0);
}

TEST_CASE("sh basis agrees with an associated-Legendre construction through degree 3") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const Vec3d d = rng.unit_vector();
        const auto b = sh_basis(d, 3);
        int idx = 0;
        for (int l = 0; l <= 3; ++l) {
            for (int m = -l; m <= l; ++m, ++idx) CHECK(b[idx] == doctest::Approx(real_sh(l, m, d)).epsilon(1e-10));
        }
    }
}

TEST_CASE("sh basis is orthonormal under sphere quadrature") {
    // product Gauss grid: midpoint in phi, fine midpoint in cos(theta)
    const int nt = 400, np = 400;
    std::vector<double> gram(16 * 16, 0.0);
    for (int a = 0; a < nt; ++a) {
        const double z = -1.0 + (a + 0.5) * 2.0 / nt;
        const double r = std::sqrt(1.0 - z * z);
        for (int c = 0; c < np; ++c) {
            const double phi = (c + 0.5) * 2.0 * M_PI / np;
            const auto b = sh_basis({r * std::cos(phi), r * std::sin(phi), z}, 3);
            const double w = (2.0 / nt) * (2.0 * M_PI / np);
            for (int i = 0; i < 16; ++i)
                for (int j = 0; j < 16; ++j) gram[i * 16 + j] += w * b[i] * b[j];
        }
    }
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) CHECK(std::abs(gram[i * 16 + j] - (i == j ? 1.0 : 0.0)) < 1e-3);
}

TEST_CASE("sh basis errors") {
    CHECK(throws_kind(ErrorKind::UnsupportedDegree, [] { sh_basis({0, 0, 1}, 4); }));
    CHECK(throws_kind(ErrorKind::InvalidInput, [] { sh_basis({0, 0, 1.1}, 2); }));
    const auto a = sh_basis({0.48, 0.6, 0.64}, 2);
    const auto b = sh_basis({0.48, 0.6, 0.64}, 2);
    CHECK(a == b);
}

TEST_CASE("sh color: zero coefficients, DC term, and shape check") {
    const std::vector<double> zeros(27, 0.0);
    const Vec3d c0 = sh_color(zeros, {0, 0, 1}, 2);
    for (double v : c0) CHECK(v == 0.5);
    std::vector<double> dc(27, 0.0);
    for (int ch = 0; ch < 3; ++ch) dc[ch * 9] = 1.0 / 0.28209479177387814;
    const Vec3d c1 = sh_color(dc, {0.0, 1.0, 0.0}, 2);
    for (double v : c1) CHECK(v == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
    CHECK(throws_kind(ErrorKind::Shape, [] { sh_color(std::vector<double>(26, 0.0), {0, 0, 1}, 2); }));
}

TEST_CASE("hash index: zero corner, unit prime, range and determinism") {
    HashConfig cfg;
    CHECK(hash_index({0, 0, 0}, cfg) == 0u);
    CHECK(hash_index({1, 0, 0}, cfg) == 1u);
    for (std::uint32_t x = 0; x < 16; ++x)
        for (std::uint32_t y = 0; y < 16; ++y)
            for (std::uint32_t z = 0; z < 16; ++z) {
                const std::uint32_t h = hash_index({x, y, z}, cfg);
                CHECK(h < cfg.table_size);
                // 64-bit oracle reduced modulo 2^32 then modulo S
                const std::uint64_t m32 = 0xFFFFFFFFULL;
                const std::uint64_t o = ((std::uint64_t(x) * 1ULL) & m32) ^ ((std::uint64_t(y) * 2654435761ULL) & m32) ^
                                        ((std::uint64_t(z) * 805459861ULL) & m32);
                CHECK(h == std::uint32_t(o % cfg.table_size));
                CHECK(h == hash_index({x, y, z}, cfg));
            }
}

TEST_CASE("level resolutions") {
    HashConfig cfg;
    auto r = level_resolutions(cfg);
    REQUIRE(r.size() == 14);
    CHECK(r.front() == 16);
    CHECK(r.back() == 2048);
    for (std::size_t i = 1; i < r.size(); ++i) CHECK(r[i] >= r[i - 1]);
    const double b = std::exp((std::log(2048.0) - std::log(16.0)) / 13.0);
    CHECK(r[5] == int(std::floor(16.0 * std::pow(b, 5) + 0.5)));
    cfg.max_resolution = 16;
    cfg.levels = 2;
    CHECK(level_resolutions(cfg) == std::vector<int>{16, 16});
    cfg.levels = 1;
    CHECK(throws_kind(ErrorKind::Config, [&] { level_resolutions(cfg); }));
}

TEST_CASE("trilinear interpolation oracles") {
    std::array<std::vector<double>, 8> corners;
    auto f = [](double x, double y, double z) { return x + 2 * y + 3 * z - 0.5 * x * y * z + 0.25 * y * z; };
    for (int c = 0; c < 8; ++c) corners[c] = {f(c & 1, (c >> 1) & 1, (c >> 2) & 1), double(c)};
    CHECK(trilinear(corners, {0, 0, 0})[0] == corners[0][0]);
    CHECK(trilinear(corners, {0.5, 0.5, 0.5})[1] == doctest::Approx(3.5).epsilon(1e-15));
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
        const Vec3d l{rng.uniform(), rng.uniform(), rng.uniform()};
        CHECK(trilinear(corners, l)[0] == doctest::Approx(f(l[0], l[1], l[2])).epsilon(1e-13));
        const auto w = trilinear_weights(l);
        double s = 0.0;
        for (double v : w) s += v;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
    }
    CHECK(throws_kind(ErrorKind::Range, [&] { trilinear(corners, {1.2, 0, 0}); }));
    corners[3].push_back(1.0);
    CHECK(throws_kind(ErrorKind::Shape, [&] { trilinear(corners, {0.2, 0, 0}); }));
}

TEST_CASE("lattice cell covers the cube and clamps the last cell") {
    int c;
    double f;
    lattice_cell(-1.0, 5, c, f);
    CHECK((c == 0 && f == 0.0));
    lattice_cell(1.0, 5, c, f);
    CHECK((c == 3 && f == 1.0));
    lattice_cell(0.0, 5, c, f);
    CHECK((c == 2 && f == 0.0));
}

TEST_CASE("vm reconstruction: zeros, rank one, brute-force materialization") {
    const auto z = VmComponents::zeros({4, 5, 6}, {2, 2, 2});
    CHECK(vm_reconstruct(z, {1, 2, 3}) == 0.0);

    auto one = VmComponents::zeros({4, 5, 6}, {1, 0, 0});
    std::fill(one.vectors[0][0].begin(), one.vectors[0][0].end(), 1.0);
    std::fill(one.matrices[0][0].begin(), one.matrices[0][0].end(), 1.0);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j)
            for (int k = 0; k < 6; ++k) CHECK(vm_reconstruct(one, {i, j, k}) == 1.0);

    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const std::array<int, 3> dims{4, 5, 6};
        const std::array<int, 3> ranks{1 + int(rng.below(3)), 1 + int(rng.below(3)), 1 + int(rng.below(3))};
        auto comp = VmComponents::zeros(dims, ranks);
        for (int m = 0; m < 3; ++m)
            for (int r = 0; r < ranks[m]; ++r) {
                for (double& v : comp.vectors[m][r]) v = rng.uniform(-1, 1);
                for (double& v : comp.matrices[m][r]) v = rng.uniform(-1, 1);
            }
        // materialize each outer product v (x) M as a full tensor and sum
        std::vector<double> full(4 * 5 * 6, 0.0);
        for (int m = 0; m < 3; ++m) {
            const auto ax = vm_plane_axes(m);
            for (int r = 0; r < ranks[m]; ++r)
                for (int i = 0; i < 4; ++i)
                    for (int j = 0; j < 5; ++j)
                        for (int k = 0; k < 6; ++k) {
                            const int idx[3] = {i, j, k};
                            const double v = comp.vectors[m][r][idx[m]];
                            const double mm = comp.matrices[m][r][idx[ax[0]] * dims[ax[1]] + idx[ax[1]]];
                            full[(i * 5 + j) * 6 + k] += v * mm;
                        }
        }
        double worst = 0.0;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 5; ++j)
                for (int k = 0; k < 6; ++k)
                    worst = std::max(worst, std::abs(vm_reconstruct(comp, {i, j, k}) - full[(i * 5 + j) * 6 + k]));
        CHECK(worst <= 1e-12);
    }
    CHECK(throws_kind(ErrorKind::Range, [&] { vm_reconstruct(z, {4, 0, 0}); }));
}
