#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "pvd/common.hpp"

namespace pvd {

// ---------------------------------------------------------------------------
// Positional encoding

struct PosEncConfig {
    int num_freqs = 10;
    bool include_input = true;

    std::size_t output_dim(std::size_t input_dim) const {
        return input_dim * ((include_input ? 1 : 0) + 2 * static_cast<std::size_t>(num_freqs));
    }
};

/// Layout: [p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^{L-1} pi p), cos(2^{L-1} pi p)],
/// each block holding every component of p. No input validation.
template <class T>
void positional_encode_into(std::span<const T> p, const PosEncConfig& cfg, T* out) {
    const std::size_t n = p.size();
    std::size_t o = 0;
    if (cfg.include_input) {
        for (std::size_t i = 0; i < n; ++i) out[o++] = p[i];
    }
    T freq = T(M_PI);
    for (int l = 0; l < cfg.num_freqs; ++l) {
        for (std::size_t i = 0; i < n; ++i) out[o++] = std::sin(freq * p[i]);
        for (std::size_t i = 0; i < n; ++i) out[o++] = std::cos(freq * p[i]);
        freq *= T(2);
    }
}

/// Checked entry point; throws InvalidInput on non-finite components.
std::vector<double> positional_encode(std::span<const double> p, const PosEncConfig& cfg);

// ---------------------------------------------------------------------------
// Real spherical harmonics, hardcoded through degree 3.

inline constexpr int kMaxShDegree = 3;

constexpr std::size_t sh_basis_size(int degree) {
    return static_cast<std::size_t>((degree + 1) * (degree + 1));
}

/// Writes (degree+1)^2 values in (l, m) order, m from -l to l. Assumes unit d, degree <= 3.
template <class T>
void sh_basis_into(const Vec3<T>& d, int degree, T* out) {
    const T x = d[0], y = d[1], z = d[2];
    out[0] = T(0.28209479177387814);
    if (degree < 1) return;
    out[1] = T(-0.4886025119029199) * y;
    out[2] = T(0.4886025119029199) * z;
    out[3] = T(-0.4886025119029199) * x;
    if (degree < 2) return;
    const T xx = x * x, yy = y * y, zz = z * z;
    out[4] = T(1.0925484305920792) * x * y;
    out[5] = T(-1.0925484305920792) * y * z;
    out[6] = T(0.31539156525252005) * (T(2) * zz - xx - yy);
    out[7] = T(-1.0925484305920792) * x * z;
    out[8] = T(0.5462742152960396) * (xx - yy);
    if (degree < 3) return;
    out[9] = T(-0.5900435899266435) * y * (T(3) * xx - yy);
    out[10] = T(2.890611442640554) * x * y * z;
    out[11] = T(-0.4570457994644658) * y * (T(4) * zz - xx - yy);
    out[12] = T(0.3731763325901154) * z * (T(2) * zz - T(3) * xx - T(3) * yy);
    out[13] = T(-0.4570457994644658) * x * (T(4) * zz - xx - yy);
    out[14] = T(1.445305721320277) * z * (xx - yy);
    out[15] = T(-0.5900435899266435) * x * (xx - T(3) * yy);
}

/// Checked: unit-norm direction (1e-6) and degree in [0, 3].
std::vector<double> sh_basis(const Vec3d& d, int degree);

/// Sigmoid of the SH expansion for each of the three channels. `coeffs` holds the
/// channels back to back, (degree+1)^2 values each.
Vec3d sh_color(std::span<const double> coeffs, const Vec3d& d, int degree);

// ---------------------------------------------------------------------------
// Multiresolution spatial hash

struct HashConfig {
    std::uint32_t table_size = 1u << 19;
    std::array<std::uint32_t, 3> primes{1u, 2654435761u, 805459861u};
    int levels = 14;
    int base_resolution = 16;
    int max_resolution = 2048;
    int features_per_level = 2;

    void validate() const;
};

/// (g0*p0 XOR g1*p1 XOR g2*p2) mod S with 32-bit wrapping products.
inline std::uint32_t hash_index(const std::array<std::uint32_t, 3>& g, const HashConfig& cfg) {
    std::uint32_t h = (g[0] * cfg.primes[0]) ^ (g[1] * cfg.primes[1]) ^ (g[2] * cfg.primes[2]);
    return h & (cfg.table_size - 1u);
}

/// Geometric progression from base to max resolution, rounded half-up.
std::vector<int> level_resolutions(const HashConfig& cfg);

// ---------------------------------------------------------------------------
// Trilinear interpolation. Corner c has offsets (c & 1, (c >> 1) & 1, (c >> 2) & 1).

template <class T>
std::array<T, 8> trilinear_weights(const Vec3<T>& local) {
    std::array<T, 8> w;
    for (int c = 0; c < 8; ++c) {
        T wx = (c & 1) ? local[0] : T(1) - local[0];
        T wy = (c & 2) ? local[1] : T(1) - local[1];
        T wz = (c & 4) ? local[2] : T(1) - local[2];
        w[c] = wx * wy * wz;
    }
    return w;
}

/// Checked: throws Shape on ragged corners and Range when local leaves the unit cell.
std::vector<double> trilinear(const std::array<std::vector<double>, 8>& corners, const Vec3d& local);

/// Continuous lattice coordinate of x in [-1,1] on an axis with n nodes; the returned
/// cell index is clamped so that cell+1 < n.
template <class T>
inline void lattice_cell(T x, int n, int& cell, T& frac) {
    T pos = (x + T(1)) * T(0.5) * T(n - 1);
    int c = static_cast<int>(std::floor(pos));
    if (c < 0) c = 0;
    if (c > n - 2) c = n - 2;
    cell = c;
    frac = pos - T(c);
}

// ---------------------------------------------------------------------------
// Vector-matrix tensor decomposition

/// Axis pairing m in {0,1,2}: a vector along axis m times a matrix over the other two
/// axes (ascending order). Matrices are row-major.
struct VmComponents {
    std::array<int, 3> dims{0, 0, 0};   // I, J, K
    std::array<int, 3> ranks{0, 0, 0};  // R1, R2, R3
    std::array<std::vector<std::vector<double>>, 3> vectors;
    std::array<std::vector<std::vector<double>>, 3> matrices;

    static VmComponents zeros(std::array<int, 3> dims, std::array<int, 3> ranks);
    void validate() const;
};

/// The two axes spanned by the matrix of pairing m.
inline std::array<int, 2> vm_plane_axes(int m) {
    if (m == 0) return {1, 2};
    if (m == 1) return {0, 2};
    return {0, 1};
}

double vm_reconstruct(const VmComponents& comp, const std::array<int, 3>& idx);

}  // namespace pvd
