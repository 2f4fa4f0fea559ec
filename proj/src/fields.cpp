#include "pvd/fields.hpp"
#include "pvd/json_util.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>

#include "pvd/rng.hpp"

namespace pvd {

using nlohmann::json;

const char* arch_name(Arch arch) {
    switch (arch) {
        case Arch::Mlp: return "mlp";
        case Arch::Grid: return "grid";
        case Arch::Vm: return "vm";
        case Arch::Hash: return "hash";
    }
    return "?";
}

Arch parse_arch(const std::string& name) {
    if (name == "mlp" || name == "nerf") return Arch::Mlp;
    if (name == "grid" || name == "plenoxels" || name == "sparse_grid") return Arch::Grid;
    if (name == "vm" || name == "tensorf") return Arch::Vm;
    if (name == "hash" || name == "ngp") return Arch::Hash;
    fail(ErrorKind::Config, "unknown architecture '" + name + "' (expected mlp|grid|vm|hash)");
}

namespace {

template <class T>
void encode_dirs(const Matrix<T>& dirs, const PosEncConfig& cfg, Matrix<T>& out, std::size_t col0) {
    for (std::size_t r = 0; r < dirs.rows; ++r) {
        positional_encode_into<T>(std::span<const T>(dirs.row(r), 3), cfg, out.row(r) + col0);
    }
}

template <class T>
void sigmoid_inplace(Matrix<T>& m) {
    for (T& v : m.data) v = sigmoid(v);
}

/// d(logit) from d(rgb) through the sigmoid recorded in `rgb`.
template <class T>
Matrix<T> sigmoid_backward(const Matrix<T>& rgb, const Matrix<T>& drgb) {
    Matrix<T> out(rgb.rows, rgb.cols);
    for (std::size_t i = 0; i < rgb.data.size(); ++i) {
        const T s = rgb.data[i];
        out.data[i] = drgb.data[i] * s * (T(1) - s);
    }
    return out;
}

using detail::check_keys;
using detail::read_opt;

}  // namespace

// ---------------------------------------------------------------------------
// Decoder

Decoder Decoder::build(SegmentTable& layout, const std::string& prefix, std::size_t in_dim, std::size_t width,
                       bool emit_sigma, PosEncConfig dir) {
    Decoder d;
    d.in_dim = in_dim;
    d.width = width;
    d.emit_sigma = emit_sigma;
    d.dir = dir;
    d.hidden1 = DenseLayer::add(layout, prefix + ".hidden1", in_dim, width, kMlpLrScale);
    d.hidden2 = DenseLayer::add(layout, prefix + ".hidden2", width, width, kMlpLrScale);
    if (emit_sigma) d.sigma_head = DenseLayer::add(layout, prefix + ".sigma", width, 1, kMlpLrScale);
    d.color = DenseLayer::add(layout, prefix + ".color", width + dir.output_dim(3), 3, kMlpLrScale);
    return d;
}

void Decoder::init(std::span<float> values, Rng& rng) const {
    hidden1.init(values, rng);
    hidden2.init(values, rng);
    if (emit_sigma) sigma_head.init(values, rng);
    color.init(values, rng);
}

// tape.mats: h1, h2, [h2 | dir encoding], rgb
template <class T>
void Decoder::forward(std::span<const T> p, const Matrix<T>& in, const Matrix<T>& dirs, std::vector<T>* sigma,
                      Matrix<T>& rgb, Tape<T>* tape) const {
    Matrix<T> h1, h2;
    dense_forward(hidden1, p, in, h1);
    relu_inplace(h1);
    dense_forward(hidden2, p, h1, h2);
    relu_inplace(h2);
    if (emit_sigma && sigma != nullptr) {
        Matrix<T> s;
        dense_forward(sigma_head, p, h2, s);
        sigma->assign(s.data.begin(), s.data.end());
    }
    Matrix<T> cat(in.rows, width + dir.output_dim(3));
    for (std::size_t r = 0; r < in.rows; ++r) std::copy_n(h2.row(r), width, cat.row(r));
    encode_dirs(dirs, dir, cat, width);
    dense_forward(color, p, cat, rgb);
    sigmoid_inplace(rgb);
    if (tape != nullptr) {
        tape->mats.clear();
        tape->mats.push_back(std::move(h1));
        tape->mats.push_back(std::move(h2));
        tape->mats.push_back(std::move(cat));
        tape->mats.push_back(rgb);
    }
}

template <class T>
void Decoder::backward(std::span<const T> p, const Matrix<T>& in, const Tape<T>& tape, const std::vector<T>* dsigma,
                       const Matrix<T>& drgb, std::span<T> grad, Matrix<T>* din) const {
    const Matrix<T>& h1 = tape.mats[0];
    const Matrix<T>& h2 = tape.mats[1];
    const Matrix<T>& cat = tape.mats[2];
    const Matrix<T>& rgb = tape.mats[3];
    Matrix<T> dlogit = sigmoid_backward(rgb, drgb);
    Matrix<T> dcat;
    dense_backward(color, p, cat, dlogit, grad, &dcat);
    Matrix<T> dh2(in.rows, width);
    for (std::size_t r = 0; r < in.rows; ++r) std::copy_n(dcat.row(r), width, dh2.row(r));
    if (emit_sigma && dsigma != nullptr) {
        Matrix<T> ds(in.rows, 1);
        std::copy(dsigma->begin(), dsigma->end(), ds.data.begin());
        Matrix<T> dh2s;
        dense_backward(sigma_head, p, h2, ds, grad, &dh2s);
        for (std::size_t i = 0; i < dh2.data.size(); ++i) dh2.data[i] += dh2s.data[i];
    }
    relu_backward_inplace(h2, dh2);
    Matrix<T> dh1;
    dense_backward(hidden2, p, h1, dh2, grad, &dh1);
    relu_backward_inplace(h1, dh1);
    dense_backward(hidden1, p, in, dh1, grad, din);
}

// ---------------------------------------------------------------------------
// MLP (NeRF-style) field

MlpField::MlpField(const MlpFieldConfig& cfg) : cfg_(cfg) {
    require(cfg.depth >= 2, ErrorKind::Config, "mlp depth must be >= 2");
    require(cfg.split_k >= 1 && cfg.split_k < cfg.depth, ErrorKind::Config, "mlp split_k must be in [1, depth)");
    require(cfg.width >= 1 && cfg.dir_branch_width >= 1, ErrorKind::Config, "mlp widths must be positive");
    require(cfg.pos.num_freqs >= 0 && cfg.dir.num_freqs >= 0, ErrorKind::Config, "negative encoding frequencies");
    const std::size_t w = cfg.width;
    for (int i = 0; i < cfg.depth; ++i) {
        const std::size_t in = i == 0 ? cfg.pos.output_dim(3) : w;
        trunk_.push_back(DenseLayer::add(layout_, "mlp.trunk" + std::to_string(i), in, w, kMlpLrScale));
    }
    sigma_head_ = DenseLayer::add(layout_, "mlp.sigma", w, 1, kMlpLrScale);
    feature_ = DenseLayer::add(layout_, "mlp.feature", w, w, kMlpLrScale);
    dir_branch_ = DenseLayer::add(layout_, "mlp.dir", w + cfg.dir.output_dim(3), cfg.dir_branch_width, kMlpLrScale);
    color_ = DenseLayer::add(layout_, "mlp.color", cfg.dir_branch_width, 3, kMlpLrScale);
}

void MlpField::set_split(int k) {
    require(k >= 1 && k < cfg_.depth, ErrorKind::Config, "mlp split_k must be in [1, depth)");
    cfg_.split_k = k;
}

void MlpField::init(std::span<float> values, Rng& rng) const {
    for (const auto& l : trunk_) l.init(values, rng);
    sigma_head_.init(values, rng);
    feature_.init(values, rng);
    dir_branch_.init(values, rng);
    color_.init(values, rng);
}

// tape.mats: encoded input, then the output of each of the first K layers
template <class T>
void MlpField::phi1(std::span<const T> p, const Matrix<T>& x, Matrix<T>& feat, Tape<T>* tape) const {
    Matrix<T> enc(x.rows, cfg_.pos.output_dim(3));
    for (std::size_t r = 0; r < x.rows; ++r) {
        positional_encode_into<T>(std::span<const T>(x.row(r), 3), cfg_.pos, enc.row(r));
    }
    if (tape != nullptr) {
        tape->mats.clear();
        tape->mats.push_back(enc);
    }
    Matrix<T> h = std::move(enc);
    for (int i = 0; i < cfg_.split_k; ++i) {
        Matrix<T> next;
        dense_forward(trunk_[i], p, h, next);
        relu_inplace(next);
        if (tape != nullptr) tape->mats.push_back(next);
        h = std::move(next);
    }
    feat = std::move(h);
}

template <class T>
void MlpField::phi1_backward(std::span<const T> p, const Matrix<T>&, const Tape<T>& tape, const Matrix<T>& dfeat,
                             std::span<T> grad) const {
    Matrix<T> dh = dfeat;
    for (int i = cfg_.split_k - 1; i >= 0; --i) {
        relu_backward_inplace(tape.mats[i + 1], dh);
        Matrix<T> dprev;
        dense_backward(trunk_[i], p, tape.mats[i], dh, grad, i > 0 ? &dprev : nullptr);
        dh = std::move(dprev);
    }
}

// tape.mats: outputs of layers K..depth-1, then [feature | dir encoding], dir branch, rgb
template <class T>
void MlpField::phi2(std::span<const T> p, const Matrix<T>& feat, const Matrix<T>& dirs, std::vector<T>& sigma,
                    Matrix<T>& rgb, Tape<T>* tape) const {
    if (tape != nullptr) tape->mats.clear();
    const Matrix<T>* h = &feat;
    Matrix<T> cur;
    for (int i = cfg_.split_k; i < cfg_.depth; ++i) {
        Matrix<T> next;
        dense_forward(trunk_[i], p, *h, next);
        relu_inplace(next);
        if (tape != nullptr) tape->mats.push_back(next);
        cur = std::move(next);
        h = &cur;
    }
    Matrix<T> s;
    dense_forward(sigma_head_, p, cur, s);
    sigma.assign(s.data.begin(), s.data.end());
    Matrix<T> f;
    dense_forward(feature_, p, cur, f);
    const std::size_t w = cfg_.width;
    Matrix<T> cat(feat.rows, w + cfg_.dir.output_dim(3));
    for (std::size_t r = 0; r < feat.rows; ++r) std::copy_n(f.row(r), w, cat.row(r));
    encode_dirs(dirs, cfg_.dir, cat, w);
    Matrix<T> g;
    dense_forward(dir_branch_, p, cat, g);
    relu_inplace(g);
    dense_forward(color_, p, g, rgb);
    sigmoid_inplace(rgb);
    if (tape != nullptr) {
        tape->mats.push_back(std::move(cat));
        tape->mats.push_back(std::move(g));
        tape->mats.push_back(rgb);
    }
}

template <class T>
void MlpField::phi2_backward(std::span<const T> p, const Matrix<T>& feat, const Matrix<T>&, const Tape<T>& tape,
                             const std::vector<T>& dsigma, const Matrix<T>& drgb, std::span<T> grad,
                             Matrix<T>* dfeat) const {
    const int n_trunk = cfg_.depth - cfg_.split_k;
    const Matrix<T>& h_last = tape.mats[n_trunk - 1];
    const Matrix<T>& cat = tape.mats[n_trunk];
    const Matrix<T>& g = tape.mats[n_trunk + 1];
    const Matrix<T>& rgb = tape.mats[n_trunk + 2];
    const std::size_t w = cfg_.width;

    Matrix<T> dlogit = sigmoid_backward(rgb, drgb);
    Matrix<T> dg;
    dense_backward(color_, p, g, dlogit, grad, &dg);
    relu_backward_inplace(g, dg);
    Matrix<T> dcat;
    dense_backward(dir_branch_, p, cat, dg, grad, &dcat);
    Matrix<T> df(feat.rows, w);
    for (std::size_t r = 0; r < feat.rows; ++r) std::copy_n(dcat.row(r), w, df.row(r));
    Matrix<T> dh;
    dense_backward(feature_, p, h_last, df, grad, &dh);
    Matrix<T> ds(feat.rows, 1);
    std::copy(dsigma.begin(), dsigma.end(), ds.data.begin());
    Matrix<T> dhs;
    dense_backward(sigma_head_, p, h_last, ds, grad, &dhs);
    for (std::size_t i = 0; i < dh.data.size(); ++i) dh.data[i] += dhs.data[i];

    for (int i = cfg_.depth - 1; i >= cfg_.split_k; --i) {
        const int t = i - cfg_.split_k;
        relu_backward_inplace(tape.mats[t], dh);
        const Matrix<T>& input = t == 0 ? feat : tape.mats[t - 1];
        const bool want_dx = t > 0 || dfeat != nullptr;
        Matrix<T> dprev;
        dense_backward(trunk_[i], p, input, dh, grad, want_dx ? &dprev : nullptr);
        dh = std::move(dprev);
    }
    if (dfeat != nullptr) *dfeat = std::move(dh);
}

// ---------------------------------------------------------------------------
// Sparse SH voxel grid

GridField::GridField(const GridFieldConfig& cfg) : cfg_(cfg) {
    for (int r : cfg.resolution) require(r >= 2, ErrorKind::Config, "grid resolution must be >= 2 per axis");
    require(cfg.sh_degree >= 0 && cfg.sh_degree <= kMaxShDegree, ErrorKind::Config, "grid sh_degree must be in [0,3]");
    payload_ = 1 + 3 * sh_basis_size(cfg.sh_degree);
    const std::size_t nodes = std::size_t(cfg.resolution[0]) * cfg.resolution[1] * cfg.resolution[2];
    offset_ = layout_.add("grid.payload", nodes * payload_, 1.0);
}

void GridField::init(std::span<float> values, Rng&) const {
    const std::size_t nodes = std::size_t(cfg_.resolution[0]) * cfg_.resolution[1] * cfg_.resolution[2];
    for (std::size_t n = 0; n < nodes; ++n) {
        float* v = values.data() + offset_ + n * payload_;
        v[0] = cfg_.init_density;
        std::fill(v + 1, v + payload_, 0.0f);
    }
}

template <class T>
void GridField::phi1(std::span<const T> p, const Matrix<T>& x, Matrix<T>& feat, Tape<T>* tape) const {
    feat.resize(x.rows, payload_);
    if (tape != nullptr) {
        tape->idx.resize(x.rows * 8);
        tape->weights.resize(x.rows * 8);
    }
    const T* grid = p.data() + offset_;
    for (std::size_t r = 0; r < x.rows; ++r) {
        std::array<int, 3> cell;
        Vec3<T> frac;
        for (int a = 0; a < 3; ++a) lattice_cell(x(r, a), cfg_.resolution[a], cell[a], frac[a]);
        const auto w = trilinear_weights(frac);
        T* out = feat.row(r);
        for (int c = 0; c < 8; ++c) {
            const std::size_t node = node_index(cell[0] + (c & 1), cell[1] + ((c >> 1) & 1), cell[2] + ((c >> 2) & 1));
            const T* src = grid + node * payload_;
            for (std::size_t f = 0; f < payload_; ++f) out[f] += w[c] * src[f];
            if (tape != nullptr) {
                tape->idx[r * 8 + c] = static_cast<std::uint32_t>(node);
                tape->weights[r * 8 + c] = w[c];
            }
        }
    }
}

template <class T>
void GridField::phi1_backward(std::span<const T>, const Matrix<T>&, const Tape<T>& tape, const Matrix<T>& dfeat,
                              std::span<T> grad) const {
    T* g = grad.data() + offset_;
    for (std::size_t r = 0; r < dfeat.rows; ++r) {
        const T* d = dfeat.row(r);
        for (int c = 0; c < 8; ++c) {
            const T w = tape.weights[r * 8 + c];
            T* dst = g + std::size_t(tape.idx[r * 8 + c]) * payload_;
            for (std::size_t f = 0; f < payload_; ++f) dst[f] += w * d[f];
        }
    }
}

// tape.mats: rgb
template <class T>
void GridField::phi2(std::span<const T>, const Matrix<T>& feat, const Matrix<T>& dirs, std::vector<T>& sigma,
                     Matrix<T>& rgb, Tape<T>* tape) const {
    const std::size_t nb = sh_basis_size(cfg_.sh_degree);
    sigma.resize(feat.rows);
    rgb.resize(feat.rows, 3);
    std::array<T, 16> basis{};
    for (std::size_t r = 0; r < feat.rows; ++r) {
        const T* f = feat.row(r);
        sigma[r] = f[0];
        sh_basis_into(Vec3<T>{dirs(r, 0), dirs(r, 1), dirs(r, 2)}, cfg_.sh_degree, basis.data());
        for (int ch = 0; ch < 3; ++ch) {
            T s = T(0);
            for (std::size_t i = 0; i < nb; ++i) s += f[1 + ch * nb + i] * basis[i];
            rgb(r, ch) = sigmoid(s);
        }
    }
    if (tape != nullptr) {
        tape->mats.clear();
        tape->mats.push_back(rgb);
    }
}

template <class T>
void GridField::phi2_backward(std::span<const T>, const Matrix<T>& feat, const Matrix<T>& dirs, const Tape<T>& tape,
                              const std::vector<T>& dsigma, const Matrix<T>& drgb, std::span<T>,
                              Matrix<T>* dfeat) const {
    if (dfeat == nullptr) return;
    const std::size_t nb = sh_basis_size(cfg_.sh_degree);
    const Matrix<T>& rgb = tape.mats[0];
    dfeat->resize(feat.rows, payload_);
    std::array<T, 16> basis{};
    for (std::size_t r = 0; r < feat.rows; ++r) {
        T* d = dfeat->row(r);
        d[0] = dsigma[r];
        sh_basis_into(Vec3<T>{dirs(r, 0), dirs(r, 1), dirs(r, 2)}, cfg_.sh_degree, basis.data());
        for (int ch = 0; ch < 3; ++ch) {
            const T s = rgb(r, ch);
            const T dl = drgb(r, ch) * s * (T(1) - s);
            for (std::size_t i = 0; i < nb; ++i) d[1 + ch * nb + i] = dl * basis[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Vector-matrix decomposed field

VmField::VmField(const VmFieldConfig& cfg) : cfg_(cfg) {
    require(cfg.resolution >= 2, ErrorKind::Config, "vm resolution must be >= 2");
    require(cfg.density_per_pair >= 1 && cfg.appearance_per_pair >= 1, ErrorKind::Config,
            "vm component counts must be >= 1");
    require(cfg.decoder_width >= 1, ErrorKind::Config, "vm decoder_width must be positive");
    const std::size_t n = cfg.resolution;
    for (int m = 0; m < 3; ++m) {
        dens_line_[m] = layout_.add("vm.density.line" + std::to_string(m), cfg.density_per_pair * n, 1.0);
        dens_plane_[m] = layout_.add("vm.density.plane" + std::to_string(m), cfg.density_per_pair * n * n, 1.0);
    }
    for (int m = 0; m < 3; ++m) {
        app_line_[m] = layout_.add("vm.appearance.line" + std::to_string(m), cfg.appearance_per_pair * n, 1.0);
        app_plane_[m] = layout_.add("vm.appearance.plane" + std::to_string(m), cfg.appearance_per_pair * n * n, 1.0);
    }
    decoder_ = Decoder::build(layout_, "vm.decoder", 3 * std::size_t(cfg.appearance_per_pair), cfg.decoder_width,
                              false, cfg.dir);
}

void VmField::init(std::span<float> values, Rng& rng) const {
    for (const Segment& s : layout_.segments()) {
        if (s.name.rfind("vm.decoder", 0) == 0) continue;
        for (std::size_t i = 0; i < s.length; ++i) values[s.offset + i] = static_cast<float>(cfg_.init_std * rng.normal());
    }
    decoder_.init(values, rng);
}

VmComponents VmField::density_components(std::span<const float> p) const {
    const int n = cfg_.resolution;
    const int R = cfg_.density_per_pair;
    VmComponents comp = VmComponents::zeros({n, n, n}, {R, R, R});
    for (int m = 0; m < 3; ++m) {
        for (int r = 0; r < R; ++r) {
            for (int i = 0; i < n; ++i) comp.vectors[m][r][i] = p[dens_line_[m] + std::size_t(r) * n + i];
            for (std::size_t c = 0; c < std::size_t(n) * n; ++c) {
                comp.matrices[m][r][c] = p[dens_plane_[m] + std::size_t(r) * n * n + c];
            }
        }
    }
    return comp;
}

namespace {

struct VmCoords {
    std::array<int, 3> cell;
    std::array<double, 3> frac;
};

}  // namespace

// tape.mats: interpolated line values, interpolated plane values (one column per component)
template <class T>
void VmField::phi1(std::span<const T> p, const Matrix<T>& x, Matrix<T>& feat, Tape<T>* tape) const {
    const std::size_t n = cfg_.resolution;
    const std::size_t F = feature_dim();
    feat.resize(x.rows, F);
    Matrix<T> lines, planes;
    if (tape != nullptr) {
        lines.resize(x.rows, F);
        planes.resize(x.rows, F);
    }
    for (std::size_t r = 0; r < x.rows; ++r) {
        std::array<int, 3> cell;
        Vec3<T> frac;
        for (int a = 0; a < 3; ++a) lattice_cell(x(r, a), cfg_.resolution, cell[a], frac[a]);
        std::size_t col = 0;
        for (int group = 0; group < 2; ++group) {
            const bool density = group == 0;
            const int R = density ? cfg_.density_per_pair : cfg_.appearance_per_pair;
            for (int m = 0; m < 3; ++m) {
                const auto ax = vm_plane_axes(m);
                const T* line = p.data() + line_offset(density, m);
                const T* plane = p.data() + plane_offset(density, m);
                const int lc = cell[m];
                const T lf = frac[m];
                const int c0 = cell[ax[0]], c1 = cell[ax[1]];
                const T f0 = frac[ax[0]], f1 = frac[ax[1]];
                const T w00 = (T(1) - f0) * (T(1) - f1), w01 = (T(1) - f0) * f1;
                const T w10 = f0 * (T(1) - f1), w11 = f0 * f1;
                for (int k = 0; k < R; ++k, ++col) {
                    const T* L = line + std::size_t(k) * n;
                    const T* P = plane + std::size_t(k) * n * n;
                    const T lv = (T(1) - lf) * L[lc] + lf * L[lc + 1];
                    const std::size_t base = std::size_t(c0) * n + c1;
                    const T pv = w00 * P[base] + w01 * P[base + 1] + w10 * P[base + n] + w11 * P[base + n + 1];
                    feat(r, col) = lv * pv;
                    if (tape != nullptr) {
                        lines(r, col) = lv;
                        planes(r, col) = pv;
                    }
                }
            }
        }
    }
    if (tape != nullptr) {
        tape->mats.clear();
        tape->mats.push_back(std::move(lines));
        tape->mats.push_back(std::move(planes));
    }
}

template <class T>
void VmField::phi1_backward(std::span<const T>, const Matrix<T>& x, const Tape<T>& tape, const Matrix<T>& dfeat,
                            std::span<T> grad) const {
    const std::size_t n = cfg_.resolution;
    const Matrix<T>& lines = tape.mats[0];
    const Matrix<T>& planes = tape.mats[1];
    for (std::size_t r = 0; r < x.rows; ++r) {
        std::array<int, 3> cell;
        Vec3<T> frac;
        for (int a = 0; a < 3; ++a) lattice_cell(x(r, a), cfg_.resolution, cell[a], frac[a]);
        std::size_t col = 0;
        for (int group = 0; group < 2; ++group) {
            const bool density = group == 0;
            const int R = density ? cfg_.density_per_pair : cfg_.appearance_per_pair;
            for (int m = 0; m < 3; ++m) {
                const auto ax = vm_plane_axes(m);
                T* gline = grad.data() + line_offset(density, m);
                T* gplane = grad.data() + plane_offset(density, m);
                const int lc = cell[m];
                const T lf = frac[m];
                const int c0 = cell[ax[0]], c1 = cell[ax[1]];
                const T f0 = frac[ax[0]], f1 = frac[ax[1]];
                const T w00 = (T(1) - f0) * (T(1) - f1), w01 = (T(1) - f0) * f1;
                const T w10 = f0 * (T(1) - f1), w11 = f0 * f1;
                for (int k = 0; k < R; ++k, ++col) {
                    const T d = dfeat(r, col);
                    if (d == T(0)) continue;
                    const T dl = d * planes(r, col);
                    const T dp = d * lines(r, col);
                    T* L = gline + std::size_t(k) * n;
                    T* P = gplane + std::size_t(k) * n * n;
                    L[lc] += (T(1) - lf) * dl;
                    L[lc + 1] += lf * dl;
                    const std::size_t base = std::size_t(c0) * n + c1;
                    P[base] += w00 * dp;
                    P[base + 1] += w01 * dp;
                    P[base + n] += w10 * dp;
                    P[base + n + 1] += w11 * dp;
                }
            }
        }
    }
}

template <class T>
void VmField::phi2(std::span<const T> p, const Matrix<T>& feat, const Matrix<T>& dirs, std::vector<T>& sigma,
                   Matrix<T>& rgb, Tape<T>* tape) const {
    const std::size_t nd = density_dim();
    const std::size_t na = feature_dim() - nd;
    sigma.assign(feat.rows, T(0));
    Matrix<T> app(feat.rows, na);
    for (std::size_t r = 0; r < feat.rows; ++r) {
        const T* f = feat.row(r);
        T s = T(0);
        for (std::size_t i = 0; i < nd; ++i) s += f[i];
        sigma[r] = s;
        std::copy_n(f + nd, na, app.row(r));
    }
    decoder_.forward<T>(p, app, dirs, nullptr, rgb, tape);
    if (tape != nullptr) tape->mats.push_back(std::move(app));
}

template <class T>
void VmField::phi2_backward(std::span<const T> p, const Matrix<T>& feat, const Matrix<T>&, const Tape<T>& tape,
                            const std::vector<T>& dsigma, const Matrix<T>& drgb, std::span<T> grad,
                            Matrix<T>* dfeat) const {
    const std::size_t nd = density_dim();
    const std::size_t na = feature_dim() - nd;
    const Matrix<T>& app = tape.mats[4];
    Matrix<T> dapp;
    decoder_.backward<T>(p, app, tape, nullptr, drgb, grad, dfeat != nullptr ? &dapp : nullptr);
    if (dfeat == nullptr) return;
    dfeat->resize(feat.rows, feature_dim());
    for (std::size_t r = 0; r < feat.rows; ++r) {
        T* d = dfeat->row(r);
        for (std::size_t i = 0; i < nd; ++i) d[i] = dsigma[r];
        std::copy_n(dapp.row(r), na, d + nd);
    }
}

// ---------------------------------------------------------------------------
// Multiresolution hash field

HashField::HashField(const HashFieldConfig& cfg) : cfg_(cfg) {
    cfg.hash.validate();
    require(cfg.decoder_width >= 1, ErrorKind::Config, "hash decoder_width must be positive");
    resolutions_ = level_resolutions(cfg.hash);
    tables_ = layout_.add("hash.tables",
                          std::size_t(cfg.hash.levels) * cfg.hash.table_size * cfg.hash.features_per_level, 1.0);
    decoder_ = Decoder::build(layout_, "hash.decoder", feature_dim(), cfg.decoder_width, true, cfg.dir);
}

void HashField::init(std::span<float> values, Rng& rng) const {
    const Segment& s = layout_.at("hash.tables");
    for (std::size_t i = 0; i < s.length; ++i) {
        values[s.offset + i] = static_cast<float>(rng.uniform(-cfg_.init_range, cfg_.init_range));
    }
    decoder_.init(values, rng);
}

template <class T>
void HashField::phi1(std::span<const T> p, const Matrix<T>& x, Matrix<T>& feat, Tape<T>* tape) const {
    const int L = cfg_.hash.levels;
    const std::size_t F = cfg_.hash.features_per_level;
    const std::size_t S = cfg_.hash.table_size;
    feat.resize(x.rows, feature_dim());
    if (tape != nullptr) {
        tape->idx.resize(x.rows * L * 8);
        tape->weights.resize(x.rows * L * 8);
    }
    for (std::size_t r = 0; r < x.rows; ++r) {
        T* out = feat.row(r);
        for (int l = 0; l < L; ++l) {
            const int nodes = resolutions_[l] + 1;
            std::array<int, 3> cell;
            Vec3<T> frac;
            for (int a = 0; a < 3; ++a) lattice_cell(x(r, a), nodes, cell[a], frac[a]);
            const auto w = trilinear_weights(frac);
            const T* table = p.data() + tables_ + std::size_t(l) * S * F;
            for (int c = 0; c < 8; ++c) {
                const std::array<std::uint32_t, 3> g{std::uint32_t(cell[0] + (c & 1)),
                                                     std::uint32_t(cell[1] + ((c >> 1) & 1)),
                                                     std::uint32_t(cell[2] + ((c >> 2) & 1))};
                const std::uint32_t h = hash_index(g, cfg_.hash);
                const T* src = table + std::size_t(h) * F;
                for (std::size_t f = 0; f < F; ++f) out[l * F + f] += w[c] * src[f];
                if (tape != nullptr) {
                    const std::size_t t = (r * L + l) * 8 + c;
                    tape->idx[t] = h;
                    tape->weights[t] = w[c];
                }
            }
        }
    }
}

template <class T>
void HashField::phi1_backward(std::span<const T>, const Matrix<T>&, const Tape<T>& tape, const Matrix<T>& dfeat,
                              std::span<T> grad) const {
    const int L = cfg_.hash.levels;
    const std::size_t F = cfg_.hash.features_per_level;
    const std::size_t S = cfg_.hash.table_size;
    for (std::size_t r = 0; r < dfeat.rows; ++r) {
        const T* d = dfeat.row(r);
        for (int l = 0; l < L; ++l) {
            T* table = grad.data() + tables_ + std::size_t(l) * S * F;
            for (int c = 0; c < 8; ++c) {
                const std::size_t t = (r * L + l) * 8 + c;
                T* dst = table + std::size_t(tape.idx[t]) * F;
                const T w = tape.weights[t];
                for (std::size_t f = 0; f < F; ++f) dst[f] += w * d[l * F + f];
            }
        }
    }
}

template <class T>
void HashField::phi2(std::span<const T> p, const Matrix<T>& feat, const Matrix<T>& dirs, std::vector<T>& sigma,
                     Matrix<T>& rgb, Tape<T>* tape) const {
    decoder_.forward(p, feat, dirs, &sigma, rgb, tape);
}

template <class T>
void HashField::phi2_backward(std::span<const T> p, const Matrix<T>& feat, const Matrix<T>&, const Tape<T>& tape,
                              const std::vector<T>& dsigma, const Matrix<T>& drgb, std::span<T> grad,
                              Matrix<T>* dfeat) const {
    decoder_.backward(p, feat, tape, &dsigma, drgb, grad, dfeat);
}

// ---------------------------------------------------------------------------
// Variant plumbing

Arch arch_of(const FieldModel& model) {
    switch (model.index()) {
        case 0: return Arch::Mlp;
        case 1: return Arch::Grid;
        case 2: return Arch::Vm;
        default: return Arch::Hash;
    }
}

std::size_t feature_dim(const FieldModel& model) {
    return std::visit([](const auto& f) { return f.feature_dim(); }, model);
}

const SegmentTable& layout_of(const FieldModel& model) {
    return std::visit([](const auto& f) -> const SegmentTable& { return f.layout(); }, model);
}

FieldModel make_model(const FieldConfig& cfg) {
    switch (cfg.arch) {
        case Arch::Mlp: return MlpField(cfg.mlp);
        case Arch::Grid: return GridField(cfg.grid);
        case Arch::Vm: return VmField(cfg.vm);
        case Arch::Hash: return HashField(cfg.hash);
    }
    fail(ErrorKind::Config, "unknown architecture");
}

FieldConfig config_of(const FieldModel& model) {
    FieldConfig cfg;
    cfg.arch = arch_of(model);
    std::visit(
        [&](const auto& f) {
            using F = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<F, MlpField>) cfg.mlp = f.config();
            if constexpr (std::is_same_v<F, GridField>) cfg.grid = f.config();
            if constexpr (std::is_same_v<F, VmField>) cfg.vm = f.config();
            if constexpr (std::is_same_v<F, HashField>) cfg.hash = f.config();
        },
        model);
    return cfg;
}

FieldConfig FieldConfig::full_scale(Arch arch) {
    FieldConfig cfg;
    cfg.arch = arch;
    cfg.mlp.width = 256;
    cfg.mlp.dir_branch_width = 128;
    cfg.grid.resolution = {128, 128, 128};
    cfg.vm.resolution = 300;
    cfg.hash.hash.table_size = 1u << 19;
    cfg.hash.hash.max_resolution = 2048;
    return cfg;
}

FieldPair init_field(const FieldConfig& cfg, std::uint64_t seed) {
    FieldPair field{make_model(cfg), ParamStore{}, seed};
    field.params = ParamStore(layout_of(field.model));
    Rng rng = Rng::stream(seed, "init");
    std::visit([&](const auto& f) { f.init(field.params.values(), rng); }, field.model);
    return field;
}

json to_json(const FieldConfig& cfg) {
    json j;
    j["arch"] = arch_name(cfg.arch);
    switch (cfg.arch) {
        case Arch::Mlp:
            j["mlp"] = {{"depth", cfg.mlp.depth},
                        {"width", cfg.mlp.width},
                        {"split_k", cfg.mlp.split_k},
                        {"dir_branch_width", cfg.mlp.dir_branch_width},
                        {"pos_freqs", cfg.mlp.pos.num_freqs},
                        {"dir_freqs", cfg.mlp.dir.num_freqs}};
            break;
        case Arch::Grid:
            j["grid"] = {{"resolution", cfg.grid.resolution},
                         {"sh_degree", cfg.grid.sh_degree},
                         {"init_density", cfg.grid.init_density}};
            break;
        case Arch::Vm:
            j["vm"] = {{"resolution", cfg.vm.resolution},
                       {"density_per_pair", cfg.vm.density_per_pair},
                       {"appearance_per_pair", cfg.vm.appearance_per_pair},
                       {"decoder_width", cfg.vm.decoder_width},
                       {"dir_freqs", cfg.vm.dir.num_freqs},
                       {"init_std", cfg.vm.init_std}};
            break;
        case Arch::Hash:
            j["hash"] = {{"table_size", cfg.hash.hash.table_size},
                         {"levels", cfg.hash.hash.levels},
                         {"base_resolution", cfg.hash.hash.base_resolution},
                         {"max_resolution", cfg.hash.hash.max_resolution},
                         {"features_per_level", cfg.hash.hash.features_per_level},
                         {"decoder_width", cfg.hash.decoder_width},
                         {"dir_freqs", cfg.hash.dir.num_freqs},
                         {"init_range", cfg.hash.init_range}};
            break;
    }
    return j;
}

FieldConfig field_config_from_json(const json& j) {
    check_keys(j, {"arch", "mlp", "grid", "vm", "hash"}, "field config");
    FieldConfig cfg;
    if (j.contains("arch")) cfg.arch = parse_arch(j.at("arch").get<std::string>());
    try {
        if (j.contains("mlp")) {
            const json& m = j.at("mlp");
            check_keys(m, {"depth", "width", "split_k", "dir_branch_width", "pos_freqs", "dir_freqs"}, "mlp");
            read_opt(m, "depth", cfg.mlp.depth);
            read_opt(m, "width", cfg.mlp.width);
            read_opt(m, "split_k", cfg.mlp.split_k);
            read_opt(m, "dir_branch_width", cfg.mlp.dir_branch_width);
            read_opt(m, "pos_freqs", cfg.mlp.pos.num_freqs);
            read_opt(m, "dir_freqs", cfg.mlp.dir.num_freqs);
        }
        if (j.contains("grid")) {
            const json& g = j.at("grid");
            check_keys(g, {"resolution", "sh_degree", "init_density"}, "grid");
            read_opt(g, "resolution", cfg.grid.resolution);
            read_opt(g, "sh_degree", cfg.grid.sh_degree);
            read_opt(g, "init_density", cfg.grid.init_density);
        }
        if (j.contains("vm")) {
            const json& v = j.at("vm");
            check_keys(v, {"resolution", "density_per_pair", "appearance_per_pair", "decoder_width", "dir_freqs",
                           "init_std"},
                       "vm");
            read_opt(v, "resolution", cfg.vm.resolution);
            read_opt(v, "density_per_pair", cfg.vm.density_per_pair);
            read_opt(v, "appearance_per_pair", cfg.vm.appearance_per_pair);
            read_opt(v, "decoder_width", cfg.vm.decoder_width);
            read_opt(v, "dir_freqs", cfg.vm.dir.num_freqs);
            read_opt(v, "init_std", cfg.vm.init_std);
        }
        if (j.contains("hash")) {
            const json& h = j.at("hash");
            check_keys(h, {"table_size", "levels", "base_resolution", "max_resolution", "features_per_level",
                           "decoder_width", "dir_freqs", "init_range"},
                       "hash");
            read_opt(h, "table_size", cfg.hash.hash.table_size);
            read_opt(h, "levels", cfg.hash.hash.levels);
            read_opt(h, "base_resolution", cfg.hash.hash.base_resolution);
            read_opt(h, "max_resolution", cfg.hash.hash.max_resolution);
            read_opt(h, "features_per_level", cfg.hash.hash.features_per_level);
            read_opt(h, "decoder_width", cfg.hash.decoder_width);
            read_opt(h, "dir_freqs", cfg.hash.dir.num_freqs);
            read_opt(h, "init_range", cfg.hash.init_range);
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("field config: ") + e.what());
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Dispatch

template <class T>
void field_phi1(const FieldModel& m, std::span<const T> p, const Matrix<T>& x, Matrix<T>& feat, Tape<T>* tape) {
    std::visit([&](const auto& f) { f.phi1(p, x, feat, tape); }, m);
}

template <class T>
void field_phi1_backward(const FieldModel& m, std::span<const T> p, const Matrix<T>& x, const Tape<T>& tape,
                         const Matrix<T>& dfeat, std::span<T> grad) {
    std::visit([&](const auto& f) { f.phi1_backward(p, x, tape, dfeat, grad); }, m);
}

template <class T>
void field_phi2(const FieldModel& m, std::span<const T> p, const Matrix<T>& feat, const Matrix<T>& dirs,
                std::vector<T>& sigma, Matrix<T>& rgb, Tape<T>* tape) {
    std::visit([&](const auto& f) { f.phi2(p, feat, dirs, sigma, rgb, tape); }, m);
}

template <class T>
void field_phi2_backward(const FieldModel& m, std::span<const T> p, const Matrix<T>& feat, const Matrix<T>& dirs,
                         const Tape<T>& tape, const std::vector<T>& dsigma, const Matrix<T>& drgb,
                         std::span<T> grad, Matrix<T>* dfeat) {
    std::visit([&](const auto& f) { f.phi2_backward(p, feat, dirs, tape, dsigma, drgb, grad, dfeat); }, m);
}

#define PVD_INSTANTIATE_FIELD(T)                                                                                   \
    template void field_phi1<T>(const FieldModel&, std::span<const T>, const Matrix<T>&, Matrix<T>&, Tape<T>*);    \
    template void field_phi1_backward<T>(const FieldModel&, std::span<const T>, const Matrix<T>&, const Tape<T>&, \
                                         const Matrix<T>&, std::span<T>);                                          \
    template void field_phi2<T>(const FieldModel&, std::span<const T>, const Matrix<T>&, const Matrix<T>&,         \
                                std::vector<T>&, Matrix<T>&, Tape<T>*);                                            \
    template void field_phi2_backward<T>(const FieldModel&, std::span<const T>, const Matrix<T>&,                  \
                                         const Matrix<T>&, const Tape<T>&, const std::vector<T>&,                  \
                                         const Matrix<T>&, std::span<T>, Matrix<T>*);

PVD_INSTANTIATE_FIELD(float)
PVD_INSTANTIATE_FIELD(double)

#undef PVD_INSTANTIATE_FIELD

// ---------------------------------------------------------------------------
// Single-point API

namespace {

Matrix<float> one_row(const Vec3f& v) {
    Matrix<float> m(1, 3);
    m(0, 0) = v[0];
    m(0, 1) = v[1];
    m(0, 2) = v[2];
    return m;
}

}  // namespace

std::vector<float> eval_phi1(const FieldPair& field, const Vec3f& x, const Vec3f&) {
    require(inside_unit_cube(x), ErrorKind::OutOfBounds, "eval_phi1: position outside [-1,1]^3");
    Matrix<float> feat;
    field_phi1<float>(field.model, field.params.values(), one_row(x), feat, nullptr);
    return feat.data;
}

RadianceSample eval_phi2(const FieldPair& field, std::span<const float> feat, const Vec3f& d) {
    require(feat.size() == field.feature_dim(), ErrorKind::Shape,
            "eval_phi2: feature length " + std::to_string(feat.size()) + ", expected " +
                std::to_string(field.feature_dim()));
    Matrix<float> f(1, feat.size());
    std::copy(feat.begin(), feat.end(), f.data.begin());
    std::vector<float> sigma;
    Matrix<float> rgb;
    field_phi2<float>(field.model, field.params.values(), f, one_row(d), sigma, rgb, nullptr);
    return RadianceSample{sigma[0], {rgb(0, 0), rgb(0, 1), rgb(0, 2)}};
}

RadianceSample eval_field(const FieldPair& field, const Vec3f& x, const Vec3f& d) {
    const std::vector<float> feat = eval_phi1(field, x, d);
    return eval_phi2(field, feat, d);
}

}  // namespace pvd
