#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "pvd/common.hpp"
#include "pvd/dense.hpp"
#include "pvd/encodings.hpp"
#include "pvd/params.hpp"

namespace pvd {

enum class Arch { Mlp, Grid, Vm, Hash };

const char* arch_name(Arch arch);
/// Accepts mlp | grid | vm | hash, plus the aliases nerf, plenoxels, sparse_grid, tensorf, ngp.
Arch parse_arch(const std::string& name);

/// Learning-rate multiplier that takes the base 0.02 down to 0.001 for MLP parameters.
inline constexpr double kMlpLrScale = 0.05;

struct RadianceSample {
    float sigma = 0.0f;
    Vec3f rgb{0.5f, 0.5f, 0.5f};
};

struct DensityClip {
    float a = -2.0f;
    float b = 7.0f;
};

inline float clip_density(float sigma, const DensityClip& clip) {
    return std::min(std::max(sigma, clip.a), clip.b);
}

/// Scratch state recorded by a forward pass and consumed by the matching backward pass.
template <class T>
struct Tape {
    std::vector<Matrix<T>> mats;
    std::vector<std::uint32_t> idx;
    std::vector<T> weights;
};

// ---------------------------------------------------------------------------
// Configs

struct MlpFieldConfig {
    int depth = 8;
    int width = 128;
    int split_k = 4;
    int dir_branch_width = 64;
    PosEncConfig pos{10, true};
    PosEncConfig dir{4, true};
};

struct GridFieldConfig {
    std::array<int, 3> resolution{64, 64, 64};
    int sh_degree = 2;
    float init_density = 0.1f;
};

struct VmFieldConfig {
    int resolution = 64;
    int density_per_pair = 4;
    int appearance_per_pair = 12;
    int decoder_width = 128;
    PosEncConfig dir{4, true};
    double init_std = 0.1;
};

struct HashFieldConfig {
    HashConfig hash{1u << 15, {1u, 2654435761u, 805459861u}, 14, 16, 256, 2};
    int decoder_width = 64;
    PosEncConfig dir{4, true};
    double init_range = 1e-4;
};

struct FieldConfig {
    Arch arch = Arch::Hash;
    MlpFieldConfig mlp;
    GridFieldConfig grid;
    VmFieldConfig vm;
    HashFieldConfig hash;

    /// Sizes used by the original experiments (256-wide MLP, 128^3 grid, 300^2 VM planes,
    /// 2^19 hash table with 2048 finest resolution).
    static FieldConfig full_scale(Arch arch);
};

nlohmann::json to_json(const FieldConfig& cfg);
/// Unknown keys are rejected.
FieldConfig field_config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Decoder shared by the hash and VM fields: two ReLU hidden layers, an optional linear
// density head, and a sigmoid color layer that also sees the encoded view direction.

struct Decoder {
    std::size_t in_dim = 0;
    std::size_t width = 0;
    bool emit_sigma = true;
    PosEncConfig dir;
    DenseLayer hidden1, hidden2, sigma_head, color;

    static Decoder build(SegmentTable& layout, const std::string& prefix, std::size_t in_dim, std::size_t width,
                         bool emit_sigma, PosEncConfig dir);
    void init(std::span<float> values, Rng& rng) const;

    template <class T>
    void forward(std::span<const T> p, const Matrix<T>& in, const Matrix<T>& dirs, std::vector<T>* sigma,
                 Matrix<T>& rgb, Tape<T>* tape) const;
    template <class T>
    void backward(std::span<const T> p, const Matrix<T>& in, const Tape<T>& tape, const std::vector<T>* dsigma,
                  const Matrix<T>& drgb, std::span<T> grad, Matrix<T>* din) const;
};

// ---------------------------------------------------------------------------
// The four representations. Each exposes the encoder (phi1) and decoder (phi2) as batched
// kernels over row-major point/direction matrices.

class MlpField {
public:
    explicit MlpField(const MlpFieldConfig& cfg);

    const MlpFieldConfig& config() const { return cfg_; }
    const SegmentTable& layout() const { return layout_; }
    std::size_t feature_dim() const { return static_cast<std::size_t>(cfg_.width); }
    void init(std::span<float> values, Rng& rng) const;
    /// Moves the phi1/phi2 boundary without touching weights.
    void set_split(int k);

    template <class T>
    void phi1(std::span<const T> p, const Matrix<T>& x, Matrix<T>& feat, Tape<T>* tape) const;
    template <class T>
    void phi1_backward(std::span<const T> p, const Matrix<T>& x, const Tape<T>& tape, const Matrix<T>& dfeat,
                       std::span<T> grad) const;
    template <class T>
    void phi2(std::span<const T> p, const Matrix<T>& feat, const Matrix<T>& dirs, std::vector<T>& sigma,
              Matrix<T>& rgb, Tape<T>* tape) const;
    template <class T>
    void phi2_backward(std::span<const T> p, const Matrix<T>& feat, const Matrix<T>& dirs, const Tape<T>& tape,
                       const std::vector<T>& dsigma, const Matrix<T>& drgb, std::span<T> grad,
                       Matrix<T>* dfeat) const;

private:
    MlpFieldConfig cfg_;
    SegmentTable layout_;
    std::vector<DenseLayer> trunk_;
    DenseLayer sigma_head_, feature_, dir_branch_, color_;
};

class GridField {
public:
    explicit GridField(const GridFieldConfig& cfg);

    const GridFieldConfig& config() const { return cfg_; }
    const SegmentTable& layout() const { return layout_; }
    std::size_t feature_dim() const { return payload_; }
    std::size_t payload() const { return payload_; }
    std::size_t node_index(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * cfg_.resolution[1] + j) * cfg_.resolution[2] + k;
    }
    void init(std::span<float> values, Rng& rng) const;

    template <class T>
    void phi1(std::span<const T> p, const Matrix<T>& x, Matrix<T>& feat, Tape<T>* tape) const;
    template <class T>
    void phi1_backward(std::span<const T> p, const Matrix<T>& x, const Tape<T>& tape, const Matrix<T>& dfeat,
                       std::span<T> grad) const;
    template <class T>
    void phi2(std::span<const T> p, const Matrix<T>& feat, const Matrix<T>& dirs, std::vector<T>& sigma,
              Matrix<T>& rgb, Tape<T>* tape) const;
    template <class T>
    void phi2_backward(std::span<const T> p, const Matrix<T>& feat, const Matrix<T>& dirs, const Tape<T>& tape,
                       const std::vector<T>& dsigma, const Matrix<T>& drgb, std::span<T> grad,
                       Matrix<T>* dfeat) const;

private:
    GridFieldConfig cfg_;
    SegmentTable layout_;
    std::size_t payload_ = 0;
    std::size_t offset_ = 0;
};

class VmField {
public:
    explicit VmField(const VmFieldConfig& cfg);

    const VmFieldConfig& config() const { return cfg_; }
    const SegmentTable& layout() const { return layout_; }
    /// Density component products (3 * density_per_pair) followed by appearance products.
    std::size_t feature_dim() const { return 3 * std::size_t(cfg_.density_per_pair + cfg_.appearance_per_pair); }
    std::size_t density_dim() const { return 3 * std::size_t(cfg_.density_per_pair); }
    void init(std::span<float> values, Rng& rng) const;

    /// Density components as VmComponents (ranks = density_per_pair on each pairing).
    VmComponents density_components(std::span<const float> p) const;

    template <class T>
    void phi1(std::span<const T> p, const Matrix<T>& x, Matrix<T>& feat, Tape<T>* tape) const;
    template <class T>
    void phi1_backward(std::span<const T> p, const Matrix<T>& x, const Tape<T>& tape, const Matrix<T>& dfeat,
                       std::span<T> grad) const;
    template <class T>
    void phi2(std::span<const T> p, const Matrix<T>& feat, const Matrix<T>& dirs, std::vector<T>& sigma,
              Matrix<T>& rgb, Tape<T>* tape) const;
    template <class T>
    void phi2_backward(std::span<const T> p, const Matrix<T>& feat, const Matrix<T>& dirs, const Tape<T>& tape,
                       const std::vector<T>& dsigma, const Matrix<T>& drgb, std::span<T> grad,
                       Matrix<T>* dfeat) const;

    /// Offsets of the line and plane segments for pairing m, density or appearance group.
    std::size_t line_offset(bool density, int m) const { return (density ? dens_line_ : app_line_)[m]; }
    std::size_t plane_offset(bool density, int m) const { return (density ? dens_plane_ : app_plane_)[m]; }

private:
    VmFieldConfig cfg_;
    SegmentTable layout_;
    std::array<std::size_t, 3> dens_line_{}, dens_plane_{}, app_line_{}, app_plane_{};
    Decoder decoder_;
};

class HashField {
public:
    explicit HashField(const HashFieldConfig& cfg);

    const HashFieldConfig& config() const { return cfg_; }
    const SegmentTable& layout() const { return layout_; }
    std::size_t feature_dim() const { return std::size_t(cfg_.hash.levels) * cfg_.hash.features_per_level; }
    const std::vector<int>& resolutions() const { return resolutions_; }
    void init(std::span<float> values, Rng& rng) const;

    template <class T>
    void phi1(std::span<const T> p, const Matrix<T>& x, Matrix<T>& feat, Tape<T>* tape) const;
    template <class T>
    void phi1_backward(std::span<const T> p, const Matrix<T>& x, const Tape<T>& tape, const Matrix<T>& dfeat,
                       std::span<T> grad) const;
    template <class T>
    void phi2(std::span<const T> p, const Matrix<T>& feat, const Matrix<T>& dirs, std::vector<T>& sigma,
              Matrix<T>& rgb, Tape<T>* tape) const;
    template <class T>
    void phi2_backward(std::span<const T> p, const Matrix<T>& feat, const Matrix<T>& dirs, const Tape<T>& tape,
                       const std::vector<T>& dsigma, const Matrix<T>& drgb, std::span<T> grad,
                       Matrix<T>* dfeat) const;

private:
    HashFieldConfig cfg_;
    SegmentTable layout_;
    std::vector<int> resolutions_;
    std::size_t tables_ = 0;
    Decoder decoder_;
};

using FieldModel = std::variant<MlpField, GridField, VmField, HashField>;

Arch arch_of(const FieldModel& model);
std::size_t feature_dim(const FieldModel& model);
const SegmentTable& layout_of(const FieldModel& model);
FieldModel make_model(const FieldConfig& cfg);
FieldConfig config_of(const FieldModel& model);

/// A representation together with its parameters.
struct FieldPair {
    FieldModel model;
    ParamStore params;
    std::uint64_t seed = 0;

    Arch arch() const { return arch_of(model); }
    std::size_t feature_dim() const { return pvd::feature_dim(model); }
};

/// Builds the model and initializes its parameters from the "init" stream of `seed`.
FieldPair init_field(const FieldConfig& cfg, std::uint64_t seed);

// Batched kernels dispatched over the variant; instantiated for float and double.
template <class T>
void field_phi1(const FieldModel& m, std::span<const T> p, const Matrix<T>& x, Matrix<T>& feat, Tape<T>* tape);
template <class T>
void field_phi1_backward(const FieldModel& m, std::span<const T> p, const Matrix<T>& x, const Tape<T>& tape,
                         const Matrix<T>& dfeat, std::span<T> grad);
template <class T>
void field_phi2(const FieldModel& m, std::span<const T> p, const Matrix<T>& feat, const Matrix<T>& dirs,
                std::vector<T>& sigma, Matrix<T>& rgb, Tape<T>* tape);
template <class T>
void field_phi2_backward(const FieldModel& m, std::span<const T> p, const Matrix<T>& feat, const Matrix<T>& dirs,
                         const Tape<T>& tape, const std::vector<T>& dsigma, const Matrix<T>& drgb,
                         std::span<T> grad, Matrix<T>* dfeat);

// Single-point entry points. Positions must lie in [-1,1]^3 (OutOfBounds otherwise).
std::vector<float> eval_phi1(const FieldPair& field, const Vec3f& x, const Vec3f& d);
RadianceSample eval_phi2(const FieldPair& field, std::span<const float> feat, const Vec3f& d);
RadianceSample eval_field(const FieldPair& field, const Vec3f& x, const Vec3f& d);

}  // namespace pvd
