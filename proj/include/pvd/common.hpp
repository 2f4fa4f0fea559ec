#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvd {

enum class ErrorKind {
    InvalidInput,
    Shape,
    Config,
    Range,
    OutOfBounds,
    UnsupportedDegree,
    Numerical,
    NotApplicable,
    Contract,
    Parse,
    Io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) fail(kind, what);
}

template <class T>
using Vec3 = std::array<T, 3>;

using Vec3d = Vec3<double>;
using Vec3f = Vec3<float>;

template <class T>
inline T dot(const Vec3<T>& a, const Vec3<T>& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

template <class T>
inline Vec3<T> cross(const Vec3<T>& a, const Vec3<T>& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

template <class T>
inline T norm(const Vec3<T>& a) {
    return std::sqrt(dot(a, a));
}

template <class T>
inline Vec3<T> normalized(const Vec3<T>& a) {
    T n = norm(a);
    return {a[0] / n, a[1] / n, a[2] / n};
}

template <class To, class From>
inline Vec3<To> vec_cast(const Vec3<From>& v) {
    return {static_cast<To>(v[0]), static_cast<To>(v[1]), static_cast<To>(v[2])};
}

template <class T>
inline bool inside_unit_cube(const Vec3<T>& x) {
    return x[0] >= T(-1) && x[0] <= T(1) && x[1] >= T(-1) && x[1] <= T(1) && x[2] >= T(-1) &&
           x[2] <= T(1);
}

template <class T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

/// Row-major dense matrix. Rows are samples, columns are channels.
template <class T>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

    void resize(std::size_t r, std::size_t c) {
        rows = r;
        cols = c;
        data.assign(r * c, T(0));
    }

    T* row(std::size_t r) { return data.data() + r * cols; }
    const T* row(std::size_t r) const { return data.data() + r * cols; }
    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

}  // namespace pvd
