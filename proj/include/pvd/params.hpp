#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pvd/common.hpp"

namespace pvd {

struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
    double lr_scale = 1.0;
};

/// Named, contiguous, non-overlapping slices of one flat parameter buffer.
class SegmentTable {
public:
    std::size_t add(const std::string& name, std::size_t length, double lr_scale = 1.0);

    const Segment& at(const std::string& name) const;
    const Segment* find(const std::string& name) const;
    const std::vector<Segment>& segments() const { return segments_; }
    std::size_t total() const { return total_; }

    bool operator==(const SegmentTable& other) const;

private:
    std::vector<Segment> segments_;
    std::size_t total_ = 0;
};

/// Flat learnable values with a paired gradient buffer of the same length.
template <class T>
class ParamBuffer {
public:
    ParamBuffer() = default;
    explicit ParamBuffer(SegmentTable layout)
        : layout_(std::move(layout)), values_(layout_.total(), T(0)), grads_(layout_.total(), T(0)) {}

    const SegmentTable& layout() const { return layout_; }
    std::size_t size() const { return values_.size(); }

    std::span<T> values() { return values_; }
    std::span<const T> values() const { return values_; }
    std::span<T> grads() { return grads_; }
    std::span<const T> grads() const { return grads_; }

    std::span<T> values(const std::string& segment) {
        const Segment& s = layout_.at(segment);
        return std::span<T>(values_).subspan(s.offset, s.length);
    }
    std::span<const T> values(const std::string& segment) const {
        const Segment& s = layout_.at(segment);
        return std::span<const T>(values_).subspan(s.offset, s.length);
    }
    std::span<T> grads(const std::string& segment) {
        const Segment& s = layout_.at(segment);
        return std::span<T>(grads_).subspan(s.offset, s.length);
    }

    void zero_grad() { std::fill(grads_.begin(), grads_.end(), T(0)); }

    template <class U>
    ParamBuffer<U> cast() const {
        ParamBuffer<U> out(layout_);
        auto dst = out.values();
        for (std::size_t i = 0; i < values_.size(); ++i) dst[i] = static_cast<U>(values_[i]);
        return out;
    }

    /// Name of the first segment holding a non-finite value or gradient.
    std::optional<std::string> first_nonfinite_segment() const {
        for (const Segment& s : layout_.segments()) {
            for (std::size_t i = s.offset; i < s.offset + s.length; ++i) {
                if (!std::isfinite(values_[i]) || !std::isfinite(grads_[i])) return s.name;
            }
        }
        return std::nullopt;
    }

    std::optional<std::string> first_nonfinite_grad() const {
        for (const Segment& s : layout_.segments()) {
            for (std::size_t i = s.offset; i < s.offset + s.length; ++i) {
                if (!std::isfinite(grads_[i])) return s.name;
            }
        }
        return std::nullopt;
    }

private:
    SegmentTable layout_;
    std::vector<T> values_;
    std::vector<T> grads_;
};

using ParamStore = ParamBuffer<float>;

}  // namespace pvd
