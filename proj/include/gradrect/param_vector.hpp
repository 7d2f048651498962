#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gradrect {

/// A named, contiguous block inside a flat parameter vector.
struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;

    bool operator==(const Segment&) const = default;
};

using SegmentTable = std::vector<Segment>;

/// Throws UsageError unless the segments tile [0, total) in order with no gap.
void validate_segments(const SegmentTable& segments, std::size_t total);

/// Flat double-precision vector with a segment layout. Shared representation
/// for parameters and gradients; the two are kept apart as distinct types.
template <typename Tag>
class FlatVector {
public:
    FlatVector() = default;
    FlatVector(std::vector<double> values, SegmentTable segments)
        : values_(std::move(values)), segments_(std::move(segments)) {
        validate_segments(segments_, values_.size());
    }

    /// Zero vector with the same layout as another flat vector.
    template <typename OtherTag>
    static FlatVector zeros_like(const FlatVector<OtherTag>& other) {
        return FlatVector(std::vector<double>(other.size(), 0.0), other.segments());
    }

    static FlatVector from_values(std::vector<double> values) {
        const std::size_t n = values.size();
        return FlatVector(std::move(values), SegmentTable{{"values", 0, n}});
    }

    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    const std::vector<double>& raw() const { return values_; }

    const SegmentTable& segments() const { return segments_; }

    std::span<double> segment(const std::string& name);
    std::span<const double> segment(const std::string& name) const;

    bool all_finite() const;

    bool operator==(const FlatVector&) const = default;

private:
    std::vector<double> values_;
    SegmentTable segments_;
};

struct ParamTag {};
struct GradTag {};

extern template class FlatVector<ParamTag>;
extern template class FlatVector<GradTag>;

using ParamVector = FlatVector<ParamTag>;
using GradientVector = FlatVector<GradTag>;

// Reductions use a fixed left-to-right order so results are bit-reproducible.
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

template <typename A, typename B>
double dot(const FlatVector<A>& a, const FlatVector<B>& b) {
    return dot(a.values(), b.values());
}
template <typename A>
double norm(const FlatVector<A>& a) {
    return norm(a.values());
}

/// Throws UsageError when sizes differ; `what` names the operation.
void require_same_size(std::size_t a, std::size_t b, const char* what);

GradientVector operator+(const GradientVector& a, const GradientVector& b);
GradientVector operator-(const GradientVector& a, const GradientVector& b);
GradientVector operator*(double s, const GradientVector& a);

/// a += s * b
void axpy(GradientVector& a, double s, const GradientVector& b);

/// Displacement a - b between two parameter vectors.
GradientVector difference(const ParamVector& a, const ParamVector& b);

/// p + s * d
ParamVector displaced(const ParamVector& p, double s, const GradientVector& d);

}  // namespace gradrect
