#include "gradrect/param_vector.hpp"

#include <cmath>

#include <fmt/format.h>

#include "gradrect/errors.hpp"

namespace gradrect {

void validate_segments(const SegmentTable& segments, std::size_t total) {
    std::size_t cursor = 0;
    for (const auto& s : segments) {
        if (s.offset != cursor)
            throw UsageError(fmt::format("segment '{}' starts at {} but expected {}", s.name,
                                         s.offset, cursor));
        cursor += s.length;
    }
    if (cursor != total)
        throw UsageError(fmt::format("segments cover {} values but vector has {}", cursor, total));
}

template <typename Tag>
std::span<double> FlatVector<Tag>::segment(const std::string& name) {
    for (const auto& s : segments_)
        if (s.name == name) return {values_.data() + s.offset, s.length};
    throw UsageError(fmt::format("no segment named '{}'", name));
}

template <typename Tag>
std::span<const double> FlatVector<Tag>::segment(const std::string& name) const {
    for (const auto& s : segments_)
        if (s.name == name) return {values_.data() + s.offset, s.length};
    throw UsageError(fmt::format("no segment named '{}'", name));
}

template <typename Tag>
bool FlatVector<Tag>::all_finite() const {
    for (double v : values_)
        if (!std::isfinite(v)) return false;
    return true;
}

template class FlatVector<ParamTag>;
template class FlatVector<GradTag>;

double dot(std::span<const double> a, std::span<const double> b) {
    require_same_size(a.size(), b.size(), "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) {
    // Scaled to avoid overflow for large entries.
    double scale = 0.0;
    for (double v : a) scale = std::max(scale, std::abs(v));
    if (scale == 0.0 || !std::isfinite(scale)) return scale;
    double s = 0.0;
    for (double v : a) {
        const double r = v / scale;
        s += r * r;
    }
    return scale * std::sqrt(s);
}

void require_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw UsageError(fmt::format("{}: size mismatch ({} vs {})", what, a, b));
}

GradientVector operator+(const GradientVector& a, const GradientVector& b) {
    require_same_size(a.size(), b.size(), "operator+");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return GradientVector(std::move(out), a.segments());
}

GradientVector operator-(const GradientVector& a, const GradientVector& b) {
    require_same_size(a.size(), b.size(), "operator-");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return GradientVector(std::move(out), a.segments());
}

GradientVector operator*(double s, const GradientVector& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
    return GradientVector(std::move(out), a.segments());
}

void axpy(GradientVector& a, double s, const GradientVector& b) {
    require_same_size(a.size(), b.size(), "axpy");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

GradientVector difference(const ParamVector& a, const ParamVector& b) {
    require_same_size(a.size(), b.size(), "difference");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return GradientVector(std::move(out), a.segments());
}

ParamVector displaced(const ParamVector& p, double s, const GradientVector& d) {
    require_same_size(p.size(), d.size(), "displaced");
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] + s * d[i];
    return ParamVector(std::move(out), p.segments());
}

}  // namespace gradrect
