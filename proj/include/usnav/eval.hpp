#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "usnav/geometry.hpp"

namespace usnav {

struct Landmark {
    Vec3 fixed = Vec3::Zero();
    Vec3 moving = Vec3::Zero();
    std::string label;
};

struct LandmarkSet {
    std::vector<Landmark> pairs;

    static LandmarkSet make(std::vector<Landmark> pairs) {
        if (pairs.empty()) throw DataError("LandmarkSet: need at least one pair");
        for (const auto& l : pairs) {
            if (!l.fixed.allFinite() || !l.moving.allFinite()) {
                throw DataError("LandmarkSet: non-finite landmark");
            }
        }
        return {std::move(pairs)};
    }
};

struct TreEntry {
    std::string label;
    double total = 0.0;       // mm
    double transverse = 0.0;  // mm, in the plane orthogonal to the axis
    double axial = 0.0;       // mm, along the axis
};

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;  // N-1 normalization, 0 for a single value
};

struct TreResult {
    std::vector<TreEntry> per_landmark;
    MeanStd total, transverse, axial;
};

namespace detail {
inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd m;
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - m.mean) * (x - m.mean);
        m.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return m;
}
}  // namespace detail

// Target registration error with the axial/transverse split. The error
// vector is fixed - T(moving); axial is its component along `axis` and
// transverse the in-plane remainder, computed as sqrt(total^2 - axial^2) so
// the Pythagorean identity holds at machine precision.
inline TreResult compute_tre(const LandmarkSet& landmarks, const AffineTransform& t,
                             const Vec3& axis = Vec3(0, 0, 1)) {
    if (std::abs(axis.norm() - 1.0) > 1e-9) {
        throw DataError("compute_tre: axis must be unit length");
    }
    TreResult out;
    std::vector<double> totals, transverses, axials;
    for (const auto& l : landmarks.pairs) {
        const Vec3 e = l.fixed - t(l.moving);
        TreEntry entry;
        entry.label = l.label;
        entry.total = e.norm();
        entry.axial = std::abs(e.dot(axis));
        entry.transverse =
            std::sqrt(std::max(0.0, entry.total * entry.total - entry.axial * entry.axial));
        totals.push_back(entry.total);
        transverses.push_back(entry.transverse);
        axials.push_back(entry.axial);
        out.per_landmark.push_back(std::move(entry));
    }
    out.total = detail::mean_std(totals);
    out.transverse = detail::mean_std(transverses);
    out.axial = detail::mean_std(axials);
    return out;
}

inline TreResult compute_tre(const LandmarkSet& landmarks) {
    return compute_tre(landmarks, AffineTransform::identity(FrameId::Volume, FrameId::Volume));
}

// Ordered 3D polyline (vessel centerline), millimetres.
struct Polyline {
    std::vector<Vec3> vertices;

    static Polyline make(std::vector<Vec3> vertices) {
        if (vertices.size() < 2) throw DataError("Polyline: need at least 2 vertices");
        double length = 0.0;
        for (std::size_t i = 0; i < vertices.size(); ++i) {
            if (!vertices[i].allFinite()) throw DataError("Polyline: non-finite vertex");
            if (i > 0) {
                const double seg = (vertices[i] - vertices[i - 1]).norm();
                if (seg <= 0.0) throw DataError("Polyline: consecutive vertices coincide");
                length += seg;
            }
        }
        if (!(length > 0.0)) throw DataError("Polyline: zero arc length");
        return {std::move(vertices)};
    }

    double arc_length() const {
        double length = 0.0;
        for (std::size_t i = 1; i < vertices.size(); ++i) {
            length += (vertices[i] - vertices[i - 1]).norm();
        }
        return length;
    }

    Polyline reversed() const {
        std::vector<Vec3> v(vertices.rbegin(), vertices.rend());
        return {std::move(v)};
    }
};

// Arc-length uniform resampling to n vertices, endpoints preserved exactly.
inline Polyline resample_polyline(const Polyline& line, int n = 1000) {
    if (n < 2) throw DataError("resample_polyline: need n >= 2");
    const auto& v = line.vertices;
    std::vector<double> cum(v.size(), 0.0);
    for (std::size_t i = 1; i < v.size(); ++i) {
        cum[i] = cum[i - 1] + (v[i] - v[i - 1]).norm();
    }
    const double total = cum.back();
    std::vector<Vec3> out(static_cast<std::size_t>(n));
    out.front() = v.front();
    out.back() = v.back();
    std::size_t seg = 0;
    for (int k = 1; k < n - 1; ++k) {
        const double s = total * static_cast<double>(k) / static_cast<double>(n - 1);
        while (seg + 2 < v.size() && cum[seg + 1] < s) ++seg;
        const double f = (s - cum[seg]) / (cum[seg + 1] - cum[seg]);
        out[static_cast<std::size_t>(k)] = v[seg] * (1.0 - f) + v[seg + 1] * f;
    }
    return Polyline{std::move(out)};
}

struct CenterlineDistance {
    double mean = 0.0;   // mm
    bool reversed = false;  // true when reversing b lowered the distance
};

// Mean distance between index-corresponding points after resampling both
// lines to `n` points. If pairing against the reversed second line is
// closer, that pairing is used and flagged.
inline CenterlineDistance centerline_distance(const Polyline& a, const Polyline& b,
                                              int n = 1000) {
    const Polyline ra = resample_polyline(a, n);
    const Polyline rb = resample_polyline(b, n);
    double forward = 0.0, backward = 0.0;
    const std::size_t count = ra.vertices.size();
    for (std::size_t i = 0; i < count; ++i) {
        forward += (ra.vertices[i] - rb.vertices[i]).norm();
        backward += (ra.vertices[i] - rb.vertices[count - 1 - i]).norm();
    }
    forward /= static_cast<double>(count);
    backward /= static_cast<double>(count);
    if (backward < forward) return {backward, true};
    return {forward, false};
}

// Non-default alternative statistic: mean over resampled points of `a` of
// the distance to the closest point on `b` (segment-accurate).
inline double mean_closest_point_distance(const Polyline& a, const Polyline& b, int n = 1000) {
    const Polyline ra = resample_polyline(a, n);
    double acc = 0.0;
    for (const auto& p : ra.vertices) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 1; i < b.vertices.size(); ++i) {
            const Vec3& s0 = b.vertices[i - 1];
            const Vec3& s1 = b.vertices[i];
            const Vec3 d = s1 - s0;
            const double t = std::clamp(d.dot(p - s0) / d.squaredNorm(), 0.0, 1.0);
            best = std::min(best, (p - (s0 + t * d)).norm());
        }
        acc += best;
    }
    return acc / static_cast<double>(ra.vertices.size());
}

}  // namespace usnav
