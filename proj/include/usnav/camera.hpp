#pragma once

#include <Eigen/Dense>
#include <vector>

#include "usnav/geometry.hpp"

namespace usnav {

using Vec2 = Eigen::Vector2d;

struct StereoRig {
    ProjectionMatrix left;
    ProjectionMatrix right;
    Eigen::Vector2i image_size = {960, 540};  // width, height in pixels

    static StereoRig make(const ProjectionMatrix& left, const ProjectionMatrix& right,
                          const Eigen::Vector2i& image_size = {960, 540}) {
        if ((image_size.array() <= 0).any()) {
            throw DataError("StereoRig: image size must be positive");
        }
        return {left, right, image_size};
    }
};

struct Projected {
    std::vector<Vec2> pixels;
    std::vector<bool> in_front;  // false where projective depth <= 0
};

// Perspective projection; points behind the camera are flagged, not errors.
inline Projected project(const ProjectionMatrix& p, const std::vector<Vec3>& points) {
    Projected out;
    out.pixels.reserve(points.size());
    out.in_front.reserve(points.size());
    for (const auto& x : points) {
        const Vec3 h = p.matrix * x.homogeneous();
        out.pixels.emplace_back(h.x() / h.z(), h.y() / h.z());
        out.in_front.push_back(h.z() > 0.0);
    }
    return out;
}

inline Vec2 project_point(const ProjectionMatrix& p, const Vec3& x, bool* in_front = nullptr) {
    const Vec3 h = p.matrix * x.homogeneous();
    if (in_front) *in_front = h.z() > 0.0;
    return {h.x() / h.z(), h.y() / h.z()};
}

struct Triangulated {
    Vec3 point = Vec3::Zero();
    double reprojection_rms = 0.0;  // pixels over both views
};

// Homogeneous DLT triangulation from one stereo observation. Rows are
// normalized before the SVD so the degeneracy test is scale free.
inline Triangulated triangulate(const StereoRig& rig, const Vec2& left_px,
                                const Vec2& right_px) {
    if (!left_px.allFinite() || !right_px.allFinite()) {
        throw DataError("triangulate: non-finite pixel coordinates");
    }
    Mat4 a;
    const Mat34& l = rig.left.matrix;
    const Mat34& r = rig.right.matrix;
    a.row(0) = left_px.x() * l.row(2) - l.row(0);
    a.row(1) = left_px.y() * l.row(2) - l.row(1);
    a.row(2) = right_px.x() * r.row(2) - r.row(0);
    a.row(3) = right_px.y() * r.row(2) - r.row(1);
    for (int i = 0; i < 4; ++i) {
        const double n = a.row(i).norm();
        if (n > 0.0) a.row(i) /= n;
    }
    Eigen::JacobiSVD<Mat4> svd(a, Eigen::ComputeFullV);
    const Eigen::Vector4d sv = svd.singularValues();
    if (sv(2) < 1e-10 * sv(0)) {
        throw GeometryError("triangulate: degenerate geometry (near-parallel rays)");
    }
    const Eigen::Vector4d x = svd.matrixV().col(3);
    if (std::abs(x(3)) < 1e-12 * x.head<3>().norm()) {
        throw GeometryError("triangulate: point at infinity");
    }
    Triangulated out;
    out.point = x.head<3>() / x(3);
    const Vec2 lp = project_point(rig.left, out.point);
    const Vec2 rp = project_point(rig.right, out.point);
    out.reprojection_rms = std::sqrt(((lp - left_px).squaredNorm() +
                                      (rp - right_px).squaredNorm()) / 2.0);
    return out;
}

struct ErrorStats {
    double mean = 0.0;
    double stddev = 0.0;  // N-1 normalization, 0 for a single point
    std::vector<double> per_point;
};

namespace detail {
inline ErrorStats error_stats_from_distances(std::vector<double> d) {
    ErrorStats s;
    s.per_point = std::move(d);
    for (double x : s.per_point) s.mean += x;
    s.mean /= static_cast<double>(s.per_point.size());
    if (s.per_point.size() > 1) {
        double ss = 0.0;
        for (double x : s.per_point) ss += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(s.per_point.size() - 1));
    }
    return s;
}
}  // namespace detail

// Euclidean distance statistics between paired pixel lists.
inline ErrorStats projection_error_stats(const std::vector<Vec2>& predicted,
                                         const std::vector<Vec2>& labeled) {
    if (predicted.size() != labeled.size()) {
        throw DataError("projection_error_stats: list lengths differ");
    }
    if (predicted.empty()) throw DataError("projection_error_stats: empty input");
    std::vector<double> d(predicted.size());
    for (std::size_t i = 0; i < predicted.size(); ++i) d[i] = (predicted[i] - labeled[i]).norm();
    return detail::error_stats_from_distances(std::move(d));
}

// 3D variant, millimetres.
inline ErrorStats point_error_stats(const std::vector<Vec3>& predicted,
                                    const std::vector<Vec3>& labeled) {
    if (predicted.size() != labeled.size()) {
        throw DataError("point_error_stats: list lengths differ");
    }
    if (predicted.empty()) throw DataError("point_error_stats: empty input");
    std::vector<double> d(predicted.size());
    for (std::size_t i = 0; i < predicted.size(); ++i) d[i] = (predicted[i] - labeled[i]).norm();
    return detail::error_stats_from_distances(std::move(d));
}

}  // namespace usnav
