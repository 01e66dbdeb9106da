#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "usnav/common.hpp"

namespace usnav {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

// Coordinate frames of the navigation chain. Every transform records its
// source and target frame; composition checks them, since silent frame
// mismatches are the dominant bug class in multi-frame systems.
enum class FrameId {
    USImage,
    ProbeMarker,
    OpticalTracker,
    RobotBase,
    Endoscope,
    CameraImage,
    Stylus,
    StylusTip,
    ToolMarker,
    MRI,
    Volume,
};

inline const char* to_string(FrameId f) {
    switch (f) {
        case FrameId::USImage: return "USImage";
        case FrameId::ProbeMarker: return "ProbeMarker";
        case FrameId::OpticalTracker: return "OpticalTracker";
        case FrameId::RobotBase: return "RobotBase";
        case FrameId::Endoscope: return "Endoscope";
        case FrameId::CameraImage: return "CameraImage";
        case FrameId::Stylus: return "Stylus";
        case FrameId::StylusTip: return "StylusTip";
        case FrameId::ToolMarker: return "ToolMarker";
        case FrameId::MRI: return "MRI";
        case FrameId::Volume: return "Volume";
    }
    return "?";
}

inline std::optional<FrameId> frame_from_string(const std::string& s) {
    static const FrameId all[] = {
        FrameId::USImage,     FrameId::ProbeMarker, FrameId::OpticalTracker,
        FrameId::RobotBase,   FrameId::Endoscope,   FrameId::CameraImage,
        FrameId::Stylus,      FrameId::StylusTip,   FrameId::ToolMarker,
        FrameId::MRI,         FrameId::Volume,
    };
    for (FrameId f : all) {
        if (s == to_string(f)) return f;
    }
    return std::nullopt;
}

constexpr double kOrthoTol = 1e-9;

inline double orthonormality_drift(const Mat3& r) {
    return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
}

// Nearest rotation in the Frobenius sense (polar decomposition via SVD).
inline Mat3 orthonormalized(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) {
        Mat3 flip = Mat3::Identity();
        flip(2, 2) = -1.0;
        r = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    return r;
}

inline Mat3 renormalized_if_drifted(const Mat3& r) {
    return orthonormality_drift(r) > kOrthoTol ? orthonormalized(r) : r;
}

// Rodrigues formula.
inline Mat3 rotation_about(const Vec3& axis, double angle) {
    const double n = axis.norm();
    if (n < 1e-300) return Mat3::Identity();
    const Vec3 u = axis / n;
    Mat3 k;
    k << 0, -u.z(), u.y(), u.z(), 0, -u.x(), -u.y(), u.x(), 0;
    return Mat3::Identity() + std::sin(angle) * k + (1.0 - std::cos(angle)) * k * k;
}

inline Mat3 axis_angle_to_matrix(const Vec3& aa) { return rotation_about(aa, aa.norm()); }

// Rotation log map; returns axis * angle with angle in [0, pi].
inline Vec3 matrix_to_axis_angle(const Mat3& r) {
    const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
    const double angle = std::acos(c);
    if (angle < 1e-12) return Vec3::Zero();
    if (angle > kPi - 1e-6) {
        // Near pi the antisymmetric part vanishes; recover the axis from R + I.
        Mat3 a = (r + Mat3::Identity()) * 0.5;
        int k = 0;
        a.diagonal().maxCoeff(&k);
        Vec3 axis = a.col(k) / std::sqrt(std::max(a(k, k), 1e-300));
        return axis.normalized() * angle;
    }
    Vec3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    return axis / (2.0 * std::sin(angle)) * angle;
}

inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
    return matrix_to_axis_angle(Mat3(a.transpose() * b)).norm();
}

namespace detail {
inline void check_rotation(const Mat3& r, const char* what) {
    if (!r.allFinite()) throw DataError(std::string(what) + ": non-finite rotation");
    if (orthonormality_drift(r) > 1e-6) {
        throw DataError(std::string(what) + ": rotation not orthonormal");
    }
    if (r.determinant() < 0.0) {
        throw DataError(std::string(what) + ": rotation has negative determinant");
    }
}
}  // namespace detail

// Rigid map x -> R x + t, millimetres.
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    FrameId source = FrameId::Volume;
    FrameId target = FrameId::Volume;

    static RigidTransform identity(FrameId src, FrameId dst) {
        return {Mat3::Identity(), Vec3::Zero(), src, dst};
    }

    // Validating factory; polishes drift up to 1e-6 back to a rotation.
    static RigidTransform make(const Mat3& r, const Vec3& t, FrameId src, FrameId dst) {
        detail::check_rotation(r, "RigidTransform");
        if (!t.allFinite()) throw DataError("RigidTransform: non-finite translation");
        return {renormalized_if_drifted(r), t, src, dst};
    }

    RigidTransform inverse() const {
        const Mat3 rt = rotation.transpose();
        return {rt, Vec3(-(rt * translation)), target, source};
    }

    Vec3 operator()(const Vec3& p) const { return rotation * p + translation; }

    Mat4 matrix4() const {
        Mat4 m = Mat4::Identity();
        m.topLeftCorner<3, 3>() = rotation;
        m.topRightCorner<3, 1>() = translation;
        return m;
    }
};

// Similarity map x -> R diag(s) x + t. When the source is a US image the
// scale carries the pixel-to-millimetre conversion, one factor per image axis.
struct SimilarityTransform {
    Vec3 scale = Vec3::Ones();
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    FrameId source = FrameId::Volume;
    FrameId target = FrameId::Volume;

    static SimilarityTransform identity(FrameId src, FrameId dst) {
        return {Vec3::Ones(), Mat3::Identity(), Vec3::Zero(), src, dst};
    }

    static SimilarityTransform make(const Vec3& s, const Mat3& r, const Vec3& t,
                                    FrameId src, FrameId dst) {
        detail::check_rotation(r, "SimilarityTransform");
        if (!(s.array() > 0.0).all()) {
            throw DataError("SimilarityTransform: scale factors must be positive");
        }
        if (!t.allFinite() || !s.allFinite()) {
            throw DataError("SimilarityTransform: non-finite parameters");
        }
        return {s, renormalized_if_drifted(r), t, src, dst};
    }

    bool isotropic(double rel_tol = 1e-12) const {
        return scale.maxCoeff() - scale.minCoeff() <= rel_tol * scale.maxCoeff();
    }

    Mat3 linear() const { return rotation * scale.asDiagonal(); }

    Vec3 operator()(const Vec3& p) const { return linear() * p + translation; }

    Mat4 matrix4() const {
        Mat4 m = Mat4::Identity();
        m.topLeftCorner<3, 3>() = linear();
        m.topRightCorner<3, 1>() = translation;
        return m;
    }
};

// General affine map, stored homogeneous with last row (0,0,0,1).
struct AffineTransform {
    Mat4 matrix = Mat4::Identity();
    FrameId source = FrameId::Volume;
    FrameId target = FrameId::Volume;

    static AffineTransform identity(FrameId src, FrameId dst) {
        return {Mat4::Identity(), src, dst};
    }

    static AffineTransform make(const Mat4& m, FrameId src, FrameId dst) {
        if (!m.allFinite()) throw DataError("AffineTransform: non-finite matrix");
        if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12) {
            throw DataError("AffineTransform: last row must be (0,0,0,1)");
        }
        if (std::abs(m.topLeftCorner<3, 3>().determinant()) <= 1e-12) {
            throw GeometryError("AffineTransform: singular linear part");
        }
        return {m, src, dst};
    }

    Mat3 linear() const { return matrix.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return matrix.topRightCorner<3, 1>(); }

    AffineTransform inverse() const {
        const Mat3 l = linear();
        if (std::abs(l.determinant()) <= 1e-12) {
            throw GeometryError("AffineTransform::inverse: singular linear part");
        }
        const Mat3 li = l.inverse();
        Mat4 m = Mat4::Identity();
        m.topLeftCorner<3, 3>() = li;
        m.topRightCorner<3, 1>() = -(li * translation());
        return {m, target, source};
    }

    Vec3 operator()(const Vec3& p) const { return linear() * p + translation(); }

    Mat4 matrix4() const { return matrix; }
};

inline AffineTransform to_affine(const RigidTransform& t) {
    return {t.matrix4(), t.source, t.target};
}
inline AffineTransform to_affine(const SimilarityTransform& t) {
    return {t.matrix4(), t.source, t.target};
}
inline AffineTransform to_affine(const AffineTransform& t) { return t; }

// 3x4 pinhole projection, pixels. Applying to a homogeneous point and
// dividing by the third coordinate yields pixel coordinates.
struct ProjectionMatrix {
    Mat34 matrix = (Mat34() << 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0).finished();
    FrameId source = FrameId::Endoscope;
    FrameId target = FrameId::CameraImage;

    static ProjectionMatrix make(const Mat34& m, FrameId src = FrameId::Endoscope,
                                 FrameId dst = FrameId::CameraImage) {
        if (!m.allFinite()) throw DataError("ProjectionMatrix: non-finite matrix");
        Eigen::JacobiSVD<Mat3> svd(m.leftCols<3>());
        if (svd.singularValues()(2) <= 1e-12 * svd.singularValues()(0)) {
            throw GeometryError("ProjectionMatrix: left 3x3 block is rank deficient");
        }
        return {m, src, dst};
    }

    static ProjectionMatrix canonical(FrameId src = FrameId::Endoscope) {
        return {(Mat34() << 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0).finished(), src,
                FrameId::CameraImage};
    }
};

namespace detail {
inline void check_chain(FrameId upstream_source, FrameId downstream_target,
                        const char* upstream, const char* downstream) {
    if (upstream_source != downstream_target) {
        throw DataError(std::string("frame chain mismatch: ") + upstream + " expects source " +
                        to_string(upstream_source) + " but " + downstream + " targets " +
                        to_string(downstream_target));
    }
}
}  // namespace detail

// Frame-checked composition a . b (b applied first).
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    detail::check_chain(a.source, b.target, "left factor", "right factor");
    return {renormalized_if_drifted(a.rotation * b.rotation),
            a.rotation * b.translation + a.translation, b.source, a.target};
}

inline AffineTransform compose(const AffineTransform& a, const AffineTransform& b) {
    detail::check_chain(a.source, b.target, "left factor", "right factor");
    return {a.matrix * b.matrix, b.source, a.target};
}

inline RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
    return compose(a, b);
}
inline AffineTransform operator*(const AffineTransform& a, const AffineTransform& b) {
    return compose(a, b);
}

inline RigidTransform invert(const RigidTransform& t) { return t.inverse(); }
inline AffineTransform invert(const AffineTransform& t) { return t.inverse(); }

// The inverse of an anisotropic similarity is not itself of the form
// R diag(s) x + t, so the inverse is returned as an affine map. It is exact
// for any scale, isotropic or not.
inline AffineTransform invert(const SimilarityTransform& t) {
    return to_affine(t).inverse();
}

template <typename TransformT>
inline std::vector<Vec3> apply(const TransformT& t, const std::vector<Vec3>& points) {
    std::vector<Vec3> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(t(p));
    return out;
}

// Full projection chain from US image coordinates to camera pixels:
//   M . inv(dv_T_ecm) . dv_T_ot . ot_T_probe . probe_T_us
// as a single 3x4 matrix. Frame consistency is checked link by link.
inline ProjectionMatrix compose_chain(const ProjectionMatrix& m,
                                      const RigidTransform& dv_T_ecm,
                                      const RigidTransform& dv_T_ot,
                                      const RigidTransform& ot_T_probe,
                                      const SimilarityTransform& probe_T_us) {
    const RigidTransform ecm_T_dv = dv_T_ecm.inverse();
    detail::check_chain(m.source, ecm_T_dv.target, "projection matrix", "inv(dv_T_ecm)");
    detail::check_chain(ecm_T_dv.source, dv_T_ot.target, "inv(dv_T_ecm)", "dv_T_ot");
    detail::check_chain(dv_T_ot.source, ot_T_probe.target, "dv_T_ot", "ot_T_probe");
    detail::check_chain(ot_T_probe.source, probe_T_us.target, "ot_T_probe", "probe_T_us");

    const Mat4 chain = ecm_T_dv.matrix4() * dv_T_ot.matrix4() * ot_T_probe.matrix4() *
                       probe_T_us.matrix4();
    return ProjectionMatrix::make(m.matrix * chain, probe_T_us.source, m.target);
}

}  // namespace usnav
