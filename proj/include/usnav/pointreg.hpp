#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <vector>

#include "usnav/geometry.hpp"

namespace usnav {

// Paired points in two frames; the fit maps moving -> fixed.
struct CorrespondencePairs {
    std::vector<Vec3> fixed;
    std::vector<Vec3> moving;

    static CorrespondencePairs make(std::vector<Vec3> fixed, std::vector<Vec3> moving) {
        if (fixed.size() != moving.size()) {
            throw DataError("CorrespondencePairs: fixed and moving lengths differ");
        }
        if (fixed.size() < 3) throw DataError("CorrespondencePairs: need at least 3 pairs");
        for (const auto& p : fixed)
            if (!p.allFinite()) throw DataError("CorrespondencePairs: non-finite fixed point");
        for (const auto& p : moving)
            if (!p.allFinite()) throw DataError("CorrespondencePairs: non-finite moving point");
        return {std::move(fixed), std::move(moving)};
    }

    std::size_t size() const { return fixed.size(); }
};

struct FitReport {
    double rms_residual = 0.0;           // mm
    std::vector<double> residuals;       // per point, mm
    bool reflection_corrected = false;
    int iterations = 0;
    bool converged = true;
};

namespace detail {

struct Centered {
    Vec3 centroid_fixed, centroid_moving;
    std::vector<Vec3> f, m;  // centered copies
};

inline Centered center_pairs(const CorrespondencePairs& pairs) {
    Centered c;
    c.centroid_fixed = Vec3::Zero();
    c.centroid_moving = Vec3::Zero();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        c.centroid_fixed += pairs.fixed[i];
        c.centroid_moving += pairs.moving[i];
    }
    c.centroid_fixed /= static_cast<double>(pairs.size());
    c.centroid_moving /= static_cast<double>(pairs.size());
    c.f.reserve(pairs.size());
    c.m.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        c.f.push_back(pairs.fixed[i] - c.centroid_fixed);
        c.m.push_back(pairs.moving[i] - c.centroid_moving);
    }
    return c;
}

// Kabsch rotation for centered sets, smallest-singular-vector sign flip when
// the unconstrained optimum is a reflection.
inline Mat3 kabsch_rotation(const std::vector<Vec3>& m, const std::vector<Vec3>& f,
                            bool* reflection_corrected, const char* who) {
    Mat3 h = Mat3::Zero();
    for (std::size_t i = 0; i < m.size(); ++i) h += m[i] * f[i].transpose();
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();
    if (sv(1) <= 1e-9 * std::max(sv(0), 1e-300)) {
        throw GeometryError(std::string(who) + ": degenerate point configuration "
                            "(collinear or coincident points)");
    }
    Mat3 d = Mat3::Identity();
    const double det = (svd.matrixV() * svd.matrixU().transpose()).determinant();
    if (det < 0.0) {
        d(2, 2) = -1.0;
        if (reflection_corrected) *reflection_corrected = true;
    }
    return svd.matrixV() * d * svd.matrixU().transpose();
}

inline void fill_residuals(const CorrespondencePairs& pairs, const Mat3& linear, const Vec3& t,
                           FitReport* report) {
    report->residuals.resize(pairs.size());
    double ss = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const double r = (linear * pairs.moving[i] + t - pairs.fixed[i]).norm();
        report->residuals[i] = r;
        ss += r * r;
    }
    report->rms_residual = std::sqrt(ss / static_cast<double>(pairs.size()));
}

}  // namespace detail

// Global least-squares rigid map moving -> fixed (orthogonal Procrustes).
inline RigidTransform fit_rigid(const CorrespondencePairs& pairs, FitReport* report = nullptr,
                                FrameId source = FrameId::Volume,
                                FrameId target = FrameId::Volume) {
    const auto c = detail::center_pairs(pairs);
    FitReport local;
    FitReport& rep = report ? *report : local;
    rep = FitReport{};
    const Mat3 r = detail::kabsch_rotation(c.m, c.f, &rep.reflection_corrected, "fit_rigid");
    const Vec3 t = c.centroid_fixed - r * c.centroid_moving;
    detail::fill_residuals(pairs, r, t, &rep);
    return RigidTransform{orthonormalized(r), t, source, target};
}

// Least-squares similarity moving -> fixed. Isotropic uses the closed form;
// per-axis scale alternates closed-form scale and Procrustes until the
// parameter change drops below 1e-10.
inline SimilarityTransform fit_similarity(const CorrespondencePairs& pairs, bool isotropic,
                                          FitReport* report = nullptr,
                                          FrameId source = FrameId::Volume,
                                          FrameId target = FrameId::Volume) {
    FitReport local;
    FitReport& rep = report ? *report : local;
    rep = FitReport{};

    const auto c = detail::center_pairs(pairs);
    const std::size_t n = pairs.size();

    if (isotropic) {
        if (n < 3) throw DataError("fit_similarity: need at least 3 pairs");
        const Mat3 r = detail::kabsch_rotation(c.m, c.f, &rep.reflection_corrected,
                                               "fit_similarity");
        double var_m = 0.0, num = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            var_m += c.m[i].squaredNorm();
            num += c.f[i].dot(r * c.m[i]);
        }
        if (var_m <= 0.0) throw GeometryError("fit_similarity: coincident moving points");
        const double s = num / var_m;
        if (s <= 0.0) throw GeometryError("fit_similarity: negative scale solution rejected");
        const Vec3 scale = Vec3::Constant(s);
        const Vec3 t = c.centroid_fixed - r * (scale.asDiagonal() * c.centroid_moving);
        detail::fill_residuals(pairs, r * scale.asDiagonal(), t, &rep);
        rep.iterations = 1;
        return SimilarityTransform{scale, orthonormalized(r), t, source, target};
    }

    if (n < 4) throw DataError("fit_similarity: per-axis scale needs at least 4 pairs");
    {
        // Per-axis scale is identifiable only if the moving points span 3D.
        Mat3 cov = Mat3::Zero();
        for (const auto& p : c.m) cov += p * p.transpose();
        Eigen::JacobiSVD<Mat3> svd(cov);
        const Vec3 sv = svd.singularValues();
        if (sv(2) <= 1e-9 * std::max(sv(0), 1e-300)) {
            throw GeometryError("fit_similarity: coplanar points, per-axis scale is "
                                "rank deficient");
        }
    }

    Vec3 s = Vec3::Ones();
    Mat3 r = Mat3::Identity();
    constexpr int kMaxIter = 100;
    constexpr double kTol = 1e-10;
    bool converged = false;
    int iter = 0;
    for (; iter < kMaxIter; ++iter) {
        // Rotation given scale.
        std::vector<Vec3> scaled(n);
        for (std::size_t i = 0; i < n; ++i) scaled[i] = s.asDiagonal() * c.m[i];
        const Mat3 r_new = detail::kabsch_rotation(scaled, c.f, &rep.reflection_corrected,
                                                   "fit_similarity");
        // Scale given rotation: with u = R^T f, each axis decouples.
        Vec3 num = Vec3::Zero(), den = Vec3::Zero();
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 u = r_new.transpose() * c.f[i];
            num += c.m[i].cwiseProduct(u);
            den += c.m[i].cwiseProduct(c.m[i]);
        }
        if ((den.array() <= 0.0).any()) {
            throw GeometryError("fit_similarity: degenerate axis in moving points");
        }
        const Vec3 s_new = num.cwiseQuotient(den);
        if ((s_new.array() <= 0.0).any()) {
            throw GeometryError("fit_similarity: negative scale solution rejected");
        }
        const double change = std::max((s_new - s).cwiseAbs().maxCoeff(),
                                       rotation_angle_between(r, r_new));
        r = r_new;
        s = s_new;
        if (change < kTol) {
            converged = true;
            ++iter;
            break;
        }
    }
    const Vec3 t = c.centroid_fixed - r * (s.asDiagonal() * c.centroid_moving);
    detail::fill_residuals(pairs, r * s.asDiagonal(), t, &rep);
    rep.iterations = iter;
    rep.converged = converged;
    return SimilarityTransform{s, orthonormalized(r), t, source, target};
}

// Tracked tool poses used for pivot calibration.
struct PivotPoses {
    std::vector<RigidTransform> poses;

    static PivotPoses make(std::vector<RigidTransform> poses) {
        if (poses.size() < 6) throw DataError("PivotPoses: need at least 6 poses");
        double max_angle = 0.0;
        for (std::size_t i = 0; i < poses.size(); ++i) {
            for (std::size_t j = i + 1; j < poses.size(); ++j) {
                max_angle = std::max(max_angle, rotation_angle_between(poses[i].rotation,
                                                                       poses[j].rotation));
            }
        }
        if (max_angle < deg2rad(30.0)) {
            throw DataError("PivotPoses: orientations span less than 30 degrees");
        }
        return {std::move(poses)};
    }
};

struct PivotResult {
    Vec3 tip_offset = Vec3::Zero();   // in the tool/stylus frame, mm
    Vec3 pivot_point = Vec3::Zero();  // in the tracker frame, mm
    double rms = 0.0;                 // mm
};

// Solves R_i * tip + t_i = pivot for (tip, pivot) in least squares.
inline PivotResult pivot_calibrate(const PivotPoses& pivot_poses) {
    const auto& poses = pivot_poses.poses;
    const auto m = static_cast<Eigen::Index>(poses.size());
    Eigen::MatrixXd a(3 * m, 6);
    Eigen::VectorXd b(3 * m);
    for (Eigen::Index i = 0; i < m; ++i) {
        a.block<3, 3>(3 * i, 0) = poses[static_cast<std::size_t>(i)].rotation;
        a.block<3, 3>(3 * i, 3) = -Mat3::Identity();
        b.segment<3>(3 * i) = -poses[static_cast<std::size_t>(i)].translation;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv(0) <= 0.0 || sv(0) / sv(5) > 1e6) {
        throw GeometryError("pivot_calibrate: ill-conditioned system, "
                            "insufficient orientation diversity");
    }
    const Eigen::VectorXd x = svd.solve(b);
    PivotResult out;
    out.tip_offset = x.head<3>();
    out.pivot_point = x.tail<3>();
    double ss = 0.0;
    for (const auto& pose : poses) {
        ss += (pose.rotation * out.tip_offset + pose.translation - out.pivot_point)
                  .squaredNorm();
    }
    out.rms = std::sqrt(ss / static_cast<double>(poses.size()));
    return out;
}

// Scalar motion signal with timestamps in seconds.
struct TimeSeries {
    std::vector<double> timestamps;
    std::vector<double> values;

    static TimeSeries make(std::vector<double> timestamps, std::vector<double> values) {
        if (timestamps.size() != values.size()) {
            throw DataError("TimeSeries: timestamp and value lengths differ");
        }
        if (timestamps.size() < 2) throw DataError("TimeSeries: need at least 2 samples");
        for (std::size_t i = 1; i < timestamps.size(); ++i) {
            if (!(timestamps[i] > timestamps[i - 1])) {
                throw DataError("TimeSeries: timestamps must be strictly increasing");
            }
        }
        return {std::move(timestamps), std::move(values)};
    }

    double median_interval() const {
        std::vector<double> d(timestamps.size() - 1);
        for (std::size_t i = 0; i + 1 < timestamps.size(); ++i) {
            d[i] = timestamps[i + 1] - timestamps[i];
        }
        std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2),
                         d.end());
        return d[d.size() / 2];
    }
};

struct TemporalAlignment {
    double lag = 0.0;       // seconds; b(t + lag) aligns with a(t)
    double peak_ncc = 0.0;  // [-1, 1]
};

namespace detail {

// Linear interpolation of a series onto t; nan outside its range.
inline std::vector<double> resample_series(const TimeSeries& s, double t0, double step,
                                           std::size_t count) {
    std::vector<double> out(count, std::numeric_limits<double>::quiet_NaN());
    std::size_t seg = 0;
    for (std::size_t k = 0; k < count; ++k) {
        const double t = t0 + static_cast<double>(k) * step;
        if (t < s.timestamps.front() || t > s.timestamps.back()) continue;
        while (seg + 2 < s.timestamps.size() && s.timestamps[seg + 1] < t) ++seg;
        const double ta = s.timestamps[seg], tb = s.timestamps[seg + 1];
        const double f = (t - ta) / (tb - ta);
        out[k] = s.values[seg] * (1.0 - f) + s.values[seg + 1] * f;
    }
    return out;
}

inline double series_variance(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    return var / static_cast<double>(v.size());
}

}  // namespace detail

// Lag maximizing normalized cross-correlation between two motion signals,
// refined by parabolic interpolation around the discrete peak.
inline TemporalAlignment temporal_align(const TimeSeries& a, const TimeSeries& b,
                                        double max_lag) {
    if (max_lag < 0.0) throw DataError("temporal_align: max_lag must be >= 0");
    if (detail::series_variance(a.values) <= 0.0 || detail::series_variance(b.values) <= 0.0) {
        throw DataError("temporal_align: constant signal, correlation undefined");
    }
    const double step = std::min(a.median_interval(), b.median_interval());
    const double t0 = std::min(a.timestamps.front(), b.timestamps.front());
    const double t1 = std::max(a.timestamps.back(), b.timestamps.back());
    const auto count = static_cast<std::size_t>(std::floor((t1 - t0) / step)) + 1;
    const std::vector<double> ga = detail::resample_series(a, t0, step, count);
    const std::vector<double> gb = detail::resample_series(b, t0, step, count);

    const int max_shift = static_cast<int>(std::round(max_lag / step));
    const int n = static_cast<int>(count);
    std::vector<double> ncc(static_cast<std::size_t>(2 * max_shift + 1),
                            std::numeric_limits<double>::quiet_NaN());
    bool any = false;
    for (int k = -max_shift; k <= max_shift; ++k) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        int cnt = 0;
        for (int i = 0; i < n; ++i) {
            const int j = i + k;
            if (j < 0 || j >= n) continue;
            const double va = ga[static_cast<std::size_t>(i)];
            const double vb = gb[static_cast<std::size_t>(j)];
            if (std::isnan(va) || std::isnan(vb)) continue;
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
            ++cnt;
        }
        if (cnt < 3) continue;
        const double var_a = saa - sa * sa / cnt;
        const double var_b = sbb - sb * sb / cnt;
        if (var_a <= 0.0 || var_b <= 0.0) continue;
        ncc[static_cast<std::size_t>(k + max_shift)] =
            (sab - sa * sb / cnt) / std::sqrt(var_a * var_b);
        any = true;
    }
    if (!any) {
        throw DataError("temporal_align: series do not overlap within the lag range");
    }

    int best = 0;
    double best_val = -2.0;
    for (int k = -max_shift; k <= max_shift; ++k) {
        const double v = ncc[static_cast<std::size_t>(k + max_shift)];
        if (!std::isnan(v) && v > best_val) {
            best_val = v;
            best = k;
        }
    }

    double refined = static_cast<double>(best);
    if (best > -max_shift && best < max_shift) {
        const double cm = ncc[static_cast<std::size_t>(best - 1 + max_shift)];
        const double cp = ncc[static_cast<std::size_t>(best + 1 + max_shift)];
        const double c0 = best_val;
        if (!std::isnan(cm) && !std::isnan(cp)) {
            const double denom = cm - 2.0 * c0 + cp;
            if (std::abs(denom) > 1e-300) {
                refined += std::clamp(0.5 * (cm - cp) / denom, -0.5, 0.5);
            }
        }
    }
    return {refined * step, std::clamp(best_val, -1.0, 1.0)};
}

}  // namespace usnav
