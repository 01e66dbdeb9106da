#pragma once

#include <vector>

#include "usnav/camera.hpp"
#include "usnav/compound.hpp"
#include "usnav/demons.hpp"
#include "usnav/eval.hpp"
#include "usnav/pointreg.hpp"
#include "usnav/rng.hpp"

namespace usnav {

// Component error magnitudes injected into the simulated system, mm except
// where noted. Calibration components are fixed-magnitude biases in a random
// direction; tracker and label components are per-sample Gaussian noise.
struct ErrorBudget {
    double tracker_noise_sigma = 0.25;  // mm, per-frame pose noise
    double us_calib_error = 0.8;        // mm
    double robot_calib_error = 2.0;     // mm
    double camera_calib_error = 4.5;    // mm
    double label_noise_sigma = 2.0;     // px
    std::uint64_t seed = 0;

    void validate() const {
        if (tracker_noise_sigma < 0 || us_calib_error < 0 || robot_calib_error < 0 ||
            camera_calib_error < 0 || label_noise_sigma < 0) {
            throw DataError("ErrorBudget: magnitudes must be >= 0");
        }
    }
};

// 5x5 wire grid, nominal 10 mm spacing, placed in tracker space by `pose`.
struct WireGridScene {
    int rows = 5, cols = 5;
    double spacing_mm = 10.0;
    double wire_radius = 1.0;  // mm; sigma of the rendered cross-section blobs
    RigidTransform pose = RigidTransform::identity(FrameId::Volume, FrameId::OpticalTracker);

    static WireGridScene standard() {
        WireGridScene s;
        s.pose = RigidTransform{Mat3::Identity(), Vec3(-20.0, -20.0, 250.0),
                                FrameId::Volume, FrameId::OpticalTracker};
        return s;
    }

    std::vector<Vec3> points_tracker() const {
        std::vector<Vec3> pts;
        pts.reserve(static_cast<std::size_t>(rows) * cols);
        for (int j = 0; j < rows; ++j)
            for (int i = 0; i < cols; ++i)
                pts.push_back(pose(Vec3(i * spacing_mm, j * spacing_mm, 0.0)));
        return pts;
    }
};

// Linear freehand sweep: constant probe orientation, the translation advances
// by `step` (tracker mm) per frame.
struct SweepSpec {
    RigidTransform start_pose =
        RigidTransform::identity(FrameId::ProbeMarker, FrameId::OpticalTracker);
    Vec3 step = Vec3(0.0, 0.0, 0.4);  // mm per frame
    int n_frames = 61;
    double dt = 1.0 / 30.0;  // seconds
    int width = 240, height = 240;  // px

    static SweepSpec standard() {
        SweepSpec s;
        s.start_pose = RigidTransform{Mat3::Identity(), Vec3(0.0, 0.0, 238.0),
                                      FrameId::ProbeMarker, FrameId::OpticalTracker};
        return s;
    }
};

// Ground-truth probe calibration for the standard scene: 0.2 mm/px, image
// centered on the probe origin.
inline SimilarityTransform standard_probe_calibration() {
    return SimilarityTransform{Vec3::Constant(0.2), Mat3::Identity(), Vec3(-24.0, -24.0, 0.0),
                               FrameId::USImage, FrameId::ProbeMarker};
}

inline RigidTransform standard_dv_T_ot() {
    return RigidTransform{rotation_about(Vec3(0, 1, 0), 0.3), Vec3(30.0, 20.0, -180.0),
                          FrameId::OpticalTracker, FrameId::RobotBase};
}

// Endoscope placed 200 mm in front of the grid center.
inline RigidTransform standard_dv_T_ecm() {
    const Vec3 grid_center_dv = standard_dv_T_ot()(Vec3(0.0, 0.0, 250.0));
    const Mat3 r = rotation_about(Vec3(1, 0, 0), 0.2) * rotation_about(Vec3(0, 1, 0), 0.1);
    const Vec3 t = grid_center_dv - r * Vec3(0.0, 0.0, 200.0);
    return RigidTransform{r, t, FrameId::Endoscope, FrameId::RobotBase};
}

// 960x540 stereo rig, f = 700 px, 30 mm baseline, both cameras in the
// endoscope frame.
inline StereoRig standard_rig() {
    Mat3 k;
    k << 700, 0, 480, 0, 700, 270, 0, 0, 1;
    Mat34 pl, pr;
    pl << k, Vec3::Zero();
    pr << k, Vec3::Zero();
    pr.col(3) = k * Vec3(-30.0, 0.0, 0.0);
    return StereoRig::make(ProjectionMatrix::make(pl), ProjectionMatrix::make(pr),
                           {960, 540});
}

// Fixed-magnitude calibration perturbation: translation uniform on the
// sphere of radius `magnitude`, rotation about a random axis with angle
// magnitude / 100 mm (a 100 mm lever-arm convention). Left-composed, so it
// acts in the transform's target frame.
inline RigidTransform random_perturbation(double magnitude_mm, Rng& rng, FrameId frame) {
    if (magnitude_mm <= 0.0) return RigidTransform::identity(frame, frame);
    const Vec3 t = magnitude_mm * rng.unit_vector();
    const Mat3 r = rotation_about(rng.unit_vector(), magnitude_mm / 100.0);
    return RigidTransform{r, t, frame, frame};
}

inline RigidTransform perturbed(const RigidTransform& t, double magnitude_mm, Rng& rng) {
    const RigidTransform d = random_perturbation(magnitude_mm, rng, t.target);
    return compose(d, t);
}

inline SimilarityTransform perturbed(const SimilarityTransform& t, double magnitude_mm,
                                     Rng& rng) {
    const RigidTransform d = random_perturbation(magnitude_mm, rng, t.target);
    return SimilarityTransform{t.scale, renormalized_if_drifted(d.rotation * t.rotation),
                               d.rotation * t.translation + d.translation, t.source, t.target};
}

// One hand-eye perturbation shared by both cameras.
inline StereoRig perturbed(const StereoRig& rig, double magnitude_mm, Rng& rng) {
    const RigidTransform d = random_perturbation(magnitude_mm, rng, FrameId::Endoscope);
    const Mat4 m = d.matrix4();
    return StereoRig{ProjectionMatrix::make(Mat34(rig.left.matrix * m), rig.left.source,
                                            rig.left.target),
                     ProjectionMatrix::make(Mat34(rig.right.matrix * m), rig.right.source,
                                            rig.right.target),
                     rig.image_size};
}

// Continuous in-sweep location of a wire point: fractional frame index plus
// in-plane image coordinates.
struct UsObservation {
    int point_id = 0;
    double frame = 0.0;  // fractional frame index
    double u = 0.0, v = 0.0;
};

struct WireGridTruth {
    SimilarityTransform probe_T_us_true, probe_T_us_cal;
    RigidTransform dv_T_ot_true, dv_T_ot_cal;
    RigidTransform dv_T_ecm;  // read from the robot, not a calibration result
    StereoRig rig_true, rig_cal;
    std::vector<Vec3> grid_tracker;  // true wire points, tracker frame
    std::vector<Vec3> grid_camera;   // true wire points, endoscope frame
    std::vector<UsObservation> us_points;
    std::vector<Vec2> true_left_px, true_right_px;
    std::vector<Vec2> labeled_left_px, labeled_right_px;
};

struct WireGridRun {
    std::vector<TrackedFrame> frames;  // measured (noisy) poses
    WireGridTruth truth;
};

// Simulated water-bath acquisition: renders the wire cross sections into a
// tracked sweep, perturbs each calibration by its budget magnitude, and
// emits the corrupted observables next to the uncorrupted truth.
inline WireGridRun gen_wire_grid_run(const WireGridScene& scene, const ErrorBudget& budget,
                                     const StereoRig& rig, const SweepSpec& sweep) {
    budget.validate();
    if (sweep.n_frames < 2) throw DataError("gen_wire_grid_run: need at least 2 frames");
    Rng rng(budget.seed);

    WireGridRun run;
    WireGridTruth& truth = run.truth;
    truth.probe_T_us_true = standard_probe_calibration();
    truth.dv_T_ot_true = standard_dv_T_ot();
    truth.dv_T_ecm = standard_dv_T_ecm();
    truth.rig_true = rig;
    truth.grid_tracker = scene.points_tracker();

    // Corrupted calibrations, one fixed bias each.
    truth.probe_T_us_cal = perturbed(truth.probe_T_us_true, budget.us_calib_error, rng);
    truth.dv_T_ot_cal = perturbed(truth.dv_T_ot_true, budget.robot_calib_error, rng);
    truth.rig_cal = perturbed(rig, budget.camera_calib_error, rng);

    // Continuous in-sweep coordinates of every wire point; the sweep must
    // cross each one inside the image.
    const Mat3 r0 = sweep.start_pose.rotation;
    const Vec3 plane_normal = r0.col(2);
    const double step_normal = plane_normal.dot(sweep.step);
    if (std::abs(step_normal) < 1e-9) {
        throw GeometryError("gen_wire_grid_run: sweep does not advance across the image plane");
    }
    const AffineTransform us_from_probe = invert(truth.probe_T_us_true);
    for (std::size_t i = 0; i < truth.grid_tracker.size(); ++i) {
        const Vec3& g = truth.grid_tracker[i];
        const double f =
            plane_normal.dot(g - sweep.start_pose.translation) / step_normal;
        if (f < 0.0 || f > sweep.n_frames - 1.0) {
            throw GeometryError("gen_wire_grid_run: sweep does not cover grid point " +
                                std::to_string(i));
        }
        const Vec3 local = r0.transpose() * (g - sweep.start_pose.translation - f * sweep.step);
        const Vec3 img = us_from_probe(local);
        if (img.x() < 0.0 || img.x() > sweep.width - 1.0 || img.y() < 0.0 ||
            img.y() > sweep.height - 1.0) {
            throw GeometryError("gen_wire_grid_run: grid point " + std::to_string(i) +
                                " falls outside the image");
        }
        truth.us_points.push_back({static_cast<int>(i), f, img.x(), img.y()});
    }

    // Render frames from the true geometry, attach noisy measured poses.
    const double sigma = scene.wire_radius;
    const double cutoff = 3.0 * sigma;
    run.frames.reserve(static_cast<std::size_t>(sweep.n_frames));
    for (int k = 0; k < sweep.n_frames; ++k) {
        TrackedFrame frame;
        frame.timestamp = k * sweep.dt;
        frame.width = sweep.width;
        frame.height = sweep.height;
        frame.pixel_spacing = {truth.probe_T_us_true.scale.x(),
                               truth.probe_T_us_true.scale.y()};
        frame.pixels.assign(static_cast<std::size_t>(sweep.width) * sweep.height, 0.0f);

        const Vec3 t_true = sweep.start_pose.translation + k * sweep.step;
        for (const Vec3& g : truth.grid_tracker) {
            const Vec3 local = r0.transpose() * (g - t_true);
            if (std::abs(local.z()) > cutoff) continue;
            const Vec3 img = us_from_probe(local);
            const double sx = truth.probe_T_us_true.scale.x();
            const double sy = truth.probe_T_us_true.scale.y();
            const int u0 = std::max(0, static_cast<int>(std::floor(img.x() - cutoff / sx)));
            const int u1 = std::min(sweep.width - 1,
                                    static_cast<int>(std::ceil(img.x() + cutoff / sx)));
            const int v0 = std::max(0, static_cast<int>(std::floor(img.y() - cutoff / sy)));
            const int v1 = std::min(sweep.height - 1,
                                    static_cast<int>(std::ceil(img.y() + cutoff / sy)));
            for (int v = v0; v <= v1; ++v) {
                for (int u = u0; u <= u1; ++u) {
                    const double dx = (u - img.x()) * sx;
                    const double dy = (v - img.y()) * sy;
                    const double d2 = dx * dx + dy * dy + local.z() * local.z();
                    frame.pixel(u, v) += static_cast<float>(
                        std::exp(-d2 / (2.0 * sigma * sigma)));
                }
            }
        }
        // Quantize to the u8 grid the sequence file stores.
        for (float& p : frame.pixels) {
            p = std::round(std::clamp(p, 0.0f, 1.0f) * 255.0f) / 255.0f;
        }

        RigidTransform measured{r0, t_true, FrameId::ProbeMarker, FrameId::OpticalTracker};
        if (budget.tracker_noise_sigma > 0.0) {
            const Vec3 dt_noise = rng.normal_vec3(budget.tracker_noise_sigma);
            const Mat3 dr = rotation_about(rng.unit_vector(),
                                           rng.normal() * budget.tracker_noise_sigma / 100.0);
            measured.rotation = renormalized_if_drifted(dr * measured.rotation);
            measured.translation = dr * measured.translation + dt_noise;
        }
        frame.pose = measured;
        frame.valid = true;
        run.frames.push_back(std::move(frame));
    }

    // True pixels and noisy labels.
    const RigidTransform ecm_T_ot = compose(truth.dv_T_ecm.inverse(), truth.dv_T_ot_true);
    for (const Vec3& g : truth.grid_tracker) {
        const Vec3 x_ecm = ecm_T_ot(g);
        truth.grid_camera.push_back(x_ecm);
        const Vec2 lp = project_point(rig.left, x_ecm);
        const Vec2 rp = project_point(rig.right, x_ecm);
        truth.true_left_px.push_back(lp);
        truth.true_right_px.push_back(rp);
        const Vec2 label_noise_l(rng.normal(0.0, budget.label_noise_sigma),
                                 rng.normal(0.0, budget.label_noise_sigma));
        const Vec2 label_noise_r(rng.normal(0.0, budget.label_noise_sigma),
                                 rng.normal(0.0, budget.label_noise_sigma));
        truth.labeled_left_px.push_back(lp + label_noise_l);
        truth.labeled_right_px.push_back(rp + label_noise_r);
    }
    return run;
}

// Tracker-space wire positions as the system reconstructs them: the stored
// in-image coordinates mapped through the calibrated similarity and the
// measured poses, with the translation interpolated at the fractional frame.
inline std::vector<Vec3> reconstruct_us_points(const std::vector<TrackedFrame>& frames,
                                               const std::vector<UsObservation>& observations,
                                               const SimilarityTransform& probe_T_us) {
    if (frames.size() < 2) throw DataError("reconstruct_us_points: need at least 2 frames");
    std::vector<Vec3> out;
    out.reserve(observations.size());
    for (const auto& obs : observations) {
        const int k0 = std::clamp(static_cast<int>(std::floor(obs.frame)), 0,
                                  static_cast<int>(frames.size()) - 2);
        const double a = obs.frame - k0;
        const auto& f0 = frames[static_cast<std::size_t>(k0)];
        const auto& f1 = frames[static_cast<std::size_t>(k0) + 1];
        const Vec3 t = (1.0 - a) * f0.pose.translation + a * f1.pose.translation;
        const Vec3 p_probe = probe_T_us(Vec3(obs.u, obs.v, 0.0));
        out.push_back(f0.pose.rotation * p_probe + t);
    }
    return out;
}

struct WaterbathEvaluation {
    ErrorStats pixel_left, pixel_right;  // projected vs labeled, px
    ErrorStats error_3d;                 // triangulated vs triangulated labels, mm
};

// The full simulated evaluation: reconstruct the wires through the corrupted
// calibrations, project them into both cameras, and compare with the labeled
// pixels both in the image and after triangulating both sets with the
// system's (calibrated) rig.
inline WaterbathEvaluation evaluate_wire_grid_run(const WireGridRun& run) {
    const WireGridTruth& t = run.truth;
    const std::vector<Vec3> reconstructed =
        reconstruct_us_points(run.frames, t.us_points, t.probe_T_us_cal);

    const RigidTransform ecm_T_ot = compose(t.dv_T_ecm.inverse(), t.dv_T_ot_cal);
    std::vector<Vec2> pred_left, pred_right;
    std::vector<Vec3> tri_pred, tri_label;
    for (std::size_t i = 0; i < reconstructed.size(); ++i) {
        const Vec3 x_ecm = ecm_T_ot(reconstructed[i]);
        pred_left.push_back(project_point(t.rig_cal.left, x_ecm));
        pred_right.push_back(project_point(t.rig_cal.right, x_ecm));
        tri_pred.push_back(triangulate(t.rig_cal, pred_left.back(), pred_right.back()).point);
        tri_label.push_back(
            triangulate(t.rig_cal, t.labeled_left_px[i], t.labeled_right_px[i]).point);
    }
    WaterbathEvaluation eval;
    eval.pixel_left = projection_error_stats(pred_left, t.labeled_left_px);
    eval.pixel_right = projection_error_stats(pred_right, t.labeled_right_px);
    eval.error_3d = point_error_stats(tri_pred, tri_label);
    return eval;
}

// Principal-axis projection of the tracked probe positions, the motion
// signal used for temporal calibration.
inline TimeSeries probe_motion_signal(const std::vector<TrackedFrame>& frames) {
    if (frames.size() < 2) throw DataError("probe_motion_signal: need at least 2 frames");
    Vec3 mean = Vec3::Zero();
    for (const auto& f : frames) mean += f.pose.translation;
    mean /= static_cast<double>(frames.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& f : frames) {
        const Vec3 d = f.pose.translation - mean;
        cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 axis = eig.eigenvectors().col(2);
    std::vector<double> ts, vs;
    for (const auto& f : frames) {
        ts.push_back(f.timestamp);
        vs.push_back(axis.dot(f.pose.translation - mean));
    }
    return TimeSeries::make(std::move(ts), std::move(vs));
}

// --- multimodal volume fixtures ---

struct MultimodalPair {
    Volume us, mri;
    LandmarkSet landmarks;             // fixed = MRI frame, moving = US frame
    Polyline centerline_us, centerline_mri;
};

namespace detail {

// Smooth synthetic anatomy: soft ellipsoid blobs plus one curved bright tube.
struct SyntheticScene {
    struct Blob {
        Vec3 center;
        Vec3 radii;
        double amplitude;
    };
    std::vector<Blob> blobs;
    std::vector<Vec3> tube;  // densely sampled centerline
    double tube_sigma = 2.5;
    double tube_amplitude = 0.9;

    static SyntheticScene make(double extent, Rng& rng) {
        SyntheticScene s;
        const int n_blobs = 3 + static_cast<int>(rng.below(3));
        for (int i = 0; i < n_blobs; ++i) {
            Blob b;
            b.center = Vec3(rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75),
                            rng.uniform(0.25, 0.75)) * extent;
            b.radii = Vec3(rng.uniform(0.10, 0.22), rng.uniform(0.10, 0.22),
                           rng.uniform(0.10, 0.22)) * extent;
            b.amplitude = rng.uniform(0.35, 0.7);
            s.blobs.push_back(b);
        }
        // Quadratic tube through the volume.
        const Vec3 a(extent * 0.2, extent * rng.uniform(0.3, 0.5), extent * 0.15);
        const Vec3 b(extent * rng.uniform(0.4, 0.6), extent * rng.uniform(0.4, 0.7),
                     extent * 0.55);
        const Vec3 c(extent * 0.8, extent * rng.uniform(0.4, 0.6), extent * 0.85);
        for (int i = 0; i <= 160; ++i) {
            const double t = i / 160.0;
            s.tube.push_back((1 - t) * (1 - t) * a + 2 * t * (1 - t) * b + t * t * c);
        }
        s.tube_sigma = 0.035 * extent;
        return s;
    }

    double value(const Vec3& p) const {
        double v = 0.08;
        for (const auto& b : blobs) {
            const Vec3 q = (p - b.center).cwiseQuotient(b.radii);
            v += b.amplitude * std::exp(-q.squaredNorm());
        }
        double d2 = std::numeric_limits<double>::infinity();
        for (const auto& c : tube) d2 = std::min(d2, (p - c).squaredNorm());
        v += tube_amplitude * std::exp(-d2 / (2.0 * tube_sigma * tube_sigma));
        return v;
    }

    Vec3 gradient(const Vec3& p, double h = 0.5) const {
        Vec3 g;
        for (int a = 0; a < 3; ++a) {
            Vec3 lo = p, hi = p;
            lo[a] -= h;
            hi[a] += h;
            g[a] = (value(hi) - value(lo)) / (2.0 * h);
        }
        return g;
    }
};

}  // namespace detail

// Synthetic MRI/US pair related by the given ground-truth map (US world ->
// MRI world). The US channel applies a nonlinear intensity remap, edge
// brightening, and optional multiplicative speckle, so the pair is genuinely
// multimodal while sharing geometry. Landmarks and the tube centerline are
// emitted in both frames.
inline MultimodalPair gen_multimodal_pair(int size, const AffineTransform& truth,
                                          std::uint64_t seed, double spacing_mm = 1.0,
                                          double speckle = 0.25) {
    if (size < 32) throw DataError("gen_multimodal_pair: size must be >= 32");
    Rng rng(seed);
    const double extent = (size - 1) * spacing_mm;
    const auto scene = detail::SyntheticScene::make(extent, rng);

    const Eigen::Vector3i dims = Eigen::Vector3i::Constant(size);
    const Vec3 sp = Vec3::Constant(spacing_mm);
    Volume mri(dims, sp, Vec3::Zero());
    Volume us(dims, sp, Vec3::Zero());

    for (int z = 0; z < size; ++z)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                mri.at(x, y, z) = static_cast<float>(scene.value(mri.voxel_center(x, y, z)));
            }

    const double rayleigh_sigma = std::sqrt(2.0 / kPi);  // unit-mean Rayleigh
    for (int z = 0; z < size; ++z)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const Vec3 p = truth(us.voxel_center(x, y, z));
                const double v = scene.value(p);
                double out = std::pow(std::max(0.0, v), 0.65);
                out += 0.35 * scene.gradient(p).norm();
                if (speckle > 0.0) {
                    double u1 = rng.uniform();
                    while (u1 <= 0.0) u1 = rng.uniform();
                    const double ray = rayleigh_sigma * std::sqrt(-2.0 * std::log(u1));
                    out *= (1.0 - speckle) + speckle * ray;
                }
                us.at(x, y, z) = static_cast<float>(std::max(0.0, out));
            }

    const AffineTransform truth_inv = truth.inverse();
    std::vector<Landmark> landmarks;
    int id = 0;
    for (const auto& b : scene.blobs) {
        landmarks.push_back({b.center, truth_inv(b.center), "blob" + std::to_string(id++)});
    }
    for (double t : {0.25, 0.5, 0.75}) {
        const Vec3 p = scene.tube[static_cast<std::size_t>(t * 160.0)];
        landmarks.push_back({p, truth_inv(p), "tube" + std::to_string(id++)});
    }

    std::vector<Vec3> line_mri, line_us;
    for (int i = 0; i <= 40; ++i) {
        const Vec3 p = scene.tube[static_cast<std::size_t>(i * 4)];
        line_mri.push_back(p);
        line_us.push_back(truth_inv(p));
    }

    return MultimodalPair{std::move(us), std::move(mri), LandmarkSet::make(std::move(landmarks)),
                          Polyline::make(std::move(line_us)),
                          Polyline::make(std::move(line_mri))};
}

// Sum of 3-6 random Gaussian bumps rescaled so the peak magnitude equals
// max_mm; the scale is backed off if the Jacobian would fall under 0.2.
inline DisplacementField gen_smooth_deformation(const Eigen::Vector3i& dims,
                                                const Vec3& spacing, const Vec3& origin,
                                                double max_mm, std::uint64_t seed) {
    if (!(max_mm > 0.0)) throw DataError("gen_smooth_deformation: max_mm must be > 0");
    Rng rng(seed);
    const Vec3 extent = (dims.cast<double>() - Vec3::Ones()).cwiseProduct(spacing);
    const double min_extent = extent.minCoeff();

    struct Bump {
        Vec3 center, direction;
        double amplitude, sigma;
    };
    std::vector<Bump> bumps;
    const int n = 3 + static_cast<int>(rng.below(4));
    for (int i = 0; i < n; ++i) {
        Bump b;
        b.center = origin + Vec3(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                                 rng.uniform(0.2, 0.8)).cwiseProduct(extent);
        b.direction = rng.unit_vector();
        b.amplitude = rng.uniform(0.5, 1.0);
        b.sigma = rng.uniform(0.18, 0.30) * min_extent;
        bumps.push_back(b);
    }

    DisplacementField field(dims, spacing, origin);
    double max_norm = 0.0;
    for (int z = 0; z < dims.z(); ++z)
        for (int y = 0; y < dims.y(); ++y)
            for (int x = 0; x < dims.x(); ++x) {
                Vec3 v = Vec3::Zero();
                const Vec3 p = field.voxel_center(x, y, z);
                for (const auto& b : bumps) {
                    v += b.amplitude * std::exp(-(p - b.center).squaredNorm() /
                                                (2.0 * b.sigma * b.sigma)) * b.direction;
                }
                field.set_vector(x, y, z, v);
                max_norm = std::max(max_norm, v.norm());
            }
    if (max_norm <= 0.0) throw GeometryError("gen_smooth_deformation: degenerate field");

    auto scaled = [&](double s) {
        DisplacementField f = field;
        for (auto& c : f.data) c = static_cast<float>(c * s);
        return f;
    };

    const double wanted = max_mm / max_norm;
    double feasible = wanted;
    if (field_stats(scaled(wanted)).jacobian_min <= 0.2) {
        double lo = 0.0, hi = wanted;
        for (int it = 0; it < 40; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (field_stats(scaled(mid)).jacobian_min > 0.2) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        feasible = lo;
    }
    DisplacementField out = scaled(feasible);
    if (feasible < wanted * 0.99) {
        throw GeometryError("gen_smooth_deformation: jacobian constraint unreachable at "
                            "the requested magnitude; reduce max_mm");
    }
    return out;
}

// Resamples `vol` at x + field(x); voxels pulling from outside stay zero and
// unfilled.
inline Volume apply_displacement(const Volume& vol, const DisplacementField& field) {
    Volume out(field.dims, field.spacing, field.origin, 0.0f, 0);
    for (int z = 0; z < field.dims.z(); ++z)
        for (int y = 0; y < field.dims.y(); ++y)
            for (int x = 0; x < field.dims.x(); ++x) {
                const Vec3 p = field.voxel_center(x, y, z) + field.vector_at(x, y, z);
                bool ok = false;
                const float v = vol.sample(p, &ok);
                if (!ok) continue;
                const std::size_t i = out.index(x, y, z);
                out.voxels[i] = v;
                out.filled[i] = 1;
            }
    return out;
}

inline std::vector<Vec3> random_points_in_box(const Vec3& lo, const Vec3& hi, int n,
                                              Rng& rng) {
    std::vector<Vec3> pts;
    pts.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        pts.emplace_back(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()),
                         rng.uniform(lo.z(), hi.z()));
    }
    return pts;
}

}  // namespace usnav
