#pragma once

#include <Eigen/Dense>
#include <vector>

#include "usnav/optim.hpp"
#include "usnav/parallel.hpp"
#include "usnav/rng.hpp"
#include "usnav/volume.hpp"

namespace usnav {

// Parameters of the patchwise similarity metric. The per-patch constants are
// declared here rather than inherited from any particular tool.
struct LC2Config {
    int patch_radius = 7;        // voxels
    double min_variance = 1e-8;  // intensity^2; flatter patches are skipped
    double ridge = 1e-8;         // Tikhonov term on the 3x3 normal equations
    int stride = 1;              // patch center lattice step, voxels

    void validate() const {
        if (patch_radius < 1) throw DataError("LC2Config: patch_radius must be >= 1");
        if (!(min_variance > 0.0)) throw DataError("LC2Config: min_variance must be > 0");
        if (stride < 1) throw DataError("LC2Config: stride must be >= 1");
    }
};

// Well-scaled affine parameterization: A = T * R(rotation) * Shear * Scale
// with per-axis log-scale kept inside [ln 0.5, ln 2] during optimization.
struct AffineParams {
    Vec3 translation = Vec3::Zero();  // mm
    Vec3 rotation = Vec3::Zero();     // axis-angle, radians
    Vec3 log_scale = Vec3::Zero();
    Vec3 shear = Vec3::Zero();        // (xy, xz, yz) entries of a unit upper triangle

    static constexpr double kLogScaleBound = 0.6931471805599453;  // ln 2

    Mat3 linear() const {
        Mat3 sh = Mat3::Identity();
        sh(0, 1) = shear(0);
        sh(0, 2) = shear(1);
        sh(1, 2) = shear(2);
        return axis_angle_to_matrix(rotation) * sh *
               log_scale.array().exp().matrix().asDiagonal();
    }

    AffineTransform to_affine(FrameId source, FrameId target) const {
        Mat4 m = Mat4::Identity();
        m.topLeftCorner<3, 3>() = linear();
        m.topRightCorner<3, 1>() = translation;
        return AffineTransform::make(m, source, target);
    }

    // Inverse of to_affine via a sign-fixed QR split of the linear part.
    // Affines with negative determinant have no representation here.
    static AffineParams from_affine(const AffineTransform& t) {
        const Mat3 l = t.linear();
        if (l.determinant() <= 0.0) {
            throw GeometryError("AffineParams: affine has non-positive determinant");
        }
        Eigen::HouseholderQR<Mat3> qr(l);
        Mat3 q = qr.householderQ();
        Mat3 r = qr.matrixQR().triangularView<Eigen::Upper>();
        for (int i = 0; i < 3; ++i) {
            if (r(i, i) < 0.0) {
                r.row(i) = -r.row(i);
                q.col(i) = -q.col(i);
            }
        }
        AffineParams p;
        p.translation = t.translation();
        p.rotation = matrix_to_axis_angle(orthonormalized(q));
        p.log_scale = r.diagonal().array().log();
        p.shear = Vec3(r(0, 1) / r(1, 1), r(0, 2) / r(2, 2), r(1, 2) / r(2, 2));
        return p;
    }

    Eigen::Matrix<double, 12, 1> to_vector() const {
        Eigen::Matrix<double, 12, 1> v;
        v << translation, rotation, log_scale, shear;
        return v;
    }

    static AffineParams from_vector(const Eigen::Matrix<double, 12, 1>& v) {
        AffineParams p;
        p.translation = v.segment<3>(0);
        p.rotation = v.segment<3>(3);
        p.log_scale = v.segment<3>(6);
        p.shear = v.segment<3>(9);
        return p;
    }

    AffineParams clamped() const {
        AffineParams p = *this;
        for (int i = 0; i < 3; ++i) {
            p.log_scale(i) = std::clamp(p.log_scale(i), -kLogScaleBound, kLogScaleBound);
        }
        return p;
    }
};

namespace detail {

// Summed-volume tables over the moving-resampled channels make every patch
// regression O(1), so the metric cost is linear in the voxel count instead
// of voxels x patch volume.
class Lc2Tables {
public:
    // Channels: valid count, m, g, u, mm, gg, uu, mg, mu, gu.
    static constexpr int kChannels = 10;

    Lc2Tables(const Volume& us, const Volume& mri, const Volume& mri_grad,
              const AffineTransform& us_to_mri) {
        nx_ = us.dims.x();
        ny_ = us.dims.y();
        nz_ = us.dims.z();
        const std::size_t n = us.size();
        std::vector<double> sample_m(n, 0.0), sample_g(n, 0.0);
        std::vector<std::uint8_t> valid(n, 0);

        const Mat3 lin = us_to_mri.linear();
        const Vec3 off = us_to_mri.translation();
        parallel_chunks(static_cast<std::size_t>(nz_), [&](std::size_t zb, std::size_t ze) {
            for (int z = static_cast<int>(zb); z < static_cast<int>(ze); ++z) {
                for (int y = 0; y < ny_; ++y) {
                    for (int x = 0; x < nx_; ++x) {
                        const std::size_t i = us.index(x, y, z);
                        const Vec3 p = lin * us.voxel_center(x, y, z) + off;
                        bool ok = false;
                        const float m = mri.sample(p, &ok);
                        if (!ok) continue;
                        sample_m[i] = m;
                        sample_g[i] = mri_grad.sample(p);
                        valid[i] = 1;
                    }
                }
            }
        });

        const std::size_t stride_y = static_cast<std::size_t>(nx_ + 1);
        const std::size_t stride_z = stride_y * static_cast<std::size_t>(ny_ + 1);
        const std::size_t table_size = stride_z * static_cast<std::size_t>(nz_ + 1);
        for (auto& t : tables_) t.assign(table_size, 0.0);
        valid_count_ = 0;

        for (int z = 0; z < nz_; ++z) {
            for (int y = 0; y < ny_; ++y) {
                for (int x = 0; x < nx_; ++x) {
                    const std::size_t i = us.index(x, y, z);
                    double cell[kChannels] = {};
                    if (valid[i]) {
                        const double m = sample_m[i];
                        const double g = sample_g[i];
                        const double u = us.voxels[i];
                        cell[0] = 1.0;
                        cell[1] = m;
                        cell[2] = g;
                        cell[3] = u;
                        cell[4] = m * m;
                        cell[5] = g * g;
                        cell[6] = u * u;
                        cell[7] = m * g;
                        cell[8] = m * u;
                        cell[9] = g * u;
                        ++valid_count_;
                    }
                    const std::size_t o = idx(x + 1, y + 1, z + 1);
                    const std::size_t ox = idx(x, y + 1, z + 1);
                    const std::size_t oy = idx(x + 1, y, z + 1);
                    const std::size_t oz = idx(x + 1, y + 1, z);
                    const std::size_t oxy = idx(x, y, z + 1);
                    const std::size_t oxz = idx(x, y + 1, z);
                    const std::size_t oyz = idx(x + 1, y, z);
                    const std::size_t oxyz = idx(x, y, z);
                    for (int c = 0; c < kChannels; ++c) {
                        auto& t = tables_[static_cast<std::size_t>(c)];
                        t[o] = cell[c] + t[ox] + t[oy] + t[oz] - t[oxy] - t[oxz] - t[oyz] +
                               t[oxyz];
                    }
                }
            }
        }
    }

    std::size_t valid_count() const { return valid_count_; }

    // Inclusive box sums over [x0,x1] x [y0,y1] x [z0,z1], clipped by caller.
    void box_sums(int x0, int y0, int z0, int x1, int y1, int z1,
                  double out[kChannels]) const {
        const std::size_t a = idx(x1 + 1, y1 + 1, z1 + 1);
        const std::size_t b = idx(x0, y1 + 1, z1 + 1);
        const std::size_t c = idx(x1 + 1, y0, z1 + 1);
        const std::size_t d = idx(x1 + 1, y1 + 1, z0);
        const std::size_t e = idx(x0, y0, z1 + 1);
        const std::size_t f = idx(x0, y1 + 1, z0);
        const std::size_t g = idx(x1 + 1, y0, z0);
        const std::size_t h = idx(x0, y0, z0);
        for (int ch = 0; ch < kChannels; ++ch) {
            const auto& t = tables_[static_cast<std::size_t>(ch)];
            out[ch] = t[a] - t[b] - t[c] - t[d] + t[e] + t[f] + t[g] - t[h];
        }
    }

private:
    std::size_t idx(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(nx_ + 1) *
                   (static_cast<std::size_t>(y) +
                    static_cast<std::size_t>(ny_ + 1) * static_cast<std::size_t>(z));
    }

    int nx_ = 0, ny_ = 0, nz_ = 0;
    std::array<std::vector<double>, kChannels> tables_;
    std::size_t valid_count_ = 0;
};

inline double lc2_metric_impl(const Volume& us, const Volume& mri, const Volume& mri_grad,
                              const AffineTransform& us_to_mri, const LC2Config& cfg) {
    cfg.validate();
    if (us.size() == 0 || mri.size() == 0) throw DataError("lc2_metric: empty volume");

    const Lc2Tables tables(us, mri, mri_grad, us_to_mri);
    if (tables.valid_count() == 0) {
        throw GeometryError("lc2_metric: no overlap between volumes under the transform");
    }

    const int r = cfg.patch_radius;
    const double n_total = std::pow(2.0 * r + 1.0, 3.0);
    const int nx = us.dims.x(), ny = us.dims.y(), nz = us.dims.z();

    // Per-center contributions are accumulated into an indexed array and
    // reduced in a fixed order, so the value is bit-stable across thread
    // counts.
    const int cx = (nx + cfg.stride - 1) / cfg.stride;
    const int cy = (ny + cfg.stride - 1) / cfg.stride;
    const int cz = (nz + cfg.stride - 1) / cfg.stride;
    std::vector<double> num(static_cast<std::size_t>(cx) * cy * cz, 0.0);
    std::vector<double> den(num.size(), 0.0);

    parallel_chunks(static_cast<std::size_t>(cz), [&](std::size_t kb, std::size_t ke) {
        for (int kz = static_cast<int>(kb); kz < static_cast<int>(ke); ++kz) {
            const int z = kz * cfg.stride;
            for (int ky = 0; ky < cy; ++ky) {
                const int y = ky * cfg.stride;
                for (int kx = 0; kx < cx; ++kx) {
                    const int x = kx * cfg.stride;
                    double s[Lc2Tables::kChannels];
                    tables.box_sums(std::max(0, x - r), std::max(0, y - r), std::max(0, z - r),
                                    std::min(nx - 1, x + r), std::min(ny - 1, y + r),
                                    std::min(nz - 1, z + r), s);
                    const double n = s[0];
                    if (n < 0.5 * n_total || n < 4.0) continue;
                    const double var_u = s[6] / n - (s[3] / n) * (s[3] / n);
                    if (var_u < cfg.min_variance) continue;

                    Mat3 gram;
                    gram << s[4], s[7], s[1], s[7], s[5], s[2], s[1], s[2], n;
                    const Vec3 rhs(s[8], s[9], s[3]);
                    const Mat3 reg = gram + cfg.ridge * Mat3::Identity();
                    const Vec3 coef = reg.ldlt().solve(rhs);

                    const double ss_res =
                        s[6] - 2.0 * coef.dot(rhs) + coef.dot(gram * coef);
                    const double mean_res = (s[3] - coef(0) * s[1] - coef(1) * s[2] -
                                             coef(2) * n) / n;
                    const double var_res = std::max(0.0, ss_res / n - mean_res * mean_res);
                    const double sim = std::clamp(1.0 - var_res / var_u, 0.0, 1.0);
                    const std::size_t ci = static_cast<std::size_t>(kx) +
                                           static_cast<std::size_t>(cx) *
                                               (static_cast<std::size_t>(ky) +
                                                static_cast<std::size_t>(cy) * kz);
                    num[ci] = var_u * sim;
                    den[ci] = var_u;
                }
            }
        }
    });

    double acc_num = 0.0, acc_den = 0.0;
    for (std::size_t i = 0; i < num.size(); ++i) {
        acc_num += num[i];
        acc_den += den[i];
    }
    if (acc_den <= 0.0) {
        throw GeometryError("lc2_metric: all patches skipped (no usable overlap)");
    }
    return acc_num / acc_den;
}

}  // namespace detail

// Patchwise similarity between a US volume and an MRI volume under the map
// `us_to_mri` (US world -> MRI world). Within each patch the US intensities
// are fitted as a linear combination of the resampled MRI intensity, its
// gradient magnitude and a constant; the variance-weighted mean of the
// per-patch explained-variance ratios is returned, in [0, 1].
inline double lc2_metric(const Volume& us, const Volume& mri, const AffineTransform& us_to_mri,
                         const LC2Config& cfg = {}) {
    return detail::lc2_metric_impl(us, mri, gradient_magnitude(mri), us_to_mri, cfg);
}

struct LC2RegOptions {
    int levels = 3;
    int shrink = 2;
    int max_iter = 200;  // simplex iterations per level, split across restarts
    double tol = 1e-4;
    std::uint64_t seed = 7;
    int coarse_stride = 2;  // patch stride above the finest level
};

struct LC2RegResult {
    AffineTransform transform;
    double metric = 0.0;
    std::vector<std::vector<double>> trace;  // best metric per iteration, per level
    std::vector<int> iterations_per_level;
    bool converged = false;
};

// Multi-resolution LC2 refinement of a user-supplied initial affine map.
// A simplex search with one seeded random restart per level maximizes the
// metric from coarse to fine. The returned metric never falls below the
// metric of the initial transform.
inline LC2RegResult register_affine_lc2(const Volume& us, const Volume& mri,
                                        const AffineTransform& init, const LC2Config& cfg = {},
                                        const LC2RegOptions& opt = {}) {
    cfg.validate();
    if (opt.levels < 1) throw DataError("register_affine_lc2: levels must be >= 1");

    AffineParams params = AffineParams::from_affine(init);

    std::vector<Volume> us_pyr{us}, mri_pyr{mri}, grad_pyr;
    for (int l = 1; l < opt.levels; ++l) {
        us_pyr.push_back(downsample(us_pyr.back(), opt.shrink));
        mri_pyr.push_back(downsample(mri_pyr.back(), opt.shrink));
    }
    grad_pyr.reserve(us_pyr.size());
    for (const auto& m : mri_pyr) grad_pyr.push_back(gradient_magnitude(m));

    // Refuses to start if the initial transform gives no overlap.
    try {
        detail::lc2_metric_impl(us_pyr.back(), mri_pyr.back(), grad_pyr.back(), init, [&] {
            LC2Config c = cfg;
            c.stride = opt.levels > 1 ? std::max(cfg.stride, opt.coarse_stride) : cfg.stride;
            return c;
        }());
    } catch (const GeometryError& e) {
        throw GeometryError(std::string("register_affine_lc2: initial transform invalid: ") +
                            e.what());
    }

    Rng rng(opt.seed);
    LC2RegResult res;
    res.trace.resize(static_cast<std::size_t>(opt.levels));
    res.iterations_per_level.assign(static_cast<std::size_t>(opt.levels), 0);

    for (int level = opt.levels - 1; level >= 0; --level) {
        const Volume& us_l = us_pyr[static_cast<std::size_t>(level)];
        const Volume& mri_l = mri_pyr[static_cast<std::size_t>(level)];
        const Volume& grad_l = grad_pyr[static_cast<std::size_t>(level)];
        LC2Config level_cfg = cfg;
        if (level > 0) level_cfg.stride = std::max(cfg.stride, opt.coarse_stride);

        auto objective = [&](const Eigen::VectorXd& v) -> double {
            const AffineParams p = AffineParams::from_vector(v).clamped();
            try {
                return detail::lc2_metric_impl(us_l, mri_l, grad_l,
                                               p.to_affine(init.source, init.target),
                                               level_cfg);
            } catch (const GeometryError&) {
                return -1.0;  // wandered out of overlap
            }
        };

        const double spacing_mean = us_l.spacing.mean();
        Eigen::VectorXd step(12);
        step << Vec3::Constant(spacing_mean), Vec3::Constant(0.03), Vec3::Constant(0.02),
            Vec3::Constant(0.02);

        SimplexOptions sopt;
        sopt.max_iter = opt.max_iter / 2;
        sopt.tol = opt.tol;
        sopt.initial_step = step;
        SimplexResult first = nelder_mead_maximize(objective, params.to_vector(), sopt);

        // One seeded restart around the incumbent guards against a collapsed
        // simplex; the better of the two runs wins.
        Eigen::VectorXd restart_x = first.x;
        for (Eigen::Index i = 0; i < 12; ++i) {
            restart_x(i) += step(i) * rng.uniform(-0.5, 0.5);
        }
        sopt.max_iter = opt.max_iter - first.iterations;
        SimplexResult second = nelder_mead_maximize(objective, restart_x, sopt);

        const SimplexResult& best = second.value > first.value ? second : first;
        params = AffineParams::from_vector(best.x).clamped();

        auto& level_trace = res.trace[static_cast<std::size_t>(level)];
        level_trace = first.best_trace;
        double incumbent = first.value;
        for (double v : second.best_trace) {
            incumbent = std::max(incumbent, v);
            level_trace.push_back(incumbent);
        }
        res.iterations_per_level[static_cast<std::size_t>(level)] =
            first.iterations + second.iterations;
        if (level == 0) res.converged = first.converged || second.converged;
    }

    LC2Config fine_cfg = cfg;
    const double refined = detail::lc2_metric_impl(us_pyr[0], mri_pyr[0], grad_pyr[0],
                                                   params.to_affine(init.source, init.target),
                                                   fine_cfg);
    double init_metric = -1.0;
    try {
        init_metric = detail::lc2_metric_impl(us_pyr[0], mri_pyr[0], grad_pyr[0], init,
                                              fine_cfg);
    } catch (const GeometryError&) {
        init_metric = -1.0;
    }
    if (init_metric > refined) {
        res.transform = init;
        res.metric = init_metric;
    } else {
        res.transform = params.to_affine(init.source, init.target);
        res.metric = refined;
    }
    return res;
}

}  // namespace usnav
