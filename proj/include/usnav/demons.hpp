#pragma once

#include <array>
#include <vector>

#include "usnav/parallel.hpp"
#include "usnav/volume.hpp"

namespace usnav {

// Dense per-voxel displacement, millimetres, on the fixed volume's grid.
// The registration maps a fixed-grid world point y to the moving-space
// sample location init^-1(y + u(y)).
struct DisplacementField {
    Eigen::Vector3i dims = Eigen::Vector3i::Zero();
    Vec3 spacing = Vec3::Ones();
    Vec3 origin = Vec3::Zero();
    std::vector<float> data;  // interleaved (ux, uy, uz), x fastest

    DisplacementField() = default;

    DisplacementField(const Eigen::Vector3i& d, const Vec3& s, const Vec3& o) {
        if ((d.array() < 1).any()) throw DataError("DisplacementField: dims must be >= 1");
        if (!(s.array() > 0.0).all()) {
            throw DataError("DisplacementField: spacing must be positive");
        }
        dims = d;
        spacing = s;
        origin = o;
        data.assign(static_cast<std::size_t>(d.x()) * d.y() * d.z() * 3, 0.0f);
    }

    std::size_t voxel_count() const { return data.size() / 3; }

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims.x()) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims.y()) * z);
    }

    Vec3 vector_at(int x, int y, int z) const {
        const std::size_t i = 3 * index(x, y, z);
        return {data[i], data[i + 1], data[i + 2]};
    }

    void set_vector(int x, int y, int z, const Vec3& v) {
        const std::size_t i = 3 * index(x, y, z);
        data[i] = static_cast<float>(v.x());
        data[i + 1] = static_cast<float>(v.y());
        data[i + 2] = static_cast<float>(v.z());
    }

    Vec3 voxel_center(int x, int y, int z) const {
        return origin + Vec3(x * spacing.x(), y * spacing.y(), z * spacing.z());
    }

    // Trilinear sample at a world point, clamped to the grid.
    Vec3 sample(const Vec3& world) const {
        Vec3 c = (world - origin).cwiseQuotient(spacing);
        for (int a = 0; a < 3; ++a) c[a] = std::clamp(c[a], 0.0, double(dims[a] - 1));
        const int x0 = std::min(static_cast<int>(c.x()), dims.x() - 1);
        const int y0 = std::min(static_cast<int>(c.y()), dims.y() - 1);
        const int z0 = std::min(static_cast<int>(c.z()), dims.z() - 1);
        const int x1 = std::min(x0 + 1, dims.x() - 1);
        const int y1 = std::min(y0 + 1, dims.y() - 1);
        const int z1 = std::min(z0 + 1, dims.z() - 1);
        const double fx = c.x() - x0, fy = c.y() - y0, fz = c.z() - z0;
        Vec3 out = Vec3::Zero();
        const double w[8] = {(1 - fx) * (1 - fy) * (1 - fz), fx * (1 - fy) * (1 - fz),
                             (1 - fx) * fy * (1 - fz),       fx * fy * (1 - fz),
                             (1 - fx) * (1 - fy) * fz,       fx * (1 - fy) * fz,
                             (1 - fx) * fy * fz,             fx * fy * fz};
        const std::array<std::array<int, 3>, 8> corners = {{{x0, y0, z0}, {x1, y0, z0},
                                                            {x0, y1, z0}, {x1, y1, z0},
                                                            {x0, y0, z1}, {x1, y0, z1},
                                                            {x0, y1, z1}, {x1, y1, z1}}};
        for (int k = 0; k < 8; ++k) {
            out += w[k] * vector_at(corners[k][0], corners[k][1], corners[k][2]);
        }
        return out;
    }
};

struct FieldStats {
    double max_deformation = 0.0;  // mm
    double mean_deformation = 0.0;
    double jacobian_min = 1.0;  // min det of d(x + u)/dx
};

// Magnitude statistics and the minimum Jacobian determinant of id + u
// (central differences, one-sided at the borders).
inline FieldStats field_stats(const DisplacementField& f) {
    FieldStats s;
    s.jacobian_min = std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (int z = 0; z < f.dims.z(); ++z) {
        for (int y = 0; y < f.dims.y(); ++y) {
            for (int x = 0; x < f.dims.x(); ++x) {
                const double n = f.vector_at(x, y, z).norm();
                acc += n;
                s.max_deformation = std::max(s.max_deformation, n);

                Mat3 jac = Mat3::Identity();
                const Eigen::Vector3i p(x, y, z);
                for (int b = 0; b < 3; ++b) {
                    Eigen::Vector3i lo = p, hi = p;
                    if (p[b] > 0) lo[b] -= 1;
                    if (p[b] < f.dims[b] - 1) hi[b] += 1;
                    const double span = (hi[b] - lo[b]) * f.spacing[b];
                    if (span <= 0.0) continue;
                    const Vec3 d = (f.vector_at(hi.x(), hi.y(), hi.z()) -
                                    f.vector_at(lo.x(), lo.y(), lo.z())) / span;
                    jac.col(b) += d;
                }
                s.jacobian_min = std::min(s.jacobian_min, jac.determinant());
            }
        }
    }
    s.mean_deformation = acc / static_cast<double>(f.voxel_count());
    return s;
}

// Translation bringing the moving intensity centroid onto the fixed one.
inline RigidTransform init_translation(const Volume& fixed, const Volume& moving) {
    auto centroid = [](const Volume& v) {
        double mass = 0.0;
        Vec3 acc = Vec3::Zero();
        for (int z = 0; z < v.dims.z(); ++z)
            for (int y = 0; y < v.dims.y(); ++y)
                for (int x = 0; x < v.dims.x(); ++x) {
                    const double val = v.at(x, y, z);
                    mass += val;
                    acc += val * v.voxel_center(x, y, z);
                }
        if (mass <= 0.0) throw DataError("init_translation: volume has zero intensity mass");
        return Vec3(acc / mass);
    };
    return RigidTransform{Mat3::Identity(), centroid(fixed) - centroid(moving),
                          FrameId::Volume, FrameId::Volume};
}

struct DemonsConfig {
    int levels = 3;
    std::array<int, 8> iters_per_level = {100, 100, 50};  // coarsest first
    double sigma_fluid = 1.0;      // mm, smoothing of each update
    double sigma_diffusion = 1.5;  // mm, smoothing of the accumulated field
    double kappa = 0.0;            // intensity normalization; 0 = mean voxel spacing

    void validate() const {
        if (levels < 1 || levels > 8) throw DataError("DemonsConfig: levels must be in [1,8]");
        if (sigma_fluid < 0.0 || sigma_diffusion < 0.0) {
            throw DataError("DemonsConfig: sigmas must be >= 0");
        }
        if (kappa < 0.0) throw DataError("DemonsConfig: kappa must be >= 0");
    }
};

struct DemonsResult {
    DisplacementField field;
    std::vector<std::vector<double>> mse_trace;  // accepted MSE per level, coarsest first
    bool converged = false;
};

namespace detail {

struct FieldBuffers {
    std::vector<double> x, y, z;
    void resize(std::size_t n) {
        x.assign(n, 0.0);
        y.assign(n, 0.0);
        z.assign(n, 0.0);
    }
};

inline void smooth_component(std::vector<double>& comp, const Eigen::Vector3i& dims,
                             const Vec3& sigma_voxels) {
    for (int axis = 0; axis < 3; ++axis) {
        if (sigma_voxels[axis] <= 0.0) continue;
        const auto kernel = gaussian_kernel(sigma_voxels[axis]);
        std::vector<double> src = comp;
        auto at = [&dims](const Eigen::Vector3i& i) {
            return static_cast<std::size_t>(i.x()) +
                   static_cast<std::size_t>(dims.x()) *
                       (static_cast<std::size_t>(i.y()) +
                        static_cast<std::size_t>(dims.y()) * i.z());
        };
        convolve_axis(
            dims, axis, kernel, [&](const Eigen::Vector3i& i) { return src[at(i)]; },
            [&](const Eigen::Vector3i& i, double v) { comp[at(i)] = v; });
    }
}

// Warped moving image and MSE of the current field over valid samples.
inline double warp_and_mse(const Volume& fixed, const Volume& moving,
                           const RigidTransform& init_inv, const FieldBuffers& u,
                           Volume* warped, std::vector<std::uint8_t>* valid) {
    const std::size_t n = fixed.size();
    warped->voxels.assign(n, 0.0f);
    valid->assign(n, 0);
    std::vector<double> sq(static_cast<std::size_t>(fixed.dims.z()), 0.0);
    std::vector<std::size_t> cnt(static_cast<std::size_t>(fixed.dims.z()), 0);
    parallel_chunks(static_cast<std::size_t>(fixed.dims.z()), [&](std::size_t zb,
                                                                  std::size_t ze) {
        for (int z = static_cast<int>(zb); z < static_cast<int>(ze); ++z) {
            double local_sq = 0.0;
            std::size_t local_cnt = 0;
            for (int y = 0; y < fixed.dims.y(); ++y) {
                for (int x = 0; x < fixed.dims.x(); ++x) {
                    const std::size_t i = fixed.index(x, y, z);
                    const Vec3 pos = fixed.voxel_center(x, y, z) + Vec3(u.x[i], u.y[i], u.z[i]);
                    bool ok = false;
                    const float m = moving.sample(init_inv(pos), &ok);
                    if (!ok) continue;
                    warped->voxels[i] = m;
                    (*valid)[i] = 1;
                    const double d = fixed.voxels[i] - m;
                    local_sq += d * d;
                    ++local_cnt;
                }
            }
            sq[static_cast<std::size_t>(z)] = local_sq;
            cnt[static_cast<std::size_t>(z)] = local_cnt;
        }
    });
    double total_sq = 0.0;
    std::size_t total_cnt = 0;
    for (std::size_t z = 0; z < sq.size(); ++z) {
        total_sq += sq[z];
        total_cnt += cnt[z];
    }
    if (total_cnt == 0) return -1.0;
    return total_sq / static_cast<double>(total_cnt);
}

}  // namespace detail

// Multi-resolution demons registration minimizing the mean square intensity
// error. Per iteration: warp the moving image through init and the current
// field, form the demons update
//   u_step = (F - M_w) grad(M_w) / (|grad(M_w)|^2 + (F - M_w)^2 / kappa^2),
// smooth it with sigma_fluid, add it to the field, and smooth the field with
// sigma_diffusion. Steps that would raise the MSE are rejected and end the
// level, so the accepted-MSE trace is non-increasing.
inline DemonsResult register_demons(const Volume& fixed, const Volume& moving,
                                    const RigidTransform& init, const DemonsConfig& cfg = {}) {
    cfg.validate();
    const RigidTransform init_inv = init.inverse();

    std::vector<Volume> fixed_pyr{fixed}, moving_pyr{moving};
    for (int l = 1; l < cfg.levels; ++l) {
        fixed_pyr.push_back(downsample(fixed_pyr.back(), 2));
        moving_pyr.push_back(downsample(moving_pyr.back(), 2));
    }

    DemonsResult res;
    res.mse_trace.resize(static_cast<std::size_t>(cfg.levels));

    detail::FieldBuffers u;
    int prev_level = -1;
    DisplacementField carry;  // field from the previous (coarser) level

    for (int level = cfg.levels - 1; level >= 0; --level) {
        const Volume& f = fixed_pyr[static_cast<std::size_t>(level)];
        const Volume& m = moving_pyr[static_cast<std::size_t>(level)];
        const std::size_t n = f.size();
        u.resize(n);
        if (prev_level >= 0) {
            // Upsample the coarser field (vectors are in mm, no rescale).
            for (int z = 0; z < f.dims.z(); ++z)
                for (int y = 0; y < f.dims.y(); ++y)
                    for (int x = 0; x < f.dims.x(); ++x) {
                        const Vec3 v = carry.sample(f.voxel_center(x, y, z));
                        const std::size_t i = f.index(x, y, z);
                        u.x[i] = v.x();
                        u.y[i] = v.y();
                        u.z[i] = v.z();
                    }
        }

        const double kappa = cfg.kappa > 0.0 ? cfg.kappa : f.spacing.mean();
        const double kappa_sq = kappa * kappa;
        const Vec3 sigma_fluid_vox = Vec3::Constant(cfg.sigma_fluid).cwiseQuotient(f.spacing);
        const Vec3 sigma_diff_vox =
            Vec3::Constant(cfg.sigma_diffusion).cwiseQuotient(f.spacing);

        Volume warped(f.dims, f.spacing, f.origin);
        std::vector<std::uint8_t> valid;
        double mse = detail::warp_and_mse(f, m, init_inv, u, &warped, &valid);
        if (mse < 0.0) {
            throw GeometryError("register_demons: volumes do not overlap after init");
        }

        if (level == 0 && prev_level >= 0) {
            // Guard: fall back to a zero field if the upsampled coarse result
            // is worse than starting fresh at full resolution.
            detail::FieldBuffers zero;
            zero.resize(n);
            Volume warped0(f.dims, f.spacing, f.origin);
            std::vector<std::uint8_t> valid0;
            const double mse0 = detail::warp_and_mse(f, m, init_inv, zero, &warped0, &valid0);
            if (mse0 >= 0.0 && mse0 < mse) {
                u = zero;
                warped = warped0;
                valid = valid0;
                mse = mse0;
            }
        }

        auto& trace = res.mse_trace[static_cast<std::size_t>(level)];
        trace.push_back(mse);

        const int max_iters =
            cfg.iters_per_level[static_cast<std::size_t>(cfg.levels - 1 - level)];
        bool level_converged = false;
        detail::FieldBuffers step, candidate;
        step.resize(n);
        candidate.resize(n);
        Volume cand_warped(f.dims, f.spacing, f.origin);
        std::vector<std::uint8_t> cand_valid;

        for (int it = 0; it < max_iters; ++it) {
            parallel_chunks(static_cast<std::size_t>(f.dims.z()), [&](std::size_t zb,
                                                                      std::size_t ze) {
                for (int z = static_cast<int>(zb); z < static_cast<int>(ze); ++z) {
                    for (int y = 0; y < f.dims.y(); ++y) {
                        for (int x = 0; x < f.dims.x(); ++x) {
                            const std::size_t i = f.index(x, y, z);
                            if (!valid[i]) {
                                step.x[i] = step.y[i] = step.z[i] = 0.0;
                                continue;
                            }
                            const double diff = f.voxels[i] - warped.voxels[i];
                            const Vec3 g = gradient_at(warped, x, y, z);
                            const double denom = g.squaredNorm() + diff * diff / kappa_sq;
                            if (denom <= 1e-300) {
                                step.x[i] = step.y[i] = step.z[i] = 0.0;
                                continue;
                            }
                            const Vec3 v = diff * g / denom;
                            step.x[i] = v.x();
                            step.y[i] = v.y();
                            step.z[i] = v.z();
                        }
                    }
                }
            });

            detail::smooth_component(step.x, f.dims, sigma_fluid_vox);
            detail::smooth_component(step.y, f.dims, sigma_fluid_vox);
            detail::smooth_component(step.z, f.dims, sigma_fluid_vox);
            for (std::size_t i = 0; i < n; ++i) {
                candidate.x[i] = u.x[i] + step.x[i];
                candidate.y[i] = u.y[i] + step.y[i];
                candidate.z[i] = u.z[i] + step.z[i];
            }
            detail::smooth_component(candidate.x, f.dims, sigma_diff_vox);
            detail::smooth_component(candidate.y, f.dims, sigma_diff_vox);
            detail::smooth_component(candidate.z, f.dims, sigma_diff_vox);

            const double cand_mse =
                detail::warp_and_mse(f, m, init_inv, candidate, &cand_warped, &cand_valid);
            if (cand_mse < 0.0 || cand_mse > mse * (1.0 + 1e-9)) {
                level_converged = true;  // no further monotone progress possible
                break;
            }
            std::swap(u.x, candidate.x);
            std::swap(u.y, candidate.y);
            std::swap(u.z, candidate.z);
            std::swap(warped.voxels, cand_warped.voxels);
            std::swap(valid, cand_valid);
            const double prev = mse;
            mse = std::min(cand_mse, prev);  // guard against rounding in the trace
            trace.push_back(mse);

            const std::size_t window = 5;
            if (trace.size() > window) {
                const double before = trace[trace.size() - 1 - window];
                if (before > 0.0 && (before - mse) / before < 1e-4) {
                    level_converged = true;
                    break;
                }
            }
        }
        if (level == 0) res.converged = level_converged;

        carry = DisplacementField(f.dims, f.spacing, f.origin);
        for (int z = 0; z < f.dims.z(); ++z)
            for (int y = 0; y < f.dims.y(); ++y)
                for (int x = 0; x < f.dims.x(); ++x) {
                    const std::size_t i = f.index(x, y, z);
                    carry.set_vector(x, y, z, Vec3(u.x[i], u.y[i], u.z[i]));
                }
        prev_level = level;
    }

    res.field = std::move(carry);
    return res;
}

}  // namespace usnav
