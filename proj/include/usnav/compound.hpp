#pragma once

#include <array>
#include <optional>
#include <vector>

#include "usnav/parallel.hpp"
#include "usnav/volume.hpp"

namespace usnav {

// One tracked 2D US frame. `pose` is the tracked marker pose (probe in
// tracker space); the pixel-to-probe map including the mm/px scale is the
// calibration similarity passed to compound(). Pixel (u,v) of row-major
// `pixels` lives at image coordinates (u, v, 0).
struct TrackedFrame {
    double timestamp = 0.0;  // seconds
    RigidTransform pose;     // probe marker -> tracker
    int width = 0, height = 0;
    std::vector<float> pixels;  // intensity in [0,1], row-major, u fastest
    Eigen::Vector2d pixel_spacing = Eigen::Vector2d::Ones();  // mm/px
    bool valid = true;

    float pixel(int u, int v) const {
        return pixels[static_cast<std::size_t>(v) * width + u];
    }
    float& pixel(int u, int v) {
        return pixels[static_cast<std::size_t>(v) * width + u];
    }
};

struct CompoundBounds {
    Vec3 min = Vec3::Zero();  // grid-frame mm
    Vec3 max = Vec3::Zero();
};

struct CompoundReport {
    int frames_used = 0;
    int frames_skipped = 0;
};

// Weight below which a trilinear contribution does not mark a voxel filled;
// without it the interpolation tails flag entire neighborhoods.
constexpr double kFillWeightThreshold = 0.05;

// Freehand 3D reconstruction: scatter every frame pixel into the voxel grid
// with trilinear weights and keep the maximum weighted contribution per
// voxel. The grid axes are the columns of `orientation` in tracker space
// (identity by default) and the returned volume's origin is expressed in
// those grid axes. Explicit bounds are given in grid axes too; auto bounds
// cover all mapped pixel corners padded by 2 voxels. Frames with lost
// tracking are skipped and counted, never interpolated.
inline Volume compound(const std::vector<TrackedFrame>& frames,
                       const SimilarityTransform& probe_T_us, double voxel_spacing,
                       std::optional<CompoundBounds> bounds = std::nullopt,
                       const Mat3& orientation = Mat3::Identity(),
                       CompoundReport* report = nullptr) {
    if (voxel_spacing <= 0.0) throw DataError("compound: voxel spacing must be positive");
    CompoundReport local;
    CompoundReport& rep = report ? *report : local;
    rep = CompoundReport{};

    std::vector<const TrackedFrame*> used;
    for (const auto& f : frames) {
        if (!f.valid) {
            ++rep.frames_skipped;
            continue;
        }
        if (f.width < 1 || f.height < 1) throw DataError("compound: empty frame image");
        used.push_back(&f);
    }
    if (used.empty()) throw DataError("compound: no valid frames");
    rep.frames_used = static_cast<int>(used.size());

    const Mat3 world_to_grid = orientation.transpose();
    auto to_grid = [&](const TrackedFrame& f, double u, double v) -> Vec3 {
        return world_to_grid * f.pose(probe_T_us(Vec3(u, v, 0.0)));
    };

    Vec3 gmin, gmax;
    if (bounds) {
        gmin = bounds->min;
        gmax = bounds->max;
        if (!((gmax - gmin).array() > 0.0).all()) {
            throw DataError("compound: bounds have zero or negative extent");
        }
    } else {
        gmin = Vec3::Constant(std::numeric_limits<double>::infinity());
        gmax = -gmin;
        for (const TrackedFrame* f : used) {
            const std::array<Vec3, 4> corners = {
                to_grid(*f, 0, 0), to_grid(*f, f->width - 1, 0),
                to_grid(*f, 0, f->height - 1), to_grid(*f, f->width - 1, f->height - 1)};
            for (const auto& c : corners) {
                gmin = gmin.cwiseMin(c);
                gmax = gmax.cwiseMax(c);
            }
        }
        gmin -= Vec3::Constant(2.0 * voxel_spacing);
        gmax += Vec3::Constant(2.0 * voxel_spacing);
    }

    Eigen::Vector3i dims;
    for (int a = 0; a < 3; ++a) {
        dims[a] = static_cast<int>(std::ceil((gmax[a] - gmin[a]) / voxel_spacing)) + 1;
        if (dims[a] < 1) throw DataError("compound: degenerate bounds");
    }

    Volume vol(dims, Vec3::Constant(voxel_spacing), gmin, 0.0f, 0);

    auto splat_frames = [&](Volume& target, std::size_t fb, std::size_t fe) {
        for (std::size_t fi = fb; fi < fe; ++fi) {
            const TrackedFrame& f = *used[fi];
            const Mat3 lin = world_to_grid * f.pose.rotation * probe_T_us.linear();
            const Vec3 off =
                world_to_grid * (f.pose.rotation * probe_T_us.translation + f.pose.translation);
            for (int v = 0; v < f.height; ++v) {
                for (int u = 0; u < f.width; ++u) {
                    const float intensity = f.pixel(u, v);
                    const Vec3 g = lin * Vec3(u, v, 0.0) + off;
                    const Vec3 c = (g - gmin) / voxel_spacing;
                    const int x0 = static_cast<int>(std::floor(c.x()));
                    const int y0 = static_cast<int>(std::floor(c.y()));
                    const int z0 = static_cast<int>(std::floor(c.z()));
                    const double fx = c.x() - x0, fy = c.y() - y0, fz = c.z() - z0;
                    const double wx[2] = {1.0 - fx, fx};
                    const double wy[2] = {1.0 - fy, fy};
                    const double wz[2] = {1.0 - fz, fz};
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const int x = x0 + dx, y = y0 + dy, z = z0 + dz;
                                if (!target.in_bounds(x, y, z)) continue;
                                const double w = wx[dx] * wy[dy] * wz[dz];
                                const auto idx = target.index(x, y, z);
                                const float contrib = static_cast<float>(w * intensity);
                                if (contrib > target.voxels[idx]) target.voxels[idx] = contrib;
                                if (w >= kFillWeightThreshold) target.filled[idx] = 1;
                            }
                }
            }
        }
    };

    const int workers = effective_threads(used.size());
    if (workers <= 1) {
        splat_frames(vol, 0, used.size());
    } else {
        // Per-thread partial volumes merged by max: the result is independent
        // of the chunking because max is commutative and associative.
        std::vector<Volume> partial(static_cast<std::size_t>(workers),
                                    Volume(dims, Vec3::Constant(voxel_spacing), gmin, 0.0f, 0));
        const std::size_t chunk = (used.size() + workers - 1) / workers;
        parallel_chunks(static_cast<std::size_t>(workers), [&](std::size_t wb, std::size_t we) {
            for (std::size_t w = wb; w < we; ++w) {
                const std::size_t b = w * chunk;
                const std::size_t e = std::min(used.size(), b + chunk);
                if (b < e) splat_frames(partial[w], b, e);
            }
        });
        for (const auto& part : partial) {
            for (std::size_t i = 0; i < vol.size(); ++i) {
                if (part.voxels[i] > vol.voxels[i]) vol.voxels[i] = part.voxels[i];
                vol.filled[i] |= part.filled[i];
            }
        }
    }
    return vol;
}

// The 13 undirected stick directions: 3 axes, 6 face diagonals, 4 body
// diagonals.
inline const std::array<Eigen::Vector3i, 13>& stick_directions() {
    static const std::array<Eigen::Vector3i, 13> dirs = {{
        {1, 0, 0}, {0, 1, 0}, {0, 0, 1},
        {1, 1, 0}, {1, -1, 0}, {1, 0, 1}, {1, 0, -1}, {0, 1, 1}, {0, 1, -1},
        {1, 1, 1}, {1, 1, -1}, {1, -1, 1}, {1, -1, -1},
    }};
    return dirs;
}

// Fills gaps by interpolating along short sticks between originally filled
// voxels. For each unfilled voxel and each stick line, the nearest filled
// voxel within `stick_length` steps is located in both directions; a line
// with both ends found contributes the inverse-distance interpolation of the
// end values, weighted by 1/(d+ + d-). Only the input mask is consulted, so
// filling never cascades and a second pass is a no-op.
inline Volume stick_hole_fill(const Volume& v, int stick_length = 9) {
    if (stick_length < 1) throw DataError("stick_hole_fill: stick_length must be >= 1");
    Volume out = v;
    const auto& dirs = stick_directions();
    const int nz = v.dims.z(), ny = v.dims.y(), nx = v.dims.x();

    parallel_chunks(static_cast<std::size_t>(nz), [&](std::size_t zb, std::size_t ze) {
        for (int z = static_cast<int>(zb); z < static_cast<int>(ze); ++z) {
            for (int y = 0; y < ny; ++y) {
                for (int x = 0; x < nx; ++x) {
                    const std::size_t idx = v.index(x, y, z);
                    if (v.filled[idx]) continue;
                    double acc = 0.0, wsum = 0.0;
                    for (const auto& d : dirs) {
                        int d_pos = 0, d_neg = 0;
                        float v_pos = 0.0f, v_neg = 0.0f;
                        for (int k = 1; k <= stick_length; ++k) {
                            const int px = x + k * d.x(), py = y + k * d.y(), pz = z + k * d.z();
                            if (!v.in_bounds(px, py, pz)) break;
                            if (v.filled[v.index(px, py, pz)]) {
                                d_pos = k;
                                v_pos = v.at(px, py, pz);
                                break;
                            }
                        }
                        if (d_pos == 0) continue;
                        for (int k = 1; k <= stick_length; ++k) {
                            const int px = x - k * d.x(), py = y - k * d.y(), pz = z - k * d.z();
                            if (!v.in_bounds(px, py, pz)) break;
                            if (v.filled[v.index(px, py, pz)]) {
                                d_neg = k;
                                v_neg = v.at(px, py, pz);
                                break;
                            }
                        }
                        if (d_neg == 0) continue;
                        const double span = d_pos + d_neg;
                        const double value =
                            (v_pos * d_neg + v_neg * d_pos) / span;
                        acc += value / span;
                        wsum += 1.0 / span;
                    }
                    if (wsum > 0.0) {
                        out.voxels[idx] = static_cast<float>(acc / wsum);
                        out.filled[idx] = 1;
                    }
                }
            }
        }
    });
    return out;
}

}  // namespace usnav
