#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "usnav/geometry.hpp"

namespace usnav {

// 3D scalar voxel grid. Axis-aligned in its world frame: voxel (i,j,k) sits
// at origin + (i*sx, j*sy, k*sz), millimetres, x fastest in memory.
// `filled` marks voxels that received data (freehand compounding leaves gaps).
struct Volume {
    Eigen::Vector3i dims = Eigen::Vector3i::Zero();
    Vec3 spacing = Vec3::Ones();
    Vec3 origin = Vec3::Zero();
    std::vector<float> voxels;
    std::vector<std::uint8_t> filled;

    Volume() = default;

    Volume(const Eigen::Vector3i& d, const Vec3& s, const Vec3& o, float value = 0.0f,
           std::uint8_t fill_flag = 1) {
        if ((d.array() < 1).any()) throw DataError("Volume: dims must be >= 1");
        if (!(s.array() > 0.0).all()) throw DataError("Volume: spacing must be positive");
        dims = d;
        spacing = s;
        origin = o;
        voxels.assign(static_cast<std::size_t>(d.x()) * d.y() * d.z(), value);
        filled.assign(voxels.size(), fill_flag);
    }

    std::size_t size() const { return voxels.size(); }

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims.x()) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims.y()) * z);
    }

    float& at(int x, int y, int z) { return voxels[index(x, y, z)]; }
    float at(int x, int y, int z) const { return voxels[index(x, y, z)]; }

    bool in_bounds(int x, int y, int z) const {
        return x >= 0 && y >= 0 && z >= 0 && x < dims.x() && y < dims.y() && z < dims.z();
    }

    Vec3 voxel_center(int x, int y, int z) const {
        return origin + Vec3(x * spacing.x(), y * spacing.y(), z * spacing.z());
    }

    // World point -> continuous voxel coordinate.
    Vec3 to_continuous_index(const Vec3& world) const {
        return (world - origin).cwiseQuotient(spacing);
    }

    // Trilinear sample at a world point. Outside the grid: *valid=false, 0.
    float sample(const Vec3& world, bool* valid = nullptr) const {
        const Vec3 c = to_continuous_index(world);
        return sample_index(c, valid);
    }

    float sample_index(const Vec3& c, bool* valid = nullptr) const {
        if (!(c.x() >= 0.0 && c.y() >= 0.0 && c.z() >= 0.0 && c.x() <= dims.x() - 1.0 &&
              c.y() <= dims.y() - 1.0 && c.z() <= dims.z() - 1.0)) {
            if (valid) *valid = false;
            return 0.0f;
        }
        if (valid) *valid = true;
        int x0 = static_cast<int>(c.x());
        int y0 = static_cast<int>(c.y());
        int z0 = static_cast<int>(c.z());
        if (x0 == dims.x() - 1 && x0 > 0) --x0;
        if (y0 == dims.y() - 1 && y0 > 0) --y0;
        if (z0 == dims.z() - 1 && z0 > 0) --z0;
        const int x1 = std::min(x0 + 1, dims.x() - 1);
        const int y1 = std::min(y0 + 1, dims.y() - 1);
        const int z1 = std::min(z0 + 1, dims.z() - 1);
        const double fx = c.x() - x0, fy = c.y() - y0, fz = c.z() - z0;
        auto v = [&](int x, int y, int z) { return static_cast<double>(at(x, y, z)); };
        const double c00 = v(x0, y0, z0) * (1 - fx) + v(x1, y0, z0) * fx;
        const double c10 = v(x0, y1, z0) * (1 - fx) + v(x1, y1, z0) * fx;
        const double c01 = v(x0, y0, z1) * (1 - fx) + v(x1, y0, z1) * fx;
        const double c11 = v(x0, y1, z1) * (1 - fx) + v(x1, y1, z1) * fx;
        const double c0 = c00 * (1 - fy) + c10 * fy;
        const double c1 = c01 * (1 - fy) + c11 * fy;
        return static_cast<float>(c0 * (1 - fz) + c1 * fz);
    }
};

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma_voxels) {
    if (sigma_voxels <= 0.0) return {1.0};
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_voxels)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * (i / sigma_voxels) * (i / sigma_voxels));
        k[static_cast<std::size_t>(i + radius)] = w;
        sum += w;
    }
    for (double& w : k) w /= sum;
    return k;
}

// Separable 1D convolution along one axis; the kernel is renormalized over
// the in-bounds taps so borders keep their mean level.
template <typename Getter, typename Setter>
inline void convolve_axis(const Eigen::Vector3i& dims, int axis, const std::vector<double>& k,
                          Getter get, Setter set) {
    const int radius = static_cast<int>(k.size() / 2);
    const int n = dims[axis];
    Eigen::Vector3i idx;
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    std::vector<double> line(static_cast<std::size_t>(n));
    for (int j = 0; j < dims[a1]; ++j) {
        for (int l = 0; l < dims[a2]; ++l) {
            idx[a1] = j;
            idx[a2] = l;
            for (int i = 0; i < n; ++i) {
                idx[axis] = i;
                line[static_cast<std::size_t>(i)] = get(idx);
            }
            for (int i = 0; i < n; ++i) {
                double acc = 0.0, wsum = 0.0;
                const int lo = std::max(0, i - radius), hi = std::min(n - 1, i + radius);
                for (int t = lo; t <= hi; ++t) {
                    const double w = k[static_cast<std::size_t>(t - i + radius)];
                    acc += w * line[static_cast<std::size_t>(t)];
                    wsum += w;
                }
                idx[axis] = i;
                set(idx, acc / wsum);
            }
        }
    }
}

}  // namespace detail

// Gaussian blur with per-axis sigma given in voxels. Mask is ignored.
inline Volume gaussian_blur(const Volume& v, const Vec3& sigma_voxels) {
    Volume out = v;
    for (int axis = 0; axis < 3; ++axis) {
        if (sigma_voxels[axis] <= 0.0) continue;
        const auto k = detail::gaussian_kernel(sigma_voxels[axis]);
        const Volume src = out;
        detail::convolve_axis(
            v.dims, axis, k,
            [&](const Eigen::Vector3i& i) {
                return static_cast<double>(src.at(i.x(), i.y(), i.z()));
            },
            [&](const Eigen::Vector3i& i, double val) {
                out.at(i.x(), i.y(), i.z()) = static_cast<float>(val);
            });
    }
    return out;
}

inline Volume gaussian_blur(const Volume& v, double sigma_voxels) {
    return gaussian_blur(v, Vec3::Constant(sigma_voxels));
}

// Blur (sigma = shrink/2 voxels) then keep every shrink-th voxel.
inline Volume downsample(const Volume& v, int shrink = 2) {
    if (shrink <= 1) return v;
    const Volume blurred = gaussian_blur(v, shrink / 2.0);
    Eigen::Vector3i nd;
    for (int a = 0; a < 3; ++a) nd[a] = (v.dims[a] + shrink - 1) / shrink;
    Volume out(nd, v.spacing * shrink, v.origin);
    for (int z = 0; z < nd.z(); ++z)
        for (int y = 0; y < nd.y(); ++y)
            for (int x = 0; x < nd.x(); ++x) {
                out.at(x, y, z) = blurred.at(x * shrink, y * shrink, z * shrink);
                out.filled[out.index(x, y, z)] =
                    v.filled[v.index(x * shrink, y * shrink, z * shrink)];
            }
    return out;
}

// Spacing-aware central differences, one-sided at the borders.
inline Vec3 gradient_at(const Volume& v, int x, int y, int z) {
    Vec3 g;
    const Eigen::Vector3i p(x, y, z);
    for (int a = 0; a < 3; ++a) {
        Eigen::Vector3i lo = p, hi = p;
        if (p[a] > 0) lo[a] -= 1;
        if (p[a] < v.dims[a] - 1) hi[a] += 1;
        const double span = (hi[a] - lo[a]) * v.spacing[a];
        g[a] = span > 0.0
                   ? (v.at(hi.x(), hi.y(), hi.z()) - v.at(lo.x(), lo.y(), lo.z())) / span
                   : 0.0;
    }
    return g;
}

inline Volume gradient_magnitude(const Volume& v) {
    Volume out(v.dims, v.spacing, v.origin);
    for (int z = 0; z < v.dims.z(); ++z)
        for (int y = 0; y < v.dims.y(); ++y)
            for (int x = 0; x < v.dims.x(); ++x)
                out.at(x, y, z) = static_cast<float>(gradient_at(v, x, y, z).norm());
    return out;
}

}  // namespace usnav
