#pragma once

// Shared fixtures and generators for the test suites.

#include <usnav/geometry.hpp>
#include <usnav/rng.hpp>
#include <usnav/volume.hpp>

namespace testutil {

using namespace usnav;

inline Mat3 random_rotation(Rng& rng) {
    return rotation_about(rng.unit_vector(), rng.uniform(0.0, kPi));
}

inline RigidTransform random_rigid(Rng& rng, FrameId src = FrameId::Volume,
                                   FrameId dst = FrameId::Volume, double t_range = 100.0) {
    return RigidTransform{random_rotation(rng), rng.normal_vec3(t_range / 3.0), src, dst};
}

inline SimilarityTransform random_similarity(Rng& rng, FrameId src = FrameId::Volume,
                                             FrameId dst = FrameId::Volume) {
    const Vec3 scale(rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0));
    return SimilarityTransform{scale, random_rotation(rng), rng.normal_vec3(30.0), src, dst};
}

inline AffineTransform random_affine(Rng& rng, FrameId src = FrameId::Volume,
                                     FrameId dst = FrameId::Volume) {
    Mat4 m = Mat4::Identity();
    while (true) {
        Mat3 lin;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) lin(r, c) = rng.normal(r == c ? 1.0 : 0.0, 0.4);
        if (std::abs(lin.determinant()) > 0.05) {
            m.topLeftCorner<3, 3>() = lin;
            break;
        }
    }
    m.topRightCorner<3, 1>() = rng.normal_vec3(20.0);
    return AffineTransform::make(m, src, dst);
}

inline double max_abs_diff(const Mat4& a, const Mat4& b) {
    return (a - b).cwiseAbs().maxCoeff();
}

// Smooth random test volume: blurred seeded noise, values in [0, ~1].
inline Volume smooth_random_volume(int size, std::uint64_t seed, double spacing = 1.0) {
    Rng rng(seed);
    Volume v(Eigen::Vector3i::Constant(size), Vec3::Constant(spacing), Vec3::Zero());
    for (auto& x : v.voxels) x = static_cast<float>(rng.uniform());
    return gaussian_blur(v, 2.0);
}

}  // namespace testutil
