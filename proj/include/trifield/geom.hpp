#pragma once

#include <optional>

#include "trifield/math.hpp"

namespace trifield {

/// Axis-aligned bounding box. Normalization maps it onto [0,1]^3.
struct Aabb {
    Vec3 min{-1.0, -1.0, -1.0};
    Vec3 max{1.0, 1.0, 1.0};

    void validate() const;
    Vec3 extent() const { return max - min; }
    double diagonal() const { return norm(extent()); }
    Vec3 center() const { return 0.5 * (min + max); }
};

/// Ray with near/far bounds. direction must be unit length.
struct Ray {
    Vec3 origin;
    Vec3 direction;
    double t_near = 0.0;
    double t_far = 0.0;

    void validate() const;
    Vec3 at(double t) const { return origin + t * direction; }
};

struct CameraIntrinsics {
    double fx = 0.0, fy = 0.0;
    double cx = 0.0, cy = 0.0;
    int width = 0, height = 0;

    void validate() const;
};

/// Rigid transform x -> R x + t. Used both for camera poses (camera-to-world,
/// camera looks along +z with image y pointing down) and head poses.
struct HeadPose {
    Mat3 R;
    Vec3 t;

    void validate() const;
    Vec3 apply(Vec3 x) const { return R * x + t; }
    Vec3 apply_inverse(Vec3 x) const { return transpose(R) * (x - t); }
    HeadPose inverse() const { return HeadPose{transpose(R), -(transpose(R) * t)}; }

    static HeadPose identity() { return HeadPose{Mat3::identity(), Vec3{}}; }
    /// Rotation about a unit axis by angle (radians), then translation.
    static HeadPose from_axis_angle(Vec3 axis, double angle, Vec3 translation);
};

/// compose(a, b).apply(x) == a.apply(b.apply(x))
inline HeadPose compose(const HeadPose& a, const HeadPose& b) {
    return HeadPose{a.R * b.R, a.R * b.t + a.t};
}

/// Backproject a (possibly fractional) pixel coordinate through the camera and
/// clip the ray against the box. Returns nullopt when the ray misses the box.
/// Callers iterating integer pixels should pass px + 0.5 to hit pixel centers.
std::optional<Ray> ray_for_pixel(const CameraIntrinsics& cam, const HeadPose& cam_pose,
                                 Vec2 px, const Aabb& aabb);

/// Affine map of aabb onto the unit cube. Out-of-box input clamps and sets
/// *clamped when provided.
Vec3 normalize_to_unit_cube(Vec3 x, const Aabb& aabb, bool* clamped = nullptr);

/// Inverse of normalize_to_unit_cube on in-range input.
Vec3 denormalize_from_unit_cube(Vec3 u, const Aabb& aabb);

/// Slab intersection of a ray (unit direction, unbounded) with the box;
/// returns entry/exit parameters with entry clamped to >= 0.
std::optional<std::pair<double, double>> intersect_aabb(Vec3 origin, Vec3 direction,
                                                        const Aabb& aabb);

}  // namespace trifield
