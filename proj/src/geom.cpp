#include "trifield/geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace trifield {

void Aabb::validate() const {
    for (int k = 0; k < 3; ++k) {
        if (!(min[k] < max[k])) throw std::invalid_argument("Aabb: min must be < max per axis");
        if (!std::isfinite(min[k]) || !std::isfinite(max[k]))
            throw std::invalid_argument("Aabb: bounds must be finite");
    }
}

void Ray::validate() const {
    if (std::abs(norm(direction) - 1.0) > 1e-9)
        throw std::invalid_argument("Ray: direction must be unit length");
    if (!(t_near >= 0.0) || !(t_near < t_far))
        throw std::invalid_argument("Ray: need 0 <= t_near < t_far");
}

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0))
        throw std::invalid_argument("CameraIntrinsics: focal lengths must be positive");
    if (width <= 0 || height <= 0)
        throw std::invalid_argument("CameraIntrinsics: image size must be positive");
    if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
        throw std::invalid_argument("CameraIntrinsics: principal point outside image");
}

void HeadPose::validate() const {
    Mat3 rtr = transpose(R) * R;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            double want = r == c ? 1.0 : 0.0;
            if (std::abs(rtr(r, c) - want) > 1e-8)
                throw std::invalid_argument("HeadPose: R must be orthonormal");
        }
    if (std::abs(det(R) - 1.0) > 1e-8)
        throw std::invalid_argument("HeadPose: R must be a proper rotation");
}

HeadPose HeadPose::from_axis_angle(Vec3 axis, double angle, Vec3 translation) {
    Vec3 u = normalized(axis);
    double c = std::cos(angle), s = std::sin(angle), ic = 1.0 - c;
    Mat3 R;
    R(0, 0) = c + u.x * u.x * ic;
    R(0, 1) = u.x * u.y * ic - u.z * s;
    R(0, 2) = u.x * u.z * ic + u.y * s;
    R(1, 0) = u.y * u.x * ic + u.z * s;
    R(1, 1) = c + u.y * u.y * ic;
    R(1, 2) = u.y * u.z * ic - u.x * s;
    R(2, 0) = u.z * u.x * ic - u.y * s;
    R(2, 1) = u.z * u.y * ic + u.x * s;
    R(2, 2) = c + u.z * u.z * ic;
    return HeadPose{R, translation};
}

std::optional<std::pair<double, double>> intersect_aabb(Vec3 origin, Vec3 direction,
                                                        const Aabb& aabb) {
    double t0 = 0.0;
    double t1 = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
        double o = origin[k], d = direction[k];
        if (d == 0.0) {
            if (o < aabb.min[k] || o > aabb.max[k]) return std::nullopt;
            continue;
        }
        double ta = (aabb.min[k] - o) / d;
        double tb = (aabb.max[k] - o) / d;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::nullopt;
    }
    if (t1 <= t0) return std::nullopt;
    return std::make_pair(t0, t1);
}

std::optional<Ray> ray_for_pixel(const CameraIntrinsics& cam, const HeadPose& cam_pose,
                                 Vec2 px, const Aabb& aabb) {
    Vec3 dir_cam{(px.x - cam.cx) / cam.fx, (px.y - cam.cy) / cam.fy, 1.0};
    Vec3 dir = normalized(cam_pose.R * dir_cam);
    Vec3 origin = cam_pose.t;
    auto hit = intersect_aabb(origin, dir, aabb);
    if (!hit) return std::nullopt;
    Ray ray{origin, dir, hit->first, hit->second};
    return ray;
}

Vec3 normalize_to_unit_cube(Vec3 x, const Aabb& aabb, bool* clamped) {
    Vec3 out;
    bool hit_bound = false;
    for (int k = 0; k < 3; ++k) {
        double v = (x[k] - aabb.min[k]) / (aabb.max[k] - aabb.min[k]);
        if (v < 0.0 || v > 1.0) {
            hit_bound = true;
            v = clamp01(v);
        }
        out[k] = v;
    }
    if (clamped) *clamped = hit_bound;
    return out;
}

Vec3 denormalize_from_unit_cube(Vec3 u, const Aabb& aabb) {
    return {aabb.min.x + u.x * (aabb.max.x - aabb.min.x),
            aabb.min.y + u.y * (aabb.max.y - aabb.min.y),
            aabb.min.z + u.z * (aabb.max.z - aabb.min.z)};
}

}  // namespace trifield
