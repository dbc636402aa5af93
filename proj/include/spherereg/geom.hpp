#pragma once

/**
 * @file geom.hpp
 * @brief Fixed-dimension geometry shared by the whole pipeline: rigid and
 *        similarity transforms, the pinhole + Brown distortion camera model,
 *        and the sphere-quadric / image-conic algebra.
 *
 * Conventions: lengths in millimeters, image coordinates in pixels, angles
 * in radians. Conic matrices live on the undistorted image plane; detected
 * points are undistorted before any conic residual is evaluated.
 * All types are immutable value types and all operations are pure.
 */

#include <Eigen/Dense>

#include <utility>
#include <vector>

#include "spherereg/error.hpp"

namespace spherereg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

// ---------------------------------------------------------------------------
// Rotations
// ---------------------------------------------------------------------------

/// Rodrigues exponential: axis-angle 3-vector to rotation matrix.
Mat3 rotation_exp(const Vec3& axis_angle);

/// Logarithm of a rotation matrix (axis-angle 3-vector, angle in [0, pi]).
Vec3 rotation_log(const Mat3& rotation);

/// Geodesic angle between two rotations, radians.
double rotation_angle_between(const Mat3& a, const Mat3& b);

/// Nearest orthonormal matrix with determinant +1 (SVD projection).
Mat3 orthonormalize_rotation(const Mat3& m);

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

/// SE(3) pose. Maps points as x' = rotation * x + translation.
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static RigidTransform identity() { return {}; }

    Vec3 apply(const Vec3& x) const { return rotation * x + translation; }

    RigidTransform inverse() const {
        return {rotation.transpose(), -(rotation.transpose() * translation)};
    }

    Mat4 matrix() const {
        Mat4 m = Mat4::Identity();
        m.topLeftCorner<3, 3>() = rotation;
        m.topRightCorner<3, 1>() = translation;
        return m;
    }

    /// Orthonormality within tol and det(R) = +1 within tol.
    bool is_valid(double tol = 1e-9) const;
};

/// Composition: result applies b first, then a.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);

/// SE(3) plus a positive isotropic scale. Maps x' = scale * R * x + t.
/// With scale = 1 this is exactly a RigidTransform.
struct SimilarityTransform {
    RigidTransform rigid;
    double scale = 1.0;

    static SimilarityTransform identity() { return {}; }
    static SimilarityTransform from_rigid(const RigidTransform& r) { return {r, 1.0}; }

    Vec3 apply(const Vec3& x) const {
        return scale * (rigid.rotation * x) + rigid.translation;
    }

    SimilarityTransform inverse() const {
        SimilarityTransform out;
        out.scale = 1.0 / scale;
        out.rigid.rotation = rigid.rotation.transpose();
        out.rigid.translation = -(rigid.rotation.transpose() * rigid.translation) / scale;
        return out;
    }
};

// ---------------------------------------------------------------------------
// Camera model
// ---------------------------------------------------------------------------

/// Pinhole intrinsics with Brown distortion (two radial, two tangential).
struct CameraModel {
    double fx = 0.0, fy = 0.0;  ///< focal lengths, px
    double cx = 0.0, cy = 0.0;  ///< principal point, px
    double k1 = 0.0, k2 = 0.0;  ///< radial distortion
    double p1 = 0.0, p2 = 0.0;  ///< tangential distortion
    int width = 0, height = 0;  ///< image size, px

    void validate() const;

    Mat3 intrinsic_matrix() const {
        Mat3 k = Mat3::Identity();
        k(0, 0) = fx;
        k(1, 1) = fy;
        k(0, 2) = cx;
        k(1, 2) = cy;
        return k;
    }

    /// Applies the distortion model on the normalized image plane.
    Vec2 distort_normalized(const Vec2& xn) const;

    /// Inverts the distortion model by fixed-point iteration (<= 1e-12).
    Vec2 undistort_normalized(const Vec2& xd) const;

    Vec2 normalized_to_pixel(const Vec2& xn) const {
        return {fx * xn.x() + cx, fy * xn.y() + cy};
    }

    Vec2 pixel_to_normalized(const Vec2& px) const {
        return {(px.x() - cx) / fx, (px.y() - cy) / fy};
    }

    /// Ideal-pinhole pixel -> observed (distorted) pixel.
    Vec2 distort_pixel(const Vec2& undistorted_px) const {
        return normalized_to_pixel(distort_normalized(pixel_to_normalized(undistorted_px)));
    }

    /// Observed (distorted) pixel -> ideal-pinhole pixel.
    Vec2 undistort_pixel(const Vec2& distorted_px) const {
        return normalized_to_pixel(undistort_normalized(pixel_to_normalized(distorted_px)));
    }
};

/// Full projection with distortion. Throws PointBehindCamera when the
/// camera-frame depth is <= 1e-9 mm.
Vec2 project_point(const CameraModel& cam, const RigidTransform& world_to_cam,
                   const Vec3& x_world);

/// Pinhole-only projection (no distortion), used wherever conics live.
Vec2 project_point_pinhole(const CameraModel& cam, const RigidTransform& world_to_cam,
                           const Vec3& x_world);

/// Back-projects an undistorted pixel to a world-frame ray (origin = camera
/// center, unit direction).
struct Ray {
    Vec3 origin;
    Vec3 direction;
};
Ray backproject_ray(const CameraModel& cam, const RigidTransform& world_to_cam,
                    const Vec2& undistorted_px);

/// 3x4 pinhole projection matrix P = K [R | t].
struct ProjectionMatrix {
    Mat34 p;

    static ProjectionMatrix from_camera(const CameraModel& cam,
                                        const RigidTransform& world_to_cam) {
        ProjectionMatrix out;
        Mat34 rt;
        rt.leftCols<3>() = world_to_cam.rotation;
        rt.col(3) = world_to_cam.translation;
        out.p = cam.intrinsic_matrix() * rt;
        return out;
    }
};

// ---------------------------------------------------------------------------
// Spheres and conics
// ---------------------------------------------------------------------------

/// Spherical fiducial: center (frame stated by the caller) and radius, mm.
struct SphereMarker {
    int id = 0;
    Vec3 center = Vec3::Zero();
    double radius = 0.0;
};

/// Dual quadric of a sphere: [[c c^T - r^2 I, c], [c^T, 1]].
/// Tangent planes pi satisfy pi^T Q^-1 pi = 0.
Mat4 sphere_dual_quadric(const SphereMarker& marker);

/// 3x3 symmetric conic matrix, homogeneous (defined up to scale).
struct ConicMatrix {
    Mat3 e = Mat3::Identity();

    /// Symmetrizes on construction so the stored matrix is symmetric to 1e-12.
    static ConicMatrix from_matrix(const Mat3& m) {
        ConicMatrix out;
        out.e = 0.5 * (m + m.transpose());
        return out;
    }

    /// Unit Frobenius norm, sign fixed so the leading 2x2 block is positive
    /// definite for real ellipses.
    ConicMatrix normalized() const;
};

/// Projects the sphere outline through P: inverts P Q^-1 P^T and
/// symmetrizes. Throws DegenerateConic when the dual conic is singular
/// (camera center on the sphere hull) or the result is not a real ellipse.
ConicMatrix project_sphere(const ProjectionMatrix& p, const SphereMarker& marker);

/// Determinant after symmetric row/column balancing. Conic matrices mix
/// pixel and metric units, so a raw |det| / ||M||^3 test misclassifies
/// healthy conics; balancing makes the 1e-12 relative tolerance meaningful.
double balanced_determinant(const Mat3& m);

/// Bilinear point-on-conic residual x^T E x with x homogeneous and E
/// normalized (unit Frobenius norm, sign-fixed leading block).
double conic_point_residual(const ConicMatrix& conic, const Vec2& x_px);

/// 5-parameter ellipse: center (px), semi-axes a >= b > 0 (px), angle of the
/// major axis in [0, pi).
struct Ellipse {
    Vec2 center = Vec2::Zero();
    double a = 1.0;
    double b = 1.0;
    double theta = 0.0;

    /// Point at parametric angle t (not arc length).
    Vec2 point_at(double t) const {
        const double c = std::cos(theta), s = std::sin(theta);
        const double px = a * std::cos(t), py = b * std::sin(t);
        return {center.x() + c * px - s * py, center.y() + s * px + c * py};
    }

    /// Axis-aligned half-extents of the bounding box.
    Vec2 bbox_half_extents() const {
        const double c = std::cos(theta), s = std::sin(theta);
        return {std::sqrt(a * a * c * c + b * b * s * s),
                std::sqrt(a * a * s * s + b * b * c * c)};
    }
};

ConicMatrix ellipse_to_conic(const Ellipse& ellipse);

/// Throws NotAnEllipse when the eigenvalue signature of E is not
/// (+,+,-) or (-,-,+).
Ellipse conic_to_ellipse(const ConicMatrix& conic);

/// Geometric (Euclidean) distance from a point to the ellipse outline,
/// computed by nearest-point iteration to 1e-9 px.
double point_to_ellipse_distance(const Ellipse& ellipse, const Vec2& point);
Vec2 closest_point_on_ellipse(const Ellipse& ellipse, const Vec2& point);

/// Arc length between parametric angles, adaptive quadrature to rel_tol.
double ellipse_arc_length(const Ellipse& ellipse, double t0, double t1,
                          double rel_tol = 1e-9);

/// Perimeter of the ellipse, adaptive quadrature to rel_tol.
double ellipse_perimeter(const Ellipse& ellipse, double rel_tol = 1e-9);

/// Minimum distance between an infinite line (origin, unit dir) and a point.
inline double line_point_distance(const Vec3& origin, const Vec3& dir, const Vec3& point) {
    return ((point - origin).cross(dir)).norm();
}

}  // namespace spherereg
