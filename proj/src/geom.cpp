#include "spherereg/geom.hpp"

#include <cmath>

namespace spherereg {

namespace {

Mat3 skew(const Vec3& w) {
    Mat3 m;
    m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
    return m;
}

}  // namespace

Mat3 rotation_exp(const Vec3& axis_angle) {
    const double theta2 = axis_angle.squaredNorm();
    const double theta = std::sqrt(theta2);
    const Mat3 k = skew(axis_angle);
    double c1, c2;  // sin(t)/t and (1-cos(t))/t^2
    if (theta < 1e-6) {
        c1 = 1.0 - theta2 / 6.0;
        c2 = 0.5 - theta2 / 24.0;
    } else {
        c1 = std::sin(theta) / theta;
        c2 = (1.0 - std::cos(theta)) / theta2;
    }
    return Mat3::Identity() + c1 * k + c2 * (k * k);
}

Vec3 rotation_log(const Mat3& rotation) {
    const double trace = rotation.trace();
    const double cos_theta = std::clamp(0.5 * (trace - 1.0), -1.0, 1.0);
    const double theta = std::acos(cos_theta);
    Vec3 vee(rotation(2, 1) - rotation(1, 2), rotation(0, 2) - rotation(2, 0),
             rotation(1, 0) - rotation(0, 1));
    if (theta < 1e-6) {
        return 0.5 * (1.0 + theta * theta / 6.0) * vee;
    }
    if (theta > M_PI - 1e-6) {
        // Near pi the vee part vanishes; recover the axis from R + I.
        const Mat3 m = 0.5 * (rotation + Mat3::Identity());
        int k = 0;
        m.diagonal().maxCoeff(&k);
        Vec3 axis = m.col(k) / std::sqrt(std::max(m(k, k), 1e-300));
        axis.normalize();
        // Fix the axis sign using the off-diagonal asymmetry.
        if (vee.dot(axis) < 0.0) axis = -axis;
        return theta * axis;
    }
    return (0.5 * theta / std::sin(theta)) * vee;
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
    const double c = std::clamp(0.5 * ((a.transpose() * b).trace() - 1.0), -1.0, 1.0);
    return std::acos(c);
}

Mat3 orthonormalize_rotation(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) {
        Mat3 flip = Mat3::Identity();
        flip(2, 2) = -1.0;
        r = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    return r;
}

bool RigidTransform::is_valid(double tol) const {
    if (!rotation.allFinite() || !translation.allFinite()) return false;
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).norm();
    return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

// ---------------------------------------------------------------------------
// Camera model
// ---------------------------------------------------------------------------

void CameraModel::validate() const {
    require(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
    require(width > 0 && height > 0, "image size must be positive");
    require(cx >= 0.0 && cx < width, "principal point cx outside image");
    require(cy >= 0.0 && cy < height, "principal point cy outside image");
}

Vec2 CameraModel::distort_normalized(const Vec2& xn) const {
    const double x = xn.x(), y = xn.y();
    const double r2 = x * x + y * y;
    const double radial = 1.0 + r2 * (k1 + k2 * r2);
    const double xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
    const double yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
    return {xd, yd};
}

Vec2 CameraModel::undistort_normalized(const Vec2& xd) const {
    Vec2 x = xd;
    for (int iter = 0; iter < 50; ++iter) {
        const double r2 = x.squaredNorm();
        const double radial = 1.0 + r2 * (k1 + k2 * r2);
        const Vec2 tangential(2.0 * p1 * x.x() * x.y() + p2 * (r2 + 2.0 * x.x() * x.x()),
                              p1 * (r2 + 2.0 * x.y() * x.y()) + 2.0 * p2 * x.x() * x.y());
        const Vec2 next = (xd - tangential) / radial;
        const double delta = (next - x).norm();
        x = next;
        if (delta < 1e-13) break;
    }
    return x;
}

Vec2 project_point(const CameraModel& cam, const RigidTransform& world_to_cam,
                   const Vec3& x_world) {
    const Vec3 x_cam = world_to_cam.apply(x_world);
    if (x_cam.z() <= 1e-9) {
        raise(ErrorCode::PointBehindCamera,
              "camera-frame depth " + std::to_string(x_cam.z()) + " mm");
    }
    const Vec2 xn(x_cam.x() / x_cam.z(), x_cam.y() / x_cam.z());
    return cam.normalized_to_pixel(cam.distort_normalized(xn));
}

Vec2 project_point_pinhole(const CameraModel& cam, const RigidTransform& world_to_cam,
                           const Vec3& x_world) {
    const Vec3 x_cam = world_to_cam.apply(x_world);
    if (x_cam.z() <= 1e-9) {
        raise(ErrorCode::PointBehindCamera,
              "camera-frame depth " + std::to_string(x_cam.z()) + " mm");
    }
    return cam.normalized_to_pixel({x_cam.x() / x_cam.z(), x_cam.y() / x_cam.z()});
}

Ray backproject_ray(const CameraModel& cam, const RigidTransform& world_to_cam,
                    const Vec2& undistorted_px) {
    const Vec2 xn = cam.pixel_to_normalized(undistorted_px);
    const Vec3 dir_cam(xn.x(), xn.y(), 1.0);
    Ray ray;
    ray.origin = -(world_to_cam.rotation.transpose() * world_to_cam.translation);
    ray.direction = (world_to_cam.rotation.transpose() * dir_cam).normalized();
    return ray;
}

// ---------------------------------------------------------------------------
// Spheres and conics
// ---------------------------------------------------------------------------

Mat4 sphere_dual_quadric(const SphereMarker& marker) {
    require(marker.radius > 0.0, "sphere radius must be positive");
    Mat4 q = Mat4::Identity();
    q.topLeftCorner<3, 3>() =
        marker.center * marker.center.transpose() -
        marker.radius * marker.radius * Mat3::Identity();
    q.topRightCorner<3, 1>() = marker.center;
    q.bottomLeftCorner<1, 3>() = marker.center.transpose();
    return q;
}

namespace {

double conic_sign(const Mat3& e) {
    const double trace2 = e(0, 0) + e(1, 1);
    if (trace2 != 0.0) return trace2 > 0.0 ? 1.0 : -1.0;
    if (e(2, 2) != 0.0) return e(2, 2) > 0.0 ? 1.0 : -1.0;
    return 1.0;
}

/// Real-ellipse test on a symmetric conic: definite leading block and a
/// negative constant term after centering.
bool is_real_ellipse(const Mat3& e) {
    const double det2 = e(0, 0) * e(1, 1) - e(0, 1) * e(1, 0);
    if (!(det2 > 0.0)) return false;
    const double s = conic_sign(e);
    const Eigen::Matrix2d a = s * e.topLeftCorner<2, 2>();
    const Vec2 b = s * e.topRightCorner<2, 1>();
    const double c = s * e(2, 2);
    const Vec2 center = -a.ldlt().solve(b);
    const double f0 = c + b.dot(center);
    return f0 < 0.0;
}

}  // namespace

ConicMatrix ConicMatrix::normalized() const {
    const double n = e.norm();
    require(n > 0.0, "cannot normalize a zero conic");
    ConicMatrix out;
    out.e = (conic_sign(e) / n) * e;
    return out;
}

double balanced_determinant(const Mat3& m) {
    Vec3 d;
    for (int i = 0; i < 3; ++i) {
        const double row = m.row(i).cwiseAbs().maxCoeff();
        d(i) = row > 0.0 ? 1.0 / std::sqrt(row) : 1.0;
    }
    const Mat3 balanced = d.asDiagonal() * m * d.asDiagonal();
    return balanced.determinant();
}

ConicMatrix project_sphere(const ProjectionMatrix& p, const SphereMarker& marker) {
    const Mat4 q = sphere_dual_quadric(marker);
    Mat3 dual = p.p * q * p.p.transpose();
    dual = 0.5 * (dual + dual.transpose());
    if (dual.norm() <= 0.0 || std::abs(balanced_determinant(dual)) <= 1e-12) {
        raise(ErrorCode::DegenerateConic, "dual conic is singular");
    }
    const Mat3 e = dual.inverse();
    ConicMatrix conic = ConicMatrix::from_matrix(e).normalized();
    if (!is_real_ellipse(conic.e)) {
        raise(ErrorCode::DegenerateConic,
              "projected outline is not a real ellipse (sphere not fully in "
              "front of the camera?)");
    }
    return conic;
}

double conic_point_residual(const ConicMatrix& conic, const Vec2& x_px) {
    const Mat3 e = conic.normalized().e;
    const Vec3 x(x_px.x(), x_px.y(), 1.0);
    return x.dot(e * x);
}

ConicMatrix ellipse_to_conic(const Ellipse& ellipse) {
    require(ellipse.a >= ellipse.b && ellipse.b > 0.0, "need a >= b > 0");
    const double c = std::cos(ellipse.theta), s = std::sin(ellipse.theta);
    const Vec2 u(c, s), v(-s, c);
    const Eigen::Matrix2d a = u * u.transpose() / (ellipse.a * ellipse.a) +
                              v * v.transpose() / (ellipse.b * ellipse.b);
    const Vec2 b = -a * ellipse.center;
    Mat3 e;
    e.topLeftCorner<2, 2>() = a;
    e.topRightCorner<2, 1>() = b;
    e.bottomLeftCorner<1, 2>() = b.transpose();
    e(2, 2) = ellipse.center.dot(a * ellipse.center) - 1.0;
    return ConicMatrix::from_matrix(e);
}

Ellipse conic_to_ellipse(const ConicMatrix& conic) {
    const Mat3 raw = 0.5 * (conic.e + conic.e.transpose());
    const double det2 = raw(0, 0) * raw(1, 1) - raw(0, 1) * raw(1, 0);
    if (!(det2 > 0.0)) {
        raise(ErrorCode::NotAnEllipse, "leading 2x2 block is not definite");
    }
    const double s = conic_sign(raw);
    const Eigen::Matrix2d a = s * raw.topLeftCorner<2, 2>();
    const Vec2 b = s * raw.topRightCorner<2, 1>();
    const double c = s * raw(2, 2);

    const Vec2 center = -a.ldlt().solve(b);
    const double f0 = c + b.dot(center);
    if (!(f0 < 0.0)) {
        raise(ErrorCode::NotAnEllipse, "conic has no real points");
    }

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(a);
    const double l0 = eig.eigenvalues()(0);  // smallest -> major axis
    const double l1 = eig.eigenvalues()(1);
    if (!(l0 > 0.0)) {
        raise(ErrorCode::NotAnEllipse, "leading block is not positive definite");
    }

    Ellipse out;
    out.center = center;
    out.a = std::sqrt(-f0 / l0);
    out.b = std::sqrt(-f0 / l1);
    const Vec2 major = eig.eigenvectors().col(0);
    double theta = std::atan2(major.y(), major.x());
    theta = std::fmod(theta, M_PI);
    if (theta < 0.0) theta += M_PI;
    if (theta >= M_PI) theta -= M_PI;
    out.theta = theta;
    return out;
}

// ---------------------------------------------------------------------------
// Point-to-ellipse distance (robust nearest-point iteration)
// ---------------------------------------------------------------------------

namespace {

/// Nearest point on the axis-aligned ellipse (e0, e1), e0 >= e1 > 0, to a
/// first-quadrant query (y0, y1 >= 0). Root-finds F(t) = sum (e_i y_i /
/// (t + e_i^2))^2 - 1 on its monotone branch.
Vec2 nearest_point_first_quadrant(double e0, double e1, double y0, double y1) {
    if (y1 > 0.0) {
        if (y0 > 0.0) {
            const double z0 = y0 / e0, z1 = y1 / e1;
            const double g0 = z0 * z0 + z1 * z1 - 1.0;
            if (std::abs(g0) < 1e-15) return {y0, y1};  // already on the outline
            double t_lo = -e1 * e1 + e1 * y1;
            double t_hi = -e1 * e1 + std::sqrt(e0 * e0 * y0 * y0 + e1 * e1 * y1 * y1);
            auto f = [&](double t) {
                const double r0 = e0 * y0 / (t + e0 * e0);
                const double r1 = e1 * y1 / (t + e1 * e1);
                return r0 * r0 + r1 * r1 - 1.0;
            };
            double t = 0.5 * (t_lo + t_hi);
            for (int iter = 0; iter < 200; ++iter) {
                const double ft = f(t);
                if (ft > 0.0) {
                    t_lo = t;
                } else {
                    t_hi = t;
                }
                // Newton step with bisection fallback.
                const double d0 = e0 * y0 / (t + e0 * e0);
                const double d1 = e1 * y1 / (t + e1 * e1);
                const double df = -2.0 * (d0 * d0 / (t + e0 * e0) + d1 * d1 / (t + e1 * e1));
                double t_next = (df != 0.0) ? t - ft / df : 0.5 * (t_lo + t_hi);
                if (!(t_next > t_lo && t_next < t_hi)) t_next = 0.5 * (t_lo + t_hi);
                if (std::abs(t_next - t) <= 1e-14 * (std::abs(t_next) + e0 * e0)) {
                    t = t_next;
                    break;
                }
                t = t_next;
            }
            return {e0 * e0 * y0 / (t + e0 * e0), e1 * e1 * y1 / (t + e1 * e1)};
        }
        return {0.0, e1};
    }
    const double crit = (e0 * e0 - e1 * e1) / e0;
    if (y0 < crit) {
        const double x0 = e0 * e0 * y0 / (e0 * e0 - e1 * e1);
        const double ratio = x0 / e0;
        const double x1 = e1 * std::sqrt(std::max(0.0, 1.0 - ratio * ratio));
        return {x0, x1};
    }
    return {e0, 0.0};
}

}  // namespace

Vec2 closest_point_on_ellipse(const Ellipse& ellipse, const Vec2& point) {
    const double c = std::cos(ellipse.theta), s = std::sin(ellipse.theta);
    const Vec2 d = point - ellipse.center;
    // Into the ellipse-aligned frame.
    const double qx = c * d.x() + s * d.y();
    const double qy = -s * d.x() + c * d.y();
    const double sx = qx < 0.0 ? -1.0 : 1.0;
    const double sy = qy < 0.0 ? -1.0 : 1.0;
    Vec2 n = nearest_point_first_quadrant(ellipse.a, ellipse.b, sx * qx, sy * qy);
    n.x() *= sx;
    n.y() *= sy;
    // Back to image coordinates.
    return {ellipse.center.x() + c * n.x() - s * n.y(),
            ellipse.center.y() + s * n.x() + c * n.y()};
}

double point_to_ellipse_distance(const Ellipse& ellipse, const Vec2& point) {
    return (closest_point_on_ellipse(ellipse, point) - point).norm();
}

// ---------------------------------------------------------------------------
// Arc length
// ---------------------------------------------------------------------------

namespace {

double arc_speed(const Ellipse& e, double t) {
    const double st = std::sin(t), ct = std::cos(t);
    return std::sqrt(e.a * e.a * st * st + e.b * e.b * ct * ct);
}

double adaptive_simpson(const Ellipse& e, double t0, double t1, double f0, double fm,
                        double f1, double whole, double tol, int depth) {
    const double tm = 0.5 * (t0 + t1);
    const double flm = arc_speed(e, 0.5 * (t0 + tm));
    const double frm = arc_speed(e, 0.5 * (tm + t1));
    const double left = (tm - t0) / 6.0 * (f0 + 4.0 * flm + fm);
    const double right = (t1 - tm) / 6.0 * (fm + 4.0 * frm + f1);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) {
        return left + right + delta / 15.0;
    }
    return adaptive_simpson(e, t0, tm, f0, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson(e, tm, t1, fm, frm, f1, right, 0.5 * tol, depth - 1);
}

}  // namespace

double ellipse_arc_length(const Ellipse& ellipse, double t0, double t1, double rel_tol) {
    if (t0 == t1) return 0.0;
    const double f0 = arc_speed(ellipse, t0);
    const double f1 = arc_speed(ellipse, t1);
    const double tm = 0.5 * (t0 + t1);
    const double fm = arc_speed(ellipse, tm);
    const double whole = (t1 - t0) / 6.0 * (f0 + 4.0 * fm + f1);
    const double tol = std::abs(whole) * rel_tol + 1e-300;
    return adaptive_simpson(ellipse, t0, t1, f0, fm, f1, whole, tol, 48);
}

double ellipse_perimeter(const Ellipse& ellipse, double rel_tol) {
    // Quarter-period symmetry keeps the quadrature cheap.
    return 4.0 * ellipse_arc_length(ellipse, 0.0, 0.5 * M_PI, rel_tol);
}

}  // namespace spherereg
