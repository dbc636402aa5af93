#include <cmath>
#include <limits>

#include "spherereg/registration.hpp"

namespace spherereg::reg {

namespace {

struct PlaneFrame {
    Vec3 origin = Vec3::Zero();
    Mat3 axes = Mat3::Identity();  // columns e1, e2, normal
    double flatness = 0.0;         // third singular value / first

    Vec2 to_plane(const Vec3& x) const {
        const Vec3 d = axes.transpose() * (x - origin);
        return {d.x(), d.y()};
    }

    RigidTransform plane_from_world() const {
        return {axes.transpose(), -(axes.transpose() * origin)};
    }
};

PlaneFrame fit_plane(const std::vector<Vec3>& points) {
    PlaneFrame frame;
    for (const auto& p : points) frame.origin += p;
    frame.origin /= static_cast<double>(points.size());
    Eigen::MatrixXd centered(points.size(), 3);
    for (std::size_t i = 0; i < points.size(); ++i) {
        centered.row(static_cast<Eigen::Index>(i)) = (points[i] - frame.origin).transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeFullV);
    Mat3 v = svd.matrixV();
    if (v.determinant() < 0.0) v.col(2) = -v.col(2);
    frame.axes = v;
    const double s0 = svd.singularValues()(0);
    frame.flatness = s0 > 0.0 ? svd.singularValues()(2) / s0 : 0.0;
    return frame;
}

bool collinear_2d(const std::vector<Vec2>& pts) {
    Vec2 mean = Vec2::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& p : pts) {
        const Vec2 d = p - mean;
        cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
    return eig.eigenvalues()(1) <= 0.0 ||
           eig.eigenvalues()(0) <= 1e-16 * eig.eigenvalues()(1);
}

bool collinear_3d(const std::vector<Vec3>& pts) {
    Vec3 mean = Vec3::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& p : pts) {
        const Vec3 d = p - mean;
        cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    return eig.eigenvalues()(2) <= 0.0 ||
           eig.eigenvalues()(1) <= 1e-16 * eig.eigenvalues()(2);
}

/// Homography from plane coordinates to normalized image coordinates,
/// least squares over all correspondences (Hartley-normalized DLT).
Mat3 homography_dlt(const std::vector<Vec2>& plane, const std::vector<Vec2>& image) {
    const auto normalize = [](const std::vector<Vec2>& pts, std::vector<Vec2>* out) {
        Vec2 mean = Vec2::Zero();
        for (const auto& p : pts) mean += p;
        mean /= static_cast<double>(pts.size());
        double dist = 0.0;
        for (const auto& p : pts) dist += (p - mean).norm();
        dist /= static_cast<double>(pts.size());
        const double s = dist > 1e-12 ? std::sqrt(2.0) / dist : 1.0;
        out->resize(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) (*out)[i] = s * (pts[i] - mean);
        Mat3 t = Mat3::Identity();
        t(0, 0) = t(1, 1) = s;
        t(0, 2) = -s * mean.x();
        t(1, 2) = -s * mean.y();
        return t;
    };
    std::vector<Vec2> p_hat, i_hat;
    const Mat3 tp = normalize(plane, &p_hat);
    const Mat3 ti = normalize(image, &i_hat);

    Eigen::MatrixXd a(2 * plane.size(), 9);
    for (std::size_t k = 0; k < plane.size(); ++k) {
        const double u = p_hat[k].x(), v = p_hat[k].y();
        const double x = i_hat[k].x(), y = i_hat[k].y();
        a.row(static_cast<Eigen::Index>(2 * k)) << -u, -v, -1, 0, 0, 0, x * u, x * v, x;
        a.row(static_cast<Eigen::Index>(2 * k + 1)) << 0, 0, 0, -u, -v, -1, y * u, y * v, y;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
    Mat3 h_hat;
    h_hat << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
    return ti.inverse() * h_hat * tp;
}

/// Pose of the plane frame in the camera from a plane-to-normalized-image
/// homography. Picks the sign that puts the points in front of the camera.
RigidTransform pose_from_homography(const Mat3& h, const std::vector<Vec2>& plane_pts) {
    const double scale = 2.0 / (h.col(0).norm() + h.col(1).norm() + 1e-300);
    for (const double sign : {1.0, -1.0}) {
        Mat3 rot_raw;
        rot_raw.col(0) = sign * scale * h.col(0);
        rot_raw.col(1) = sign * scale * h.col(1);
        rot_raw.col(2) = rot_raw.col(0).cross(rot_raw.col(1));
        const Mat3 rot = orthonormalize_rotation(rot_raw);
        const Vec3 t = sign * scale * h.col(2);
        double depth = 0.0;
        for (const auto& p : plane_pts) {
            depth += (rot * Vec3(p.x(), p.y(), 0.0) + t).z();
        }
        if (depth > 0.0) return {rot, t};
    }
    raise(ErrorCode::PnpDegenerate, "homography places points behind the camera");
}

double reprojection_rms(const std::vector<Vec2>& points2d, const std::vector<Vec3>& points3d,
                        const CameraModel& cam, const RigidTransform& pose) {
    double sum = 0.0;
    for (std::size_t i = 0; i < points2d.size(); ++i) {
        const Vec3 pc = pose.apply(points3d[i]);
        if (pc.z() <= 1e-9) return std::numeric_limits<double>::max();
        const Vec2 proj = cam.normalized_to_pixel({pc.x() / pc.z(), pc.y() / pc.z()});
        sum += (proj - points2d[i]).squaredNorm();
    }
    return std::sqrt(sum / static_cast<double>(points2d.size()));
}

/// Gauss-Newton polish of the pixel reprojection error (pinhole; the input
/// 2D points are undistorted). Damped steps, left-multiplied rotation
/// increments.
RigidTransform refine_pose(const std::vector<Vec2>& points2d,
                           const std::vector<Vec3>& points3d, const CameraModel& cam,
                           RigidTransform pose) {
    double cost = reprojection_rms(points2d, points3d, cam, pose);
    for (int iter = 0; iter < 30; ++iter) {
        Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
        for (std::size_t i = 0; i < points2d.size(); ++i) {
            const Vec3 pc = pose.apply(points3d[i]);
            if (pc.z() <= 1e-9) continue;
            const double inv_z = 1.0 / pc.z();
            const Vec2 proj = cam.normalized_to_pixel({pc.x() * inv_z, pc.y() * inv_z});
            const Vec2 r = proj - points2d[i];
            Eigen::Matrix<double, 2, 3> d_proj;
            d_proj << cam.fx * inv_z, 0.0, -cam.fx * pc.x() * inv_z * inv_z,
                      0.0, cam.fy * inv_z, -cam.fy * pc.y() * inv_z * inv_z;
            // Left SE(3) increment: p' = exp(omega) p + dt, so dp/domega = -[p]x.
            Eigen::Matrix<double, 3, 6> d_point;
            Mat3 skew;
            skew << 0, -pc.z(), pc.y(), pc.z(), 0, -pc.x(), -pc.y(), pc.x(), 0;
            d_point.leftCols<3>() = -skew;
            d_point.rightCols<3>() = Mat3::Identity();
            const Eigen::Matrix<double, 2, 6> j = d_proj * d_point;
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        Eigen::Matrix<double, 6, 1> delta = h.ldlt().solve(-g);
        if (!delta.allFinite()) break;

        RigidTransform trial;
        double trial_cost = 0.0;
        bool accepted = false;
        for (int halving = 0; halving < 10; ++halving) {
            const Mat3 inc = rotation_exp(delta.head<3>());
            trial.rotation = inc * pose.rotation;
            trial.translation = inc * pose.translation + delta.tail<3>();
            trial_cost = reprojection_rms(points2d, points3d, cam, trial);
            if (trial_cost <= cost) {
                accepted = true;
                break;
            }
            delta *= 0.5;
        }
        if (!accepted) break;
        const double improvement = cost - trial_cost;
        pose = trial;
        cost = trial_cost;
        if (delta.norm() < 1e-14 || improvement < 1e-16 * (1.0 + cost)) break;
    }
    return pose;
}

}  // namespace

RigidTransform pnp_pose(const std::vector<Vec2>& points2d, const std::vector<Vec3>& points3d,
                        const CameraModel& cam, double* reproj_rms_out) {
    require(points2d.size() == points3d.size(), "2D/3D count mismatch");
    require(points2d.size() >= 4, "PnP needs at least 4 correspondences");
    if (collinear_2d(points2d)) raise(ErrorCode::PnpDegenerate, "2D points collinear");
    if (collinear_3d(points3d)) raise(ErrorCode::PnpDegenerate, "3D points collinear");

    // Normalized image coordinates.
    std::vector<Vec2> norm(points2d.size());
    for (std::size_t i = 0; i < points2d.size(); ++i) {
        norm[i] = cam.pixel_to_normalized(points2d[i]);
    }

    const PlaneFrame plane = fit_plane(points3d);
    const bool planar = plane.flatness < 1e-6 || points3d.size() < 6;

    RigidTransform pose;
    if (planar) {
        // Planar branch: decompose the plane-to-image homography. For 4-5
        // nearly-but-not-exactly coplanar points this still provides the
        // initialization, and the polish below absorbs the residual.
        std::vector<Vec2> plane_pts(points3d.size());
        for (std::size_t i = 0; i < points3d.size(); ++i) {
            plane_pts[i] = plane.to_plane(points3d[i]);
        }
        if (collinear_2d(plane_pts)) raise(ErrorCode::PnpDegenerate, "3D points collinear");
        const Mat3 h = homography_dlt(plane_pts, norm);
        const RigidTransform cam_from_plane = pose_from_homography(h, plane_pts);
        pose = compose(cam_from_plane, plane.plane_from_world());
    } else {
        // DLT for the full 3x4 projection in normalized coordinates.
        Eigen::MatrixXd a(2 * points3d.size(), 12);
        for (std::size_t i = 0; i < points3d.size(); ++i) {
            const Vec3& x = points3d[i];
            const double u = norm[i].x(), v = norm[i].y();
            a.row(static_cast<Eigen::Index>(2 * i))
                << x.x(), x.y(), x.z(), 1, 0, 0, 0, 0,
                   -u * x.x(), -u * x.y(), -u * x.z(), -u;
            a.row(static_cast<Eigen::Index>(2 * i + 1))
                << 0, 0, 0, 0, x.x(), x.y(), x.z(), 1,
                   -v * x.x(), -v * x.y(), -v * x.z(), -v;
        }
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
        const Eigen::Matrix<double, 12, 1> p = svd.matrixV().col(11);
        Mat34 proj;
        proj << p(0), p(1), p(2), p(3), p(4), p(5), p(6), p(7), p(8), p(9), p(10), p(11);
        Mat3 m = proj.leftCols<3>();
        double scale = std::cbrt(std::abs(m.determinant()));
        if (scale <= 1e-15) raise(ErrorCode::PnpDegenerate, "rank-deficient DLT");
        if (m.determinant() < 0.0) scale = -scale;
        pose.rotation = orthonormalize_rotation(m / scale);
        pose.translation = proj.col(3) / scale;
        // Depth sign check.
        double depth = 0.0;
        for (const auto& x : points3d) depth += pose.apply(x).z();
        if (depth < 0.0) {
            pose.rotation = orthonormalize_rotation(-m / scale);
            pose.translation = -proj.col(3) / scale;
        }
    }

    pose = refine_pose(points2d, points3d, cam, pose);
    if (reproj_rms_out) *reproj_rms_out = reprojection_rms(points2d, points3d, cam, pose);
    return pose;
}

std::vector<RigidTransform> poses_from_forward_kinematics(
    const std::vector<RigidTransform>& t_ee_b, const RigidTransform& t_c_ee) {
    std::vector<RigidTransform> world_to_cam;
    world_to_cam.reserve(t_ee_b.size());
    for (const auto& ee : t_ee_b) {
        world_to_cam.push_back(compose(ee, t_c_ee).inverse());
    }
    return world_to_cam;
}

}  // namespace spherereg::reg
