#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "spherereg/registration.hpp"

namespace spherereg::reg {

namespace {

struct Hypothesis {
    double score = std::numeric_limits<double>::max();
    RigidTransform pose;  // camera from scene
    std::array<int, 4> detections{};
    std::array<int, 4> markers{};
};

struct MarkerPlane {
    Vec3 origin = Vec3::Zero();
    Mat3 axes = Mat3::Identity();
    std::vector<Vec2> plane_coords;

    RigidTransform plane_from_scene() const {
        return {axes.transpose(), -(axes.transpose() * origin)};
    }
};

MarkerPlane marker_plane(const std::vector<SphereMarker>& markers) {
    MarkerPlane mp;
    for (const auto& m : markers) mp.origin += m.center;
    mp.origin /= static_cast<double>(markers.size());
    Eigen::MatrixXd centered(markers.size(), 3);
    for (std::size_t i = 0; i < markers.size(); ++i) {
        centered.row(static_cast<Eigen::Index>(i)) =
            (markers[i].center - mp.origin).transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeFullV);
    Mat3 v = svd.matrixV();
    if (v.determinant() < 0.0) v.col(2) = -v.col(2);
    mp.axes = v;
    mp.plane_coords.resize(markers.size());
    for (std::size_t i = 0; i < markers.size(); ++i) {
        const Vec3 d = mp.axes.transpose() * (markers[i].center - mp.origin);
        mp.plane_coords[i] = {d.x(), d.y()};
    }
    return mp;
}

/// Minimal planar pose: homography from 4 plane points to 4 normalized
/// image points, decomposed into the camera-from-plane pose. Returns false
/// on degenerate configurations.
bool minimal_planar_pose(const std::array<Vec2, 4>& plane, const std::array<Vec2, 4>& image,
                         RigidTransform* cam_from_plane) {
    Eigen::Matrix<double, 8, 9> a;
    for (int k = 0; k < 4; ++k) {
        const double u = plane[k].x(), v = plane[k].y();
        const double x = image[k].x(), y = image[k].y();
        a.row(2 * k) << -u, -v, -1, 0, 0, 0, x * u, x * v, x;
        a.row(2 * k + 1) << 0, 0, 0, -u, -v, -1, y * u, y * v, y;
    }
    Eigen::JacobiSVD<Eigen::Matrix<double, 8, 9>> svd(a, Eigen::ComputeFullV);
    if (svd.singularValues()(7) < 1e-12 * svd.singularValues()(0)) return false;
    const Eigen::Matrix<double, 9, 1> h9 = svd.matrixV().col(8);
    Mat3 h;
    h << h9(0), h9(1), h9(2), h9(3), h9(4), h9(5), h9(6), h9(7), h9(8);

    const double norms = h.col(0).norm() + h.col(1).norm();
    if (norms < 1e-12) return false;
    const double scale = 2.0 / norms;
    for (const double sign : {1.0, -1.0}) {
        Mat3 rot_raw;
        rot_raw.col(0) = sign * scale * h.col(0);
        rot_raw.col(1) = sign * scale * h.col(1);
        rot_raw.col(2) = rot_raw.col(0).cross(rot_raw.col(1));
        const Mat3 rot = orthonormalize_rotation(rot_raw);
        const Vec3 t = sign * scale * h.col(2);
        double depth = 0.0;
        for (const auto& p : plane) depth += (rot * Vec3(p.x(), p.y(), 0.0) + t).z();
        if (depth > 0.0) {
            *cam_from_plane = {rot, t};
            return true;
        }
    }
    return false;
}

double quad_area(const std::array<Vec2, 4>& p) {
    double area = 0.0;
    for (int i = 0; i < 4; ++i) {
        const Vec2& a = p[i];
        const Vec2& b = p[(i + 1) % 4];
        area += a.x() * b.y() - b.x() * a.y();
    }
    return 0.5 * std::abs(area);
}

}  // namespace

void RegistrationProblem::validate() const {
    require(!images.empty(), "need at least one image");
    require(markers.size() >= 4, "need at least 4 markers");
    for (const auto& image : images) {
        std::vector<int> seen;
        for (const auto& d : image.detections) {
            require(std::find(seen.begin(), seen.end(), d.marker_id) == seen.end(),
                    "duplicate marker_id in image " + std::to_string(image.image_id));
            seen.push_back(d.marker_id);
        }
    }
}

bool RegistrationProblem::is_registration_marker(int marker_id) const {
    if (registration_marker_ids.empty()) return true;
    return std::find(registration_marker_ids.begin(), registration_marker_ids.end(),
                     marker_id) != registration_marker_ids.end();
}

MatchResult match_markers(const PosedImage& image, const std::vector<SphereMarker>& markers,
                          int threads) {
    (void)threads;  // hypothesis scan is sequential; chunks stay deterministic
    require(image.detections.size() >= 4, "need at least 4 detections to match");
    require(markers.size() >= 4, "need at least 4 markers to match");

    const std::size_t n_det = image.detections.size();
    const std::size_t n_mark = markers.size();

    // Undistorted detection centers, in a canonical order so the result is
    // invariant to the detection ordering.
    std::vector<Vec2> centers(n_det);
    for (std::size_t i = 0; i < n_det; ++i) {
        centers[i] = image.camera.undistort_pixel(image.detections[i].ellipse.center);
    }
    std::vector<int> det_order(n_det);
    std::iota(det_order.begin(), det_order.end(), 0);
    std::sort(det_order.begin(), det_order.end(), [&](int lhs, int rhs) {
        if (centers[lhs].x() != centers[rhs].x()) return centers[lhs].x() < centers[rhs].x();
        return centers[lhs].y() < centers[rhs].y();
    });

    std::vector<Vec2> norm_centers(n_det);
    for (std::size_t i = 0; i < n_det; ++i) {
        norm_centers[i] = image.camera.pixel_to_normalized(centers[i]);
    }

    const MarkerPlane plane = marker_plane(markers);
    const RigidTransform plane_from_scene = plane.plane_from_scene();

    auto score_pose = [&](const RigidTransform& cam_from_scene) {
        std::vector<Vec2> projected(n_mark);
        for (std::size_t j = 0; j < n_mark; ++j) {
            const Vec3 pc = cam_from_scene.apply(markers[j].center);
            if (pc.z() <= 1e-9) return std::numeric_limits<double>::max();
            projected[j] = image.camera.normalized_to_pixel({pc.x() / pc.z(), pc.y() / pc.z()});
        }
        double sum = 0.0;
        for (std::size_t i = 0; i < n_det; ++i) {
            double best = std::numeric_limits<double>::max();
            for (std::size_t j = 0; j < n_mark; ++j) {
                best = std::min(best, (centers[i] - projected[j]).norm());
            }
            sum += best;
        }
        return sum / static_cast<double>(n_det);
    };

    // Exhaustive scan: C(D,4) detection quadruples x ordered marker
    // quadruples, early-terminated once a hypothesis scores below 2 px.
    Hypothesis best;
    bool stop = false;

    std::array<int, 4> det_idx{};
    for (std::size_t a = 0; a + 3 < n_det && !stop; ++a)
    for (std::size_t b = a + 1; b + 2 < n_det && !stop; ++b)
    for (std::size_t c = b + 1; c + 1 < n_det && !stop; ++c)
    for (std::size_t d = c + 1; d < n_det && !stop; ++d) {
        det_idx = {det_order[a], det_order[b], det_order[c], det_order[d]};
        std::array<Vec2, 4> img_pts;
        std::array<Vec2, 4> img_norm;
        for (int k = 0; k < 4; ++k) {
            img_pts[k] = centers[det_idx[k]];
            img_norm[k] = norm_centers[det_idx[k]];
        }
        if (quad_area(img_pts) < 25.0) continue;  // nearly collinear picks

        std::array<int, 4> mark_idx{};
        std::vector<bool> used_flags(n_mark, false);
        // Ordered selections of 4 markers (lexicographic).
        for (std::size_t m0 = 0; m0 < n_mark && !stop; ++m0) {
            used_flags[m0] = true;
            for (std::size_t m1 = 0; m1 < n_mark && !stop; ++m1) {
                if (used_flags[m1]) continue;
                used_flags[m1] = true;
                for (std::size_t m2 = 0; m2 < n_mark && !stop; ++m2) {
                    if (used_flags[m2]) continue;
                    used_flags[m2] = true;
                    for (std::size_t m3 = 0; m3 < n_mark; ++m3) {
                        if (used_flags[m3]) continue;
                        mark_idx = {static_cast<int>(m0), static_cast<int>(m1),
                                    static_cast<int>(m2), static_cast<int>(m3)};
                        std::array<Vec2, 4> plane_pts;
                        for (int k = 0; k < 4; ++k) {
                            plane_pts[k] = plane.plane_coords[mark_idx[k]];
                        }
                        RigidTransform cam_from_plane;
                        if (!minimal_planar_pose(plane_pts, img_norm, &cam_from_plane)) {
                            continue;
                        }
                        const RigidTransform cam_from_scene =
                            compose(cam_from_plane, plane_from_scene);
                        const double score = score_pose(cam_from_scene);
                        if (score < best.score) {
                            best.score = score;
                            best.pose = cam_from_scene;
                            best.detections = det_idx;
                            best.markers = mark_idx;
                        }
                        if (score < 2.0) {
                            stop = true;
                            break;
                        }
                    }
                    used_flags[m2] = false;
                }
                used_flags[m1] = false;
            }
            used_flags[m0] = false;
        }
    }

    if (best.score > 50.0) {
        raise(ErrorCode::NoConsistentMatch,
              "best hypothesis mean reprojection " + std::to_string(best.score) + " px");
    }

    // Greedy extension: repeatedly take the globally closest
    // (detection, projected marker) pair under the winning pose.
    std::vector<Vec2> projected(n_mark);
    for (std::size_t j = 0; j < n_mark; ++j) {
        const Vec3 pc = best.pose.apply(markers[j].center);
        projected[j] = image.camera.normalized_to_pixel({pc.x() / pc.z(), pc.y() / pc.z()});
    }
    std::vector<bool> det_used(n_det, false), mark_used(n_mark, false);
    std::vector<std::pair<int, int>> pairs;  // (detection index, marker index)
    for (;;) {
        double best_dist = 50.0;  // beyond this a pair is not credible
        int bi = -1, bj = -1;
        for (std::size_t i = 0; i < n_det; ++i) {
            if (det_used[i]) continue;
            for (std::size_t j = 0; j < n_mark; ++j) {
                if (mark_used[j]) continue;
                const double dist = (centers[i] - projected[j]).norm();
                if (dist < best_dist) {
                    best_dist = dist;
                    bi = static_cast<int>(i);
                    bj = static_cast<int>(j);
                }
            }
        }
        if (bi < 0) break;
        det_used[bi] = true;
        mark_used[bj] = true;
        pairs.emplace_back(bi, bj);
    }
    if (pairs.size() < 4) {
        raise(ErrorCode::NoConsistentMatch, "fewer than 4 consistent correspondences");
    }
    std::sort(pairs.begin(), pairs.end());

    // Final PnP over all matched correspondences.
    std::vector<Vec2> pts2d;
    std::vector<Vec3> pts3d;
    for (const auto& [di, mj] : pairs) {
        pts2d.push_back(centers[di]);
        pts3d.push_back(markers[mj].center);
    }
    double rms = 0.0;
    const RigidTransform refined = pnp_pose(pts2d, pts3d, image.camera, &rms);

    MatchResult result;
    for (const auto& [di, mj] : pairs) {
        result.detection_to_marker.emplace_back(di, markers[mj].id);
    }
    result.camera_from_scene = refined;
    result.initial_transform = compose(image.pose_world_to_cam.inverse(), refined);
    result.mean_reproj_px = score_pose(refined);
    return result;
}

}  // namespace spherereg::reg
