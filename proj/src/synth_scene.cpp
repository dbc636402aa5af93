#include <algorithm>
#include <cmath>
#include <map>

#include "spherereg/detect.hpp"
#include "spherereg/rng.hpp"
#include "spherereg/synth.hpp"

namespace spherereg::synth {

namespace {

constexpr int kVisibilityMarginPx = 8;

Mat3 random_rotation(Rng& rng) {
    Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    const double w = q(0), x = q(1), y = q(2), z = q(3);
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// World-to-camera pose looking at `target` from `position` (x right,
/// y down, z forward).
RigidTransform look_at(const Vec3& position, const Vec3& target, const Vec3& down_hint) {
    const Vec3 forward = (target - position).normalized();
    Vec3 right = down_hint.cross(forward);
    if (right.norm() < 1e-9) {
        right = Vec3(1, 0, 0).cross(forward);
        if (right.norm() < 1e-9) right = Vec3(0, 1, 0).cross(forward);
    }
    right.normalize();
    const Vec3 down = forward.cross(right);
    Mat3 r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    return {r, -(r * position)};
}

bool conic_inside_image(const SyntheticScene& scene, const Ellipse& ellipse) {
    // Check the distorted outline against the image bounds.
    const auto& cam = scene.camera;
    for (int k = 0; k < 16; ++k) {
        const double t = 2.0 * M_PI * k / 16.0;
        Vec2 p = ellipse.point_at(t);
        if (scene.spec.with_distortion) p = cam.distort_pixel(p);
        if (p.x() < kVisibilityMarginPx || p.x() > cam.width - 1 - kVisibilityMarginPx ||
            p.y() < kVisibilityMarginPx || p.y() > cam.height - 1 - kVisibilityMarginPx) {
            return false;
        }
    }
    return true;
}

}  // namespace

bool SyntheticScene::marker_visible(int marker_index, int cam_index) const {
    const auto& marker = markers[marker_index];
    SphereMarker world = marker;
    world.center = ground_truth_transform.apply(marker.center);

    const auto& pose = poses_world_to_cam[cam_index];
    const Vec3 in_cam = pose.apply(world.center);
    if (in_cam.z() <= world.radius) return false;
    try {
        const auto conic =
            project_sphere(ProjectionMatrix::from_camera(camera, pose), world);
        return conic_inside_image(*this, conic_to_ellipse(conic));
    } catch (const Error&) {
        return false;
    }
}

SyntheticScene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
    require(spec.n_markers >= 4, "need at least 4 registration markers");
    require(spec.n_control_markers >= 0, "control marker count must be >= 0");
    require(spec.n_cameras >= 1, "need at least one camera");
    require(spec.marker_radius > 0.0, "marker radius must be positive");
    require(spec.standoff_min > 0.0 && spec.standoff_max >= spec.standoff_min,
            "bad standoff range");
    spec.noise.validate();

    const int total_markers = spec.n_markers + spec.n_control_markers;
    const int min_visible = std::min(4, spec.n_cameras);

    Rng rng(seed);
    for (int attempt = 0; attempt < 10000; ++attempt) {
        SyntheticScene scene;
        scene.spec = spec;
        scene.seed = seed;

        // Marker centers on the board plane with the minimum separation.
        std::vector<Vec2> planar;
        bool placed = true;
        for (int j = 0; j < total_markers; ++j) {
            bool ok = false;
            for (int tries = 0; tries < 200 && !ok; ++tries) {
                const Vec2 candidate(rng.uniform(-spec.board_half_extent, spec.board_half_extent),
                                     rng.uniform(-spec.board_half_extent, spec.board_half_extent));
                ok = true;
                for (const auto& p : planar) {
                    if ((candidate - p).norm() < spec.min_separation) {
                        ok = false;
                        break;
                    }
                }
                if (ok) planar.push_back(candidate);
            }
            if (!ok) {
                placed = false;
                break;
            }
        }
        if (!placed) continue;

        // The control markers are those nearest the board center, mirroring
        // their placement at the center of the scene.
        std::vector<int> order(planar.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::sort(order.begin(), order.end(), [&](int lhs, int rhs) {
            return planar[lhs].norm() < planar[rhs].norm();
        });
        std::vector<bool> is_control(planar.size(), false);
        for (int k = 0; k < spec.n_control_markers; ++k) is_control[order[k]] = true;

        for (int j = 0; j < total_markers; ++j) {
            SphereMarker m;
            m.id = j;
            m.center = Vec3(planar[j].x(), planar[j].y(), 0.0);
            m.radius = spec.marker_radius;
            scene.markers.push_back(m);
            if (is_control[j]) {
                scene.control_ids.push_back(j);
            } else {
                scene.registration_ids.push_back(j);
            }
        }

        // Ground-truth transform S -> W.
        scene.ground_truth_transform.rigid.rotation = random_rotation(rng);
        scene.ground_truth_transform.rigid.translation =
            Vec3(rng.uniform(-300.0, 300.0), rng.uniform(-300.0, 300.0),
                 rng.uniform(-300.0, 300.0));
        scene.ground_truth_transform.scale = 1.0;

        scene.camera.fx = scene.camera.fy = spec.focal_px;
        scene.camera.cx = 0.5 * spec.image_width;
        scene.camera.cy = 0.5 * spec.image_height;
        scene.camera.width = spec.image_width;
        scene.camera.height = spec.image_height;
        if (spec.with_distortion) {
            scene.camera.k1 = -0.03;
            scene.camera.k2 = 0.005;
            scene.camera.p1 = 2e-4;
            scene.camera.p2 = -1.5e-4;
        }
        scene.camera.validate();

        // Two camera arcs on opposite sides of the board, facing its center.
        const Vec3 board_center_w = scene.ground_truth_transform.apply(Vec3::Zero());
        const Vec3 board_normal_w =
            scene.ground_truth_transform.rigid.rotation * Vec3(0, 0, 1);
        Vec3 tangent = board_normal_w.cross(Vec3(0, 0, 1));
        if (tangent.norm() < 1e-6) tangent = board_normal_w.cross(Vec3(0, 1, 0));
        tangent.normalize();
        const Vec3 bitangent = board_normal_w.cross(tangent).normalized();

        for (int i = 0; i < spec.n_cameras; ++i) {
            const int arc = i % 2;
            const double azimuth = (arc == 0 ? 0.0 : M_PI) + rng.uniform(-0.7, 0.7);
            const double elevation = rng.uniform(0.6, 1.2);  // rad above the board
            const double standoff = rng.uniform(spec.standoff_min, spec.standoff_max);
            const Vec3 dir = std::cos(elevation) * (std::cos(azimuth) * tangent +
                                                    std::sin(azimuth) * bitangent) +
                             std::sin(elevation) * board_normal_w;
            const Vec3 position = board_center_w + standoff * dir;
            scene.poses_world_to_cam.push_back(
                look_at(position, board_center_w, -tangent));
        }

        bool all_visible = true;
        for (int j = 0; j < total_markers && all_visible; ++j) {
            int visible = 0;
            for (int i = 0; i < spec.n_cameras; ++i) {
                if (scene.marker_visible(j, i)) ++visible;
            }
            all_visible = visible >= min_visible;
        }
        if (all_visible) return scene;
    }
    raise(ErrorCode::PlacementFailed, "could not place a fully visible scene");
}

Observations render_observations(const SyntheticScene& scene) {
    Observations obs;
    const Rng base(scene.seed);

    for (std::size_t i = 0; i < scene.poses_world_to_cam.size(); ++i) {
        Rng cam_rng = base.fork(0x706f7365ULL + i);
        const RigidTransform& true_pose = scene.poses_world_to_cam[i];

        reg::PosedImage image;
        image.image_id = static_cast<int>(i);
        image.camera = scene.camera;

        RigidTransform pose = true_pose;
        if (scene.spec.noise.pose_rotation_sigma > 0.0 ||
            scene.spec.noise.pose_translation_sigma > 0.0) {
            const Vec3 omega(cam_rng.normal(0.0, scene.spec.noise.pose_rotation_sigma),
                             cam_rng.normal(0.0, scene.spec.noise.pose_rotation_sigma),
                             cam_rng.normal(0.0, scene.spec.noise.pose_rotation_sigma));
            const Vec3 dt(cam_rng.normal(0.0, scene.spec.noise.pose_translation_sigma),
                          cam_rng.normal(0.0, scene.spec.noise.pose_translation_sigma),
                          cam_rng.normal(0.0, scene.spec.noise.pose_translation_sigma));
            pose.rotation = rotation_exp(omega) * pose.rotation;
            pose.translation += dt;
        }
        image.pose_world_to_cam = pose;

        for (std::size_t j = 0; j < scene.markers.size(); ++j) {
            if (!scene.marker_visible(static_cast<int>(j), static_cast<int>(i))) continue;
            SphereMarker world = scene.markers[j];
            world.center = scene.ground_truth_transform.apply(world.center);

            const auto conic = project_sphere(
                ProjectionMatrix::from_camera(scene.camera, true_pose), world);
            const Ellipse true_ellipse = conic_to_ellipse(conic);
            const auto undistorted =
                detect::sample_outline(true_ellipse, scene.spec.outline_points);

            Rng point_rng = base.fork(0x6f626a00ULL + i * 4096 + j);
            detect::EllipseDetection det;
            det.image_id = static_cast<int>(i);
            det.marker_id = scene.markers[j].id;

            std::vector<Vec2> raw(undistorted.size());
            for (std::size_t l = 0; l < undistorted.size(); ++l) {
                Vec2 p = scene.spec.with_distortion
                             ? scene.camera.distort_pixel(undistorted[l])
                             : undistorted[l];
                raw[l] = p;
            }
            // The detection's ellipse is what a detector would report: the
            // least-squares fit of the (noise-free) raw outline.
            det.ellipse = raw.size() >= 5 ? detect::fit_ellipse_lsq(raw) : true_ellipse;

            const double box = 3.0 * std::max(true_ellipse.a, true_ellipse.b);
            for (auto& p : raw) {
                if (scene.spec.noise.outlier_fraction > 0.0 &&
                    point_rng.uniform() < scene.spec.noise.outlier_fraction) {
                    p = det.ellipse.center + Vec2(point_rng.uniform(-box, box),
                                                  point_rng.uniform(-box, box));
                    continue;
                }
                if (scene.spec.noise.outline_noise_sigma > 0.0) {
                    p.x() += point_rng.normal(0.0, scene.spec.noise.outline_noise_sigma);
                    p.y() += point_rng.normal(0.0, scene.spec.noise.outline_noise_sigma);
                }
            }
            det.outline_points = std::move(raw);
            image.detections.push_back(std::move(det));
        }
        obs.images.push_back(std::move(image));
        obs.true_poses.push_back(true_pose);
    }
    return obs;
}

}  // namespace spherereg::synth
