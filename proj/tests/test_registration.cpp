#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "spherereg/detect.hpp"
#include "spherereg/registration.hpp"
#include "spherereg/rng.hpp"
#include "spherereg/synth.hpp"

using namespace spherereg;
using namespace spherereg::reg;

namespace {

CameraModel test_camera() {
    CameraModel cam;
    cam.fx = cam.fy = 2000.0;
    cam.cx = 960.0;
    cam.cy = 600.0;
    cam.width = 1920;
    cam.height = 1200;
    return cam;
}

RefineState state_from(const SimilarityTransform& t) {
    RefineState s;
    s.rotation = t.rigid.rotation;
    s.translation = t.rigid.translation;
    s.log_scale = std::log(t.scale);
    return s;
}

RefineState perturb_state(const RefineState& s, const Vec3& omega, const Vec3& dt,
                          double dl) {
    RefineState out = s;
    out.rotation = rotation_exp(omega) * s.rotation;
    out.translation = s.translation + dt;
    out.log_scale = s.log_scale + dl;
    return out;
}

/// Problem built from the synthetic oracle; detections keep their
/// ground-truth marker ids.
RegistrationProblem problem_from_scene(const synth::SyntheticScene& scene,
                                       const synth::Observations& obs,
                                       bool estimate_scale = false) {
    RegistrationProblem problem;
    problem.images = obs.images;
    problem.markers = scene.markers;
    problem.registration_marker_ids = scene.registration_ids;
    problem.estimate_scale = estimate_scale;
    return problem;
}

synth::SceneSpec small_scene_spec() {
    synth::SceneSpec spec;
    spec.n_markers = 6;
    spec.n_control_markers = 2;
    spec.n_cameras = 4;
    spec.outline_points = 24;
    spec.image_width = 1920;
    spec.image_height = 1080;
    spec.focal_px = 1000.0;
    return spec;
}

}  // namespace

TEST_CASE("pnp_pose: self-consistency on random poses") {
    Rng rng(101);
    const CameraModel cam = test_camera();
    for (int trial = 0; trial < 10; ++trial) {
        // A camera 600 mm above the marker plane, looking down.
        const Vec3 omega(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                         rng.uniform(-3.0, 3.0));
        RigidTransform pose{rotation_exp(omega), Vec3(rng.uniform(-30, 30),
                                                      rng.uniform(-30, 30),
                                                      rng.uniform(500, 800))};
        std::vector<Vec3> pts3d = {{-100, -80, 0}, {120, -90, 0}, {110, 95, 0}, {-90, 100, 0}};
        std::vector<Vec2> pts2d;
        for (const auto& x : pts3d) pts2d.push_back(project_point_pinhole(cam, pose, x));

        double rms = 0.0;
        const RigidTransform recovered = pnp_pose(pts2d, pts3d, cam, &rms);
        CHECK(rotation_angle_between(recovered.rotation, pose.rotation) <= 1e-6);
        CHECK((recovered.translation - pose.translation).norm() <= 1e-4);
        CHECK(rms <= 1e-6);
    }
}

TEST_CASE("pnp_pose: square at z = 1000 recovers the identity") {
    const CameraModel cam = test_camera();
    const RigidTransform identity = RigidTransform::identity();
    std::vector<Vec3> pts3d = {{-100, -100, 1000}, {100, -100, 1000},
                               {100, 100, 1000}, {-100, 100, 1000}};
    std::vector<Vec2> pts2d;
    for (const auto& x : pts3d) pts2d.push_back(project_point_pinhole(cam, identity, x));
    const RigidTransform recovered = pnp_pose(pts2d, pts3d, cam);
    CHECK(rotation_angle_between(recovered.rotation, Mat3::Identity()) <= 1e-6);
    CHECK(recovered.translation.norm() <= 1e-4);
}

TEST_CASE("pnp_pose: non-planar points") {
    Rng rng(55);
    const CameraModel cam = test_camera();
    const RigidTransform pose{rotation_exp(Vec3(0.1, -0.2, 0.5)), Vec3(10, -20, 700)};
    std::vector<Vec3> pts3d;
    for (int i = 0; i < 8; ++i) {
        pts3d.emplace_back(rng.uniform(-150, 150), rng.uniform(-150, 150),
                           rng.uniform(-80, 80));
    }
    std::vector<Vec2> pts2d;
    for (const auto& x : pts3d) pts2d.push_back(project_point_pinhole(cam, pose, x));
    const RigidTransform recovered = pnp_pose(pts2d, pts3d, cam);
    CHECK(rotation_angle_between(recovered.rotation, pose.rotation) <= 1e-6);
    CHECK((recovered.translation - pose.translation).norm() <= 1e-4);
}

TEST_CASE("pnp_pose: collinear points are degenerate") {
    const CameraModel cam = test_camera();
    std::vector<Vec3> pts3d = {{0, 0, 0}, {10, 0, 0}, {20, 0, 0}, {30, 0, 0}};
    std::vector<Vec2> pts2d = {{100, 100}, {110, 100}, {120, 100}, {130, 100}};
    CHECK_THROWS_AS(pnp_pose(pts2d, pts3d, cam), Error);
    try {
        pnp_pose(pts2d, pts3d, cam);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::PnpDegenerate);
    }
}

TEST_CASE("match_markers: noiseless bijection") {
    const auto scene = synth::generate_scene(
        [] {
            auto s = small_scene_spec();
            s.n_markers = 10;
            s.n_control_markers = 0;
            s.n_cameras = 4;
            return s;
        }(),
        21);
    const auto obs = synth::render_observations(scene);

    // Strip the ground-truth labels before matching.
    PosedImage image = obs.images.front();
    REQUIRE(image.detections.size() == 10);
    std::map<int, int> truth;  // detection index -> true marker id
    for (std::size_t i = 0; i < image.detections.size(); ++i) {
        truth[static_cast<int>(i)] = image.detections[i].marker_id;
        image.detections[i].marker_id = -1;
    }

    const MatchResult result = match_markers(image, scene.markers);
    // Ellipse centers sit slightly off the projected sphere centers (the
    // eccentricity offset of the conic), so even noiseless PnP on centers
    // carries a small bias; the conic refinement removes it downstream.
    CHECK(result.mean_reproj_px <= 0.05);
    REQUIRE(result.detection_to_marker.size() == 10);
    for (const auto& [det_idx, marker_id] : result.detection_to_marker) {
        CHECK(truth.at(det_idx) == marker_id);
    }

    // The implied initial transform reproduces the ground truth to within
    // the same center-offset bias.
    CHECK(rotation_angle_between(result.initial_transform.rotation,
                                 scene.ground_truth_transform.rigid.rotation) <= 1e-3);
    CHECK((result.initial_transform.translation -
           scene.ground_truth_transform.rigid.translation)
              .norm() <= 1.0);
}

TEST_CASE("match_markers: 1 px noise still matches; permutation invariant") {
    auto spec = small_scene_spec();
    spec.n_markers = 10;
    spec.n_control_markers = 0;
    spec.n_cameras = 4;
    spec.noise.outline_noise_sigma = 1.0;
    const auto scene = synth::generate_scene(spec, 33);
    const auto obs = synth::render_observations(scene);

    PosedImage image = obs.images.front();
    REQUIRE(image.detections.size() >= 4);
    std::map<std::pair<double, double>, int> truth_by_center;
    for (auto& det : image.detections) {
        truth_by_center[{det.ellipse.center.x(), det.ellipse.center.y()}] = det.marker_id;
        det.marker_id = -1;
    }

    const MatchResult result = match_markers(image, scene.markers);
    CHECK(result.mean_reproj_px <= 3.0);
    for (const auto& [det_idx, marker_id] : result.detection_to_marker) {
        const auto& c = image.detections[det_idx].ellipse.center;
        CHECK(truth_by_center.at({c.x(), c.y()}) == marker_id);
    }

    // Shuffling the detection order changes nothing.
    PosedImage shuffled = image;
    std::reverse(shuffled.detections.begin(), shuffled.detections.end());
    const MatchResult again = match_markers(shuffled, scene.markers);
    std::map<std::pair<double, double>, int> map_a, map_b;
    for (const auto& [di, mid] : result.detection_to_marker) {
        const auto& c = image.detections[di].ellipse.center;
        map_a[{c.x(), c.y()}] = mid;
    }
    for (const auto& [di, mid] : again.detection_to_marker) {
        const auto& c = shuffled.detections[di].ellipse.center;
        map_b[{c.x(), c.y()}] = mid;
    }
    CHECK(map_a == map_b);
}

TEST_CASE("match_markers: fewer than 4 detections is a precondition violation") {
    const auto scene = synth::generate_scene(small_scene_spec(), 3);
    const auto obs = synth::render_observations(scene);
    PosedImage image = obs.images.front();
    image.detections.resize(3);
    CHECK_THROWS_AS(match_markers(image, scene.markers), Error);
}

TEST_CASE("refine_registration: noiseless recovery from a perturbed init") {
    auto spec = synth::SceneSpec{};
    spec.n_markers = 10;
    spec.n_control_markers = 2;
    spec.n_cameras = 16;
    spec.outline_points = 200;
    const auto scene = synth::generate_scene(spec, 7);
    const auto obs = synth::render_observations(scene);
    const auto problem = problem_from_scene(scene, obs);

    SimilarityTransform init = scene.ground_truth_transform;
    init.rigid.rotation = rotation_exp(Vec3(0.05, -0.04, 0.055)) * init.rigid.rotation;
    init.rigid.translation += Vec3(12.0, -9.0, 13.0);

    const RegistrationSolution solution = refine_registration(problem, init);
    CHECK(solution.converged);
    CHECK(rotation_angle_between(solution.transform.rigid.rotation,
                                 scene.ground_truth_transform.rigid.rotation) <= 1e-6);
    CHECK((solution.transform.rigid.translation -
           scene.ground_truth_transform.rigid.translation)
              .norm() <= 1e-4);
    CHECK(solution.final_cost <= 1e-16);
    CHECK(solution.transform.scale == 1.0);
}

TEST_CASE("refine_registration: ground-truth init is a fixed point") {
    auto spec = small_scene_spec();
    spec.outline_points = 50;
    const auto scene = synth::generate_scene(spec, 13);
    const auto obs = synth::render_observations(scene);
    const auto problem = problem_from_scene(scene, obs);

    const RegistrationSolution solution =
        refine_registration(problem, scene.ground_truth_transform);
    CHECK(solution.converged);
    CHECK(solution.iterations <= 2);
    // Matrix-norm comparison: acos-based angles cannot resolve below ~1e-8.
    CHECK((solution.transform.rigid.rotation -
           scene.ground_truth_transform.rigid.rotation)
              .norm() <= 1e-9);

    // Cost at ground truth is below 1e-18 per residual.
    const auto residuals =
        registration_residuals(problem, state_from(scene.ground_truth_transform));
    CHECK(residuals.squaredNorm() / residuals.size() <= 1e-18);
}

TEST_CASE("refine_registration: joint scale recovery") {
    auto spec = synth::SceneSpec{};
    spec.n_markers = 10;
    spec.n_control_markers = 0;
    spec.n_cameras = 8;
    spec.outline_points = 60;
    const auto scene = synth::generate_scene(spec, 29);
    auto obs = synth::render_observations(scene);

    const double pre_scale = 0.731;
    for (auto& image : obs.images) {
        image.pose_world_to_cam.translation *= pre_scale;
    }
    auto problem = problem_from_scene(scene, obs, /*estimate_scale=*/true);

    SimilarityTransform init;
    init.rigid.rotation =
        rotation_exp(Vec3(0.03, 0.02, -0.04)) * scene.ground_truth_transform.rigid.rotation;
    init.rigid.translation =
        pre_scale * scene.ground_truth_transform.rigid.translation + Vec3(8.0, -6.0, 5.0);
    init.scale = pre_scale * 1.05;

    const RegistrationSolution solution = refine_registration(problem, init);
    CHECK(solution.converged);
    CHECK(std::abs(solution.transform.scale / pre_scale - 1.0) <= 1e-6);

    // Scale/rigid separability: on unit-scale data the estimated scale
    // converges to 1 and the rigid part matches the scale-off solve.
    auto unit_problem = problem_from_scene(scene, obs, false);
    for (std::size_t i = 0; i < unit_problem.images.size(); ++i) {
        unit_problem.images[i].pose_world_to_cam.translation /= pre_scale;
    }
    SimilarityTransform unit_init = scene.ground_truth_transform;
    unit_init.rigid.translation += Vec3(5.0, 4.0, -6.0);
    const RegistrationSolution rigid_only = refine_registration(unit_problem, unit_init);

    unit_problem.estimate_scale = true;
    const RegistrationSolution with_scale = refine_registration(unit_problem, unit_init);
    CHECK(std::abs(with_scale.transform.scale - 1.0) <= 1e-8);
    CHECK((with_scale.transform.rigid.translation -
           rigid_only.transform.rigid.translation)
              .norm() <= 1e-8);
}

TEST_CASE("registration_residuals: analytic Jacobian matches central differences") {
    auto spec = small_scene_spec();
    spec.n_cameras = 3;
    spec.outline_points = 8;
    const auto scene = synth::generate_scene(spec, 47);
    const auto obs = synth::render_observations(scene);
    auto problem = problem_from_scene(scene, obs, /*estimate_scale=*/true);

    Rng rng(404);
    const double h = 1e-6;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        RefineState state = state_from(scene.ground_truth_transform);
        state = perturb_state(state,
                              Vec3(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1),
                                   rng.uniform(-0.1, 0.1)),
                              Vec3(rng.uniform(-30, 30), rng.uniform(-30, 30),
                                   rng.uniform(-30, 30)),
                              rng.uniform(-0.2, 0.2));

        Eigen::MatrixXd jac;
        const Eigen::VectorXd r0 = registration_residuals(problem, state, &jac);
        const int n_params = 7;
        Eigen::MatrixXd fd(r0.size(), n_params);
        for (int p = 0; p < n_params; ++p) {
            Vec3 omega = Vec3::Zero(), dt = Vec3::Zero();
            double dl = 0.0;
            if (p < 3) omega(p) = h;
            else if (p < 6) dt(p - 3) = h;
            else dl = h;
            const Eigen::VectorXd plus =
                registration_residuals(problem, perturb_state(state, omega, dt, dl));
            const Eigen::VectorXd minus =
                registration_residuals(problem, perturb_state(state, -omega, -dt, -dl));
            fd.col(p) = (plus - minus) / (2.0 * h);
        }
        // Deviation per parameter, relative to that parameter's gradient
        // scale. Central differences with h = 1e-6 carry an absolute noise
        // floor of ~1e-16 / h, so entries far below the column scale cannot
        // be compared entry-wise at 1e-5.
        for (int p = 0; p < n_params; ++p) {
            const double scale_p = fd.col(p).cwiseAbs().maxCoeff();
            const double dev = (jac.col(p) - fd.col(p)).cwiseAbs().maxCoeff();
            worst = std::max(worst, dev / std::max(scale_p, 1e-300));
        }
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("gauge consistency: rigid world change leaves camera-frame markers fixed") {
    auto spec = small_scene_spec();
    spec.outline_points = 40;
    const auto scene = synth::generate_scene(spec, 61);
    const auto obs = synth::render_observations(scene);
    const auto problem = problem_from_scene(scene, obs);

    SimilarityTransform init = scene.ground_truth_transform;
    init.rigid.rotation = rotation_exp(Vec3(0.02, -0.03, 0.01)) * init.rigid.rotation;
    init.rigid.translation += Vec3(6.0, -7.0, 9.0);
    const RegistrationSolution base = refine_registration(problem, init);

    const RigidTransform g{rotation_exp(Vec3(0.8, -0.3, 1.1)), Vec3(120.0, -60.0, 200.0)};
    RegistrationProblem moved = problem;
    for (auto& image : moved.images) {
        image.pose_world_to_cam = compose(image.pose_world_to_cam, g.inverse());
    }
    SimilarityTransform moved_init;
    moved_init.rigid = compose(g, init.rigid);
    moved_init.scale = init.scale;
    const RegistrationSolution shifted = refine_registration(moved, moved_init);

    for (std::size_t i = 0; i < problem.images.size(); ++i) {
        for (const auto& marker : problem.markers) {
            const Vec3 cam_a = problem.images[i].pose_world_to_cam.apply(
                base.transform.apply(marker.center));
            const Vec3 cam_b = moved.images[i].pose_world_to_cam.apply(
                shifted.transform.apply(marker.center));
            CHECK((cam_a - cam_b).norm() <= 1e-9);
        }
    }
}

TEST_CASE("evaluate_registration: zero errors on the perfect solution") {
    auto spec = small_scene_spec();
    spec.outline_points = 60;
    const auto scene = synth::generate_scene(spec, 71);
    const auto obs = synth::render_observations(scene);
    const auto problem = problem_from_scene(scene, obs);

    RegistrationSolution solution;
    solution.transform = scene.ground_truth_transform;
    solution.converged = true;

    const EvaluationReport report =
        evaluate_registration(problem, scene.control_ids, solution, "robot");
    CHECK(report.mean_radial_error_mm <= 1e-6);
    CHECK(report.mean_reproj_error_px <= 1e-6);
    CHECK(report.pose_source == "robot");
    REQUIRE(report.per_marker.size() == scene.control_ids.size());

    // Means are arithmetic means of the per-sample values.
    double weighted = 0.0;
    std::size_t n = 0;
    for (const auto& pm : report.per_marker) {
        weighted += pm.mean_radial_error_mm * pm.n_radial_samples;
        n += pm.n_radial_samples;
    }
    CHECK(report.mean_radial_error_mm == doctest::Approx(weighted / n).epsilon(1e-12));

    CHECK_THROWS_AS(evaluate_registration(problem, {999}, solution, "robot"), Error);
}

TEST_CASE("evaluate_registration: axial translation against a brute-force ray oracle") {
    // Single on-axis marker, camera at the origin looking down +z.
    CameraModel cam = test_camera();
    const RigidTransform pose = RigidTransform::identity();
    const SphereMarker marker{0, Vec3(0, 0, 500), 15.0};

    const ProjectionMatrix proj = ProjectionMatrix::from_camera(cam, pose);
    const Ellipse outline = conic_to_ellipse(project_sphere(proj, marker));

    PosedImage image;
    image.image_id = 0;
    image.camera = cam;
    image.pose_world_to_cam = pose;
    detect::EllipseDetection det;
    det.image_id = 0;
    det.marker_id = 0;
    det.ellipse = outline;
    det.outline_points = detect::sample_outline(outline, 360);
    image.detections.push_back(det);

    RegistrationProblem problem;
    problem.images.push_back(image);
    problem.markers = {marker, {1, Vec3(100, 0, 500), 15.0},
                       {2, Vec3(0, 100, 500), 15.0}, {3, Vec3(-100, 0, 500), 15.0}};

    RegistrationSolution solution;
    solution.transform = SimilarityTransform::identity();
    solution.transform.rigid.translation = Vec3(0, 0, 1.0);  // 1 mm along the axis
    solution.converged = true;

    const EvaluationReport report = evaluate_registration(problem, {0}, solution, "robot");

    // Brute-force oracle: rays recomputed from first principles.
    double oracle_sum = 0.0;
    const Vec3 shifted_center = marker.center + Vec3(0, 0, 1.0);
    for (const auto& px : det.outline_points) {
        const Vec3 dir =
            Vec3((px.x() - cam.cx) / cam.fx, (px.y() - cam.cy) / cam.fy, 1.0).normalized();
        oracle_sum += std::abs((shifted_center.cross(dir)).norm() - marker.radius);
    }
    const double oracle = oracle_sum / det.outline_points.size();
    CHECK(report.mean_radial_error_mm == doctest::Approx(oracle).epsilon(1e-9));

    // Bounded by the tangency change of a 1 mm axial shift: sin(theta) = r/d.
    CHECK(report.mean_radial_error_mm <= 1.0 * (marker.radius / 500.0) + 1e-9);
    CHECK(report.mean_radial_error_mm > 0.0);
}

TEST_CASE("poses_from_forward_kinematics") {
    Rng rng(88);
    std::vector<RigidTransform> t_ee_b;
    for (int i = 0; i < 5; ++i) {
        t_ee_b.push_back({rotation_exp(Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1),
                                            rng.uniform(-1, 1))),
                          Vec3(rng.uniform(-500, 500), rng.uniform(-500, 500),
                               rng.uniform(-500, 500))});
    }

    // Identity hand-eye: camera poses equal the end-effector poses.
    const auto identity_case =
        poses_from_forward_kinematics(t_ee_b, RigidTransform::identity());
    for (std::size_t i = 0; i < t_ee_b.size(); ++i) {
        const RigidTransform back = identity_case[i].inverse();
        CHECK((back.matrix() - t_ee_b[i].matrix()).norm() <= 1e-9);
    }

    // Algebraic round trip: (T_C^B) (T_C^EE)^-1 = T_EE^B.
    const RigidTransform t_c_ee{rotation_exp(Vec3(0.2, 0.1, -0.4)), Vec3(0, 0, 50)};
    const auto world_to_cam = poses_from_forward_kinematics(t_ee_b, t_c_ee);
    for (std::size_t i = 0; i < t_ee_b.size(); ++i) {
        const RigidTransform t_c_b = world_to_cam[i].inverse();
        const RigidTransform recovered = compose(t_c_b, t_c_ee.inverse());
        CHECK((recovered.matrix() - t_ee_b[i].matrix()).norm() <= 1e-9);
    }

    // Hand-computed single pose matches the compose example.
    const RigidTransform ee{rotation_exp(Vec3(0, 0, M_PI / 2.0)), Vec3(100, 0, 0)};
    const auto one = poses_from_forward_kinematics({ee}, {Mat3::Identity(), Vec3(0, 0, 50)});
    const RigidTransform cam_to_base = one[0].inverse();
    CHECK((cam_to_base.translation - Vec3(100, 0, 50)).norm() <= 1e-9);
}

TEST_CASE("RegistrationProblem validation") {
    RegistrationProblem problem;
    problem.markers = {{0, Vec3(0, 0, 0), 15.0}, {1, Vec3(60, 0, 0), 15.0},
                       {2, Vec3(0, 60, 0), 15.0}, {3, Vec3(60, 60, 0), 15.0}};
    PosedImage image;
    image.image_id = 0;
    image.camera = test_camera();
    detect::EllipseDetection d;
    d.marker_id = 1;
    image.detections = {d, d};  // duplicate marker id
    problem.images.push_back(image);
    CHECK_THROWS_AS(problem.validate(), Error);
}
