#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>

#include "spherereg/detect.hpp"
#include "spherereg/log.hpp"
#include "spherereg/mesh.hpp"
#include "spherereg/pipeline.hpp"
#include "spherereg/registration.hpp"
#include "spherereg/synth.hpp"
#include "spherereg/threading.hpp"

namespace spherereg::pipeline {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Basic JSON plumbing
// ---------------------------------------------------------------------------

void write_file_atomic(const std::string& path, const std::string& contents) {
    const fs::path target(path);
    const fs::path dir = target.has_parent_path() ? target.parent_path() : fs::path(".");
    fs::create_directories(dir);
    const fs::path tmp = dir / (target.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) raise(ErrorCode::Io, "cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) raise(ErrorCode::Io, "write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) raise(ErrorCode::Io, "rename failed for " + path + ": " + ec.message());
}

Json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::Io, "cannot open " + path);
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::ParseError, path + ": " + e.what());
    }
}

namespace {

Json vec3_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from(const Json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 3) raise(ErrorCode::ParseError, what + ": expected [x,y,z]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Json rotation_json(const Mat3& r) {
    Json out = Json::array();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out.push_back(r(i, j));
    return out;
}

Mat3 rotation_from(const Json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 9) {
        raise(ErrorCode::ParseError, what + ": expected 9 row-major rotation entries");
    }
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) r(i, k) = j[3 * i + k].get<double>();
    return r;
}

Json transform_json(const RigidTransform& t) {
    return Json{{"rotation", rotation_json(t.rotation)},
                {"translation", vec3_json(t.translation)}};
}

RigidTransform transform_from(const Json& j, const std::string& what) {
    RigidTransform t;
    t.rotation = rotation_from(j.at("rotation"), what);
    t.translation = vec3_from(j.at("translation"), what);
    require(t.is_valid(1e-6), what + ": rotation is not orthonormal");
    // Re-orthonormalize so downstream invariants hold to full precision.
    t.rotation = orthonormalize_rotation(t.rotation);
    return t;
}

Json similarity_json(const SimilarityTransform& t) {
    Json out = transform_json(t.rigid);
    out["scale"] = t.scale;
    return out;
}

SimilarityTransform similarity_from(const Json& j, const std::string& what) {
    SimilarityTransform t;
    t.rigid = transform_from(j, what);
    t.scale = j.value("scale", 1.0);
    require(t.scale > 0.0, what + ": scale must be positive");
    return t;
}

Json camera_json(const CameraModel& cam) {
    return Json{{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx}, {"cy", cam.cy},
                {"k1", cam.k1}, {"k2", cam.k2}, {"p1", cam.p1}, {"p2", cam.p2},
                {"width", cam.width}, {"height", cam.height}};
}

CameraModel camera_from(const Json& j) {
    CameraModel cam;
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.k1 = j.value("k1", 0.0);
    cam.k2 = j.value("k2", 0.0);
    cam.p1 = j.value("p1", 0.0);
    cam.p2 = j.value("p2", 0.0);
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    cam.validate();
    return cam;
}

Json detection_json(const detect::EllipseDetection& d) {
    Json outline = Json::array();
    for (const auto& p : d.outline_points) outline.push_back(Json::array({p.x(), p.y()}));
    return Json{{"image_id", d.image_id},
                {"marker_id", d.marker_id},
                {"ellipse",
                 Json{{"cx", d.ellipse.center.x()},
                      {"cy", d.ellipse.center.y()},
                      {"a", d.ellipse.a},
                      {"b", d.ellipse.b},
                      {"theta", d.ellipse.theta}}},
                {"outline", outline},
                {"inlier_ratio", d.fit_inlier_ratio}};
}

detect::EllipseDetection detection_from(const Json& j) {
    detect::EllipseDetection d;
    d.image_id = j.at("image_id").get<int>();
    d.marker_id = j.at("marker_id").get<int>();
    const Json& e = j.at("ellipse");
    d.ellipse.center = {e.at("cx").get<double>(), e.at("cy").get<double>()};
    d.ellipse.a = e.at("a").get<double>();
    d.ellipse.b = e.at("b").get<double>();
    d.ellipse.theta = e.at("theta").get<double>();
    for (const auto& p : j.at("outline")) {
        d.outline_points.emplace_back(p[0].get<double>(), p[1].get<double>());
    }
    d.fit_inlier_ratio = j.value("inlier_ratio", 1.0);
    return d;
}

Json marker_json(const SphereMarker& m) {
    return Json{{"id", m.id}, {"center_S", vec3_json(m.center)}, {"radius", m.radius}};
}

SphereMarker marker_from(const Json& j) {
    SphereMarker m;
    m.id = j.at("id").get<int>();
    m.center = vec3_from(j.at("center_S"), "marker center_S");
    m.radius = j.at("radius").get<double>();
    require(m.radius > 0.0, "marker radius must be positive");
    return m;
}

Json evaluation_json(const reg::EvaluationReport& report) {
    Json per_marker = Json::array();
    for (const auto& pm : report.per_marker) {
        per_marker.push_back(Json{{"marker_id", pm.marker_id},
                                  {"mean_radial_error_mm", pm.mean_radial_error_mm},
                                  {"mean_reproj_error_px", pm.mean_reproj_error_px},
                                  {"n_radial_samples", pm.n_radial_samples},
                                  {"n_images", pm.n_images}});
    }
    return Json{{"pose_source", report.pose_source},
                {"mean_radial_error_mm", report.mean_radial_error_mm},
                {"mean_reproj_error_px", report.mean_reproj_error_px},
                {"per_marker", per_marker}};
}

std::string resolve_path(const Json& config, const char* key) {
    require(config.contains(key), std::string("config missing '") + key + "'");
    return config.at(key).get<std::string>();
}

// ---------------------------------------------------------------------------
// Shared input loading for register / evaluate
// ---------------------------------------------------------------------------

struct ProblemInputs {
    CameraModel camera;
    std::map<int, CameraModel> per_image_camera;
    std::map<int, RigidTransform> poses;  // image_id -> world-to-cam
    std::vector<detect::EllipseDetection> detections;
    std::vector<SphereMarker> markers;
    std::vector<int> registration_ids;
    std::vector<int> control_ids;
    bool estimate_scale = false;
    bool trust_correspondences = false;
    std::optional<int> init_image;
    std::string pose_source = "robot";
    reg::SolverConfig solver;
};

ProblemInputs load_problem_inputs(const Json& config) {
    ProblemInputs in;

    const Json cameras = load_json_file(resolve_path(config, "cameras"));
    require(cameras.contains("camera") || cameras.contains("cameras"),
            "cameras file needs 'camera' or 'cameras'");
    if (cameras.contains("camera")) in.camera = camera_from(cameras.at("camera"));
    if (cameras.contains("cameras")) {
        for (const auto& [key, value] : cameras.at("cameras").items()) {
            in.per_image_camera[std::stoi(key)] = camera_from(value);
        }
        if (!cameras.contains("camera")) in.camera = in.per_image_camera.begin()->second;
    }

    const Json poses = load_json_file(resolve_path(config, "poses"));
    const std::string type = poses.value("type", "world_to_cam");
    if (type == "world_to_cam") {
        for (const auto& entry : poses.at("poses")) {
            in.poses[entry.at("image_id").get<int>()] =
                transform_from(entry, "pose");
        }
    } else if (type == "robot_fk") {
        const RigidTransform t_c_ee = transform_from(poses.at("t_c_ee"), "t_c_ee");
        std::vector<int> ids;
        std::vector<RigidTransform> t_ee_b;
        for (const auto& entry : poses.at("t_ee_b")) {
            ids.push_back(entry.at("image_id").get<int>());
            t_ee_b.push_back(transform_from(entry, "t_ee_b"));
        }
        const auto world_to_cam = reg::poses_from_forward_kinematics(t_ee_b, t_c_ee);
        for (std::size_t i = 0; i < ids.size(); ++i) in.poses[ids[i]] = world_to_cam[i];
    } else {
        raise(ErrorCode::ParseError, "poses type must be world_to_cam or robot_fk");
    }

    const Json detections = load_json_file(resolve_path(config, "detections"));
    for (const auto& d : detections.at("detections")) {
        in.detections.push_back(detection_from(d));
    }

    const Json markers = load_json_file(resolve_path(config, "markers"));
    for (const auto& m : markers.at("markers")) in.markers.push_back(marker_from(m));

    if (config.contains("registration_marker_ids")) {
        for (const auto& id : config.at("registration_marker_ids")) {
            in.registration_ids.push_back(id.get<int>());
        }
    }
    if (config.contains("control_marker_ids")) {
        for (const auto& id : config.at("control_marker_ids")) {
            in.control_ids.push_back(id.get<int>());
        }
    }
    for (int control : in.control_ids) {
        require(std::find(in.registration_ids.begin(), in.registration_ids.end(),
                          control) == in.registration_ids.end(),
                "registration and control marker ids must be disjoint");
    }

    in.estimate_scale = config.value("estimate_scale", false);
    in.trust_correspondences = config.value("trust_correspondences", false);
    if (config.contains("init_image") && !config.at("init_image").is_null()) {
        in.init_image = config.at("init_image").get<int>();
    }
    in.pose_source = config.value("pose_source", "robot");
    if (config.contains("solver")) {
        const Json& s = config.at("solver");
        in.solver.max_iterations = s.value("max_iterations", 200);
        in.solver.lambda_init = s.value("lambda_init", 1e-3);
        in.solver.gradient_tol = s.value("gradient_tol", 1e-10);
        in.solver.step_tol = s.value("step_tol", 1e-12);
        in.solver.huber_delta = s.value("huber_delta", 0.0);
    }
    in.solver.threads = config.value("threads", 1);
    return in;
}

std::vector<reg::PosedImage> build_images(const ProblemInputs& in) {
    std::map<int, reg::PosedImage> by_id;
    for (const auto& [image_id, pose] : in.poses) {
        reg::PosedImage image;
        image.image_id = image_id;
        const auto cam_it = in.per_image_camera.find(image_id);
        image.camera = cam_it != in.per_image_camera.end() ? cam_it->second : in.camera;
        image.pose_world_to_cam = pose;
        by_id.emplace(image_id, std::move(image));
    }
    for (const auto& d : in.detections) {
        const auto it = by_id.find(d.image_id);
        require(it != by_id.end(),
                "detection references image " + std::to_string(d.image_id) +
                    " without a pose");
        it->second.detections.push_back(d);
    }
    std::vector<reg::PosedImage> images;
    for (auto& [id, image] : by_id) {
        if (!image.detections.empty()) images.push_back(std::move(image));
    }
    return images;
}

}  // namespace

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

Json run_detect(const Json& config) {
    detect::DetectParams params;
    if (config.contains("params")) {
        const Json& p = config.at("params");
        params.outline_points = p.value("outline_points", 200);
        params.envelope_width = p.value("envelope_width", 10.0);
        params.ransac_threshold = p.value("ransac_threshold", 1.0);
        params.ransac_iterations = p.value("ransac_iterations", 2000);
        params.n_starts = p.value("n_starts", 8);
        if (p.contains("canny")) {
            params.canny.gaussian_sigma = p.at("canny").value("sigma", 1.0);
            params.canny.low_threshold_ratio = p.at("canny").value("low", 0.1);
            params.canny.high_threshold_ratio = p.at("canny").value("high", 0.3);
        }
    }
    const std::uint64_t seed = config.value("seed", 0ULL);
    const int threads = config.value("threads", 1);
    const Rng base(seed);

    Json detections = Json::array();
    Json failures = Json::array();

    for (const auto& image_entry : config.at("images")) {
        const int image_id = image_entry.at("image_id").get<int>();
        ImageF image;
        try {
            image = load_image_gray(image_entry.at("path").get<std::string>());
        } catch (const Error& e) {
            failures.push_back(Json{{"image_id", image_id},
                                    {"marker_id", nullptr},
                                    {"error", e.what()}});
            continue;
        }

        // Per-marker detections are independent; run them concurrently with
        // pre-allocated result slots so the output order stays fixed.
        const auto& marker_entries = image_entry.at("markers");
        struct Slot {
            bool ok = false;
            int marker_id = 0;
            detect::EllipseDetection detection;
            std::string error;
        };
        std::vector<Slot> slots(marker_entries.size());

        parallel_for(marker_entries.size(), threads, [&](std::size_t t) {
            const auto& marker_entry = marker_entries[t];
            Slot& slot = slots[t];
            slot.marker_id = marker_entry.at("marker_id").get<int>();
            try {
                Vec2 origin = Vec2::Zero();
                if (marker_entry.contains("origin")) {
                    origin = {marker_entry.at("origin")[0].get<double>(),
                              marker_entry.at("origin")[1].get<double>()};
                }
                detect::DetectionMask aggregated;
                if (marker_entry.contains("masks")) {
                    const auto& paths = marker_entry.at("masks");
                    require(paths.size() == 3, "expected three channel masks");
                    const auto r = detect::mask_from_image(
                        load_image_u8(paths[0].get<std::string>()), origin);
                    const auto g = detect::mask_from_image(
                        load_image_u8(paths[1].get<std::string>()), origin);
                    const auto b = detect::mask_from_image(
                        load_image_u8(paths[2].get<std::string>()), origin);
                    aggregated = detect::aggregate_masks(r, g, b);
                } else {
                    const auto m = detect::mask_from_image(
                        load_image_u8(marker_entry.at("mask").get<std::string>()), origin);
                    aggregated = detect::aggregate_masks(m, m, m);
                }
                const std::uint64_t det_seed =
                    base.fork(static_cast<std::uint64_t>(image_id))
                        .fork(static_cast<std::uint64_t>(slot.marker_id))
                        .next_u64();
                slot.detection = detect::detect_marker(image, aggregated, image_id,
                                                       slot.marker_id, params, det_seed);
                slot.ok = true;
            } catch (const Error& e) {
                slot.error = e.what();
            }
        });

        for (const auto& slot : slots) {
            if (slot.ok) {
                detections.push_back(detection_json(slot.detection));
            } else {
                failures.push_back(Json{{"image_id", image_id},
                                        {"marker_id", slot.marker_id},
                                        {"error", slot.error}});
            }
        }
    }
    return Json{{"detections", detections}, {"failures", failures}};
}

// ---------------------------------------------------------------------------
// fit-spheres
// ---------------------------------------------------------------------------

Json run_fit_spheres(const Json& config) {
    const auto scan = mesh::load_mesh(resolve_path(config, "mesh"));
    const double radius = config.at("radius").get<double>();
    const int max_iters = config.value("max_iters", 100);
    const double capture_band = config.value("capture_band", 0.2);

    Json markers = Json::array();
    for (const auto& entry : config.at("markers")) {
        const int id = entry.at("id").get<int>();
        const Vec3 init = vec3_from(entry.at("init_center"), "init_center");
        const auto fit = mesh::fit_sphere_icp(scan, radius, init, max_iters, capture_band);
        Json m = marker_json({id, fit.marker.center, fit.marker.radius});
        m["rms_residual"] = fit.rms_residual;
        m["n_support_vertices"] = fit.n_support_vertices;
        markers.push_back(std::move(m));
    }
    return Json{{"markers", markers}};
}

// ---------------------------------------------------------------------------
// register / evaluate
// ---------------------------------------------------------------------------

namespace {

struct MatchedProblem {
    reg::RegistrationProblem problem;
    SimilarityTransform init;
    Json match_info;
};

/// Per-image exhaustive matching, initialization (composition for rigid,
/// camera-center alignment for similarity), and projection-based assignment
/// for images the matcher could not handle.
MatchedProblem assemble_problem(const ProblemInputs& in) {
    MatchedProblem out;
    out.problem.markers = in.markers;
    out.problem.estimate_scale = in.estimate_scale;
    out.problem.registration_marker_ids = in.registration_ids;

    std::vector<reg::PosedImage> images = build_images(in);
    require(!images.empty(), "no posed images with detections");

    if (in.trust_correspondences) {
        out.problem.images = std::move(images);
        out.init = SimilarityTransform::identity();
        out.match_info = Json{{"mode", "trusted"}};
        // With trusted labels an initial transform must still be derived:
        // PnP on the init image using the labeled centers.
        const auto& pick = out.problem.images.front();
        std::vector<Vec2> pts2d;
        std::vector<Vec3> pts3d;
        for (const auto& d : pick.detections) {
            for (const auto& m : in.markers) {
                if (m.id == d.marker_id) {
                    pts2d.push_back(pick.camera.undistort_pixel(d.ellipse.center));
                    pts3d.push_back(m.center);
                }
            }
        }
        require(pts2d.size() >= 4, "trusted init image needs 4 labeled detections");
        const RigidTransform cam_from_scene =
            reg::pnp_pose(pts2d, pts3d, pick.camera, nullptr);
        out.init = SimilarityTransform::from_rigid(
            compose(pick.pose_world_to_cam.inverse(), cam_from_scene));
        return out;
    }

    // Choose the init image: configured id, else most detections (ties by id).
    int init_index = -1;
    if (in.init_image) {
        for (std::size_t i = 0; i < images.size(); ++i) {
            if (images[i].image_id == *in.init_image) init_index = static_cast<int>(i);
        }
        require(init_index >= 0, "configured init_image has no detections");
    } else {
        std::size_t best = 0;
        for (std::size_t i = 0; i < images.size(); ++i) {
            if (images[i].detections.size() > best) {
                best = images[i].detections.size();
                init_index = static_cast<int>(i);
            }
        }
    }
    require(init_index >= 0, "no image suitable for initialization");

    struct PerImageMatch {
        bool matched = false;
        reg::MatchResult result;
    };
    std::vector<PerImageMatch> matches(images.size());
    Json assignments = Json::object();

    // Exhaustive matching runs on the init image; the similarity init
    // additionally matches every image because the scale estimate aligns
    // per-image camera centers. Remaining images are assigned by projecting
    // the markers under the initial transform.
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].detections.size() < 4) continue;
        if (!in.estimate_scale && static_cast<int>(i) != init_index) continue;
        try {
            matches[i].result = reg::match_markers(images[i], in.markers, in.solver.threads);
            matches[i].matched = true;
        } catch (const Error& e) {
            if (static_cast<int>(i) == init_index) throw;
            log_warn("image " + std::to_string(images[i].image_id) +
                     ": match failed (" + e.what() + "), deferring to projection");
        }
    }
    require(matches[init_index].matched, "init image could not be matched");

    // Initial transform.
    if (in.estimate_scale) {
        // Similarity alignment of the per-image camera centers expressed in
        // S (from PnP) and in W (from the given poses) pins down the scale.
        std::vector<Vec3> src, dst;
        for (std::size_t i = 0; i < images.size(); ++i) {
            if (!matches[i].matched) continue;
            const auto& pose_s = matches[i].result.camera_from_scene;
            src.push_back(-(pose_s.rotation.transpose() * pose_s.translation));
            const auto& pose_w = images[i].pose_world_to_cam;
            dst.push_back(-(pose_w.rotation.transpose() * pose_w.translation));
        }
        if (src.size() >= 3) {
            Eigen::MatrixXd s(3, src.size()), d(3, dst.size());
            for (std::size_t i = 0; i < src.size(); ++i) {
                s.col(static_cast<Eigen::Index>(i)) = src[i];
                d.col(static_cast<Eigen::Index>(i)) = dst[i];
            }
            const Mat4 u = Eigen::umeyama(s, d, true);
            const Mat3 sr = u.topLeftCorner<3, 3>();
            const double scale = std::cbrt(sr.determinant());
            out.init.scale = scale;
            out.init.rigid.rotation = orthonormalize_rotation(sr / scale);
            out.init.rigid.translation = u.topRightCorner<3, 1>();
        } else {
            out.init = SimilarityTransform::from_rigid(
                matches[init_index].result.initial_transform);
        }
    } else {
        out.init =
            SimilarityTransform::from_rigid(matches[init_index].result.initial_transform);
    }

    // Relabel detections with matched marker ids; fall back to projecting
    // markers under the initial transform for unmatched images.
    for (std::size_t i = 0; i < images.size(); ++i) {
        auto& image = images[i];
        std::vector<detect::EllipseDetection> labeled;
        Json pairs = Json::array();
        if (matches[i].matched) {
            for (const auto& [det_idx, marker_id] : matches[i].result.detection_to_marker) {
                auto det = image.detections[det_idx];
                det.marker_id = marker_id;
                labeled.push_back(std::move(det));
                pairs.push_back(Json::array({det_idx, marker_id}));
            }
        } else {
            // Mutual-nearest assignment against projected centers.
            std::vector<Vec2> projected(in.markers.size());
            std::vector<bool> usable(in.markers.size(), false);
            for (std::size_t j = 0; j < in.markers.size(); ++j) {
                const Vec3 w = out.init.apply(in.markers[j].center);
                const Vec3 pc = image.pose_world_to_cam.apply(w);
                if (pc.z() <= 1e-9) continue;
                projected[j] = image.camera.normalized_to_pixel(
                    {pc.x() / pc.z(), pc.y() / pc.z()});
                usable[j] = true;
            }
            std::vector<bool> taken(in.markers.size(), false);
            for (std::size_t d = 0; d < image.detections.size(); ++d) {
                const Vec2 center =
                    image.camera.undistort_pixel(image.detections[d].ellipse.center);
                double best = 50.0;
                int best_j = -1;
                for (std::size_t j = 0; j < in.markers.size(); ++j) {
                    if (!usable[j] || taken[j]) continue;
                    const double dist = (center - projected[j]).norm();
                    if (dist < best) {
                        best = dist;
                        best_j = static_cast<int>(j);
                    }
                }
                if (best_j < 0) continue;
                taken[best_j] = true;
                auto det = image.detections[d];
                det.marker_id = in.markers[best_j].id;
                labeled.push_back(std::move(det));
                pairs.push_back(Json::array({d, in.markers[best_j].id}));
            }
        }
        std::sort(labeled.begin(), labeled.end(),
                  [](const auto& lhs, const auto& rhs) { return lhs.marker_id < rhs.marker_id; });
        image.detections = std::move(labeled);
        assignments[std::to_string(image.image_id)] = std::move(pairs);
    }

    out.problem.images = std::move(images);
    out.match_info = Json{{"mode", "matched"},
                          {"init_image", out.problem.images[init_index].image_id},
                          {"init_mean_reproj_px", matches[init_index].result.mean_reproj_px},
                          {"assignments", assignments}};
    return out;
}

}  // namespace

Json run_register(const Json& config) {
    const ProblemInputs in = load_problem_inputs(config);
    MatchedProblem matched = assemble_problem(in);

    const reg::RegistrationSolution solution =
        reg::refine_registration(matched.problem, matched.init, in.solver);

    Json out;
    out["transform"] = similarity_json(solution.transform);
    out["converged"] = solution.converged;
    out["iterations"] = solution.iterations;
    out["final_cost"] = solution.final_cost;
    out["cost_trace"] = solution.cost_trace;
    Json per_image = Json::array();
    for (const auto& [image_id, px] : solution.per_image_reproj_error) {
        per_image.push_back(Json{{"image_id", image_id}, {"px", px}});
    }
    out["per_image_reproj_error"] = per_image;
    out["match"] = matched.match_info;

    if (!in.control_ids.empty()) {
        try {
            const auto report = reg::evaluate_registration(matched.problem, in.control_ids,
                                                           solution, in.pose_source);
            out["evaluation"] = evaluation_json(report);
        } catch (const Error& e) {
            out["evaluation"] = nullptr;
            out["evaluation_error"] = e.what();
        }
    }
    return out;
}

Json run_evaluate(const Json& config) {
    const ProblemInputs in = load_problem_inputs(config);
    const Json solution_doc = load_json_file(resolve_path(config, "solution"));

    reg::RegistrationSolution solution;
    solution.transform = similarity_from(solution_doc.at("transform"), "solution transform");
    solution.converged = solution_doc.value("converged", true);

    reg::RegistrationProblem problem;
    problem.markers = in.markers;
    problem.estimate_scale = in.estimate_scale;
    problem.registration_marker_ids = in.registration_ids;
    problem.images = build_images(in);

    const auto report = reg::evaluate_registration(problem, in.control_ids, solution,
                                                   in.pose_source);
    return evaluation_json(report);
}

// ---------------------------------------------------------------------------
// chamfer
// ---------------------------------------------------------------------------

Json run_chamfer(const std::string& pred_path, const std::string& gt_path, double spacing,
                 double cutoff, std::uint64_t seed, int threads) {
    const auto pred = mesh::load_mesh(pred_path);
    const auto gt = mesh::load_mesh(gt_path);
    const auto report = mesh::chamfer_distance(pred, gt, spacing, cutoff, seed, threads);
    return Json{{"cd_mm", report.cd},
                {"mean_pred_to_gt_mm", report.mean_pred_to_gt},
                {"mean_gt_to_pred_mm", report.mean_gt_to_pred},
                {"outlier_fraction", report.outlier_fraction},
                {"sample_spacing_mm", report.sample_spacing}};
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

namespace {

synth::SceneSpec scene_spec_from(const Json& j) {
    synth::SceneSpec spec;
    spec.n_markers = j.value("n_markers", 10);
    spec.n_control_markers = j.value("n_control_markers", 2);
    spec.n_cameras = j.value("n_cameras", 16);
    spec.marker_radius = j.value("marker_radius", 15.0);
    spec.board_half_extent = j.value("board_half_extent", 200.0);
    spec.min_separation = j.value("min_separation", 60.0);
    spec.standoff_min = j.value("standoff_min", 400.0);
    spec.standoff_max = j.value("standoff_max", 800.0);
    spec.image_width = j.value("image_width", 9504);
    spec.image_height = j.value("image_height", 6336);
    spec.focal_px = j.value("focal_px", 4000.0);
    spec.with_distortion = j.value("with_distortion", true);
    spec.outline_points = j.value("outline_points", 200);
    if (j.contains("noise")) {
        const Json& n = j.at("noise");
        if (n.is_string() && n.get<std::string>() == "realistic") {
            spec.noise.outline_noise_sigma =
                synth::NoiseSpec::realistic_outline_sigma_px() *
                static_cast<double>(spec.image_width) / 9504.0;
        } else {
            spec.noise.outline_noise_sigma = n.value("outline_sigma_px", 0.0);
            spec.noise.pose_rotation_sigma = n.value("pose_rotation_sigma_rad", 0.0);
            spec.noise.pose_translation_sigma = n.value("pose_translation_sigma_mm", 0.0);
            spec.noise.vertex_noise_sigma = n.value("vertex_sigma_mm", 0.0);
            spec.noise.outlier_fraction = n.value("outlier_fraction", 0.0);
        }
    }
    return spec;
}

void save_pgm_atomic(const ImageU8& image, const std::string& path) {
    std::string buffer = "P5\n" + std::to_string(image.width) + " " +
                         std::to_string(image.height) + "\n255\n";
    buffer.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
    write_file_atomic(path, buffer);
}

}  // namespace

Json run_synth(const Json& config) {
    const std::string out_dir = resolve_path(config, "out_dir");
    const std::uint64_t seed = config.value("seed", 7ULL);
    const synth::SceneSpec spec =
        config.contains("scene") ? scene_spec_from(config.at("scene")) : synth::SceneSpec{};

    const bool emit_observations =
        !config.contains("emit") || config.at("emit").value("observations", true);
    const bool emit_images = config.contains("emit") && config.at("emit").value("images", false);
    const bool emit_scan_mesh =
        !config.contains("emit") || config.at("emit").value("scan_mesh", true);

    const auto scene = synth::generate_scene(spec, seed);
    fs::create_directories(out_dir);
    Json manifest;
    manifest["out_dir"] = out_dir;
    manifest["seed"] = seed;
    Json files = Json::object();

    // Cameras.
    {
        Json doc{{"camera", camera_json(scene.camera)}};
        write_file_atomic(out_dir + "/cameras.json", doc.dump(2) + "\n");
        files["cameras"] = "cameras.json";
    }

    // Ground truth.
    {
        Json doc;
        doc["transform"] = similarity_json(scene.ground_truth_transform);
        doc["registration_marker_ids"] = scene.registration_ids;
        doc["control_marker_ids"] = scene.control_ids;
        Json markers = Json::array();
        for (const auto& m : scene.markers) markers.push_back(marker_json(m));
        doc["markers"] = markers;
        write_file_atomic(out_dir + "/ground_truth.json", doc.dump(2) + "\n");
        files["ground_truth"] = "ground_truth.json";
    }

    // Markers as the register step consumes them (ground-truth centers; the
    // fit-spheres step reproduces these from the scan mesh).
    {
        Json markers = Json::array();
        for (const auto& m : scene.markers) markers.push_back(marker_json(m));
        write_file_atomic(out_dir + "/markers_gt.json",
                          Json{{"markers", markers}}.dump(2) + "\n");
        files["markers_gt"] = "markers_gt.json";
    }

    if (emit_observations) {
        const auto obs = synth::render_observations(scene);
        Json detections = Json::array();
        Json poses = Json::array();
        Json poses_true = Json::array();
        for (std::size_t i = 0; i < obs.images.size(); ++i) {
            const auto& image = obs.images[i];
            Json pose = transform_json(image.pose_world_to_cam);
            pose["image_id"] = image.image_id;
            poses.push_back(pose);
            Json tp = transform_json(obs.true_poses[i]);
            tp["image_id"] = image.image_id;
            poses_true.push_back(tp);
            for (const auto& det : image.detections) {
                detections.push_back(detection_json(det));
            }
        }
        write_file_atomic(out_dir + "/poses.json",
                          Json{{"type", "world_to_cam"}, {"poses", poses}}.dump(2) + "\n");
        write_file_atomic(out_dir + "/poses_true.json",
                          Json{{"type", "world_to_cam"}, {"poses", poses_true}}.dump(2) + "\n");
        write_file_atomic(out_dir + "/detections.json",
                          Json{{"detections", detections}, {"failures", Json::array()}}
                                  .dump(2) +
                              "\n");
        files["poses"] = "poses.json";
        files["poses_true"] = "poses_true.json";
        files["detections"] = "detections.json";
    }

    if (emit_scan_mesh) {
        const auto scan = synth::make_scan_mesh(scene);
        mesh::save_mesh(scan, out_dir + "/scan_mesh.ply");
        files["scan_mesh"] = "scan_mesh.ply";

        // Offset init centers mimic the manual picking of the sphere fits.
        Json inits = Json::array();
        Rng rng(seed ^ 0x696e6974ULL);
        for (const auto& m : scene.markers) {
            const Vec3 offset(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0),
                              rng.uniform(-3.0, 3.0));
            inits.push_back(Json{{"id", m.id}, {"init_center", vec3_json(m.center + offset)}});
        }
        Json doc{{"mesh", "scan_mesh.ply"}, {"radius", spec.marker_radius}, {"markers", inits}};
        write_file_atomic(out_dir + "/fit_spheres_config.json", doc.dump(2) + "\n");
        files["fit_spheres_config"] = "fit_spheres_config.json";
    }

    if (emit_images) {
        int width = spec.image_width, height = spec.image_height;
        if (config.at("emit").contains("resolution")) {
            width = config.at("emit").at("resolution")[0].get<int>();
            height = config.at("emit").at("resolution")[1].get<int>();
        }
        fs::create_directories(out_dir + "/images");
        fs::create_directories(out_dir + "/masks");
        Json image_entries = Json::array();
        for (int i = 0; i < spec.n_cameras; ++i) {
            const auto view = synth::render_sphere_image(scene, i, width, height);
            const std::string image_rel = "images/img_" + std::to_string(i) + ".pgm";
            save_pgm_atomic(view.image, out_dir + "/" + image_rel);
            Json marker_entries = Json::array();
            for (const auto& crop : view.masks) {
                const std::string mask_rel = "masks/mask_" + std::to_string(i) + "_" +
                                             std::to_string(crop.marker_id) + ".pgm";
                save_pgm_atomic(crop.mask, out_dir + "/" + mask_rel);
                marker_entries.push_back(Json{{"marker_id", crop.marker_id},
                                              {"mask", mask_rel},
                                              {"origin", Json::array({crop.x0, crop.y0})}});
            }
            image_entries.push_back(Json{{"image_id", i},
                                         {"path", image_rel},
                                         {"markers", marker_entries}});
        }
        Json doc{{"images", image_entries},
                 {"params", Json{{"outline_points", spec.outline_points}}},
                 {"seed", seed}};
        write_file_atomic(out_dir + "/detect_config.json", doc.dump(2) + "\n");
        files["detect_config"] = "detect_config.json";
        manifest["rendered_resolution"] = Json::array({width, height});
    }

    // A ready-to-run register config keeps the pipeline self-consistent.
    {
        Json doc{{"cameras", "cameras.json"},
                 {"poses", "poses.json"},
                 {"detections", "detections.json"},
                 {"markers", "markers_gt.json"},
                 {"registration_marker_ids", scene.registration_ids},
                 {"control_marker_ids", scene.control_ids},
                 {"estimate_scale", false},
                 {"pose_source", "robot"},
                 {"seed", seed}};
        write_file_atomic(out_dir + "/register_config.json", doc.dump(2) + "\n");
        files["register_config"] = "register_config.json";
    }

    manifest["files"] = files;
    Json summary;
    summary["n_markers"] = spec.n_markers;
    summary["n_control_markers"] = spec.n_control_markers;
    summary["n_cameras"] = spec.n_cameras;
    summary["transform"] = similarity_json(scene.ground_truth_transform);
    manifest["scene"] = summary;
    return manifest;
}

std::string format_report_row(const Json& evaluation) {
    char buffer[160];
    std::snprintf(buffer, sizeof buffer, "%-12s %24.6f %30.6f",
                  evaluation.value("pose_source", std::string("-")).c_str(),
                  evaluation.value("mean_radial_error_mm", 0.0),
                  evaluation.value("mean_reproj_error_px", 0.0));
    return std::string(buffer);
}

}  // namespace spherereg::pipeline
