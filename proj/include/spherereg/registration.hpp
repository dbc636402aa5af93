#pragma once

/**
 * @file registration.hpp
 * @brief Scene registration: PnP initialization with exhaustive marker
 *        matching, Levenberg-Marquardt refinement of the bilinear
 *        point-on-conic cost over all images, markers and outline points,
 *        and the radial / reprojection evaluation metrics.
 *
 * The unknown is the similarity transform T_S^W mapping the mesh frame S
 * into the world frame W of the posed cameras (scale fixed to 1 unless
 * jointly estimated for SfM poses). Camera poses are fixed inputs.
 */

#include <cstdint>
#include <string>
#include <vector>

#include "spherereg/detect.hpp"
#include "spherereg/geom.hpp"

namespace spherereg::reg {

/// One calibrated, posed image together with its per-marker detections.
/// Detection pixel coordinates are raw (distorted); undistortion happens
/// where residuals are evaluated.
struct PosedImage {
    int image_id = 0;
    CameraModel camera;
    RigidTransform pose_world_to_cam;
    std::vector<detect::EllipseDetection> detections;
};

struct RegistrationProblem {
    std::vector<PosedImage> images;
    std::vector<SphereMarker> markers;  // centers in frame S
    bool estimate_scale = false;
    /// Markers participating in the cost; empty means all. Held-out control
    /// markers are excluded by listing only the registration ids here.
    std::vector<int> registration_marker_ids;

    void validate() const;
    bool is_registration_marker(int marker_id) const;
};

struct SolverConfig {
    int max_iterations = 200;
    double lambda_init = 1e-3;
    double gradient_tol = 1e-10;   ///< infinity norm of J^T r
    double step_tol = 1e-12;
    double huber_delta = 0.0;      ///< 0 disables the robust loss
    int threads = 1;
};

struct RegistrationSolution {
    SimilarityTransform transform;  // T_S^W, scale = 1 when not estimated
    double final_cost = 0.0;
    std::vector<double> cost_trace;
    std::vector<std::pair<int, double>> per_image_reproj_error;  // (image_id, px)
    int iterations = 0;
    bool converged = false;
};

struct EvaluationReport {
    struct PerMarker {
        int marker_id = 0;
        double mean_radial_error_mm = 0.0;
        double mean_reproj_error_px = 0.0;
        std::size_t n_radial_samples = 0;
        std::size_t n_images = 0;
    };
    double mean_radial_error_mm = 0.0;
    double mean_reproj_error_px = 0.0;
    std::vector<PerMarker> per_marker;
    std::string pose_source;  // robot | sfm-low | sfm-mid | sfm-high
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Camera pose from n >= 4 undistorted 2D / 3D correspondences (world to
/// camera, so x_cam = R x + t). Handles coplanar points through a planar
/// (homography) branch; all branches finish with a Gauss-Newton polish of
/// the pixel reprojection error. Throws PnpDegenerate for collinear input.
RigidTransform pnp_pose(const std::vector<Vec2>& points2d, const std::vector<Vec3>& points3d,
                        const CameraModel& cam, double* reproj_rms = nullptr);

struct MatchResult {
    /// Pairs of (index into image.detections, marker id).
    std::vector<std::pair<int, int>> detection_to_marker;
    RigidTransform camera_from_scene;
    RigidTransform initial_transform;  // T_S^W
    double mean_reproj_px = 0.0;
};

/// Exhaustive correspondence search: solves PnP for every combination of
/// four detected ellipse centers paired with four of the M sphere centers,
/// scores each hypothesis by the mean distance of all detections to their
/// nearest projected centers, stops early below 2 px, and greedily extends
/// the winner to all detections. Throws NoConsistentMatch when the best
/// mean score exceeds 50 px.
MatchResult match_markers(const PosedImage& image, const std::vector<SphereMarker>& markers,
                          int threads = 1);

/// Internal solver state exposed for Jacobian verification.
struct RefineState {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double log_scale = 0.0;

    SimilarityTransform transform() const {
        return {{rotation, translation}, std::exp(log_scale)};
    }
};

/// Stacked bilinear conic residuals at `state`, optionally with the analytic
/// Jacobian w.r.t. [rotation increment (3), translation (3), log scale (1 if
/// estimated)]. Rows are ordered by (image, marker, outline point).
Eigen::VectorXd registration_residuals(const RegistrationProblem& problem,
                                       const RefineState& state,
                                       Eigen::MatrixXd* jacobian = nullptr);

/// Levenberg-Marquardt on the summed squared conic residuals. The damping
/// parameter is scaled by 10 on rejected steps and by 1/10 on accepted
/// ones, starting from lambda_init. Terminates on gradient, step size, or
/// the iteration cap (converged = false in that case). Throws
/// SingularNormalEquations if the damped normal equations cannot be solved.
RegistrationSolution refine_registration(const RegistrationProblem& problem,
                                         const SimilarityTransform& init,
                                         const SolverConfig& config = {});

/// Radial and reprojection errors on held-out control markers under the
/// estimated registration. Throws MissingControlDetections when a control
/// marker has no detection in any image.
EvaluationReport evaluate_registration(const RegistrationProblem& problem,
                                       const std::vector<int>& control_marker_ids,
                                       const RegistrationSolution& solution,
                                       const std::string& pose_source = "robot");

/// Per-image camera poses from robot forward kinematics: composes the
/// end-effector-to-base poses with the fixed camera-to-end-effector
/// transform and inverts to world(base)-to-camera.
std::vector<RigidTransform> poses_from_forward_kinematics(
    const std::vector<RigidTransform>& t_ee_b, const RigidTransform& t_c_ee);

/// Mean geometric distance between detected outline points (undistorted)
/// and the conic predicted for marker `marker` in image `image` under
/// `transform`; helper shared by evaluation and reporting.
double reprojection_error_px(const PosedImage& image, const SphereMarker& marker,
                             const detect::EllipseDetection& detection,
                             const SimilarityTransform& transform,
                             std::vector<double>* per_point = nullptr);

}  // namespace spherereg::reg
