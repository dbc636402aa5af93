#pragma once

/**
 * @file synth.hpp
 * @brief Synthetic-scene oracle: deterministic ground-truth scenes (markers
 *        on a board, two camera arcs), analytic conic observations with
 *        controlled noise, rasterized sphere images with masks, and icosphere
 *        scan meshes, so every pipeline stage can be validated against a
 *        known transform.
 */

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "spherereg/geom.hpp"
#include "spherereg/image.hpp"
#include "spherereg/mesh.hpp"
#include "spherereg/registration.hpp"

namespace spherereg::synth {

struct NoiseSpec {
    double outline_noise_sigma = 0.0;    ///< px, isotropic Gaussian per point
    double pose_rotation_sigma = 0.0;    ///< rad
    double pose_translation_sigma = 0.0; ///< mm
    double vertex_noise_sigma = 0.0;     ///< mm, scan-mesh vertices
    double outlier_fraction = 0.0;       ///< per outline point

    /// Outline sigma calibrated so a full-resolution (9504x6336) run lands
    /// near a 3.7 px mean reprojection error: the geometric distance of an
    /// isotropically perturbed point to the curve has mean sigma*sqrt(2/pi).
    static double realistic_outline_sigma_px() { return 3.7 / std::sqrt(2.0 / M_PI); }

    void validate() const {
        require(outline_noise_sigma >= 0.0 && pose_rotation_sigma >= 0.0 &&
                    pose_translation_sigma >= 0.0 && vertex_noise_sigma >= 0.0,
                "noise sigmas must be non-negative");
        require(outlier_fraction >= 0.0 && outlier_fraction <= 1.0,
                "outlier fraction must be in [0, 1]");
    }
};

struct SceneSpec {
    int n_markers = 10;           ///< registration markers
    int n_control_markers = 2;    ///< held-out markers near the board center
    int n_cameras = 16;
    double marker_radius = 15.0;  ///< mm (30 mm printed spheres)
    double board_half_extent = 200.0;  ///< mm
    double min_separation = 60.0;      ///< mm between marker centers
    double standoff_min = 400.0;       ///< mm
    double standoff_max = 800.0;       ///< mm
    int image_width = 9504;
    int image_height = 6336;
    double focal_px = 4000.0;
    bool with_distortion = true;
    int outline_points = 200;
    NoiseSpec noise;
};

struct SyntheticScene {
    SceneSpec spec;
    std::uint64_t seed = 0;
    SimilarityTransform ground_truth_transform;  ///< T_S^W, scale 1
    std::vector<SphereMarker> markers;           ///< frame S, all markers
    std::vector<int> registration_ids;
    std::vector<int> control_ids;
    CameraModel camera;                          ///< shared intrinsics
    std::vector<RigidTransform> poses_world_to_cam;

    /// Marker fully visible (projected outline inside the image with an
    /// 8 px margin, sphere in front) in camera `cam_index`.
    bool marker_visible(int marker_index, int cam_index) const;
};

/// Deterministic scene generation: markers on the z = 0 board plane with the
/// required separation, cameras on two arcs facing the board center at the
/// configured standoff; rejection-sampled until every marker is visible in
/// at least min(4, N) cameras. Throws PlacementFailed after 10^4 attempts.
SyntheticScene generate_scene(const SceneSpec& spec, std::uint64_t seed);

struct Observations {
    std::vector<reg::PosedImage> images;        ///< perturbed poses + detections
    std::vector<RigidTransform> true_poses;     ///< unperturbed world-to-cam
};

/// Analytic observations: outline points sampled on the true conic,
/// distorted into raw pixel space, perturbed by Gaussian noise and uniform
/// outliers; camera poses perturbed per the NoiseSpec. All randomness comes
/// from per-(image, marker) sub-streams of the scene seed.
Observations render_observations(const SyntheticScene& scene);

struct MarkerMaskCrop {
    int marker_id = 0;
    ImageU8 mask;  // 0 / 255
    int x0 = 0;
    int y0 = 0;
};

struct RenderedView {
    int image_id = 0;
    ImageU8 image;
    std::vector<MarkerMaskCrop> masks;
};

/// Rasterizes the spheres of one camera as anti-aliased dark disks over a
/// low-contrast textured background, with paired ground-truth mask crops.
/// Resolution must be one of 1920x1080, 4752x3168 or 9504x6336.
RenderedView render_sphere_image(const SyntheticScene& scene, int camera_index,
                                 int width, int height);

/// Icosphere approximation of a marker (subdivided icosahedron).
mesh::TriangleMesh make_icosphere(const Vec3& center, double radius, int subdivisions);

/// Scan mesh of the scene in frame S: one icosphere per marker, with
/// optional Gaussian vertex noise (scanner model).
mesh::TriangleMesh make_scan_mesh(const SyntheticScene& scene, int subdivisions = 3);

}  // namespace spherereg::synth
