#pragma once

/**
 * @file mesh.hpp
 * @brief Triangle-mesh I/O (ASCII PLY/OBJ), radius-constrained sphere fitting,
 *        exact point-to-surface distances via a BVH, and the symmetric
 *        Chamfer-distance evaluation with outlier exclusion.
 *
 * Meshes are immutable after load; distance queries and sampling are pure
 * and may run concurrently against a shared BVH.
 */

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "spherereg/geom.hpp"

namespace spherereg::mesh {

struct TriangleMesh {
    std::vector<Vec3> vertices;                    // mm
    std::vector<std::array<int, 3>> triangles;     // vertex indices

    void validate() const;
    double surface_area() const;
};

/// Loads an ASCII PLY or OBJ file (decided by extension, falling back to
/// content sniffing). Throws ParseError with a line number on malformed
/// input and UnsupportedFormat for anything else.
TriangleMesh load_mesh(const std::string& path);

/// Writes ASCII PLY or OBJ depending on the extension, with 9 significant
/// digits per coordinate.
void save_mesh(const TriangleMesh& mesh, const std::string& path);

/// Exact distance from a point to a triangle (closest point included).
double point_triangle_distance(const Vec3& point, const Vec3& a, const Vec3& b,
                               const Vec3& c, Vec3* closest = nullptr);

/// Median-split AABB tree over triangles for nearest-surface queries.
class TriangleBvh {
public:
    explicit TriangleBvh(const TriangleMesh& mesh);

    /// Distance to the closest triangle; optionally the closest point.
    double nearest_distance(const Vec3& query, Vec3* closest = nullptr) const;

private:
    struct Node {
        Vec3 lower, upper;
        int left = -1, right = -1;   // children, or -1 for leaves
        int begin = 0, end = 0;      // triangle range for leaves
    };

    int build(int begin, int end, int depth);

    const TriangleMesh& mesh_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    std::vector<Vec3> centroids_;
};

/// Uniform area-weighted surface samples, deterministic for a given seed.
/// `spacing` is interpreted as the mean nearest-neighbor distance of a
/// Poisson process, i.e. density 1 / (4 * spacing^2) per mm^2.
std::vector<Vec3> sample_surface(const TriangleMesh& mesh, double spacing,
                                 std::uint64_t seed);

// ---------------------------------------------------------------------------
// Sphere fitting
// ---------------------------------------------------------------------------

struct SphereFitResult {
    SphereMarker marker;        // center in the mesh frame
    double rms_residual = 0.0;  // mm, over support vertices
    int n_support_vertices = 0;
    std::vector<double> rms_trace;  // per-iteration RMS (non-increasing)
};

struct SphereFitParams {
    double capture_band = 0.2;  ///< fraction of the radius
    int max_iters = 100;
};

/// Fits a fixed-radius sphere to mesh vertices: select vertices within the
/// capture band of the current surface, then Gauss-Newton on the center.
/// Stops when the center moves less than 1e-6 mm. Throws InsufficientSupport
/// (< 10 vertices in band) or Diverged (center left the 2r ball around the
/// initialization).
SphereFitResult fit_sphere_icp(const TriangleMesh& mesh, double radius,
                               const Vec3& init_center, int max_iters = 100,
                               double capture_band = 0.2);

/// | distance(line, center) - radius |: zero iff the ray is tangent to the
/// marker hull. `ray_dir` must be unit length.
double ray_sphere_radial_error(const Vec3& ray_origin, const Vec3& ray_dir,
                               const SphereMarker& marker);

// ---------------------------------------------------------------------------
// Chamfer distance
// ---------------------------------------------------------------------------

struct ChamferReport {
    double cd = 0.0;               // mm
    double mean_pred_to_gt = 0.0;  // mm
    double mean_gt_to_pred = 0.0;  // mm
    double outlier_fraction = 0.0;
    double sample_spacing = 0.0;   // mm
};

/// Symmetric Chamfer distance: both surfaces sampled at `spacing`, distances
/// measured exactly point-to-triangle against the other mesh, and distances
/// above `outlier_cutoff` excluded per direction.
ChamferReport chamfer_distance(const TriangleMesh& pred, const TriangleMesh& gt,
                               double spacing = 0.1, double outlier_cutoff = 20.0,
                               std::uint64_t seed = 0, int threads = 1);

}  // namespace spherereg::mesh
