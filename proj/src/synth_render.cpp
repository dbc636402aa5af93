#include <algorithm>
#include <cmath>
#include <map>

#include "spherereg/rng.hpp"
#include "spherereg/synth.hpp"

namespace spherereg::synth {

namespace {

constexpr double kBackgroundBase = 0.78;
constexpr double kBackgroundAmplitude = 0.05;
constexpr double kDiskIntensity = 0.15;
constexpr int kNoiseCell = 48;

bool allowed_resolution(int width, int height) {
    return (width == 1920 && height == 1080) || (width == 4752 && height == 3168) ||
           (width == 9504 && height == 6336);
}

/// Smooth value-noise background so Canny sees texture but no hard edges.
class ValueNoise {
public:
    ValueNoise(int width, int height, std::uint64_t seed)
        : cols_(width / kNoiseCell + 2), rows_(height / kNoiseCell + 2) {
        Rng rng(seed ^ 0x626b6764ULL);
        grid_.resize(static_cast<std::size_t>(cols_) * rows_);
        for (auto& v : grid_) v = rng.uniform(-1.0, 1.0);
    }

    double at(double x, double y) const {
        const double gx = x / kNoiseCell, gy = y / kNoiseCell;
        const int ix = static_cast<int>(gx), iy = static_cast<int>(gy);
        const double fx = gx - ix, fy = gy - iy;
        const double sx = fx * fx * (3.0 - 2.0 * fx);
        const double sy = fy * fy * (3.0 - 2.0 * fy);
        const double v00 = value(ix, iy), v10 = value(ix + 1, iy);
        const double v01 = value(ix, iy + 1), v11 = value(ix + 1, iy + 1);
        const double a = v00 + sx * (v10 - v00);
        const double b = v01 + sx * (v11 - v01);
        return a + sy * (b - a);
    }

private:
    double value(int ix, int iy) const {
        ix = std::clamp(ix, 0, cols_ - 1);
        iy = std::clamp(iy, 0, rows_ - 1);
        return grid_[static_cast<std::size_t>(iy) * cols_ + ix];
    }

    int cols_, rows_;
    std::vector<double> grid_;
};

struct DiskRegion {
    int marker_id = 0;
    Ellipse outline;  // undistorted plane, render-resolution pixels
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // distorted-space bbox
};

/// Coverage of the disk over one pixel: full in/out decided by the signed
/// position against the conic; boundary pixels are 4x4 supersampled.
double pixel_coverage(const CameraModel& cam, bool with_distortion,
                      const Ellipse& outline, const ConicMatrix& conic, double px,
                      double py) {
    const Vec2 raw(px, py);
    const Vec2 undist = with_distortion ? cam.undistort_pixel(raw) : raw;
    const double dist = point_to_ellipse_distance(outline, undist);
    const bool inside = conic_point_residual(conic, undist) < 0.0;
    if (dist > 2.0) return inside ? 1.0 : 0.0;
    int hits = 0;
    for (int sy = 0; sy < 4; ++sy) {
        for (int sx = 0; sx < 4; ++sx) {
            const Vec2 sub(px + (sx + 0.5) / 4.0 - 0.5, py + (sy + 0.5) / 4.0 - 0.5);
            const Vec2 u = with_distortion ? cam.undistort_pixel(sub) : sub;
            if (conic_point_residual(conic, u) < 0.0) ++hits;
        }
    }
    return hits / 16.0;
}

}  // namespace

RenderedView render_sphere_image(const SyntheticScene& scene, int camera_index,
                                 int width, int height) {
    require(allowed_resolution(width, height),
            "resolution must be 1920x1080, 4752x3168 or 9504x6336");
    require(camera_index >= 0 &&
                camera_index < static_cast<int>(scene.poses_world_to_cam.size()),
            "camera index out of range");

    // Scale the intrinsics to the requested resolution.
    CameraModel cam = scene.camera;
    const double s = static_cast<double>(width) / scene.camera.width;
    cam.fx *= s;
    cam.fy *= s;
    cam.cx *= s;
    cam.cy *= s;
    cam.width = width;
    cam.height = height;

    const RigidTransform& pose = scene.poses_world_to_cam[camera_index];
    const ProjectionMatrix proj = ProjectionMatrix::from_camera(cam, pose);

    RenderedView view;
    view.image_id = camera_index;

    // Background.
    const ValueNoise noise(width, height,
                           scene.seed ^ (0x72656e64ULL + camera_index));
    ImageF canvas(width, height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            canvas.at(x, y) = static_cast<float>(
                kBackgroundBase + kBackgroundAmplitude * noise.at(x, y));
        }
    }

    // Disk regions (visible markers only).
    std::vector<DiskRegion> regions;
    std::vector<ConicMatrix> conics;
    for (std::size_t j = 0; j < scene.markers.size(); ++j) {
        if (!scene.marker_visible(static_cast<int>(j), camera_index)) continue;
        SphereMarker world = scene.markers[j];
        world.center = scene.ground_truth_transform.apply(world.center);
        ConicMatrix conic;
        try {
            conic = project_sphere(proj, world);
        } catch (const Error&) {
            continue;
        }
        DiskRegion region;
        region.marker_id = scene.markers[j].id;
        region.outline = conic_to_ellipse(conic);

        double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
        for (int k = 0; k < 32; ++k) {
            Vec2 p = region.outline.point_at(2.0 * M_PI * k / 32.0);
            if (scene.spec.with_distortion) p = cam.distort_pixel(p);
            min_x = std::min(min_x, p.x());
            max_x = std::max(max_x, p.x());
            min_y = std::min(min_y, p.y());
            max_y = std::max(max_y, p.y());
        }
        region.x0 = std::max(0, static_cast<int>(std::floor(min_x)) - 4);
        region.y0 = std::max(0, static_cast<int>(std::floor(min_y)) - 4);
        region.x1 = std::min(width - 1, static_cast<int>(std::ceil(max_x)) + 4);
        region.y1 = std::min(height - 1, static_cast<int>(std::ceil(max_y)) + 4);
        regions.push_back(region);
        conics.push_back(conic);
    }

    for (std::size_t r = 0; r < regions.size(); ++r) {
        const DiskRegion& region = regions[r];
        MarkerMaskCrop crop;
        crop.marker_id = region.marker_id;
        crop.x0 = region.x0;
        crop.y0 = region.y0;
        crop.mask = ImageU8(region.x1 - region.x0 + 1, region.y1 - region.y0 + 1, 0);

        for (int y = region.y0; y <= region.y1; ++y) {
            for (int x = region.x0; x <= region.x1; ++x) {
                const double cov =
                    pixel_coverage(cam, scene.spec.with_distortion, region.outline,
                                   conics[r], x, y);
                if (cov <= 0.0) continue;
                const float lit = canvas.at(x, y);
                canvas.at(x, y) = static_cast<float>(
                    lit * (1.0 - cov) + kDiskIntensity * cov);
                if (cov >= 0.5) crop.mask.at(x - region.x0, y - region.y0) = 255;
            }
        }
        view.masks.push_back(std::move(crop));
    }

    view.image = ImageU8(width, height);
    for (std::size_t i = 0; i < canvas.pixels.size(); ++i) {
        const float v = std::clamp(canvas.pixels[i], 0.0f, 1.0f);
        view.image.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return view;
}

// ---------------------------------------------------------------------------
// Scan meshes
// ---------------------------------------------------------------------------

mesh::TriangleMesh make_icosphere(const Vec3& center, double radius, int subdivisions) {
    require(radius > 0.0, "radius must be positive");
    const double phi = 0.5 * (1.0 + std::sqrt(5.0));
    std::vector<Vec3> verts = {
        {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
        {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
        {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
    for (auto& v : verts) v.normalize();
    std::vector<std::array<int, 3>> faces = {
        {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
        {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
        {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};

    for (int level = 0; level < subdivisions; ++level) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            const auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            const Vec3 m = (verts[a] + verts[b]).normalized();
            verts.push_back(m);
            const int index = static_cast<int>(verts.size()) - 1;
            midpoint.emplace(key, index);
            return index;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(faces.size() * 4);
        for (const auto& f : faces) {
            const int ab = mid(f[0], f[1]);
            const int bc = mid(f[1], f[2]);
            const int ca = mid(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        faces = std::move(next);
    }

    mesh::TriangleMesh out;
    out.vertices.reserve(verts.size());
    for (const auto& v : verts) out.vertices.push_back(center + radius * v);
    out.triangles = std::move(faces);
    return out;
}

mesh::TriangleMesh make_scan_mesh(const SyntheticScene& scene, int subdivisions) {
    mesh::TriangleMesh out;
    Rng rng(scene.seed ^ 0x7363616eULL);
    for (const auto& marker : scene.markers) {
        mesh::TriangleMesh sphere = make_icosphere(marker.center, marker.radius, subdivisions);
        if (scene.spec.noise.vertex_noise_sigma > 0.0) {
            for (auto& v : sphere.vertices) {
                v += Vec3(rng.normal(0.0, scene.spec.noise.vertex_noise_sigma),
                          rng.normal(0.0, scene.spec.noise.vertex_noise_sigma),
                          rng.normal(0.0, scene.spec.noise.vertex_noise_sigma));
            }
        }
        const int offset = static_cast<int>(out.vertices.size());
        out.vertices.insert(out.vertices.end(), sphere.vertices.begin(),
                            sphere.vertices.end());
        for (auto t : sphere.triangles) {
            out.triangles.push_back({t[0] + offset, t[1] + offset, t[2] + offset});
        }
    }
    return out;
}

}  // namespace spherereg::synth
