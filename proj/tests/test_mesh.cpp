#include <doctest.h>

#include <cmath>
#include <fstream>

#include "spherereg/mesh.hpp"
#include "spherereg/rng.hpp"
#include "spherereg/synth.hpp"

using namespace spherereg;
using namespace spherereg::mesh;

namespace {

const char* kTetraPly =
    "ply\n"
    "format ascii 1.0\n"
    "element vertex 4\n"
    "property float x\n"
    "property float y\n"
    "property float z\n"
    "element face 4\n"
    "property list uchar int vertex_indices\n"
    "end_header\n"
    "0 0 0\n"
    "1 0 0\n"
    "0 1 0\n"
    "0 0 1\n"
    "3 0 1 2\n"
    "3 0 1 3\n"
    "3 0 2 3\n"
    "3 1 2 3\n";

std::string write_temp(const std::string& name, const std::string& contents) {
    const std::string path = "/tmp/spherereg_test_" + name;
    std::ofstream out(path);
    out << contents;
    return path;
}

TriangleMesh plane_patch(double size, double z, int divisions, const Vec3& offset = Vec3::Zero()) {
    TriangleMesh m;
    for (int j = 0; j <= divisions; ++j) {
        for (int i = 0; i <= divisions; ++i) {
            m.vertices.push_back(offset + Vec3(size * i / divisions, size * j / divisions, z));
        }
    }
    auto idx = [&](int i, int j) { return j * (divisions + 1) + i; };
    for (int j = 0; j < divisions; ++j) {
        for (int i = 0; i < divisions; ++i) {
            m.triangles.push_back({idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)});
            m.triangles.push_back({idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)});
        }
    }
    return m;
}

void append_mesh(TriangleMesh* dst, const TriangleMesh& src) {
    const int offset = static_cast<int>(dst->vertices.size());
    dst->vertices.insert(dst->vertices.end(), src.vertices.begin(), src.vertices.end());
    for (auto t : src.triangles) {
        dst->triangles.push_back({t[0] + offset, t[1] + offset, t[2] + offset});
    }
}

}  // namespace

TEST_CASE("load_mesh: unit tetrahedron PLY") {
    const auto path = write_temp("tetra.ply", kTetraPly);
    const TriangleMesh mesh = load_mesh(path);
    CHECK(mesh.vertices.size() == 4);
    CHECK(mesh.triangles.size() == 4);
    CHECK((mesh.vertices[3] - Vec3(0, 0, 1)).norm() <= 1e-12);
}

TEST_CASE("save/load round trip preserves geometry") {
    const auto scan = synth::make_icosphere(Vec3(12.5, -3.25, 7.75), 9.125, 2);
    for (const char* name : {"roundtrip.ply", "roundtrip.obj"}) {
        const std::string path = "/tmp/spherereg_test_" + std::string(name);
        save_mesh(scan, path);
        const TriangleMesh back = load_mesh(path);
        REQUIRE(back.vertices.size() == scan.vertices.size());
        REQUIRE(back.triangles.size() == scan.triangles.size());
        double max_err = 0.0;
        for (std::size_t i = 0; i < scan.vertices.size(); ++i) {
            max_err = std::max(max_err, (scan.vertices[i] - back.vertices[i]).norm());
        }
        CHECK(max_err <= 1e-7);
        CHECK(back.triangles == scan.triangles);
    }
}

TEST_CASE("load_mesh: truncated and malformed files") {
    const auto truncated = write_temp(
        "trunc.ply",
        "ply\nformat ascii 1.0\nelement vertex 10\nproperty float x\nproperty float "
        "y\nproperty float z\nend_header\n0 0 0\n");
    CHECK_THROWS_AS(load_mesh(truncated), Error);
    try {
        load_mesh(truncated);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ParseError);
    }

    const auto garbage = write_temp("garbage.xyz", "not a mesh\n");
    CHECK_THROWS_AS(load_mesh(garbage), Error);
    CHECK_THROWS_AS(load_mesh("/nonexistent/never.ply"), Error);
}

TEST_CASE("point_triangle_distance: regions and BVH agreement") {
    const Vec3 a(0, 0, 0), b(4, 0, 0), c(0, 3, 0);
    CHECK(point_triangle_distance(Vec3(1, 1, 5), a, b, c) == doctest::Approx(5.0));
    CHECK(point_triangle_distance(Vec3(-2, -2, 0), a, b, c) ==
          doctest::Approx(std::sqrt(8.0)));
    CHECK(point_triangle_distance(Vec3(5, -1, 0), a, b, c) ==
          doctest::Approx(std::sqrt(2.0)));
    CHECK(point_triangle_distance(Vec3(1, 1, 0), a, b, c) == doctest::Approx(0.0));

    // BVH nearest distance equals brute force over all triangles.
    const auto sphere = synth::make_icosphere(Vec3(5, 5, 5), 10.0, 2);
    const TriangleBvh bvh(sphere);
    Rng rng(15);
    for (int i = 0; i < 200; ++i) {
        const Vec3 q(rng.uniform(-20, 30), rng.uniform(-20, 30), rng.uniform(-20, 30));
        double brute = 1e300;
        for (const auto& t : sphere.triangles) {
            brute = std::min(brute, point_triangle_distance(q, sphere.vertices[t[0]],
                                                            sphere.vertices[t[1]],
                                                            sphere.vertices[t[2]]));
        }
        CHECK(bvh.nearest_distance(q) == doctest::Approx(brute).epsilon(1e-12));
    }
}

TEST_CASE("fit_sphere_icp: exact icosphere") {
    const Vec3 center(10.0, -20.0, 30.0);
    const auto sphere = synth::make_icosphere(center, 15.0, 4);
    CHECK(sphere.vertices.size() == 2562);

    const auto fit = fit_sphere_icp(sphere, 15.0, center + Vec3(3.0, -1.0, 2.0), 100);
    CHECK((fit.marker.center - center).norm() <= 1e-6);
    CHECK(fit.rms_residual <= 1e-9);
    CHECK(fit.n_support_vertices >= 10);

    // Monotone RMS across iterations.
    for (std::size_t i = 1; i < fit.rms_trace.size(); ++i) {
        CHECK(fit.rms_trace[i] <= fit.rms_trace[i - 1] + 1e-12);
    }
}

TEST_CASE("fit_sphere_icp: scanner-accuracy noise (0.05 mm)") {
    const Vec3 center(0, 0, 0);
    Rng rng(2024);
    double worst = 0.0;
    for (int seed = 0; seed < 10; ++seed) {
        auto sphere = synth::make_icosphere(center, 15.0, 4);
        Rng noise = rng.fork(seed);
        for (auto& v : sphere.vertices) {
            v += Vec3(noise.normal(0, 0.05), noise.normal(0, 0.05), noise.normal(0, 0.05));
        }
        const auto fit = fit_sphere_icp(sphere, 15.0, center + Vec3(2.0, 2.0, -1.0), 100);
        worst = std::max(worst, (fit.marker.center - center).norm());
    }
    CHECK(worst <= 0.02);
}

TEST_CASE("fit_sphere_icp: hemisphere") {
    const Vec3 center(5.0, 5.0, 5.0);
    const auto sphere = synth::make_icosphere(center, 15.0, 4);
    TriangleMesh hemi;
    std::vector<int> remap(sphere.vertices.size(), -1);
    for (const auto& t : sphere.triangles) {
        bool upper = true;
        for (int k = 0; k < 3; ++k) {
            if (sphere.vertices[t[k]].z() < center.z()) upper = false;
        }
        if (!upper) continue;
        std::array<int, 3> mapped{};
        for (int k = 0; k < 3; ++k) {
            if (remap[t[k]] < 0) {
                remap[t[k]] = static_cast<int>(hemi.vertices.size());
                hemi.vertices.push_back(sphere.vertices[t[k]]);
            }
            mapped[k] = remap[t[k]];
        }
        hemi.triangles.push_back(mapped);
    }

    const auto fit = fit_sphere_icp(hemi, 15.0, center + Vec3(1.5, -1.0, 2.0), 200);
    CHECK((fit.marker.center - center).norm() <= 0.1);
}

TEST_CASE("fit_sphere_icp: error paths") {
    const auto sphere = synth::make_icosphere(Vec3::Zero(), 15.0, 3);
    // Init too far from the mesh violates the precondition.
    CHECK_THROWS_AS(fit_sphere_icp(sphere, 15.0, Vec3(200, 0, 0), 50), Error);

    // A tiny radius leaves no vertices inside the capture band.
    try {
        fit_sphere_icp(sphere, 0.5, Vec3(15.2, 0, 0), 50);
        CHECK(false);
    } catch (const Error& e) {
        const bool expected = e.code() == ErrorCode::InsufficientSupport ||
                              e.code() == ErrorCode::InvalidArgument;
        CHECK(expected);
    }
}

TEST_CASE("ray_sphere_radial_error: tangent, center, offset") {
    const SphereMarker m{0, Vec3(20, 0, 100), 15.0};
    // Ray through the center.
    const Vec3 dir = (m.center - Vec3::Zero()).normalized();
    CHECK(ray_sphere_radial_error(Vec3::Zero(), dir, m) == doctest::Approx(15.0));
    // Axis-parallel ray at perpendicular distance 20.
    CHECK(ray_sphere_radial_error(Vec3::Zero(), Vec3(0, 0, 1), m) == doctest::Approx(5.0));
    // Tangent ray: shift the axis-parallel ray to graze the hull.
    CHECK(ray_sphere_radial_error(Vec3(5, 0, 0), Vec3(0, 0, 1), m) ==
          doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("chamfer: identity, parallel planes, symmetry, rigid invariance") {
    const TriangleMesh patch = plane_patch(20.0, 0.0, 10);
    const auto self = chamfer_distance(patch, patch, 0.2, 20.0, 3);
    CHECK(self.cd <= 1e-12);

    const TriangleMesh lifted = plane_patch(20.0, 2.0, 10);
    const auto offset = chamfer_distance(patch, lifted, 0.1, 20.0, 3);
    CHECK(std::abs(offset.cd - 2.0) <= 0.1);
    CHECK(offset.outlier_fraction == doctest::Approx(0.0));
    CHECK(offset.cd ==
          doctest::Approx(0.5 * (offset.mean_pred_to_gt + offset.mean_gt_to_pred)));

    const auto swapped = chamfer_distance(lifted, patch, 0.1, 20.0, 3);
    CHECK(swapped.mean_pred_to_gt == doctest::Approx(offset.mean_gt_to_pred));
    CHECK(swapped.mean_gt_to_pred == doctest::Approx(offset.mean_pred_to_gt));
    CHECK(swapped.cd == doctest::Approx(offset.cd));

    // Rigid invariance.
    const Mat3 r = rotation_exp(Vec3(0.4, -0.2, 0.9));
    auto rotate = [&](TriangleMesh m) {
        for (auto& v : m.vertices) v = r * v + Vec3(5, -7, 11);
        return m;
    };
    const auto moved = chamfer_distance(rotate(patch), rotate(lifted), 0.1, 20.0, 3);
    CHECK(std::abs(moved.cd - offset.cd) <= 1e-9);
}

TEST_CASE("chamfer: spacing refinement converges on the plane-offset case") {
    const TriangleMesh patch = plane_patch(10.0, 0.0, 5);
    const TriangleMesh lifted = plane_patch(10.0, 2.0, 5);
    double prev_dev = 1e300;
    for (const double spacing : {0.2, 0.1, 0.05}) {
        const auto report = chamfer_distance(patch, lifted, spacing, 20.0, 3);
        const double dev = std::abs(report.cd - 2.0);
        CHECK(dev <= prev_dev + 1e-9);
        prev_dev = dev;
    }
}

TEST_CASE("chamfer: 25 mm displaced region is excluded as outliers") {
    // Main patches coincide; a detached region covering ~10% of the total
    // area sits 25 mm apart between the meshes and >20 mm from everything
    // else, so both directional passes exclude exactly that region.
    const double main_size = 30.0;                   // 900 mm^2
    const double region_size = 10.0;                 // 100 mm^2 -> 10%
    const Vec3 region_offset(main_size + 30.0, 0.0, 0.0);

    TriangleMesh gt = plane_patch(main_size, 0.0, 15);
    append_mesh(&gt, plane_patch(region_size, 0.0, 5, region_offset));
    TriangleMesh pred = plane_patch(main_size, 0.0, 15);
    append_mesh(&pred, plane_patch(region_size, 25.0, 5, region_offset));

    const auto report = chamfer_distance(pred, gt, 0.1, 20.0, 3);
    CHECK(std::abs(report.outlier_fraction - 0.10) <= 0.02);
    CHECK(report.cd <= 1e-9);

    CHECK_THROWS_AS(chamfer_distance(TriangleMesh{}, gt, 0.1, 20.0, 0), Error);
}

TEST_CASE("sample_surface: deterministic and dense enough") {
    const TriangleMesh patch = plane_patch(5.0, 0.0, 4);
    const auto a = sample_surface(patch, 0.1, 77);
    const auto b = sample_surface(patch, 0.1, 77);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK((a[i] - b[i]).norm() == 0.0);
    // Density 1/(4 s^2) over 25 mm^2 -> 625 points.
    CHECK(a.size() >= 600);
    CHECK(a.size() <= 650);
}
