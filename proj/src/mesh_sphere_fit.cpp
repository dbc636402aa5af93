#include <cmath>

#include "spherereg/mesh.hpp"

namespace spherereg::mesh {

SphereFitResult fit_sphere_icp(const TriangleMesh& mesh, double radius,
                               const Vec3& init_center, int max_iters,
                               double capture_band) {
    require(radius > 0.0, "radius must be positive");
    require(max_iters >= 1, "need at least one iteration");
    if (mesh.vertices.empty()) raise(ErrorCode::EmptyMesh, "mesh has no vertices");

    {
        double closest = std::numeric_limits<double>::max();
        for (const auto& v : mesh.vertices) {
            closest = std::min(closest, (v - init_center).norm());
        }
        require(closest <= 2.0 * radius,
                "init center is farther than 2r from every mesh vertex");
    }

    const double band = capture_band * radius;
    Vec3 center = init_center;
    SphereFitResult result;
    std::vector<int> support;

    auto select_support = [&](const Vec3& c) {
        support.clear();
        for (int i = 0; i < static_cast<int>(mesh.vertices.size()); ++i) {
            if (std::abs((mesh.vertices[i] - c).norm() - radius) <= band) {
                support.push_back(i);
            }
        }
    };
    auto rms_on = [&](const Vec3& c) {
        double sum = 0.0;
        for (int i : support) {
            const double r = (mesh.vertices[i] - c).norm() - radius;
            sum += r * r;
        }
        return std::sqrt(sum / static_cast<double>(support.size()));
    };

    int iterations = 0;
    for (; iterations < max_iters; ++iterations) {
        select_support(center);
        if (static_cast<int>(support.size()) < 10) {
            raise(ErrorCode::InsufficientSupport,
                  "only " + std::to_string(support.size()) + " vertices in capture band");
        }
        const double rms_before = rms_on(center);

        // Gauss-Newton for the center with the radius fixed: residual
        // f_i = ||v_i - c|| - r, gradient -u_i.
        Mat3 h = Mat3::Zero();
        Vec3 g = Vec3::Zero();
        for (int i : support) {
            const Vec3 d = mesh.vertices[i] - center;
            const double norm = d.norm();
            if (norm < 1e-12) continue;
            const Vec3 u = d / norm;
            h += u * u.transpose();
            g += u * (norm - radius);
        }
        Vec3 step = h.ldlt().solve(g);
        if (!step.allFinite()) {
            raise(ErrorCode::SingularNormalEquations, "degenerate support geometry");
        }

        // Halve the step until the RMS over the current support decreases.
        double rms_after = rms_before;
        Vec3 accepted = center;
        for (int halving = 0; halving < 12; ++halving) {
            const Vec3 trial = center + step;
            const double trial_rms = rms_on(trial);
            if (trial_rms <= rms_before) {
                rms_after = trial_rms;
                accepted = trial;
                break;
            }
            step *= 0.5;
        }
        const double shift = (accepted - center).norm();
        center = accepted;
        result.rms_trace.push_back(rms_after);

        if ((center - init_center).norm() > 2.0 * radius) {
            raise(ErrorCode::Diverged, "center left the 2r ball around the init");
        }
        if (shift < 1e-6) break;
    }

    select_support(center);
    if (static_cast<int>(support.size()) < 10) {
        raise(ErrorCode::InsufficientSupport, "final support below 10 vertices");
    }
    result.marker.center = center;
    result.marker.radius = radius;
    result.rms_residual = rms_on(center);
    result.n_support_vertices = static_cast<int>(support.size());
    return result;
}

double ray_sphere_radial_error(const Vec3& ray_origin, const Vec3& ray_dir,
                               const SphereMarker& marker) {
    require(std::abs(ray_dir.norm() - 1.0) <= 1e-9, "ray direction must be unit length");
    return std::abs(line_point_distance(ray_origin, ray_dir, marker.center) -
                    marker.radius);
}

}  // namespace spherereg::mesh
