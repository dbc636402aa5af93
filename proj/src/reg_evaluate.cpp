#include <algorithm>
#include <cmath>

#include "spherereg/mesh.hpp"
#include "spherereg/registration.hpp"

namespace spherereg::reg {

double reprojection_error_px(const PosedImage& image, const SphereMarker& marker,
                             const detect::EllipseDetection& detection,
                             const SimilarityTransform& transform,
                             std::vector<double>* per_point) {
    SphereMarker world = marker;
    world.center = transform.apply(marker.center);
    world.radius = transform.scale * marker.radius;

    const ProjectionMatrix p =
        ProjectionMatrix::from_camera(image.camera, image.pose_world_to_cam);
    const Ellipse predicted = conic_to_ellipse(project_sphere(p, world));

    double sum = 0.0;
    for (const auto& raw : detection.outline_points) {
        const Vec2 undist = image.camera.undistort_pixel(raw);
        const double d = point_to_ellipse_distance(predicted, undist);
        if (per_point) per_point->push_back(d);
        sum += d;
    }
    return detection.outline_points.empty()
               ? 0.0
               : sum / static_cast<double>(detection.outline_points.size());
}

EvaluationReport evaluate_registration(const RegistrationProblem& problem,
                                       const std::vector<int>& control_marker_ids,
                                       const RegistrationSolution& solution,
                                       const std::string& pose_source) {
    if (control_marker_ids.empty()) {
        raise(ErrorCode::MissingControlDetections, "no control markers configured");
    }

    EvaluationReport report;
    report.pose_source = pose_source;

    double radial_sum = 0.0;
    std::size_t radial_count = 0;
    double reproj_sum = 0.0;
    std::size_t reproj_count = 0;

    for (int control_id : control_marker_ids) {
        const auto marker_it =
            std::find_if(problem.markers.begin(), problem.markers.end(),
                         [&](const SphereMarker& m) { return m.id == control_id; });
        if (marker_it == problem.markers.end()) {
            raise(ErrorCode::MissingControlDetections,
                  "control marker " + std::to_string(control_id) + " not localized");
        }
        SphereMarker world = *marker_it;
        world.center = solution.transform.apply(marker_it->center);
        world.radius = solution.transform.scale * marker_it->radius;

        EvaluationReport::PerMarker per;
        per.marker_id = control_id;
        double marker_radial_sum = 0.0;
        double marker_reproj_sum = 0.0;
        std::size_t marker_reproj_count = 0;

        for (const auto& image : problem.images) {
            const auto det_it = std::find_if(
                image.detections.begin(), image.detections.end(),
                [&](const detect::EllipseDetection& d) { return d.marker_id == control_id; });
            if (det_it == image.detections.end()) continue;
            ++per.n_images;

            // Radial error: back-project each detected outline point and
            // measure the tangency miss against the transformed sphere.
            for (const auto& raw : det_it->outline_points) {
                const Vec2 undist = image.camera.undistort_pixel(raw);
                const Ray ray = backproject_ray(image.camera, image.pose_world_to_cam, undist);
                const double err =
                    mesh::ray_sphere_radial_error(ray.origin, ray.direction, world);
                marker_radial_sum += err;
                ++per.n_radial_samples;
            }

            std::vector<double> per_point;
            reprojection_error_px(image, *marker_it, *det_it, solution.transform, &per_point);
            for (double d : per_point) marker_reproj_sum += d;
            marker_reproj_count += per_point.size();
        }
        if (per.n_images == 0) {
            raise(ErrorCode::MissingControlDetections,
                  "control marker " + std::to_string(control_id) +
                      " has no detections in any image");
        }
        per.mean_radial_error_mm =
            marker_radial_sum / static_cast<double>(per.n_radial_samples);
        per.mean_reproj_error_px =
            marker_reproj_sum / static_cast<double>(marker_reproj_count);
        report.per_marker.push_back(per);

        radial_sum += marker_radial_sum;
        radial_count += per.n_radial_samples;
        reproj_sum += marker_reproj_sum;
        reproj_count += marker_reproj_count;
    }

    report.mean_radial_error_mm = radial_sum / static_cast<double>(radial_count);
    report.mean_reproj_error_px = reproj_sum / static_cast<double>(reproj_count);
    return report;
}

}  // namespace spherereg::reg
