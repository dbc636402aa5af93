#include <cmath>

#include "spherereg/detect.hpp"

namespace spherereg::detect {

std::vector<Vec2> sample_outline(const Ellipse& ellipse, int count) {
    require(count >= 4, "need at least 4 outline points");
    const double perimeter = ellipse_perimeter(ellipse);
    const double step = perimeter / count;

    std::vector<Vec2> out;
    out.reserve(count);
    out.push_back(ellipse.point_at(0.0));

    double t = 0.0;
    double s = 0.0;  // arc length at t
    for (int k = 1; k < count; ++k) {
        const double target = k * step;
        // Newton on s(t) - target, integrating incrementally from the
        // previous sample.
        for (int iter = 0; iter < 60; ++iter) {
            const double speed = std::sqrt(ellipse.a * ellipse.a * std::sin(t) * std::sin(t) +
                                           ellipse.b * ellipse.b * std::cos(t) * std::cos(t));
            const double dt = (target - s) / speed;
            const double t_next = t + dt;
            s += ellipse_arc_length(ellipse, t, t_next);
            t = t_next;
            if (std::abs(s - target) <= 1e-12 * perimeter) break;
        }
        out.push_back(ellipse.point_at(t));
    }
    return out;
}

EllipseDetection detect_marker(const ImageF& image, const DetectionMask& aggregated_mask,
                               int image_id, int marker_id, const DetectParams& params,
                               std::uint64_t seed) {
    const Ellipse initial = fit_ellipse_to_mask(aggregated_mask, params.n_starts, seed);
    const double envelope = params.envelope_for_width(image.width);
    const EdgePointSet edges =
        extract_edge_points(image, initial, envelope, params.canny);
    const RansacResult fit =
        ransac_ellipse(edges, params.ransac_threshold, params.ransac_iterations, seed);

    EllipseDetection detection;
    detection.image_id = image_id;
    detection.marker_id = marker_id;
    detection.ellipse = fit.ellipse;
    detection.outline_points = sample_outline(fit.ellipse, params.outline_points);
    detection.fit_inlier_ratio = fit.inlier_ratio;
    return detection;
}

}  // namespace spherereg::detect
