#pragma once

/**
 * @file detect.hpp
 * @brief Per-marker ellipse outline detection: mask aggregation, count-based
 *        ellipse fit to the mask, Canny edge extraction inside an envelope
 *        around the initial estimate, RANSAC refinement, and equidistant
 *        arc-length sampling of the final outline.
 *
 * Detections are independent pure computations per (image, marker) and may
 * run concurrently; RANSAC randomness is seeded per detection.
 */

#include <cstdint>
#include <vector>

#include "spherereg/geom.hpp"
#include "spherereg/image.hpp"
#include "spherereg/rng.hpp"

namespace spherereg::detect {

/// Binary mask over a crop window; `origin` places the crop in the full
/// image. Coordinates reported downstream are always full-image pixels.
struct DetectionMask {
    int width = 0;
    int height = 0;
    Vec2 origin = Vec2::Zero();
    std::vector<std::uint8_t> data;  // 0 or 1, row-major

    std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t count() const;
};

DetectionMask mask_from_image(const ImageU8& image, const Vec2& origin);

/// Edge points in full-image pixel coordinates with gradient magnitudes.
struct EdgePointSet {
    std::vector<Vec2> points;
    std::vector<double> gradient_magnitude;
};

/// Final per-(image, marker) detection record.
struct EllipseDetection {
    int image_id = 0;
    int marker_id = 0;
    Ellipse ellipse;
    std::vector<Vec2> outline_points;
    double fit_inlier_ratio = 1.0;
};

/// Pixelwise OR of the three channel masks, then one pass of 3x3 erosion and
/// dilation, keeping only the connected component that contains the center
/// pixel (floor(w/2), floor(h/2)). Throws EmptyMask when that component is
/// empty.
DetectionMask aggregate_masks(const DetectionMask& m_r, const DetectionMask& m_g,
                              const DetectionMask& m_b);

/// Fits ellipse parameters by minimizing the count of false positives plus
/// false negatives against the mask, restarted n_starts times from perturbed
/// moment initializations (Nelder-Mead, derivative-free). Returns the
/// lowest-loss ellipse in full-image coordinates. Throws FitFailed when the
/// best loss exceeds half the mask area.
Ellipse fit_ellipse_to_mask(const DetectionMask& mask, int n_starts = 8,
                            std::uint64_t seed = 0);

/// Mask-vs-ellipse loss (FP + FN count); exposed for tests.
std::size_t ellipse_mask_loss(const DetectionMask& mask, const Ellipse& ellipse_full_image);

struct CannyParams {
    double gaussian_sigma = 1.0;
    double low_threshold_ratio = 0.1;   ///< of max gradient magnitude
    double high_threshold_ratio = 0.3;  ///< of max gradient magnitude
};

/// Canny edges (Sobel gradients, non-maximum suppression, hysteresis) on a
/// crop around the initial ellipse; keeps points within envelope_width px of
/// the initial outline. Throws NoEdges if fewer than 10 survive.
EdgePointSet extract_edge_points(const ImageF& image, const Ellipse& initial,
                                 double envelope_width,
                                 const CannyParams& params = {});

/// Crop-window variant: `image` is a crop whose top-left pixel sits at
/// `origin` in the full image; `initial` stays in full-image coordinates.
EdgePointSet extract_edge_points_crop(const ImageF& crop, const Vec2& origin,
                                      const Ellipse& initial, double envelope_width,
                                      const CannyParams& params = {});

struct RansacResult {
    Ellipse ellipse;
    std::vector<std::size_t> inliers;
    double inlier_ratio = 0.0;
};

/// RANSAC over 5-point conic samples scored by geometric distance, followed
/// by a direct least-squares ellipse refit on the inliers. Deterministic for
/// a given seed. Throws RansacFailed when the inlier ratio is below 0.5.
RansacResult ransac_ellipse(const EdgePointSet& points, double inlier_threshold,
                            int iterations, std::uint64_t seed);

/// Direct least-squares conic fit constrained to ellipses
/// (Fitzgibbon/Halir-Flusser); exposed for the RANSAC refit and tests.
Ellipse fit_ellipse_lsq(const std::vector<Vec2>& points);

/// L points equally spaced in arc length along the ellipse (adaptive
/// quadrature of the perimeter integrand, relative tolerance 1e-9).
std::vector<Vec2> sample_outline(const Ellipse& ellipse, int count);

/// Full single-marker pipeline used by the detect command: mask fit ->
/// envelope edge extraction -> RANSAC -> outline sampling.
struct DetectParams {
    int n_starts = 8;
    double envelope_width = 10.0;  ///< px at 9504-wide images, scaled by width
    double ransac_threshold = 1.0;
    int ransac_iterations = 2000;
    int outline_points = 200;
    CannyParams canny;

    /// Envelope width scaled linearly with image width.
    double envelope_for_width(int image_width) const {
        return envelope_width * static_cast<double>(image_width) / 9504.0;
    }
};

EllipseDetection detect_marker(const ImageF& image, const DetectionMask& aggregated_mask,
                               int image_id, int marker_id, const DetectParams& params,
                               std::uint64_t seed);

}  // namespace spherereg::detect
