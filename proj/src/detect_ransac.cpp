#include <algorithm>
#include <cmath>
#include <limits>

#include "spherereg/detect.hpp"

namespace spherereg::detect {

namespace {

/// Isotropic (Hartley) normalization: x_hat = (x - centroid) / scale.
struct PointNormalization {
    Vec2 centroid = Vec2::Zero();
    double scale = 1.0;

    Mat3 matrix() const {
        Mat3 t = Mat3::Identity();
        t(0, 0) = t(1, 1) = 1.0 / scale;
        t(0, 2) = -centroid.x() / scale;
        t(1, 2) = -centroid.y() / scale;
        return t;
    }
};

PointNormalization normalize_points(const std::vector<Vec2>& pts,
                                    std::vector<Vec2>* out) {
    PointNormalization n;
    for (const auto& p : pts) n.centroid += p;
    n.centroid /= static_cast<double>(pts.size());
    double mean_dist = 0.0;
    for (const auto& p : pts) mean_dist += (p - n.centroid).norm();
    mean_dist /= static_cast<double>(pts.size());
    n.scale = mean_dist > 1e-12 ? mean_dist / std::sqrt(2.0) : 1.0;
    out->resize(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        (*out)[i] = (pts[i] - n.centroid) / n.scale;
    }
    return n;
}

/// Conic in image coordinates from a conic fitted on normalized points:
/// E = T^T E_hat T.
Mat3 denormalize_conic(const Mat3& e_hat, const PointNormalization& n) {
    const Mat3 t = n.matrix();
    return t.transpose() * e_hat * t;
}

Mat3 conic_from_coeffs(const Eigen::Matrix<double, 6, 1>& c) {
    Mat3 e;
    e << c(0), c(1) / 2.0, c(3) / 2.0,
         c(1) / 2.0, c(2), c(4) / 2.0,
         c(3) / 2.0, c(4) / 2.0, c(5);
    return e;
}

/// Exact conic through five points (nullspace of the 5x6 design matrix).
/// Returns false when the configuration is degenerate or not an ellipse.
bool conic_through_five(const std::vector<Vec2>& pts, Mat3* conic) {
    std::vector<Vec2> hat;
    const PointNormalization n = normalize_points(pts, &hat);
    Eigen::Matrix<double, 5, 6> design;
    for (int i = 0; i < 5; ++i) {
        const double x = hat[i].x(), y = hat[i].y();
        design.row(i) << x * x, x * y, y * y, x, y, 1.0;
    }
    Eigen::JacobiSVD<Eigen::Matrix<double, 5, 6>> svd(design, Eigen::ComputeFullV);
    if (svd.singularValues()(3) < 1e-12) return false;  // rank-deficient sample
    const Eigen::Matrix<double, 6, 1> coeffs = svd.matrixV().col(5);
    // Ellipse discriminant b^2 - 4ac < 0 (similarity-invariant).
    if (coeffs(1) * coeffs(1) - 4.0 * coeffs(0) * coeffs(2) >= 0.0) return false;
    *conic = denormalize_conic(conic_from_coeffs(coeffs), n);
    return true;
}

std::vector<std::size_t> find_inliers(const std::vector<Vec2>& pts, const Ellipse& e,
                                      double threshold) {
    std::vector<std::size_t> inliers;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (point_to_ellipse_distance(e, pts[i]) <= threshold) inliers.push_back(i);
    }
    return inliers;
}

}  // namespace

Ellipse fit_ellipse_lsq(const std::vector<Vec2>& points) {
    require(points.size() >= 5, "need at least 5 points for an ellipse fit");
    std::vector<Vec2> hat;
    const PointNormalization n = normalize_points(points, &hat);

    // Halir-Flusser partitioned direct least squares with the 4ac - b^2 = 1
    // ellipse constraint.
    Eigen::MatrixXd d1(points.size(), 3), d2(points.size(), 3);
    for (std::size_t i = 0; i < hat.size(); ++i) {
        const double x = hat[i].x(), y = hat[i].y();
        d1.row(static_cast<Eigen::Index>(i)) << x * x, x * y, y * y;
        d2.row(static_cast<Eigen::Index>(i)) << x, y, 1.0;
    }
    const Mat3 s1 = d1.transpose() * d1;
    const Mat3 s2 = d1.transpose() * d2;
    const Mat3 s3 = d2.transpose() * d2;
    const Mat3 t = -s3.ldlt().solve(s2.transpose());
    const Mat3 m_full = s1 + s2 * t;
    Mat3 m;
    m.row(0) = m_full.row(2) / 2.0;
    m.row(1) = -m_full.row(1);
    m.row(2) = m_full.row(0) / 2.0;

    Eigen::EigenSolver<Mat3> eig(m);
    int best = -1;
    double best_cond = 0.0;
    for (int i = 0; i < 3; ++i) {
        if (std::abs(eig.eigenvalues()(i).imag()) > 1e-9) continue;
        const Vec3 v = eig.eigenvectors().col(i).real();
        const double cond = 4.0 * v(0) * v(2) - v(1) * v(1);
        if (cond > best_cond) {
            best_cond = cond;
            best = i;
        }
    }
    if (best < 0) raise(ErrorCode::NotAnEllipse, "no ellipse solution in the fit");
    const Vec3 a1 = eig.eigenvectors().col(best).real();
    const Vec3 a2 = t * a1;
    Eigen::Matrix<double, 6, 1> coeffs;
    coeffs << a1, a2;
    return conic_to_ellipse(
        ConicMatrix::from_matrix(denormalize_conic(conic_from_coeffs(coeffs), n)));
}

RansacResult ransac_ellipse(const EdgePointSet& points, double inlier_threshold,
                            int iterations, std::uint64_t seed) {
    const auto& pts = points.points;
    require(pts.size() >= 5, "RANSAC needs at least 5 points");
    require(inlier_threshold > 0.0 && iterations > 0, "bad RANSAC parameters");

    Rng rng(seed ^ 0x72616e73ULL);
    std::size_t best_count = 0;
    Ellipse best_ellipse;
    bool found = false;

    for (int iter = 0; iter < iterations; ++iter) {
        const auto idx = rng.sample_distinct(pts.size(), 5);
        std::vector<Vec2> sample(5);
        for (int i = 0; i < 5; ++i) sample[i] = pts[idx[i]];
        Mat3 conic;
        if (!conic_through_five(sample, &conic)) continue;
        Ellipse candidate;
        try {
            candidate = conic_to_ellipse(ConicMatrix::from_matrix(conic));
        } catch (const Error&) {
            continue;
        }
        std::size_t count = 0;
        for (const auto& p : pts) {
            if (point_to_ellipse_distance(candidate, p) <= inlier_threshold) ++count;
        }
        if (count > best_count) {
            best_count = count;
            best_ellipse = candidate;
            found = true;
        }
    }
    if (!found) raise(ErrorCode::RansacFailed, "no valid ellipse hypothesis");

    RansacResult result;
    result.inliers = find_inliers(pts, best_ellipse, inlier_threshold);
    std::vector<Vec2> inlier_pts;
    inlier_pts.reserve(result.inliers.size());
    for (auto i : result.inliers) inlier_pts.push_back(pts[i]);

    result.ellipse = best_ellipse;
    if (inlier_pts.size() >= 5) {
        try {
            const Ellipse refit = fit_ellipse_lsq(inlier_pts);
            const auto refit_inliers = find_inliers(pts, refit, inlier_threshold);
            if (refit_inliers.size() >= result.inliers.size()) {
                result.ellipse = refit;
                result.inliers = refit_inliers;
            }
        } catch (const Error&) {
            // keep the consensus ellipse
        }
    }
    result.inlier_ratio =
        static_cast<double>(result.inliers.size()) / static_cast<double>(pts.size());
    if (result.inlier_ratio < 0.5) {
        raise(ErrorCode::RansacFailed,
              "inlier ratio " + std::to_string(result.inlier_ratio) + " below 0.5");
    }
    return result;
}

}  // namespace spherereg::detect
