#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "spherereg/detect.hpp"

namespace spherereg::detect {

std::size_t DetectionMask::count() const {
    std::size_t n = 0;
    for (auto v : data) n += (v != 0);
    return n;
}

DetectionMask mask_from_image(const ImageU8& image, const Vec2& origin) {
    DetectionMask m;
    m.width = image.width;
    m.height = image.height;
    m.origin = origin;
    m.data.resize(image.pixels.size());
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        m.data[i] = image.pixels[i] >= 128 ? 1 : 0;
    }
    return m;
}

namespace {

DetectionMask erode3x3(const DetectionMask& m) {
    DetectionMask out = m;
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            std::uint8_t keep = 1;
            for (int dy = -1; dy <= 1 && keep; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || nx >= m.width || ny < 0 || ny >= m.height ||
                        m.at(nx, ny) == 0) {
                        keep = 0;
                        break;
                    }
                }
            }
            out.at(x, y) = keep;
        }
    }
    return out;
}

DetectionMask dilate3x3(const DetectionMask& m) {
    DetectionMask out = m;
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            std::uint8_t hit = 0;
            for (int dy = -1; dy <= 1 && !hit; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = x + dx, ny = y + dy;
                    if (nx >= 0 && nx < m.width && ny >= 0 && ny < m.height &&
                        m.at(nx, ny) != 0) {
                        hit = 1;
                        break;
                    }
                }
            }
            out.at(x, y) = hit;
        }
    }
    return out;
}

}  // namespace

DetectionMask aggregate_masks(const DetectionMask& m_r, const DetectionMask& m_g,
                              const DetectionMask& m_b) {
    require(m_r.width == m_g.width && m_r.width == m_b.width &&
                m_r.height == m_g.height && m_r.height == m_b.height,
            "channel masks must share dimensions");
    DetectionMask agg = m_r;
    for (std::size_t i = 0; i < agg.data.size(); ++i) {
        agg.data[i] = (m_r.data[i] | m_g.data[i] | m_b.data[i]) ? 1 : 0;
    }
    agg = dilate3x3(erode3x3(agg));

    // Keep only the connected component containing the center pixel.
    const int cx = agg.width / 2;
    const int cy = agg.height / 2;
    if (agg.at(cx, cy) == 0) {
        raise(ErrorCode::EmptyMask, "center-pixel component empty after post-processing");
    }
    DetectionMask out = agg;
    std::fill(out.data.begin(), out.data.end(), 0);
    std::deque<std::pair<int, int>> queue{{cx, cy}};
    out.at(cx, cy) = 1;
    while (!queue.empty()) {
        const auto [x, y] = queue.front();
        queue.pop_front();
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                const int nx = x + dx, ny = y + dy;
                if (nx >= 0 && nx < agg.width && ny >= 0 && ny < agg.height &&
                    agg.at(nx, ny) != 0 && out.at(nx, ny) == 0) {
                    out.at(nx, ny) = 1;
                    queue.emplace_back(nx, ny);
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mask-count ellipse fit
// ---------------------------------------------------------------------------

namespace {

/// Precomputed per-row prefix sums; the FP+FN loss reduces to one quadratic
/// solve per row.
class MaskLossEvaluator {
public:
    explicit MaskLossEvaluator(const DetectionMask& mask) : mask_(mask) {
        prefix_.assign(static_cast<std::size_t>(mask.height) * (mask.width + 1), 0);
        row_count_.assign(mask.height, 0);
        for (int y = 0; y < mask.height; ++y) {
            int acc = 0;
            for (int x = 0; x < mask.width; ++x) {
                prefix_[idx(y, x)] = acc;
                acc += mask.at(x, y) != 0;
            }
            prefix_[idx(y, mask.width)] = acc;
            row_count_[y] = acc;
            total_ += acc;
        }
    }

    std::size_t total() const { return total_; }

    /// FP + FN between the rasterized ellipse (pixel-center test, clipped to
    /// the mask grid) and the mask.
    std::size_t loss(const Ellipse& e) const {
        const double ct = std::cos(e.theta), st = std::sin(e.theta);
        const double inv_a2 = 1.0 / (e.a * e.a), inv_b2 = 1.0 / (e.b * e.b);
        // A = u u^T / a^2 + v v^T / b^2 in full-image coordinates.
        const double a00 = ct * ct * inv_a2 + st * st * inv_b2;
        const double a01 = ct * st * (inv_a2 - inv_b2);
        const double a11 = st * st * inv_a2 + ct * ct * inv_b2;

        std::size_t inside = 0, overlap = 0;
        for (int y = 0; y < mask_.height; ++y) {
            const double dy = (mask_.origin.y() + y) - e.center.y();
            // a00*u^2 + 2*a01*dy*u + a11*dy^2 - 1 <= 0 with u = X - cx.
            const double disc = a01 * a01 * dy * dy - a00 * (a11 * dy * dy - 1.0);
            if (disc < 0.0) continue;
            const double root = std::sqrt(disc);
            const double u_lo = (-a01 * dy - root) / a00;
            const double u_hi = (-a01 * dy + root) / a00;
            const double x_lo_f = e.center.x() + u_lo - mask_.origin.x();
            const double x_hi_f = e.center.x() + u_hi - mask_.origin.x();
            int x_lo = static_cast<int>(std::ceil(x_lo_f));
            int x_hi = static_cast<int>(std::floor(x_hi_f));
            x_lo = std::max(x_lo, 0);
            x_hi = std::min(x_hi, mask_.width - 1);
            if (x_lo > x_hi) continue;
            inside += static_cast<std::size_t>(x_hi - x_lo + 1);
            overlap += static_cast<std::size_t>(prefix_[idx(y, x_hi + 1)] -
                                                prefix_[idx(y, x_lo)]);
        }
        return inside + total_ - 2 * overlap;
    }

private:
    std::size_t idx(int y, int x) const {
        return static_cast<std::size_t>(y) * (mask_.width + 1) + x;
    }

    const DetectionMask& mask_;
    std::vector<int> prefix_;
    std::vector<int> row_count_;
    std::size_t total_ = 0;
};

/// Canonical parameter vector: enforces a >= b and theta in [0, pi).
Ellipse params_to_ellipse(const Eigen::Matrix<double, 5, 1>& p) {
    Ellipse e;
    e.center = {p(0), p(1)};
    e.a = p(2);
    e.b = p(3);
    e.theta = p(4);
    if (e.a < e.b) {
        std::swap(e.a, e.b);
        e.theta += 0.5 * M_PI;
    }
    e.theta = std::fmod(e.theta, M_PI);
    if (e.theta < 0.0) e.theta += M_PI;
    return e;
}

Ellipse moment_initialization(const DetectionMask& mask) {
    double m00 = 0.0, mx = 0.0, my = 0.0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            m00 += 1.0;
            mx += x;
            my += y;
        }
    }
    mx /= m00;
    my /= m00;
    double mu20 = 0.0, mu02 = 0.0, mu11 = 0.0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            const double dx = x - mx, dy = y - my;
            mu20 += dx * dx;
            mu02 += dy * dy;
            mu11 += dx * dy;
        }
    }
    Eigen::Matrix2d cov;
    cov << mu20 / m00, mu11 / m00, mu11 / m00, mu02 / m00;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
    const double l_minor = std::max(eig.eigenvalues()(0), 0.0625);
    const double l_major = std::max(eig.eigenvalues()(1), l_minor);
    Ellipse e;
    e.center = {mask.origin.x() + mx, mask.origin.y() + my};
    // For a filled ellipse the axis variance equals (semi-axis)^2 / 4.
    e.a = 2.0 * std::sqrt(l_major);
    e.b = 2.0 * std::sqrt(l_minor);
    const Vec2 major = eig.eigenvectors().col(1);
    double theta = std::atan2(major.y(), major.x());
    theta = std::fmod(theta, M_PI);
    if (theta < 0.0) theta += M_PI;
    e.theta = theta;
    return e;
}

/// Nelder-Mead on the 5 ellipse parameters with an integer-valued loss.
Eigen::Matrix<double, 5, 1> nelder_mead(
    const std::function<double(const Eigen::Matrix<double, 5, 1>&)>& objective,
    const Eigen::Matrix<double, 5, 1>& start,
    const Eigen::Matrix<double, 5, 1>& step, int max_iters, double* best_value) {
    using Param = Eigen::Matrix<double, 5, 1>;
    constexpr int kDim = 5;
    std::vector<std::pair<double, Param>> simplex;
    simplex.reserve(kDim + 1);
    simplex.emplace_back(objective(start), start);
    for (int i = 0; i < kDim; ++i) {
        Param p = start;
        p(i) += step(i);
        simplex.emplace_back(objective(p), p);
    }
    auto by_value = [](const auto& lhs, const auto& rhs) { return lhs.first < rhs.first; };

    for (int iter = 0; iter < max_iters; ++iter) {
        std::sort(simplex.begin(), simplex.end(), by_value);
        if (simplex.back().first - simplex.front().first < 0.5) break;  // flat plateau

        Param centroid = Param::Zero();
        for (int i = 0; i < kDim; ++i) centroid += simplex[i].second;
        centroid /= kDim;
        const Param& worst = simplex.back().second;

        const Param reflected = centroid + (centroid - worst);
        const double fr = objective(reflected);
        if (fr < simplex.front().first) {
            const Param expanded = centroid + 2.0 * (centroid - worst);
            const double fe = objective(expanded);
            simplex.back() = fe < fr ? std::make_pair(fe, expanded)
                                     : std::make_pair(fr, reflected);
            continue;
        }
        if (fr < simplex[kDim - 1].first) {
            simplex.back() = {fr, reflected};
            continue;
        }
        const Param contracted = centroid + 0.5 * (worst - centroid);
        const double fc = objective(contracted);
        if (fc < simplex.back().first) {
            simplex.back() = {fc, contracted};
            continue;
        }
        for (int i = 1; i <= kDim; ++i) {  // shrink toward the best vertex
            simplex[i].second =
                simplex[0].second + 0.5 * (simplex[i].second - simplex[0].second);
            simplex[i].first = objective(simplex[i].second);
        }
    }
    std::sort(simplex.begin(), simplex.end(), by_value);
    *best_value = simplex.front().first;
    return simplex.front().second;
}

}  // namespace

std::size_t ellipse_mask_loss(const DetectionMask& mask, const Ellipse& ellipse_full_image) {
    return MaskLossEvaluator(mask).loss(ellipse_full_image);
}

Ellipse fit_ellipse_to_mask(const DetectionMask& mask, int n_starts, std::uint64_t seed) {
    require(mask.count() > 0, "mask has no foreground pixels");
    require(n_starts >= 1, "need at least one start");

    const MaskLossEvaluator evaluator(mask);
    const Ellipse init = moment_initialization(mask);
    const double span = std::max({static_cast<double>(mask.width),
                                  static_cast<double>(mask.height), 4.0});

    auto objective = [&](const Eigen::Matrix<double, 5, 1>& p) {
        if (!(p(2) > 0.5) || !(p(3) > 0.5) || p(2) > 4.0 * span || p(3) > 4.0 * span) {
            return std::numeric_limits<double>::max() / 4.0;
        }
        return static_cast<double>(evaluator.loss(params_to_ellipse(p)));
    };

    Rng rng(seed ^ 0x6d61736bULL);
    double best_loss = std::numeric_limits<double>::max();
    Eigen::Matrix<double, 5, 1> best = Eigen::Matrix<double, 5, 1>::Zero();
    for (int s = 0; s < n_starts; ++s) {
        Eigen::Matrix<double, 5, 1> p0;
        p0 << init.center.x(), init.center.y(), init.a, init.b, init.theta;
        if (s > 0) {
            p0(0) += rng.uniform(-2.0, 2.0);
            p0(1) += rng.uniform(-2.0, 2.0);
            p0(2) *= rng.uniform(0.9, 1.1);
            p0(3) *= rng.uniform(0.9, 1.1);
            p0(4) += rng.uniform(-0.15, 0.15);
        }
        Eigen::Matrix<double, 5, 1> step;
        step << 1.0, 1.0, std::max(0.02 * p0(2), 0.5), std::max(0.02 * p0(3), 0.5), 0.02;
        double value = 0.0;
        const auto solution = nelder_mead(objective, p0, step, 250, &value);
        if (value < best_loss) {
            best_loss = value;
            best = solution;
        }
    }

    if (best_loss > 0.5 * static_cast<double>(evaluator.total())) {
        raise(ErrorCode::FitFailed, "mask is not elliptical (loss " +
                                        std::to_string(static_cast<long long>(best_loss)) +
                                        " of " + std::to_string(evaluator.total()) +
                                        " pixels)");
    }
    return params_to_ellipse(best);
}

}  // namespace spherereg::detect
