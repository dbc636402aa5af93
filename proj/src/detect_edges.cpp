#include <algorithm>
#include <cmath>
#include <deque>

#include "spherereg/detect.hpp"

namespace spherereg::detect {

namespace {

ImageF gaussian_blur(const ImageF& src, double sigma) {
    if (sigma <= 0.0) return src;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> kernel(2 * radius + 1);
    float sum = 0.0f;
    for (int i = -radius; i <= radius; ++i) {
        const float v = std::exp(static_cast<float>(-0.5 * i * i / (sigma * sigma)));
        kernel[i + radius] = v;
        sum += v;
    }
    for (auto& v : kernel) v /= sum;

    ImageF tmp(src.width, src.height);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            float acc = 0.0f;
            for (int i = -radius; i <= radius; ++i) {
                const int sx = std::clamp(x + i, 0, src.width - 1);
                acc += kernel[i + radius] * src.at(sx, y);
            }
            tmp.at(x, y) = acc;
        }
    }
    ImageF out(src.width, src.height);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            float acc = 0.0f;
            for (int i = -radius; i <= radius; ++i) {
                const int sy = std::clamp(y + i, 0, src.height - 1);
                acc += kernel[i + radius] * tmp.at(x, sy);
            }
            out.at(x, y) = acc;
        }
    }
    return out;
}

}  // namespace

EdgePointSet extract_edge_points_crop(const ImageF& crop, const Vec2& origin,
                                      const Ellipse& initial, double envelope_width,
                                      const CannyParams& params) {
    require(envelope_width > 0.0, "envelope width must be positive");
    require(crop.width >= 3 && crop.height >= 3, "crop too small for edge detection");

    const ImageF smooth = gaussian_blur(crop, params.gaussian_sigma);
    const int w = smooth.width, h = smooth.height;

    // Sobel gradients.
    ImageF gx(w, h, 0.0f), gy(w, h, 0.0f), mag(w, h, 0.0f);
    float max_mag = 0.0f;
    for (int y = 1; y < h - 1; ++y) {
        for (int x = 1; x < w - 1; ++x) {
            const float sx = (smooth.at(x + 1, y - 1) + 2.0f * smooth.at(x + 1, y) +
                              smooth.at(x + 1, y + 1)) -
                             (smooth.at(x - 1, y - 1) + 2.0f * smooth.at(x - 1, y) +
                              smooth.at(x - 1, y + 1));
            const float sy = (smooth.at(x - 1, y + 1) + 2.0f * smooth.at(x, y + 1) +
                              smooth.at(x + 1, y + 1)) -
                             (smooth.at(x - 1, y - 1) + 2.0f * smooth.at(x, y - 1) +
                              smooth.at(x + 1, y - 1));
            gx.at(x, y) = sx;
            gy.at(x, y) = sy;
            const float m = std::hypot(sx, sy);
            mag.at(x, y) = m;
            max_mag = std::max(max_mag, m);
        }
    }
    if (max_mag <= 0.0f) raise(ErrorCode::NoEdges, "flat image, no gradients");

    // Non-maximum suppression along the quantized gradient direction.
    Image<std::uint8_t> ridge(w, h, 0);
    for (int y = 1; y < h - 1; ++y) {
        for (int x = 1; x < w - 1; ++x) {
            const float m = mag.at(x, y);
            if (m <= 0.0f) continue;
            double angle = std::atan2(gy.at(x, y), gx.at(x, y));
            if (angle < 0.0) angle += M_PI;
            int dx1, dy1;
            if (angle < M_PI / 8.0 || angle >= 7.0 * M_PI / 8.0) {
                dx1 = 1; dy1 = 0;
            } else if (angle < 3.0 * M_PI / 8.0) {
                dx1 = 1; dy1 = 1;
            } else if (angle < 5.0 * M_PI / 8.0) {
                dx1 = 0; dy1 = 1;
            } else {
                dx1 = -1; dy1 = 1;
            }
            const float n1 = mag.at(x - dx1, y - dy1);
            const float n2 = mag.at(x + dx1, y + dy1);
            if (m >= n1 && m > n2) ridge.at(x, y) = 1;
        }
    }

    // Hysteresis: grow from strong ridge pixels through weak ones.
    const float high = static_cast<float>(params.high_threshold_ratio) * max_mag;
    const float low = static_cast<float>(params.low_threshold_ratio) * max_mag;
    Image<std::uint8_t> edge(w, h, 0);
    std::deque<std::pair<int, int>> queue;
    for (int y = 1; y < h - 1; ++y) {
        for (int x = 1; x < w - 1; ++x) {
            if (ridge.at(x, y) && mag.at(x, y) >= high) {
                edge.at(x, y) = 1;
                queue.emplace_back(x, y);
            }
        }
    }
    while (!queue.empty()) {
        const auto [x, y] = queue.front();
        queue.pop_front();
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                const int nx = x + dx, ny = y + dy;
                if (nx < 1 || nx >= w - 1 || ny < 1 || ny >= h - 1) continue;
                if (edge.at(nx, ny) || !ridge.at(nx, ny)) continue;
                if (mag.at(nx, ny) < low) continue;
                edge.at(nx, ny) = 1;
                queue.emplace_back(nx, ny);
            }
        }
    }

    // Envelope filter around the initial estimate.
    EdgePointSet out;
    for (int y = 1; y < h - 1; ++y) {
        for (int x = 1; x < w - 1; ++x) {
            if (!edge.at(x, y)) continue;
            const Vec2 p(origin.x() + x, origin.y() + y);
            if (point_to_ellipse_distance(initial, p) > envelope_width) continue;
            out.points.push_back(p);
            out.gradient_magnitude.push_back(mag.at(x, y));
        }
    }
    if (out.points.size() < 10) {
        raise(ErrorCode::NoEdges, "only " + std::to_string(out.points.size()) +
                                      " edge points inside the envelope");
    }
    return out;
}

EdgePointSet extract_edge_points(const ImageF& image, const Ellipse& initial,
                                 double envelope_width, const CannyParams& params) {
    const Vec2 half = initial.bbox_half_extents();
    const int margin = static_cast<int>(
        std::ceil(envelope_width + 3.0 * params.gaussian_sigma + 8.0));
    CropWindow window;
    window.x0 = static_cast<int>(std::floor(initial.center.x() - half.x())) - margin;
    window.y0 = static_cast<int>(std::floor(initial.center.y() - half.y())) - margin;
    window.width = static_cast<int>(std::ceil(2.0 * half.x())) + 2 * margin;
    window.height = static_cast<int>(std::ceil(2.0 * half.y())) + 2 * margin;

    const int x0 = std::max(0, window.x0);
    const int y0 = std::max(0, window.y0);
    const ImageF crop = crop_image(image, window);
    return extract_edge_points_crop(crop, Vec2(x0, y0), initial, envelope_width, params);
}

}  // namespace spherereg::detect
