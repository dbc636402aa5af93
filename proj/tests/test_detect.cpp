#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>

#include "spherereg/detect.hpp"
#include "spherereg/rng.hpp"

using namespace spherereg;
using namespace spherereg::detect;

namespace {

DetectionMask disk_mask(int size, const Vec2& center, double radius) {
    DetectionMask m;
    m.width = size;
    m.height = size;
    m.data.assign(static_cast<std::size_t>(size) * size, 0);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            if ((Vec2(x, y) - center).norm() <= radius) m.at(x, y) = 1;
        }
    }
    return m;
}

DetectionMask ellipse_mask(int size, const Ellipse& e) {
    DetectionMask m;
    m.width = size;
    m.height = size;
    m.data.assign(static_cast<std::size_t>(size) * size, 0);
    const ConicMatrix conic = ellipse_to_conic(e);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            if (conic_point_residual(conic, Vec2(x, y)) < 0.0) m.at(x, y) = 1;
        }
    }
    return m;
}

/// Independent connected-component oracle (4-neighborhood flood fill is too
/// strict for diagonally-joined specks, so match the 8-connectivity the
/// implementation documents).
DetectionMask cc_oracle_center_component(const DetectionMask& in) {
    DetectionMask out = in;
    std::fill(out.data.begin(), out.data.end(), 0);
    const int cx = in.width / 2, cy = in.height / 2;
    if (!in.at(cx, cy)) return out;
    std::deque<std::pair<int, int>> q{{cx, cy}};
    out.at(cx, cy) = 1;
    while (!q.empty()) {
        auto [x, y] = q.front();
        q.pop_front();
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                int nx = x + dx, ny = y + dy;
                if (nx < 0 || ny < 0 || nx >= in.width || ny >= in.height) continue;
                if (!in.at(nx, ny) || out.at(nx, ny)) continue;
                out.at(nx, ny) = 1;
                q.emplace_back(nx, ny);
            }
    }
    return out;
}

/// Anti-aliased dark disk on a white background (16x supersampling).
ImageF disk_image(int size, const Vec2& center, double radius, float dark = 0.1f,
                  float bright = 0.9f) {
    ImageF img(size, size, bright);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double d = (Vec2(x, y) - center).norm();
            if (d > radius + 2.0) continue;
            if (d < radius - 2.0) {
                img.at(x, y) = dark;
                continue;
            }
            int hits = 0;
            for (int sy = 0; sy < 4; ++sy)
                for (int sx = 0; sx < 4; ++sx) {
                    const Vec2 sub(x + (sx + 0.5) / 4.0 - 0.5, y + (sy + 0.5) / 4.0 - 0.5);
                    if ((sub - center).norm() <= radius) ++hits;
                }
            img.at(x, y) = bright + (dark - bright) * hits / 16.0f;
        }
    }
    return img;
}

}  // namespace

TEST_CASE("pnm loading: 8-bit PGM, 16-bit PGM and PPM luma") {
    // 2x2 8-bit PGM.
    {
        std::ofstream out("/tmp/spherereg_test_img8.pgm", std::ios::binary);
        out << "P5\n# comment\n2 2\n255\n";
        const unsigned char px[4] = {0, 64, 128, 255};
        out.write(reinterpret_cast<const char*>(px), 4);
    }
    const ImageF img8 = load_image_gray("/tmp/spherereg_test_img8.pgm");
    CHECK(img8.width == 2);
    CHECK(img8.at(0, 0) == doctest::Approx(0.0f));
    CHECK(img8.at(1, 1) == doctest::Approx(1.0f));
    CHECK(img8.at(1, 0) == doctest::Approx(64.0f / 255.0f));

    // 1x2 16-bit PGM (big-endian).
    {
        std::ofstream out("/tmp/spherereg_test_img16.pgm", std::ios::binary);
        out << "P5\n1 2\n65535\n";
        const unsigned char px[4] = {0x00, 0x00, 0xFF, 0xFF};
        out.write(reinterpret_cast<const char*>(px), 4);
    }
    const ImageF img16 = load_image_gray("/tmp/spherereg_test_img16.pgm");
    CHECK(img16.at(0, 0) == doctest::Approx(0.0f));
    CHECK(img16.at(0, 1) == doctest::Approx(1.0f));

    // 1x1 PPM: pure green maps through the Rec.601 weight.
    {
        std::ofstream out("/tmp/spherereg_test_img.ppm", std::ios::binary);
        out << "P6\n1 1\n255\n";
        const unsigned char px[3] = {0, 255, 0};
        out.write(reinterpret_cast<const char*>(px), 3);
    }
    const ImageF rgb = load_image_gray("/tmp/spherereg_test_img.ppm");
    CHECK(rgb.at(0, 0) == doctest::Approx(0.587f).epsilon(1e-5));

    // Truncated raster.
    {
        std::ofstream out("/tmp/spherereg_test_trunc.pgm", std::ios::binary);
        out << "P5\n4 4\n255\nxy";
    }
    CHECK_THROWS_AS(load_image_gray("/tmp/spherereg_test_trunc.pgm"), Error);
    CHECK_THROWS_AS(load_image_gray("/nonexistent.pgm"), Error);
}

TEST_CASE("aggregate_masks: OR semantics and idempotent disk") {
    const DetectionMask disk = disk_mask(41, Vec2(20, 20), 12.3);
    DetectionMask empty = disk;
    std::fill(empty.data.begin(), empty.data.end(), 0);

    const DetectionMask same = aggregate_masks(disk, disk, disk);
    CHECK(same.data == disk.data);

    const DetectionMask from_red = aggregate_masks(disk, empty, empty);
    CHECK(from_red.data == disk.data);
}

TEST_CASE("aggregate_masks: disjoint speck removed (CC oracle)") {
    DetectionMask disk = disk_mask(20, Vec2(10, 10), 5.4);
    // A 3x3 speck far from the center survives the opening but not the
    // center-component selection.
    for (int y = 1; y <= 3; ++y)
        for (int x = 1; x <= 3; ++x) disk.at(x, y) = 1;
    DetectionMask empty = disk;
    std::fill(empty.data.begin(), empty.data.end(), 0);

    const DetectionMask result = aggregate_masks(disk, empty, empty);

    // Oracle: opening (erode+dilate) then the center component, computed
    // with an independent flood fill.
    DetectionMask opened = disk;
    {
        DetectionMask eroded = disk;
        for (int y = 0; y < disk.height; ++y)
            for (int x = 0; x < disk.width; ++x) {
                std::uint8_t keep = 1;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= disk.width || ny >= disk.height ||
                            !disk.at(nx, ny))
                            keep = 0;
                    }
                eroded.at(x, y) = keep;
            }
        for (int y = 0; y < disk.height; ++y)
            for (int x = 0; x < disk.width; ++x) {
                std::uint8_t hit = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int nx = x + dx, ny = y + dy;
                        if (nx >= 0 && ny >= 0 && nx < disk.width && ny < disk.height &&
                            eroded.at(nx, ny))
                            hit = 1;
                    }
                opened.at(x, y) = hit;
            }
    }
    const DetectionMask oracle = cc_oracle_center_component(opened);
    CHECK(result.data == oracle.data);
    // The speck is gone.
    CHECK(result.at(2, 2) == 0);
    CHECK(result.at(10, 10) == 1);
}

TEST_CASE("aggregate_masks: empty center component") {
    DetectionMask empty;
    empty.width = empty.height = 15;
    empty.data.assign(225, 0);
    CHECK_THROWS_AS(aggregate_masks(empty, empty, empty), Error);
    try {
        aggregate_masks(empty, empty, empty);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyMask);
    }
}

TEST_CASE("fit_ellipse_to_mask: rasterized disk") {
    const Vec2 center(40.3, 39.6);
    const double radius = 30.2;
    const DetectionMask mask = disk_mask(81, center, radius);
    const Ellipse fit = fit_ellipse_to_mask(mask, 8, /*seed=*/5);

    CHECK(std::abs(fit.center.x() - center.x()) <= 0.5);
    CHECK(std::abs(fit.center.y() - center.y()) <= 0.5);
    CHECK(std::abs(fit.a - radius) <= 0.5);
    CHECK(std::abs(fit.b - radius) <= 0.5);

    // Loss bounded by the perimeter pixel count.
    const std::size_t loss = ellipse_mask_loss(mask, fit);
    CHECK(loss <= static_cast<std::size_t>(2.0 * M_PI * radius));
}

TEST_CASE("fit_ellipse_to_mask: rasterized ellipse") {
    const Ellipse truth{Vec2(50.2, 47.9), 40.0, 20.0, 0.3};
    const DetectionMask mask = ellipse_mask(101, truth);
    const Ellipse fit = fit_ellipse_to_mask(mask, 8, /*seed=*/9);

    CHECK(std::abs(fit.center.x() - truth.center.x()) <= 0.5);
    CHECK(std::abs(fit.center.y() - truth.center.y()) <= 0.5);
    CHECK(std::abs(fit.a - truth.a) <= 0.5);
    CHECK(std::abs(fit.b - truth.b) <= 0.5);
    CHECK(std::abs(fit.theta - truth.theta) <= 0.02);
}

TEST_CASE("fit_ellipse_to_mask: empty mask is a precondition violation") {
    DetectionMask empty;
    empty.width = empty.height = 10;
    empty.data.assign(100, 0);
    CHECK_THROWS_AS(fit_ellipse_to_mask(empty, 4, 0), Error);
}

TEST_CASE("extract_edge_points: disk edge against the analytic circle") {
    const Vec2 center(60.5, 59.5);
    const double radius = 40.0;
    const ImageF img = disk_image(120, center, radius);
    const Ellipse initial{center, radius, radius, 0.0};

    const EdgePointSet edges = extract_edge_points(img, initial, 5.0);
    CHECK(edges.points.size() >= 100);
    for (const auto& p : edges.points) {
        CHECK(std::abs((p - center).norm() - radius) <= 1.5);
    }
}

TEST_CASE("extract_edge_points: flat and over-tight envelopes fail") {
    const ImageF flat(64, 64, 0.5f);
    const Ellipse initial{Vec2(32, 32), 10.0, 10.0, 0.0};
    CHECK_THROWS_AS(extract_edge_points(flat, initial, 5.0), Error);

    // Noise image with an over-tight envelope: almost nothing lands within
    // 0.1 px of the initial outline.
    ImageF noisy(96, 96, 0.5f);
    Rng rng(12);
    for (auto& v : noisy.pixels) v = static_cast<float>(rng.uniform());
    const Ellipse init2{Vec2(48, 48), 8.0, 6.0, 0.4};
    CHECK_THROWS_AS(extract_edge_points(noisy, init2, 0.1), Error);
    try {
        extract_edge_points(noisy, init2, 0.1);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NoEdges);
    }
}

TEST_CASE("extract_edge_points: displaced initial still covers the arc") {
    const Vec2 center(60.0, 60.0);
    const double radius = 35.0;
    const ImageF img = disk_image(120, center, radius);
    const Ellipse displaced{center + Vec2(3.0, 0.0), radius, radius, 0.0};

    const EdgePointSet edges = extract_edge_points(img, displaced, 10.0);
    std::vector<double> angles;
    for (const auto& p : edges.points) {
        angles.push_back(std::atan2(p.y() - center.y(), p.x() - center.x()));
    }
    std::sort(angles.begin(), angles.end());
    double max_gap = 2.0 * M_PI - (angles.back() - angles.front());
    for (std::size_t i = 1; i < angles.size(); ++i) {
        max_gap = std::max(max_gap, angles[i] - angles[i - 1]);
    }
    // Coverage of at least 300 degrees means no gap larger than 60 degrees.
    CHECK(max_gap <= 60.0 * M_PI / 180.0);
}

TEST_CASE("ransac_ellipse: exact points recover exactly") {
    const Ellipse truth{Vec2(320.5, 241.2), 80.0, 45.0, 0.7};
    EdgePointSet points;
    points.points = sample_outline(truth, 200);
    points.gradient_magnitude.assign(points.points.size(), 1.0);

    const RansacResult result = ransac_ellipse(points, 1.0, 500, /*seed=*/3);
    CHECK(result.inlier_ratio == doctest::Approx(1.0));
    CHECK((result.ellipse.center - truth.center).norm() <= 1e-6);
    CHECK(std::abs(result.ellipse.a - truth.a) <= 1e-6);
    CHECK(std::abs(result.ellipse.b - truth.b) <= 1e-6);
    CHECK(std::abs(result.ellipse.theta - truth.theta) <= 1e-6);
}

TEST_CASE("ransac_ellipse: survives uniform outliers (seeded oracle)") {
    const Ellipse truth{Vec2(100.0, 90.0), 60.0, 40.0, 0.5};
    Rng rng(77);
    EdgePointSet points;
    for (const auto& p : sample_outline(truth, 140)) points.points.push_back(p);
    for (int i = 0; i < 60; ++i) {
        points.points.emplace_back(rng.uniform(0.0, 200.0), rng.uniform(0.0, 200.0));
    }
    points.gradient_magnitude.assign(points.points.size(), 1.0);

    const RansacResult result = ransac_ellipse(points, 1.0, 2000, /*seed=*/11);
    CHECK((result.ellipse.center - truth.center).norm() <= 0.3);
    CHECK(std::abs(result.ellipse.a - truth.a) <= 0.3);
    CHECK(std::abs(result.ellipse.b - truth.b) <= 0.3);
    CHECK(std::abs(result.ellipse.theta - truth.theta) <= 0.01);
    CHECK(result.inlier_ratio >= 0.5);
}

TEST_CASE("ransac_ellipse: preconditions and determinism") {
    EdgePointSet four;
    four.points = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    four.gradient_magnitude.assign(4, 1.0);
    CHECK_THROWS_AS(ransac_ellipse(four, 1.0, 100, 0), Error);

    const Ellipse truth{Vec2(50, 50), 30.0, 18.0, 1.1};
    Rng rng(5);
    EdgePointSet points;
    for (const auto& p : sample_outline(truth, 60)) {
        points.points.emplace_back(p.x() + rng.normal(0, 0.3), p.y() + rng.normal(0, 0.3));
    }
    for (int i = 0; i < 15; ++i) {
        points.points.emplace_back(rng.uniform(0, 100), rng.uniform(0, 100));
    }
    points.gradient_magnitude.assign(points.points.size(), 1.0);

    const RansacResult a = ransac_ellipse(points, 1.0, 800, 42);
    const RansacResult b = ransac_ellipse(points, 1.0, 800, 42);
    CHECK(a.ellipse.center.x() == b.ellipse.center.x());
    CHECK(a.ellipse.center.y() == b.ellipse.center.y());
    CHECK(a.ellipse.a == b.ellipse.a);
    CHECK(a.ellipse.b == b.ellipse.b);
    CHECK(a.ellipse.theta == b.ellipse.theta);
    CHECK(a.inliers == b.inliers);
}

TEST_CASE("ransac_ellipse: recovered ellipse stable as outliers grow") {
    const Ellipse truth{Vec2(128.0, 128.0), 70.0, 50.0, 0.2};
    const auto clean = sample_outline(truth, 200);
    Rng rng(99);

    Ellipse base;
    for (const double fraction : {0.0, 0.1, 0.2, 0.3}) {
        EdgePointSet points;
        Rng noise = rng.fork(static_cast<std::uint64_t>(fraction * 100));
        for (const auto& p : clean) {
            if (noise.uniform() < fraction) {
                points.points.emplace_back(noise.uniform(0.0, 256.0),
                                           noise.uniform(0.0, 256.0));
            } else {
                points.points.push_back(p);
            }
        }
        points.gradient_magnitude.assign(points.points.size(), 1.0);
        const RansacResult r = ransac_ellipse(points, 1.0, 2000, 7);
        if (fraction == 0.0) {
            base = r.ellipse;
        } else {
            CHECK((r.ellipse.center - base.center).norm() <= 1.0);
            CHECK(std::abs(r.ellipse.a - base.a) <= 1.0);
            CHECK(std::abs(r.ellipse.b - base.b) <= 1.0);
        }
    }
}

TEST_CASE("fit_ellipse_lsq: direct fit on exact points") {
    const Ellipse truth{Vec2(1012.4, 2240.8), 150.0, 90.0, 2.2};
    const auto points = sample_outline(truth, 50);
    const Ellipse fit = fit_ellipse_lsq(points);
    CHECK((fit.center - truth.center).norm() <= 1e-6);
    CHECK(std::abs(fit.a - truth.a) <= 1e-6);
    CHECK(std::abs(fit.b - truth.b) <= 1e-6);
    CHECK(std::abs(std::fmod(fit.theta - truth.theta + M_PI, M_PI)) <= 1e-6);
}

TEST_CASE("sample_outline: circle quadrants") {
    const Ellipse circle{Vec2(0, 0), 1.0, 1.0, 0.0};
    const auto points = sample_outline(circle, 4);
    REQUIRE(points.size() == 4);
    CHECK((points[0] - Vec2(1, 0)).norm() <= 1e-12);
    CHECK((points[1] - Vec2(0, 1)).norm() <= 1e-9);
    CHECK((points[2] - Vec2(-1, 0)).norm() <= 1e-9);
    CHECK((points[3] - Vec2(0, -1)).norm() <= 1e-9);

    CHECK_THROWS_AS(sample_outline(circle, 3), Error);
}

TEST_CASE("sample_outline: equidistance against a dense arc-length table") {
    const Ellipse e{Vec2(0, 0), 2.0, 1.0, 0.0};
    const int count = 200;
    const auto points = sample_outline(e, count);
    REQUIRE(points.size() == count);

    // Chord-length uniformity.
    double min_chord = 1e300, max_chord = 0.0;
    for (int k = 0; k < count; ++k) {
        const double chord = (points[(k + 1) % count] - points[k]).norm();
        min_chord = std::min(min_chord, chord);
        max_chord = std::max(max_chord, chord);
    }
    CHECK(max_chord / min_chord <= 1.001);

    // Dense 10^6-entry cumulative arc-length table as the oracle.
    const int table_n = 1000000;
    std::vector<double> cumulative(table_n + 1, 0.0);
    auto speed = [&](double t) {
        return std::sqrt(e.a * e.a * std::sin(t) * std::sin(t) +
                         e.b * e.b * std::cos(t) * std::cos(t));
    };
    for (int i = 0; i < table_n; ++i) {
        const double t0 = 2.0 * M_PI * i / table_n;
        const double t1 = 2.0 * M_PI * (i + 1) / table_n;
        cumulative[i + 1] = cumulative[i] + 0.5 * (speed(t0) + speed(t1)) * (t1 - t0);
    }
    const double perimeter = cumulative.back();
    auto arc_at = [&](double t) {
        const double pos = t / (2.0 * M_PI) * table_n;
        const int idx = std::clamp(static_cast<int>(pos), 0, table_n - 1);
        const double frac = pos - idx;
        return cumulative[idx] + frac * (cumulative[idx + 1] - cumulative[idx]);
    };

    const ConicMatrix conic = ellipse_to_conic(e);
    for (int k = 0; k < count; ++k) {
        // Recover the parametric angle of the sample.
        const double t =
            std::atan2(points[k].y() / e.b, points[k].x() / e.a);
        const double s = arc_at(t < 0 ? t + 2.0 * M_PI : t);
        const double target = perimeter * k / count;
        CHECK(std::abs(s - target) <= 1e-6 * perimeter);
        // On-curve by construction.
        CHECK(std::abs(conic_point_residual(conic, points[k])) <= 1e-9);
    }
}
