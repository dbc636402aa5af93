#include <cmath>

#include "spherereg/mesh.hpp"
#include "spherereg/threading.hpp"

namespace spherereg::mesh {

namespace {

struct DirectionalResult {
    double mean = 0.0;
    std::size_t kept = 0;
    std::size_t excluded = 0;
};

DirectionalResult directional_mean(const std::vector<Vec3>& samples,
                                   const TriangleBvh& target, double cutoff,
                                   int threads) {
    std::vector<double> distances(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        distances[i] = target.nearest_distance(samples[i]);
    });
    DirectionalResult out;
    double sum = 0.0;
    for (double d : distances) {
        if (d > cutoff) {
            ++out.excluded;
            continue;
        }
        sum += d;
        ++out.kept;
    }
    out.mean = out.kept > 0 ? sum / static_cast<double>(out.kept) : 0.0;
    return out;
}

}  // namespace

ChamferReport chamfer_distance(const TriangleMesh& pred, const TriangleMesh& gt,
                               double spacing, double outlier_cutoff,
                               std::uint64_t seed, int threads) {
    if (pred.triangles.empty() || gt.triangles.empty()) {
        raise(ErrorCode::EmptyMesh, "chamfer distance needs two non-empty meshes");
    }
    require(spacing > 0.0 && outlier_cutoff > 0.0, "bad chamfer parameters");

    const TriangleBvh pred_bvh(pred);
    const TriangleBvh gt_bvh(gt);
    const auto pred_samples = sample_surface(pred, spacing, seed);
    const auto gt_samples = sample_surface(gt, spacing, seed + 1);

    const auto fwd = directional_mean(pred_samples, gt_bvh, outlier_cutoff, threads);
    const auto bwd = directional_mean(gt_samples, pred_bvh, outlier_cutoff, threads);

    ChamferReport report;
    report.mean_pred_to_gt = fwd.mean;
    report.mean_gt_to_pred = bwd.mean;
    report.cd = 0.5 * (fwd.mean + bwd.mean);
    const std::size_t total = pred_samples.size() + gt_samples.size();
    report.outlier_fraction =
        total > 0 ? static_cast<double>(fwd.excluded + bwd.excluded) /
                        static_cast<double>(total)
                  : 0.0;
    report.sample_spacing = spacing;
    return report;
}

}  // namespace spherereg::mesh
