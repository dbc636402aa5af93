#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "spherereg/mesh.hpp"
#include "spherereg/rng.hpp"

namespace spherereg::mesh {

// Ericson's closest-point-on-triangle via barycentric region tests.
double point_triangle_distance(const Vec3& point, const Vec3& a, const Vec3& b,
                               const Vec3& c, Vec3* closest) {
    const Vec3 ab = b - a, ac = c - a, ap = point - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    Vec3 result;
    if (d1 <= 0.0 && d2 <= 0.0) {
        result = a;
    } else {
        const Vec3 bp = point - b;
        const double d3 = ab.dot(bp), d4 = ac.dot(bp);
        if (d3 >= 0.0 && d4 <= d3) {
            result = b;
        } else {
            const double vc = d1 * d4 - d3 * d2;
            if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
                result = a + (d1 / (d1 - d3)) * ab;
            } else {
                const Vec3 cp = point - c;
                const double d5 = ab.dot(cp), d6 = ac.dot(cp);
                if (d6 >= 0.0 && d5 <= d6) {
                    result = c;
                } else {
                    const double vb = d5 * d2 - d1 * d6;
                    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
                        result = a + (d2 / (d2 - d6)) * ac;
                    } else {
                        const double va = d3 * d6 - d5 * d4;
                        if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
                            result = b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
                        } else {
                            const double denom = 1.0 / (va + vb + vc);
                            result = a + (vb * denom) * ab + (vc * denom) * ac;
                        }
                    }
                }
            }
        }
    }
    if (closest) *closest = result;
    return (point - result).norm();
}

TriangleBvh::TriangleBvh(const TriangleMesh& mesh) : mesh_(mesh) {
    require(!mesh.triangles.empty(), "BVH over an empty mesh");
    order_.resize(mesh.triangles.size());
    std::iota(order_.begin(), order_.end(), 0);
    centroids_.resize(mesh.triangles.size());
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        const auto& t = mesh.triangles[i];
        centroids_[i] =
            (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0;
    }
    nodes_.reserve(2 * mesh.triangles.size());
    build(0, static_cast<int>(order_.size()), 0);
}

int TriangleBvh::build(int begin, int end, int depth) {
    Node node;
    node.lower = Vec3::Constant(std::numeric_limits<double>::max());
    node.upper = Vec3::Constant(std::numeric_limits<double>::lowest());
    for (int i = begin; i < end; ++i) {
        const auto& t = mesh_.triangles[order_[i]];
        for (int k = 0; k < 3; ++k) {
            node.lower = node.lower.cwiseMin(mesh_.vertices[t[k]]);
            node.upper = node.upper.cwiseMax(mesh_.vertices[t[k]]);
        }
    }
    const int index = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= 4 || depth > 48) {
        nodes_[index].begin = begin;
        nodes_[index].end = end;
        return index;
    }
    int axis = 0;
    (node.upper - node.lower).maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int lhs, int rhs) {
                         return centroids_[lhs](axis) < centroids_[rhs](axis);
                     });
    const int left = build(begin, mid, depth + 1);
    const int right = build(mid, end, depth + 1);
    nodes_[index].left = left;
    nodes_[index].right = right;
    return index;
}

namespace {

double box_distance_sq(const Vec3& p, const Vec3& lower, const Vec3& upper) {
    double d2 = 0.0;
    for (int k = 0; k < 3; ++k) {
        const double v = std::max({lower(k) - p(k), 0.0, p(k) - upper(k)});
        d2 += v * v;
    }
    return d2;
}

}  // namespace

double TriangleBvh::nearest_distance(const Vec3& query, Vec3* closest) const {
    double best = std::numeric_limits<double>::max();
    Vec3 best_point = Vec3::Zero();

    // Explicit stack ordered by child proximity.
    int stack[64];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
        const int index = stack[--top];
        const Node& node = nodes_[index];
        if (box_distance_sq(query, node.lower, node.upper) >= best * best) continue;
        if (node.left < 0) {
            for (int i = node.begin; i < node.end; ++i) {
                const auto& t = mesh_.triangles[order_[i]];
                Vec3 candidate;
                const double d = point_triangle_distance(
                    query, mesh_.vertices[t[0]], mesh_.vertices[t[1]],
                    mesh_.vertices[t[2]], &candidate);
                if (d < best) {
                    best = d;
                    best_point = candidate;
                }
            }
            continue;
        }
        const double dl = box_distance_sq(query, nodes_[node.left].lower,
                                          nodes_[node.left].upper);
        const double dr = box_distance_sq(query, nodes_[node.right].lower,
                                          nodes_[node.right].upper);
        // Push the farther child first so the nearer one is explored next.
        if (dl <= dr) {
            stack[top++] = node.right;
            stack[top++] = node.left;
        } else {
            stack[top++] = node.left;
            stack[top++] = node.right;
        }
    }
    if (closest) *closest = best_point;
    return best;
}

std::vector<Vec3> sample_surface(const TriangleMesh& mesh, double spacing,
                                 std::uint64_t seed) {
    require(spacing > 0.0, "sampling spacing must be positive");
    if (mesh.triangles.empty()) raise(ErrorCode::EmptyMesh, "mesh has no triangles");

    // Poisson-process density with mean nearest-neighbor distance == spacing.
    const double density = 1.0 / (4.0 * spacing * spacing);
    Rng rng(seed ^ 0x73616d70ULL);
    std::vector<Vec3> samples;
    double carry = 0.0;
    for (const auto& t : mesh.triangles) {
        const Vec3& a = mesh.vertices[t[0]];
        const Vec3& b = mesh.vertices[t[1]];
        const Vec3& c = mesh.vertices[t[2]];
        const double area = 0.5 * (b - a).cross(c - a).norm();
        const double want = area * density + carry;
        const int count = static_cast<int>(want);
        carry = want - count;
        for (int i = 0; i < count; ++i) {
            // Uniform barycentric sample (square-root trick).
            const double r1 = std::sqrt(rng.uniform());
            const double r2 = rng.uniform();
            samples.push_back((1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c);
        }
    }
    if (samples.empty()) {
        // Degenerate tiny mesh: fall back to triangle centroids.
        for (const auto& t : mesh.triangles) {
            samples.push_back(
                (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0);
        }
    }
    return samples;
}

}  // namespace spherereg::mesh
