#include <cmath>
#include <limits>

#include "spherereg/registration.hpp"
#include "spherereg/threading.hpp"

namespace spherereg::reg {

namespace {

/// One (image, marker) block: conic from the current transform plus its
/// derivative w.r.t. the solver parameters, shared by all outline points of
/// the block.
struct ConicBlock {
    Mat3 conic = Mat3::Zero();                 // normalized E
    std::vector<Mat3> d_conic;                 // per parameter
    bool valid = false;
};

/// Derivative of the Frobenius-normalized, sign-fixed conic given the raw
/// inverse-dual-conic derivative. The sign is locally constant.
Mat3 normalize_derivative(const Mat3& raw, double sign, const Mat3& d_raw) {
    const Mat3 f = sign * raw;
    const Mat3 df = sign * d_raw;
    const double n = f.norm();
    const double inner = (f.array() * df.array()).sum();
    return df / n - f * (inner / (n * n * n));
}

double conic_sign_of(const Mat3& e) {
    const double trace2 = e(0, 0) + e(1, 1);
    if (trace2 != 0.0) return trace2 > 0.0 ? 1.0 : -1.0;
    return e(2, 2) > 0.0 ? 1.0 : -1.0;
}

ConicBlock conic_block(const CameraModel& cam, const RigidTransform& world_to_cam,
                       const SphereMarker& marker, const RefineState& state,
                       int n_params, bool with_jacobian) {
    ConicBlock block;
    const double scale = std::exp(state.log_scale);
    const Vec3 rotated = state.rotation * marker.center;        // R c_S
    const Vec3 scene_w = scale * rotated + state.translation;   // c_W
    const Vec3 c = world_to_cam.apply(scene_w);                 // camera frame
    const double radius = scale * marker.radius;

    if (c.z() <= radius) return block;  // sphere not fully in front

    // E = (K M K^T)^-1 = K^-T M^-1 K^-1 with M = c c^T - rho^2 I, whose
    // inverse has the cancellation-free closed form
    // M^-1 = (c c^T / (|c|^2 - rho^2) - I) / rho^2 (Sherman-Morrison).
    // The camera-frame route keeps residuals accurate to machine precision,
    // which the finite-difference Jacobian checks rely on.
    const double depth_margin = c.squaredNorm() - radius * radius;
    if (depth_margin <= 1e-12 * c.squaredNorm()) return block;
    Mat3 k_inv = Mat3::Identity();
    k_inv(0, 0) = 1.0 / cam.fx;
    k_inv(1, 1) = 1.0 / cam.fy;
    k_inv(0, 2) = -cam.cx / cam.fx;
    k_inv(1, 2) = -cam.cy / cam.fy;
    const Mat3 m_inv =
        (c * c.transpose() / depth_margin - Mat3::Identity()) / (radius * radius);
    const Mat3 raw = k_inv.transpose() * m_inv * k_inv;
    const double sign = conic_sign_of(raw);
    block.conic = (sign / raw.norm()) * raw;
    block.valid = true;
    if (!with_jacobian) return block;

    block.d_conic.resize(n_params);
    for (int p = 0; p < n_params; ++p) {
        Vec3 dc;
        double d_radius = 0.0;
        if (p < 3) {
            // Rotation increment (left-multiplied): d(R c)/domega_k = e_k x (R c).
            Vec3 e = Vec3::Zero();
            e(p) = 1.0;
            dc = world_to_cam.rotation * (scale * e.cross(rotated));
        } else if (p < 6) {
            Vec3 e = Vec3::Zero();
            e(p - 3) = 1.0;
            dc = world_to_cam.rotation * e;
        } else {
            // log-scale: d(scale)/dl = scale.
            dc = world_to_cam.rotation * (scale * rotated);
            d_radius = radius;
        }
        const Mat3 dm = dc * c.transpose() + c * dc.transpose() -
                        2.0 * radius * d_radius * Mat3::Identity();
        const Mat3 d_raw = k_inv.transpose() * (-m_inv * dm * m_inv) * k_inv;
        block.d_conic[p] = normalize_derivative(raw, sign, d_raw);
    }
    return block;
}

struct BlockRef {
    int image_index = 0;
    int marker_index = 0;
    std::size_t row_begin = 0;
    std::size_t count = 0;  // outline points
};

std::vector<BlockRef> collect_blocks(const RegistrationProblem& problem) {
    std::vector<BlockRef> blocks;
    std::size_t rows = 0;
    for (std::size_t i = 0; i < problem.images.size(); ++i) {
        for (const auto& det : problem.images[i].detections) {
            if (!problem.is_registration_marker(det.marker_id)) continue;
            int marker_index = -1;
            for (std::size_t j = 0; j < problem.markers.size(); ++j) {
                if (problem.markers[j].id == det.marker_id) {
                    marker_index = static_cast<int>(j);
                    break;
                }
            }
            if (marker_index < 0) continue;
            BlockRef ref;
            ref.image_index = static_cast<int>(i);
            ref.marker_index = marker_index;
            ref.row_begin = rows;
            ref.count = det.outline_points.size();
            rows += ref.count;
            blocks.push_back(ref);
        }
    }
    return blocks;
}

const detect::EllipseDetection& block_detection(const RegistrationProblem& problem,
                                                const BlockRef& ref) {
    const auto& image = problem.images[ref.image_index];
    const int marker_id = problem.markers[ref.marker_index].id;
    for (const auto& det : image.detections) {
        if (det.marker_id == marker_id) return det;
    }
    raise(ErrorCode::Internal, "block without detection");
}

/// Undistorted homogeneous outline points, cached once per solve.
struct PreparedPoints {
    std::vector<Vec3> homogeneous;  // per row
};

PreparedPoints prepare_points(const RegistrationProblem& problem,
                              const std::vector<BlockRef>& blocks) {
    PreparedPoints out;
    std::size_t rows = 0;
    for (const auto& ref : blocks) rows += ref.count;
    out.homogeneous.resize(rows);
    for (const auto& ref : blocks) {
        const auto& image = problem.images[ref.image_index];
        const auto& det = block_detection(problem, ref);
        for (std::size_t l = 0; l < ref.count; ++l) {
            const Vec2 u = image.camera.undistort_pixel(det.outline_points[l]);
            out.homogeneous[ref.row_begin + l] = Vec3(u.x(), u.y(), 1.0);
        }
    }
    return out;
}

void fill_residuals(const RegistrationProblem& problem, const std::vector<BlockRef>& blocks,
                    const PreparedPoints& points, const RefineState& state, int n_params,
                    Eigen::VectorXd* residuals, Eigen::MatrixXd* jacobian, int threads) {
    parallel_for(blocks.size(), threads, [&](std::size_t bi) {
        const BlockRef& ref = blocks[bi];
        const auto& image = problem.images[ref.image_index];
        const auto& marker = problem.markers[ref.marker_index];
        const ConicBlock block = conic_block(image.camera, image.pose_world_to_cam, marker,
                                             state, n_params, jacobian != nullptr);
        for (std::size_t l = 0; l < ref.count; ++l) {
            const std::size_t row = ref.row_begin + l;
            const Vec3& x = points.homogeneous[row];
            if (!block.valid) {
                // Degenerate geometry for this iterate: a large constant
                // residual steers the optimizer away without a crash.
                (*residuals)(static_cast<Eigen::Index>(row)) = 1.0;
                if (jacobian) jacobian->row(static_cast<Eigen::Index>(row)).setZero();
                continue;
            }
            (*residuals)(static_cast<Eigen::Index>(row)) = x.dot(block.conic * x);
            if (jacobian) {
                for (int p = 0; p < n_params; ++p) {
                    (*jacobian)(static_cast<Eigen::Index>(row), p) =
                        x.dot(block.d_conic[p] * x);
                }
            }
        }
    });
}

void apply_huber(double delta, Eigen::VectorXd* residuals, Eigen::MatrixXd* jacobian) {
    if (delta <= 0.0) return;
    for (Eigen::Index i = 0; i < residuals->size(); ++i) {
        const double r = std::abs((*residuals)(i));
        if (r <= delta) continue;
        const double w = std::sqrt(delta / r);
        (*residuals)(i) *= w;
        if (jacobian) jacobian->row(i) *= w;
    }
}

RefineState apply_step(const RefineState& state, const Eigen::VectorXd& delta,
                       bool with_scale) {
    RefineState next = state;
    next.rotation = rotation_exp(delta.head<3>()) * state.rotation;
    next.translation = state.translation + delta.segment<3>(3);
    if (with_scale) next.log_scale = state.log_scale + delta(6);
    return next;
}

}  // namespace

Eigen::VectorXd registration_residuals(const RegistrationProblem& problem,
                                       const RefineState& state,
                                       Eigen::MatrixXd* jacobian) {
    const auto blocks = collect_blocks(problem);
    const auto points = prepare_points(problem, blocks);
    const int n_params = problem.estimate_scale ? 7 : 6;
    std::size_t rows = 0;
    for (const auto& ref : blocks) rows += ref.count;

    Eigen::VectorXd residuals(rows);
    if (jacobian) jacobian->resize(static_cast<Eigen::Index>(rows), n_params);
    fill_residuals(problem, blocks, points, state, n_params, &residuals, jacobian, 1);
    return residuals;
}

RegistrationSolution refine_registration(const RegistrationProblem& problem,
                                         const SimilarityTransform& init,
                                         const SolverConfig& config) {
    problem.validate();
    require(init.scale > 0.0, "initial scale must be positive");

    const auto blocks = collect_blocks(problem);
    require(!blocks.empty(), "no registration-marker detections in the problem");
    const auto points = prepare_points(problem, blocks);
    const int n_params = problem.estimate_scale ? 7 : 6;
    std::size_t rows = 0;
    for (const auto& ref : blocks) rows += ref.count;

    RefineState state;
    state.rotation = init.rigid.rotation;
    state.translation = init.rigid.translation;
    state.log_scale = problem.estimate_scale ? std::log(init.scale) : 0.0;

    Eigen::VectorXd residuals(rows);
    Eigen::MatrixXd jacobian(rows, n_params);
    Eigen::VectorXd trial_residuals(rows);

    fill_residuals(problem, blocks, points, state, n_params, &residuals, &jacobian,
                   config.threads);
    apply_huber(config.huber_delta, &residuals, &jacobian);
    double cost = residuals.squaredNorm();

    RegistrationSolution solution;
    solution.cost_trace.push_back(cost);

    double lambda = config.lambda_init;
    bool converged = false;
    int iteration = 0;
    for (; iteration < config.max_iterations; ++iteration) {
        const Eigen::VectorXd gradient = jacobian.transpose() * residuals;
        if (gradient.lpNorm<Eigen::Infinity>() < config.gradient_tol) {
            converged = true;
            break;
        }
        const Eigen::MatrixXd hessian = jacobian.transpose() * jacobian;

        bool accepted = false;
        while (!accepted) {
            Eigen::MatrixXd damped = hessian;
            for (int p = 0; p < n_params; ++p) {
                damped(p, p) += lambda * std::max(hessian(p, p), 1e-12);
            }
            const Eigen::VectorXd delta = damped.ldlt().solve(-gradient);
            if (!delta.allFinite()) {
                raise(ErrorCode::SingularNormalEquations,
                      "damped normal equations unsolvable");
            }
            if (delta.norm() < config.step_tol) {
                converged = true;
                break;
            }
            const RefineState trial = apply_step(state, delta, problem.estimate_scale);
            fill_residuals(problem, blocks, points, trial, n_params, &trial_residuals,
                           nullptr, config.threads);
            Eigen::VectorXd weighted = trial_residuals;
            apply_huber(config.huber_delta, &weighted, nullptr);
            const double trial_cost = weighted.squaredNorm();
            if (trial_cost < cost) {
                state = trial;
                cost = trial_cost;
                lambda = std::max(lambda / 10.0, 1e-12);
                accepted = true;
            } else {
                lambda *= 10.0;
                if (lambda > 1e12) break;  // stuck; bail out as not converged
            }
        }
        solution.cost_trace.push_back(cost);
        if (converged || !accepted) break;

        fill_residuals(problem, blocks, points, state, n_params, &residuals, &jacobian,
                       config.threads);
        apply_huber(config.huber_delta, &residuals, &jacobian);
    }

    solution.transform.rigid.rotation = state.rotation;
    solution.transform.rigid.translation = state.translation;
    solution.transform.scale = problem.estimate_scale ? std::exp(state.log_scale) : 1.0;
    solution.final_cost = cost;
    solution.iterations = iteration;
    solution.converged = converged;

    for (const auto& image : problem.images) {
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& det : image.detections) {
            if (!problem.is_registration_marker(det.marker_id)) continue;
            for (const auto& marker : problem.markers) {
                if (marker.id != det.marker_id) continue;
                try {
                    std::vector<double> per_point;
                    const double mean = reprojection_error_px(image, marker, det,
                                                              solution.transform, &per_point);
                    sum += mean * static_cast<double>(per_point.size());
                    count += per_point.size();
                } catch (const Error&) {
                    // a diverged iterate can place a marker behind a camera;
                    // the report skips that pair rather than failing the solve
                }
                break;
            }
        }
        solution.per_image_reproj_error.emplace_back(
            image.image_id, count > 0 ? sum / static_cast<double>(count) : 0.0);
    }
    return solution;
}

}  // namespace spherereg::reg
