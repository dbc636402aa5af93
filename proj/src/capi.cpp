#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "spherereg/mesh.hpp"
#include "spherereg/pipeline.hpp"
#include "spherereg/spherereg.h"

struct sr_mesh {
    spherereg::mesh::TriangleMesh mesh;
};

namespace {

thread_local std::string g_last_error;

sr_status status_from(spherereg::ErrorCode code) {
    using spherereg::ErrorCode;
    switch (code) {
        case ErrorCode::InvalidArgument: return SR_ERR_INVALID_ARGUMENT;
        case ErrorCode::Io: return SR_ERR_IO;
        case ErrorCode::ParseError: return SR_ERR_PARSE;
        case ErrorCode::UnsupportedFormat: return SR_ERR_UNSUPPORTED_FORMAT;
        case ErrorCode::PointBehindCamera: return SR_ERR_POINT_BEHIND_CAMERA;
        case ErrorCode::DegenerateConic: return SR_ERR_DEGENERATE_CONIC;
        case ErrorCode::NotAnEllipse: return SR_ERR_NOT_AN_ELLIPSE;
        case ErrorCode::EmptyMask: return SR_ERR_EMPTY_MASK;
        case ErrorCode::FitFailed: return SR_ERR_FIT_FAILED;
        case ErrorCode::NoEdges: return SR_ERR_NO_EDGES;
        case ErrorCode::RansacFailed: return SR_ERR_RANSAC_FAILED;
        case ErrorCode::EmptyMesh: return SR_ERR_EMPTY_MESH;
        case ErrorCode::InsufficientSupport: return SR_ERR_INSUFFICIENT_SUPPORT;
        case ErrorCode::Diverged: return SR_ERR_DIVERGED;
        case ErrorCode::PnpDegenerate: return SR_ERR_PNP_DEGENERATE;
        case ErrorCode::NoConsistentMatch: return SR_ERR_NO_CONSISTENT_MATCH;
        case ErrorCode::NotConverged: return SR_ERR_NOT_CONVERGED;
        case ErrorCode::SingularNormalEquations: return SR_ERR_SINGULAR_NORMAL_EQUATIONS;
        case ErrorCode::MissingControlDetections: return SR_ERR_MISSING_CONTROL_DETECTIONS;
        case ErrorCode::PlacementFailed: return SR_ERR_PLACEMENT_FAILED;
        case ErrorCode::DetectionFailed: return SR_ERR_DETECTION_FAILED;
        case ErrorCode::Internal: return SR_ERR_INTERNAL;
    }
    return SR_ERR_INTERNAL;
}

sr_status fail(const spherereg::Error& e) {
    g_last_error = e.what();
    return status_from(e.code());
}

sr_status fail(const std::exception& e) {
    g_last_error = e.what();
    return SR_ERR_INTERNAL;
}

char* copy_string(const std::string& s) {
    char* out = new (std::nothrow) char[s.size() + 1];
    if (!out) return nullptr;
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

sr_status emit_json(const spherereg::pipeline::Json& doc, char** out_json) {
    if (!out_json) {
        g_last_error = "out_json is NULL";
        return SR_ERR_INVALID_ARGUMENT;
    }
    *out_json = copy_string(doc.dump(2) + "\n");
    if (!*out_json) {
        g_last_error = "allocation failure";
        return SR_ERR_INTERNAL;
    }
    return SR_OK;
}

spherereg::pipeline::Json parse_config(const char* config_json) {
    if (!config_json) {
        spherereg::raise(spherereg::ErrorCode::InvalidArgument, "config_json is NULL");
    }
    try {
        return spherereg::pipeline::Json::parse(config_json);
    } catch (const nlohmann::json::exception& e) {
        spherereg::raise(spherereg::ErrorCode::ParseError,
                         std::string("config: ") + e.what());
    }
}

}  // namespace

extern "C" {

const char* sr_version(void) { return "0.1.0"; }

const char* sr_last_error_message(void) { return g_last_error.c_str(); }

void sr_string_free(char* str) { delete[] str; }

// ---------------------------------------------------------------------------
// Meshes
// ---------------------------------------------------------------------------

sr_status sr_mesh_load(const char* path, sr_mesh** out_mesh) {
    if (!path || !out_mesh) {
        g_last_error = "path/out_mesh is NULL";
        return SR_ERR_INVALID_ARGUMENT;
    }
    try {
        auto handle = std::make_unique<sr_mesh>();
        handle->mesh = spherereg::mesh::load_mesh(path);
        *out_mesh = handle.release();
        return SR_OK;
    } catch (const spherereg::Error& e) {
        return fail(e);
    } catch (const std::exception& e) {
        return fail(e);
    }
}

sr_status sr_mesh_save(const sr_mesh* mesh, const char* path) {
    if (!mesh || !path) {
        g_last_error = "mesh/path is NULL";
        return SR_ERR_INVALID_ARGUMENT;
    }
    try {
        spherereg::mesh::save_mesh(mesh->mesh, path);
        return SR_OK;
    } catch (const spherereg::Error& e) {
        return fail(e);
    } catch (const std::exception& e) {
        return fail(e);
    }
}

void sr_mesh_free(sr_mesh* mesh) { delete mesh; }

sr_status sr_mesh_vertex_count(const sr_mesh* mesh, uint64_t* out_count) {
    if (!mesh || !out_count) {
        g_last_error = "mesh/out_count is NULL";
        return SR_ERR_INVALID_ARGUMENT;
    }
    *out_count = mesh->mesh.vertices.size();
    return SR_OK;
}

sr_status sr_mesh_triangle_count(const sr_mesh* mesh, uint64_t* out_count) {
    if (!mesh || !out_count) {
        g_last_error = "mesh/out_count is NULL";
        return SR_ERR_INVALID_ARGUMENT;
    }
    *out_count = mesh->mesh.triangles.size();
    return SR_OK;
}

sr_status sr_mesh_fit_sphere(const sr_mesh* mesh, double radius,
                             const double init_center[3], int32_t max_iters,
                             sr_sphere_fit* out_fit) {
    if (!mesh || !init_center || !out_fit) {
        g_last_error = "mesh/init_center/out_fit is NULL";
        return SR_ERR_INVALID_ARGUMENT;
    }
    try {
        const auto fit = spherereg::mesh::fit_sphere_icp(
            mesh->mesh, radius,
            spherereg::Vec3(init_center[0], init_center[1], init_center[2]), max_iters);
        out_fit->center[0] = fit.marker.center.x();
        out_fit->center[1] = fit.marker.center.y();
        out_fit->center[2] = fit.marker.center.z();
        out_fit->radius = fit.marker.radius;
        out_fit->rms_residual = fit.rms_residual;
        out_fit->n_support_vertices = fit.n_support_vertices;
        return SR_OK;
    } catch (const spherereg::Error& e) {
        return fail(e);
    } catch (const std::exception& e) {
        return fail(e);
    }
}

sr_status sr_chamfer(const sr_mesh* pred, const sr_mesh* gt, double spacing_mm,
                     double cutoff_mm, uint64_t seed, char** out_report_json) {
    if (!pred || !gt) {
        g_last_error = "pred/gt is NULL";
        return SR_ERR_INVALID_ARGUMENT;
    }
    try {
        const auto report = spherereg::mesh::chamfer_distance(pred->mesh, gt->mesh,
                                                              spacing_mm, cutoff_mm, seed);
        spherereg::pipeline::Json doc{
            {"cd_mm", report.cd},
            {"mean_pred_to_gt_mm", report.mean_pred_to_gt},
            {"mean_gt_to_pred_mm", report.mean_gt_to_pred},
            {"outlier_fraction", report.outlier_fraction},
            {"sample_spacing_mm", report.sample_spacing}};
        return emit_json(doc, out_report_json);
    } catch (const spherereg::Error& e) {
        return fail(e);
    } catch (const std::exception& e) {
        return fail(e);
    }
}

// ---------------------------------------------------------------------------
// Pipeline runners
// ---------------------------------------------------------------------------

sr_status sr_detect_run(const char* config_json, char** out_json) {
    try {
        const auto result = spherereg::pipeline::run_detect(parse_config(config_json));
        const sr_status status = emit_json(result, out_json);
        if (status != SR_OK) return status;
        if (!result.at("failures").empty()) {
            std::string msg = "detection failed for";
            for (const auto& f : result.at("failures")) {
                msg += " (image " + f.at("image_id").dump() + ", marker " +
                       f.at("marker_id").dump() + ": " +
                       f.at("error").get<std::string>() + ")";
            }
            g_last_error = msg;
            return SR_ERR_DETECTION_FAILED;
        }
        return SR_OK;
    } catch (const spherereg::Error& e) {
        return fail(e);
    } catch (const std::exception& e) {
        return fail(e);
    }
}

sr_status sr_fit_spheres_run(const char* config_json, char** out_json) {
    try {
        return emit_json(spherereg::pipeline::run_fit_spheres(parse_config(config_json)),
                         out_json);
    } catch (const spherereg::Error& e) {
        return fail(e);
    } catch (const std::exception& e) {
        return fail(e);
    }
}

sr_status sr_register_run(const char* config_json, char** out_json) {
    try {
        const auto result = spherereg::pipeline::run_register(parse_config(config_json));
        const sr_status status = emit_json(result, out_json);
        if (status != SR_OK) return status;
        if (!result.value("converged", false)) {
            g_last_error = "registration did not converge (best iterate returned)";
            return SR_ERR_NOT_CONVERGED;
        }
        return SR_OK;
    } catch (const spherereg::Error& e) {
        return fail(e);
    } catch (const std::exception& e) {
        return fail(e);
    }
}

sr_status sr_evaluate_run(const char* config_json, char** out_json) {
    try {
        return emit_json(spherereg::pipeline::run_evaluate(parse_config(config_json)),
                         out_json);
    } catch (const spherereg::Error& e) {
        return fail(e);
    } catch (const std::exception& e) {
        return fail(e);
    }
}

sr_status sr_chamfer_run(const char* pred_path, const char* gt_path, double spacing_mm,
                         double cutoff_mm, uint64_t seed, int32_t threads,
                         char** out_json) {
    if (!pred_path || !gt_path) {
        g_last_error = "pred_path/gt_path is NULL";
        return SR_ERR_INVALID_ARGUMENT;
    }
    try {
        return emit_json(spherereg::pipeline::run_chamfer(pred_path, gt_path, spacing_mm,
                                                          cutoff_mm, seed, threads),
                         out_json);
    } catch (const spherereg::Error& e) {
        return fail(e);
    } catch (const std::exception& e) {
        return fail(e);
    }
}

sr_status sr_synth_run(const char* config_json, char** out_json) {
    try {
        return emit_json(spherereg::pipeline::run_synth(parse_config(config_json)),
                         out_json);
    } catch (const spherereg::Error& e) {
        return fail(e);
    } catch (const std::exception& e) {
        return fail(e);
    }
}

sr_status sr_write_file_atomic(const char* path, const char* contents) {
    if (!path || !contents) {
        g_last_error = "path/contents is NULL";
        return SR_ERR_INVALID_ARGUMENT;
    }
    try {
        spherereg::pipeline::write_file_atomic(path, contents);
        return SR_OK;
    } catch (const spherereg::Error& e) {
        return fail(e);
    } catch (const std::exception& e) {
        return fail(e);
    }
}

}  // extern "C"
