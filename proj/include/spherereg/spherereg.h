#ifndef SPHEREREG_H
#define SPHEREREG_H

/*
 * C API of the spherereg shared library.
 *
 * Every function returns a status code; SR_OK means success. On failure,
 * sr_last_error_message() returns a human-readable description for the
 * calling thread. Objects are opaque handles released with their _free
 * function; strings returned through char** are released with
 * sr_string_free().
 *
 * Pipeline entry points take a JSON configuration string and hand back a
 * JSON document; the schemas are documented in the project README.
 */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sr_status {
    SR_OK = 0,
    SR_ERR_INVALID_ARGUMENT = 1,
    SR_ERR_IO = 2,
    SR_ERR_PARSE = 3,
    SR_ERR_UNSUPPORTED_FORMAT = 4,
    SR_ERR_POINT_BEHIND_CAMERA = 5,
    SR_ERR_DEGENERATE_CONIC = 6,
    SR_ERR_NOT_AN_ELLIPSE = 7,
    SR_ERR_EMPTY_MASK = 8,
    SR_ERR_FIT_FAILED = 9,
    SR_ERR_NO_EDGES = 10,
    SR_ERR_RANSAC_FAILED = 11,
    SR_ERR_EMPTY_MESH = 12,
    SR_ERR_INSUFFICIENT_SUPPORT = 13,
    SR_ERR_DIVERGED = 14,
    SR_ERR_PNP_DEGENERATE = 15,
    SR_ERR_NO_CONSISTENT_MATCH = 16,
    SR_ERR_NOT_CONVERGED = 17,
    SR_ERR_SINGULAR_NORMAL_EQUATIONS = 18,
    SR_ERR_MISSING_CONTROL_DETECTIONS = 19,
    SR_ERR_PLACEMENT_FAILED = 20,
    SR_ERR_DETECTION_FAILED = 21,
    SR_ERR_INTERNAL = 22
} sr_status;

/* Library version as "major.minor.patch". */
const char* sr_version(void);

/* Message for the most recent failure on this thread; never NULL. */
const char* sr_last_error_message(void);

/* Frees strings returned through char** out parameters. */
void sr_string_free(char* str);

/* ------------------------------------------------------------------ */
/* Meshes                                                               */
/* ------------------------------------------------------------------ */

typedef struct sr_mesh sr_mesh;

sr_status sr_mesh_load(const char* path, sr_mesh** out_mesh);
sr_status sr_mesh_save(const sr_mesh* mesh, const char* path);
void sr_mesh_free(sr_mesh* mesh);
sr_status sr_mesh_vertex_count(const sr_mesh* mesh, uint64_t* out_count);
sr_status sr_mesh_triangle_count(const sr_mesh* mesh, uint64_t* out_count);

/* Radius-constrained ICP sphere fit. */
typedef struct sr_sphere_fit {
    double center[3];   /* mm, mesh frame */
    double radius;      /* mm, as requested */
    double rms_residual;
    int32_t n_support_vertices;
} sr_sphere_fit;

sr_status sr_mesh_fit_sphere(const sr_mesh* mesh, double radius,
                             const double init_center[3], int32_t max_iters,
                             sr_sphere_fit* out_fit);

/* Symmetric Chamfer distance between two meshes; returns a JSON report. */
sr_status sr_chamfer(const sr_mesh* pred, const sr_mesh* gt, double spacing_mm,
                     double cutoff_mm, uint64_t seed, char** out_report_json);

/* ------------------------------------------------------------------ */
/* Pipeline runners (JSON in, JSON out)                                 */
/* ------------------------------------------------------------------ */

/* Ellipse-outline detection. A non-empty "failures" list in the result is
 * reported as SR_ERR_DETECTION_FAILED while *out_json stays valid. */
sr_status sr_detect_run(const char* config_json, char** out_json);

sr_status sr_fit_spheres_run(const char* config_json, char** out_json);

/* Registration. SR_ERR_NOT_CONVERGED still produces the best iterate in
 * *out_json. */
sr_status sr_register_run(const char* config_json, char** out_json);

sr_status sr_evaluate_run(const char* config_json, char** out_json);

sr_status sr_chamfer_run(const char* pred_path, const char* gt_path, double spacing_mm,
                         double cutoff_mm, uint64_t seed, int32_t threads,
                         char** out_json);

/* Writes a synthetic dataset under the configured out_dir and returns the
 * manifest. */
sr_status sr_synth_run(const char* config_json, char** out_json);

/* Atomic file write helper (temp file + rename), exposed so CLI output
 * honors the same no-partial-write guarantee as the library. */
sr_status sr_write_file_atomic(const char* path, const char* contents);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* SPHEREREG_H */
