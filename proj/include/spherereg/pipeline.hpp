#pragma once

/**
 * @file pipeline.hpp
 * @brief JSON-driven pipeline runners behind the CLI and the C API:
 *        detect, fit-spheres, register, evaluate, chamfer and synth.
 *
 * All structured I/O is JSON; images are binary PGM/PPM and meshes ASCII
 * PLY/OBJ. Runners are deterministic for a given config + seed, and every
 * file write goes through an atomic temp-file + rename.
 */

#include <json.hpp>

#include <cstdint>
#include <string>

namespace spherereg::pipeline {

using Json = nlohmann::ordered_json;

/// Writes contents to path via a temp file in the same directory plus an
/// atomic rename, so failures never leave partial output behind.
void write_file_atomic(const std::string& path, const std::string& contents);

Json load_json_file(const std::string& path);

/// Runs per-(image, marker) detection over the configured images and masks.
/// The result carries "detections" plus a "failures" list; callers treat a
/// non-empty failure list as exit code 2.
Json run_detect(const Json& config);

/// Radius-constrained ICP sphere fits on a scan mesh; returns markers JSON.
Json run_fit_spheres(const Json& config);

/// Full registration: correspondence matching, initialization, LM
/// refinement and (when control markers are configured) evaluation.
/// "converged": false in the result maps to exit code 4.
Json run_register(const Json& config);

/// Re-computes the evaluation report for an existing solution.
Json run_evaluate(const Json& config);

/// Chamfer distance between two mesh files.
Json run_chamfer(const std::string& pred_path, const std::string& gt_path,
                 double spacing, double cutoff, std::uint64_t seed, int threads);

/// Generates a self-consistent synthetic dataset under config["out_dir"]
/// and returns a manifest of the written files.
Json run_synth(const Json& config);

/// One-line, Table-style registration report used by the CLI.
std::string format_report_row(const Json& evaluation);

}  // namespace spherereg::pipeline
