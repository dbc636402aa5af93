// spherereg command-line tool. Talks to the library exclusively through the
// C API in spherereg/spherereg.h; flag parsing and config composition happen
// here, all computation happens behind the shared library boundary.

#include <CLI11.hpp>
#include <json.hpp>
#include <spherereg/spherereg.h>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

using Json = nlohmann::ordered_json;

constexpr int kExitFailure = 1;
constexpr int kExitDetectOrParse = 2;
constexpr int kExitNoConsistentMatch = 3;
constexpr int kExitNotConverged = 4;

int exit_code_for(sr_status status) {
    switch (status) {
        case SR_OK: return 0;
        case SR_ERR_IO:
        case SR_ERR_PARSE:
        case SR_ERR_UNSUPPORTED_FORMAT:
        case SR_ERR_DETECTION_FAILED: return kExitDetectOrParse;
        case SR_ERR_NO_CONSISTENT_MATCH: return kExitNoConsistentMatch;
        case SR_ERR_NOT_CONVERGED: return kExitNotConverged;
        default: return kExitFailure;
    }
}

Json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        std::cerr << "error: cannot open config " << path << "\n";
        std::exit(kExitDetectOrParse);
    }
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << path << ": " << e.what() << "\n";
        std::exit(kExitDetectOrParse);
    }
}

/// Rebase relative paths in a config against the config file's directory,
/// so configs are runnable from anywhere.
void rebase_path(Json& node, const std::string& base) {
    if (!node.is_string()) return;
    const std::string value = node.get<std::string>();
    if (value.empty() || value.front() == '/') return;
    node = base + "/" + value;
}

std::string dirname_of(const std::string& path) {
    const auto pos = path.find_last_of('/');
    return pos == std::string::npos ? std::string(".") : path.substr(0, pos);
}

int write_output(const std::string& path, const char* json) {
    if (path.empty() || path == "-") {
        std::fputs(json, stdout);
        return 0;
    }
    if (sr_write_file_atomic(path.c_str(), json) != SR_OK) {
        std::cerr << "error: " << sr_last_error_message() << "\n";
        return kExitFailure;
    }
    return 0;
}

struct RunResult {
    sr_status status = SR_OK;
    std::string json;
};

template <typename Runner>
RunResult run_with_config(const Json& config, Runner runner) {
    char* out = nullptr;
    RunResult result;
    result.status = runner(config.dump().c_str(), &out);
    if (out) {
        result.json = out;
        sr_string_free(out);
    }
    return result;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sphere-marker scene registration pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    std::string synth_out_dir;
    bool synth_images = false;
    synth->add_option("--config", config_path, "Scene config JSON (optional)");
    synth->add_option("--out-dir", synth_out_dir, "Output directory")->required();
    synth->add_option("--seed", seed, "Random seed");
    synth->add_flag("--images", synth_images, "Also render PGM images and masks");

    // ---- detect ----
    auto* detect = app.add_subcommand("detect", "Detect marker ellipse outlines");
    std::optional<int> outline_points;
    detect->add_option("--config", config_path, "Detect config JSON")->required();
    detect->add_option("--out", out_path, "Output detections JSON")->required();
    detect->add_option("--seed", seed, "Random seed");
    detect->add_option("--outline-points", outline_points,
                       "Outline points per detection (default 200)");
    detect->add_option("--threads", threads, "Worker thread cap");

    // ---- fit-spheres ----
    auto* fit = app.add_subcommand("fit-spheres", "Fit marker spheres to a scan mesh");
    fit->add_option("--config", config_path, "Fit-spheres config JSON")->required();
    fit->add_option("--out", out_path, "Output markers JSON")->required();

    // ---- register ----
    auto* reg = app.add_subcommand("register", "Register the scan to the posed images");
    bool estimate_scale = false;
    std::optional<int> init_image;
    reg->add_option("--config", config_path, "Register config JSON")->required();
    reg->add_option("--out", out_path, "Output solution JSON")->required();
    reg->add_flag("--estimate-scale", estimate_scale, "Jointly estimate an SfM scale");
    reg->add_option("--init-image", init_image, "Image id used for PnP initialization");
    reg->add_option("--seed", seed, "Random seed");
    reg->add_option("--threads", threads, "Worker thread cap");

    // ---- evaluate ----
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate an existing solution");
    evaluate->add_option("--config", config_path, "Evaluate config JSON")->required();
    evaluate->add_option("--out", out_path, "Output report JSON")->required();

    // ---- chamfer ----
    auto* chamfer = app.add_subcommand("chamfer", "Chamfer distance between two meshes");
    std::string pred_path, gt_path;
    double spacing = 0.1, cutoff = 20.0;
    chamfer->add_option("pred", pred_path, "Predicted mesh (PLY/OBJ)")->required();
    chamfer->add_option("gt", gt_path, "Ground-truth mesh (PLY/OBJ)")->required();
    chamfer->add_option("--spacing", spacing, "Sampling spacing in mm (default 0.1)");
    chamfer->add_option("--cutoff", cutoff, "Outlier cutoff in mm (default 20)");
    chamfer->add_option("--out", out_path, "Output report JSON");
    chamfer->add_option("--seed", seed, "Random seed");
    chamfer->add_option("--threads", threads, "Worker thread cap");

    CLI11_PARSE(app, argc, argv);

    if (synth->parsed()) {
        Json config = config_path.empty() ? Json::object() : load_config(config_path);
        config["out_dir"] = synth_out_dir;
        if (seed) config["seed"] = *seed;
        if (synth_images) {
            if (!config.contains("emit")) config["emit"] = Json::object();
            config["emit"]["images"] = true;
        }
        const auto result = run_with_config(config, sr_synth_run);
        if (result.status != SR_OK) {
            std::cerr << "error: " << sr_last_error_message() << "\n";
            return exit_code_for(result.status);
        }
        std::fputs(result.json.c_str(), stdout);
        return 0;
    }

    if (detect->parsed()) {
        Json config = load_config(config_path);
        const std::string base = dirname_of(config_path);
        for (auto& image : config.at("images")) {
            rebase_path(image.at("path"), base);
            for (auto& marker : image.at("markers")) {
                if (marker.contains("mask")) rebase_path(marker.at("mask"), base);
                if (marker.contains("masks")) {
                    for (auto& m : marker.at("masks")) rebase_path(m, base);
                }
            }
        }
        if (seed) config["seed"] = *seed;
        if (threads) config["threads"] = *threads;
        if (outline_points) {
            if (!config.contains("params")) config["params"] = Json::object();
            config["params"]["outline_points"] = *outline_points;
        }
        const auto result = run_with_config(config, sr_detect_run);
        if (!result.json.empty()) {
            const int write_status = write_output(out_path, result.json.c_str());
            if (write_status != 0) return write_status;
        }
        if (result.status != SR_OK) {
            std::cerr << "error: " << sr_last_error_message() << "\n";
            return exit_code_for(result.status);
        }
        return 0;
    }

    if (fit->parsed()) {
        Json config = load_config(config_path);
        rebase_path(config.at("mesh"), dirname_of(config_path));
        const auto result = run_with_config(config, sr_fit_spheres_run);
        if (result.status != SR_OK) {
            std::cerr << "error: " << sr_last_error_message() << "\n";
            return exit_code_for(result.status);
        }
        return write_output(out_path, result.json.c_str());
    }

    if (reg->parsed() || evaluate->parsed()) {
        Json config = load_config(config_path);
        const std::string base = dirname_of(config_path);
        for (const char* key : {"cameras", "poses", "detections", "markers", "solution"}) {
            if (config.contains(key)) rebase_path(config.at(key), base);
        }
        if (seed) config["seed"] = *seed;
        if (threads) config["threads"] = *threads;
        if (reg->parsed()) {
            if (estimate_scale) config["estimate_scale"] = true;
            if (init_image) config["init_image"] = *init_image;
        }
        const auto result = run_with_config(
            config, reg->parsed() ? sr_register_run : sr_evaluate_run);
        if (!result.json.empty()) {
            const int write_status = write_output(out_path, result.json.c_str());
            if (write_status != 0) return write_status;
            // Table-style row: pose source, radial (mm), reprojection (px).
            try {
                const Json doc = Json::parse(result.json);
                const Json eval = reg->parsed() ? doc.value("evaluation", Json()) : doc;
                if (eval.is_object()) {
                    std::printf("%-12s %24s %30s\n", "Pose source",
                                "Mean radial error (mm)", "Mean reprojection error (px)");
                    std::printf("%-12s %24.6f %30.6f\n",
                                eval.value("pose_source", std::string("-")).c_str(),
                                eval.value("mean_radial_error_mm", 0.0),
                                eval.value("mean_reproj_error_px", 0.0));
                }
            } catch (const nlohmann::json::exception&) {
                // report row is best-effort
            }
        }
        if (result.status != SR_OK) {
            std::cerr << "error: " << sr_last_error_message() << "\n";
            return exit_code_for(result.status);
        }
        return 0;
    }

    if (chamfer->parsed()) {
        char* out = nullptr;
        const sr_status status =
            sr_chamfer_run(pred_path.c_str(), gt_path.c_str(), spacing, cutoff,
                           seed.value_or(0), threads.value_or(1), &out);
        if (status != SR_OK) {
            std::cerr << "error: " << sr_last_error_message() << "\n";
            return exit_code_for(status);
        }
        std::string json = out ? out : "";
        sr_string_free(out);
        return write_output(out_path, json.c_str());
    }

    return kExitFailure;
}
