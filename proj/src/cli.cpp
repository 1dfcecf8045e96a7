#include "tlpatch/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "tlpatch/compositor.hpp"
#include "tlpatch/config_json.hpp"
#include "tlpatch/data_io.hpp"
#include "tlpatch/detector.hpp"
#include "tlpatch/evaluator.hpp"
#include "tlpatch/trainer.hpp"

namespace tlpatch::cli {
namespace {

const std::vector<std::string> kCommands{"train", "evaluate", "apply", "export-print", "render-synthetic"};

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "out";
    std::string profile = "digital";
};

void add_common(CLI::App& app, Common& c)
{
    app.set_config("--config", "", "Flat key = value config file; command-line flags override it");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.add_option("--seed", c.seed, "Random seed");
    app.add_option("--out-dir", c.out_dir, "Output directory")->capture_default_str();
    app.add_option("--profile", c.profile, "Hyperparameter profile: digital or physical")
        ->check(CLI::IsMember({"digital", "physical"}))
        ->capture_default_str();
}

// Writes the fully resolved configuration next to the outputs.
void echo_config(const CLI::App& app, const fs::path& out_dir, const std::string& command)
{
    fs::create_directories(out_dir);
    std::ofstream out(out_dir / (command + "_config.ini"));
    out << app.config_to_str(true, false);
}

ClassMap resolve_class_map(const std::string& flag, const fs::path& dataset, const DetectorAdapter* adapter)
{
    if (!flag.empty()) {
        return load_class_map(flag);
    }
    if (!dataset.empty() && fs::exists(dataset / "classes.txt")) {
        return load_class_map(dataset / "classes.txt");
    }
    if (adapter != nullptr) {
        return adapter->class_map();
    }
    return synthetic_class_map();
}

void require_compatible(const ClassMap& data, const DetectorAdapter& adapter)
{
    if (data.names() != adapter.class_map().names()) {
        throw ConfigError("dataset class map does not match detector '" + adapter.name() + "' classes");
    }
}

std::unique_ptr<DetectorAdapter> build_detector(const std::string& name, const std::string& options)
{
    nlohmann::json opts = nlohmann::json::object();
    if (!options.empty()) {
        try {
            opts = nlohmann::json::parse(options);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("--detector-options is not valid JSON: ") + e.what());
        }
    }
    return make_detector(name, opts);
}

// Parses argv; prints the command's help and returns false when it was requested.
bool parse_args(CLI::App& app, int argc, const char* const* argv)
{
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return false;
    }
    return true;
}

struct Overrides {
    std::optional<double> alpha, beta, gamma, delta, lr, scale_lo, scale_hi, eval_scale;
    std::optional<int> pgd_steps, epochs, patch_side;
    std::optional<long> max_updates;
    std::optional<bool> eot, reset_moments;
    std::optional<std::string> init, update_rule, suppress_channel, suppression_mode;

    void add_to(CLI::App& app)
    {
        app.add_option("--alpha", alpha, "Weight of the classification loss");
        app.add_option("--beta", beta, "Weight of the localisation loss");
        app.add_option("--gamma", gamma, "Weight of the total variation loss");
        app.add_option("--delta", delta, "Weight of the colour suppression loss");
        app.add_option("--lr", lr, "Learning rate");
        app.add_option("--pgd-steps", pgd_steps, "Updates per ground-truth box");
        app.add_option("--scale-lo", scale_lo, "Lower bound of the patch/box width ratio");
        app.add_option("--scale-hi", scale_hi, "Upper bound of the patch/box width ratio");
        app.add_option("--eval-scale", eval_scale, "Patch/box width ratio used for evaluation");
        app.add_option("--epochs", epochs, "Passes over the dataset");
        app.add_option("--patch-side", patch_side, "Patch side in pixels");
        app.add_option("--max-updates", max_updates, "Cap on total optimizer steps (0 = none)");
        app.add_option("--eot", eot, "Expectation over transformations on/off");
        app.add_option("--reset-moments", reset_moments, "Reset Adam moments for every box");
        app.add_option("--init", init, "Patch init: gray or uniform_random");
        app.add_option("--update-rule", update_rule, "adam or sign");
        app.add_option("--suppress-channel", suppress_channel, "green or red");
        app.add_option("--suppression-mode", suppression_mode, "dominance or raw_channel");
    }

    void apply(AttackConfig& cfg) const
    {
        if (alpha) cfg.alpha = *alpha;
        if (beta) cfg.beta = *beta;
        if (gamma) cfg.gamma = *gamma;
        if (delta) cfg.delta = *delta;
        if (lr) cfg.learning_rate = *lr;
        if (pgd_steps) cfg.pgd_steps = *pgd_steps;
        if (scale_lo) cfg.scale_range.lo = *scale_lo;
        if (scale_hi) cfg.scale_range.hi = *scale_hi;
        if (eval_scale) cfg.eval_scale = *eval_scale;
        if (epochs) cfg.epochs = *epochs;
        if (patch_side) cfg.patch_side = *patch_side;
        if (max_updates) cfg.max_updates = *max_updates;
        if (eot) cfg.eot.enabled = *eot;
        if (reset_moments) cfg.reset_moments_per_box = *reset_moments;
        if (init) cfg.init = parse_patch_init(*init);
        if (update_rule) cfg.update_rule = parse_update_rule(*update_rule);
        if (suppress_channel) cfg.suppress_channel = parse_suppress_channel(*suppress_channel);
        if (suppression_mode) cfg.suppression_mode = parse_suppression_mode(*suppression_mode);
    }
};

int cmd_train(int argc, const char* const* argv)
{
    CLI::App app{"Train a universal adversarial patch", "tlpatch train"};
    Common common;
    Overrides ov;
    std::string dataset, class_map, mapping = "red:green", detector = "context_blob", detector_options;
    add_common(app, common);
    app.add_option("--dataset", dataset, "Training dataset directory")->required();
    app.add_option("--class-map", class_map, "classes.txt (default: <dataset>/classes.txt)");
    app.add_option("--mapping", mapping, "Target mapping, e.g. red:green")->capture_default_str();
    app.add_option("--detector", detector, "Detector adapter name")->capture_default_str();
    app.add_option("--detector-options", detector_options, "Adapter options as a JSON object");
    ov.add_to(app);
    if (!parse_args(app, argc, argv)) {
        return kOk;
    }

    AttackConfig cfg = profile_by_name(common.profile);
    ov.apply(cfg);
    if (common.seed) cfg.seed = *common.seed;
    cfg.validate();

    const auto adapter = build_detector(detector, detector_options);
    const ClassMap classes = resolve_class_map(class_map, dataset, adapter.get());
    require_compatible(classes, *adapter);
    const TargetClassMapping m = TargetClassMapping::parse(mapping, classes);
    const auto data = load_dataset(dataset, classes);

    const fs::path out(common.out_dir);
    echo_config(app, out, "train");
    std::ofstream log(out / "train_log.ndjson");
    spdlog::info("training on {} images ({} profile)", data.size(), common.profile);
    const TrainResult result = train(data, *adapter, m, cfg, [&log](const StepRecord& rec) {
        log << to_json(rec).dump() << '\n';
    });

    PatchBundle bundle{result.patch, {}};
    bundle.metadata.class_map = classes.map_name();
    bundle.metadata.class_names = classes.names();
    bundle.metadata.mapping = m;
    bundle.metadata.config = cfg;
    bundle.metadata.training_set = fs::absolute(dataset).lexically_normal().string();
    save_patch(bundle, out / "patch");

    const nlohmann::json summary = {{"steps", result.history.size()},
                                    {"boxes_attacked", result.boxes_attacked},
                                    {"boxes_irrelevant", result.boxes_irrelevant},
                                    {"boxes_unplaceable", result.boxes_unplaceable},
                                    {"truncated", result.truncated},
                                    {"final_total_loss",
                                     result.history.empty() ? 0.0 : result.history.back().loss.total}};
    std::ofstream(out / "train_summary.json") << summary.dump(2) << '\n';
    spdlog::info("wrote {} ({} steps)", (out / "patch").string(), result.history.size());
    return kOk;
}

int cmd_evaluate(int argc, const char* const* argv)
{
    CLI::App app{"Evaluate clean and patched detection", "tlpatch evaluate"};
    Common common;
    Overrides ov;
    std::string dataset, class_map, patch_dir, mapping, detector = "context_blob", detector_options;
    bool overlays = false;
    add_common(app, common);
    app.add_option("--dataset", dataset, "Evaluation dataset directory")->required();
    app.add_option("--class-map", class_map, "classes.txt (default: <dataset>/classes.txt)");
    app.add_option("--patch", patch_dir, "Patch bundle directory (omit for a clean baseline)");
    app.add_option("--mapping", mapping, "Target mapping (default: from the patch, else red:green)");
    app.add_option("--detector", detector, "Detector adapter name")->capture_default_str();
    app.add_option("--detector-options", detector_options, "Adapter options as a JSON object");
    app.add_flag("--overlays", overlays, "Write per-image overlays with boxes and labels");
    ov.add_to(app);
    if (!parse_args(app, argc, argv)) {
        return kOk;
    }

    const auto adapter = build_detector(detector, detector_options);
    const ClassMap classes = resolve_class_map(class_map, dataset, adapter.get());
    require_compatible(classes, *adapter);

    AttackConfig cfg = profile_by_name(common.profile);
    std::optional<PatchBundle> bundle;
    if (!patch_dir.empty()) {
        bundle = load_patch(patch_dir);
        cfg.eval_scale = bundle->metadata.config.eval_scale;
    }
    ov.apply(cfg);
    if (common.seed) cfg.seed = *common.seed;
    cfg.validate();

    TargetClassMapping m;
    if (!mapping.empty()) {
        m = TargetClassMapping::parse(mapping, classes);
    } else if (bundle) {
        m = bundle->metadata.mapping;
    } else {
        m = TargetClassMapping::parse("red:green", classes);
    }
    const auto data = load_dataset(dataset, classes);
    const AttackReport report = evaluate(data, *adapter, bundle ? &bundle->patch : nullptr, m, cfg);

    const fs::path out(common.out_dir);
    echo_config(app, out, "evaluate");
    nlohmann::json j = to_json(report, classes);
    j["seed"] = cfg.seed;
    j["eval_scale"] = cfg.eval_scale;
    std::ofstream(out / "report.json") << j.dump(2) << '\n';

    if (overlays) {
        fs::create_directories(out / "overlays");
        for (std::size_t i = 0; i < data.size(); ++i) {
            const ImageRecord& rec = report.images[i];
            write_overlay(data[i].image, data[i].gt, rec.detections_clean, classes,
                          out / "overlays" / (rec.image_id + "_clean.png"));
            if (bundle) {
                write_overlay(composite_under_targets(data[i], bundle->patch, m, cfg.eval_scale), data[i].gt,
                              rec.detections_patched, classes, out / "overlays" / (rec.image_id + "_patched.png"));
            }
        }
    }
    spdlog::info("targets {}  flip {:.3f}  correct {:.3f}  vanish {:.3f}  fabrication {:.3f}", report.n_targets(),
                 report.flip_rate(), report.correct_rate(), report.vanish_rate(), report.fabrication_rate());
    return kOk;
}

int cmd_apply(int argc, const char* const* argv)
{
    CLI::App app{"Composite a patch under the targeted lights of a dataset", "tlpatch apply"};
    Common common;
    std::string dataset, class_map, patch_dir, mapping;
    std::optional<double> scale;
    TransformParams t;
    add_common(app, common);
    app.add_option("--dataset", dataset, "Dataset directory")->required();
    app.add_option("--class-map", class_map, "classes.txt (default: <dataset>/classes.txt)");
    app.add_option("--patch", patch_dir, "Patch bundle directory")->required();
    app.add_option("--mapping", mapping, "Target mapping (default: from the patch)");
    app.add_option("--scale", scale, "Patch/box width ratio (default: the patch's eval scale)");
    app.add_option("--rot-x", t.rot_x_deg, "Tilt about x, degrees");
    app.add_option("--rot-y", t.rot_y_deg, "Tilt about y, degrees");
    app.add_option("--rot-z", t.rot_z_deg, "In-plane rotation, degrees");
    app.add_option("--brightness", t.brightness, "Brightness factor");
    app.add_option("--dx", t.translate_dx, "Horizontal offset, pixels");
    app.add_option("--dy", t.translate_dy, "Vertical offset, pixels");
    if (!parse_args(app, argc, argv)) {
        return kOk;
    }

    const PatchBundle bundle = load_patch(patch_dir);
    const ClassMap classes = resolve_class_map(class_map, dataset, nullptr);
    const TargetClassMapping m = mapping.empty() ? bundle.metadata.mapping : TargetClassMapping::parse(mapping, classes);
    const double s = scale.value_or(bundle.metadata.config.eval_scale);
    const auto data = load_dataset(dataset, classes);

    const fs::path out = fs::path(common.out_dir) / "applied";
    fs::create_directories(out);
    echo_config(app, common.out_dir, "apply");
    for (const AnnotatedImage& sample : data) {
        Image img = sample.image;
        for (const GroundTruth& gt : sample.gt) {
            if (!m.in_domain(gt.class_id)) {
                continue;
            }
            if (const auto placement = placement_for(gt.box, img.width(), img.height(), s)) {
                PatchWarp::build(bundle.patch.side(), img.width(), img.height(), *placement, t).composite(bundle.patch, img);
            }
        }
        write_image(img, out / (sample.image_id + ".png"));
    }
    spdlog::info("wrote {} composited images to {}", data.size(), out.string());
    return kOk;
}

int cmd_export_print(int argc, const char* const* argv)
{
    CLI::App app{"Export a patch for printing at physical size", "tlpatch export-print"};
    Common common;
    std::string patch_dir;
    double light_width = 0.30;
    double factor = 2.0;
    int dpi = 150;
    add_common(app, common);
    app.add_option("--patch", patch_dir, "Patch bundle directory")->required();
    app.add_option("--light-width", light_width, "Traffic light housing width, metres")->capture_default_str();
    app.add_option("--factor", factor, "Patch side as a multiple of the light width")->capture_default_str();
    app.add_option("--dpi", dpi, "Print resolution")->capture_default_str();
    if (!parse_args(app, argc, argv)) {
        return kOk;
    }

    const PatchBundle bundle = load_patch(patch_dir);
    echo_config(app, common.out_dir, "export-print");
    const PrintPlan plan = export_print(bundle.patch, light_width, factor, dpi, common.out_dir);
    std::cout << (fs::path(common.out_dir) / (plan.file_stem + ".png")).string() << '\n';
    return kOk;
}

int cmd_render_synthetic(int argc, const char* const* argv)
{
    CLI::App app{"Render synthetic traffic-light scenes", "tlpatch render-synthetic"};
    Common common;
    int n = 100;
    SceneOptions scene;
    add_common(app, common);
    app.add_option("--n", n, "Number of scenes")->capture_default_str();
    app.add_option("--min-lights", scene.min_lights, "Minimum lights per scene")->capture_default_str();
    app.add_option("--max-lights", scene.max_lights, "Maximum lights per scene")->capture_default_str();
    app.add_option("--red-fraction", scene.red_fraction, "Probability a light is red")->capture_default_str();
    if (!parse_args(app, argc, argv)) {
        return kOk;
    }

    std::mt19937_64 rng(common.seed.value_or(0));
    const auto scenes = render_synthetic(n, scene, rng);
    save_dataset(scenes, common.out_dir, synthetic_class_map());
    echo_config(app, common.out_dir, "render-synthetic");
    spdlog::info("rendered {} scenes into {}", scenes.size(), common.out_dir);
    return kOk;
}

void usage(std::ostream& out)
{
    out << "usage: tlpatch <command> [flags]\n\ncommands:\n"
           "  train             train a universal patch\n"
           "  evaluate          clean / patched evaluation report\n"
           "  apply             composite a patch into dataset images\n"
           "  export-print      physical-size raster for printing\n"
           "  render-synthetic  synthetic traffic-light scenes\n\n"
           "run `tlpatch <command> --help` for the flags of a command\n";
}

}  // namespace

int run(int argc, const char* const* argv)
{
    if (argc < 2) {
        usage(std::cerr);
        return kConfigError;
    }
    const std::string command = argv[1];
    if (command == "--help" || command == "-h") {
        usage(std::cout);
        return kOk;
    }
    // Sub-parsers see the command name as argv[0].
    const int sub_argc = argc - 1;
    const char* const* sub_argv = argv + 1;
    try {
        if (command == "train") return cmd_train(sub_argc, sub_argv);
        if (command == "evaluate") return cmd_evaluate(sub_argc, sub_argv);
        if (command == "apply") return cmd_apply(sub_argc, sub_argv);
        if (command == "export-print") return cmd_export_print(sub_argc, sub_argv);
        if (command == "render-synthetic") return cmd_render_synthetic(sub_argc, sub_argv);
        std::cerr << "unknown command '" << command << "'\n";
        usage(std::cerr);
        return kConfigError;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return kOk;
        }
        std::cerr << "error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kNumericError;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
}

int run(const std::vector<std::string>& args)
{
    std::vector<const char*> argv{"tlpatch"};
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace tlpatch::cli
