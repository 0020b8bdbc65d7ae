// fixquant command-line front end: eval | train | sweep, each driven by a
// JSON config file with a handful of flag overrides.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fixquant/data.hpp"
#include "fixquant/explore.hpp"
#include "fixquant/graph.hpp"
#include "fixquant/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fixquant;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

/// Raised by the fail-fast validation pass (config/file problems) as opposed
/// to failures during compute.
struct ValidationError : Error {
    using Error::Error;
};

template <typename F>
auto validated(F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        throw ValidationError(e.what());
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

struct DatasetPair {
    LabeledDataset train;
    LabeledDataset test;
    bool has_train = false;
};

DatasetPair load_dataset(const json& jd) {
    const std::string kind = jd.at("kind").get<std::string>();
    DatasetPair out;
    if (kind == "idx") {
        if (jd.contains("train_images")) {
            out.train = load_idx(jd.at("train_images").get<std::string>(),
                                 jd.at("train_labels").get<std::string>());
            out.has_train = true;
        }
        if (jd.contains("images"))
            out.test = load_idx(jd.at("images").get<std::string>(),
                                jd.at("labels").get<std::string>());
        else
            out.test = load_idx(jd.at("test_images").get<std::string>(),
                                jd.at("test_labels").get<std::string>());
        return out;
    }
    if (kind == "synthetic-digits") {
        const auto seed = jd.value("seed", std::uint64_t{0});
        const auto rng = make_random_source(seed);
        if (jd.contains("train_samples")) {
            out.train = synth_digits(jd.at("train_samples").get<int>(),
                                     rng.derive(0).seed());
            out.has_train = true;
        }
        const int test_samples = jd.contains("test_samples")
                                     ? jd.at("test_samples").get<int>()
                                     : jd.at("samples").get<int>();
        out.test = synth_digits(test_samples, rng.derive(1).seed());
        return out;
    }
    if (kind == "blobs") {
        const auto seed = jd.value("seed", std::uint64_t{0});
        const auto rng = make_random_source(seed);
        const int classes = jd.at("classes").get<int>();
        const int dims = jd.at("dims").get<int>();
        const double separation = jd.value("separation", 6.0);
        const double sigma = jd.value("sigma", 1.0);
        if (jd.contains("train_samples_per_class")) {
            out.train = synth_gaussian_blobs(
                classes, jd.at("train_samples_per_class").get<int>(), dims,
                rng.derive(0).seed(), separation, sigma);
            out.has_train = true;
        }
        const int per_class = jd.contains("test_samples_per_class")
                                  ? jd.at("test_samples_per_class").get<int>()
                                  : jd.at("samples_per_class").get<int>();
        out.test = synth_gaussian_blobs(classes, per_class, dims, rng.derive(1).seed(),
                                        separation, sigma);
        return out;
    }
    throw Error("unknown dataset kind '" + kind + "'");
}

struct LoadedRun {
    json config;
    ModelSpec model;
    QuantizerMaps maps;
    std::optional<WeightStore> weights;
    DatasetPair data;
    std::uint64_t seed = 0;
    IntrinsicGranularity granularity = IntrinsicGranularity::EveryOp;
    std::string out_dir;
    std::uint64_t config_hash = 0;
};

/// Fail-fast validation pass: every referenced file must exist and parse
/// before any compute starts.
LoadedRun load_run(const std::string& config_path,
                   const std::optional<std::uint64_t>& seed_override,
                   const std::string& out_override, bool weights_required) {
    LoadedRun run;
    const std::string config_text = read_file(config_path);
    run.config = json::parse(config_text, nullptr, false);
    if (run.config.is_discarded())
        throw Error("malformed JSON in config " + config_path);

    const std::string model_text =
        read_file(run.config.at("model").get<std::string>());
    run.model = parse_model_spec(model_text);

    std::string maps_text;
    if (run.config.contains("quantizer_maps")) {
        maps_text = read_file(run.config["quantizer_maps"].get<std::string>());
        run.maps = parse_quantizer_maps(maps_text);
    }
    if (run.config.contains("weights"))
        run.weights = load_weight_store(run.config["weights"].get<std::string>());
    else if (weights_required)
        throw Error("config must name a weights directory");

    run.data = load_dataset(run.config.at("dataset"));
    run.seed = seed_override ? *seed_override
                             : run.config.value("seed", std::uint64_t{0});
    if (run.config.contains("intrinsic_granularity"))
        run.granularity =
            parse_granularity(run.config["intrinsic_granularity"].get<std::string>());
    run.out_dir = !out_override.empty() ? out_override
                                        : run.config.value("out", std::string("out"));
    run.config_hash =
        fnv1a(std::to_string(run.seed), fnv1a(maps_text, fnv1a(model_text)));
    return run;
}

json resolution_report_json(const BuiltNetwork& net) {
    json report = json::array();
    for (const auto& e : net.report)
        report.push_back({{"layer", e.layer_id},
                          {"slot", e.slot},
                          {"pattern", e.pattern},
                          {"quantizer", e.quantizer}});
    return report;
}

void write_report(const json& j, const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

int cmd_eval(const std::string& config_path, std::optional<std::uint64_t> seed,
             const std::string& out_override) {
    LoadedRun run =
        validated([&] { return load_run(config_path, seed, out_override, true); });

    LabeledDataset eval_set = std::move(run.data.test);
    if (run.config.contains("eval_subset_fraction"))
        eval_set = subset(eval_set, run.config["eval_subset_fraction"].get<double>(),
                          run.seed);

    const BuiltNetwork baseline =
        build_network(run.model, QuantizerMaps{}, *run.weights, run.granularity);
    const BuiltNetwork net =
        build_network(run.model, run.maps, *run.weights, run.granularity);
    const double base_acc = evaluate(baseline, eval_set);
    const double acc = evaluate(net, eval_set);

    const json report = {
        {"absolute_accuracy", acc},
        {"baseline_accuracy", base_acc},
        {"relative_accuracy_vs_floatbaseline", base_acc > 0 ? acc / base_acc : 0.0},
        {"samples", eval_set.size()},
        {"resolution_report", resolution_report_json(net)},
        {"intrinsic_granularity", granularity_name(run.granularity)},
        {"config_hash", run.config_hash},
        {"seed", run.seed},
    };
    write_report(report, fs::path(run.out_dir) / "eval_report.json");
    std::cout << "accuracy " << acc << " (baseline " << base_acc << ") -> "
              << (fs::path(run.out_dir) / "eval_report.json").string() << '\n';
    return kExitOk;
}

TrainConfig parse_train_config(const json& jt, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.learning_rate = jt.at("learning_rate").get<double>();
    if (cfg.learning_rate <= 0.0) throw Error("learning_rate must be > 0");
    cfg.epochs = jt.at("epochs").get<int>();
    cfg.batch_size = jt.at("batch_size").get<std::size_t>();
    cfg.l2_lambda = jt.value("l2_lambda", 0.0);
    if (jt.contains("gradient_quantizer"))
        cfg.gradient_quantizer =
            parse_quantizer(jt["gradient_quantizer"].get<std::string>());
    cfg.seed = seed;
    return cfg;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed,
              const std::string& out_override) {
    LoadedRun run =
        validated([&] { return load_run(config_path, seed, out_override, false); });
    if (!run.data.has_train)
        throw ValidationError("train command needs a training dataset");
    const TrainConfig cfg =
        validated([&] { return parse_train_config(run.config.at("train"), run.seed); });

    WeightStore weights =
        run.weights ? *run.weights : init_weights(run.model, run.seed);
    BuiltNetwork net = build_network(run.model, run.maps, weights, run.granularity);

    const TrainLog log = train(net, run.data.train, run.data.test, cfg);

    const fs::path out_dir(run.out_dir);
    fs::create_directories(out_dir);
    write_step_log_csv(log, (out_dir / "train_steps.csv").string());
    write_epoch_log_csv(log, (out_dir / "train_epochs.csv").string());
    save_weight_store((out_dir / "weights").string(), net.export_weights());
    const double final_acc =
        log.epochs.empty() ? evaluate(net, run.data.test) : log.epochs.back().test_accuracy;
    const json report = {
        {"final_test_accuracy", final_acc},
        {"epochs", cfg.epochs},
        {"steps", log.steps.size()},
        {"gradient_quantizer", cfg.gradient_quantizer
                                   ? cfg.gradient_quantizer->descriptor()
                                   : "none"},
        {"resolution_report", resolution_report_json(net)},
        {"config_hash", run.config_hash},
        {"seed", run.seed},
    };
    write_report(report, out_dir / "train_report.json");
    std::cout << "final test accuracy " << final_acc << " -> " << out_dir.string()
              << '\n';
    return kExitOk;
}

int cmd_sweep(const std::string& config_path, std::optional<std::uint64_t> seed,
              const std::string& out_override, int jobs) {
    LoadedRun run =
        validated([&] { return load_run(config_path, seed, out_override, true); });
    const SweepPlan plan = validated(
        [&] { return load_sweep_plan(run.config.at("plan").get<std::string>()); });

    const fs::path out_dir(run.out_dir);
    const fs::path grid_path = out_dir / "sweep_grid.csv";
    // resume: cells recorded by a previous run with the identical plan are reused
    const auto known = load_sweep_csv(grid_path.string(), plan_hash(plan));

    const SweepResult result =
        run_sweep(plan, run.model, *run.weights, run.data.test, run.granularity, jobs,
                  known ? &*known : nullptr);

    fs::create_directories(out_dir);
    write_sweep_csv(result, grid_path.string());
    write_sweep_summary_json(result, (out_dir / "sweep_summary.json").string());
    std::cout << "bottleneck: " << result.bottleneck
              << (result.bottleneck_unsatisfiable ? " (unsatisfiable)" : "") << " -> "
              << out_dir.string() << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fixed-point quantization simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    int jobs = 1;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run configuration")->required();
        cmd->add_option("--seed", seed, "override the config seed");
        cmd->add_option("--out", out_dir, "override the output directory");
    };
    auto* eval_cmd = app.add_subcommand("eval", "quantized inference accuracy");
    add_common(eval_cmd);
    auto* train_cmd = app.add_subcommand("train", "SGD training run");
    add_common(train_cmd);
    auto* sweep_cmd = app.add_subcommand("sweep", "per-subunit design-space sweep");
    add_common(sweep_cmd);
    sweep_cmd->add_option("--jobs", jobs, "parallel sweep cells")
        ->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(eval_cmd)) return cmd_eval(config_path, seed, out_dir);
        if (app.got_subcommand(train_cmd)) return cmd_train(config_path, seed, out_dir);
        return cmd_sweep(config_path, seed, out_dir, jobs);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}
