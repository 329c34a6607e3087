#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hypood/config.hpp"
#include "hypood/errors.hpp"
#include "hypood/runner.hpp"

namespace fs = std::filesystem;
using namespace hypood;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::optional<uint64_t> seed;
    std::vector<std::string> scorers;
};

ExperimentConfig load_with_overrides(const CommonOpts& opts) {
    ExperimentConfig cfg = load_experiment_config(opts.config_path);
    if (opts.seed) cfg.train.seed = *opts.seed;
    if (!opts.scorers.empty()) cfg.eval.scorers = opts.scorers;
    if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
    cfg.validate();
    return cfg;
}

MlpSpec resolve_spec(const ExperimentConfig& cfg, const ResolvedData& data) {
    MlpSpec spec = cfg.model;
    if (cfg.model_input_dim_auto) spec.input_dim = static_cast<int>(data.id_train.dim());
    spec.validate();
    if (spec.input_dim != static_cast<int>(data.id_train.dim()))
        throw ConfigError("model.input_dim does not match the data dimension");
    return spec;
}

int cmd_gen_data(const CommonOpts& opts) {
    ExperimentConfig cfg = load_with_overrides(opts);
    ResolvedData data = resolve_data(cfg);
    fs::create_directories(cfg.output_dir);
    const fs::path dir(cfg.output_dir);
    save_csv((dir / "id_train.csv").string(), data.id_train);
    save_csv((dir / "id_test.csv").string(), data.id_test);
    for (const auto& set : data.ood_sets)
        save_csv((dir / ("ood_" + set.name + ".csv")).string(), set);
    std::cout << "wrote " << data.id_train.size() << " train / " << data.id_test.size()
              << " test ID samples and " << data.ood_sets.size() << " OOD set(s) to "
              << cfg.output_dir << "\n";
    return 0;
}

int cmd_train(const CommonOpts& opts) {
    ExperimentConfig cfg = load_with_overrides(opts);
    ResolvedData data = resolve_data(cfg);
    MlpSpec spec = resolve_spec(cfg, data);

    Weights weights = init_weights(spec, cfg.train.seed);
    TrainResult trained = train(std::move(weights), spec, data.id_train, cfg.train);

    fs::create_directories(cfg.output_dir);
    const fs::path dir(cfg.output_dir);
    Checkpoint ckpt{spec, trained.weights, trained.bank};
    save_checkpoint((dir / "checkpoint.json").string(), ckpt);
    save_history_csv((dir / "history.csv").string(), trained.history);
    {
        std::ofstream ini(dir / "config_resolved.ini", std::ios::binary);
        ini << resolved_config_ini(cfg);
    }
    const double final_loss = trained.history.empty() ? 0.0 : trained.history.back().loss;
    std::cout << "trained " << cfg.train.epochs << " epochs (" << loss_kind_name(cfg.train.loss.kind)
              << "), final epoch loss " << final_loss << "; checkpoint in " << cfg.output_dir
              << "\n";
    return 0;
}

int cmd_probe(const CommonOpts& opts, const std::string& checkpoint_path) {
    ExperimentConfig cfg = load_with_overrides(opts);
    ResolvedData data = resolve_data(cfg);
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    Mat penult = penultimate_all(ckpt.weights, ckpt.spec, data.id_train.features);
    auto probe = train_linear_probe(penult, data.id_train.labels, data.id_train.num_classes,
                                    cfg.train.probe_l2, cfg.train.probe_iters,
                                    Rng(cfg.train.seed).derive(12).next_u64());
    std::cout << "probe held-out accuracy: " << probe.heldout_accuracy << "\n";
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint_path) {
    ExperimentConfig cfg = load_with_overrides(opts);
    ResolvedData data = resolve_data(cfg);
    Checkpoint ckpt = load_checkpoint(checkpoint_path);

    EvalOutputs outputs = evaluate_experiment(
        cfg, data, ckpt.weights, ckpt.spec,
        ckpt.prototypes ? &*ckpt.prototypes : nullptr);

    fs::create_directories(cfg.output_dir);
    const fs::path dir(cfg.output_dir);
    for (const auto& [scorer, scores] : outputs.scores)
        save_scores_csv((dir / ("scores_" + scorer + ".csv")).string(), scores);
    save_embeddings_csv((dir / "embeddings.csv").string(), data, outputs);
    save_report((dir / "report.json").string(), outputs.report);
    std::cout << format_report_table(outputs.report);
    return 0;
}

int cmd_run(const CommonOpts& opts) {
    ExperimentConfig cfg = load_with_overrides(opts);
    std::cout << resolved_config_ini(cfg);
    RunArtifacts artifacts = run_experiment(cfg, cfg.output_dir);
    std::cout << "\n" << format_report_table(artifacts.report);
    std::cout << "artifacts in " << artifacts.out_dir << "\n";
    return 0;
}

int cmd_sweep(const CommonOpts& opts, const std::string& axis,
              const std::vector<double>& values) {
    ExperimentConfig cfg = load_with_overrides(opts);
    SweepResult result = sweep(cfg, axis, values, cfg.output_dir);
    size_t failed = 0;
    for (const auto& p : result.points)
        if (p.failed) {
            ++failed;
            std::cerr << "sweep point " << p.value << " failed: " << p.error << "\n";
        }
    std::cout << "sweep summary: " << result.summary_path << " (" << result.points.size()
              << " points, " << failed << " failed)\n";
    return 0;
}

int cmd_report(const std::string& report_path) {
    DetectionReport report = load_report(report_path);
    std::cout << format_report_table(report);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hyperspherical-embedding OOD detection experiments"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string checkpoint_path;
    std::string axis;
    std::vector<double> values;
    std::string report_path;

    auto add_common = [&](CLI::App* sub, bool config_required) {
        sub->add_option("--config", opts.config_path, "experiment config (INI)")
            ->required(config_required);
        sub->add_option("--out", opts.out_dir, "output directory (overrides [output] dir)");
        auto* seed = sub->add_option("--seed", "training seed override");
        seed->each([&](const std::string& v) { opts.seed = std::stoull(v); });
        sub->add_option("--scorer", opts.scorers,
                        "scorer (mahalanobis|max_cosine|msp); repeatable");
    };

    add_common(app.add_subcommand("gen-data", "generate datasets and write them as CSV"), true);
    add_common(app.add_subcommand("train", "train an encoder and write a checkpoint"), true);
    auto* probe_cmd = app.add_subcommand("probe", "train the linear probe for a checkpoint");
    add_common(probe_cmd, true);
    probe_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint against the OOD sets");
    add_common(eval_cmd, true);
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    add_common(app.add_subcommand("run", "generate/load data, train, probe and evaluate"), true);
    auto* sweep_cmd = app.add_subcommand("sweep", "run one experiment per axis value");
    add_common(sweep_cmd, true);
    sweep_cmd->add_option("--axis", axis, "lambda_c|lr0|alpha|tau|batch_size")->required();
    sweep_cmd->add_option("--values", values, "axis values")->required()->delimiter(',');
    auto* report_cmd = app.add_subcommand("report", "pretty-print a report document");
    report_cmd->add_option("--report", report_path, "report.json path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand("gen-data")) return cmd_gen_data(opts);
        if (app.got_subcommand("train")) return cmd_train(opts);
        if (app.got_subcommand("probe")) return cmd_probe(opts, checkpoint_path);
        if (app.got_subcommand("eval")) return cmd_eval(opts, checkpoint_path);
        if (app.got_subcommand("run")) return cmd_run(opts);
        if (app.got_subcommand("sweep")) return cmd_sweep(opts, axis, values);
        if (app.got_subcommand("report")) return cmd_report(report_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
