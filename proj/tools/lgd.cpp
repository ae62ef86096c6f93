// SPDX-License-Identifier: Apache-2.0
// Command-line front end: gen-data, train-reference, distill, eval-static,
// analyze, compare. Exit codes: 0 ok, 2 configuration or usage error,
// 1 runtime failure.
#include <CLI11.hpp>

#include <cstdio>
#include <cstring>
#include <iostream>
#include <optional>

#include "lgd/errors.hpp"
#include "lgd/run.hpp"

namespace {

using namespace lgd;
using namespace lgd::harness;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string method;
    int repeats = 0;
    std::string which = "all";
    std::vector<std::string> runs;
    bool json_errors = false;
};

int report(const Options& opt, int code, const std::string& kind, const std::string& message) {
    if (opt.json_errors) {
        nlohmann::json j = {{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
        std::cerr << j.dump() << '\n';
    } else {
        std::cerr << "lgd: " << message << '\n';
    }
    return code;
}

// --config wins; otherwise the run directory's own config; otherwise defaults.
RunConfig resolve(const Options& opt) {
    RunConfig cfg;
    if (!opt.config.empty()) {
        cfg = load_config(opt.config);
    } else if (!opt.out.empty() && fs::exists(fs::path(opt.out) / kConfigFile)) {
        cfg = load_config(fs::path(opt.out) / kConfigFile);
    }
    if (opt.seed) cfg.seed = *opt.seed;
    if (!opt.out.empty()) cfg.out_dir = opt.out;
    if (!opt.method.empty()) cfg.distill.method = distill::method_from_string(opt.method);
    if (opt.repeats > 0) cfg.eval.repeats = opt.repeats;
    cfg.validate();
    return cfg;
}

int run(const std::string& command, const Options& opt) {
    if (command == "compare") {
        std::vector<fs::path> dirs(opt.runs.begin(), opt.runs.end());
        std::cout << compare_table(compare_runs(dirs));
        return 0;
    }
    const RunConfig cfg = resolve(opt);
    if (command == "gen-data") {
        const auto r = cmd_gen_data(cfg);
        std::printf("wrote %zu train / %zu test rows to %s\n", r.train_rows, r.test_rows, cfg.out_dir.c_str());
    } else if (command == "train-reference") {
        const auto r = cmd_train_reference(cfg);
        std::printf("reference test accuracy %.4f (checkpoint %s), predictor loss %.5f\n", r.test_accuracy,
                    r.checkpoint_hash.c_str(), r.predictor_loss);
    } else if (command == "distill") {
        const auto r = cmd_distill(cfg);
        for (const auto& s : r.stages) {
            std::printf("stage %d: %zu samples, %d epochs, train loss %.4f, test accuracy %.4f\n", s.stage,
                        s.dataset_size, s.epochs, s.train_loss, s.test_accuracy);
        }
        std::printf("%s: %zu distilled samples\n", distill::to_string(cfg.distill.method).c_str(), r.samples);
    } else if (command == "eval-static") {
        const auto r = cmd_eval_static(cfg, cfg.eval.repeats);
        for (std::size_t i = 0; i < r.accuracies.size(); ++i) {
            std::printf("seed %llu: %.4f\n", static_cast<unsigned long long>(r.seeds[i]), r.accuracies[i]);
        }
        std::printf("static accuracy %.4f +- %.4f\n", r.mean, r.std);
    } else if (command == "analyze") {
        for (const auto& f : cmd_analyze(cfg, which_from_string(opt.which))) std::printf("wrote %s\n", f.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Learnability-guided incremental dataset distillation on toy mixtures"};
    app.require_subcommand(1);
    Options opt;
    app.add_flag("--json-errors", opt.json_errors, "Print errors as JSON on stderr");

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "Config file (key = value lines)");
        sub->add_option("--seed", opt.seed, "Master seed override");
        sub->add_option("--out", opt.out, "Run directory");
        sub->add_flag("--json-errors", opt.json_errors, "Print errors as JSON on stderr");
    };
    common(app.add_subcommand("gen-data", "Generate the toy mixture train/test split"));
    common(app.add_subcommand("train-reference", "Train the reference classifier and the diffusion predictor"));
    auto* distill_cmd = app.add_subcommand("distill", "Run incremental distillation");
    common(distill_cmd);
    distill_cmd->add_option("--method", opt.method, "lgd | unguided | loss-only | classifier-guidance");
    auto* eval_cmd = app.add_subcommand("eval-static", "Train fresh models on the distilled set");
    common(eval_cmd);
    eval_cmd->add_option("--repeats", opt.repeats, "Number of fresh models")->check(CLI::PositiveNumber);
    auto* analyze_cmd = app.add_subcommand("analyze", "Redundancy, loss spikes, dynamics and in-distribution reports");
    common(analyze_cmd);
    analyze_cmd->add_option("--which", opt.which, "redundancy | spikes | dynamics | indist | all");
    auto* compare_cmd = app.add_subcommand("compare", "Side-by-side summary of finished runs");
    compare_cmd->add_option("runs", opt.runs, "Run directories");
    compare_cmd->add_flag("--json-errors", opt.json_errors, "Print errors as JSON on stderr");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        for (int i = 1; i < argc; ++i) opt.json_errors |= std::strcmp(argv[i], "--json-errors") == 0;
        return report(opt, 2, "usage", e.what());
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return run(command, opt);
    } catch (const ConfigError& e) {
        return report(opt, 2, "config", e.what());
    } catch (const std::exception& e) {
        return report(opt, 1, "runtime", e.what());
    }
}
