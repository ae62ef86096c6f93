// SPDX-License-Identifier: Apache-2.0
#include "lgd/run.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>

#include "lgd/checkpoint.hpp"
#include "lgd/errors.hpp"
#include "lgd/loss.hpp"
#include "lgd/rng.hpp"
#include "lgd/text_format.hpp"

namespace lgd::harness {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void require(const fs::path& dir, const std::string& rel, const std::string& producer) {
    if (!fs::exists(dir / rel)) {
        throw ConfigError("missing " + (dir / rel).string() + "; run `lgd " + producer + " --out " + dir.string() +
                          "` first");
    }
}

void remove_paths(const fs::path& dir, std::initializer_list<const char*> rels) {
    for (const char* rel : rels) fs::remove_all(dir / rel);
}

// Every command after gen-data must see the data the config describes.
void check_data_seed(const json& manifest, const RunConfig& cfg) {
    const std::uint64_t want = cfg.effective_data_seed();
    if (!manifest.contains("data")) return;
    const auto have = manifest["data"]["seed"].get<std::uint64_t>();
    if (have != want) {
        throw ConfigError("run directory " + cfg.out_dir.string() + " holds data generated with data seed " +
                          std::to_string(have) + " but the config asks for " + std::to_string(want) +
                          "; rerun gen-data");
    }
}

nn::MlpParams load_mlp(const fs::path& stem) { return nn::read_checkpoint(stem).mlp; }

void save_mlp(const fs::path& stem, const nn::MlpParams& p) {
    fs::create_directories(stem.parent_path());
    nn::write_checkpoint(stem, nn::Checkpoint{p, {}});
}

analysis::ProbeConfig probe_config(const RunConfig& cfg) {
    analysis::ProbeConfig p = cfg.analysis.probe;
    p.shape = cfg.classifier_shape(cfg.analysis.probe.shape.hidden);
    return p;
}

std::string stages_csv(const std::vector<distill::StageRecord>& stages) {
    std::string out = "stage,dataset_size,epochs,train_loss,train_accuracy,test_accuracy\n";
    for (const auto& s : stages) {
        out += std::to_string(s.stage) + ',' + std::to_string(s.dataset_size) + ',' + std::to_string(s.epochs) + ',' +
               format_double(s.train_loss) + ',' + format_double(s.train_accuracy) + ',' +
               format_double(s.test_accuracy) + '\n';
    }
    return out;
}

json stage_json(const distill::StageRecord& s) {
    return {{"stage", s.stage},
            {"dataset_size", s.dataset_size},
            {"epochs", s.epochs},
            {"train_loss", s.train_loss},
            {"train_accuracy", s.train_accuracy},
            {"test_accuracy", s.test_accuracy}};
}

json telemetry_json(const guidance::GuidanceTelemetry& t) {
    return {{"guided_rows", t.guided_rows},
            {"learnability_skips", t.learnability_skips},
            {"deviation_skips", t.deviation_skips},
            {"sum_grad_norm", t.sum_grad_norm},
            {"sum_rho", t.sum_rho},
            {"sum_score", t.sum_score}};
}

json categories_json(const analysis::CategoryFractions& f) {
    return {{"easy", f.easy}, {"hard", f.hard}, {"informative", f.informative}};
}

void write_stage_artifacts(const fs::path& dir, const distill::DistillState& state) {
    write_file(dir / kDistilledCsv, distill::distilled_csv(state.samples));
    write_file(dir / kSelectionsCsv, distill::selection_csv(state.selections));
    write_file(dir / kTrainLogCsv, distill::train_log_csv(state.train_log));
    write_file(dir / kStagesCsv, stages_csv(state.stages));
    const int k = static_cast<int>(state.stage_models.size());
    save_mlp(dir / kStageModelDir / ("stage_" + std::to_string(k)), state.stage_models.back());
}

// Class-stratified random subset of `real` with the class counts of `like`.
nn::LabeledSet matched_subset(const nn::LabeledSet& real, const nn::LabeledSet& like, std::uint64_t seed) {
    std::map<int, std::size_t> want;
    for (int y : like.y) ++want[y];
    Rng rng(seed);
    const auto order = rng.permutation(real.size());
    std::vector<bool> keep(real.size(), false);
    for (std::size_t i : order) {
        auto it = want.find(real.y[i]);
        if (it != want.end() && it->second > 0) {
            keep[i] = true;
            --it->second;
        }
    }
    for (const auto& [c, left] : want) {
        if (left > 0) throw ConfigError("real train split has too few rows of class " + std::to_string(c));
    }
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < keep.size(); ++i)
        if (keep[i]) idx.push_back(i);
    return real.subset(idx);
}

std::vector<analysis::DynamicsPoint> parse_dynamics_points(const fs::path& path) {
    const CsvTable t = read_csv(path);
    const std::size_t ci = t.column("id"), cm = t.column("mu"), cs = t.column("sigma"), cr = t.column("ref_conf");
    std::vector<analysis::DynamicsPoint> out;
    for (const auto& row : t.rows) {
        out.push_back({static_cast<std::uint64_t>(parse_int(row[ci])), parse_double(row[cm]), parse_double(row[cs]),
                       parse_double(row[cr])});
    }
    return out;
}

}  // namespace

RunLock::RunLock(const fs::path& dir) : path_(dir / kLockFile) {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        throw Error("run directory " + dir.string() + " is locked by another command (" + path_.string() +
                    " exists); remove it if no command is running");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

json load_manifest(const fs::path& dir) {
    const fs::path p = dir / kManifestFile;
    if (!fs::exists(p)) return json::object();
    try {
        return json::parse(read_file(p));
    } catch (const json::exception& e) {
        throw FormatError("malformed manifest " + p.string() + ": " + e.what());
    }
}

void write_manifest(const fs::path& dir, json manifest, const RunConfig& cfg, const std::string& command,
                    double seconds) {
    manifest["format"] = "lgd-run-manifest-v1";
    manifest["tool_version"] = std::string(kToolVersion);
    manifest["config_hash"] = config_hash(cfg);
    manifest["config"] = to_text(cfg, false);
    manifest["seed"] = cfg.seed;
    manifest["data_seed"] = cfg.effective_data_seed();
    manifest["timing"][command] = seconds;
    json files = json::object();
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string rel = fs::relative(entry.path(), dir).generic_string();
        if (rel == kManifestFile || rel == kLockFile) continue;
        files[rel] = file_hash(entry.path());
    }
    manifest["files"] = files;
    write_file(dir / kManifestFile, manifest.dump(2) + "\n");
}

std::string manifest_digest(const json& manifest) {
    json copy = manifest;
    copy.erase("timing");
    return fnv1a_hex(copy.dump());
}

GenDataResult cmd_gen_data(const RunConfig& cfg) {
    cfg.validate();
    const auto start = Clock::now();
    const fs::path dir = cfg.out_dir;
    RunLock lock(dir);
    json manifest = load_manifest(dir);
    const std::uint64_t seed = cfg.effective_data_seed();
    const SplitData split = gen_data(cfg.data, seed);
    const std::string train = dataset_csv(split.train), test = dataset_csv(split.test);
    const bool changed = !fs::exists(dir / kTrainCsv) || read_file(dir / kTrainCsv) != train ||
                         !fs::exists(dir / kTestCsv) || read_file(dir / kTestCsv) != test;
    if (changed) {
        // Everything downstream was built from other data.
        remove_paths(dir, {"models", "distill", kReportDir, kEvalJson});
        for (const char* key : {"reference", "predictor", "distill", "analysis", "eval_static"}) manifest.erase(key);
    }
    write_file(dir / kTrainCsv, train);
    write_file(dir / kTestCsv, test);
    write_file(dir / kConfigFile, to_text(cfg, false));
    manifest["data"] = {{"seed", seed}, {"train_rows", split.train.size()}, {"test_rows", split.test.size()}};
    write_manifest(dir, manifest, cfg, "gen-data", seconds_since(start));
    return {split.train.size(), split.test.size()};
}

ReferenceResult cmd_train_reference(const RunConfig& cfg) {
    cfg.validate();
    const auto start = Clock::now();
    const fs::path dir = cfg.out_dir;
    require(dir, kTrainCsv, "gen-data");
    require(dir, kTestCsv, "gen-data");
    RunLock lock(dir);
    json manifest = load_manifest(dir);
    check_data_seed(manifest, cfg);
    const auto train = parse_dataset_csv(dir / kTrainCsv);
    const auto test = parse_dataset_csv(dir / kTestCsv);
    const std::uint64_t ds = cfg.effective_data_seed();

    Rng init(derive_seed(ds, "reference-init"));
    nn::MlpParams ref = nn::make_mlp(cfg.classifier_shape(cfg.reference.hidden), init);
    auto optim = nn::OptimState::for_params(cfg.reference.optim, ref);
    ref = nn::train_supervised(ref, train, optim, cfg.reference.epochs, cfg.reference.batch_size,
                               derive_seed(ds, "reference-train"), nn::hard_label_lr(cfg.reference.epochs))
              .params;
    ReferenceResult out;
    out.test_accuracy = nn::evaluate_accuracy(ref, test);

    diffusion::PredictorShape shape;
    shape.input_dim = cfg.data.dims;
    shape.classes = cfg.data.classes;
    shape.hidden = cfg.predictor.hidden;
    shape.embed_dim = cfg.predictor.embed_dim;
    Rng pinit(derive_seed(ds, "predictor-init"));
    auto pred = diffusion::make_predictor(shape, cfg.steps, pinit);
    diffusion::PredictorTrainOptions opt;
    opt.epochs = cfg.predictor.epochs;
    opt.batch_size = cfg.predictor.batch_size;
    opt.optim.learning_rate = cfg.predictor.learning_rate;
    opt.final_lr_ratio = cfg.predictor.final_lr_ratio;
    opt.seed = derive_seed(ds, "predictor-train");
    const auto sched = diffusion::make_schedule(cfg.steps, cfg.beta_start, cfg.beta_end);
    auto trained = diffusion::train_predictor(std::move(pred), train, sched, opt);
    out.predictor_loss = trained.loss_log.empty() ? 0.0 : trained.loss_log.back();

    remove_paths(dir, {"distill", kReportDir, kEvalJson});
    for (const char* key : {"distill", "analysis", "eval_static"}) manifest.erase(key);
    save_mlp(dir / kReferenceStem, ref);
    fs::create_directories((dir / kPredictorStem).parent_path());
    nn::write_checkpoint(dir / kPredictorStem, diffusion::to_checkpoint(trained.predictor));
    write_file(dir / kConfigFile, to_text(cfg, false));
    out.checkpoint_hash = file_hash(dir / (std::string(kReferenceStem) + ".bin"));
    manifest["reference"] = {{"test_accuracy", out.test_accuracy}, {"checkpoint_hash", out.checkpoint_hash}};
    manifest["predictor"] = {{"epochs", cfg.predictor.epochs}, {"final_loss", out.predictor_loss}};
    write_manifest(dir, manifest, cfg, "train-reference", seconds_since(start));
    return out;
}

DistillResult cmd_distill(const RunConfig& cfg) {
    cfg.validate();
    const auto start = Clock::now();
    const fs::path dir = cfg.out_dir;
    require(dir, kTrainCsv, "gen-data");
    require(dir, std::string(kReferenceStem) + ".bin", "train-reference");
    require(dir, std::string(kPredictorStem) + ".bin", "train-reference");
    RunLock lock(dir);
    json manifest = load_manifest(dir);
    check_data_seed(manifest, cfg);
    const auto train = parse_dataset_csv(dir / kTrainCsv);
    const auto test = parse_dataset_csv(dir / kTestCsv);
    const auto reference = load_mlp(dir / kReferenceStem);
    const auto predictor = diffusion::from_checkpoint(nn::read_checkpoint(dir / kPredictorStem));
    const auto sched = diffusion::make_schedule(cfg.steps, cfg.beta_start, cfg.beta_end);
    const auto dcfg = cfg.distill_config();
    const distill::DistillInputs in{predictor, sched, reference, train, &test};

    remove_paths(dir, {"distill", kReportDir, kEvalJson});
    for (const char* key : {"distill", "analysis", "eval_static"}) manifest.erase(key);
    write_file(dir / kConfigFile, to_text(cfg, false));

    distill::DistillState state;
    try {
        state = distill::init_seed(dcfg, in);
        write_stage_artifacts(dir, state);
        for (int i = 2; i <= dcfg.stages; ++i) {
            distill::run_increment(state, dcfg.per_stage, dcfg, in);
            write_stage_artifacts(dir, state);
        }
    } catch (const std::exception& e) {
        manifest["distill"] = {{"method", distill::to_string(dcfg.method)},
                               {"status", "failed"},
                               {"error", e.what()},
                               {"completed_stages", state.stages.size()}};
        write_manifest(dir, manifest, cfg, "distill", seconds_since(start));
        throw;
    }
    json stages = json::array();
    for (const auto& s : state.stages) stages.push_back(stage_json(s));
    manifest["distill"] = {{"method", distill::to_string(dcfg.method)},
                           {"status", "complete"},
                           {"samples", state.samples.size()},
                           {"stages", stages},
                           {"telemetry", telemetry_json(state.telemetry)}};
    write_manifest(dir, manifest, cfg, "distill", seconds_since(start));
    return {state.samples.size(), state.stages};
}

StaticEval eval_static(const nn::LabeledSet& train, const nn::LabeledSet& test, const RunConfig& cfg, int repeats) {
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
    if (train.empty() || test.empty()) throw ConfigError("eval-static needs non-empty train and test sets");
    StaticEval out;
    for (int r = 0; r < repeats; ++r) {
        const std::uint64_t seed = derive_seed(cfg.seed, "eval-static", {static_cast<std::uint64_t>(r)});
        Rng rng(derive_seed(seed, "init"));
        nn::MlpParams p = nn::make_mlp(cfg.classifier_shape(cfg.eval.hidden), rng);
        auto optim = nn::OptimState::for_params(cfg.eval.optim, p);
        p = nn::train_supervised(p, train, optim, cfg.eval.epochs, cfg.eval.batch_size, seed,
                                 nn::hard_label_lr(cfg.eval.epochs))
                .params;
        out.seeds.push_back(seed);
        out.accuracies.push_back(nn::evaluate_accuracy(p, test));
    }
    for (double a : out.accuracies) out.mean += a / repeats;
    double var = 0.0;
    for (double a : out.accuracies) var += (a - out.mean) * (a - out.mean) / repeats;
    out.std = std::sqrt(var);
    return out;
}

StaticEval cmd_eval_static(const RunConfig& cfg, int repeats) {
    cfg.validate();
    const auto start = Clock::now();
    const fs::path dir = cfg.out_dir;
    require(dir, kDistilledCsv, "distill");
    require(dir, kTestCsv, "gen-data");
    RunLock lock(dir);
    json manifest = load_manifest(dir);
    check_data_seed(manifest, cfg);
    const auto samples = distill::parse_distilled_csv(read_file(dir / kDistilledCsv));
    const auto test = parse_dataset_csv(dir / kTestCsv);
    const StaticEval ev = eval_static(distill::to_labeled(samples), test, cfg, repeats);
    json report = {{"repeats", repeats},
                   {"seeds", ev.seeds},
                   {"accuracies", ev.accuracies},
                   {"mean", ev.mean},
                   {"std", ev.std},
                   {"train_rows", samples.size()}};
    write_file(dir / kEvalJson, report.dump(2) + "\n");
    manifest["eval_static"] = report;
    write_manifest(dir, manifest, cfg, "eval-static", seconds_since(start));
    return ev;
}

Which which_from_string(const std::string& s) {
    if (s == "redundancy") return Which::redundancy;
    if (s == "spikes") return Which::spikes;
    if (s == "dynamics") return Which::dynamics;
    if (s == "indist") return Which::indist;
    if (s == "all") return Which::all;
    throw ConfigError("unknown analysis '" + s + "' (expected redundancy, spikes, dynamics, indist or all)");
}

std::vector<std::string> cmd_analyze(const RunConfig& cfg, Which which) {
    cfg.validate();
    const auto start = Clock::now();
    const fs::path dir = cfg.out_dir;
    require(dir, kTrainCsv, "gen-data");
    require(dir, std::string(kReferenceStem) + ".bin", "train-reference");
    require(dir, kDistilledCsv, "distill");
    require(dir, kTrainLogCsv, "distill");
    RunLock lock(dir);
    json manifest = load_manifest(dir);
    check_data_seed(manifest, cfg);
    const auto samples = distill::parse_distilled_csv(read_file(dir / kDistilledCsv));
    const auto dataset = distill::to_labeled(samples);
    const auto reference = load_mlp(dir / kReferenceStem);
    const auto probe = probe_config(cfg);
    const std::uint64_t ds = cfg.effective_data_seed();
    const fs::path reports = dir / kReportDir;
    const fs::path summary_path = reports / "summary.json";
    json summary = fs::exists(summary_path) ? json::parse(read_file(summary_path)) : json::object();
    const bool all = which == Which::all;
    std::vector<std::string> written;
    auto emit = [&](const std::string& name, const std::string& content) {
        write_file(reports / name, content);
        written.push_back((fs::path(kReportDir) / name).generic_string());
    };

    if (all || which == Which::redundancy) {
        int stages = 0;
        for (const auto& s : samples) stages = std::max(stages, s.stage);
        if (stages < 2) throw ConfigError("redundancy needs a run with at least two stages (distill.stages >= 2)");
        std::vector<nn::LabeledSet> increments;
        for (int k = 1; k <= stages; ++k) increments.push_back(distill::to_labeled(samples, k));
        auto m = analysis::cross_increment_matrix(increments, probe, derive_seed(ds, "redundancy"));
        m.label = manifest.contains("distill") ? manifest["distill"]["method"].get<std::string>() : "";
        emit("redundancy.csv", analysis::redundancy_csv(m));
        const auto first = analysis::train_probe(increments.front(), probe, derive_seed(ds, "error-probe"));
        const std::vector<nn::LabeledSet> later(increments.begin() + 1, increments.end());
        std::vector<bool> skipped(m.skipped.begin(), m.skipped.end());
        summary["redundancy"] = {{"off_diagonal_mean", m.off_diagonal_mean},
                                 {"skipped_rows", skipped},
                                 {"error_probe", analysis::error_probe(first, later)}};
    }
    if (all || which == Which::spikes) {
        const auto log = distill::parse_train_log_csv(read_file(dir / kTrainLogCsv));
        const auto s = analysis::loss_spikes(log);
        emit("spikes.csv", analysis::spikes_csv(s));
        summary["spikes"] = {{"deltas", s.deltas}, {"average", s.average}};
    }
    if (all || which == Which::dynamics) {
        const auto train = parse_dataset_csv(dir / kTrainCsv);
        const nn::LabeledSet real = cfg.analysis.real_dynamics == RealDynamics::full
                                        ? train
                                        : matched_subset(train, dataset, derive_seed(ds, "real-subset"));
        const std::uint64_t seed = derive_seed(ds, "dynamics");
        const auto mine = analysis::dynamics_map(dataset, probe, cfg.analysis.dynamics_epochs, seed, &reference);
        const auto theirs = analysis::dynamics_map(real, probe, cfg.analysis.dynamics_epochs, seed, &reference);
        emit("dynamics.csv", analysis::dynamics_csv(mine));
        emit("dynamics_real.csv", analysis::dynamics_csv(theirs));
        const double js =
            analysis::js_divergence(mine.points, theirs.points, cfg.analysis.js_bins, cfg.analysis.js_epsilon);
        summary["dynamics"] = {{"js", js},
                               {"real_rows", real.size()},
                               {"real_dynamics", to_string(cfg.analysis.real_dynamics)},
                               {"categories", categories_json(analysis::categorize(mine.points, cfg.analysis.thresholds))},
                               {"real_categories",
                                categories_json(analysis::categorize(theirs.points, cfg.analysis.thresholds))}};
    }
    if (all || which == Which::indist) {
        if (!fs::exists(reports / "dynamics.csv")) {
            throw ConfigError("indist needs " + (reports / "dynamics.csv").string() +
                              "; run `lgd analyze --which dynamics --out " + dir.string() + "` first");
        }
        const auto points = parse_dynamics_points(reports / "dynamics.csv");
        const auto rows = analysis::in_distribution_map(dataset, reference, points);
        emit("indist.csv", analysis::scatter_csv(rows));
        double wrong = 0.0;
        for (const auto& r : rows) wrong += r.correct ? 0.0 : 1.0;
        summary["indist"] = {{"low_confidence_fraction", analysis::low_confidence_fraction(rows)},
                             {"misclassified_fraction", rows.empty() ? 0.0 : wrong / static_cast<double>(rows.size())}};
    }
    emit("summary.json", summary.dump(2) + "\n");
    manifest["analysis"] = summary;
    write_manifest(dir, manifest, cfg, "analyze", seconds_since(start));
    return written;
}

std::vector<CompareRow> compare_runs(const std::vector<fs::path>& runs) {
    if (runs.size() < 2) throw ConfigError("compare needs at least two run directories");
    std::vector<CompareRow> rows;
    std::string data_hash;
    std::uint64_t data_seed = 0;
    for (const auto& dir : runs) {
        if (!fs::exists(dir / kManifestFile)) throw ConfigError("no manifest in " + dir.string() + "; not a run directory");
        const json m = load_manifest(dir);
        std::vector<std::string> missing;
        if (!m.contains("eval_static")) missing.push_back("eval-static");
        for (const char* part : {"redundancy", "spikes", "dynamics"}) {
            if (!m.contains("analysis") || !m["analysis"].contains(part)) missing.push_back(std::string("analyze --which ") + part);
        }
        if (!m.contains("distill") || m["distill"].value("status", "") != "complete") missing.insert(missing.begin(), "distill");
        if (!missing.empty()) {
            std::string list;
            for (const auto& s : missing) list += (list.empty() ? "" : ", ") + s;
            throw ConfigError("run " + dir.string() + " is incomplete; run first: " + list);
        }
        const auto seed = m["data_seed"].get<std::uint64_t>();
        const auto hash = m["files"].value(kTrainCsv, std::string());
        if (rows.empty()) {
            data_seed = seed;
            data_hash = hash;
        } else if (seed != data_seed || hash != data_hash) {
            throw ConfigError("runs are incomparable: " + runs.front().string() + " uses data seed " +
                              std::to_string(data_seed) + " and " + dir.string() + " uses " + std::to_string(seed));
        }
        const json& a = m["analysis"];
        CompareRow row;
        row.run = dir.generic_string();
        row.method = m["distill"]["method"].get<std::string>();
        row.static_accuracy = m["eval_static"]["mean"].get<double>();
        row.redundancy = a["redundancy"]["off_diagonal_mean"].get<double>();
        row.spike = a["spikes"]["average"].get<double>();
        row.js = a["dynamics"]["js"].get<double>();
        row.categories = {a["dynamics"]["categories"]["easy"].get<double>(),
                          a["dynamics"]["categories"]["hard"].get<double>(),
                          a["dynamics"]["categories"]["informative"].get<double>()};
        rows.push_back(row);
    }
    return rows;
}

std::string compare_table(const std::vector<CompareRow>& rows) {
    std::string out = "method               static_acc  redundancy  avg_spike  js      easy    hard    informative  run\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-20s %-11.4f %-11.4f %-10.4f %-7.4f %-7.4f %-7.4f %-12.4f %s\n",
                      r.method.c_str(), r.static_accuracy, r.redundancy, r.spike, r.js, r.categories.easy,
                      r.categories.hard, r.categories.informative, r.run.c_str());
        out += buf;
    }
    return out;
}

}  // namespace lgd::harness
