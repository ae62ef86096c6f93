// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lgd/config.hpp"

namespace lgd::harness {

namespace fs = std::filesystem;

// Run directory layout.
inline constexpr const char* kConfigFile = "config.txt";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kLockFile = ".lock";
inline constexpr const char* kTrainCsv = "data/train.csv";
inline constexpr const char* kTestCsv = "data/test.csv";
inline constexpr const char* kReferenceStem = "models/reference";
inline constexpr const char* kPredictorStem = "models/predictor";
inline constexpr const char* kDistilledCsv = "distill/distilled.csv";
inline constexpr const char* kSelectionsCsv = "distill/selections.csv";
inline constexpr const char* kTrainLogCsv = "distill/train_log.csv";
inline constexpr const char* kStagesCsv = "distill/stages.csv";
inline constexpr const char* kStageModelDir = "distill/stage_models";
inline constexpr const char* kEvalJson = "eval_static.json";
inline constexpr const char* kReportDir = "reports";

/// Exclusive writer lock on a run directory, held for the lifetime of the
/// object. A second writer fails instead of waiting.
class RunLock {
public:
    explicit RunLock(const fs::path& dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    fs::path path_;
};

/// Empty object when the directory has no manifest yet.
nlohmann::json load_manifest(const fs::path& dir);

/// Rewrites the manifest: refreshes the file inventory from disk (every file
/// except the manifest and the lock, with content hashes), the embedded
/// config and its hash, and records `seconds` under timing.<command>.
void write_manifest(const fs::path& dir, nlohmann::json manifest, const RunConfig& cfg, const std::string& command,
                    double seconds);

/// Content hash of a manifest with the timing section removed; equal for
/// reruns of the same config.
std::string manifest_digest(const nlohmann::json& manifest);

struct GenDataResult {
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
};
GenDataResult cmd_gen_data(const RunConfig& cfg);

struct ReferenceResult {
    double test_accuracy = 0.0;
    std::string checkpoint_hash;
    double predictor_loss = 0.0;  // last epoch
};
/// Trains the reference classifier and the diffusion noise predictor on the
/// train split. Both are seeded from the data seed only, so runs sharing data
/// share them.
ReferenceResult cmd_train_reference(const RunConfig& cfg);

struct DistillResult {
    std::size_t samples = 0;
    std::vector<distill::StageRecord> stages;
};
/// Writes artifacts after every stage, so a failure keeps the finished ones.
DistillResult cmd_distill(const RunConfig& cfg);

struct StaticEval {
    std::vector<std::uint64_t> seeds;
    std::vector<double> accuracies;
    double mean = 0.0;
    double std = 0.0;  // population std, 0 for one repeat
};

/// `repeats` fresh classifiers trained on `train` with the hard-label
/// protocol; seed r is derive_seed(master, "eval-static", {r}).
StaticEval eval_static(const nn::LabeledSet& train, const nn::LabeledSet& test, const RunConfig& cfg, int repeats);
StaticEval cmd_eval_static(const RunConfig& cfg, int repeats);

enum class Which { redundancy, spikes, dynamics, indist, all };
Which which_from_string(const std::string& s);

/// Writes the selected reports under reports/ and merges their summaries
/// into reports/summary.json and the manifest. Returns the files written.
std::vector<std::string> cmd_analyze(const RunConfig& cfg, Which which);

struct CompareRow {
    std::string run;
    std::string method;
    double static_accuracy = 0.0;
    double redundancy = 0.0;
    double spike = 0.0;
    double js = 0.0;
    analysis::CategoryFractions categories;
};

/// Reads finished runs; refuses runs generated from different data.
std::vector<CompareRow> compare_runs(const std::vector<fs::path>& runs);
std::string compare_table(const std::vector<CompareRow>& rows);

}  // namespace lgd::harness
