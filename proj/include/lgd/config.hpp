// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lgd/analysis.hpp"
#include "lgd/data.hpp"
#include "lgd/diffusion.hpp"
#include "lgd/distill.hpp"

namespace lgd::harness {

inline constexpr std::string_view kToolVersion = "0.1.0";

struct ReferenceSpec {
    std::vector<std::size_t> hidden{128, 128, 128};
    int epochs = 100;
    std::size_t batch_size = 64;
    nn::AdamWConfig optim;
};

struct PredictorSpec {
    std::vector<std::size_t> hidden{128, 128, 128};
    std::size_t embed_dim = 16;
    int epochs = 300;
    std::size_t batch_size = 128;
    double learning_rate = 3e-3;
    double final_lr_ratio = 0.1;
};

/// Dynamics of the real data are measured on the whole train split ("full")
/// or on a class-stratified subset the size of the distilled set ("matched").
enum class RealDynamics { full, matched };

struct AnalysisSpec {
    analysis::ProbeConfig probe;
    int dynamics_epochs = 50;
    RealDynamics real_dynamics = RealDynamics::full;
    int js_bins = 20;
    double js_epsilon = 1e-8;
    analysis::Thresholds thresholds;
};

struct EvalSpec {
    int repeats = 3;
    std::vector<std::size_t> hidden{128, 128, 128};
    int epochs = 300;
    std::size_t batch_size = 32;
    nn::AdamWConfig optim;
};

/// Everything a run depends on. The text form is one `key = value` per line
/// with flat dotted keys; `#` starts a comment.
///
/// data.seed defaults to "auto": the data stream is then derived from the
/// master seed. Runs meant for comparison pin it so they share data, the
/// reference model and the diffusion predictor.
struct RunConfig {
    std::uint64_t seed = 1;
    std::optional<std::uint64_t> data_seed;
    MixtureSpec data;
    int steps = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    PredictorSpec predictor;
    ReferenceSpec reference;
    distill::DistillConfig distill;
    AnalysisSpec analysis;
    EvalSpec eval;
    std::filesystem::path out_dir = "run";

    std::uint64_t effective_data_seed() const;
    /// Shapes with input/output widths taken from the data spec.
    nn::MlpShape classifier_shape(const std::vector<std::size_t>& hidden) const;
    /// Distill settings with seed and learner widths filled in.
    distill::DistillConfig distill_config() const;
    void validate() const;
};

/// output.dir is left out when `with_output` is false: a run directory's own
/// copy of the config and the config hash do not depend on where it lives.
std::string to_text(const RunConfig& cfg, bool with_output = true);
/// Unknown or repeated keys and malformed values raise ConfigError.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// (key, canonical value text) in the order to_text writes them.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg);

/// FNV-1a over the canonical text (without output.dir) and the tool version.
std::string config_hash(const RunConfig& cfg);

std::string to_string(RealDynamics r);
RealDynamics real_dynamics_from_string(const std::string& s);

}  // namespace lgd::harness
