// SPDX-License-Identifier: Apache-2.0
#include "lgd/config.hpp"

#include <charconv>
#include <functional>
#include <set>

#include "lgd/errors.hpp"
#include "lgd/rng.hpp"
#include "lgd/text_format.hpp"

namespace lgd::harness {

namespace {

std::uint64_t to_u64(std::string_view v) {
    v = trim(v);
    std::uint64_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError("not an unsigned integer: '" + std::string(v) + "'");
    }
    return out;
}

int to_int(std::string_view v) {
    const long long x = parse_int(v);
    if (x < INT32_MIN || x > INT32_MAX) throw ConfigError("integer out of range: '" + std::string(v) + "'");
    return static_cast<int>(x);
}

std::size_t to_count(std::string_view v) { return static_cast<std::size_t>(to_u64(v)); }

bool to_bool(std::string_view v) {
    v = trim(v);
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("expected true or false, got '" + std::string(v) + "'");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

std::string from_widths(const std::vector<std::size_t>& w) {
    std::string out;
    for (std::size_t i = 0; i < w.size(); ++i) out += (i ? "," : "") + std::to_string(w[i]);
    return out;
}

std::vector<std::size_t> to_widths(std::string_view v) {
    std::vector<std::size_t> out;
    if (trim(v).empty()) return out;
    for (const auto& part : split(v, ',')) out.push_back(to_count(part));
    return out;
}

// "x0,x1;x0,x1;..." one group per mode.
std::string from_means(const std::vector<std::vector<double>>& m) {
    std::string out;
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (i) out += ';';
        for (std::size_t j = 0; j < m[i].size(); ++j) out += (j ? "," : "") + format_double(m[i][j]);
    }
    return out;
}

std::vector<std::vector<double>> to_means(std::string_view v) {
    std::vector<std::vector<double>> out;
    if (trim(v).empty()) return out;
    for (const auto& group : split(v, ';')) {
        std::vector<double> row;
        for (const auto& cell : split(group, ',')) row.push_back(parse_double(cell));
        out.push_back(std::move(row));
    }
    return out;
}

struct Field {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view)> set;
};

#define LGD_U64(k, m) Field{k, [](const RunConfig& c) { return std::to_string(c.m); }, [](RunConfig& c, std::string_view v) { c.m = to_u64(v); }}
#define LGD_COUNT(k, m) Field{k, [](const RunConfig& c) { return std::to_string(c.m); }, [](RunConfig& c, std::string_view v) { c.m = to_count(v); }}
#define LGD_INT(k, m) Field{k, [](const RunConfig& c) { return std::to_string(c.m); }, [](RunConfig& c, std::string_view v) { c.m = to_int(v); }}
#define LGD_DBL(k, m) Field{k, [](const RunConfig& c) { return format_double(c.m); }, [](RunConfig& c, std::string_view v) { c.m = parse_double(v); }}
#define LGD_BOOL(k, m) Field{k, [](const RunConfig& c) { return from_bool(c.m); }, [](RunConfig& c, std::string_view v) { c.m = to_bool(v); }}
#define LGD_WIDTHS(k, m) Field{k, [](const RunConfig& c) { return from_widths(c.m); }, [](RunConfig& c, std::string_view v) { c.m = to_widths(v); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> table{
        LGD_U64("seed", seed),
        Field{"data.seed",
              [](const RunConfig& c) { return c.data_seed ? std::to_string(*c.data_seed) : std::string("auto"); },
              [](RunConfig& c, std::string_view v) {
                  if (trim(v) == "auto") c.data_seed.reset();
                  else c.data_seed = to_u64(v);
              }},
        LGD_COUNT("data.dims", data.dims),
        LGD_COUNT("data.classes", data.classes),
        LGD_COUNT("data.modes_per_class", data.modes_per_class),
        LGD_COUNT("data.samples_per_class", data.samples_per_class),
        LGD_DBL("data.radius", data.radius),
        LGD_DBL("data.mode_std", data.mode_std),
        LGD_DBL("data.test_fraction", data.test_fraction),
        Field{"data.means", [](const RunConfig& c) { return from_means(c.data.means); },
              [](RunConfig& c, std::string_view v) { c.data.means = to_means(v); }},
        LGD_INT("schedule.steps", steps),
        LGD_DBL("schedule.beta_start", beta_start),
        LGD_DBL("schedule.beta_end", beta_end),
        LGD_WIDTHS("predictor.hidden", predictor.hidden),
        LGD_COUNT("predictor.embed_dim", predictor.embed_dim),
        LGD_INT("predictor.epochs", predictor.epochs),
        LGD_COUNT("predictor.batch_size", predictor.batch_size),
        LGD_DBL("predictor.learning_rate", predictor.learning_rate),
        LGD_DBL("predictor.final_lr_ratio", predictor.final_lr_ratio),
        LGD_WIDTHS("reference.hidden", reference.hidden),
        LGD_INT("reference.epochs", reference.epochs),
        LGD_COUNT("reference.batch_size", reference.batch_size),
        LGD_DBL("reference.learning_rate", reference.optim.learning_rate),
        LGD_DBL("reference.weight_decay", reference.optim.weight_decay),
        Field{"distill.method", [](const RunConfig& c) { return distill::to_string(c.distill.method); },
              [](RunConfig& c, std::string_view v) { c.distill.method = distill::method_from_string(std::string(trim(v))); }},
        LGD_INT("distill.stages", distill.stages),
        LGD_INT("distill.ipc", distill.ipc),
        LGD_INT("distill.per_stage", distill.per_stage),
        Field{"distill.seed_mode", [](const RunConfig& c) { return distill::to_string(c.distill.seed_mode); },
              [](RunConfig& c, std::string_view v) {
                  c.distill.seed_mode = distill::seed_mode_from_string(std::string(trim(v)));
              }},
        LGD_BOOL("distill.warm_start", distill.warm_start),
        LGD_WIDTHS("distill.learner_hidden", distill.learner.hidden),
        LGD_DBL("distill.cg_scale", distill.cg_scale),
        LGD_DBL("guidance.omega", distill.guidance.omega),
        LGD_DBL("guidance.lambda", distill.guidance.lambda),
        LGD_DBL("guidance.gamma", distill.guidance.gamma),
        LGD_INT("guidance.kappa", distill.guidance.kappa),
        LGD_INT("guidance.t_lo", distill.guidance.t_lo),
        LGD_INT("guidance.t_hi", distill.guidance.t_hi),
        LGD_INT("guidance.guidance_sign", distill.guidance.guidance_sign),
        LGD_INT("guidance.deviation_sign", distill.guidance.deviation_sign),
        LGD_BOOL("guidance.score_on_denoised", distill.guidance.score_on_denoised),
        LGD_INT("train.patience", distill.train.patience),
        LGD_INT("train.squeeze", distill.train.squeeze),
        LGD_DBL("train.min_lr_ratio", distill.train.min_lr_ratio),
        LGD_DBL("train.min_delta", distill.train.min_delta),
        LGD_INT("train.max_epochs", distill.train.max_epochs),
        LGD_COUNT("train.batch_size", distill.train.batch_size),
        LGD_DBL("train.ema_decay", distill.train.ema_decay),
        LGD_DBL("train.learning_rate", distill.train.optim.learning_rate),
        LGD_DBL("train.weight_decay", distill.train.optim.weight_decay),
        LGD_WIDTHS("analysis.probe_hidden", analysis.probe.shape.hidden),
        LGD_INT("analysis.probe_epochs", analysis.probe.epochs),
        LGD_COUNT("analysis.probe_batch_size", analysis.probe.batch_size),
        LGD_DBL("analysis.probe_learning_rate", analysis.probe.optim.learning_rate),
        LGD_INT("analysis.dynamics_epochs", analysis.dynamics_epochs),
        Field{"analysis.real_dynamics", [](const RunConfig& c) { return to_string(c.analysis.real_dynamics); },
              [](RunConfig& c, std::string_view v) {
                  c.analysis.real_dynamics = real_dynamics_from_string(std::string(trim(v)));
              }},
        LGD_INT("analysis.js_bins", analysis.js_bins),
        LGD_DBL("analysis.js_epsilon", analysis.js_epsilon),
        LGD_DBL("analysis.mu_hi", analysis.thresholds.mu_hi),
        LGD_DBL("analysis.sigma_lo", analysis.thresholds.sigma_lo),
        LGD_DBL("analysis.mu_lo", analysis.thresholds.mu_lo),
        LGD_DBL("analysis.sigma_hi", analysis.thresholds.sigma_hi),
        LGD_INT("eval.repeats", eval.repeats),
        LGD_WIDTHS("eval.hidden", eval.hidden),
        LGD_INT("eval.epochs", eval.epochs),
        LGD_COUNT("eval.batch_size", eval.batch_size),
        LGD_DBL("eval.learning_rate", eval.optim.learning_rate),
        Field{"output.dir", [](const RunConfig& c) { return c.out_dir.generic_string(); },
              [](RunConfig& c, std::string_view v) { c.out_dir = std::string(trim(v)); }},
    };
    return table;
}

#undef LGD_U64
#undef LGD_COUNT
#undef LGD_INT
#undef LGD_DBL
#undef LGD_BOOL
#undef LGD_WIDTHS

}  // namespace

std::string to_string(RealDynamics r) { return r == RealDynamics::full ? "full" : "matched"; }

RealDynamics real_dynamics_from_string(const std::string& s) {
    if (s == "full") return RealDynamics::full;
    if (s == "matched") return RealDynamics::matched;
    throw ConfigError("analysis.real_dynamics must be full or matched, got '" + s + "'");
}

std::uint64_t RunConfig::effective_data_seed() const { return data_seed ? *data_seed : derive_seed(seed, "data-seed"); }

nn::MlpShape RunConfig::classifier_shape(const std::vector<std::size_t>& hidden) const {
    return {data.dims, hidden, data.classes, nn::Activation::relu};
}

distill::DistillConfig RunConfig::distill_config() const {
    distill::DistillConfig out = distill;
    out.learner = classifier_shape(distill.learner.hidden);
    out.seed = seed;
    return out;
}

void RunConfig::validate() const {
    data.validate();
    if (steps < 1) throw ConfigError("schedule.steps must be >= 1");
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
        throw ConfigError("schedule betas must satisfy 0 < beta_start <= beta_end < 1");
    }
    if (predictor.embed_dim == 0 || predictor.batch_size == 0 || predictor.epochs < 0) {
        throw ConfigError("predictor.embed_dim and batch_size must be positive, epochs >= 0");
    }
    if (!(predictor.learning_rate > 0.0) || !(predictor.final_lr_ratio > 0.0 && predictor.final_lr_ratio <= 1.0)) {
        throw ConfigError("predictor.learning_rate must be > 0 and final_lr_ratio in (0, 1]");
    }
    if (reference.epochs < 1 || reference.batch_size == 0) {
        throw ConfigError("reference.epochs and batch_size must be positive");
    }
    reference.optim.validate();
    distill_config().validate();
    distill.guidance.validate(steps);
    analysis.probe.validate();
    if (analysis.dynamics_epochs < 2) throw ConfigError("analysis.dynamics_epochs must be >= 2");
    if (analysis.js_bins < 2 || !(analysis.js_epsilon > 0.0)) {
        throw ConfigError("analysis.js_bins must be >= 2 and js_epsilon > 0");
    }
    analysis.thresholds.validate();
    if (eval.repeats < 1 || eval.epochs < 1 || eval.batch_size == 0) {
        throw ConfigError("eval.repeats, epochs and batch_size must be positive");
    }
    eval.optim.validate();
    if (out_dir.empty()) throw ConfigError("output.dir must not be empty");
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : fields()) out.emplace_back(f.key, f.get(cfg));
    return out;
}

std::string to_text(const RunConfig& cfg, bool with_output) {
    std::string out;
    for (const auto& [k, v] : config_entries(cfg)) {
        if (with_output || k != "output.dir") out += k + " = " + v + "\n";
    }
    return out;
}

RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::set<std::string> seen;
    int line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        std::string_view line = raw;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = "config line " + std::to_string(line_no);
        if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
        const std::string key(trim(line.substr(0, eq)));
        const std::string_view value = trim(line.substr(eq + 1));
        const Field* field = nullptr;
        for (const auto& f : fields()) {
            if (key == f.key) field = &f;
        }
        if (!field) throw ConfigError(where + ": unknown key '" + key + "'");
        if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
        try {
            field->set(cfg, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + " (" + key + "): " + e.what());
        } catch (const FormatError& e) {
            throw ConfigError(where + " (" + key + "): " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    return parse_config(read_file(path));
}

std::string config_hash(const RunConfig& cfg) {
    return fnv1a_hex(std::string(kToolVersion) + "\n" + to_text(cfg, false));
}

}  // namespace lgd::harness
