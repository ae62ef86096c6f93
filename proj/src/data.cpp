// SPDX-License-Identifier: Apache-2.0
#include "lgd/data.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "lgd/errors.hpp"
#include "lgd/rng.hpp"
#include "lgd/text_format.hpp"

namespace lgd::harness {

void MixtureSpec::validate() const {
    if (dims == 0 || classes < 2 || modes_per_class == 0 || samples_per_class == 0) {
        throw ConfigError("mixture: dims, modes and samples must be positive and classes >= 2");
    }
    if (dims < 2 && means.empty()) throw ConfigError("mixture: circle layout needs dims >= 2");
    if (!(mode_std > 0.0) || !std::isfinite(mode_std)) {
        throw ConfigError("mixture: mode covariance is singular (mode_std must be > 0)");
    }
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("mixture: test_fraction must lie in [0, 1)");
    if (!means.empty()) {
        if (means.size() != classes * modes_per_class) throw ConfigError("mixture: need classes * modes explicit means");
        for (const auto& m : means) {
            if (m.size() != dims) throw ConfigError("mixture: explicit mean has wrong dimension");
        }
    }
}

std::vector<std::vector<double>> mode_means(const MixtureSpec& spec) {
    spec.validate();
    if (!spec.means.empty()) return spec.means;
    std::vector<std::vector<double>> out;
    const double total = static_cast<double>(spec.classes * spec.modes_per_class);
    for (std::size_t c = 0; c < spec.classes; ++c) {
        for (std::size_t m = 0; m < spec.modes_per_class; ++m) {
            const double angle = 2.0 * std::numbers::pi * static_cast<double>(m * spec.classes + c) / total;
            std::vector<double> mean(spec.dims, 0.0);
            mean[0] = spec.radius * std::cos(angle);
            mean[1] = spec.radius * std::sin(angle);
            out.push_back(std::move(mean));
        }
    }
    return out;
}

std::vector<std::vector<double>> class_means(const MixtureSpec& spec) {
    const auto modes = mode_means(spec);
    std::vector<std::vector<double>> out(spec.classes, std::vector<double>(spec.dims, 0.0));
    for (std::size_t c = 0; c < spec.classes; ++c) {
        for (std::size_t m = 0; m < spec.modes_per_class; ++m) {
            for (std::size_t j = 0; j < spec.dims; ++j) {
                out[c][j] += modes[c * spec.modes_per_class + m][j] / static_cast<double>(spec.modes_per_class);
            }
        }
    }
    return out;
}

SplitData gen_data(const MixtureSpec& spec, std::uint64_t seed) {
    const auto means = mode_means(spec);
    SplitData out;
    std::vector<double> train_values, test_values;
    const auto n_test = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(spec.samples_per_class)));
    for (std::size_t c = 0; c < spec.classes; ++c) {
        Rng rng(derive_seed(seed, "data", {c}));
        std::vector<std::vector<double>> points;
        for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
            const auto& mean = means[c * spec.modes_per_class + i % spec.modes_per_class];
            std::vector<double> p(spec.dims);
            for (std::size_t j = 0; j < spec.dims; ++j) p[j] = mean[j] + spec.mode_std * rng.normal();
            points.push_back(std::move(p));
        }
        const auto order = rng.permutation(points.size());
        for (std::size_t k = 0; k < order.size(); ++k) {
            const auto& p = points[order[k]];
            if (k < n_test) {
                test_values.insert(test_values.end(), p.begin(), p.end());
                out.test.y.push_back(static_cast<int>(c));
            } else {
                train_values.insert(train_values.end(), p.begin(), p.end());
                out.train.y.push_back(static_cast<int>(c));
            }
        }
    }
    out.train.x = nn::Tensor2(out.train.y.size(), spec.dims, std::move(train_values));
    out.test.x = nn::Tensor2(out.test.y.size(), spec.dims, std::move(test_values));
    return out;
}

std::string dataset_csv(const nn::LabeledSet& data) {
    std::ostringstream out;
    out << "class";
    for (std::size_t j = 0; j < data.dims(); ++j) out << ",x" << j;
    out << '\n';
    for (std::size_t r = 0; r < data.size(); ++r) {
        out << data.y[r];
        for (double v : data.x.row(r)) out << ',' << format_double(v);
        out << '\n';
    }
    return out.str();
}

nn::LabeledSet parse_dataset_csv(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("dataset file '" + path.string() + "' does not exist");
    const CsvTable table = read_csv(path);
    const std::size_t cls = table.column("class");
    std::vector<std::size_t> feature_cols;
    for (std::size_t j = 0;; ++j) {
        const std::string name = "x" + std::to_string(j);
        bool found = false;
        for (std::size_t k = 0; k < table.header.size(); ++k) {
            if (table.header[k] == name) {
                feature_cols.push_back(k);
                found = true;
            }
        }
        if (!found) break;
    }
    if (feature_cols.empty()) throw FormatError("dataset '" + path.string() + "' has no feature columns");
    nn::LabeledSet data;
    std::vector<double> values;
    for (const auto& row : table.rows) {
        data.y.push_back(static_cast<int>(parse_int(row[cls])));
        for (auto k : feature_cols) values.push_back(parse_double(row[k]));
    }
    data.x = nn::Tensor2(data.y.size(), feature_cols.size(), std::move(values));
    return data;
}

}  // namespace lgd::harness
