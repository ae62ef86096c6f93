// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lgd/train.hpp"

namespace lgd::harness {

/// Class-conditional Gaussian mixture with isotropic modes. Unless explicit
/// means are given, the classes x modes means sit on a circle of `radius` in
/// the first two coordinates with classes interleaved: mode m of class c is
/// at angle 2 pi (m * classes + c) / (classes * modes).
struct MixtureSpec {
    std::size_t dims = 2;
    std::size_t classes = 3;
    std::size_t modes_per_class = 3;
    std::size_t samples_per_class = 300;
    double radius = 4.0;
    double mode_std = 0.5;
    double test_fraction = 0.2;
    /// Optional explicit means, row (c * modes_per_class + m).
    std::vector<std::vector<double>> means;

    void validate() const;
};

/// Mean of every mode, row (c * modes_per_class + m).
std::vector<std::vector<double>> mode_means(const MixtureSpec& spec);

/// Per-class population mean (average of the class's mode means).
std::vector<std::vector<double>> class_means(const MixtureSpec& spec);

struct SplitData {
    nn::LabeledSet train;
    nn::LabeledSet test;
};

/// Draws samples_per_class points per class (modes filled round-robin) and
/// splits each class into test/train with the configured fraction.
/// Deterministic per seed.
SplitData gen_data(const MixtureSpec& spec, std::uint64_t seed);

/// class,x0,x1,... with a header row; values in shortest round-trip form.
std::string dataset_csv(const nn::LabeledSet& data);
nn::LabeledSet parse_dataset_csv(const std::filesystem::path& path);

}  // namespace lgd::harness
