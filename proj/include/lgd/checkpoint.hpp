// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lgd/mlp.hpp"

namespace lgd::nn {

struct NamedTensor {
    std::string name;
    Tensor2 value;
};

struct Checkpoint {
    MlpParams mlp;
    std::vector<NamedTensor> extras;

    const Tensor2& extra(const std::string& name) const;
};

/// Writes `<stem>.bin` and `<stem>.json`.
///
/// The blob is a flat sequence of IEEE-754 binary64 values in little-endian
/// byte order: for each layer its weight (inputs x outputs, row-major) then
/// its bias, followed by each extra tensor (row-major). The JSON sidecar
/// records format "lgd-checkpoint-v1", the layer shapes and activations, the
/// extra tensor names and shapes, the value offset of every block and the
/// total value count.
void write_checkpoint(const std::filesystem::path& stem, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& stem);

/// Bytes of the little-endian blob alone (also what the content hash covers).
std::string encode_blob(const Checkpoint& checkpoint);

}  // namespace lgd::nn
