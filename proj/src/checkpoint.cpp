// SPDX-License-Identifier: Apache-2.0
#include "lgd/checkpoint.hpp"

#include <bit>
#include <cstdint>

#include <json.hpp>

#include "lgd/errors.hpp"
#include "lgd/text_format.hpp"

namespace lgd::nn {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "lgd-checkpoint-v1";

void put_values(std::string& out, std::span<const double> values) {
    for (double v : values) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffU));
    }
}

double get_value(std::string_view blob, std::size_t index) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[index * 8 + b])) << (8 * b);
    }
    return std::bit_cast<double>(bits);
}

}  // namespace

const Tensor2& Checkpoint::extra(const std::string& name) const {
    for (const auto& e : extras) {
        if (e.name == name) return e.value;
    }
    throw FormatError("checkpoint has no tensor '" + name + "'");
}

std::string encode_blob(const Checkpoint& checkpoint) {
    std::string blob;
    blob.reserve(8 * checkpoint.mlp.parameter_count());
    for (const auto& l : checkpoint.mlp.layers) {
        put_values(blob, l.weight.values());
        put_values(blob, l.bias);
    }
    for (const auto& e : checkpoint.extras) put_values(blob, e.value.values());
    return blob;
}

void write_checkpoint(const std::filesystem::path& stem, const Checkpoint& checkpoint) {
    checkpoint.mlp.validate();
    json meta;
    meta["format"] = kFormat;
    meta["dtype"] = "float64";
    meta["byte_order"] = "little";
    std::size_t offset = 0;
    json layers = json::array();
    for (const auto& l : checkpoint.mlp.layers) {
        layers.push_back({{"inputs", l.inputs()},
                          {"outputs", l.outputs()},
                          {"activation", std::string(to_string(l.activation))},
                          {"weight_offset", offset},
                          {"bias_offset", offset + l.weight.size()}});
        offset += l.weight.size() + l.bias.size();
    }
    meta["layers"] = layers;
    json extras = json::array();
    for (const auto& e : checkpoint.extras) {
        extras.push_back({{"name", e.name}, {"rows", e.value.rows()}, {"cols", e.value.cols()}, {"offset", offset}});
        offset += e.value.size();
    }
    meta["extras"] = extras;
    meta["total_values"] = offset;

    auto bin = stem;
    bin += ".bin";
    auto side = stem;
    side += ".json";
    write_file(bin, encode_blob(checkpoint));
    write_file(side, meta.dump(2) + "\n");
}

Checkpoint read_checkpoint(const std::filesystem::path& stem) {
    auto bin = stem;
    bin += ".bin";
    auto side = stem;
    side += ".json";
    const std::string blob = read_file(bin);
    json meta;
    try {
        meta = json::parse(read_file(side));
    } catch (const json::exception& e) {
        throw FormatError("checkpoint sidecar '" + side.string() + "': " + e.what());
    }
    if (meta.value("format", "") != kFormat) throw FormatError("unsupported checkpoint format in " + side.string());
    const std::size_t total = meta.at("total_values").get<std::size_t>();
    if (blob.size() != total * 8) throw FormatError("checkpoint blob size does not match sidecar");

    Checkpoint ck;
    for (const auto& l : meta.at("layers")) {
        const auto in = l.at("inputs").get<std::size_t>();
        const auto out = l.at("outputs").get<std::size_t>();
        const auto wo = l.at("weight_offset").get<std::size_t>();
        const auto bo = l.at("bias_offset").get<std::size_t>();
        if (bo + out > total || wo + in * out > total) throw FormatError("checkpoint layer exceeds blob");
        DenseLayer layer{Tensor2(in, out), std::vector<double>(out), activation_from_string(l.at("activation").get<std::string>())};
        for (std::size_t i = 0; i < in * out; ++i) layer.weight.values()[i] = get_value(blob, wo + i);
        for (std::size_t i = 0; i < out; ++i) layer.bias[i] = get_value(blob, bo + i);
        ck.mlp.layers.push_back(std::move(layer));
    }
    ck.mlp.validate();
    for (const auto& e : meta.at("extras")) {
        const auto rows = e.at("rows").get<std::size_t>();
        const auto cols = e.at("cols").get<std::size_t>();
        const auto off = e.at("offset").get<std::size_t>();
        if (off + rows * cols > total) throw FormatError("checkpoint tensor exceeds blob");
        Tensor2 t(rows, cols);
        for (std::size_t i = 0; i < rows * cols; ++i) t.values()[i] = get_value(blob, off + i);
        ck.extras.push_back({e.at("name").get<std::string>(), std::move(t)});
    }
    return ck;
}

}  // namespace lgd::nn
