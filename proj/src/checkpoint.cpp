#include "stgnp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace stgnp {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "stgnp-checkpoint";
constexpr int kVersion = 1;

std::uint64_t to_le(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        std::uint64_t out = 0;
        for (int i = 0; i < 8; ++i) {
            out = (out << 8) | ((v >> (8 * i)) & 0xffu);
        }
        return out;
    }
}

std::filesystem::path blob_path(const std::filesystem::path& manifest) {
    std::filesystem::path p = manifest;
    p.replace_extension(".bin");
    return p;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& manifest) {
    const std::filesystem::path blob = blob_path(manifest);
    if (blob == manifest) {
        throw std::invalid_argument("save_checkpoint: manifest must not use the .bin extension");
    }
    json train = to_json(ckpt.train);
    // Run-local settings; leaving them out keeps checkpoints identical across
    // thread counts and output directories.
    train.erase("threads");
    train.erase("checkpoint_dir");

    json params = json::array();
    std::size_t offset = 0;
    for (const Parameter& p : ckpt.model.parameters()) {
        params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}});
        offset += p.value.size() * sizeof(double);
    }
    const json j = {{"format", kFormat},
                    {"version", kVersion},
                    {"model", to_json(ckpt.model.config())},
                    {"graph", to_json(ckpt.graph)},
                    {"train", train},
                    {"node_ids", ckpt.node_ids},
                    {"target_ids", ckpt.target_ids},
                    {"epoch", ckpt.epoch},
                    {"val_mae", ckpt.val_mae},
                    {"blob", blob.filename().string()},
                    {"dtype", "float64-le"},
                    {"bytes", offset},
                    {"parameters", params}};

    std::ofstream out(manifest, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + manifest.string());
    }
    out << j.dump(2) << '\n';
    std::ofstream bin(blob, std::ios::binary);
    if (!bin) {
        throw std::runtime_error("cannot write " + blob.string());
    }
    for (const Parameter& p : ckpt.model.parameters()) {
        for (double v : p.value.values()) {
            const std::uint64_t le = to_le(std::bit_cast<std::uint64_t>(v));
            bin.write(reinterpret_cast<const char*>(&le), sizeof le);
        }
    }
    if (!out || !bin) {
        throw std::runtime_error("checkpoint write failed for " + manifest.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint " + manifest.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("checkpoint " + manifest.string() + ": " + e.what());
    }
    if (j.value("format", "") != kFormat || j.value("version", 0) != kVersion) {
        throw std::invalid_argument("checkpoint " + manifest.string() + ": not a version-1 stgnp checkpoint");
    }
    if (j.at("dtype") != "float64-le") {
        throw std::invalid_argument("checkpoint: unsupported dtype " + j.at("dtype").dump());
    }
    json train = j.at("train");
    Checkpoint ckpt{StgnpModel(model_config_from_json(j.at("model"))), graph_config_from_json(j.at("graph")),
                    train_config_from_json(train), j.at("node_ids").get<std::vector<std::string>>(),
                    j.at("target_ids").get<std::vector<std::string>>(), j.at("epoch").get<std::size_t>(),
                    j.at("val_mae").get<double>()};

    const json& params = j.at("parameters");
    auto& model_params = ckpt.model.parameters();
    if (params.size() != model_params.size()) {
        throw std::invalid_argument("checkpoint: " + std::to_string(params.size()) + " parameters listed, model has " +
                                    std::to_string(model_params.size()));
    }
    const std::filesystem::path blob = manifest.parent_path() / j.at("blob").get<std::string>();
    std::ifstream bin(blob, std::ios::binary);
    if (!bin) {
        throw std::runtime_error("cannot open checkpoint blob " + blob.string());
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    if (bytes.size() != j.at("bytes").get<std::size_t>()) {
        throw std::invalid_argument("checkpoint blob " + blob.string() + " has " + std::to_string(bytes.size()) +
                                    " bytes, manifest says " + j.at("bytes").dump());
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = model_params[i];
        if (params[i].at("name") != p.name || params[i].at("shape").get<Shape>() != p.value.shape()) {
            throw std::invalid_argument("checkpoint: parameter " + std::to_string(i) + " is " +
                                        params[i].at("name").dump() + ", expected '" + p.name + "' " +
                                        shape_str(p.value.shape()));
        }
        const std::size_t offset = params[i].at("offset").get<std::size_t>();
        if (offset + p.value.size() * sizeof(double) > bytes.size()) {
            throw std::invalid_argument("checkpoint: parameter '" + p.name + "' runs past the blob");
        }
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            std::uint64_t le = 0;
            std::memcpy(&le, bytes.data() + offset + k * sizeof le, sizeof le);
            p.value[k] = std::bit_cast<double>(to_le(le));
        }
    }
    return ckpt;
}

}  // namespace stgnp
