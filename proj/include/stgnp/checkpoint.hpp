#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stgnp/config.hpp"
#include "stgnp/model.hpp"

namespace stgnp {

/// A trained model plus what is needed to evaluate it on the same graph.
struct Checkpoint {
    StgnpModel model;
    GraphConfig graph;
    TrainConfig train;
    std::vector<std::string> node_ids;
    std::vector<std::string> target_ids;  // held out during training
    std::size_t epoch = 0;
    double val_mae = 0.0;
};

/// Writes `manifest` (JSON) and the parameter blob next to it with extension
/// .bin: raw little-endian float64 values in manifest order.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& manifest);
Checkpoint load_checkpoint(const std::filesystem::path& manifest);

}  // namespace stgnp
