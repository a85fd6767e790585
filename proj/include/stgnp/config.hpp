#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "stgnp/graph.hpp"
#include "stgnp/model.hpp"

namespace stgnp {

struct TrainConfig {
    double lr = 1e-3;
    std::size_t epochs = 150;
    std::size_t batch_windows = 8;
    std::size_t target_count = 3;
    double grad_clip = 5.0;
    std::uint64_t seed = 0;
    // Fraction of nodes held out as evaluation targets; never seen in training.
    double holdout_fraction = 0.3;
    // Fixed random partitions of the training nodes per validation window.
    std::size_t val_partitions = 2;
    std::size_t threads = 1;
    std::string checkpoint_dir;

    void validate() const;
};

struct DataConfig {
    std::string path;
    double missing_ratio = 0.0;
    std::uint64_t missing_seed = 0;
};

/// Everything a run needs. d_x and d_y are taken from the data at train time
/// and the model's K always follows the graph section.
struct RunConfig {
    DataConfig data;
    GraphConfig graph;
    StgnpConfig model;
    TrainConfig train;
};

nlohmann::json to_json(const GraphConfig& c);
nlohmann::json to_json(const StgnpConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const RunConfig& c);

// Missing keys keep their defaults; unknown keys and wrong types throw
// std::invalid_argument naming the key.
GraphConfig graph_config_from_json(const nlohmann::json& j);
StgnpConfig model_config_from_json(const nlohmann::json& j, StgnpConfig base = {});
TrainConfig train_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace stgnp
