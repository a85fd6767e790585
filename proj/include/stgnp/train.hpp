#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "stgnp/checkpoint.hpp"
#include "stgnp/config.hpp"
#include "stgnp/dataio.hpp"
#include "stgnp/model.hpp"

namespace stgnp {

/// Weights ~ N(0, 2 / (fan_in + fan_out)); biases and the token ~ N(0, 1 / d0).
void xavier_init(StgnpModel& model, std::uint64_t seed);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::size_t t = 0;
};

/// One bias-corrected Adam update using each parameter's grad.
void adam_step(std::span<Parameter> params, AdamState& state, const AdamConfig& config);

double global_grad_norm(std::span<const Parameter> params);
/// Rescales all grads so their global norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(std::span<Parameter> params, double max_norm);

/// Mixes a seed with a stream id and counters into an independent 64-bit seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t a = 0, std::uint64_t b = 0);

/// Node roles for one experiment: held-out targets never take part in training.
struct HoldoutSplit {
    std::vector<std::size_t> train_nodes;
    std::vector<std::size_t> heldout;
};

HoldoutSplit holdout_split(std::size_t node_count, double fraction, std::uint64_t seed);

/// Principal submatrix of an adjacency on the given nodes.
Tensor sub_adjacency(const Tensor& adjacency, std::span<const std::size_t> nodes);

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_mae = 0.0;
};

struct TrainResult {
    Checkpoint best;
    std::vector<EpochLog> log;
    double seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains on the train segment of `raw` (standardized internally). The best
/// epoch by validation MAE is kept. With a checkpoint_dir set, the best
/// checkpoint and the log are written there as training proceeds.
TrainResult train(const StDataset& raw, const GraphConfig& graph, StgnpConfig model_config, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

void write_train_log(std::span<const EpochLog> log, const std::filesystem::path& path);

}  // namespace stgnp
