#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stgnp/graph.hpp"
#include "stgnp/model.hpp"
#include "stgnp/tensor.hpp"

namespace stgnp {

enum class Segment { train, val, test };

std::string to_string(Segment s);
Segment parse_segment(const std::string& name);

/// Sequential 80/10/10 cut of the time axis.
struct SplitBounds {
    std::size_t train_end = 0;
    std::size_t val_end = 0;
    std::size_t total = 0;

    static SplitBounds sequential(std::size_t steps);
    std::size_t begin(Segment s) const;
    std::size_t end(Segment s) const;
    std::size_t length(Segment s) const { return end(s) - begin(s); }
};

struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;

    double forward(std::size_t feature, double v) const { return (v - mean[feature]) / std[feature]; }
    double inverse(std::size_t feature, double v) const { return v * std[feature] + mean[feature]; }
};

/// Signals and covariates on a sensor graph. Tensors are (node, time, feature);
/// missing entries hold 0.0 with mask 0.
struct StDataset {
    std::vector<std::string> node_ids;
    std::vector<Coord> coords;
    std::vector<std::string> timestamps;
    Tensor y;
    Tensor x;
    Tensor mask;    // same shape as y
    Tensor x_mask;  // same shape as x
    SplitBounds split;
    bool standardized = false;
    NormStats y_stats;
    NormStats x_stats;

    std::size_t nodes() const { return node_ids.size(); }
    std::size_t steps() const { return timestamps.size(); }
    std::size_t d_y() const { return y.dim(2); }
    std::size_t d_x() const { return x.dim(2); }
    std::size_t observed_count() const;
    std::size_t node_index(const std::string& id) const;
};

struct SyntheticParams {
    double alpha = 0.8;
    double beta = 0.5;
    double gamma = 0.1;
    std::size_t burn_in = 100;
    std::size_t window = 24;  // only used for the length precondition
};

/// Diffusion of a daily-periodic signal over a random sensor graph in the
/// unit square:
///   Y_t = alpha * (Ã Y_{t-1}) + beta * sin(2 pi t / 24 + phi) + gamma * eps_t
/// with Ã the row-normalized thresholded-Gaussian adjacency.
StDataset generate_synthetic(std::size_t n_nodes, std::size_t n_steps, std::uint64_t seed,
                             const SyntheticParams& params = {});

/// Reads `node_id,lat,lon,timestamp,y_0..,x_0..`. Empty fields are missing.
StDataset load_csv(const std::filesystem::path& path);
void write_csv(const StDataset& data, const std::filesystem::path& path);

/// Seconds since the epoch for ISO-8601 stamps, the integer itself otherwise.
std::int64_t parse_timestamp(const std::string& text);

/// Hides floor(ratio * observed) uniformly chosen observed signal entries.
StDataset corrupt_missing(const StDataset& data, double ratio, std::uint64_t seed);

/// Z-scores every feature using observed entries of the train segment.
StDataset standardize(const StDataset& data);
/// Maps standardized signal values back to original units (feature = last axis).
Tensor destandardize_y(const StDataset& data, const Tensor& values);
Tensor destandardize_y_std(const StDataset& data, const Tensor& stds);

/// Start indices of length-T windows inside a segment.
std::vector<std::size_t> iter_windows(const StDataset& data, Segment segment, std::size_t T, std::size_t stride);

/// Tensors for one window and one context/target partition.
struct WindowBatch {
    std::size_t start = 0;
    WindowInputs inputs;
    TargetObservations target;
    Tensor context_mask;
};

WindowBatch slice_window(const StDataset& data, std::size_t start, std::size_t T,
                         std::span<const std::size_t> context_ids, std::span<const std::size_t> target_ids,
                         std::vector<Tensor> khop);

}  // namespace stgnp
