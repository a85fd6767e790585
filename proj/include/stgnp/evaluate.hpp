#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "stgnp/checkpoint.hpp"
#include "stgnp/dataio.hpp"
#include "stgnp/metrics.hpp"

namespace stgnp {

/// Predicts the held-out targets of `ckpt` over non-overlapping windows of
/// the segment (predictive mean), scoring observed entries in original units.
/// `raw` is standardized with its own train segment.
MetricsReport evaluate(const Checkpoint& ckpt, const StDataset& raw, Segment segment);

struct PredictionRow {
    std::string node_id;
    std::string timestamp;
    std::size_t feature = 0;
    double mean = 0.0;
    double std = 0.0;
};

/// Predictive mean/std in original units for the named targets over time
/// steps [begin, end), using every other node as context. The range is
/// covered by length-T windows; a ragged tail is served by one extra window
/// ending at `end`.
std::vector<PredictionRow> extrapolate(const Checkpoint& ckpt, const StDataset& raw,
                                       std::span<const std::string> target_ids, std::size_t begin, std::size_t end);

void write_predictions(std::span<const PredictionRow> rows, const std::filesystem::path& path);

// ---- baselines ---------------------------------------------------------------------

enum class BaselineMethod { idw, knn };

std::string to_string(BaselineMethod m);
BaselineMethod parse_baseline_method(const std::string& name);

/// Point predictions (M, T, d) with a mask of which entries could be predicted.
struct PointPrediction {
    Tensor mean;
    Tensor mask;
};

/// Inverse-distance weighting over observed contexts at each step:
/// w_n = dist^-power; a context at distance 0 supplies its value directly.
/// `distances` is (M, N).
PointPrediction baseline_idw(const Tensor& y_context, const Tensor& context_mask, const Tensor& distances,
                             double power = 2.0);

/// Unweighted mean of the k nearest observed contexts at each step.
PointPrediction baseline_knn(const Tensor& y_context, const Tensor& context_mask, const Tensor& distances,
                             std::size_t k);

struct BaselineOptions {
    BaselineMethod method = BaselineMethod::idw;
    double power = 2.0;
    std::size_t k = 5;
    std::size_t window = 24;
    DistanceKind distance = DistanceKind::haversine_km;
};

/// Scores a baseline on exactly the entries `evaluate` would score for the
/// same targets, in original units.
MetricsReport evaluate_baseline(const StDataset& raw, std::span<const std::string> target_ids, Segment segment,
                                const BaselineOptions& options);

}  // namespace stgnp
