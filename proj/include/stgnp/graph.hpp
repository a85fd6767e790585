#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stgnp/tensor.hpp"

namespace stgnp {

enum class DistanceKind { haversine_km, euclidean };

std::string to_string(DistanceKind kind);
DistanceKind parse_distance_kind(const std::string& name);

/// (latitude, longitude) in degrees for geographic data, (x, y) otherwise.
struct Coord {
    double a = 0.0;
    double b = 0.0;
};

struct GraphConfig {
    // Unset means: standard deviation of all pairwise distances.
    std::optional<double> kernel_sigma;
    double threshold = 0.1;
    std::size_t K = 2;
    DistanceKind distance = DistanceKind::haversine_km;

    void validate() const;
};

inline constexpr double kEarthRadiusKm = 6371.0;

double haversine_km(Coord p, Coord q);
double euclidean_distance(Coord p, Coord q);
double node_distance(Coord p, Coord q, DistanceKind kind);

/// Symmetric N x N matrix of distances.
Tensor pairwise_distances(std::span<const Coord> coords, DistanceKind kind);

/// Population standard deviation of the distances over unordered pairs.
/// Falls back to the mean distance (or 1) when all pairwise distances coincide.
double default_kernel_sigma(const Tensor& distances);

/// w_ij = exp(-d_ij^2 / sigma^2) when that is >= threshold, else 0; zero diagonal.
Tensor build_adjacency(std::span<const Coord> coords, const GraphConfig& config);

/// Full-size powers A^0 .. A^K, each clipped entrywise to [0, 1].
std::vector<Tensor> adjacency_powers(const Tensor& adjacency, std::size_t K);

/// Target x context blocks of the clipped powers, k = 0..K.
std::vector<Tensor> khop_cross_adjacency(const Tensor& adjacency, std::size_t K,
                                         std::span<const std::size_t> context_ids,
                                         std::span<const std::size_t> target_ids);

/// Slices precomputed powers to the target x context block.
std::vector<Tensor> slice_cross(std::span<const Tensor> powers, std::span<const std::size_t> context_ids,
                                std::span<const std::size_t> target_ids);

struct Partition {
    std::vector<std::size_t> context_ids;
    std::vector<std::size_t> target_ids;
};

/// Seeded shuffle; round(n * fraction) targets, the rest context. Both lists ascending.
Partition split_context_target(std::size_t node_count, double target_fraction, std::uint64_t seed);

/// Draws `target_count` targets from `pool`; the remainder of the pool is context.
Partition sample_partition(std::span<const std::size_t> pool, std::size_t target_count, std::uint64_t seed);

struct SensorGraph {
    std::vector<std::string> node_ids;
    std::vector<Coord> coords;
    Tensor adjacency_full;
    std::vector<Tensor> khop_cross;
    std::vector<std::size_t> context_ids;
    std::vector<std::size_t> target_ids;

    static SensorGraph build(std::vector<std::string> node_ids, std::vector<Coord> coords,
                             const GraphConfig& config, Partition partition);
};

}  // namespace stgnp
