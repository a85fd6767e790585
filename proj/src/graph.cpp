#include "stgnp/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace stgnp {

std::string to_string(DistanceKind kind) {
    return kind == DistanceKind::haversine_km ? "haversine_km" : "euclidean";
}

DistanceKind parse_distance_kind(const std::string& name) {
    if (name == "haversine_km" || name == "haversine") {
        return DistanceKind::haversine_km;
    }
    if (name == "euclidean") {
        return DistanceKind::euclidean;
    }
    throw std::invalid_argument("unknown distance '" + name + "' (expected haversine_km or euclidean)");
}

void GraphConfig::validate() const {
    if (kernel_sigma && !(*kernel_sigma > 0.0)) {
        throw std::invalid_argument("graph: kernel_sigma must be positive");
    }
    if (!(threshold >= 0.0 && threshold < 1.0)) {
        throw std::invalid_argument("graph: threshold must lie in [0, 1)");
    }
    if (K < 1) {
        throw std::invalid_argument("graph: K must be >= 1");
    }
}

double haversine_km(Coord p, Coord q) {
    constexpr double rad = std::numbers::pi / 180.0;
    const double phi1 = p.a * rad;
    const double phi2 = q.a * rad;
    const double dphi = (q.a - p.a) * rad;
    const double dlambda = (q.b - p.b) * rad;
    const double s1 = std::sin(dphi / 2.0);
    const double s2 = std::sin(dlambda / 2.0);
    const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
    return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(std::min(1.0, h)));
}

double euclidean_distance(Coord p, Coord q) {
    return std::hypot(p.a - q.a, p.b - q.b);
}

double node_distance(Coord p, Coord q, DistanceKind kind) {
    return kind == DistanceKind::haversine_km ? haversine_km(p, q) : euclidean_distance(p, q);
}

Tensor pairwise_distances(std::span<const Coord> coords, DistanceKind kind) {
    const std::size_t n = coords.size();
    for (const Coord& c : coords) {
        if (!std::isfinite(c.a) || !std::isfinite(c.b)) {
            throw std::invalid_argument("pairwise_distances: non-finite coordinate");
        }
    }
    Tensor d(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = node_distance(coords[i], coords[j], kind);
            d.at(i, j) = v;
            d.at(j, i) = v;
        }
    }
    return d;
}

double default_kernel_sigma(const Tensor& distances) {
    const std::size_t n = distances.dim(0);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            sum += distances.at(i, j);
            ++count;
        }
    }
    if (count == 0) {
        return 1.0;
    }
    const double mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = distances.at(i, j) - mean;
            ss += d * d;
        }
    }
    const double sd = std::sqrt(ss / static_cast<double>(count));
    if (sd > 0.0) {
        return sd;
    }
    return mean > 0.0 ? mean : 1.0;
}

Tensor build_adjacency(std::span<const Coord> coords, const GraphConfig& config) {
    config.validate();
    if (coords.size() < 2) {
        throw std::invalid_argument("build_adjacency: need at least 2 nodes");
    }
    const Tensor dist = pairwise_distances(coords, config.distance);
    const double sigma = config.kernel_sigma.value_or(default_kernel_sigma(dist));
    const std::size_t n = coords.size();
    Tensor adj(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = dist.at(i, j);
            double w = std::exp(-(d * d) / (sigma * sigma));
            if (w < config.threshold) {
                w = 0.0;
            }
            adj.at(i, j) = w;
            adj.at(j, i) = w;
        }
    }
    return adj;
}

std::vector<Tensor> adjacency_powers(const Tensor& adjacency, std::size_t K) {
    if (K < 1) {
        throw std::invalid_argument("adjacency_powers: K must be >= 1");
    }
    if (adjacency.rank() != 2 || adjacency.dim(0) != adjacency.dim(1)) {
        throw std::invalid_argument("adjacency_powers: adjacency must be square");
    }
    const std::size_t n = adjacency.dim(0);
    std::vector<Tensor> clipped;
    clipped.reserve(K + 1);
    Tensor power(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) {
        power.at(i, i) = 1.0;
    }
    clipped.push_back(power);
    for (std::size_t k = 1; k <= K; ++k) {
        Tensor next(Shape{n, n});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t l = 0; l < n; ++l) {
                const double p = power.at(i, l);
                if (p == 0.0) {
                    continue;
                }
                for (std::size_t j = 0; j < n; ++j) {
                    next.at(i, j) += p * adjacency.at(l, j);
                }
            }
        }
        power = next;
        for (std::size_t i = 0; i < next.size(); ++i) {
            next[i] = std::clamp(next[i], 0.0, 1.0);
        }
        clipped.push_back(std::move(next));
    }
    return clipped;
}

std::vector<Tensor> slice_cross(std::span<const Tensor> powers, std::span<const std::size_t> context_ids,
                                std::span<const std::size_t> target_ids) {
    std::vector<Tensor> blocks;
    blocks.reserve(powers.size());
    for (const Tensor& p : powers) {
        Tensor block(Shape{target_ids.size(), context_ids.size()});
        for (std::size_t m = 0; m < target_ids.size(); ++m) {
            for (std::size_t c = 0; c < context_ids.size(); ++c) {
                block.at(m, c) = p.at(target_ids[m], context_ids[c]);
            }
        }
        blocks.push_back(std::move(block));
    }
    return blocks;
}

std::vector<Tensor> khop_cross_adjacency(const Tensor& adjacency, std::size_t K,
                                         std::span<const std::size_t> context_ids,
                                         std::span<const std::size_t> target_ids) {
    const std::vector<Tensor> powers = adjacency_powers(adjacency, K);
    return slice_cross(powers, context_ids, target_ids);
}

Partition split_context_target(std::size_t node_count, double target_fraction, std::uint64_t seed) {
    if (node_count < 2) {
        throw std::invalid_argument("split_context_target: need at least 2 nodes");
    }
    if (!(target_fraction > 0.0 && target_fraction < 1.0)) {
        throw std::invalid_argument("split_context_target: target_fraction must lie in (0, 1)");
    }
    const auto targets = static_cast<std::size_t>(std::llround(static_cast<double>(node_count) * target_fraction));
    if (targets < 1 || targets >= node_count) {
        throw std::invalid_argument("split_context_target: fraction leaves an empty side for " +
                                    std::to_string(node_count) + " nodes");
    }
    std::vector<std::size_t> pool(node_count);
    std::iota(pool.begin(), pool.end(), 0);
    return sample_partition(pool, targets, seed);
}

Partition sample_partition(std::span<const std::size_t> pool, std::size_t target_count, std::uint64_t seed) {
    if (target_count < 1 || target_count >= pool.size()) {
        throw std::invalid_argument("sample_partition: cannot draw " + std::to_string(target_count) +
                                    " targets from " + std::to_string(pool.size()) + " nodes");
    }
    std::vector<std::size_t> order(pool.begin(), pool.end());
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    Partition p;
    p.target_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(target_count));
    p.context_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(target_count), order.end());
    std::sort(p.target_ids.begin(), p.target_ids.end());
    std::sort(p.context_ids.begin(), p.context_ids.end());
    return p;
}

SensorGraph SensorGraph::build(std::vector<std::string> node_ids, std::vector<Coord> coords,
                               const GraphConfig& config, Partition partition) {
    if (node_ids.size() != coords.size()) {
        throw std::invalid_argument("SensorGraph: node id / coordinate count mismatch");
    }
    std::vector<bool> seen(node_ids.size(), false);
    for (const auto* ids : {&partition.context_ids, &partition.target_ids}) {
        for (std::size_t i : *ids) {
            if (i >= node_ids.size() || seen[i]) {
                throw std::invalid_argument("SensorGraph: context/target lists overlap or are out of range");
            }
            seen[i] = true;
        }
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
        throw std::invalid_argument("SensorGraph: context/target lists do not cover every node");
    }
    SensorGraph g;
    g.adjacency_full = build_adjacency(coords, config);
    g.khop_cross = khop_cross_adjacency(g.adjacency_full, config.K, partition.context_ids, partition.target_ids);
    g.node_ids = std::move(node_ids);
    g.coords = std::move(coords);
    g.context_ids = std::move(partition.context_ids);
    g.target_ids = std::move(partition.target_ids);
    return g;
}

}  // namespace stgnp
