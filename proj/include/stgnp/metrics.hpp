#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace stgnp {

inline constexpr double kMapeFloor = 1e-3;

struct TargetMetrics {
    std::string node_id;
    std::size_t count = 0;
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> mape;
};

/// Errors in original units over observed target entries. Coverage is only
/// reported for methods that predict a standard deviation.
struct MetricsReport {
    std::string method;
    std::string segment;
    std::size_t count = 0;
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> mape;  // ratio, over entries with |y| > kMapeFloor
    std::optional<double> coverage_1s;
    std::optional<double> coverage_2s;
    std::optional<double> coverage_3s;
    std::vector<TargetMetrics> per_target;
    double runtime_seconds = 0.0;
};

nlohmann::json to_json(const MetricsReport& r);

class MetricsAccumulator {
public:
    MetricsAccumulator(std::vector<std::string> target_names, bool with_std, double mape_floor = kMapeFloor);

    void add(std::size_t target, double y, double mean, double std = 0.0);
    /// Throws std::runtime_error when nothing was added.
    MetricsReport report(std::string method, std::string segment) const;

private:
    struct Sums {
        std::size_t count = 0;
        double abs = 0.0;
        double sq = 0.0;
        std::size_t mape_count = 0;
        double mape = 0.0;
        std::size_t within[3] = {0, 0, 0};
    };

    std::vector<std::string> names_;
    bool with_std_;
    double mape_floor_;
    std::vector<Sums> sums_;
};

/// Fraction of entries with |y - mean| <= k * std, k = 1, 2, 3.
std::vector<double> sigma_coverage(const std::vector<double>& y, const std::vector<double>& mean,
                                   const std::vector<double>& std);

}  // namespace stgnp
