#include "stgnp/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace stgnp {

using nlohmann::json;

namespace {

json opt(const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
}

}  // namespace

json to_json(const MetricsReport& r) {
    json targets = json::array();
    for (const TargetMetrics& t : r.per_target) {
        targets.push_back(
            {{"node_id", t.node_id}, {"count", t.count}, {"mae", t.mae}, {"rmse", t.rmse}, {"mape", opt(t.mape)}});
    }
    return {{"method", r.method},
            {"segment", r.segment},
            {"count", r.count},
            {"mae", r.mae},
            {"rmse", r.rmse},
            {"mape", opt(r.mape)},
            {"coverage_1s", opt(r.coverage_1s)},
            {"coverage_2s", opt(r.coverage_2s)},
            {"coverage_3s", opt(r.coverage_3s)},
            {"per_target", targets},
            {"runtime_seconds", r.runtime_seconds}};
}

MetricsAccumulator::MetricsAccumulator(std::vector<std::string> target_names, bool with_std, double mape_floor)
    : names_(std::move(target_names)), with_std_(with_std), mape_floor_(mape_floor), sums_(names_.size()) {}

void MetricsAccumulator::add(std::size_t target, double y, double mean, double std) {
    Sums& s = sums_.at(target);
    const double err = std::abs(y - mean);
    ++s.count;
    s.abs += err;
    s.sq += err * err;
    if (std::abs(y) > mape_floor_) {
        ++s.mape_count;
        s.mape += err / std::abs(y);
    }
    if (with_std_) {
        for (int k = 0; k < 3; ++k) {
            if (err <= (k + 1) * std) {
                ++s.within[k];
            }
        }
    }
}

MetricsReport MetricsAccumulator::report(std::string method, std::string segment) const {
    MetricsReport r;
    r.method = std::move(method);
    r.segment = std::move(segment);
    Sums total;
    for (std::size_t i = 0; i < sums_.size(); ++i) {
        const Sums& s = sums_[i];
        TargetMetrics t;
        t.node_id = names_[i];
        t.count = s.count;
        if (s.count > 0) {
            t.mae = s.abs / static_cast<double>(s.count);
            t.rmse = std::sqrt(s.sq / static_cast<double>(s.count));
        }
        if (s.mape_count > 0) {
            t.mape = s.mape / static_cast<double>(s.mape_count);
        }
        r.per_target.push_back(t);
        total.count += s.count;
        total.abs += s.abs;
        total.sq += s.sq;
        total.mape_count += s.mape_count;
        total.mape += s.mape;
        for (int k = 0; k < 3; ++k) {
            total.within[k] += s.within[k];
        }
    }
    if (total.count == 0) {
        throw std::runtime_error("metrics: no observed target entries");
    }
    const auto n = static_cast<double>(total.count);
    r.count = total.count;
    r.mae = total.abs / n;
    r.rmse = std::sqrt(total.sq / n);
    if (total.mape_count > 0) {
        r.mape = total.mape / static_cast<double>(total.mape_count);
    }
    if (with_std_) {
        r.coverage_1s = static_cast<double>(total.within[0]) / n;
        r.coverage_2s = static_cast<double>(total.within[1]) / n;
        r.coverage_3s = static_cast<double>(total.within[2]) / n;
    }
    return r;
}

std::vector<double> sigma_coverage(const std::vector<double>& y, const std::vector<double>& mean,
                                   const std::vector<double>& std) {
    if (y.size() != mean.size() || y.size() != std.size() || y.empty()) {
        throw std::invalid_argument("sigma_coverage: need equal-length, non-empty inputs");
    }
    MetricsAccumulator acc({"all"}, true);
    for (std::size_t i = 0; i < y.size(); ++i) {
        acc.add(0, y[i], mean[i], std[i]);
    }
    const MetricsReport r = acc.report("", "");
    return {*r.coverage_1s, *r.coverage_2s, *r.coverage_3s};
}

}  // namespace stgnp
