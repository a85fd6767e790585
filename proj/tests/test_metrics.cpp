#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "stgnp/dataio.hpp"
#include "stgnp/evaluate.hpp"
#include "stgnp/metrics.hpp"
#include "stgnp/train.hpp"

using namespace stgnp;

namespace {

// One target, T steps, one feature: contexts (N, T, 1) built from per-node constants.
Tensor contexts(std::initializer_list<double> values, std::size_t T = 1) {
    Tensor y(Shape{values.size(), T, 1});
    std::size_t n = 0;
    for (double v : values) {
        for (std::size_t t = 0; t < T; ++t) {
            y.at(n, t, 0) = v;
        }
        ++n;
    }
    return y;
}

Tensor ones_like(const Tensor& t) { return Tensor(t.shape(), 1.0); }

}  // namespace

TEST(Metrics, PerfectPrediction) {
    MetricsAccumulator acc({"a", "b"}, true);
    acc.add(0, 2.0, 2.0, 0.1);
    acc.add(1, -3.0, -3.0, 0.5);
    const MetricsReport r = acc.report("m", "test");
    EXPECT_EQ(r.mae, 0.0);
    EXPECT_EQ(r.rmse, 0.0);
    EXPECT_EQ(*r.mape, 0.0);
    EXPECT_EQ(*r.coverage_1s, 1.0);
    EXPECT_EQ(*r.coverage_3s, 1.0);
}

TEST(Metrics, HandArithmetic) {
    MetricsAccumulator acc({"a"}, false);
    acc.add(0, 0.0, 3.0);
    acc.add(0, 0.0, 4.0);
    const MetricsReport r = acc.report("m", "test");
    EXPECT_EQ(r.mae, 3.5);
    EXPECT_NEAR(r.rmse, std::sqrt(12.5), 1e-15);
    EXPECT_NEAR(r.rmse, 3.5355, 1e-4);
    // |y| below the floor everywhere: MAPE undefined
    EXPECT_FALSE(r.mape.has_value());
    EXPECT_FALSE(r.coverage_1s.has_value());
}

TEST(Metrics, MapeUsesFloorAndRatio) {
    MetricsAccumulator acc({"a"}, false);
    acc.add(0, 2.0, 3.0);       // 0.5
    acc.add(0, -4.0, -3.0);     // 0.25
    acc.add(0, 1e-4, 10.0);     // excluded by the floor
    EXPECT_NEAR(*acc.report("m", "s").mape, 0.375, 1e-15);
}

TEST(Metrics, EmptyIsAnError) {
    MetricsAccumulator acc({"a"}, true);
    EXPECT_THROW(acc.report("m", "s"), std::runtime_error);
}

TEST(Metrics, JsonCarriesEveryField) {
    MetricsAccumulator acc({"a"}, false);
    acc.add(0, 1.0, 2.0);
    const auto j = to_json(acc.report("idw", "test"));
    for (const char* k : {"method", "segment", "count", "mae", "rmse", "mape", "coverage_1s", "coverage_2s",
                          "coverage_3s", "per_target", "runtime_seconds"}) {
        EXPECT_TRUE(j.contains(k)) << k;
    }
    EXPECT_TRUE(j["coverage_1s"].is_null());
    EXPECT_EQ(j["per_target"][0]["node_id"], "a");
}

TEST(Metrics, CalibratedGaussianCoverage) {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> u(0.1, 5.0);
    std::vector<double> y, mean, sd;
    for (int i = 0; i < 100000; ++i) {
        const double m = 10.0 * nd(rng), s = u(rng);
        mean.push_back(m);
        sd.push_back(s);
        y.push_back(m + s * nd(rng));
    }
    const auto cov = sigma_coverage(y, mean, sd);
    EXPECT_NEAR(cov[0], 0.683, 0.01);
    EXPECT_NEAR(cov[1], 0.955, 0.01);
    EXPECT_NEAR(cov[2], 0.997, 0.01);
}

TEST(Metrics, CoverageMonotoneAndOrderInvariant) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    std::vector<std::tuple<std::size_t, double, double, double>> entries;
    for (int i = 0; i < 3000; ++i) {
        entries.emplace_back(i % 4, nd(rng), nd(rng), 0.2 + std::abs(nd(rng)));
    }
    auto run = [&]() {
        MetricsAccumulator acc({"a", "b", "c", "d"}, true);
        for (const auto& [t, y, m, s] : entries) {
            acc.add(t, y, m, s);
        }
        return acc.report("m", "s");
    };
    const MetricsReport a = run();
    EXPECT_LE(*a.coverage_1s, *a.coverage_2s);
    EXPECT_LE(*a.coverage_2s, *a.coverage_3s);
    EXPECT_LE(*a.coverage_3s, 1.0);
    std::shuffle(entries.begin(), entries.end(), rng);
    const MetricsReport b = run();
    EXPECT_NEAR(a.mae, b.mae, 1e-12);
    EXPECT_NEAR(a.rmse, b.rmse, 1e-12);
    EXPECT_NEAR(*a.mape, *b.mape, 1e-12);
    EXPECT_EQ(*a.coverage_1s, *b.coverage_1s);
    EXPECT_EQ(*a.coverage_2s, *b.coverage_2s);
}

TEST(Idw, EqualDistancesAverage) {
    const Tensor y = contexts({0.0, 10.0});
    const PointPrediction p = baseline_idw(y, ones_like(y), Tensor::matrix({{2.0, 2.0}}));
    EXPECT_EQ(p.mean[0], 5.0);
}

TEST(Idw, WeightArithmetic) {
    const Tensor y = contexts({0.0, 10.0});
    const PointPrediction p = baseline_idw(y, ones_like(y), Tensor::matrix({{1.0, 3.0}}), 2.0);
    EXPECT_NEAR(p.mean[0], 1.0, 1e-15);
}

TEST(Idw, SingleContextAndColocated) {
    const Tensor one = contexts({7.25});
    EXPECT_EQ(baseline_idw(one, ones_like(one), Tensor::matrix({{3.0}})).mean[0], 7.25);
    const Tensor y = contexts({4.0, 9.0});
    EXPECT_EQ(baseline_idw(y, ones_like(y), Tensor::matrix({{0.5, 0.0}})).mean[0], 9.0);
}

TEST(Idw, AllMissingContextsMaskThePrediction) {
    const Tensor y = contexts({1.0, 2.0}, 2);
    Tensor mask = ones_like(y);
    mask.at(0, 1, 0) = 0.0;
    mask.at(1, 1, 0) = 0.0;
    const PointPrediction p = baseline_idw(y, mask, Tensor::matrix({{1.0, 1.0}}));
    EXPECT_EQ(p.mask.at(0, 0, 0), 1.0);
    EXPECT_EQ(p.mask.at(0, 1, 0), 0.0);
}

TEST(Knn, Examples) {
    const Tensor y = contexts({1.0, 3.0, 100.0});
    const Tensor d = Tensor::matrix({{1.0, 2.0, 9.0}});
    EXPECT_EQ(baseline_knn(y, ones_like(y), d, 2).mean[0], 2.0);
    EXPECT_EQ(baseline_knn(y, ones_like(y), d, 1).mean[0], 1.0);
    EXPECT_NEAR(baseline_knn(y, ones_like(y), d, 3).mean[0], 104.0 / 3.0, 1e-13);
    EXPECT_THROW(baseline_knn(y, ones_like(y), d, 0), std::invalid_argument);
    EXPECT_THROW(baseline_knn(y, ones_like(y), d, 4), std::invalid_argument);
}

TEST(Baselines, IdwBeatsTheGlobalMeanOnSyntheticData) {
    const StDataset d = generate_synthetic(20, 2400, 7);
    const HoldoutSplit split = holdout_split(d.nodes(), 0.3, 0);
    std::vector<std::string> targets;
    for (std::size_t i : split.heldout) {
        targets.push_back(d.node_ids[i]);
    }
    BaselineOptions opt;
    const MetricsReport idw = evaluate_baseline(d, targets, Segment::test, opt);
    // Global mean of all train-segment context values.
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t n : split.train_nodes) {
        for (std::size_t t = 0; t < d.split.end(Segment::train); ++t) {
            sum += d.y.at(n, t, 0);
            ++count;
        }
    }
    const double global = sum / static_cast<double>(count);
    MetricsAccumulator acc(targets, false);
    for (std::size_t start : iter_windows(d, Segment::test, 24, 24)) {
        for (std::size_t m = 0; m < split.heldout.size(); ++m) {
            for (std::size_t t = 0; t < 24; ++t) {
                acc.add(m, d.y.at(split.heldout[m], start + t, 0), global);
            }
        }
    }
    const MetricsReport mean_report = acc.report("mean", "test");
    EXPECT_EQ(idw.count, mean_report.count);
    EXPECT_LT(idw.mae, mean_report.mae);
    EXPECT_FALSE(idw.coverage_1s.has_value());
}

TEST(Baselines, StandardizedInputScoresInOriginalUnits) {
    const StDataset d = corrupt_missing(generate_synthetic(8, 300, 3), 0.2, 1);
    const std::vector<std::string> targets{d.node_ids[1], d.node_ids[5]};
    BaselineOptions opt;
    opt.method = BaselineMethod::knn;
    opt.k = 3;
    const MetricsReport a = evaluate_baseline(d, targets, Segment::test, opt);
    const MetricsReport b = evaluate_baseline(standardize(d), targets, Segment::test, opt);
    EXPECT_EQ(a.count, b.count);
    EXPECT_NEAR(a.mae, b.mae, 1e-12);
    EXPECT_EQ(parse_baseline_method("idw"), BaselineMethod::idw);
    EXPECT_THROW(parse_baseline_method("rf"), std::invalid_argument);
}
