#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "stgnp/evaluate.hpp"
#include "stgnp/train.hpp"
#include "test_util.hpp"

using namespace stgnp;

namespace {

StgnpConfig small_model() {
    StgnpConfig c;
    c.layers = 2;
    c.det_channels = {4, 4};
    c.latent_channels = {3, 3};
    c.d0 = 4;
    c.likelihood_hidden = 8;
    c.likelihood_layers = 2;
    c.window = 8;
    return c;
}

TrainConfig small_train(std::uint64_t seed, std::size_t epochs = 1) {
    TrainConfig t;
    t.epochs = epochs;
    t.seed = seed;
    t.batch_windows = 4;
    t.target_count = 2;
    return t;
}

bool same_parameters(const StgnpModel& a, const StgnpModel& b) {
    if (a.parameters().size() != b.parameters().size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        const Tensor& x = a.parameters()[i].value;
        const Tensor& y = b.parameters()[i].value;
        if (x.shape() != y.shape() || std::memcmp(x.ptr(), y.ptr(), x.size() * sizeof(double)) != 0) {
            return false;
        }
    }
    return true;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST(Init, XavierVarianceOnSquareWeight) {
    StgnpConfig c;
    c.likelihood_hidden = 100;
    StgnpModel m(c);
    xavier_init(m, 11);
    bool found = false;
    for (std::size_t i = 0; i < m.parameters().size(); ++i) {
        const ParamInfo& info = m.param_info()[i];
        if (info.kind != ParamKind::weight || info.fan_in != 100 || info.fan_out != 100) {
            continue;
        }
        found = true;
        const auto& v = m.parameters()[i].value.values();
        double ss = 0.0;
        for (double x : v) {
            ss += x * x;
        }
        EXPECT_NEAR(ss / static_cast<double>(v.size()), 0.01, 0.001) << m.parameters()[i].name;
    }
    EXPECT_TRUE(found);
}

TEST(Init, SeededAndGradsCleared) {
    StgnpModel a(small_model()), b(small_model()), c(small_model());
    xavier_init(a, 5);
    xavier_init(b, 5);
    xavier_init(c, 6);
    EXPECT_TRUE(same_parameters(a, b));
    EXPECT_FALSE(same_parameters(a, c));
    for (const Parameter& p : a.parameters()) {
        EXPECT_EQ(global_grad_norm(std::span<const Parameter>(&p, 1)), 0.0);
    }
}

TEST(Adam, FirstStepMovesByLearningRate) {
    std::vector<Parameter> params{Parameter("w", Tensor::vector({1.0, -2.0, 0.5}))};
    params[0].grad = Tensor::vector({3.0, -0.01, 0.0});
    AdamState state;
    adam_step(params, state, AdamConfig{});
    // With bias correction the first update is lr * g / (|g| + eps).
    EXPECT_NEAR(params[0].value[0], 1.0 - 1e-3, 1e-10);
    EXPECT_NEAR(params[0].value[1], -2.0 + 1e-3, 1e-8);
    EXPECT_EQ(params[0].value[2], 0.5);
    EXPECT_EQ(state.t, 1u);
}

TEST(Adam, ConstantGradientKeepsStepSize) {
    std::vector<Parameter> params{Parameter("w", Tensor::vector({0.0}))};
    AdamState state;
    for (int i = 0; i < 10; ++i) {
        params[0].grad = Tensor::vector({0.7});
        adam_step(params, state, AdamConfig{0.01});
    }
    EXPECT_NEAR(params[0].value[0], -0.1, 1e-8);
}

TEST(Clip, RescalesOnlyAboveThreshold) {
    std::vector<Parameter> params{Parameter("a", Tensor::vector({0.0, 0.0})), Parameter("b", Tensor::vector({0.0}))};
    params[0].grad = Tensor::vector({3.0, 0.0});
    params[1].grad = Tensor::vector({4.0});
    EXPECT_EQ(clip_grad_norm(params, 10.0), 5.0);
    EXPECT_EQ(params[0].grad[0], 3.0);
    EXPECT_EQ(clip_grad_norm(params, 1.0), 5.0);
    EXPECT_NEAR(params[0].grad[0], 0.6, 1e-15);
    EXPECT_NEAR(params[1].grad[0], 0.8, 1e-15);
    EXPECT_NEAR(global_grad_norm(params), 1.0, 1e-15);
}

TEST(Seeds, DerivedStreamsDiffer) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 4; ++s) {
        for (std::uint64_t a = 0; a < 50; ++a) {
            seen.insert(derive_seed(1, s, a));
        }
    }
    EXPECT_EQ(seen.size(), 200u);
    EXPECT_EQ(derive_seed(3, 2, 1, 0), derive_seed(3, 2, 1, 0));
    EXPECT_NE(derive_seed(3, 2, 1, 0), derive_seed(3, 2, 0, 1));
}

TEST(Holdout, PartitionsNodes) {
    const HoldoutSplit s = holdout_split(20, 0.3, 4);
    EXPECT_EQ(s.heldout.size(), 6u);
    EXPECT_EQ(s.train_nodes.size(), 14u);
    std::set<std::size_t> all(s.heldout.begin(), s.heldout.end());
    all.insert(s.train_nodes.begin(), s.train_nodes.end());
    EXPECT_EQ(all.size(), 20u);
    EXPECT_EQ(holdout_split(20, 0.3, 4).heldout, s.heldout);
}

TEST(Holdout, SubAdjacency) {
    const Tensor a = Tensor::matrix({{0, 1, 2}, {3, 0, 4}, {5, 6, 0}});
    const std::vector<std::size_t> nodes{2, 0};
    const Tensor s = sub_adjacency(a, nodes);
    EXPECT_EQ(s.at(0, 1), 5.0);
    EXPECT_EQ(s.at(1, 0), 2.0);
    EXPECT_EQ(s.at(0, 0), 0.0);
}

TEST(Train, OneEpochIsFiniteAndNeverUsesHeldOutNodes) {
    const StDataset d = generate_synthetic(10, 300, 1);
    const TrainResult r = train(d, GraphConfig{}, small_model(), small_train(2));
    ASSERT_EQ(r.log.size(), 1u);
    EXPECT_TRUE(std::isfinite(r.log[0].train_loss));
    EXPECT_TRUE(std::isfinite(r.log[0].val_mae));
    EXPECT_EQ(r.best.epoch, 1u);
    EXPECT_EQ(r.best.target_ids.size(), 3u);

    // Held-out node values do not influence training at all.
    StDataset poisoned = d;
    for (const std::string& id : r.best.target_ids) {
        const std::size_t n = d.node_index(id);
        for (std::size_t t = 0; t < d.steps(); ++t) {
            poisoned.y.at(n, t, 0) = 1e3 * std::sin(static_cast<double>(t));
        }
    }
    // Standardization uses every node, so hand both runs the same statistics.
    const StDataset sd = standardize(d);
    StDataset sp = standardize(poisoned);
    sp.y_stats = sd.y_stats;
    for (std::size_t n = 0; n < d.nodes(); ++n) {
        if (std::find(r.best.target_ids.begin(), r.best.target_ids.end(), d.node_ids[n]) != r.best.target_ids.end()) {
            continue;
        }
        for (std::size_t t = 0; t < d.steps(); ++t) {
            sp.y.at(n, t, 0) = sd.y.at(n, t, 0);
        }
    }
    const TrainResult a = train(sd, GraphConfig{}, small_model(), small_train(2));
    const TrainResult b = train(sp, GraphConfig{}, small_model(), small_train(2));
    EXPECT_TRUE(same_parameters(a.best.model, b.best.model));
}

TEST(Train, SameSeedIsBitIdenticalAcrossThreadCounts) {
    const StDataset d = generate_synthetic(8, 300, 3);
    TrainConfig one = small_train(9, 2);
    TrainConfig many = one;
    many.threads = 3;
    const TrainResult a = train(d, GraphConfig{}, small_model(), one);
    const TrainResult b = train(d, GraphConfig{}, small_model(), many);
    EXPECT_TRUE(same_parameters(a.best.model, b.best.model));
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
        EXPECT_EQ(a.log[i].val_mae, b.log[i].val_mae);
    }
    TrainConfig other = one;
    other.seed = 10;
    EXPECT_FALSE(same_parameters(a.best.model, train(d, GraphConfig{}, small_model(), other).best.model));
}

TEST(Train, WritesCheckpointAndLog) {
    const StDataset d = generate_synthetic(8, 300, 3);
    TrainConfig t = small_train(1, 2);
    t.checkpoint_dir = test_dir("train").string();
    const TrainResult r = train(d, GraphConfig{}, small_model(), t);
    const auto dir = test_dir("train");
    const std::string log = slurp(dir / "train_log.csv");
    EXPECT_EQ(log.rfind("epoch,train_loss,val_mae\n1,", 0), 0u);
    EXPECT_NE(log.find("\n2,"), std::string::npos);
    const Checkpoint back = load_checkpoint(dir / "checkpoint.json");
    EXPECT_TRUE(same_parameters(back.model, r.best.model));
    EXPECT_EQ(back.target_ids, r.best.target_ids);
}

TEST(Train, RejectsTooManyTargets) {
    const StDataset d = generate_synthetic(6, 300, 3);
    TrainConfig t = small_train(1);
    t.target_count = 4;  // 6 nodes, 2 held out, 4 left for training
    EXPECT_THROW(train(d, GraphConfig{}, small_model(), t), std::invalid_argument);
}

TEST(Evaluate, ScoresHeldOutTargetsInOriginalUnits) {
    const StDataset d = generate_synthetic(8, 300, 5);
    const TrainResult r = train(d, GraphConfig{}, small_model(), small_train(4));
    const MetricsReport rep = evaluate(r.best, d, Segment::test);
    EXPECT_EQ(rep.method, "stgnp");
    EXPECT_EQ(rep.segment, "test");
    // 30 test steps at T = 8: three full windows, the tail is dropped.
    EXPECT_EQ(rep.count, r.best.target_ids.size() * 24);
    EXPECT_TRUE(std::isfinite(rep.mae));
    EXPECT_LE(rep.mae, rep.rmse);
    ASSERT_TRUE(rep.coverage_1s.has_value());
    EXPECT_LE(*rep.coverage_1s, *rep.coverage_3s);

    // Shifting the data in original units leaves the error unchanged.
    StDataset shifted = d;
    for (double& v : shifted.y.values()) {
        v += 100.0;
    }
    EXPECT_NEAR(evaluate(r.best, shifted, Segment::test).mae, rep.mae, 1e-9);
}

TEST(Evaluate, ExtrapolateCoversTheRange) {
    const StDataset d = generate_synthetic(8, 300, 5);
    const TrainResult r = train(d, GraphConfig{}, small_model(), small_train(4));
    const std::vector<std::string> ids{r.best.target_ids[0]};
    const auto rows = extrapolate(r.best, d, ids, 280, 300);
    ASSERT_EQ(rows.size(), 20u);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i].node_id, ids[0]);
        EXPECT_EQ(rows[i].timestamp, d.timestamps[280 + i]);
        EXPECT_GT(rows[i].std, 0.0);
    }
    EXPECT_THROW(extrapolate(r.best, d, ids, 295, 300), std::invalid_argument);
    const auto p = test_dir("evaluate") / "pred.csv";
    write_predictions(rows, p);
    const std::string text = slurp(p);
    EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), 21u);
}
