#include "stgnp/train.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

namespace stgnp {

void xavier_init(StgnpModel& model, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double bias_std = 1.0 / std::sqrt(static_cast<double>(model.config().d0));
    auto& params = model.parameters();
    const auto& info = model.param_info();
    for (std::size_t i = 0; i < params.size(); ++i) {
        double sd = bias_std;
        if (info[i].kind == ParamKind::weight) {
            const auto fans = static_cast<double>(info[i].fan_in + info[i].fan_out);
            sd = fans > 0.0 ? std::sqrt(2.0 / fans) : 0.0;
        }
        std::normal_distribution<double> normal(0.0, sd);
        for (double& v : params[i].value.values()) {
            v = sd > 0.0 ? normal(rng) : 0.0;
        }
        params[i].zero_grad();
    }
}

void adam_step(std::span<Parameter> params, AdamState& state, const AdamConfig& config) {
    if (state.m.size() != params.size()) {
        state.m.clear();
        state.v.clear();
        for (const Parameter& p : params) {
            state.m.emplace_back(p.value.shape());
            state.v.emplace_back(p.value.shape());
        }
        state.t = 0;
    }
    ++state.t;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& value = params[i].value;
        const Tensor& grad = params[i].grad;
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t k = 0; k < value.size(); ++k) {
            const double g = grad[k];
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g;
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g * g;
            const double m_hat = m[k] / c1;
            const double v_hat = v[k] / c2;
            value[k] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
        }
    }
}

double global_grad_norm(std::span<const Parameter> params) {
    double ss = 0.0;
    for (const Parameter& p : params) {
        for (double g : p.grad.values()) {
            ss += g * g;
        }
    }
    return std::sqrt(ss);
}

double clip_grad_norm(std::span<Parameter> params, double max_norm) {
    const double norm = global_grad_norm(params);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (Parameter& p : params) {
            for (double& g : p.grad.values()) {
                g *= s;
            }
        }
    }
    return norm;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over a running combination
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    std::uint64_t h = mix(seed);
    h = mix(h ^ stream);
    h = mix(h ^ a);
    return mix(h ^ b);
}

HoldoutSplit holdout_split(std::size_t node_count, double fraction, std::uint64_t seed) {
    const Partition p = split_context_target(node_count, fraction, seed);
    return {p.context_ids, p.target_ids};
}

Tensor sub_adjacency(const Tensor& adjacency, std::span<const std::size_t> nodes) {
    Tensor out(Shape{nodes.size(), nodes.size()});
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        for (std::size_t j = 0; j < nodes.size(); ++j) {
            out.at(i, j) = adjacency.at(nodes[i], nodes[j]);
        }
    }
    return out;
}

namespace {

enum Stream : std::uint64_t { kInit = 1, kShuffle, kPartition, kNoise, kValidation };

std::string fmt(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

struct WindowGrad {
    double loss = 0.0;
    std::vector<Tensor> grads;
    std::string error;
};

WindowGrad window_gradient(const StgnpModel& model, const WindowBatch& batch, std::uint64_t noise_seed) {
    WindowGrad out;
    Tape tape;
    const ModelVars mv = bind(tape, model);
    const ElboResult res = elbo(tape, mv, batch.inputs, batch.target, noise_seed);
    tape.backward(res.loss);
    out.loss = res.loss.value().item();
    out.grads.reserve(mv.leaves.size());
    for (const Var& leaf : mv.leaves) {
        const Tensor* g = tape.grad_if(leaf.id());
        out.grads.push_back(g ? *g : Tensor(leaf.shape()));
    }
    return out;
}

// Local partition ids -> dataset node ids.
std::vector<std::size_t> to_global(std::span<const std::size_t> local, std::span<const std::size_t> nodes) {
    std::vector<std::size_t> out;
    out.reserve(local.size());
    for (std::size_t i : local) {
        out.push_back(nodes[i]);
    }
    return out;
}

}  // namespace

TrainResult train(const StDataset& raw, const GraphConfig& graph, StgnpConfig model_config, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    config.validate();
    graph.validate();
    const StDataset data = raw.standardized ? raw : standardize(raw);
    model_config.d_x = data.d_x();
    model_config.d_y = data.d_y();
    model_config.K = graph.K;
    model_config.validate();
    const std::size_t T = model_config.window;

    const HoldoutSplit split = holdout_split(data.nodes(), config.holdout_fraction, config.seed);
    if (config.target_count >= split.train_nodes.size()) {
        throw std::invalid_argument("train: target_count " + std::to_string(config.target_count) +
                                    " leaves no context among " + std::to_string(split.train_nodes.size()) +
                                    " training nodes");
    }
    const Tensor adjacency = build_adjacency(data.coords, graph);
    const std::vector<Tensor> powers = adjacency_powers(sub_adjacency(adjacency, split.train_nodes), graph.K);
    std::vector<std::size_t> local(split.train_nodes.size());
    std::iota(local.begin(), local.end(), 0);

    auto make_batch = [&](std::size_t start, std::uint64_t partition_seed) {
        const Partition p = sample_partition(local, config.target_count, partition_seed);
        return slice_window(data, start, T, to_global(p.context_ids, split.train_nodes),
                            to_global(p.target_ids, split.train_nodes), slice_cross(powers, p.context_ids, p.target_ids));
    };

    const std::vector<std::size_t> train_starts = iter_windows(data, Segment::train, T, 1);
    const std::vector<std::size_t> val_starts = iter_windows(data, Segment::val, T, T);
    std::vector<WindowBatch> val_batches;
    for (std::size_t w = 0; w < val_starts.size(); ++w) {
        for (std::size_t p = 0; p < config.val_partitions; ++p) {
            val_batches.push_back(make_batch(val_starts[w], derive_seed(config.seed, kValidation, w, p)));
        }
    }

    std::vector<std::string> target_names;
    for (std::size_t i : split.heldout) {
        target_names.push_back(data.node_ids[i]);
    }
    TrainResult result{Checkpoint{StgnpModel(model_config), graph, config, data.node_ids, target_names, 0, 0.0}, {}, 0.0};
    StgnpModel model(model_config);
    xavier_init(model, derive_seed(config.seed, kInit));
    AdamState adam;
    const AdamConfig adam_config{config.lr};
    auto& params = model.parameters();
    double best_val = std::numeric_limits<double>::infinity();

    std::filesystem::path out_dir;
    if (!config.checkpoint_dir.empty()) {
        out_dir = config.checkpoint_dir;
        std::filesystem::create_directories(out_dir);
    }

    std::size_t iteration = 0;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<std::size_t> order = train_starts;
        std::mt19937_64 shuffle_rng(derive_seed(config.seed, kShuffle, epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0.0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_windows) {
            const std::size_t count = std::min(config.batch_windows, order.size() - b0);
            std::vector<WindowBatch> batches;
            std::vector<std::uint64_t> noise_seeds;
            for (std::size_t j = 0; j < count; ++j) {
                const std::size_t it = iteration + j;
                batches.push_back(make_batch(order[b0 + j], derive_seed(config.seed, kPartition, it)));
                noise_seeds.push_back(derive_seed(config.seed, kNoise, it));
            }

            std::vector<WindowGrad> results(count);
            auto work = [&](std::size_t first, std::size_t step) {
                for (std::size_t j = first; j < count; j += step) {
                    try {
                        results[j] = window_gradient(model, batches[j], noise_seeds[j]);
                    } catch (const std::exception& e) {
                        results[j].error = e.what();
                    }
                }
            };
            const std::size_t workers = std::min(config.threads, count);
            if (workers <= 1) {
                work(0, 1);
            } else {
                std::vector<std::jthread> pool;
                for (std::size_t w = 0; w < workers; ++w) {
                    pool.emplace_back(work, w, workers);
                }
            }

            // Reduce in window order so the result does not depend on scheduling.
            model.zero_grad();
            double batch_loss = 0.0;
            for (std::size_t j = 0; j < count; ++j) {
                if (!results[j].error.empty() || !std::isfinite(results[j].loss)) {
                    throw std::runtime_error("training diverged at iteration " + std::to_string(iteration + j) +
                                             " (epoch " + std::to_string(epoch) + "): " +
                                             (results[j].error.empty() ? "non-finite loss" : results[j].error));
                }
                batch_loss += results[j].loss;
                for (std::size_t p = 0; p < params.size(); ++p) {
                    Tensor& g = params[p].grad;
                    const Tensor& gj = results[j].grads[p];
                    for (std::size_t k = 0; k < g.size(); ++k) {
                        g[k] += gj[k];
                    }
                }
            }
            const double inv = 1.0 / static_cast<double>(count);
            for (Parameter& p : params) {
                for (double& g : p.grad.values()) {
                    g *= inv;
                }
            }
            if (!std::isfinite(clip_grad_norm(params, config.grad_clip))) {
                throw std::runtime_error("training diverged at iteration " + std::to_string(iteration) +
                                         ": non-finite gradient");
            }
            adam_step(params, adam, adam_config);
            epoch_loss += batch_loss;
            iteration += count;
        }

        // Validation MAE in standardized units, predictive mean.
        double abs_err = 0.0;
        std::size_t observed = 0;
        for (const WindowBatch& vb : val_batches) {
            const DiagGaussian pred = predict(model, vb.inputs, SampleMode::mean);
            for (std::size_t k = 0; k < pred.mean.size(); ++k) {
                if (vb.target.mask[k] != 0.0) {
                    abs_err += std::abs(pred.mean[k] - vb.target.y[k]);
                    ++observed;
                }
            }
        }
        const double val_mae = observed > 0 ? abs_err / static_cast<double>(observed)
                                            : std::numeric_limits<double>::quiet_NaN();
        const EpochLog entry{epoch, epoch_loss / static_cast<double>(order.size()), val_mae};
        result.log.push_back(entry);
        // An all-missing validation segment keeps the latest epoch.
        if (val_mae < best_val || (observed == 0)) {
            best_val = observed > 0 ? val_mae : best_val;
            result.best.model = model;
            result.best.epoch = epoch;
            result.best.val_mae = observed > 0 ? val_mae : 0.0;
            if (!out_dir.empty()) {
                save_checkpoint(result.best, out_dir / "checkpoint.json");
            }
        }
        if (!out_dir.empty()) {
            write_train_log(result.log, out_dir / "train_log.csv");
        }
        if (on_epoch) {
            on_epoch(entry);
        }
    }
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

void write_train_log(std::span<const EpochLog> log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "epoch,train_loss,val_mae\n";
    for (const EpochLog& e : log) {
        out << e.epoch << ',' << fmt(e.train_loss) << ',' << (std::isfinite(e.val_mae) ? fmt(e.val_mae) : "") << '\n';
    }
}

}  // namespace stgnp
