#include "stgnp/evaluate.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace stgnp {

namespace {

struct Roles {
    std::vector<std::size_t> targets;
    std::vector<std::size_t> contexts;
};

Roles resolve_roles(const StDataset& data, std::span<const std::string> target_ids) {
    if (target_ids.empty()) {
        throw std::invalid_argument("no target nodes given");
    }
    Roles r;
    std::vector<bool> is_target(data.nodes(), false);
    for (const std::string& id : target_ids) {
        const std::size_t i = data.node_index(id);
        if (is_target[i]) {
            throw std::invalid_argument("target '" + id + "' listed twice");
        }
        is_target[i] = true;
        r.targets.push_back(i);
    }
    for (std::size_t i = 0; i < data.nodes(); ++i) {
        if (!is_target[i]) {
            r.contexts.push_back(i);
        }
    }
    if (r.contexts.empty()) {
        throw std::invalid_argument("every node is a target; no context left");
    }
    return r;
}

StDataset prepare(const Checkpoint& ckpt, const StDataset& raw) {
    if (raw.node_ids != ckpt.node_ids) {
        throw std::invalid_argument("dataset nodes do not match the checkpoint's graph (" +
                                    std::to_string(raw.nodes()) + " vs " + std::to_string(ckpt.node_ids.size()) +
                                    " nodes)");
    }
    const StgnpConfig& c = ckpt.model.config();
    if (raw.d_x() != c.d_x || raw.d_y() != c.d_y) {
        throw std::invalid_argument("dataset feature widths do not match the checkpoint (d_y=" +
                                    std::to_string(c.d_y) + ", d_x=" + std::to_string(c.d_x) + ")");
    }
    return raw.standardized ? raw : standardize(raw);
}

// Observed value in original units.
double original_y(const StDataset& raw, std::size_t node, std::size_t t, std::size_t f) {
    const double v = raw.y.at(node, t, f);
    return raw.standardized ? raw.y_stats.inverse(f, v) : v;
}

std::string fmt(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

MetricsReport evaluate(const Checkpoint& ckpt, const StDataset& raw, Segment segment) {
    const auto t0 = std::chrono::steady_clock::now();
    const StDataset data = prepare(ckpt, raw);
    const Roles roles = resolve_roles(data, ckpt.target_ids);
    const std::size_t T = ckpt.model.config().window;
    const Tensor adjacency = build_adjacency(data.coords, ckpt.graph);
    const std::vector<Tensor> khop = khop_cross_adjacency(adjacency, ckpt.graph.K, roles.contexts, roles.targets);

    MetricsAccumulator acc(ckpt.target_ids, true);
    const std::size_t dy = data.d_y();
    for (std::size_t start : iter_windows(data, segment, T, T)) {
        const WindowBatch batch = slice_window(data, start, T, roles.contexts, roles.targets, khop);
        const DiagGaussian pred = predict(ckpt.model, batch.inputs, SampleMode::mean);
        const Tensor mean = destandardize_y(data, pred.mean);
        const Tensor std = destandardize_y_std(data, pred.std);
        for (std::size_t m = 0; m < roles.targets.size(); ++m) {
            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t f = 0; f < dy; ++f) {
                    if (batch.target.mask.at(m, t, f) == 0.0) {
                        continue;
                    }
                    acc.add(m, original_y(raw, roles.targets[m], start + t, f), mean.at(m, t, f), std.at(m, t, f));
                }
            }
        }
    }
    MetricsReport r = acc.report("stgnp", to_string(segment));
    r.runtime_seconds = seconds_since(t0);
    return r;
}

std::vector<PredictionRow> extrapolate(const Checkpoint& ckpt, const StDataset& raw,
                                       std::span<const std::string> target_ids, std::size_t begin, std::size_t end) {
    const StDataset data = prepare(ckpt, raw);
    const Roles roles = resolve_roles(data, target_ids);
    const std::size_t T = ckpt.model.config().window;
    if (end > data.steps() || begin >= end || end - begin < T) {
        throw std::invalid_argument("extrapolate: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                    ") must lie within the data and span at least T=" + std::to_string(T) +
                                    " steps");
    }
    const Tensor adjacency = build_adjacency(data.coords, ckpt.graph);
    const std::vector<Tensor> khop = khop_cross_adjacency(adjacency, ckpt.graph.K, roles.contexts, roles.targets);

    std::vector<std::size_t> starts;
    for (std::size_t s = begin; s + T <= end; s += T) {
        starts.push_back(s);
    }
    if ((end - begin) % T != 0) {
        starts.push_back(end - T);
    }

    const std::size_t dy = data.d_y();
    std::vector<PredictionRow> rows;
    std::size_t covered = begin;
    for (std::size_t start : starts) {
        const WindowBatch batch = slice_window(data, start, T, roles.contexts, roles.targets, khop);
        const DiagGaussian pred = predict(ckpt.model, batch.inputs, SampleMode::mean);
        const Tensor mean = destandardize_y(data, pred.mean);
        const Tensor std = destandardize_y_std(data, pred.std);
        for (std::size_t m = 0; m < roles.targets.size(); ++m) {
            for (std::size_t t = covered - start; t < T; ++t) {
                for (std::size_t f = 0; f < dy; ++f) {
                    rows.push_back({data.node_ids[roles.targets[m]], data.timestamps[start + t], f, mean.at(m, t, f),
                                    std.at(m, t, f)});
                }
            }
        }
        covered = start + T;
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const PredictionRow& a, const PredictionRow& b) { return a.node_id < b.node_id; });
    return rows;
}

void write_predictions(std::span<const PredictionRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "node_id,timestamp,feature,mean,std\n";
    for (const PredictionRow& r : rows) {
        out << r.node_id << ',' << r.timestamp << ',' << r.feature << ',' << fmt(r.mean) << ',' << fmt(r.std) << '\n';
    }
}

// ---- baselines ---------------------------------------------------------------------

std::string to_string(BaselineMethod m) {
    return m == BaselineMethod::idw ? "idw" : "knn";
}

BaselineMethod parse_baseline_method(const std::string& name) {
    if (name == "idw") {
        return BaselineMethod::idw;
    }
    if (name == "knn") {
        return BaselineMethod::knn;
    }
    throw std::invalid_argument("unknown baseline '" + name + "' (expected idw or knn)");
}

namespace {

void check_baseline_inputs(const Tensor& y, const Tensor& mask, const Tensor& distances) {
    if (y.rank() != 3 || mask.shape() != y.shape() || distances.rank() != 2 || distances.dim(1) != y.dim(0)) {
        throw std::invalid_argument("baseline: expected (N, T, d) contexts, matching mask and (M, N) distances");
    }
}

}  // namespace

PointPrediction baseline_idw(const Tensor& y_context, const Tensor& context_mask, const Tensor& distances,
                             double power) {
    check_baseline_inputs(y_context, context_mask, distances);
    const std::size_t m_count = distances.dim(0), n_count = distances.dim(1);
    const std::size_t steps = y_context.dim(1), dy = y_context.dim(2);
    PointPrediction out{Tensor(Shape{m_count, steps, dy}), Tensor(Shape{m_count, steps, dy})};
    for (std::size_t m = 0; m < m_count; ++m) {
        for (std::size_t t = 0; t < steps; ++t) {
            for (std::size_t f = 0; f < dy; ++f) {
                double num = 0.0, den = 0.0;
                bool colocated = false, any = false;
                for (std::size_t n = 0; n < n_count; ++n) {
                    if (context_mask.at(n, t, f) == 0.0) {
                        continue;
                    }
                    const double d = distances.at(m, n);
                    const double v = y_context.at(n, t, f);
                    if (d == 0.0) {
                        out.mean.at(m, t, f) = v;
                        colocated = true;
                        break;
                    }
                    const double w = std::pow(d, -power);
                    num += w * v;
                    den += w;
                    any = true;
                }
                if (colocated) {
                    out.mask.at(m, t, f) = 1.0;
                } else if (any) {
                    out.mean.at(m, t, f) = num / den;
                    out.mask.at(m, t, f) = 1.0;
                }
            }
        }
    }
    return out;
}

PointPrediction baseline_knn(const Tensor& y_context, const Tensor& context_mask, const Tensor& distances,
                             std::size_t k) {
    check_baseline_inputs(y_context, context_mask, distances);
    const std::size_t m_count = distances.dim(0), n_count = distances.dim(1);
    if (k < 1 || k > n_count) {
        throw std::invalid_argument("baseline_knn: k=" + std::to_string(k) + " must lie in [1, " +
                                    std::to_string(n_count) + "]");
    }
    const std::size_t steps = y_context.dim(1), dy = y_context.dim(2);
    PointPrediction out{Tensor(Shape{m_count, steps, dy}), Tensor(Shape{m_count, steps, dy})};
    std::vector<std::size_t> order(n_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return distances.at(m, a) < distances.at(m, b); });
        for (std::size_t t = 0; t < steps; ++t) {
            for (std::size_t f = 0; f < dy; ++f) {
                double sum = 0.0;
                std::size_t used = 0;
                for (std::size_t idx = 0; idx < n_count && used < k; ++idx) {
                    const std::size_t n = order[idx];
                    if (context_mask.at(n, t, f) != 0.0) {
                        sum += y_context.at(n, t, f);
                        ++used;
                    }
                }
                if (used > 0) {
                    out.mean.at(m, t, f) = sum / static_cast<double>(used);
                    out.mask.at(m, t, f) = 1.0;
                }
            }
        }
    }
    return out;
}

MetricsReport evaluate_baseline(const StDataset& raw, std::span<const std::string> target_ids, Segment segment,
                                const BaselineOptions& options) {
    const auto t0 = std::chrono::steady_clock::now();
    const Roles roles = resolve_roles(raw, target_ids);
    Tensor distances(Shape{roles.targets.size(), roles.contexts.size()});
    for (std::size_t m = 0; m < roles.targets.size(); ++m) {
        for (std::size_t n = 0; n < roles.contexts.size(); ++n) {
            distances.at(m, n) =
                node_distance(raw.coords[roles.targets[m]], raw.coords[roles.contexts[n]], options.distance);
        }
    }
    MetricsAccumulator acc(std::vector<std::string>(target_ids.begin(), target_ids.end()), false);
    const std::size_t T = options.window;
    const std::size_t dy = raw.d_y();
    for (std::size_t start : iter_windows(raw, segment, T, T)) {
        const WindowBatch batch = slice_window(raw, start, T, roles.contexts, roles.targets, {});
        Tensor y_ctx = batch.inputs.y_context;
        if (raw.standardized) {
            y_ctx = destandardize_y(raw, y_ctx);
        }
        const PointPrediction pred = options.method == BaselineMethod::idw
                                         ? baseline_idw(y_ctx, batch.context_mask, distances, options.power)
                                         : baseline_knn(y_ctx, batch.context_mask, distances, options.k);
        for (std::size_t m = 0; m < roles.targets.size(); ++m) {
            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t f = 0; f < dy; ++f) {
                    if (batch.target.mask.at(m, t, f) == 0.0 || pred.mask.at(m, t, f) == 0.0) {
                        continue;
                    }
                    acc.add(m, original_y(raw, roles.targets[m], start + t, f), pred.mean.at(m, t, f));
                }
            }
        }
    }
    MetricsReport r = acc.report(to_string(options.method), to_string(segment));
    r.runtime_seconds = seconds_since(t0);
    return r;
}

}  // namespace stgnp
