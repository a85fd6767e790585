#include "stgnp/config.hpp"

#include <fstream>
#include <set>
#include <type_traits>
#include <stdexcept>

namespace stgnp {

using nlohmann::json;

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seeds are read as size_t");

void TrainConfig::validate() const {
    if (!(lr > 0.0)) {
        throw std::invalid_argument("train: lr must be positive");
    }
    if (epochs < 1) {
        throw std::invalid_argument("train: epochs must be >= 1");
    }
    if (batch_windows < 1) {
        throw std::invalid_argument("train: batch_windows must be >= 1");
    }
    if (target_count < 1) {
        throw std::invalid_argument("train: target_count must be >= 1");
    }
    if (!(grad_clip > 0.0)) {
        throw std::invalid_argument("train: grad_clip must be positive");
    }
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
        throw std::invalid_argument("train: holdout_fraction must lie in (0, 1)");
    }
    if (val_partitions < 1) {
        throw std::invalid_argument("train: val_partitions must be >= 1");
    }
    if (threads < 1) {
        throw std::invalid_argument("train: threads must be >= 1");
    }
}

namespace {

// Reads the keys of one JSON object, then rejects whatever was not consumed.
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) {
            throw std::invalid_argument("config: '" + name_ + "' must be an object");
        }
    }

    void read(const char* key, double& out) {
        if (const json* v = take(key)) {
            if (!v->is_number()) {
                fail(key, "a number");
            }
            out = v->get<double>();
        }
    }

    void read(const char* key, std::size_t& out) {
        if (const json* v = take(key)) {
            if (!v->is_number_unsigned()) {
                fail(key, "a non-negative integer");
            }
            out = v->get<std::size_t>();
        }
    }

    void read(const char* key, std::string& out) {
        if (const json* v = take(key)) {
            if (!v->is_string()) {
                fail(key, "a string");
            }
            out = v->get<std::string>();
        }
    }

    void read(const char* key, std::vector<std::size_t>& out) {
        if (const json* v = take(key)) {
            if (!v->is_array()) {
                fail(key, "an array of non-negative integers");
            }
            out.clear();
            for (const json& e : *v) {
                if (!e.is_number_unsigned()) {
                    fail(key, "an array of non-negative integers");
                }
                out.push_back(e.get<std::size_t>());
            }
        }
    }

    void read(const char* key, std::optional<double>& out) {
        if (const json* v = take(key)) {
            if (v->is_null()) {
                out.reset();
            } else if (v->is_number()) {
                out = v->get<double>();
            } else {
                fail(key, "a number or null");
            }
        }
    }

    const json* sub(const char* key) { return take(key); }

    void finish() const {
        for (const auto& [k, _] : j_.items()) {
            if (!seen_.count(k)) {
                throw std::invalid_argument("config: unknown key '" + name_ + "." + k + "'");
            }
        }
    }

private:
    const json* take(const char* key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    [[noreturn]] void fail(const char* key, const char* what) const {
        throw std::invalid_argument("config: '" + name_ + "." + key + "' must be " + what);
    }

    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

}  // namespace

json to_json(const GraphConfig& c) {
    return {{"kernel_sigma", c.kernel_sigma ? json(*c.kernel_sigma) : json(nullptr)},
            {"threshold", c.threshold},
            {"K", c.K},
            {"distance", to_string(c.distance)}};
}

json to_json(const StgnpConfig& c) {
    return {{"layers", c.layers},
            {"kernel_size", c.kernel_size},
            {"det_channels", c.det_channels},
            {"latent_channels", c.latent_channels},
            {"d0", c.d0},
            {"likelihood_hidden", c.likelihood_hidden},
            {"likelihood_layers", c.likelihood_layers},
            {"K", c.K},
            {"window", c.window},
            {"d_x", c.d_x},
            {"d_y", c.d_y},
            {"sigma_min_latent", c.sigma_min_latent},
            {"sigma_min_likelihood", c.sigma_min_likelihood}};
}

json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"epochs", c.epochs},
            {"batch_windows", c.batch_windows},
            {"target_count", c.target_count},
            {"grad_clip", c.grad_clip},
            {"seed", c.seed},
            {"holdout_fraction", c.holdout_fraction},
            {"val_partitions", c.val_partitions},
            {"threads", c.threads},
            {"checkpoint_dir", c.checkpoint_dir}};
}

json to_json(const RunConfig& c) {
    return {{"data", {{"path", c.data.path}, {"missing_ratio", c.data.missing_ratio}, {"missing_seed", c.data.missing_seed}}},
            {"graph", to_json(c.graph)},
            {"model", to_json(c.model)},
            {"train", to_json(c.train)}};
}

GraphConfig graph_config_from_json(const json& j) {
    GraphConfig c;
    Section s(j, "graph");
    s.read("kernel_sigma", c.kernel_sigma);
    s.read("threshold", c.threshold);
    s.read("K", c.K);
    std::string distance = to_string(c.distance);
    s.read("distance", distance);
    c.distance = parse_distance_kind(distance);
    s.finish();
    c.validate();
    return c;
}

StgnpConfig model_config_from_json(const json& j, StgnpConfig base) {
    StgnpConfig& c = base;
    Section s(j, "model");
    s.read("layers", c.layers);
    s.read("kernel_size", c.kernel_size);
    s.read("det_channels", c.det_channels);
    s.read("latent_channels", c.latent_channels);
    s.read("d0", c.d0);
    s.read("likelihood_hidden", c.likelihood_hidden);
    s.read("likelihood_layers", c.likelihood_layers);
    s.read("K", c.K);
    s.read("window", c.window);
    s.read("d_x", c.d_x);
    s.read("d_y", c.d_y);
    s.read("sigma_min_latent", c.sigma_min_latent);
    s.read("sigma_min_likelihood", c.sigma_min_likelihood);
    s.finish();
    return c;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    Section s(j, "train");
    s.read("lr", c.lr);
    s.read("epochs", c.epochs);
    s.read("batch_windows", c.batch_windows);
    s.read("target_count", c.target_count);
    s.read("grad_clip", c.grad_clip);
    s.read("seed", c.seed);
    s.read("holdout_fraction", c.holdout_fraction);
    s.read("val_partitions", c.val_partitions);
    s.read("threads", c.threads);
    s.read("checkpoint_dir", c.checkpoint_dir);
    s.finish();
    c.validate();
    return c;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    Section s(j, "config");
    if (const json* d = s.sub("data")) {
        Section ds(*d, "data");
        ds.read("path", c.data.path);
        ds.read("missing_ratio", c.data.missing_ratio);
        ds.read("missing_seed", c.data.missing_seed);
        ds.finish();
        if (!(c.data.missing_ratio >= 0.0 && c.data.missing_ratio < 1.0)) {
            throw std::invalid_argument("config: data.missing_ratio must lie in [0, 1)");
        }
    }
    if (const json* g = s.sub("graph")) {
        c.graph = graph_config_from_json(*g);
    }
    if (const json* m = s.sub("model")) {
        c.model = model_config_from_json(*m);
        if (m->contains("K") && c.model.K != c.graph.K) {
            throw std::invalid_argument("config: model.K disagrees with graph.K");
        }
    }
    if (const json* t = s.sub("train")) {
        c.train = train_config_from_json(*t);
    }
    s.finish();
    c.model.K = c.graph.K;
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace stgnp
