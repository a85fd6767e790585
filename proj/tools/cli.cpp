#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "stgnp/checkpoint.hpp"
#include "stgnp/checks.hpp"
#include "stgnp/config.hpp"
#include "stgnp/dataio.hpp"
#include "stgnp/evaluate.hpp"
#include "stgnp/gba_oracle.hpp"
#include "stgnp/train.hpp"

namespace stgnp::cli {

namespace {

constexpr double kGbaTolerance = 1e-8;

// Signals a failed check (exit 1) after its result was printed.
struct CheckFailed {};

void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot write " + path);
    }
    f << j.dump(2) << '\n';
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string summary(const MetricsReport& r) {
    std::string s = r.method + " on " + r.segment + ": MAE " + num(r.mae) + ", RMSE " + num(r.rmse);
    if (r.mape) {
        s += ", MAPE " + num(*r.mape);
    }
    if (r.coverage_1s) {
        s += ", coverage " + num(*r.coverage_1s) + "/" + num(*r.coverage_2s) + "/" + num(*r.coverage_3s);
    }
    return s + " over " + std::to_string(r.count) + " entries";
}

StDataset load_data(const std::string& path, double missing_ratio, std::uint64_t missing_seed) {
    StDataset d = load_csv(path);
    return missing_ratio > 0.0 ? corrupt_missing(d, missing_ratio, missing_seed) : d;
}

std::vector<std::string> split_ids(const std::string& list) {
    std::vector<std::string> ids;
    std::stringstream ss(list);
    std::string id;
    while (std::getline(ss, id, ',')) {
        if (!id.empty()) {
            ids.push_back(id);
        }
    }
    return ids;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Spatio-temporal graph neural process: extrapolation on sensor graphs"};
    app.name("stgnp");
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic sensor dataset as CSV");
    std::string synth_out;
    std::size_t nodes = 20, steps = 2400;
    std::uint64_t synth_seed = 0;
    SyntheticParams sp;
    synth->add_option("--out", synth_out, "Output CSV")->required();
    synth->add_option("--nodes", nodes, "Number of sensors")->capture_default_str();
    synth->add_option("--steps", steps, "Number of time steps")->capture_default_str();
    synth->add_option("--seed", synth_seed, "Random seed")->capture_default_str();
    synth->add_option("--alpha", sp.alpha, "Spatial diffusion weight")->capture_default_str();
    synth->add_option("--beta", sp.beta, "Periodic signal amplitude")->capture_default_str();
    synth->add_option("--gamma", sp.gamma, "Noise scale")->capture_default_str();
    synth->add_option("--burn-in", sp.burn_in, "Discarded warm-up steps")->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint + log");
    std::string train_data, train_config, train_out;
    std::optional<std::uint64_t> train_seed;
    std::optional<std::size_t> train_epochs, train_threads;
    train_cmd->add_option("--data", train_data, "Dataset CSV (overrides data.path)");
    train_cmd->add_option("--config", train_config, "Run config JSON");
    train_cmd->add_option("--out", train_out, "Output directory")->required();
    train_cmd->add_option("--seed", train_seed, "Seed (overrides train.seed)");
    train_cmd->add_option("--epochs", train_epochs, "Epochs (overrides train.epochs)");
    train_cmd->add_option("--threads", train_threads, "Worker threads (overrides train.threads)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on its held-out targets");
    std::string eval_ckpt, eval_data, eval_segment = "test", eval_report;
    double eval_missing = 0.0;
    std::uint64_t eval_missing_seed = 0;
    eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint manifest")->required();
    eval_cmd->add_option("--data", eval_data, "Dataset CSV")->required();
    eval_cmd->add_option("--segment", eval_segment, "train, val or test")->capture_default_str();
    eval_cmd->add_option("--report", eval_report, "Metrics JSON output")->required();
    eval_cmd->add_option("--missing-ratio", eval_missing, "Hide this fraction of observations first");
    eval_cmd->add_option("--missing-seed", eval_missing_seed, "Seed for --missing-ratio");

    // extrapolate
    auto* extra_cmd = app.add_subcommand("extrapolate", "Write predictions for chosen target nodes");
    std::string ex_ckpt, ex_data, ex_targets, ex_out, ex_segment = "all";
    extra_cmd->add_option("--ckpt", ex_ckpt, "Checkpoint manifest")->required();
    extra_cmd->add_option("--data", ex_data, "Dataset CSV")->required();
    extra_cmd->add_option("--targets", ex_targets, "Comma-separated node ids")->required();
    extra_cmd->add_option("--out", ex_out, "Prediction CSV")->required();
    extra_cmd->add_option("--segment", ex_segment, "all, train, val or test")->capture_default_str();

    // check
    auto* check_cmd = app.add_subcommand("check", "Numerical self-checks");
    check_cmd->require_subcommand(1);
    auto* check_gba = check_cmd->add_subcommand("gba", "Factorized vs full-covariance aggregation");
    std::size_t gba_trials = 1000, gba_dim = 4, gba_neighbors = 5;
    std::uint64_t gba_seed = 0;
    check_gba->add_option("--trials", gba_trials, "Random instances")->capture_default_str();
    check_gba->add_option("--seed", gba_seed, "Random seed")->capture_default_str();
    check_gba->add_option("--max-dim", gba_dim, "Largest latent dimension")->capture_default_str();
    check_gba->add_option("--max-neighbors", gba_neighbors, "Largest context count")->capture_default_str();
    auto* check_grad = check_cmd->add_subcommand("grad", "Finite-difference check of the ELBO gradient");
    double grad_tol = 1e-5, grad_step = 1e-5;
    std::uint64_t grad_seed = 0;
    check_grad->add_option("--tol", grad_tol, "Relative error tolerance")->capture_default_str();
    check_grad->add_option("--step", grad_step, "Central-difference step")->capture_default_str();
    check_grad->add_option("--seed", grad_seed, "Toy problem seed")->capture_default_str();

    // baseline
    auto* base_cmd = app.add_subcommand("baseline", "Score IDW or KNN on held-out targets");
    std::string base_method, base_data, base_report, base_ckpt, base_segment = "test", base_distance;
    double base_holdout = 0.3, base_power = 2.0, base_missing = 0.0;
    std::uint64_t base_holdout_seed = 0, base_missing_seed = 0;
    std::size_t base_k = 5, base_window = 24;
    base_cmd->add_option("--method", base_method, "idw or knn")->required();
    base_cmd->add_option("--data", base_data, "Dataset CSV")->required();
    base_cmd->add_option("--report", base_report, "Metrics JSON output")->required();
    base_cmd->add_option("--ckpt", base_ckpt, "Take targets, window and distance from this checkpoint");
    base_cmd->add_option("--segment", base_segment, "train, val or test")->capture_default_str();
    base_cmd->add_option("--holdout", base_holdout, "Held-out fraction without --ckpt")->capture_default_str();
    base_cmd->add_option("--holdout-seed", base_holdout_seed, "Held-out split seed without --ckpt")
        ->capture_default_str();
    base_cmd->add_option("--k", base_k, "Neighbours for knn")->capture_default_str();
    base_cmd->add_option("--power", base_power, "Distance power for idw")->capture_default_str();
    base_cmd->add_option("--window", base_window, "Window length without --ckpt")->capture_default_str();
    base_cmd->add_option("--distance", base_distance, "haversine_km or euclidean");
    base_cmd->add_option("--missing-ratio", base_missing, "Hide this fraction of observations first");
    base_cmd->add_option("--missing-seed", base_missing_seed, "Seed for --missing-ratio");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (synth->parsed()) {
            const StDataset d = generate_synthetic(nodes, steps, synth_seed, sp);
            write_csv(d, synth_out);
            out << "wrote " << d.nodes() << " nodes x " << d.steps() << " steps to " << synth_out << '\n';
        } else if (train_cmd->parsed()) {
            RunConfig rc = train_config.empty() ? RunConfig{} : load_run_config(train_config);
            if (!train_data.empty()) {
                rc.data.path = train_data;
            }
            if (rc.data.path.empty()) {
                err << "usage error: --data is required when the config names no data.path\n";
                return 2;
            }
            if (train_seed) {
                rc.train.seed = *train_seed;
            }
            if (train_epochs) {
                rc.train.epochs = *train_epochs;
            }
            if (train_threads) {
                rc.train.threads = *train_threads;
            }
            rc.train.checkpoint_dir = train_out;
            rc.train.validate();
            const StDataset raw = load_data(rc.data.path, rc.data.missing_ratio, rc.data.missing_seed);
            rc.model.d_x = raw.d_x();
            rc.model.d_y = raw.d_y();
            rc.model.K = rc.graph.K;
            std::filesystem::create_directories(train_out);
            write_json(to_json(rc), (std::filesystem::path(train_out) / "config.json").string());
            const TrainResult r = train(raw, rc.graph, rc.model, rc.train, [&](const EpochLog& e) {
                out << "epoch " << e.epoch << '/' << rc.train.epochs << "  loss " << num(e.train_loss) << "  val_mae "
                    << num(e.val_mae) << std::endl;
            });
            out << "best epoch " << r.best.epoch << " (val_mae " << num(r.best.val_mae) << "), " << num(r.seconds)
                << " s; checkpoint in " << train_out << '\n';
        } else if (eval_cmd->parsed()) {
            const Checkpoint ckpt = load_checkpoint(eval_ckpt);
            const StDataset raw = load_data(eval_data, eval_missing, eval_missing_seed);
            const MetricsReport r = evaluate(ckpt, raw, parse_segment(eval_segment));
            write_json(to_json(r), eval_report);
            out << summary(r) << '\n';
        } else if (extra_cmd->parsed()) {
            const Checkpoint ckpt = load_checkpoint(ex_ckpt);
            const StDataset raw = load_csv(ex_data);
            std::size_t begin = 0, end = raw.steps();
            if (ex_segment != "all") {
                const Segment s = parse_segment(ex_segment);
                begin = raw.split.begin(s);
                end = raw.split.end(s);
            }
            const std::vector<std::string> ids = split_ids(ex_targets);
            const auto rows = extrapolate(ckpt, raw, ids, begin, end);
            write_predictions(rows, ex_out);
            out << "wrote " << rows.size() << " predictions to " << ex_out << '\n';
        } else if (check_gba->parsed()) {
            const oracle::OracleDeviation dev =
                oracle::check_factorized_vs_full(gba_trials, gba_dim, gba_neighbors, gba_seed);
            char line[160];
            std::snprintf(line, sizeof line, "gba max deviation %.3e (mean %.3e, variance %.3e) over %zu trials",
                          dev.max(), dev.mean, dev.variance, dev.trials);
            out << line << '\n';
            if (!(dev.max() < kGbaTolerance)) {
                throw CheckFailed{};
            }
        } else if (check_grad->parsed()) {
            const GradCheckResult r = check_elbo_gradient(grad_seed, grad_step, grad_tol);
            char line[200];
            std::snprintf(line, sizeof line,
                          "elbo gradient max relative error %.3e over %zu entries (worst: param %zu[%zu], ad %.6g, "
                          "fd %.6g)",
                          r.max_rel_error, r.entries, r.worst_param, r.worst_index, r.worst_ad, r.worst_fd);
            out << line << '\n';
            if (!r.passed) {
                throw CheckFailed{};
            }
        } else if (base_cmd->parsed()) {
            const StDataset raw = load_data(base_data, base_missing, base_missing_seed);
            BaselineOptions opt;
            opt.method = parse_baseline_method(base_method);
            opt.power = base_power;
            opt.k = base_k;
            opt.window = base_window;
            std::vector<std::string> targets;
            if (!base_ckpt.empty()) {
                const Checkpoint ckpt = load_checkpoint(base_ckpt);
                targets = ckpt.target_ids;
                opt.window = ckpt.model.config().window;
                opt.distance = ckpt.graph.distance;
            } else {
                for (std::size_t i : holdout_split(raw.nodes(), base_holdout, base_holdout_seed).heldout) {
                    targets.push_back(raw.node_ids[i]);
                }
            }
            if (!base_distance.empty()) {
                opt.distance = parse_distance_kind(base_distance);
            }
            const MetricsReport r = evaluate_baseline(raw, targets, parse_segment(base_segment), opt);
            write_json(to_json(r), base_report);
            out << summary(r) << '\n';
        }
    } catch (const CheckFailed&) {
        err << "check failed\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace stgnp::cli
