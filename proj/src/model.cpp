#include "stgnp/model.hpp"

#include <random>
#include <stdexcept>

namespace stgnp {

void StgnpConfig::validate() const {
    if (layers < 1) {
        throw std::invalid_argument("model: layers must be >= 1");
    }
    if (det_channels.size() != layers || latent_channels.size() != layers) {
        throw std::invalid_argument("model: det_channels and latent_channels need one entry per layer");
    }
    for (std::size_t w : det_channels) {
        if (w < 1) {
            throw std::invalid_argument("model: det_channels entries must be >= 1");
        }
    }
    for (std::size_t w : latent_channels) {
        if (w < 1) {
            throw std::invalid_argument("model: latent_channels entries must be >= 1");
        }
    }
    if (kernel_size < 1 || d0 < 1 || likelihood_hidden < 1 || likelihood_layers < 1 || window < 1 || d_y < 1) {
        throw std::invalid_argument("model: kernel_size, d0, likelihood widths, window and d_y must be >= 1");
    }
    if (K < 1) {
        throw std::invalid_argument("model: K must be >= 1");
    }
    if (!(sigma_min_latent > 0.0) || !(sigma_min_likelihood > 0.0)) {
        throw std::invalid_argument("model: sigma floors must be positive");
    }
}

StgnpModel::StgnpModel(StgnpConfig config) : config_(std::move(config)) {
    config_.validate();
    const StgnpConfig& c = config_;
    const std::size_t k = c.kernel_size;
    auto weight = [&](const std::string& name, std::size_t in, std::size_t out) {
        add(name + ".weight", Shape{in, out}, {ParamKind::weight, in, out});
        add(name + ".bias", Shape{out}, {ParamKind::bias, in, out});
    };

    add("token", Shape{c.d0}, {ParamKind::token, c.d0, c.d0});
    add("embed", Shape{c.d_y, c.d0}, {ParamKind::weight, c.d_y, c.d0});
    for (std::size_t l = 0; l < c.layers; ++l) {
        const std::string p = "layer" + std::to_string(l + 1) + ".";
        const std::size_t din = c.input_width(l);
        const std::size_t d = c.det_channels[l];
        const std::size_t z = c.latent_channels[l];
        for (std::size_t hop = 0; hop <= c.K; ++hop) {
            add(p + "csgcn" + std::to_string(hop), Shape{din, d}, {ParamKind::weight, din, d});
        }
        add(p + "dcconv.kernel", Shape{k, d, d}, {ParamKind::weight, k * d, k * d});
        add(p + "dcconv.bias", Shape{d}, {ParamKind::bias, k * d, k * d});
        weight(p + "skip", din, d);
        weight(p + "cov", c.d_x, d);
        weight(p + "enc_z.hidden", c.above_width(l) + d, z);
        weight(p + "enc_z.mean", z, z);
        weight(p + "enc_z.std", z, z);
        weight(p + "enc_r.hidden", d, z);
        weight(p + "enc_r.mean", z, z);
        weight(p + "enc_r.std", z, z);
    }
    std::size_t in = c.d_x;
    for (std::size_t w : c.latent_channels) {
        in += w;
    }
    for (std::size_t i = 0; i + 1 < c.likelihood_layers; ++i) {
        weight("likelihood" + std::to_string(i), in, c.likelihood_hidden);
        in = c.likelihood_hidden;
    }
    weight("likelihood" + std::to_string(c.likelihood_layers - 1), in, 2 * c.d_y);
}

void StgnpModel::add(std::string name, Shape shape, ParamInfo info) {
    index_.emplace(name, params_.size());
    params_.emplace_back(std::move(name), Tensor(std::move(shape)));
    info_.push_back(info);
}

std::size_t StgnpModel::index_of(std::string_view name) const {
    const auto it = index_.find(std::string(name));
    if (it == index_.end()) {
        throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
    }
    return it->second;
}

Parameter& StgnpModel::parameter(std::string_view name) {
    return params_[index_of(name)];
}

const Parameter& StgnpModel::parameter(std::string_view name) const {
    return params_[index_of(name)];
}

std::size_t StgnpModel::scalar_count() const {
    std::size_t n = 0;
    for (const Parameter& p : params_) {
        n += p.value.size();
    }
    return n;
}

void StgnpModel::zero_grad() {
    for (Parameter& p : params_) {
        p.zero_grad();
    }
}

ModelVars bind(Tape& tape, const StgnpModel& model, bool requires_grad) {
    std::vector<Var> leaves;
    leaves.reserve(model.parameters().size());
    for (const Parameter& p : model.parameters()) {
        leaves.push_back(tape.watch(p.value, requires_grad));
    }
    return bind_leaves(model, std::move(leaves));
}

ModelVars bind_leaves(const StgnpModel& model, std::vector<Var> leaves) {
    const StgnpConfig& c = model.config();
    if (leaves.size() != model.parameters().size()) {
        throw std::invalid_argument("bind_leaves: " + std::to_string(leaves.size()) + " leaves for " +
                                    std::to_string(model.parameters().size()) + " parameters");
    }
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        if (leaves[i].shape() != model.parameters()[i].value.shape()) {
            throw std::invalid_argument("bind_leaves: leaf " + std::to_string(i) + " does not match parameter '" +
                                        model.parameters()[i].name + "'");
        }
    }
    ModelVars mv;
    mv.config = &model.config();
    mv.leaves = std::move(leaves);
    auto leaf = [&](const std::string& name) { return mv.leaves[model.index_of(name)]; };
    auto linear_vars = [&](const std::string& name) { return LinearVars{leaf(name + ".weight"), leaf(name + ".bias")}; };
    auto encoder_vars = [&](const std::string& name) {
        return EncoderVars{leaf(name + ".hidden.weight"), leaf(name + ".hidden.bias"),
                           leaf(name + ".mean.weight"),   leaf(name + ".mean.bias"),
                           leaf(name + ".std.weight"),    leaf(name + ".std.bias")};
    };
    mv.token = leaf("token");
    mv.embed = leaf("embed");
    for (std::size_t l = 0; l < c.layers; ++l) {
        const std::string p = "layer" + std::to_string(l + 1) + ".";
        LayerVars lv;
        for (std::size_t hop = 0; hop <= c.K; ++hop) {
            lv.csgcn.push_back(leaf(p + "csgcn" + std::to_string(hop)));
        }
        lv.dc_kernel = leaf(p + "dcconv.kernel");
        lv.dc_bias = leaf(p + "dcconv.bias");
        lv.skip = linear_vars(p + "skip");
        lv.cov = linear_vars(p + "cov");
        lv.enc_z = encoder_vars(p + "enc_z");
        lv.enc_r = encoder_vars(p + "enc_r");
        mv.layers.push_back(std::move(lv));
    }
    for (std::size_t i = 0; i < c.likelihood_layers; ++i) {
        mv.likelihood.push_back(linear_vars("likelihood" + std::to_string(i)));
    }
    return mv;
}

// ---- deterministic stage ---------------------------------------------------------

Var embed_context(const ModelVars& mv, const Var& y) {
    return linear(y, mv.embed);
}

Var csgcn(const Var& v_prev, const Var& h_prev, std::span<const Tensor> khop, std::span<const Var> weights) {
    if (khop.size() != weights.size() || khop.empty()) {
        throw std::invalid_argument("csgcn: " + std::to_string(weights.size()) + " hop weights for " +
                                    std::to_string(khop.size()) + " adjacency blocks");
    }
    const std::size_t m_count = v_prev.shape().at(0);
    Var out;
    for (std::size_t k = 0; k < khop.size(); ++k) {
        const Tensor& a = khop[k];
        if (a.rank() != 2 || a.dim(0) != m_count) {
            throw std::invalid_argument("csgcn: adjacency block " + shape_str(a.shape()) + " for " +
                                        std::to_string(m_count) + " targets");
        }
        std::vector<double> inv_norm(m_count);
        for (std::size_t m = 0; m < m_count; ++m) {
            double row = 1.0;
            for (std::size_t n = 0; n < a.dim(1); ++n) {
                row += a.at(m, n);
            }
            inv_norm[m] = 1.0 / row;
        }
        const Var mixed = scale_nodes(add(v_prev, cross_mix(h_prev, a)), inv_norm);
        const Var term = linear(mixed, weights[k]);
        out = out.valid() ? add(out, term) : term;
    }
    return out;
}

Var context_update(const LayerVars& layer, const Var& h_prev, const Var& x_context, std::size_t dilation) {
    const Var proj = conv1x1(h_prev, layer.skip.weight, layer.skip.bias);
    const Var temporal = elu(conv1d_causal(proj, layer.dc_kernel, layer.dc_bias, dilation));
    const Var cov = conv1x1(x_context, layer.cov.weight, layer.cov.bias);
    return add(add(temporal, cov), proj);
}

Var target_update(const LayerVars& layer, const Var& v_prev, const Var& h_prev, const Var& x_target,
                  std::span<const Tensor> khop, std::size_t dilation) {
    const Var spatial = csgcn(v_prev, h_prev, khop, layer.csgcn);
    const Var temporal = elu(conv1d_causal(spatial, layer.dc_kernel, layer.dc_bias, dilation));
    const Var cov = conv1x1(x_target, layer.cov.weight, layer.cov.bias);
    const Var skip = conv1x1(v_prev, layer.skip.weight, layer.skip.bias);
    return add(add(temporal, cov), skip);
}

std::vector<Var> context_stack(const ModelVars& mv, const Var& y_context, const Var& x_context) {
    const StgnpConfig& c = *mv.config;
    std::vector<Var> h{embed_context(mv, y_context)};
    for (std::size_t l = 0; l < c.layers; ++l) {
        h.push_back(context_update(mv.layers[l], h.back(), x_context, c.dilation(l)));
    }
    return h;
}

std::vector<Var> target_stack(const ModelVars& mv, const Var& v0, std::span<const Var> h, const Var& x_target,
                              std::span<const Tensor> khop) {
    const StgnpConfig& c = *mv.config;
    if (h.size() < c.layers) {
        throw std::invalid_argument("target_stack: need context representations for every layer");
    }
    if (khop.size() != c.K + 1) {
        throw std::invalid_argument("target_stack: expected " + std::to_string(c.K + 1) + " adjacency blocks, got " +
                                    std::to_string(khop.size()));
    }
    std::vector<Var> v;
    Var prev = v0;
    for (std::size_t l = 0; l < c.layers; ++l) {
        prev = target_update(mv.layers[l], prev, h[l], x_target, khop, c.dilation(l));
        v.push_back(prev);
    }
    return v;
}

namespace {

void check_inputs(const StgnpConfig& c, const WindowInputs& in) {
    const Tensor& y = in.y_context;
    const Tensor& xc = in.x_context;
    const Tensor& xt = in.x_target;
    if (y.rank() != 3 || xc.rank() != 3 || xt.rank() != 3) {
        throw std::invalid_argument("window inputs must be (nodes, T, channels)");
    }
    if (y.dim(2) != c.d_y || xc.dim(2) != c.d_x || xt.dim(2) != c.d_x) {
        throw std::invalid_argument("window inputs: channel widths do not match d_y=" + std::to_string(c.d_y) +
                                    ", d_x=" + std::to_string(c.d_x));
    }
    if (xc.dim(0) != y.dim(0) || xc.dim(1) != y.dim(1) || xt.dim(1) != y.dim(1)) {
        throw std::invalid_argument("window inputs: node or time extents disagree");
    }
    if (in.khop.size() != c.K + 1) {
        throw std::invalid_argument("window inputs: expected K + 1 adjacency blocks");
    }
}

struct Stacks {
    std::vector<Var> h;  // H^0..H^L
    std::vector<Var> v;  // V^1..V^L
    std::vector<GaussianVar> observations;  // per layer
};

Stacks deterministic(Tape& tape, const ModelVars& mv, const WindowInputs& in, const Var& v0) {
    const StgnpConfig& c = *mv.config;
    Stacks s;
    s.h = context_stack(mv, tape.constant(in.y_context), tape.constant(in.x_context));
    s.v = target_stack(mv, v0, s.h, tape.constant(in.x_target), in.khop);
    for (std::size_t l = 0; l < c.layers; ++l) {
        s.observations.push_back(gba_observations(mv.layers[l].enc_r, s.h[l + 1], c.sigma_min_latent));
    }
    return s;
}

Var top_sample(Tape& tape, const StgnpConfig& c, std::size_t targets, std::size_t time) {
    return tape.constant(Tensor(Shape{targets, time, c.above_width(c.layers - 1)}));
}

}  // namespace

std::vector<LayerState> strl_forward(Tape& tape, const ModelVars& mv, const WindowInputs& in) {
    const StgnpConfig& c = *mv.config;
    check_inputs(c, in);
    const std::size_t m = in.x_target.dim(0);
    const std::size_t t = in.x_target.dim(1);
    const std::vector<Var> h = context_stack(mv, tape.constant(in.y_context), tape.constant(in.x_context));
    const std::vector<Var> v =
        target_stack(mv, broadcast_token(mv.token, m, t), h, tape.constant(in.x_target), in.khop);
    std::vector<LayerState> states;
    for (std::size_t l = 0; l < c.layers; ++l) {
        states.push_back({v[l], h[l + 1]});
    }
    return states;
}

GaussianVar likelihood_head(const ModelVars& mv, std::span<const Var> z_layers, const Var& x_target) {
    const StgnpConfig& c = *mv.config;
    std::vector<Var> parts(z_layers.begin(), z_layers.end());
    parts.push_back(x_target);
    Var hidden = concat_channels(parts);
    for (std::size_t i = 0; i + 1 < mv.likelihood.size(); ++i) {
        hidden = elu(conv1x1(hidden, mv.likelihood[i].weight, mv.likelihood[i].bias));
    }
    const Var out = conv1x1(hidden, mv.likelihood.back().weight, mv.likelihood.back().bias);
    return {slice_channels(out, 0, c.d_y), bounded_std(slice_channels(out, c.d_y, 2 * c.d_y), c.sigma_min_likelihood)};
}

std::vector<Tensor> latent_noise(const StgnpConfig& config, std::size_t targets, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Tensor> noise(config.layers);
    for (std::size_t l = config.layers; l-- > 0;) {
        Tensor t(Shape{targets, config.window, config.latent_channels[l]});
        for (double& v : t.values()) {
            v = normal(rng);
        }
        noise[l] = std::move(t);
    }
    return noise;
}

GenerativeResult generative_forward(Tape& tape, const ModelVars& mv, const WindowInputs& in, SampleMode mode,
                                    std::uint64_t seed) {
    const StgnpConfig& c = *mv.config;
    check_inputs(c, in);
    const std::size_t m = in.x_target.dim(0);
    const std::size_t t = in.x_target.dim(1);
    const Stacks s = deterministic(tape, mv, in, broadcast_token(mv.token, m, t));
    std::vector<Tensor> noise;
    if (mode == SampleMode::sample) {
        StgnpConfig shaped = c;
        shaped.window = t;
        noise = latent_noise(shaped, m, seed);
    }
    GenerativeResult result;
    result.priors.resize(c.layers);
    result.samples.resize(c.layers);
    for (std::size_t l = c.layers; l-- > 0;) {
        const Var above = l + 1 == c.layers ? top_sample(tape, c, m, t) : result.samples[l + 1];
        const GaussianVar prior = gba_prior(mv.layers[l].enc_z, above, s.v[l], c.sigma_min_latent);
        const GaussianVar post = gba_update(prior, s.observations[l], in.khop[1]);
        result.priors[l] = post;
        result.samples[l] = mode == SampleMode::mean ? post.mean : reparameterize(post, noise[l]);
    }
    result.predictive = likelihood_head(mv, result.samples, tape.constant(in.x_target));
    return result;
}

PosteriorResult posterior_forward(Tape& tape, const ModelVars& mv, const WindowInputs& in, const Tensor& y_target,
                                  std::uint64_t seed) {
    const StgnpConfig& c = *mv.config;
    check_inputs(c, in);
    const std::size_t m = in.x_target.dim(0);
    const std::size_t t = in.x_target.dim(1);
    const Stacks s = deterministic(tape, mv, in, embed_context(mv, tape.constant(y_target)));
    StgnpConfig shaped = c;
    shaped.window = t;
    const std::vector<Tensor> noise = latent_noise(shaped, m, seed);
    PosteriorResult result;
    result.posteriors.resize(c.layers);
    result.samples.resize(c.layers);
    for (std::size_t l = c.layers; l-- > 0;) {
        const Var above = l + 1 == c.layers ? top_sample(tape, c, m, t) : result.samples[l + 1];
        const GaussianVar prior = gba_prior(mv.layers[l].enc_z, above, s.v[l], c.sigma_min_latent);
        const GaussianVar post = gba_update(prior, s.observations[l], in.khop[1]);
        result.posteriors[l] = post;
        result.samples[l] = reparameterize(post, noise[l]);
    }
    return result;
}

ElboResult elbo(Tape& tape, const ModelVars& mv, const WindowInputs& in, const TargetObservations& target,
                std::uint64_t seed) {
    const StgnpConfig& c = *mv.config;
    check_inputs(c, in);
    const std::size_t m = in.x_target.dim(0);
    const std::size_t t = in.x_target.dim(1);
    if (target.y.shape() != Shape{m, t, c.d_y} || target.mask.shape() != target.y.shape()) {
        throw std::invalid_argument("elbo: target values/mask must be " + shape_str(Shape{m, t, c.d_y}));
    }

    const std::vector<Var> h = context_stack(mv, tape.constant(in.y_context), tape.constant(in.x_context));
    const Var x_target = tape.constant(in.x_target);
    const std::vector<Var> v_prior = target_stack(mv, broadcast_token(mv.token, m, t), h, x_target, in.khop);
    // Masked target entries enter the posterior path as zeros, like missing context values.
    Tensor y_seen = target.y;
    for (std::size_t i = 0; i < y_seen.size(); ++i) {
        if (target.mask[i] == 0.0) {
            y_seen[i] = 0.0;
        }
    }
    const std::vector<Var> v_post =
        target_stack(mv, embed_context(mv, tape.constant(std::move(y_seen))), h, x_target, in.khop);
    StgnpConfig shaped = c;
    shaped.window = t;
    const std::vector<Tensor> noise = latent_noise(shaped, m, seed);

    ElboResult result;
    result.kl_per_layer.resize(c.layers);
    std::vector<Var> samples(c.layers);
    Var kl_total;
    for (std::size_t l = c.layers; l-- > 0;) {
        const LayerVars& layer = mv.layers[l];
        const GaussianVar obs = gba_observations(layer.enc_r, h[l + 1], c.sigma_min_latent);
        const Var above = l + 1 == c.layers ? top_sample(tape, c, m, t) : samples[l + 1];
        const GaussianVar p = gba_update(gba_prior(layer.enc_z, above, v_prior[l], c.sigma_min_latent), obs, in.khop[1]);
        const GaussianVar q = gba_update(gba_prior(layer.enc_z, above, v_post[l], c.sigma_min_latent), obs, in.khop[1]);
        const Var kl = diag_gaussian_kl(q, p);
        result.kl_per_layer[l] = kl.value().item();
        kl_total = kl_total.valid() ? add(kl_total, kl) : kl;
        samples[l] = reparameterize(q, noise[l]);
    }
    const GaussianVar lik = likelihood_head(mv, samples, x_target);
    const Var recon = diag_gaussian_logpdf(target.y, lik, target.mask);
    result.recon = recon.value().item();
    result.loss = sub(kl_total, recon);
    return result;
}

DiagGaussian predict(const StgnpModel& model, const WindowInputs& in, SampleMode mode, std::uint64_t seed) {
    Tape tape;
    const ModelVars mv = bind(tape, model, false);
    return generative_forward(tape, mv, in, mode, seed).predictive.value();
}

}  // namespace stgnp
