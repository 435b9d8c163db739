#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metassm/autodiff.hpp"
#include "metassm/dataset.hpp"
#include "metassm/rng.hpp"
#include "metassm/tensor.hpp"

namespace metassm {

struct ArchitectureSpec {
    std::size_t history = 10;       // H
    std::size_t horizon = 5;        // H_p
    std::size_t output_dim = 2;     // n_y
    std::size_t latent_dim = 128;   // n_z
    std::vector<std::size_t> hidden{128, 128, 128, 128, 128};

    std::size_t encoder_input() const { return history * output_dim; }
    std::size_t affine_count() const { return hidden.size() + 1; }

    void validate() const {
        if (history < 1 || horizon < 1 || latent_dim < 1 || output_dim < 1) {
            throw ValidationError("architecture: H, H_p, n_y, n_z must all be >= 1");
        }
        for (std::size_t w : hidden) {
            if (w < 1) throw ValidationError("architecture: hidden widths must be >= 1");
        }
    }

    bool operator==(const ArchitectureSpec&) const = default;
};

// Optional per-dimension output standardization; applied to encoder inputs
// and inverted on decoded predictions.
struct OutputNormalizer {
    State2 mean{0.0, 0.0};
    State2 stdev{1.0, 1.0};
};

// Ordered parameter list: encoder affine layers (weight, bias) in order,
// then the latent transition A_z and output map C_z, both biasless.
class NeuralSSM {
public:
    ArchitectureSpec spec;
    std::vector<std::string> names;
    std::vector<Tensor> params;
    std::optional<OutputNormalizer> norm;

    std::size_t layer_count() const { return params.size(); }
    std::size_t az_index() const { return params.size() - 2; }
    std::size_t cz_index() const { return params.size() - 1; }
    bool is_encoder_layer(std::size_t i) const { return i < az_index(); }
    bool is_head_layer(std::size_t i) const { return i >= az_index(); }

    const Tensor& az() const { return params[az_index()]; }
    const Tensor& cz() const { return params[cz_index()]; }
    Tensor& az() { return params[az_index()]; }
    Tensor& cz() { return params[cz_index()]; }
};

// Xavier-uniform init: weights (fan_out, fan_in) ~ U(-a, a) with
// a = sqrt(6 / (fan_in + fan_out)); biases zero. Deterministic in the seed.
inline NeuralSSM init_model(const ArchitectureSpec& spec, std::uint64_t seed) {
    spec.validate();
    NeuralSSM model;
    model.spec = spec;
    Rng rng(derive_seed(seed, stream::init));

    auto xavier = [&rng](std::size_t fan_out, std::size_t fan_in) {
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Tensor w = Tensor::zeros({fan_out, fan_in});
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-a, a);
        return w;
    };

    std::size_t in_width = spec.encoder_input();
    for (std::size_t l = 0; l < spec.affine_count(); ++l) {
        const std::size_t out_width = l < spec.hidden.size() ? spec.hidden[l] : spec.latent_dim;
        model.names.push_back("enc." + std::to_string(l) + ".weight");
        model.params.push_back(xavier(out_width, in_width));
        model.names.push_back("enc." + std::to_string(l) + ".bias");
        model.params.push_back(Tensor::zeros({out_width}));
        in_width = out_width;
    }
    model.names.push_back("A_z");
    model.params.push_back(xavier(spec.latent_dim, spec.latent_dim));
    model.names.push_back("C_z");
    model.params.push_back(xavier(spec.output_dim, spec.latent_dim));
    return model;
}

inline OutputNormalizer compute_normalizer(const SourceDataset& ds) {
    double sum[2] = {0, 0}, sq[2] = {0, 0};
    std::size_t n = 0;
    for (const Trajectory& t : ds.trajectories) {
        for (const State2& y : t.outputs) {
            for (int d = 0; d < 2; ++d) {
                sum[d] += y[d];
                sq[d] += y[d] * y[d];
            }
            ++n;
        }
    }
    if (n == 0) throw ValidationError("normalizer: empty dataset");
    OutputNormalizer nm;
    for (int d = 0; d < 2; ++d) {
        nm.mean[d] = sum[d] / static_cast<double>(n);
        const double var = sq[d] / static_cast<double>(n) - nm.mean[d] * nm.mean[d];
        nm.stdev[d] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return nm;
}

// --- batched training views -------------------------------------------------

// Column-per-sample batch. Histories are flattened time-major: the oldest
// point's n_y values first, the newest last.
struct WindowBatch {
    Tensor inputs;   // [H * n_y, K]
    Tensor targets;  // [H_p * n_y, K]
    std::size_t count = 0;
};

inline WindowBatch make_batch(const ArchitectureSpec& spec,
                              std::span<const WindowSample> samples,
                              const std::optional<OutputNormalizer>& norm = std::nullopt) {
    if (samples.empty()) throw ValidationError("batch: no window samples");
    const std::size_t ny = spec.output_dim;
    const std::size_t k = samples.size();
    WindowBatch batch;
    batch.count = k;
    batch.inputs = Tensor::zeros({spec.history * ny, k});
    batch.targets = Tensor::zeros({spec.horizon * ny, k});
    auto standardize = [&](double v, std::size_t dim) {
        return norm ? (v - norm->mean[dim % 2]) / norm->stdev[dim % 2] : v;
    };
    for (std::size_t c = 0; c < k; ++c) {
        const WindowSample& s = samples[c];
        if (s.history.shape() != Shape{spec.history, ny} ||
            s.future.shape() != Shape{spec.horizon, ny}) {
            throw ShapeError("batch: window sample " + std::to_string(c) +
                             " has shape " + shape_str(s.history.shape()) + "/" +
                             shape_str(s.future.shape()) + ", expected [" +
                             std::to_string(spec.history) + "," + std::to_string(ny) + "]/[" +
                             std::to_string(spec.horizon) + "," + std::to_string(ny) + "]");
        }
        for (std::size_t i = 0; i < spec.history * ny; ++i) {
            batch.inputs[i * k + c] = standardize(s.history[i], i);
        }
        for (std::size_t i = 0; i < spec.horizon * ny; ++i) {
            batch.targets[i * k + c] = standardize(s.future[i], i);
        }
    }
    return batch;
}

// --- graph builders (training path) ------------------------------------------

inline std::vector<Var> param_leaves(Graph& g, const NeuralSSM& model,
                                     bool requires_grad = true) {
    std::vector<Var> vars;
    vars.reserve(model.params.size());
    for (const Tensor& p : model.params) vars.push_back(g.leaf(p, requires_grad));
    return vars;
}

// Broadcast a bias column across K batch columns: b [w] -> [w, K].
inline Var broadcast_cols(Graph& g, Var bias, std::size_t k) {
    const std::size_t w = g.value(bias).dim(0);
    return g.matmul(g.reshape(bias, {w, 1}), g.constant(Tensor::ones({1, k})));
}

// Encoder MLP: ReLU on hidden layers, linear final layer to the latent space.
inline Var encode_op(Graph& g, const ArchitectureSpec& spec, std::span<const Var> params,
                     Var inputs) {
    const std::size_t k = g.value(inputs).dim(1);
    Var h = inputs;
    for (std::size_t l = 0; l < spec.affine_count(); ++l) {
        Var w = params[2 * l];
        Var b = params[2 * l + 1];
        h = g.add(g.matmul(w, h), broadcast_cols(g, b, k));
        if (l + 1 < spec.affine_count()) h = g.relu(h);
    }
    return h;  // [n_z, K]
}

// Stacked multi-step predictions [H_p * n_y, K]: row block p holds
// C_z A_z^p z for every batch column.
inline Var prediction_op(Graph& g, const ArchitectureSpec& spec, std::span<const Var> params,
                         Var inputs) {
    Var az = params[params.size() - 2];
    Var cz = params[params.size() - 1];
    Var z = encode_op(g, spec, params, inputs);
    std::vector<Var> rows;
    rows.reserve(spec.horizon);
    for (std::size_t p = 0; p < spec.horizon; ++p) {
        if (p > 0) z = g.matmul(az, z);
        rows.push_back(g.matmul(cz, z));
    }
    return rows.size() == 1 ? rows[0] : g.concat(rows, 0);
}

struct LossPenalty {
    double l1 = 0.0;  // lambda_1 * ||A_z||_1 (elementwise)
    double l2 = 0.0;  // lambda_2 * ||A_z||_2^2 (Frobenius)
};

// Multi-step MSE: per sample (1/H_p) sum_k ||y - yhat||^2, averaged over the
// batch; equals n_y * mean of all squared residuals.
inline Var loss_op(Graph& g, const ArchitectureSpec& spec, std::span<const Var> params,
                   Var inputs, Var targets, const LossPenalty& penalty = {}) {
    Var diff = g.sub(prediction_op(g, spec, params, inputs), targets);
    Var loss = g.scal(static_cast<double>(spec.output_dim), g.mean(g.square(diff)));
    if (penalty.l1 != 0.0 || penalty.l2 != 0.0) {
        Var az = params[params.size() - 2];
        if (penalty.l1 != 0.0) {
            Var abs_az = g.add(g.relu(az), g.relu(g.scal(-1.0, az)));
            loss = g.add(loss, g.scal(penalty.l1, g.sum(abs_az)));
        }
        if (penalty.l2 != 0.0) {
            loss = g.add(loss, g.scal(penalty.l2, g.sum(g.square(az))));
        }
    }
    return loss;
}

// Convenience: batch assembly + loss in one step.
inline Var batch_loss_op(Graph& g, const NeuralSSM& model, std::span<const Var> params,
                         const WindowBatch& batch, const LossPenalty& penalty = {}) {
    return loss_op(g, model.spec, params, g.constant(batch.inputs),
                   g.constant(batch.targets), penalty);
}

// --- plain inference path -----------------------------------------------------

namespace detail {

inline std::vector<double> standardized_flat(const NeuralSSM& model,
                                             std::span<const double> window) {
    std::vector<double> v(window.begin(), window.end());
    if (model.norm) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            const std::size_t d = i % model.spec.output_dim;
            v[i] = (v[i] - model.norm->mean[d]) / model.norm->stdev[d];
        }
    }
    return v;
}

inline Tensor mlp_forward(const NeuralSSM& model, std::vector<double> v) {
    const ArchitectureSpec& spec = model.spec;
    Tensor h({v.size()}, std::move(v));
    for (std::size_t l = 0; l < spec.affine_count(); ++l) {
        h = kernels::add(kernels::matmul(model.params[2 * l], h), model.params[2 * l + 1]);
        if (l + 1 < spec.affine_count()) h = kernels::relu(h);
    }
    return h;
}

}  // namespace detail

// Latent encoding of one history window [H, n_y] (flattened time-major).
inline Tensor encode(const NeuralSSM& model, const Tensor& history) {
    if (history.shape() != Shape{model.spec.history, model.spec.output_dim}) {
        throw ShapeError("encode: history shape " + shape_str(history.shape()) +
                         ", expected [" + std::to_string(model.spec.history) + "," +
                         std::to_string(model.spec.output_dim) + "]");
    }
    return detail::mlp_forward(model, detail::standardized_flat(model, history.values()));
}

// z_{k+1} = A_z z_k, returning z_1 ... z_steps as rows of [steps, n_z].
inline Tensor latent_rollout(const NeuralSSM& model, const Tensor& z0, std::size_t steps) {
    if (z0.shape() != Shape{model.spec.latent_dim}) {
        throw ShapeError("latent_rollout: z0 shape " + shape_str(z0.shape()) + ", expected [" +
                         std::to_string(model.spec.latent_dim) + "]");
    }
    Tensor out = Tensor::zeros({steps, model.spec.latent_dim});
    Tensor z = z0;
    for (std::size_t s = 0; s < steps; ++s) {
        z = kernels::matmul(model.az(), z);
        for (std::size_t i = 0; i < z.size(); ++i) out[s * z.size() + i] = z[i];
    }
    return out;
}

namespace detail {

inline void destandardize_row(const NeuralSSM& model, Tensor& block, std::size_t row) {
    if (!model.norm) return;
    for (std::size_t d = 0; d < model.spec.output_dim; ++d) {
        double& v = block[row * model.spec.output_dim + d];
        v = v * model.norm->stdev[d % 2] + model.norm->mean[d % 2];
    }
}

// Decode `horizon` successive latent states starting at z (inclusive).
inline Tensor decode_rollout(const NeuralSSM& model, Tensor z, std::size_t horizon) {
    Tensor out = Tensor::zeros({horizon, model.spec.output_dim});
    for (std::size_t s = 0; s < horizon; ++s) {
        if (s > 0) z = kernels::matmul(model.az(), z);
        Tensor y = kernels::matmul(model.cz(), z);
        for (std::size_t d = 0; d < y.size(); ++d) out[s * y.size() + d] = y[d];
        destandardize_row(model, out, s);
    }
    return out;
}

}  // namespace detail

// Multi-step prediction [H_p, n_y]; the first row decodes the encoding itself.
inline Tensor predict(const NeuralSSM& model, const Tensor& history) {
    return detail::decode_rollout(model, encode(model, history), model.spec.horizon);
}

// Long-horizon prediction: encode the last H context points once, then roll
// the latent forward; the encoder is never re-invoked.
inline Tensor rollout_predict(const NeuralSSM& model, std::span<const State2> context,
                              std::size_t horizon) {
    const std::size_t h = model.spec.history;
    if (context.size() < h) {
        throw ShapeError("rollout_predict: context has " + std::to_string(context.size()) +
                         " points, needs at least " + std::to_string(h));
    }
    if (horizon == 0) return Tensor({0, model.spec.output_dim}, {});
    Tensor window = Tensor::zeros({h, 2});
    const std::size_t off = context.size() - h;
    for (std::size_t i = 0; i < h; ++i) {
        window[i * 2] = context[off + i][0];
        window[i * 2 + 1] = context[off + i][1];
    }
    return detail::decode_rollout(model, encode(model, window), horizon);
}

// Mean multi-step MSE over a sample set (scoring path, no graph).
inline double ssm_loss(const NeuralSSM& model, std::span<const WindowSample> samples,
                       const LossPenalty& penalty = {}) {
    if (samples.empty()) throw ValidationError("ssm_loss: empty batch");
    WindowBatch batch = make_batch(model.spec, samples, model.norm);
    Graph g;
    auto params = param_leaves(g, model, false);
    return g.value(loss_op(g, model.spec, params, g.constant(batch.inputs),
                           g.constant(batch.targets), penalty))
        .item();
}

}  // namespace metassm
