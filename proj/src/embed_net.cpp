#include "pcn/embed_net.hpp"

#include <cmath>
#include <string>

#include "pcn/error.hpp"
#include "pcn/rng.hpp"

namespace pcn {

NetGradients::NetGradients(const EmbedNet& net) {
    weights.reserve(net.n_layers());
    biases.reserve(net.n_layers());
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        weights.emplace_back(net.weights[l].rows(), net.weights[l].cols());
        biases.emplace_back(net.biases[l].size(), 0.0);
    }
}

void NetGradients::add(const NetGradients& other) {
    if (other.weights.size() != weights.size()) {
        throw ShapeError("NetGradients::add: layer count mismatch");
    }
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (other.weights[l].rows() != weights[l].rows() ||
            other.weights[l].cols() != weights[l].cols()) {
            throw ShapeError("NetGradients::add: shape mismatch at layer " + std::to_string(l));
        }
        auto& w = weights[l].values();
        const auto& ow = other.weights[l].values();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += ow[i];
        for (std::size_t i = 0; i < biases[l].size(); ++i) biases[l][i] += other.biases[l][i];
    }
}

void NetGradients::scale(double factor) {
    for (auto& w : weights) {
        for (double& v : w.values()) v *= factor;
    }
    for (auto& b : biases) {
        for (double& v : b) v *= factor;
    }
}

bool NetGradients::all_finite() const {
    for (const auto& w : weights) {
        if (!w.all_finite()) return false;
    }
    for (const auto& b : biases) {
        for (double v : b) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

AdamState::AdamState(const EmbedNet& net, AdamConfig cfg) : config(cfg) {
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        m_weights.emplace_back(net.weights[l].rows(), net.weights[l].cols());
        v_weights.emplace_back(net.weights[l].rows(), net.weights[l].cols());
        m_biases.emplace_back(net.biases[l].size(), 0.0);
        v_biases.emplace_back(net.biases[l].size(), 0.0);
    }
}

EmbedNet net_init(const std::vector<std::size_t>& layer_dims, uint64_t seed) {
    if (layer_dims.size() < 2) {
        throw ConfigError("net_init: need at least input and output dims, got " +
                          std::to_string(layer_dims.size()));
    }
    for (std::size_t d : layer_dims) {
        if (d < 1) throw ConfigError("net_init: every layer dim must be >= 1");
    }
    EmbedNet net;
    net.layer_dims = layer_dims;
    Pcg32 rng(seed, rng_stream::init);
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        std::size_t fan_in = layer_dims[l];
        std::size_t fan_out = layer_dims[l + 1];
        Matrix w(fan_out, fan_in);
        double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : w.values()) {
            v = (2.0 * rng.next_double() - 1.0) * scale;
        }
        net.weights.push_back(std::move(w));
        net.biases.emplace_back(fan_out, 0.0);
    }
    return net;
}

Matrix net_forward(const EmbedNet& net, const Matrix& batch, ForwardTape* tape) {
    if (batch.cols() != net.input_dim()) {
        throw ShapeError("net_forward: batch width " + std::to_string(batch.cols()) +
                         " != input dim " + std::to_string(net.input_dim()));
    }
    if (!batch.all_finite()) {
        throw DataError("net_forward: non-finite value in input batch");
    }
    if (tape) {
        tape->net = &net;
        tape->activations.clear();
        tape->activations.push_back(batch);
    }
    Matrix current = batch;
    const std::size_t n = batch.rows();
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        const Matrix& w = net.weights[l];
        const auto& b = net.biases[l];
        const bool output_layer = (l + 1 == net.n_layers());
        Matrix next(n, w.rows());
        for (std::size_t i = 0; i < n; ++i) {
            auto in = current.row(i);
            auto out = next.row(i);
            for (std::size_t j = 0; j < w.rows(); ++j) {
                double z = b[j] + dot(w.row(j), in);
                out[j] = output_layer ? z : std::tanh(z);
            }
        }
        current = std::move(next);
        if (tape) tape->activations.push_back(current);
    }
    return current;
}

NetGradients net_gradients(const ForwardTape& tape, const Matrix& upstream) {
    if (!tape.net || tape.activations.empty()) {
        throw StateError("net_gradients: tape was not produced by net_forward");
    }
    const EmbedNet& net = *tape.net;
    const Matrix& output = tape.activations.back();
    if (upstream.rows() != output.rows() || upstream.cols() != output.cols()) {
        throw ShapeError("net_gradients: upstream shape " + std::to_string(upstream.rows()) +
                         "x" + std::to_string(upstream.cols()) + " != embeddings shape " +
                         std::to_string(output.rows()) + "x" + std::to_string(output.cols()));
    }
    NetGradients grads(net);
    const std::size_t n = upstream.rows();
    Matrix delta = upstream;  // gradient w.r.t. pre-activation of the layer being processed
    for (std::size_t li = net.n_layers(); li-- > 0;) {
        const Matrix& w = net.weights[li];
        const Matrix& input_act = tape.activations[li];
        const Matrix& output_act = tape.activations[li + 1];
        const bool output_layer = (li + 1 == net.n_layers());
        if (!output_layer) {
            // delta currently holds dL/d(post-activation); fold in tanh'.
            for (std::size_t i = 0; i < n; ++i) {
                auto d = delta.row(i);
                auto a = output_act.row(i);
                for (std::size_t j = 0; j < d.size(); ++j) d[j] *= 1.0 - a[j] * a[j];
            }
        }
        Matrix& gw = grads.weights[li];
        auto& gb = grads.biases[li];
        for (std::size_t i = 0; i < n; ++i) {
            auto d = delta.row(i);
            auto in = input_act.row(i);
            for (std::size_t j = 0; j < d.size(); ++j) {
                gb[j] += d[j];
                auto gwr = gw.row(j);
                for (std::size_t c = 0; c < in.size(); ++c) gwr[c] += d[j] * in[c];
            }
        }
        if (li > 0) {
            Matrix prev(n, w.cols());
            for (std::size_t i = 0; i < n; ++i) {
                auto d = delta.row(i);
                auto p = prev.row(i);
                for (std::size_t j = 0; j < d.size(); ++j) {
                    auto wr = w.row(j);
                    for (std::size_t c = 0; c < p.size(); ++c) p[c] += d[j] * wr[c];
                }
            }
            delta = std::move(prev);
        }
    }
    return grads;
}

void adam_update_flat(std::span<double> params, std::span<const double> grads,
                      std::span<double> m, std::span<double> v, long step_count,
                      const AdamConfig& cfg) {
    double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
    double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double g = grads[i] + cfg.weight_decay * params[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        double m_hat = m[i] / bias1;
        double v_hat = v[i] / bias2;
        params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
}

void adam_step(EmbedNet& net, const NetGradients& grads, AdamState& state) {
    if (grads.weights.size() != net.n_layers()) {
        throw ShapeError("adam_step: gradient layer count mismatch");
    }
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        if (!grads.weights[l].all_finite()) {
            throw OptimizationError("adam_step: non-finite weight gradient at layer " +
                                    std::to_string(l));
        }
        for (double v : grads.biases[l]) {
            if (!std::isfinite(v)) {
                throw OptimizationError("adam_step: non-finite bias gradient at layer " +
                                        std::to_string(l));
            }
        }
    }
    state.step_count += 1;
    const AdamConfig& cfg = state.config;
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        adam_update_flat(net.weights[l].values(), grads.weights[l].values(),
                         state.m_weights[l].values(), state.v_weights[l].values(),
                         state.step_count, cfg);
        adam_update_flat(net.biases[l], grads.biases[l], state.m_biases[l], state.v_biases[l],
                         state.step_count, cfg);
    }
}

}  // namespace pcn
