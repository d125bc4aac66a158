#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lidkit/error.hpp"
#include "lidkit/rng.hpp"

namespace lidkit {

enum class Activation { Relu, Tanh, Identity };

inline double apply_act(Activation a, double x) {
    switch (a) {
        case Activation::Relu: return x > 0.0 ? x : 0.0;
        case Activation::Tanh: return std::tanh(x);
        case Activation::Identity: return x;
    }
    return x;
}

inline double act_deriv(Activation a, double pre) {
    switch (a) {
        case Activation::Relu: return pre > 0.0 ? 1.0 : 0.0;
        case Activation::Tanh: {
            double t = std::tanh(pre);
            return 1.0 - t * t;
        }
        case Activation::Identity: return 1.0;
    }
    return 1.0;
}

struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    Activation act = Activation::Identity;
};

// Feedforward architecture. The network output is the final affine
// pre-activation (logits); the last layer's activation tag only matters when
// the layer feeds a deeper one.
struct NetworkSpec {
    std::vector<Layer> layers;

    void validate() const {
        if (layers.empty()) throw ShapeError("NetworkSpec: at least one layer required");
        for (std::size_t k = 0; k < layers.size(); ++k) {
            if (layers[k].in == 0 || layers[k].out == 0)
                throw ShapeError("NetworkSpec: zero layer width at layer " + std::to_string(k));
            if (k > 0 && layers[k].in != layers[k - 1].out)
                throw ShapeError("NetworkSpec: width mismatch between layers " +
                                 std::to_string(k - 1) + " and " + std::to_string(k));
        }
    }

    std::size_t input_width() const { return layers.front().in; }
    std::size_t output_width() const { return layers.back().out; }
    std::size_t depth() const { return layers.size(); }

    std::size_t param_count() const {
        std::size_t p = 0;
        for (const Layer& l : layers) p += l.out * l.in + l.out;
        return p;
    }

    // Flat layout: per layer, weights row-major [out][in] then bias [out].
    std::size_t weight_offset(std::size_t layer) const {
        std::size_t off = 0;
        for (std::size_t k = 0; k < layer; ++k) off += layers[k].out * layers[k].in + layers[k].out;
        return off;
    }
    std::size_t bias_offset(std::size_t layer) const {
        return weight_offset(layer) + layers[layer].out * layers[layer].in;
    }
    std::size_t weight_index(std::size_t layer, std::size_t row, std::size_t col) const {
        return weight_offset(layer) + row * layers[layer].in + col;
    }
    std::size_t bias_index(std::size_t layer, std::size_t row) const {
        return bias_offset(layer) + row;
    }
};

// Flat view of all weights and biases.
using ParamVector = std::vector<double>;
using Gradient = std::vector<double>;

inline void check_params(const NetworkSpec& net, const ParamVector& theta) {
    if (theta.size() != net.param_count())
        throw ShapeError("ParamVector length " + std::to_string(theta.size()) +
                         " != expected " + std::to_string(net.param_count()));
}

// Glorot-style uniform weight init, zero biases.
inline ParamVector init_params(const NetworkSpec& net, std::uint64_t seed) {
    net.validate();
    ParamVector theta(net.param_count(), 0.0);
    Rng rng(mix_seed(seed, 0x1217));
    for (std::size_t k = 0; k < net.depth(); ++k) {
        const Layer& l = net.layers[k];
        double bound = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
        std::size_t w0 = net.weight_offset(k);
        for (std::size_t i = 0; i < l.out * l.in; ++i) theta[w0 + i] = rng.uniform(-bound, bound);
    }
    return theta;
}

struct LabeledBatch {
    std::size_t input_width = 0;
    std::vector<double> inputs;  // N x input_width, row-major
    std::vector<int> labels;     // N entries in [0, C)

    std::size_t size() const { return labels.size(); }
    std::span<const double> input(std::size_t i) const {
        return {inputs.data() + i * input_width, input_width};
    }
    void push(std::span<const double> x, int y) {
        inputs.insert(inputs.end(), x.begin(), x.end());
        labels.push_back(y);
    }
    void validate(const NetworkSpec& net, std::size_t num_classes) const {
        if (labels.empty()) throw ShapeError("LabeledBatch: empty batch");
        if (input_width != net.input_width())
            throw ShapeError("LabeledBatch: input width " + std::to_string(input_width) +
                             " != network input " + std::to_string(net.input_width()));
        if (inputs.size() != labels.size() * input_width)
            throw ShapeError("LabeledBatch: inputs/labels size mismatch");
        for (int y : labels)
            if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
                throw ShapeError("LabeledBatch: label out of range");
    }
};

inline std::vector<double> softmax(std::span<const double> logits) {
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    std::vector<double> s(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        s[i] = std::exp(logits[i] - m);
        z += s[i];
    }
    for (double& v : s) v /= z;
    return s;
}

// Forward pass; logits are the last layer's affine output.
inline std::vector<double> forward(const NetworkSpec& net, const ParamVector& theta,
                                   std::span<const double> x) {
    check_params(net, theta);
    if (x.size() != net.input_width()) throw ShapeError("forward: input width mismatch");
    std::vector<double> z(x.begin(), x.end());
    for (std::size_t k = 0; k < net.depth(); ++k) {
        const Layer& l = net.layers[k];
        std::size_t w0 = net.weight_offset(k), b0 = net.bias_offset(k);
        std::vector<double> pre(l.out);
        for (std::size_t i = 0; i < l.out; ++i) {
            double acc = theta[b0 + i];
            const double* w = theta.data() + w0 + i * l.in;
            for (std::size_t j = 0; j < l.in; ++j) acc += w[j] * z[j];
            pre[i] = acc;
        }
        if (k + 1 == net.depth()) return pre;
        for (std::size_t i = 0; i < l.out; ++i) pre[i] = apply_act(l.act, pre[i]);
        z = std::move(pre);
    }
    return z;  // unreachable
}

enum class LossKind { CrossEntropy, SoftAccuracyNeg };

namespace detail {

// Per-sample forward keeping pre-activations for backprop.
struct ForwardTrace {
    std::vector<std::vector<double>> pre;   // per layer, length out
    std::vector<std::vector<double>> post;  // post[k] = input to layer k
};

inline std::vector<double> forward_traced(const NetworkSpec& net, const ParamVector& theta,
                                          std::span<const double> x, ForwardTrace& tr) {
    tr.pre.assign(net.depth(), {});
    tr.post.assign(net.depth(), {});
    std::vector<double> z(x.begin(), x.end());
    for (std::size_t k = 0; k < net.depth(); ++k) {
        const Layer& l = net.layers[k];
        tr.post[k] = z;
        std::size_t w0 = net.weight_offset(k), b0 = net.bias_offset(k);
        std::vector<double> pre(l.out);
        for (std::size_t i = 0; i < l.out; ++i) {
            double acc = theta[b0 + i];
            const double* w = theta.data() + w0 + i * l.in;
            for (std::size_t j = 0; j < l.in; ++j) acc += w[j] * z[j];
            pre[i] = acc;
        }
        tr.pre[k] = pre;
        if (k + 1 == net.depth()) return pre;
        for (std::size_t i = 0; i < l.out; ++i) pre[i] = apply_act(l.act, pre[i]);
        z = std::move(pre);
    }
    return z;
}

// Accumulates d(loss)/d(theta) given d(loss)/d(logits) for one sample.
inline void backprop_sample(const NetworkSpec& net, const ParamVector& theta,
                            const ForwardTrace& tr, std::vector<double> dlogits,
                            Gradient& grad) {
    std::vector<double> d = std::move(dlogits);
    for (std::size_t kk = net.depth(); kk-- > 0;) {
        const Layer& l = net.layers[kk];
        std::size_t w0 = net.weight_offset(kk), b0 = net.bias_offset(kk);
        const std::vector<double>& zin = tr.post[kk];
        std::vector<double> dz(l.in, 0.0);
        for (std::size_t i = 0; i < l.out; ++i) {
            grad[b0 + i] += d[i];
            double* gw = grad.data() + w0 + i * l.in;
            const double* w = theta.data() + w0 + i * l.in;
            for (std::size_t j = 0; j < l.in; ++j) {
                gw[j] += d[i] * zin[j];
                dz[j] += d[i] * w[j];
            }
        }
        if (kk == 0) break;
        const Layer& prev = net.layers[kk - 1];
        for (std::size_t j = 0; j < l.in; ++j) dz[j] *= act_deriv(prev.act, tr.pre[kk - 1][j]);
        d = std::move(dz);
    }
}

}  // namespace detail

// Mean loss over the batch and its exact reverse-mode gradient.
inline std::pair<double, Gradient> loss_and_grad(const NetworkSpec& net, const ParamVector& theta,
                                                 const LabeledBatch& batch, LossKind kind) {
    batch.validate(net, net.output_width());
    check_params(net, theta);
    const std::size_t n = batch.size();
    const std::size_t c = net.output_width();
    double total = 0.0;
    Gradient grad(theta.size(), 0.0);
    detail::ForwardTrace tr;
    for (std::size_t s = 0; s < n; ++s) {
        std::vector<double> logits = detail::forward_traced(net, theta, batch.input(s), tr);
        std::vector<double> sm = softmax(logits);
        int y = batch.labels[s];
        double sample_loss;
        std::vector<double> dlogits(c);
        if (kind == LossKind::CrossEntropy) {
            sample_loss = -std::log(std::max(sm[y], 1e-300));
            for (std::size_t i = 0; i < c; ++i)
                dlogits[i] = (sm[i] - (static_cast<int>(i) == y ? 1.0 : 0.0)) / double(n);
        } else {
            sample_loss = -sm[y];
            // d(-s_y)/dlogit_i = s_y * (s_i - [i == y])
            for (std::size_t i = 0; i < c; ++i)
                dlogits[i] = sm[y] * (sm[i] - (static_cast<int>(i) == y ? 1.0 : 0.0)) / double(n);
        }
        if (!std::isfinite(sample_loss))
            throw NumericError("non-finite loss at sample " + std::to_string(s));
        total += sample_loss / double(n);
        detail::backprop_sample(net, theta, tr, std::move(dlogits), grad);
    }
    return {total, std::move(grad)};
}

// Per-coordinate uniform noise over observed feature ranges (the noise
// distribution used by the de-bias regularizer).
struct NoiseSpec {
    std::vector<double> lo, hi;
    std::size_t samples = 32;

    static NoiseSpec from_data(const LabeledBatch& batch, std::size_t samples = 32) {
        NoiseSpec ns;
        ns.samples = samples;
        ns.lo.assign(batch.input_width, 0.0);
        ns.hi.assign(batch.input_width, 0.0);
        for (std::size_t j = 0; j < batch.input_width; ++j) {
            double lo = batch.inputs[j], hi = batch.inputs[j];
            for (std::size_t i = 1; i < batch.size(); ++i) {
                lo = std::min(lo, batch.inputs[i * batch.input_width + j]);
                hi = std::max(hi, batch.inputs[i * batch.input_width + j]);
            }
            ns.lo[j] = lo;
            ns.hi[j] = hi;
        }
        return ns;
    }

    std::vector<double> sample(Rng& rng) const {
        std::vector<double> x(lo.size());
        for (std::size_t j = 0; j < lo.size(); ++j) x[j] = rng.uniform(lo[j], hi[j]);
        return x;
    }
};

namespace detail {

// Mean over m noise draws of || softmax(h(X)) - uniform ||_2, optionally with
// its gradient accumulated into grad (scaled by weight).
inline double debias_term(const NetworkSpec& net, const ParamVector& theta, const NoiseSpec& noise,
                          std::size_t m, Rng& rng, Gradient* grad, double weight) {
    const std::size_t c = net.output_width();
    const double u = 1.0 / static_cast<double>(c);
    double total = 0.0;
    ForwardTrace tr;
    for (std::size_t s = 0; s < m; ++s) {
        std::vector<double> x = noise.sample(rng);
        std::vector<double> logits =
            grad ? forward_traced(net, theta, x, tr) : forward(net, theta, x);
        std::vector<double> sm = softmax(logits);
        double nrm2 = 0.0;
        for (double v : sm) nrm2 += (v - u) * (v - u);
        double nrm = std::sqrt(nrm2);
        total += nrm / static_cast<double>(m);
        if (grad && nrm > 1e-12) {
            double rs = 0.0;
            for (std::size_t i = 0; i < c; ++i) rs += (sm[i] - u) * sm[i];
            std::vector<double> dlogits(c);
            for (std::size_t j = 0; j < c; ++j)
                dlogits[j] = weight * sm[j] * ((sm[j] - u) - rs) / (nrm * double(m));
            backprop_sample(net, theta, tr, std::move(dlogits), *grad);
        }
    }
    return total;
}

}  // namespace detail

// De-bias penalty U(theta): zero iff every noise sample yields a uniform
// softmax; invariant to constant logit shifts.
inline double debias_penalty(const NetworkSpec& net, const ParamVector& theta,
                             const NoiseSpec& noise, std::size_t m, std::uint64_t seed) {
    if (m < 1) throw ConfigError("debias_penalty: m must be >= 1");
    Rng rng(mix_seed(seed, 0xDEB1A5));
    return detail::debias_term(net, theta, noise, m, rng, nullptr, 0.0);
}

enum class ImportanceMethod { Fisher, SynapticIntelligence };

struct ImportanceScores {
    std::vector<double> values;  // length p, nonnegative
    ImportanceMethod method = ImportanceMethod::Fisher;
};

// Diagonal empirical Fisher: mean squared per-sample gradient of the
// true-label log-likelihood.
inline ImportanceScores importance_fisher(const NetworkSpec& net, const ParamVector& theta,
                                          const LabeledBatch& data) {
    data.validate(net, net.output_width());
    check_params(net, theta);
    ImportanceScores scores;
    scores.method = ImportanceMethod::Fisher;
    scores.values.assign(theta.size(), 0.0);
    detail::ForwardTrace tr;
    const std::size_t c = net.output_width();
    for (std::size_t s = 0; s < data.size(); ++s) {
        std::vector<double> logits = detail::forward_traced(net, theta, data.input(s), tr);
        std::vector<double> sm = softmax(logits);
        int y = data.labels[s];
        std::vector<double> dlogits(c);
        for (std::size_t i = 0; i < c; ++i)
            dlogits[i] = sm[i] - (static_cast<int>(i) == y ? 1.0 : 0.0);
        Gradient g(theta.size(), 0.0);
        detail::backprop_sample(net, theta, tr, std::move(dlogits), g);
        for (std::size_t i = 0; i < g.size(); ++i)
            scores.values[i] += g[i] * g[i] / static_cast<double>(data.size());
    }
    return scores;
}

struct SiStep {
    Gradient grad;
    std::vector<double> delta;
};
using SiTrace = std::vector<SiStep>;

// Synaptic-intelligence path integral with damping xi.
inline ImportanceScores importance_si(const SiTrace& trace, double xi = 1e-3) {
    if (trace.empty()) throw ConfigError("importance_si: empty trace");
    const std::size_t p = trace.front().grad.size();
    std::vector<double> path(p, 0.0), total_delta(p, 0.0);
    for (const SiStep& st : trace) {
        if (st.grad.size() != p || st.delta.size() != p)
            throw ShapeError("importance_si: inconsistent trace widths");
        for (std::size_t i = 0; i < p; ++i) {
            path[i] += -st.grad[i] * st.delta[i];
            total_delta[i] += st.delta[i];
        }
    }
    ImportanceScores scores;
    scores.method = ImportanceMethod::SynapticIntelligence;
    scores.values.assign(p, 0.0);
    for (std::size_t i = 0; i < p; ++i)
        scores.values[i] = std::max(0.0, path[i]) / (total_delta[i] * total_delta[i] + xi);
    return scores;
}

struct TrainConfig {
    std::size_t epochs = 5;
    double lr = 0.001;
    std::size_t batch_size = 64;
    double l2 = 0.0;
    double debias = 0.0;
    std::optional<NoiseSpec> noise;
    std::uint64_t seed = 0;
};

namespace detail {

// Shared SGD loop. `project` (if set) is applied to theta after every step;
// `trace` (if set) records per-step (gradient, delta) pairs for SI scoring.
template <typename Project>
ParamVector sgd_loop(const NetworkSpec& net, ParamVector theta, const LabeledBatch& data,
                     const TrainConfig& cfg, Project&& project, SiTrace* trace) {
    data.validate(net, net.output_width());
    check_params(net, theta);
    if (cfg.epochs < 1) throw ConfigError("sgd_train: epochs must be >= 1");
    if (cfg.lr < 0.0) throw ConfigError("sgd_train: lr must be >= 0");
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5487));
    Rng noise_rng(mix_seed(cfg.seed, 0xA015E));
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t bs = std::max<std::size_t>(1, cfg.batch_size);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < data.size(); start += bs) {
            LabeledBatch mb;
            mb.input_width = data.input_width;
            for (std::size_t i = start; i < std::min(start + bs, data.size()); ++i)
                mb.push(data.input(order[i]), data.labels[order[i]]);
            auto [loss, grad] = loss_and_grad(net, theta, mb, LossKind::CrossEntropy);
            if (cfg.l2 > 0.0)
                for (std::size_t i = 0; i < theta.size(); ++i) grad[i] += 2.0 * cfg.l2 * theta[i];
            if (cfg.debias > 0.0 && cfg.noise)
                loss += cfg.debias * debias_term(net, theta, *cfg.noise, cfg.noise->samples,
                                                 noise_rng, &grad, cfg.debias);
            if (!std::isfinite(loss)) throw TrainingError("sgd_train: loss diverged");
            ParamVector prev = trace ? theta : ParamVector{};
            for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= cfg.lr * grad[i];
            project(theta);
            if (trace) {
                SiStep st;
                st.grad = std::move(grad);
                st.delta.resize(theta.size());
                for (std::size_t i = 0; i < theta.size(); ++i) st.delta[i] = theta[i] - prev[i];
                trace->push_back(std::move(st));
            }
        }
    }
    return theta;
}

}  // namespace detail

// Minibatch SGD on cross-entropy + l2*||theta||^2 + debias*U(theta).
inline ParamVector sgd_train(const NetworkSpec& net, ParamVector theta0, const LabeledBatch& data,
                             const TrainConfig& cfg, SiTrace* trace = nullptr) {
    return detail::sgd_loop(net, std::move(theta0), data, cfg, [](ParamVector&) {}, trace);
}

// Point accuracy with optional class mask (Task-IL evaluation restricts the
// argmax to the task's own classes).
inline double accuracy(const NetworkSpec& net, const ParamVector& theta, const LabeledBatch& data,
                       const std::vector<int>* class_mask = nullptr) {
    std::size_t correct = 0;
    for (std::size_t s = 0; s < data.size(); ++s) {
        std::vector<double> logits = forward(net, theta, data.input(s));
        std::size_t best = 0;
        bool first = true;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            if (class_mask && !(*class_mask)[i]) continue;
            if (first || logits[i] > logits[best]) {
                best = i;
                first = false;
            }
        }
        if (static_cast<int>(best) == data.labels[s]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace lidkit
