#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "lidkit/cert.hpp"
#include "lidkit/error.hpp"
#include "lidkit/interval.hpp"
#include "lidkit/nn.hpp"
#include "lidkit/rng.hpp"

namespace lidkit {

// Mean interval width; frozen (zero-width) coordinates contribute nothing.
inline double size_metric(const LidBox& box) {
    double total = 0.0;
    for (std::size_t i = 0; i < box.dim(); ++i) total += box.upper[i] - box.lower[i];
    return total / static_cast<double>(box.dim());
}

struct BiasSpec {
    enum class Mode { None, Prune, Regularize };
    Mode mode = Mode::None;
    ImportanceScores importance;
    double proportion = 0.0;
    double reg_weight = 0.0;
    bool lookahead = false;

    // Coordinates pinned to the nominal value under prune mode. Without
    // lookahead the top `proportion` fraction by current-task importance is
    // frozen; with lookahead the bottom fraction by next-task importance is
    // frozen, leaving the coordinates that matter for the next task free.
    std::vector<char> frozen_mask(std::size_t p) const {
        std::vector<char> mask(p, 0);
        if (mode != Mode::Prune) return mask;
        if (importance.values.size() != p) throw ShapeError("BiasSpec: importance length mismatch");
        std::vector<std::size_t> idx(p);
        std::iota(idx.begin(), idx.end(), 0);
        const auto& v = importance.values;
        if (lookahead)
            std::stable_sort(idx.begin(), idx.end(),
                             [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        else
            std::stable_sort(idx.begin(), idx.end(),
                             [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
        std::size_t k = static_cast<std::size_t>(std::ceil(proportion * static_cast<double>(p)));
        k = std::min(k, p);
        for (std::size_t i = 0; i < k; ++i) mask[idx[i]] = 1;
        return mask;
    }
};

inline BiasSpec make_bias(ImportanceScores importance, BiasSpec::Mode mode, double proportion,
                          bool lookahead, double reg_weight = 0.0) {
    if (mode != BiasSpec::Mode::None && !(proportion > 0.0 && proportion < 1.0))
        throw ConfigError("make_bias: proportion must lie in (0,1)");
    BiasSpec b;
    b.mode = mode;
    b.importance = std::move(importance);
    b.proportion = proportion;
    b.reg_weight = reg_weight;
    b.lookahead = lookahead;
    return b;
}

struct LidConfig {
    double eta_p = 0.33;
    double eta_d = 0.01;
    std::size_t iterations = 200;
    std::size_t checkpoint_period = 20;
    std::size_t batch_size = 400;
    double r0 = 1e-3;
    BiasSpec bias;
    MarginMethod margin = MarginMethod::Hoeffding;
    double confidence_beta = 0.05;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(eta_p > 0.0 && eta_d > 0.0)) throw ConfigError("LidConfig: step sizes must be > 0");
        if (iterations < 1) throw ConfigError("LidConfig: iterations must be >= 1");
        if (checkpoint_period < 1) throw ConfigError("LidConfig: checkpoint period must be >= 1");
        if (batch_size < 1) throw ConfigError("LidConfig: batch size must be >= 1");
        if (!(r0 > 0.0)) throw ConfigError("LidConfig: r0 must be > 0");
        check_beta(confidence_beta);
    }
};

// One safety constraint: hold `spec` at or below `delta` on `data`.
struct ConstraintSet {
    LabeledBatch data;
    double delta = 0.0;
    SpecKind spec = SpecKind::accuracy_neg();
};

struct GdaState {
    LidBox box;
    std::vector<double> lambda;  // one multiplier per constraint
    std::size_t iteration = 0;
    std::vector<char> frozen;  // pinned coordinates (prune bias)
};

namespace detail {

inline double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// IBP pass that keeps per-layer intervals so the bound can be differentiated
// with respect to the box parameters.
struct IbpTrace {
    std::vector<std::vector<double>> in_lo, in_hi;    // input interval per layer
    std::vector<std::vector<double>> pre_lo, pre_hi;  // affine output bounds per layer
};

inline void ibp_forward_traced(const NetworkSpec& net, const LidBox& box,
                               std::span<const double> x, IbpTrace& tr) {
    tr.in_lo.assign(net.depth(), {});
    tr.in_hi.assign(net.depth(), {});
    tr.pre_lo.assign(net.depth(), {});
    tr.pre_hi.assign(net.depth(), {});
    std::vector<double> zlo(x.begin(), x.end()), zhi(x.begin(), x.end());
    for (std::size_t k = 0; k < net.depth(); ++k) {
        const Layer& l = net.layers[k];
        tr.in_lo[k] = zlo;
        tr.in_hi[k] = zhi;
        std::size_t w0 = net.weight_offset(k), b0 = net.bias_offset(k);
        std::vector<double> outlo(l.out), outhi(l.out);
        for (std::size_t i = 0; i < l.out; ++i) {
            double mid = 0.0, rad = 0.0;
            for (std::size_t j = 0; j < l.in; ++j) {
                std::size_t wi = w0 + i * l.in + j;
                double wmu = 0.5 * (box.lower[wi] + box.upper[wi]);
                double wr = 0.5 * (box.upper[wi] - box.lower[wi]);
                double zmu = 0.5 * (zlo[j] + zhi[j]);
                double zr = 0.5 * (zhi[j] - zlo[j]);
                mid += wmu * zmu;
                rad += std::abs(wmu) * zr + wr * std::abs(zmu) + wr * zr;
            }
            outlo[i] = mid - rad + box.lower[b0 + i];
            outhi[i] = mid + rad + box.upper[b0 + i];
        }
        tr.pre_lo[k] = outlo;
        tr.pre_hi[k] = outhi;
        if (k + 1 < net.depth()) {
            for (std::size_t i = 0; i < l.out; ++i) {
                outlo[i] = apply_act(l.act, outlo[i]);
                outhi[i] = apply_act(l.act, outhi[i]);
            }
        }
        zlo = std::move(outlo);
        zhi = std::move(outhi);
    }
}

// Accumulates d(out)/d(box lower, upper) given gradients on the final affine
// bounds. The Rump product is piecewise differentiable in the box parameters.
inline void ibp_backprop(const NetworkSpec& net, const LidBox& box, const IbpTrace& tr,
                         std::vector<double> g_lo, std::vector<double> g_hi,
                         std::vector<double>& grad_lower, std::vector<double>& grad_upper) {
    for (std::size_t kk = net.depth(); kk-- > 0;) {
        const Layer& l = net.layers[kk];
        std::size_t w0 = net.weight_offset(kk), b0 = net.bias_offset(kk);
        const std::vector<double>& zlo = tr.in_lo[kk];
        const std::vector<double>& zhi = tr.in_hi[kk];
        std::vector<double> dzmu(l.in, 0.0), dzr(l.in, 0.0);
        for (std::size_t i = 0; i < l.out; ++i) {
            double gl = g_lo[i], gu = g_hi[i];
            grad_lower[b0 + i] += gl;
            grad_upper[b0 + i] += gu;
            if (gl == 0.0 && gu == 0.0) continue;
            for (std::size_t j = 0; j < l.in; ++j) {
                std::size_t wi = w0 + i * l.in + j;
                double wmu = 0.5 * (box.lower[wi] + box.upper[wi]);
                double wr = 0.5 * (box.upper[wi] - box.lower[wi]);
                double zmu = 0.5 * (zlo[j] + zhi[j]);
                double zr = 0.5 * (zhi[j] - zlo[j]);
                double sw = sgn(wmu), sz = sgn(zmu);
                double dwmu = gl * (zmu - sw * zr) + gu * (zmu + sw * zr);
                double dwr = (gu - gl) * (std::abs(zmu) + zr);
                grad_lower[wi] += 0.5 * (dwmu - dwr);
                grad_upper[wi] += 0.5 * (dwmu + dwr);
                dzmu[j] += gl * (wmu - wr * sz) + gu * (wmu + wr * sz);
                dzr[j] += (gu - gl) * (std::abs(wmu) + wr);
            }
        }
        if (kk == 0) break;
        const Layer& prev = net.layers[kk - 1];
        std::vector<double> nlo(l.in), nhi(l.in);
        for (std::size_t j = 0; j < l.in; ++j) {
            double glo = 0.5 * (dzmu[j] - dzr[j]);
            double ghi = 0.5 * (dzmu[j] + dzr[j]);
            nlo[j] = glo * act_deriv(prev.act, tr.pre_lo[kk - 1][j]);
            nhi[j] = ghi * act_deriv(prev.act, tr.pre_hi[kk - 1][j]);
        }
        g_lo = std::move(nlo);
        g_hi = std::move(nhi);
    }
}

struct SoftBoundGrad {
    double value = 0.0;  // mean IBP bound on -softmax_y over the batch
    std::vector<double> grad_lower, grad_upper;
};

// Bound on the differentiable surrogate (negated soft accuracy) and its
// gradient with respect to the box.
inline SoftBoundGrad soft_spec_bound_grad(const NetworkSpec& net, const LidBox& box,
                                          const LabeledBatch& batch) {
    SoftBoundGrad out;
    out.grad_lower.assign(box.dim(), 0.0);
    out.grad_upper.assign(box.dim(), 0.0);
    const std::size_t n = batch.size();
    const std::size_t c = net.output_width();
    IbpTrace tr;
    for (std::size_t s = 0; s < n; ++s) {
        ibp_forward_traced(net, box, batch.input(s), tr);
        int y = batch.labels[s];
        const std::vector<double>& plo = tr.pre_lo.back();
        const std::vector<double>& phi_ = tr.pre_hi.back();
        std::vector<double> w(c);
        for (std::size_t i = 0; i < c; ++i) w[i] = (static_cast<int>(i) == y) ? plo[i] : phi_[i];
        std::vector<double> sm = softmax(w);
        out.value += -sm[y] / static_cast<double>(n);
        // d(-s_y)/dw_i = s_y (s_i - [i == y])
        std::vector<double> g_lo(c, 0.0), g_hi(c, 0.0);
        for (std::size_t i = 0; i < c; ++i) {
            double d = sm[y] * (sm[i] - (static_cast<int>(i) == y ? 1.0 : 0.0)) /
                       static_cast<double>(n);
            if (static_cast<int>(i) == y)
                g_lo[i] = d;
            else
                g_hi[i] = d;
        }
        ibp_backprop(net, box, tr, std::move(g_lo), std::move(g_hi), out.grad_lower,
                     out.grad_upper);
    }
    return out;
}

}  // namespace detail

struct LagrangianEval {
    double value = 0.0;
    std::vector<double> grad_lower, grad_upper;  // d/d alpha^L, d/d alpha^U
    std::vector<double> grad_lambda;             // delta_c - phi_bar_c
    std::vector<double> phi;                     // surrogate bound per constraint
};

// L(alpha, lambda) = |T(alpha)|_S + R(T) + sum_c lambda_c (delta_c - phi_bar_c),
// with phi the soft-accuracy surrogate bound over the given batches.
inline LagrangianEval lagrangian(const NetworkSpec& net, const GdaState& state,
                                 const std::vector<LabeledBatch>& batches,
                                 const std::vector<double>& deltas, const BiasSpec& bias) {
    if (batches.size() != deltas.size() || batches.size() != state.lambda.size())
        throw ShapeError("lagrangian: constraint count mismatch");
    const std::size_t p = state.box.dim();
    LagrangianEval ev;
    ev.grad_lower.assign(p, 0.0);
    ev.grad_upper.assign(p, 0.0);
    ev.value = size_metric(state.box);
    for (std::size_t i = 0; i < p; ++i) {
        ev.grad_lower[i] = -1.0 / static_cast<double>(p);
        ev.grad_upper[i] = 1.0 / static_cast<double>(p);
    }
    if (bias.mode == BiasSpec::Mode::Regularize) {
        if (bias.importance.values.size() != p)
            throw ShapeError("lagrangian: importance length mismatch");
        for (std::size_t i = 0; i < p; ++i) {
            double w = bias.reg_weight * bias.importance.values[i];
            ev.value += -w * (state.box.upper[i] - state.box.lower[i]);
            ev.grad_lower[i] += w;
            ev.grad_upper[i] += -w;
        }
    }
    for (std::size_t c = 0; c < batches.size(); ++c) {
        detail::SoftBoundGrad sg = detail::soft_spec_bound_grad(net, state.box, batches[c]);
        ev.phi.push_back(sg.value);
        ev.grad_lambda.push_back(deltas[c] - sg.value);
        ev.value += state.lambda[c] * (deltas[c] - sg.value);
        for (std::size_t i = 0; i < p; ++i) {
            ev.grad_lower[i] -= state.lambda[c] * sg.grad_lower[i];
            ev.grad_upper[i] -= state.lambda[c] * sg.grad_upper[i];
        }
    }
    if (!std::isfinite(ev.value)) throw NumericError("lagrangian: non-finite value");
    return ev;
}

// One alternating GDA step: the multiplier grows under constraint violation,
// then alpha ascends the Lagrangian evaluated at the updated multiplier, and
// finally the box is projected back onto {alpha^L <= theta <= alpha^U} with
// frozen coordinates pinned at theta.
inline GdaState gda_step(const NetworkSpec& net, GdaState state,
                         const std::vector<LabeledBatch>& batches,
                         const std::vector<double>& deltas, const LidConfig& config) {
    if (batches.size() != deltas.size() || batches.size() != state.lambda.size())
        throw ShapeError("gda_step: constraint count mismatch");
    const std::size_t p = state.box.dim();
    // The constraint gradient does not depend on lambda, so one IBP pass per
    // constraint serves both the dual update and the primal step at lambda_{t+1}.
    std::vector<detail::SoftBoundGrad> bounds;
    bounds.reserve(batches.size());
    for (const LabeledBatch& b : batches) {
        bounds.push_back(detail::soft_spec_bound_grad(net, state.box, b));
        if (!std::isfinite(bounds.back().value)) throw NumericError("gda_step: non-finite bound");
    }
    for (std::size_t c = 0; c < state.lambda.size(); ++c)
        state.lambda[c] =
            std::max(0.0, state.lambda[c] + config.eta_d * (bounds[c].value - deltas[c]));
    GdaState after = state;
    for (std::size_t i = 0; i < p; ++i) {
        if (!state.frozen.empty() && state.frozen[i]) continue;
        double glo = -1.0 / static_cast<double>(p);
        double ghi = 1.0 / static_cast<double>(p);
        if (config.bias.mode == BiasSpec::Mode::Regularize) {
            double w = config.bias.reg_weight * config.bias.importance.values[i];
            glo += w;
            ghi -= w;
        }
        for (std::size_t c = 0; c < bounds.size(); ++c) {
            glo -= state.lambda[c] * bounds[c].grad_lower[i];
            ghi -= state.lambda[c] * bounds[c].grad_upper[i];
        }
        after.box.lower[i] += config.eta_p * glo;
        after.box.upper[i] += config.eta_p * ghi;
    }
    for (std::size_t i = 0; i < p; ++i) {
        double t = after.box.nominal[i];
        if (!state.frozen.empty() && state.frozen[i]) {
            after.box.lower[i] = t;
            after.box.upper[i] = t;
        } else {
            after.box.lower[i] = std::min(after.box.lower[i], t);
            after.box.upper[i] = std::max(after.box.upper[i], t);
        }
    }
    after.iteration = state.iteration + 1;
    return after;
}

struct Checkpoint {
    LidBox box;
    std::size_t iteration = 0;
    double size = 0.0;
    std::vector<Certificate> certificates;  // one per constraint
};

struct CheckpointSet {
    std::vector<Checkpoint> checkpoints;
    std::vector<std::uint64_t> optimization_batch_fps;
    std::vector<std::vector<double>> lambda_trace;  // per iteration, per constraint
    std::vector<double> size_trace;
};

namespace detail {

inline LabeledBatch sample_batch(const LabeledBatch& data, std::size_t n, Rng& rng) {
    if (n >= data.size()) return data;
    LabeledBatch out;
    out.input_width = data.input_width;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = static_cast<std::size_t>(rng.below(data.size()));
        out.push(data.input(j), data.labels[j]);
    }
    return out;
}

}  // namespace detail

// Primal-dual LID computation with periodic checkpointing; every returned box
// carries a finite-sample certificate for each constraint on its full data.
inline CheckpointSet compute_lid(const NetworkSpec& net, const ParamVector& theta,
                                 const std::vector<ConstraintSet>& constraints,
                                 const LidConfig& config) {
    config.validate();
    check_params(net, theta);
    if (constraints.empty()) throw ConfigError("compute_lid: no constraints");
    for (std::size_t c = 0; c < constraints.size(); ++c) {
        double v = spec_point(constraints[c].spec, net, theta, constraints[c].data);
        if (v > constraints[c].delta) throw InfeasibleNominal(c, v, constraints[c].delta);
    }
    GdaState state;
    state.box = LidBox::around(theta, config.r0);
    state.lambda.assign(constraints.size(), 0.0);
    state.frozen = config.bias.frozen_mask(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        if (state.frozen[i]) {
            state.box.lower[i] = theta[i];
            state.box.upper[i] = theta[i];
        }
    }
    std::vector<double> deltas;
    for (const ConstraintSet& c : constraints) deltas.push_back(c.delta);

    CheckpointSet result;
    std::vector<Rng> batch_rngs;
    for (std::size_t c = 0; c < constraints.size(); ++c)
        batch_rngs.emplace_back(mix_seed(config.seed, 0xBA7C00 + c));

    std::vector<std::pair<LidBox, std::size_t>> saved;
    for (std::size_t it = 0; it < config.iterations; ++it) {
        std::vector<LabeledBatch> batches;
        for (std::size_t c = 0; c < constraints.size(); ++c) {
            LabeledBatch b =
                detail::sample_batch(constraints[c].data, config.batch_size, batch_rngs[c]);
            result.optimization_batch_fps.push_back(fingerprint(b));
            batches.push_back(std::move(b));
        }
        state = gda_step(net, state, batches, deltas, config);
        result.lambda_trace.push_back(state.lambda);
        result.size_trace.push_back(size_metric(state.box));
        if ((it + 1) % config.checkpoint_period == 0) saved.emplace_back(state.box, it + 1);
    }
    if (saved.empty() || saved.back().second != config.iterations)
        saved.emplace_back(state.box, config.iterations);

    for (auto& [box, iter] : saved) {
        Checkpoint cp;
        cp.box = box;
        cp.iteration = iter;
        cp.size = size_metric(box);
        bool all_certified = true;
        for (const ConstraintSet& c : constraints) {
            double raw = spec_bound(c.spec, net, box, c.data);
            Fingerprints fp;
            fp.evaluation_set = fingerprint(c.data);
            fp.box = fingerprint(box);
            fp.optimization_batches = result.optimization_batch_fps;
            // The optimizer holds the raw bound at or below delta; the
            // certificate then guarantees delta plus the finite-sample margin
            // with confidence 1 - beta. Certifying against the margin-shifted
            // threshold keeps acceptance equivalent to raw <= delta.
            double shifted =
                c.delta + margin_for(config.margin, c.data.size(), config.confidence_beta);
            CertifyResult r = issue_certificate(to_string(c.spec), raw, config.margin, shifted,
                                                c.data.size(), config.confidence_beta, fp);
            if (!issued(r)) {
                all_certified = false;
                break;
            }
            cp.certificates.push_back(std::get<Certificate>(r));
        }
        if (all_certified) result.checkpoints.push_back(std::move(cp));
    }

    if (result.checkpoints.empty()) {
        // Degenerate fallback: the zero-width box at theta, valid whenever the
        // nominal is feasible. Issued without a probabilistic margin.
        Checkpoint cp;
        cp.box = LidBox::degenerate(theta);
        cp.iteration = config.iterations;
        cp.size = 0.0;
        for (const ConstraintSet& c : constraints) {
            double raw = spec_point(c.spec, net, theta, c.data);
            Fingerprints fp;
            fp.evaluation_set = fingerprint(c.data);
            fp.box = fingerprint(cp.box);
            CertifyResult r = issue_certificate(to_string(c.spec), raw, MarginMethod::None, c.delta,
                                                c.data.size(), config.confidence_beta, fp);
            cp.certificates.push_back(std::get<Certificate>(r));
        }
        result.checkpoints.push_back(std::move(cp));
    }
    return result;
}

}  // namespace lidkit
