#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lidkit/error.hpp"
#include "lidkit/nn.hpp"
#include "lidkit/rng.hpp"

namespace lidkit {

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

// Elementwise lower/upper bounds over a rows x cols array.
struct IntervalTensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> lo;
    std::vector<double> hi;

    IntervalTensor() = default;
    IntervalTensor(std::size_t r, std::size_t c)
        : rows(r), cols(c), lo(r * c, 0.0), hi(r * c, 0.0) {}
    IntervalTensor(std::size_t r, std::size_t c, std::vector<double> lower,
                   std::vector<double> upper)
        : rows(r), cols(c), lo(std::move(lower)), hi(std::move(upper)) {}

    std::size_t size() const { return lo.size(); }

    static IntervalTensor point(std::size_t r, std::size_t c, std::span<const double> values) {
        IntervalTensor t(r, c);
        t.lo.assign(values.begin(), values.end());
        t.hi.assign(values.begin(), values.end());
        return t;
    }

    void validate() const {
        if (lo.size() != rows * cols || hi.size() != rows * cols)
            throw ShapeError("IntervalTensor: storage/shape mismatch");
        for (std::size_t i = 0; i < lo.size(); ++i) {
            if (!(lo[i] <= hi[i])) throw ShapeError("IntervalTensor: lo > hi at " + std::to_string(i));
            if (!std::isfinite(lo[i]) || !std::isfinite(hi[i]))
                throw ShapeError("IntervalTensor: non-finite bound at " + std::to_string(i));
        }
    }
};

inline IntervalTensor imat_add(const IntervalTensor& a, const IntervalTensor& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw ShapeError("imat_add: shape mismatch");
    IntervalTensor c(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) {
        c.lo[i] = a.lo[i] + b.lo[i];
        c.hi[i] = a.hi[i] + b.hi[i];
    }
    return c;
}

// Rump's midpoint-radius product: a sound enclosure of {A'B'} at roughly four
// concrete matrix multiplications.
inline IntervalTensor imat_mul(const IntervalTensor& a, const IntervalTensor& b) {
    if (a.cols != b.rows) throw ShapeError("imat_mul: inner dimension mismatch");
    IntervalTensor c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double mid = 0.0, rad = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                double amu = 0.5 * (a.lo[i * a.cols + k] + a.hi[i * a.cols + k]);
                double ar = 0.5 * (a.hi[i * a.cols + k] - a.lo[i * a.cols + k]);
                double bmu = 0.5 * (b.lo[k * b.cols + j] + b.hi[k * b.cols + j]);
                double br = 0.5 * (b.hi[k * b.cols + j] - b.lo[k * b.cols + j]);
                mid += amu * bmu;
                rad += std::abs(amu) * br + ar * std::abs(bmu) + ar * br;
            }
            c.lo[i * c.cols + j] = mid - rad;
            c.hi[i * c.cols + j] = mid + rad;
        }
    }
    return c;
}

// Monotone activations may be applied directly to both bounds.
inline IntervalTensor act_prop(const IntervalTensor& z, Activation act) {
    IntervalTensor out(z.rows, z.cols);
    for (std::size_t i = 0; i < z.size(); ++i) {
        out.lo[i] = apply_act(act, z.lo[i]);
        out.hi[i] = apply_act(act, z.hi[i]);
    }
    return out;
}

// Axis-aligned box in parameter space containing the nominal parameters.
struct LidBox {
    ParamVector lower;
    ParamVector upper;
    ParamVector nominal;

    static LidBox around(const ParamVector& theta, double radius) {
        LidBox b;
        b.nominal = theta;
        b.lower.resize(theta.size());
        b.upper.resize(theta.size());
        for (std::size_t i = 0; i < theta.size(); ++i) {
            b.lower[i] = theta[i] - radius;
            b.upper[i] = theta[i] + radius;
        }
        return b;
    }

    static LidBox degenerate(const ParamVector& theta) { return around(theta, 0.0); }

    std::size_t dim() const { return nominal.size(); }

    void validate() const {
        if (lower.size() != nominal.size() || upper.size() != nominal.size())
            throw ShapeError("LidBox: array length mismatch");
        for (std::size_t i = 0; i < nominal.size(); ++i) {
            if (!(lower[i] <= nominal[i] && nominal[i] <= upper[i]))
                throw ShapeError("LidBox: nominal outside bounds at " + std::to_string(i));
            if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]))
                throw ShapeError("LidBox: non-finite bound at " + std::to_string(i));
        }
    }

    bool contains(const ParamVector& theta) const {
        if (theta.size() != dim()) return false;
        for (std::size_t i = 0; i < dim(); ++i)
            if (theta[i] < lower[i] || theta[i] > upper[i]) return false;
        return true;
    }

    ParamVector sample(Rng& rng) const {
        ParamVector theta(dim());
        for (std::size_t i = 0; i < dim(); ++i) theta[i] = rng.uniform(lower[i], upper[i]);
        return theta;
    }
};

// IBP through the network: sound logit bounds for every theta' in the box.
inline IntervalTensor ibp_forward(const NetworkSpec& net, const LidBox& box,
                                  std::span<const double> x) {
    if (box.dim() != net.param_count()) throw ShapeError("ibp_forward: box layout mismatch");
    if (x.size() != net.input_width()) throw ShapeError("ibp_forward: input width mismatch");
    std::vector<double> zlo(x.begin(), x.end()), zhi(x.begin(), x.end());
    for (std::size_t k = 0; k < net.depth(); ++k) {
        const Layer& l = net.layers[k];
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
        if (k + 1 < net.depth()) {
            for (std::size_t i = 0; i < l.out; ++i) {
                outlo[i] = apply_act(l.act, outlo[i]);
                outhi[i] = apply_act(l.act, outhi[i]);
            }
        }
        zlo = std::move(outlo);
        zhi = std::move(outhi);
    }
    IntervalTensor out(zlo.size(), 1);
    out.lo = std::move(zlo);
    out.hi = std::move(zhi);
    return out;
}

// True-class coordinate at its lower bound, all others at their upper bound.
inline std::vector<double> worst_case_logits(const IntervalTensor& bounds, int y) {
    if (y < 0 || static_cast<std::size_t>(y) >= bounds.size())
        throw ShapeError("worst_case_logits: class index out of range");
    std::vector<double> w(bounds.size());
    for (std::size_t i = 0; i < bounds.size(); ++i)
        w[i] = (static_cast<int>(i) == y) ? bounds.lo[i] : bounds.hi[i];
    return w;
}

struct SpecKind {
    enum class Tag { AccuracyNeg, SoftAccuracyNeg, CrossEntropy, CrossEntropyClipped };
    Tag tag = Tag::AccuracyNeg;
    double clip_lo = 0.0;
    double clip_hi = 10.0;

    static SpecKind accuracy_neg() { return {Tag::AccuracyNeg}; }
    static SpecKind soft_accuracy_neg() { return {Tag::SoftAccuracyNeg}; }
    static SpecKind cross_entropy() { return {Tag::CrossEntropy}; }
    static SpecKind cross_entropy_clipped(double lo, double hi) {
        if (!(lo < hi)) throw ConfigError("SpecKind: clip requires L < U");
        return {Tag::CrossEntropyClipped, lo, hi};
    }
};

inline std::string to_string(const SpecKind& kind) {
    switch (kind.tag) {
        case SpecKind::Tag::AccuracyNeg: return "accuracy_neg";
        case SpecKind::Tag::SoftAccuracyNeg: return "soft_accuracy_neg";
        case SpecKind::Tag::CrossEntropy: return "cross_entropy";
        case SpecKind::Tag::CrossEntropyClipped: return "cross_entropy_clipped";
    }
    return "accuracy_neg";
}

namespace detail {

inline double spec_of_logits(const SpecKind& kind, std::span<const double> logits, int y) {
    switch (kind.tag) {
        case SpecKind::Tag::AccuracyNeg: {
            // ties count as incorrect
            for (std::size_t i = 0; i < logits.size(); ++i)
                if (static_cast<int>(i) != y && logits[i] >= logits[y]) return 0.0;
            return -1.0;
        }
        case SpecKind::Tag::SoftAccuracyNeg:
            return -softmax(logits)[y];
        case SpecKind::Tag::CrossEntropy:
            return -std::log(std::max(softmax(logits)[y], 1e-300));
        case SpecKind::Tag::CrossEntropyClipped: {
            double ce = -std::log(std::max(softmax(logits)[y], 1e-300));
            return std::clamp(ce, kind.clip_lo, kind.clip_hi);
        }
    }
    return 0.0;
}

}  // namespace detail

// Mean over the batch of the IBP upper bound on the spec; sound for every
// theta' in the box (specs oriented so lower is better).
inline double spec_bound(const SpecKind& kind, const NetworkSpec& net, const LidBox& box,
                         const LabeledBatch& batch) {
    batch.validate(net, net.output_width());
    double total = 0.0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        IntervalTensor bounds = ibp_forward(net, box, batch.input(s));
        std::vector<double> w = worst_case_logits(bounds, batch.labels[s]);
        total += detail::spec_of_logits(kind, w, batch.labels[s]);
    }
    return total / static_cast<double>(batch.size());
}

// Point evaluation of the same spec at a concrete parameter vector.
inline double spec_point(const SpecKind& kind, const NetworkSpec& net, const ParamVector& theta,
                         const LabeledBatch& batch) {
    batch.validate(net, net.output_width());
    double total = 0.0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        std::vector<double> logits = forward(net, theta, batch.input(s));
        total += detail::spec_of_logits(kind, logits, batch.labels[s]);
    }
    return total / static_cast<double>(batch.size());
}

}  // namespace lidkit
