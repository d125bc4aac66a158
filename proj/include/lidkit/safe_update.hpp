#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "lidkit/error.hpp"
#include "lidkit/interval.hpp"
#include "lidkit/lid.hpp"
#include "lidkit/nn.hpp"

namespace lidkit {

struct UpdateProposal {
    std::vector<double> delta;  // length p
    std::string provenance = "external";
};

enum class SelectionStrategy { Closest, BestLoss, SampleLargestClosest };

// Elementwise clamp onto the box; the l2-optimal projection for boxes.
inline ParamVector clamp_project(const ParamVector& theta, const LidBox& box) {
    if (theta.size() != box.dim()) throw ShapeError("clamp_project: layout mismatch");
    ParamVector out(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i)
        out[i] = std::clamp(theta[i], box.lower[i], box.upper[i]);
    return out;
}

// Intersection result: Empty is a value, carrying the reason.
struct Intersection {
    std::optional<LidBox> box;
    std::string empty_reason;

    bool empty() const { return !box.has_value(); }
};

// Elementwise (max of lowers, min of uppers). The nominal of the result is the
// most recent input's nominal when it is contained, otherwise Empty.
inline Intersection intersect(const std::vector<LidBox>& boxes) {
    if (boxes.empty()) return {std::nullopt, "no boxes given"};
    LidBox out = boxes.front();
    for (std::size_t b = 1; b < boxes.size(); ++b) {
        if (boxes[b].dim() != out.dim()) throw ShapeError("intersect: layout mismatch");
        for (std::size_t i = 0; i < out.dim(); ++i) {
            out.lower[i] = std::max(out.lower[i], boxes[b].lower[i]);
            out.upper[i] = std::min(out.upper[i], boxes[b].upper[i]);
        }
    }
    for (std::size_t i = 0; i < out.dim(); ++i)
        if (out.lower[i] > out.upper[i])
            return {std::nullopt, "empty at coordinate " + std::to_string(i)};
    out.nominal = boxes.back().nominal;
    if (!out.contains(out.nominal))
        return {std::nullopt, "most recent nominal not contained in intersection"};
    return {out, ""};
}

namespace detail {

inline double displacement_sq(const ParamVector& theta, const LidBox& box) {
    double d = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double p = std::clamp(theta[i], box.lower[i], box.upper[i]);
        d += (theta[i] - p) * (theta[i] - p);
    }
    return d;
}

}  // namespace detail

// Pick the checkpointed LID to project onto. Ties break toward the latest
// iteration.
inline const Checkpoint& select_lid(const ParamVector& theta, const CheckpointSet& checkpoints,
                                    SelectionStrategy strategy,
                                    const LabeledBatch* batch = nullptr,
                                    const NetworkSpec* net = nullptr) {
    if (checkpoints.checkpoints.empty()) throw ConfigError("select_lid: empty checkpoint set");
    const auto& cps = checkpoints.checkpoints;
    std::vector<std::size_t> candidates(cps.size());
    for (std::size_t i = 0; i < cps.size(); ++i) candidates[i] = i;

    if (strategy == SelectionStrategy::SampleLargestClosest && cps.size() > 1) {
        // Restrict to the top half by size metric, then fall through to closest.
        std::vector<std::size_t> by_size = candidates;
        std::stable_sort(by_size.begin(), by_size.end(), [&](std::size_t a, std::size_t b) {
            return cps[a].size > cps[b].size;
        });
        by_size.resize((by_size.size() + 1) / 2);
        std::sort(by_size.begin(), by_size.end());
        candidates = by_size;
    }

    auto score = [&](std::size_t i) -> double {
        if (strategy == SelectionStrategy::BestLoss) {
            if (!batch || !net) throw ConfigError("select_lid: best_loss requires batch and net");
            ParamVector proj = clamp_project(theta, cps[i].box);
            return loss_and_grad(*net, proj, *batch, LossKind::CrossEntropy).first;
        }
        return detail::displacement_sq(theta, cps[i].box);
    };

    std::size_t best = candidates.front();
    double best_score = score(best);
    for (std::size_t k = 1; k < candidates.size(); ++k) {
        std::size_t i = candidates[k];
        double s = score(i);
        if (s < best_score || (s == best_score && cps[i].iteration >= cps[best].iteration)) {
            best = i;
            best_score = s;
        }
    }
    return cps[best];
}

// SGD with a clamp onto the box after every optimizer step.
inline ParamVector pgd_train(const NetworkSpec& net, ParamVector theta, const LabeledBatch& data,
                             const LidBox& box, const TrainConfig& cfg, SiTrace* trace = nullptr) {
    if (!box.contains(theta)) throw ConfigError("pgd_train: theta outside box");
    return detail::sgd_loop(
        net, std::move(theta), data, cfg,
        [&box](ParamVector& t) {
            for (std::size_t i = 0; i < t.size(); ++i)
                t[i] = std::clamp(t[i], box.lower[i], box.upper[i]);
        },
        trace);
}

// Turns an arbitrary proposed update into a provably safe one by projecting
// theta + u onto a certified box.
inline std::pair<ParamVector, LidBox> safe_mechanism(const ParamVector& theta,
                                                     const UpdateProposal& proposal,
                                                     const LidBox& box) {
    if (proposal.delta.size() != theta.size()) throw ShapeError("safe_mechanism: delta length");
    ParamVector proposed(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) proposed[i] = theta[i] + proposal.delta[i];
    return {clamp_project(proposed, box), box};
}

inline std::pair<ParamVector, LidBox> safe_mechanism(const ParamVector& theta,
                                                     const UpdateProposal& proposal,
                                                     const CheckpointSet& checkpoints,
                                                     SelectionStrategy strategy,
                                                     const LabeledBatch* batch = nullptr,
                                                     const NetworkSpec* net = nullptr) {
    if (proposal.delta.size() != theta.size()) throw ShapeError("safe_mechanism: delta length");
    ParamVector proposed(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) proposed[i] = theta[i] + proposal.delta[i];
    const Checkpoint& cp = select_lid(proposed, checkpoints, strategy, batch, net);
    return {clamp_project(proposed, cp.box), cp.box};
}

}  // namespace lidkit
