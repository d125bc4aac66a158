#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "lidkit/cert.hpp"
#include "lidkit/error.hpp"
#include "lidkit/interval.hpp"
#include "lidkit/lid.hpp"
#include "lidkit/nn.hpp"
#include "lidkit/rng.hpp"
#include "lidkit/safe_update.hpp"

namespace lidkit {

enum class Protocol { ClassIl, DomainIl, TaskIl };

inline std::string to_string(Protocol p) {
    switch (p) {
        case Protocol::ClassIl: return "class_il";
        case Protocol::DomainIl: return "domain_il";
        case Protocol::TaskIl: return "task_il";
    }
    return "class_il";
}

struct Task {
    LabeledBatch train;
    LabeledBatch cert;  // disjoint from train; feeds LID constraints and certificates
    LabeledBatch test;
    std::vector<int> classes;  // label values this task uses
};

struct TaskStream {
    std::vector<Task> tasks;
    Protocol protocol = Protocol::ClassIl;
    std::size_t num_classes = 0;  // network output width
    std::uint64_t seed = 0;

    // Task-IL restricts the argmax to the task's own classes at test time.
    std::vector<int> class_mask(std::size_t task) const {
        std::vector<int> mask(num_classes, protocol == Protocol::TaskIl ? 0 : 1);
        if (protocol == Protocol::TaskIl)
            for (int c : tasks[task].classes) mask[c] = 1;
        return mask;
    }
};

namespace detail {

// Split shuffled samples of one class into train/cert/test at 2:1:1.
inline void split_points(const std::vector<std::vector<double>>& pts, int label, Task& task,
                         std::size_t input_width) {
    std::size_t n = pts.size();
    std::size_t n_train = n / 2, n_cert = (n - n_train) / 2;
    task.train.input_width = task.cert.input_width = task.test.input_width = input_width;
    for (std::size_t i = 0; i < n; ++i) {
        LabeledBatch& dst =
            i < n_train ? task.train : (i < n_train + n_cert ? task.cert : task.test);
        dst.push(pts[i], label);
    }
}

}  // namespace detail

// Gaussian clusters in 2-D, classes placed on a circle with a seeded rotation;
// each task owns a consecutive pair (or tuple) of classes.
inline TaskStream make_blobs(std::uint64_t seed, std::size_t task_count,
                             std::size_t classes_per_task, std::size_t points_per_class,
                             double spread = 0.35) {
    if (task_count < 2) throw ConfigError("make_blobs: need at least 2 tasks");
    if (classes_per_task < 2 || points_per_class < 4)
        throw ConfigError("make_blobs: degenerate configuration");
    TaskStream ts;
    ts.protocol = Protocol::ClassIl;
    ts.seed = seed;
    ts.num_classes = task_count * classes_per_task;
    Rng rng(mix_seed(seed, 0xB70B5));
    const double rotation = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double radius = 3.0;
    for (std::size_t t = 0; t < task_count; ++t) {
        Task task;
        for (std::size_t c = 0; c < classes_per_task; ++c) {
            int label = static_cast<int>(t * classes_per_task + c);
            double ang = rotation + 2.0 * 3.14159265358979323846 * label /
                                        static_cast<double>(ts.num_classes);
            double mx = radius * std::cos(ang), my = radius * std::sin(ang);
            std::vector<std::vector<double>> pts;
            for (std::size_t i = 0; i < points_per_class; ++i)
                pts.push_back({mx + spread * rng.normal(), my + spread * rng.normal()});
            detail::split_points(pts, label, task, 2);
            task.classes.push_back(label);
        }
        ts.tasks.push_back(std::move(task));
    }
    return ts;
}

// Splits a labeled dataset into tasks of (odd, even) class pairs under the
// three incremental-learning protocols.
inline TaskStream split_dataset(const LabeledBatch& data, Protocol protocol, std::uint64_t seed) {
    int max_label = 0;
    for (int y : data.labels) max_label = std::max(max_label, y);
    const std::size_t num_classes = static_cast<std::size_t>(max_label) + 1;
    if (num_classes < 4 || num_classes % 2 != 0)
        throw ConfigError("split_dataset: need an even number (>= 4) of classes");
    const std::size_t task_count = num_classes / 2;

    Rng rng(mix_seed(seed, 0x5D117));
    std::vector<int> odds, evens;
    for (std::size_t c = 0; c < num_classes; ++c)
        (c % 2 == 1 ? odds : evens).push_back(static_cast<int>(c));
    rng.shuffle(odds);
    rng.shuffle(evens);

    // Per-class sample indices, shuffled for the split.
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
    for (auto& v : by_class) rng.shuffle(v);

    TaskStream ts;
    ts.protocol = protocol;
    ts.seed = seed;
    ts.num_classes = protocol == Protocol::DomainIl ? 2 : num_classes;
    for (std::size_t t = 0; t < task_count; ++t) {
        Task task;
        int pair[2] = {evens[t], odds[t]};
        for (int cls : pair) {
            int label;
            switch (protocol) {
                case Protocol::DomainIl: label = cls % 2; break;  // odd vs even
                default: label = cls; break;  // global label space
            }
            std::vector<std::vector<double>> pts;
            for (std::size_t idx : by_class[cls]) {
                auto x = data.input(idx);
                pts.emplace_back(x.begin(), x.end());
            }
            detail::split_points(pts, label, task, data.input_width);
            task.classes.push_back(label);
        }
        ts.tasks.push_back(std::move(task));
    }
    return ts;
}

struct ReplayBuffer {
    std::vector<LabeledBatch> per_task;
    std::size_t capacity = 200;

    void append_task(const LabeledBatch& train, std::size_t b, Rng& rng) {
        LabeledBatch stored;
        stored.input_width = train.input_width;
        for (std::size_t i = 0; i < std::min(b, capacity); ++i) {
            std::size_t j = static_cast<std::size_t>(rng.below(train.size()));
            stored.push(train.input(j), train.labels[j]);
        }
        per_task.push_back(std::move(stored));
    }

    LabeledBatch draw(std::size_t task, std::size_t k, Rng& rng) const {
        LabeledBatch out;
        const LabeledBatch& src = per_task[task];
        out.input_width = src.input_width;
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t j = static_cast<std::size_t>(rng.below(src.size()));
            out.push(src.input(j), src.labels[j]);
        }
        return out;
    }
};

struct StepMetrics {
    std::size_t task_index = 0;
    std::vector<double> test_accuracy;       // tasks 0..task_index
    std::vector<double> certified_accuracy;  // post-margin bound per task; NaN if uncertified
    std::vector<double> raw_certified_accuracy;
    double lid_size = 0.0;
    std::size_t buffer_calls = 0;
    double wall_seconds = 0.0;  // excluded from reproducibility comparisons
};

struct RunRecord {
    std::uint64_t seed = 0;
    Protocol protocol = Protocol::ClassIl;
    std::size_t completed_tasks = 0;
    std::string stopped_reason;
    std::vector<StepMetrics> steps;
    std::vector<ParamVector> params_after_task;
    std::vector<std::vector<Certificate>> certificates;  // per task
    std::vector<std::vector<std::vector<double>>> lambda_traces;
    std::optional<LidBox> final_box;  // intersected active box
    std::vector<LidBox> selected_boxes;  // per task, the certified box chosen for it
};

// Equality up to wall-clock (which is not reproducible by nature).
inline bool trajectory_equal(const RunRecord& a, const RunRecord& b) {
    if (a.seed != b.seed || a.completed_tasks != b.completed_tasks) return false;
    if (a.params_after_task != b.params_after_task) return false;
    if (a.steps.size() != b.steps.size()) return false;
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        if (a.steps[i].test_accuracy != b.steps[i].test_accuracy) return false;
        if (a.steps[i].certified_accuracy.size() != b.steps[i].certified_accuracy.size())
            return false;
    }
    return true;
}

enum class Algorithm { ZeroBuffer, Buffer };

struct HarnessConfig {
    NetworkSpec net;
    TrainConfig train;
    LidConfig lid;
    double required_accuracy = 0.8;  // delta = -required_accuracy
    SelectionStrategy strategy = SelectionStrategy::SampleLargestClosest;
    // buffer extension
    double target_acc = 0.65;
    std::size_t max_calls = 0;
    std::size_t buffer_capacity = 200;
    std::size_t buffer_draw = 200;  // k samples per prior task
    // biasing
    BiasSpec::Mode bias_mode = BiasSpec::Mode::None;
    ImportanceMethod bias_method = ImportanceMethod::SynapticIntelligence;
    double bias_proportion = 0.05;
    double bias_reg_weight = 0.0;
    bool lookahead = false;
    std::size_t lookahead_samples = 64;
    std::uint64_t seed = 0;
};

// Builds a lookahead prune bias from a small sample of the next task.
inline BiasSpec lookahead_bias(const LabeledBatch& next_sample, const NetworkSpec& net,
                               const ParamVector& theta, double proportion,
                               ImportanceMethod method, const TrainConfig& train_cfg,
                               std::uint64_t seed) {
    if (next_sample.size() == 0) throw ConfigError("lookahead_bias: empty sample");
    ImportanceScores scores;
    if (method == ImportanceMethod::Fisher) {
        scores = importance_fisher(net, theta, next_sample);
    } else {
        TrainConfig probe = train_cfg;
        probe.epochs = 1;
        probe.seed = mix_seed(seed, 0x9E0BE);
        SiTrace trace;
        sgd_train(net, theta, next_sample, probe, &trace);
        scores = importance_si(trace);
    }
    return make_bias(std::move(scores), BiasSpec::Mode::Prune, proportion, true);
}

namespace detail {

inline std::uint64_t train_seed(std::uint64_t seed, std::size_t task) {
    return mix_seed(seed, 0x7A4000 + task);
}

inline double masked_accuracy(const NetworkSpec& net, const ParamVector& theta,
                              const TaskStream& ts, std::size_t task, const LabeledBatch& data) {
    std::vector<int> mask = ts.class_mask(task);
    return accuracy(net, theta, data, &mask);
}

inline BiasSpec current_bias(const HarnessConfig& cfg, const TaskStream& ts, std::size_t task,
                             const NetworkSpec& net, const ParamVector& theta,
                             const SiTrace& task_trace) {
    if (cfg.bias_mode == BiasSpec::Mode::None) return {};
    if (cfg.lookahead) {
        if (task + 1 >= ts.tasks.size()) return {};
        Rng rng(mix_seed(cfg.seed, 0x10CA00 + task));
        const LabeledBatch& next_train = ts.tasks[task + 1].train;
        LabeledBatch sample;
        sample.input_width = next_train.input_width;
        for (std::size_t i = 0; i < std::min(cfg.lookahead_samples, next_train.size()); ++i) {
            std::size_t j = static_cast<std::size_t>(rng.below(next_train.size()));
            sample.push(next_train.input(j), next_train.labels[j]);
        }
        return lookahead_bias(sample, net, theta, cfg.bias_proportion, cfg.bias_method, cfg.train,
                              mix_seed(cfg.seed, 0x10CB00 + task));
    }
    // Current-task importance: freeze what matters for the task just learned.
    ImportanceScores scores = cfg.bias_method == ImportanceMethod::Fisher
                                  ? importance_fisher(net, theta, ts.tasks[task].train)
                                  : importance_si(task_trace);
    BiasSpec b = make_bias(std::move(scores), cfg.bias_mode, cfg.bias_proportion, false,
                           cfg.bias_reg_weight);
    return b;
}

// Shared implementation of Algorithms 1 and 2; `algorithm` only controls the
// replay-buffer machinery, so Buffer with max_calls == 0 matches ZeroBuffer
// bit for bit.
inline RunRecord run_certified(const TaskStream& ts, const HarnessConfig& cfg,
                               Algorithm algorithm) {
    cfg.net.validate();
    cfg.lid.validate();
    const double delta = -cfg.required_accuracy;
    RunRecord rec;
    rec.seed = cfg.seed;
    rec.protocol = ts.protocol;

    ParamVector theta = init_params(cfg.net, mix_seed(cfg.seed, 0xF17));
    std::optional<LidBox> active;
    ReplayBuffer buffer;
    buffer.capacity = cfg.buffer_capacity;
    Rng buffer_rng(mix_seed(cfg.seed, 0xB0FF00));

    for (std::size_t j = 0; j < ts.tasks.size(); ++j) {
        auto t0 = std::chrono::steady_clock::now();
        const Task& task = ts.tasks[j];
        TrainConfig tc = cfg.train;
        tc.seed = train_seed(cfg.seed, j);
        if (tc.noise) *tc.noise = NoiseSpec::from_data(task.train, tc.noise->samples);
        SiTrace trace;
        SiTrace* trace_ptr = (cfg.bias_mode != BiasSpec::Mode::None && !cfg.lookahead &&
                              cfg.bias_method == ImportanceMethod::SynapticIntelligence)
                                 ? &trace
                                 : nullptr;
        StepMetrics step;
        step.task_index = j;
        try {
            if (j == 0)
                theta = sgd_train(cfg.net, theta, task.train, tc, trace_ptr);
            else
                theta = pgd_train(cfg.net, theta, task.train, *active, tc, trace_ptr);

            // Buffer extension (Algorithm 2): keep training inside a joint LID
            // over buffered prior tasks until the current task reaches target.
            if (algorithm == Algorithm::Buffer && j > 0) {
                double curr_acc = masked_accuracy(cfg.net, theta, ts, j, task.train);
                std::size_t calls = 0;
                while (calls < cfg.max_calls && curr_acc < cfg.target_acc &&
                       !buffer.per_task.empty()) {
                    std::vector<ConstraintSet> joint;
                    for (std::size_t i = 0; i < buffer.per_task.size(); ++i) {
                        ConstraintSet cs;
                        cs.data = buffer.draw(i, cfg.buffer_draw, buffer_rng);
                        // Joint recomputation happens mid-task; hold each
                        // buffered task at the stricter of the required level
                        // and what the current parameters actually achieve.
                        cs.delta =
                            std::max(delta, spec_point(cs.spec, cfg.net, theta, cs.data));
                        joint.push_back(std::move(cs));
                    }
                    LidConfig jl = cfg.lid;
                    jl.seed = mix_seed(cfg.seed, 0x90B0000 + j * 64 + calls);
                    jl.batch_size = std::min(jl.batch_size, cfg.buffer_draw / 2);
                    CheckpointSet joint_cps = compute_lid(cfg.net, theta, joint, jl);
                    const Checkpoint& sel =
                        select_lid(theta, joint_cps, cfg.strategy, &task.train, &cfg.net);
                    TrainConfig rc = tc;
                    rc.seed = mix_seed(cfg.seed, 0x7B00000 + j * 64 + calls);
                    theta = pgd_train(cfg.net, theta, task.train, sel.box, rc, trace_ptr);
                    active = sel.box;  // joint LID subsumes the prior intersection
                    curr_acc = masked_accuracy(cfg.net, theta, ts, j, task.train);
                    ++calls;
                }
                step.buffer_calls = calls;
            }

            LidConfig lc = cfg.lid;
            lc.seed = mix_seed(cfg.seed, 0x11D000 + j);
            // Keep per-step constraint batches strict subsets so certificates
            // stay on held-out material.
            lc.batch_size = std::min(lc.batch_size, std::max<std::size_t>(1, task.cert.size() / 2));
            lc.bias = current_bias(cfg, ts, j, cfg.net, theta, trace);
            std::vector<ConstraintSet> constraints(1);
            constraints[0].data = task.cert;
            constraints[0].delta = delta;
            if (j > 0) {
                // Constrained training may not reach the required accuracy on
                // a later task; certify that task at its achieved level so the
                // run can continue. The first task keeps the strict threshold
                // that the whole safety chain protects.
                double achieved =
                    spec_point(constraints[0].spec, cfg.net, theta, task.cert);
                constraints[0].delta = std::max(delta, achieved);
            }
            CheckpointSet cps = compute_lid(cfg.net, theta, constraints, lc);
            rec.lambda_traces.push_back(cps.lambda_trace);

            // Select the box that will constrain the next task; a one-epoch
            // unconstrained probe on the next task stands in for the proposed
            // update that the selection strategies compare against.
            ParamVector probe = theta;
            const LabeledBatch* sel_batch = &task.train;
            if (j + 1 < ts.tasks.size()) {
                TrainConfig pc = cfg.train;
                pc.epochs = 1;
                pc.seed = mix_seed(cfg.seed, 0x9B0BE00 + j);
                probe = sgd_train(cfg.net, theta, ts.tasks[j + 1].train, pc);
                sel_batch = &ts.tasks[j + 1].train;
            }
            const Checkpoint& selected = select_lid(probe, cps, cfg.strategy, sel_batch, &cfg.net);
            rec.selected_boxes.push_back(selected.box);
            rec.certificates.push_back(selected.certificates);
            step.lid_size = selected.size;

            if (!active) {
                active = selected.box;
            } else {
                Intersection inter = intersect({*active, selected.box});
                if (inter.empty()) {
                    rec.stopped_reason = "empty intersection at task " + std::to_string(j);
                    rec.completed_tasks = j;
                    rec.final_box = active;
                    return rec;
                }
                active = *inter.box;
            }
        } catch (const InfeasibleNominal& e) {
            throw InfeasibleNominal(j, e.value, e.delta);
        }

        if (algorithm == Algorithm::Buffer) buffer.append_task(task.train, cfg.buffer_capacity, buffer_rng);

        for (std::size_t i = 0; i <= j; ++i)
            step.test_accuracy.push_back(masked_accuracy(cfg.net, theta, ts, i, ts.tasks[i].test));
        for (std::size_t i = 0; i <= j; ++i) {
            if (i < rec.certificates.size() && !rec.certificates[i].empty()) {
                step.certified_accuracy.push_back(-rec.certificates[i][0].certified_bound);
                step.raw_certified_accuracy.push_back(-rec.certificates[i][0].raw_bound);
            } else {
                step.certified_accuracy.push_back(std::nan(""));
                step.raw_certified_accuracy.push_back(std::nan(""));
            }
        }
        step.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rec.steps.push_back(std::move(step));
        rec.params_after_task.push_back(theta);
        rec.completed_tasks = j + 1;
    }
    rec.final_box = active;
    return rec;
}

}  // namespace detail

// Algorithm 1: train, compute LID, then PGD inside the running intersection.
inline RunRecord run_zero_buffer(const TaskStream& ts, HarnessConfig cfg) {
    cfg.max_calls = 0;
    return detail::run_certified(ts, cfg, Algorithm::ZeroBuffer);
}

// Algorithm 2: Algorithm 1 plus replay buffers and joint LID recomputation.
inline RunRecord run_with_buffer(const TaskStream& ts, const HarnessConfig& cfg) {
    return detail::run_certified(ts, cfg, Algorithm::Buffer);
}

// Plain sequential SGD, no boxes, no certificates.
inline RunRecord baseline_sgd(const TaskStream& ts, const HarnessConfig& cfg) {
    cfg.net.validate();
    RunRecord rec;
    rec.seed = cfg.seed;
    rec.protocol = ts.protocol;
    ParamVector theta = init_params(cfg.net, mix_seed(cfg.seed, 0xF17));
    for (std::size_t j = 0; j < ts.tasks.size(); ++j) {
        auto t0 = std::chrono::steady_clock::now();
        TrainConfig tc = cfg.train;
        tc.seed = detail::train_seed(cfg.seed, j);
        if (tc.noise) *tc.noise = NoiseSpec::from_data(ts.tasks[j].train, tc.noise->samples);
        theta = sgd_train(cfg.net, theta, ts.tasks[j].train, tc);
        StepMetrics step;
        step.task_index = j;
        for (std::size_t i = 0; i <= j; ++i)
            step.test_accuracy.push_back(
                detail::masked_accuracy(cfg.net, theta, ts, i, ts.tasks[i].test));
        step.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rec.steps.push_back(std::move(step));
        rec.params_after_task.push_back(theta);
        rec.completed_tasks = j + 1;
    }
    return rec;
}

}  // namespace lidkit
