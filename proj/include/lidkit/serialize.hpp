#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lidkit/cert.hpp"
#include "lidkit/error.hpp"
#include "lidkit/harness.hpp"
#include "lidkit/interval.hpp"
#include "lidkit/lid.hpp"
#include "lidkit/nn.hpp"
#include "lidkit/safe_update.hpp"

namespace lidkit {

using json = nlohmann::json;

constexpr int kSchemaVersion = 1;

namespace detail {

// NaN has no JSON representation; encode it as null.
inline json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
inline double null_or_num(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

template <typename Enum>
Enum parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, Enum>> table,
                const char* what) {
    for (const auto& [name, value] : table)
        if (s == name) return value;
    throw ConfigError(std::string("unknown ") + what + ": " + s);
}

}  // namespace detail

inline MarginMethod margin_from_string(const std::string& s) {
    return detail::parse_enum<MarginMethod>(s,
                                            {{"hoeffding", MarginMethod::Hoeffding},
                                             {"chebyshev", MarginMethod::Chebyshev},
                                             {"clt", MarginMethod::Clt},
                                             {"none", MarginMethod::None}},
                                            "margin method");
}

inline std::string to_string(SelectionStrategy s) {
    switch (s) {
        case SelectionStrategy::Closest: return "closest";
        case SelectionStrategy::BestLoss: return "best_loss";
        case SelectionStrategy::SampleLargestClosest: return "sample_largest_closest";
    }
    return "closest";
}

inline SelectionStrategy strategy_from_string(const std::string& s) {
    return detail::parse_enum<SelectionStrategy>(
        s,
        {{"closest", SelectionStrategy::Closest},
         {"best_loss", SelectionStrategy::BestLoss},
         {"sample_largest_closest", SelectionStrategy::SampleLargestClosest}},
        "selection strategy");
}

inline Protocol protocol_from_string(const std::string& s) {
    return detail::parse_enum<Protocol>(s,
                                        {{"class_il", Protocol::ClassIl},
                                         {"domain_il", Protocol::DomainIl},
                                         {"task_il", Protocol::TaskIl}},
                                        "protocol");
}

inline json to_json(const LidBox& b) {
    return json{{"lower", b.lower}, {"upper", b.upper}, {"nominal", b.nominal}};
}

inline LidBox box_from_json(const json& j) {
    LidBox b;
    b.lower = j.at("lower").get<ParamVector>();
    b.upper = j.at("upper").get<ParamVector>();
    b.nominal = j.at("nominal").get<ParamVector>();
    b.validate();
    return b;
}

inline json to_json(const Certificate& c) {
    return json{{"spec", c.spec},
                {"certified_bound", c.certified_bound},
                {"raw_bound", c.raw_bound},
                {"delta", c.delta},
                {"confidence_beta", c.confidence_beta},
                {"n", c.n},
                {"method", to_string(c.method)},
                {"asymptotic", c.asymptotic},
                {"probabilistic", c.probabilistic},
                {"eval_fingerprint", c.eval_fingerprint},
                {"box_fingerprint", c.box_fingerprint}};
}

inline Certificate certificate_from_json(const json& j) {
    Certificate c;
    c.spec = j.at("spec").get<std::string>();
    c.certified_bound = j.at("certified_bound").get<double>();
    c.raw_bound = j.at("raw_bound").get<double>();
    c.delta = j.at("delta").get<double>();
    c.confidence_beta = j.at("confidence_beta").get<double>();
    c.n = j.at("n").get<std::size_t>();
    c.method = margin_from_string(j.at("method").get<std::string>());
    c.asymptotic = j.at("asymptotic").get<bool>();
    c.probabilistic = j.at("probabilistic").get<bool>();
    c.eval_fingerprint = j.at("eval_fingerprint").get<std::uint64_t>();
    c.box_fingerprint = j.at("box_fingerprint").get<std::uint64_t>();
    return c;
}

inline json to_json(const Checkpoint& cp) {
    json certs = json::array();
    for (const auto& c : cp.certificates) certs.push_back(to_json(c));
    return json{{"box", to_json(cp.box)},
                {"iteration", cp.iteration},
                {"size", cp.size},
                {"certificates", std::move(certs)}};
}

inline Checkpoint checkpoint_from_json(const json& j) {
    Checkpoint cp;
    cp.box = box_from_json(j.at("box"));
    cp.iteration = j.at("iteration").get<std::size_t>();
    cp.size = j.at("size").get<double>();
    for (const auto& c : j.at("certificates")) cp.certificates.push_back(certificate_from_json(c));
    return cp;
}

inline json to_json(const CheckpointSet& cs) {
    json cps = json::array();
    for (const auto& cp : cs.checkpoints) cps.push_back(to_json(cp));
    return json{{"version", kSchemaVersion},
                {"checkpoints", std::move(cps)},
                {"optimization_batch_fps", cs.optimization_batch_fps},
                {"lambda_trace", cs.lambda_trace},
                {"size_trace", cs.size_trace}};
}

inline CheckpointSet checkpoint_set_from_json(const json& j) {
    if (j.at("version").get<int>() != kSchemaVersion)
        throw ParseError("unsupported checkpoint schema version", 0);
    CheckpointSet cs;
    for (const auto& cp : j.at("checkpoints")) cs.checkpoints.push_back(checkpoint_from_json(cp));
    cs.optimization_batch_fps = j.at("optimization_batch_fps").get<std::vector<std::uint64_t>>();
    cs.lambda_trace = j.at("lambda_trace").get<std::vector<std::vector<double>>>();
    cs.size_trace = j.at("size_trace").get<std::vector<double>>();
    return cs;
}

inline json to_json(const RunRecord& r) {
    json steps = json::array();
    for (const auto& s : r.steps) {
        json cert = json::array(), raw = json::array();
        for (double v : s.certified_accuracy) cert.push_back(detail::num_or_null(v));
        for (double v : s.raw_certified_accuracy) raw.push_back(detail::num_or_null(v));
        steps.push_back(json{{"task_index", s.task_index},
                             {"test_accuracy", s.test_accuracy},
                             {"certified_accuracy", std::move(cert)},
                             {"raw_certified_accuracy", std::move(raw)},
                             {"lid_size", s.lid_size},
                             {"buffer_calls", s.buffer_calls},
                             {"wall_seconds", s.wall_seconds}});
    }
    json certs = json::array();
    for (const auto& per_task : r.certificates) {
        json arr = json::array();
        for (const auto& c : per_task) arr.push_back(to_json(c));
        certs.push_back(std::move(arr));
    }
    json boxes = json::array();
    for (const auto& b : r.selected_boxes) boxes.push_back(to_json(b));
    json out{{"version", kSchemaVersion},
             {"seed", r.seed},
             {"protocol", to_string(r.protocol)},
             {"completed_tasks", r.completed_tasks},
             {"stopped_reason", r.stopped_reason},
             {"steps", std::move(steps)},
             {"params_after_task", r.params_after_task},
             {"certificates", std::move(certs)},
             {"lambda_traces", r.lambda_traces},
             {"selected_boxes", std::move(boxes)}};
    if (r.final_box) out["final_box"] = to_json(*r.final_box);
    return out;
}

inline RunRecord run_record_from_json(const json& j) {
    if (j.at("version").get<int>() != kSchemaVersion)
        throw ParseError("unsupported run record schema version", 0);
    RunRecord r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.protocol = protocol_from_string(j.at("protocol").get<std::string>());
    r.completed_tasks = j.at("completed_tasks").get<std::size_t>();
    r.stopped_reason = j.at("stopped_reason").get<std::string>();
    for (const auto& s : j.at("steps")) {
        StepMetrics m;
        m.task_index = s.at("task_index").get<std::size_t>();
        m.test_accuracy = s.at("test_accuracy").get<std::vector<double>>();
        for (const auto& v : s.at("certified_accuracy"))
            m.certified_accuracy.push_back(detail::null_or_num(v));
        for (const auto& v : s.at("raw_certified_accuracy"))
            m.raw_certified_accuracy.push_back(detail::null_or_num(v));
        m.lid_size = s.at("lid_size").get<double>();
        m.buffer_calls = s.at("buffer_calls").get<std::size_t>();
        m.wall_seconds = s.at("wall_seconds").get<double>();
        r.steps.push_back(std::move(m));
    }
    r.params_after_task = j.at("params_after_task").get<std::vector<ParamVector>>();
    for (const auto& per_task : j.at("certificates")) {
        std::vector<Certificate> cs;
        for (const auto& c : per_task) cs.push_back(certificate_from_json(c));
        r.certificates.push_back(std::move(cs));
    }
    r.lambda_traces = j.at("lambda_traces").get<std::vector<std::vector<std::vector<double>>>>();
    for (const auto& b : j.at("selected_boxes")) r.selected_boxes.push_back(box_from_json(b));
    if (j.contains("final_box")) r.final_box = box_from_json(j.at("final_box"));
    return r;
}

// CSV report: one row per (step, evaluated task); header-only when empty.
inline std::string emit_report(const RunRecord& r) {
    std::ostringstream out;
    out << "seed,protocol,step,eval_task,test_accuracy,certified_accuracy,raw_certified_accuracy,"
           "lid_size,buffer_calls,wall_seconds\n";
    out.precision(17);
    for (const auto& s : r.steps) {
        for (std::size_t i = 0; i < s.test_accuracy.size(); ++i) {
            out << r.seed << ',' << to_string(r.protocol) << ',' << s.task_index << ',' << i << ','
                << s.test_accuracy[i] << ',';
            if (i < s.certified_accuracy.size() && std::isfinite(s.certified_accuracy[i]))
                out << s.certified_accuracy[i];
            out << ',';
            if (i < s.raw_certified_accuracy.size() && std::isfinite(s.raw_certified_accuracy[i]))
                out << s.raw_certified_accuracy[i];
            out << ',' << s.lid_size << ',' << s.buffer_calls << ',' << s.wall_seconds << '\n';
        }
    }
    return out.str();
}

// Run definition loaded from a JSON config file. Unset fields keep defaults.
struct RunConfig {
    HarnessConfig harness;
    Algorithm algorithm = Algorithm::ZeroBuffer;
    Protocol protocol = Protocol::ClassIl;
    // dataset: either synthetic blobs or an IDX pair
    std::string dataset = "blobs";  // "blobs" or "idx"
    std::size_t blob_tasks = 3, blob_classes_per_task = 2, blob_points_per_class = 200;
    double blob_spread = 0.4;
    std::string idx_images, idx_labels;
    std::size_t idx_downsample = 8, idx_limit = 0;
    std::vector<std::size_t> hidden = {16};
};

inline RunConfig run_config_from_json(const json& j) {
    RunConfig rc;
    HarnessConfig& h = rc.harness;
    auto get = [&](const char* key, auto& dst) {
        if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    };
    get("seed", h.seed);
    get("epochs", h.train.epochs);
    get("lr", h.train.lr);
    get("batch_size", h.train.batch_size);
    h.train.l2 = 0.01;
    h.train.debias = 0.01;
    get("l2", h.train.l2);
    get("debias", h.train.debias);
    if (h.train.debias > 0.0) h.train.noise = NoiseSpec{};
    get("eta_p", h.lid.eta_p);
    get("eta_d", h.lid.eta_d);
    get("lid_iterations", h.lid.iterations);
    get("checkpoint_period", h.lid.checkpoint_period);
    get("lid_batch_size", h.lid.batch_size);
    get("r0", h.lid.r0);
    get("confidence_beta", h.lid.confidence_beta);
    get("required_accuracy", h.required_accuracy);
    get("target_acc", h.target_acc);
    get("max_calls", h.max_calls);
    get("buffer_capacity", h.buffer_capacity);
    get("buffer_draw", h.buffer_draw);
    get("lookahead", h.lookahead);
    get("bias_proportion", h.bias_proportion);
    get("bias_reg_weight", h.bias_reg_weight);
    get("hidden", rc.hidden);
    get("blob_tasks", rc.blob_tasks);
    get("blob_classes_per_task", rc.blob_classes_per_task);
    get("blob_points_per_class", rc.blob_points_per_class);
    get("blob_spread", rc.blob_spread);
    get("dataset", rc.dataset);
    get("idx_images", rc.idx_images);
    get("idx_labels", rc.idx_labels);
    get("idx_downsample", rc.idx_downsample);
    get("idx_limit", rc.idx_limit);
    if (j.contains("margin")) h.lid.margin = margin_from_string(j.at("margin").get<std::string>());
    if (j.contains("strategy"))
        h.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    if (j.contains("protocol")) rc.protocol = protocol_from_string(j.at("protocol").get<std::string>());
    if (j.contains("algorithm")) {
        std::string a = j.at("algorithm").get<std::string>();
        if (a == "zero") rc.algorithm = Algorithm::ZeroBuffer;
        else if (a == "buffer") rc.algorithm = Algorithm::Buffer;
        else throw ConfigError("unknown algorithm: " + a);
    }
    if (j.contains("bias_mode")) {
        std::string m = j.at("bias_mode").get<std::string>();
        if (m == "none") h.bias_mode = BiasSpec::Mode::None;
        else if (m == "prune") h.bias_mode = BiasSpec::Mode::Prune;
        else if (m == "regularize") h.bias_mode = BiasSpec::Mode::Regularize;
        else throw ConfigError("unknown bias_mode: " + m);
    }
    if (j.contains("bias_method")) {
        std::string m = j.at("bias_method").get<std::string>();
        if (m == "fisher") h.bias_method = ImportanceMethod::Fisher;
        else if (m == "si") h.bias_method = ImportanceMethod::SynapticIntelligence;
        else throw ConfigError("unknown bias_method: " + m);
    }
    // Range validation beyond what the library constructors check.
    if (!(h.required_accuracy > 0.0 && h.required_accuracy <= 1.0))
        throw ConfigError("required_accuracy must lie in (0,1]");
    if (!(h.target_acc >= 0.0 && h.target_acc <= 1.0))
        throw ConfigError("target_acc must lie in [0,1]");
    if (h.train.lr < 0.0) throw ConfigError("lr must be >= 0");
    if (h.train.epochs < 1) throw ConfigError("epochs must be >= 1");
    check_beta(h.lid.confidence_beta);
    if (rc.dataset != "blobs" && rc.dataset != "idx")
        throw ConfigError("dataset must be \"blobs\" or \"idx\"");
    if (rc.dataset == "idx" && (rc.idx_images.empty() || rc.idx_labels.empty()))
        throw ConfigError("idx dataset needs idx_images and idx_labels paths");
    return rc;
}

inline json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path, 0);
    return json::parse(in);
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open " + path + " for writing", 0);
    out << text;
}

}  // namespace lidkit
