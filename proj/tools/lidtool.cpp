// Command-line front end: train / lid / update / continual / certify / report.
// Exit codes: 0 success, 1 run error, 2 config or usage error. Errors are
// emitted as JSON on stderr.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "lidkit/lidkit.hpp"

namespace fs = std::filesystem;
using namespace lidkit;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = ".";
};

json error_json(const std::string& kind, const std::string& what) {
    return json{{"error", kind}, {"message", what}};
}

NetworkSpec build_net(const RunConfig& rc, std::size_t input_width, std::size_t num_classes) {
    NetworkSpec net;
    std::size_t prev = input_width;
    for (std::size_t h : rc.hidden) {
        net.layers.push_back({prev, h, Activation::Tanh});
        prev = h;
    }
    net.layers.push_back({prev, num_classes, Activation::Identity});
    net.validate();
    return net;
}

TaskStream build_stream(const RunConfig& rc) {
    if (rc.dataset == "blobs")
        return make_blobs(rc.harness.seed, rc.blob_tasks, rc.blob_classes_per_task,
                          rc.blob_points_per_class, rc.blob_spread);
    LabeledBatch data = load_idx(rc.idx_images, rc.idx_labels, rc.idx_downsample, rc.idx_limit);
    return split_dataset(data, rc.protocol, rc.harness.seed);
}

RunConfig load_config(const std::string& path) {
    return run_config_from_json(load_json_file(path));
}

void write_out(const CommonOpts& opts, const std::string& name, const std::string& text) {
    fs::create_directories(opts.out_dir);
    write_text_file((fs::path(opts.out_dir) / name).string(), text);
}

ParamVector params_from_file(const std::string& path) {
    return load_json_file(path).at("theta").get<ParamVector>();
}

int cmd_train(const CommonOpts& opts) {
    RunConfig rc = load_config(opts.config_path);
    TaskStream ts = build_stream(rc);
    NetworkSpec net = build_net(rc, ts.tasks[0].train.input_width, ts.num_classes);
    TrainConfig tc = rc.harness.train;
    tc.seed = mix_seed(rc.harness.seed, 0x7A4000);
    if (tc.debias > 0.0) tc.noise = NoiseSpec::from_data(ts.tasks[0].train, 32);
    ParamVector theta = sgd_train(net, init_params(net, mix_seed(rc.harness.seed, 0xF17)),
                                  ts.tasks[0].train, tc);
    json out{{"theta", theta},
             {"train_accuracy", accuracy(net, theta, ts.tasks[0].train)},
             {"test_accuracy", accuracy(net, theta, ts.tasks[0].test)}};
    write_out(opts, "params.json", out.dump(2));
    return 0;
}

int cmd_lid(const CommonOpts& opts, const std::string& params_path) {
    RunConfig rc = load_config(opts.config_path);
    TaskStream ts = build_stream(rc);
    NetworkSpec net = build_net(rc, ts.tasks[0].train.input_width, ts.num_classes);
    ParamVector theta;
    if (!params_path.empty()) {
        theta = params_from_file(params_path);
    } else {
        TrainConfig tc = rc.harness.train;
        tc.seed = mix_seed(rc.harness.seed, 0x7A4000);
        theta = sgd_train(net, init_params(net, mix_seed(rc.harness.seed, 0xF17)),
                          ts.tasks[0].train, tc);
    }
    LidConfig lc = rc.harness.lid;
    lc.seed = mix_seed(rc.harness.seed, 0x11D000);
    lc.batch_size = std::min(lc.batch_size, std::max<std::size_t>(1, ts.tasks[0].cert.size() / 2));
    std::vector<ConstraintSet> cs(1);
    cs[0].data = ts.tasks[0].cert;
    cs[0].delta = -rc.harness.required_accuracy;
    CheckpointSet out = compute_lid(net, theta, cs, lc);
    write_out(opts, "checkpoints.json", to_json(out).dump(2));
    return 0;
}

int cmd_certify(const CommonOpts& opts, const std::string& checkpoints_path) {
    RunConfig rc = load_config(opts.config_path);
    TaskStream ts = build_stream(rc);
    NetworkSpec net = build_net(rc, ts.tasks[0].train.input_width, ts.num_classes);
    CheckpointSet cps = checkpoint_set_from_json(load_json_file(checkpoints_path));
    json results = json::array();
    for (const Checkpoint& cp : cps.checkpoints) {
        double raw = spec_bound(SpecKind::accuracy_neg(), net, cp.box, ts.tasks[0].cert);
        Fingerprints fp;
        fp.evaluation_set = fingerprint(ts.tasks[0].cert);
        fp.box = fingerprint(cp.box);
        fp.optimization_batches = cps.optimization_batch_fps;
        CertifyResult r = issue_certificate("accuracy_neg", raw, rc.harness.lid.margin,
                                            -rc.harness.required_accuracy, ts.tasks[0].cert.size(),
                                            rc.harness.lid.confidence_beta, fp);
        json entry{{"iteration", cp.iteration}, {"issued", issued(r)}};
        entry["certificate"] = to_json(issued(r) ? std::get<Certificate>(r)
                                                 : std::get<Rejection>(r).attempted);
        results.push_back(std::move(entry));
    }
    write_out(opts, "certificates.json", results.dump(2));
    return 0;
}

int cmd_update(const CommonOpts& opts, const std::string& params_path,
               const std::string& checkpoints_path, const std::string& delta_path) {
    RunConfig rc = load_config(opts.config_path);
    ParamVector theta = params_from_file(params_path);
    json dj = load_json_file(delta_path);
    UpdateProposal proposal;
    proposal.delta = dj.at("delta").get<ParamVector>();
    proposal.provenance = dj.value("provenance", std::string("external"));
    CheckpointSet cps = checkpoint_set_from_json(load_json_file(checkpoints_path));
    auto [updated, box] = safe_mechanism(theta, proposal, cps, rc.harness.strategy);
    json out{{"theta", updated}, {"box", to_json(box)}};
    write_out(opts, "updated_params.json", out.dump(2));
    return 0;
}

int cmd_continual(const CommonOpts& opts, const std::string& algorithm, long long max_calls,
                  const std::vector<std::uint64_t>& seeds) {
    RunConfig rc = load_config(opts.config_path);
    if (!algorithm.empty()) {
        if (algorithm == "zero") rc.algorithm = Algorithm::ZeroBuffer;
        else if (algorithm == "buffer") rc.algorithm = Algorithm::Buffer;
        else throw ConfigError("unknown algorithm: " + algorithm);
    }
    if (max_calls >= 0) rc.harness.max_calls = static_cast<std::size_t>(max_calls);
    std::vector<std::uint64_t> run_seeds = seeds.empty()
                                               ? std::vector<std::uint64_t>{rc.harness.seed}
                                               : seeds;
    for (std::uint64_t seed : run_seeds) {
        RunConfig cur = rc;
        cur.harness.seed = seed;
        TaskStream ts = build_stream(cur);
        cur.harness.net = build_net(cur, ts.tasks[0].train.input_width, ts.num_classes);
        RunRecord rec = cur.algorithm == Algorithm::Buffer
                            ? run_with_buffer(ts, cur.harness)
                            : run_zero_buffer(ts, cur.harness);
        std::string tag = std::to_string(seed);
        write_out(opts, "run_" + tag + ".json", to_json(rec).dump(2));
        write_out(opts, "report_" + tag + ".csv", emit_report(rec));
    }
    return 0;
}

int cmd_report(const CommonOpts& opts, const std::string& run_path) {
    RunRecord rec = run_record_from_json(load_json_file(run_path));
    write_out(opts, "report.csv", emit_report(rec));
    json summary{{"seed", rec.seed},
                 {"completed_tasks", rec.completed_tasks},
                 {"certificates", to_json(rec).at("certificates")}};
    write_out(opts, "summary.json", summary.dump(2));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"certified model-update toolkit"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string params_path, checkpoints_path, delta_path, run_path, algorithm;
    long long max_calls = -1;
    std::vector<std::uint64_t> seeds;

    auto add_common = [&](CLI::App* sub, bool needs_config = true) {
        auto* c = sub->add_option("--config", opts.config_path, "JSON config file");
        if (needs_config) c->required();
        sub->add_option("--out", opts.out_dir, "output directory");
    };

    auto* train = app.add_subcommand("train", "train on the first task");
    add_common(train);
    auto* lid = app.add_subcommand("lid", "compute and serialize certified boxes");
    add_common(lid);
    lid->add_option("--params", params_path, "params.json from train");
    auto* update = app.add_subcommand("update", "apply a safe update to parameters");
    add_common(update);
    update->add_option("--params", params_path)->required();
    update->add_option("--checkpoints", checkpoints_path)->required();
    update->add_option("--delta", delta_path)->required();
    auto* continual = app.add_subcommand("continual", "run a certified continual-learning pass");
    add_common(continual);
    continual->add_option("--algorithm", algorithm, "zero | buffer");
    continual->add_option("--max-calls", max_calls, "buffer recomputation budget");
    continual->add_option("--seeds", seeds, "seed sweep")->delimiter(',');
    auto* certify = app.add_subcommand("certify", "re-certify serialized boxes");
    add_common(certify);
    certify->add_option("--checkpoints", checkpoints_path)->required();
    auto* report = app.add_subcommand("report", "render a run record to CSV/JSON");
    add_common(report, false);
    report->add_option("--run", run_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << error_json("usage", e.what()).dump() << "\n";
        return 2;
    }

    try {
        if (*train) return cmd_train(opts);
        if (*lid) return cmd_lid(opts, params_path);
        if (*update) return cmd_update(opts, params_path, checkpoints_path, delta_path);
        if (*continual) return cmd_continual(opts, algorithm, max_calls, seeds);
        if (*certify) return cmd_certify(opts, checkpoints_path);
        if (*report) return cmd_report(opts, run_path);
    } catch (const ConfigError& e) {
        std::cerr << error_json("config", e.what()).dump() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << error_json("parse", e.what()).dump() << "\n";
        return 2;
    } catch (const json::exception& e) {
        std::cerr << error_json("parse", e.what()).dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << error_json("run", e.what()).dump() << "\n";
        return 1;
    }
    return 2;
}
