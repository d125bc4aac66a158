#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lidkit/lid.hpp"

using namespace lidkit;

namespace {

NetworkSpec tiny_net(std::size_t in = 2, std::size_t hidden = 4, std::size_t out = 2,
                     Activation act = Activation::Tanh) {
    NetworkSpec net;
    net.layers = {{in, hidden, act}, {hidden, out, Activation::Identity}};
    return net;
}

LabeledBatch blob_batch(std::size_t per_class, double spread, std::uint64_t seed) {
    Rng rng(seed);
    LabeledBatch b;
    b.input_width = 2;
    for (std::size_t i = 0; i < per_class; ++i) {
        b.push(std::vector<double>{-2.0 + spread * rng.normal(), spread * rng.normal()}, 0);
        b.push(std::vector<double>{2.0 + spread * rng.normal(), spread * rng.normal()}, 1);
    }
    return b;
}

ParamVector trained_theta(const NetworkSpec& net, const LabeledBatch& data, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.lr = 0.05;
    cfg.seed = seed;
    return sgd_train(net, init_params(net, seed), data, cfg);
}

}  // namespace

TEST_CASE("size_metric cases") {
    LidBox b;
    b.lower = {0.0, 0.0};
    b.upper = {2.0, 4.0};
    b.nominal = {1.0, 1.0};
    REQUIRE(size_metric(b) == 3.0);
    REQUIRE(size_metric(LidBox::degenerate(ParamVector{1, 2, 3})) == 0.0);
    LidBox d = b;
    d.lower = {-1.0, -2.0};
    d.upper = {3.0, 6.0};
    REQUIRE(size_metric(d) == 2.0 * size_metric(b));
}

TEST_CASE("make_bias: top-k and bottom-k freezing") {
    ImportanceScores s;
    s.method = ImportanceMethod::Fisher;
    s.values = {3.0, 1.0, 2.0, 0.0};
    BiasSpec current = make_bias(s, BiasSpec::Mode::Prune, 0.5, false);
    REQUIRE(current.frozen_mask(4) == std::vector<char>{1, 0, 1, 0});
    BiasSpec look = make_bias(s, BiasSpec::Mode::Prune, 0.5, true);
    REQUIRE(look.frozen_mask(4) == std::vector<char>{0, 1, 0, 1});
    REQUIRE_THROWS_AS(make_bias(s, BiasSpec::Mode::Prune, 1.5, false), ConfigError);
    REQUIRE_THROWS_AS(make_bias(s, BiasSpec::Mode::Prune, 0.0, false), ConfigError);
}

TEST_CASE("make_bias: equal scores tie-break deterministically") {
    ImportanceScores s;
    s.values = {1.0, 1.0, 1.0, 1.0};
    BiasSpec b = make_bias(s, BiasSpec::Mode::Prune, 0.5, true);
    auto m1 = b.frozen_mask(4), m2 = b.frozen_mask(4);
    REQUIRE(m1 == m2);  // stable sort pins the tie order
    REQUIRE(m1 == std::vector<char>{1, 1, 0, 0});
}

TEST_CASE("lagrangian: multiplier off reduces to size metric (+ regularizer)") {
    NetworkSpec net = tiny_net();
    LabeledBatch data = blob_batch(10, 0.3, 3);
    ParamVector theta = trained_theta(net, data, 3);
    GdaState st;
    st.box = LidBox::around(theta, 0.01);
    st.lambda = {0.0};
    LagrangianEval ev = lagrangian(net, st, {data}, {-0.8}, BiasSpec{});
    REQUIRE_THAT(ev.value, Catch::Matchers::WithinAbs(size_metric(st.box), 1e-12));

    ImportanceScores s;
    s.values.assign(theta.size(), 1.0);
    BiasSpec reg = make_bias(s, BiasSpec::Mode::Regularize, 0.5, false, 0.1);
    LagrangianEval evr = lagrangian(net, st, {data}, {-0.8}, reg);
    double widths = 0;
    for (std::size_t i = 0; i < theta.size(); ++i) widths += st.box.upper[i] - st.box.lower[i];
    REQUIRE_THAT(evr.value,
                 Catch::Matchers::WithinAbs(size_metric(st.box) - 0.1 * widths, 1e-10));
}

TEST_CASE("lagrangian: slack constraint term is positive for positive lambda") {
    NetworkSpec net = tiny_net();
    LabeledBatch data = blob_batch(20, 0.2, 4);
    ParamVector theta = trained_theta(net, data, 4);
    GdaState st;
    st.box = LidBox::degenerate(theta);
    st.lambda = {1.0};
    double delta = -0.5;  // trained model beats soft accuracy 0.5 comfortably
    LagrangianEval ev = lagrangian(net, st, {data}, {delta}, BiasSpec{});
    REQUIRE(ev.phi[0] < delta);                      // slack
    REQUIRE(ev.value - size_metric(st.box) > 0.0);   // lambda * (delta - phi) > 0
    REQUIRE(ev.grad_lambda[0] > 0.0);
}

TEST_CASE("lagrangian: box gradients match finite differences away from kinks") {
    NetworkSpec net = tiny_net(2, 4, 2, Activation::Tanh);
    LabeledBatch data = blob_batch(6, 0.4, 5);
    ParamVector theta = trained_theta(net, data, 5);
    GdaState st;
    st.box = LidBox::around(theta, 0.02);
    st.lambda = {0.7};
    BiasSpec none;
    LagrangianEval ev = lagrangian(net, st, {data}, {-0.8}, none);
    const double h = 1e-5;
    Rng rng(55);
    std::size_t checked = 0, good = 0;
    auto value_at = [&](const GdaState& s) {
        return lagrangian(net, s, {data}, {-0.8}, none).value;
    };
    for (int trial = 0; trial < 40; ++trial) {
        std::size_t i = static_cast<std::size_t>(rng.below(theta.size()));
        for (int side = 0; side < 2; ++side) {
            GdaState sp = st, sm = st;
            double analytic;
            if (side == 0) {
                sp.box.lower[i] += h;
                sm.box.lower[i] -= h;
                analytic = ev.grad_lower[i];
            } else {
                sp.box.upper[i] += h;
                sm.box.upper[i] -= h;
                analytic = ev.grad_upper[i];
            }
            double fd = (value_at(sp) - value_at(sm)) / (2 * h);
            ++checked;
            double denom = std::max(1e-6, std::abs(fd));
            if (std::abs(analytic - fd) / denom <= 1e-4) ++good;
        }
    }
    REQUIRE(static_cast<double>(good) / static_cast<double>(checked) >= 0.95);
}

TEST_CASE("gda_step: satisfied constraint keeps lambda at zero") {
    NetworkSpec net = tiny_net();
    LabeledBatch data = blob_batch(20, 0.2, 6);
    ParamVector theta = trained_theta(net, data, 6);
    GdaState st;
    st.box = LidBox::around(theta, 1e-4);
    st.lambda = {0.0};
    LidConfig cfg;
    GdaState next = gda_step(net, st, {data}, {-0.5}, cfg);
    REQUIRE(next.lambda[0] == 0.0);
    REQUIRE(next.iteration == 1);
}

TEST_CASE("gda_step: unit violation moves lambda by eta_d") {
    // Zero parameters give uniform softmax, so the soft-accuracy surrogate is
    // exactly -1/C; delta = -1/C - 1 manufactures a violation of exactly 1.
    NetworkSpec net = tiny_net(2, 3, 2);
    ParamVector theta(net.param_count(), 0.0);
    LabeledBatch data;
    data.input_width = 2;
    data.push(std::vector<double>{0.0, 0.0}, 0);
    GdaState st;
    st.box = LidBox::degenerate(theta);
    st.lambda = {0.0};
    LidConfig cfg;
    cfg.eta_d = 0.01;
    GdaState next = gda_step(net, st, {data}, {-0.5 - 1.0}, cfg);
    REQUIRE_THAT(next.lambda[0], Catch::Matchers::WithinAbs(0.01, 1e-12));
}

TEST_CASE("gda_step: invariants hold after every step") {
    NetworkSpec net = tiny_net();
    LabeledBatch data = blob_batch(15, 0.3, 7);
    ParamVector theta = trained_theta(net, data, 7);
    GdaState st;
    st.box = LidBox::around(theta, 1e-3);
    st.lambda = {0.0};
    LidConfig cfg;
    for (int k = 0; k < 30; ++k) {
        st = gda_step(net, st, {data}, {-0.8}, cfg);
        REQUIRE(st.lambda[0] >= 0.0);
        for (std::size_t i = 0; i < theta.size(); ++i) {
            REQUIRE(st.box.lower[i] <= theta[i]);
            REQUIRE(st.box.upper[i] >= theta[i]);
        }
    }
}

TEST_CASE("compute_lid: vacuous threshold grows widths with lambda at zero") {
    NetworkSpec net = tiny_net();
    LabeledBatch data = blob_batch(20, 0.3, 8);
    ParamVector theta = trained_theta(net, data, 8);
    LidConfig cfg;
    cfg.iterations = 40;
    cfg.checkpoint_period = 10;
    cfg.batch_size = 10;
    cfg.seed = 1;
    std::vector<ConstraintSet> cs(1);
    cs[0].data = data;
    cs[0].delta = 1.0;  // any accuracy allowed
    CheckpointSet out = compute_lid(net, theta, cs, cfg);
    for (const auto& l : out.lambda_trace) REQUIRE(l[0] == 0.0);
    for (std::size_t k = 1; k < out.size_trace.size(); ++k)
        REQUIRE(out.size_trace[k] >= out.size_trace[k - 1] - 1e-12);
    REQUIRE(out.size_trace.back() > out.size_trace.front());
}

TEST_CASE("compute_lid: certified checkpoints beat the threshold minus margin") {
    NetworkSpec net = tiny_net(2, 6, 2);
    LabeledBatch data = blob_batch(100, 0.3, 9);
    ParamVector theta = trained_theta(net, data, 9);
    LidConfig cfg;
    cfg.iterations = 60;
    cfg.checkpoint_period = 20;
    cfg.batch_size = 50;
    cfg.seed = 2;
    std::vector<ConstraintSet> cs(1);
    cs[0].data = data;
    cs[0].delta = -0.8;
    CheckpointSet out = compute_lid(net, theta, cs, cfg);
    REQUIRE_FALSE(out.checkpoints.empty());
    for (const auto& cp : out.checkpoints) {
        REQUIRE_FALSE(cp.certificates.empty());
        for (const auto& cert : cp.certificates) {
            REQUIRE(cert.certified_bound <= cert.delta);
            // The raw interval bound itself meets the configured threshold;
            // the issued threshold is shifted by exactly the sample margin.
            REQUIRE(cert.raw_bound <= -0.8);
            REQUIRE(cert.delta == Catch::Approx(-0.8 + (cert.certified_bound - cert.raw_bound)));
        }
        REQUIRE(cp.box.contains(theta));
    }
}

TEST_CASE("compute_lid: infeasible nominal is rejected up front") {
    NetworkSpec net = tiny_net();
    ParamVector theta(net.param_count(), 0.0);  // ties everywhere -> accuracy 0
    LabeledBatch data = blob_batch(10, 0.3, 10);
    LidConfig cfg;
    cfg.iterations = 5;
    std::vector<ConstraintSet> cs(1);
    cs[0].data = data;
    cs[0].delta = -0.8;
    REQUIRE_THROWS_AS(compute_lid(net, theta, cs, cfg), InfeasibleNominal);
}

TEST_CASE("compute_lid: prune bias pins the chosen coordinates") {
    NetworkSpec net = tiny_net();
    LabeledBatch data = blob_batch(40, 0.3, 11);
    ParamVector theta = trained_theta(net, data, 11);
    const std::size_t p = theta.size();
    ImportanceScores s;
    s.values.assign(p, 0.0);
    for (std::size_t i = 0; i < p; ++i) s.values[i] = static_cast<double>(i);
    LidConfig cfg;
    cfg.iterations = 20;
    cfg.checkpoint_period = 10;
    cfg.batch_size = 20;
    cfg.bias = make_bias(s, BiasSpec::Mode::Prune, 0.95, false);
    std::vector<ConstraintSet> cs(1);
    cs[0].data = data;
    cs[0].delta = -0.5;
    CheckpointSet out = compute_lid(net, theta, cs, cfg);
    const std::size_t expect_frozen = static_cast<std::size_t>(std::ceil(0.95 * p));
    for (const auto& cp : out.checkpoints) {
        std::size_t zero_width = 0;
        for (std::size_t i = 0; i < p; ++i) {
            if (cp.box.upper[i] == cp.box.lower[i]) {
                ++zero_width;
                REQUIRE(cp.box.lower[i] == theta[i]);  // pinned bit-identically
            }
        }
        REQUIRE(zero_width == expect_frozen);
    }
}

TEST_CASE("compute_lid: checkpoint cadence before filtering") {
    NetworkSpec net = tiny_net();
    LabeledBatch data = blob_batch(40, 0.2, 12);
    ParamVector theta = trained_theta(net, data, 12);
    LidConfig cfg;
    cfg.iterations = 50;
    cfg.checkpoint_period = 10;
    cfg.batch_size = 20;
    std::vector<ConstraintSet> cs(1);
    cs[0].data = data;
    cs[0].delta = 1.0;  // vacuous: nothing gets filtered
    CheckpointSet out = compute_lid(net, theta, cs, cfg);
    REQUIRE(out.checkpoints.size() == 5);  // iterations/period, final coincides
    std::vector<std::size_t> iters;
    for (const auto& cp : out.checkpoints) iters.push_back(cp.iteration);
    REQUIRE(iters == std::vector<std::size_t>{10, 20, 30, 40, 50});
}

TEST_CASE("compute_lid: sampled members of certified boxes respect the bound") {
    NetworkSpec net = tiny_net(2, 6, 2);
    LabeledBatch data = blob_batch(80, 0.3, 13);
    ParamVector theta = trained_theta(net, data, 13);
    LidConfig cfg;
    cfg.iterations = 40;
    cfg.checkpoint_period = 20;
    cfg.batch_size = 40;
    cfg.seed = 3;
    std::vector<ConstraintSet> cs(1);
    cs[0].data = data;
    cs[0].delta = -0.8;
    CheckpointSet out = compute_lid(net, theta, cs, cfg);
    Rng rng(131);
    for (const auto& cp : out.checkpoints) {
        double raw = cp.certificates[0].raw_bound;  // sound bound: -certified accuracy
        for (int s = 0; s < 1000; ++s) {
            ParamVector member = cp.box.sample(rng);
            REQUIRE(-accuracy(net, member, data) <= raw + 1e-12);
        }
    }
}

TEST_CASE("compute_lid: determinism") {
    NetworkSpec net = tiny_net();
    LabeledBatch data = blob_batch(30, 0.3, 14);
    ParamVector theta = trained_theta(net, data, 14);
    LidConfig cfg;
    cfg.iterations = 20;
    cfg.checkpoint_period = 10;
    cfg.batch_size = 15;
    cfg.seed = 77;
    std::vector<ConstraintSet> cs(1);
    cs[0].data = data;
    cs[0].delta = -0.5;
    CheckpointSet a = compute_lid(net, theta, cs, cfg);
    CheckpointSet b = compute_lid(net, theta, cs, cfg);
    REQUIRE(a.size_trace == b.size_trace);
    REQUIRE(a.checkpoints.size() == b.checkpoints.size());
    for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
        REQUIRE(a.checkpoints[i].box.lower == b.checkpoints[i].box.lower);
        REQUIRE(a.checkpoints[i].box.upper == b.checkpoints[i].box.upper);
    }
}
